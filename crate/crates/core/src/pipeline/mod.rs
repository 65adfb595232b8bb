//! Config-driven runs: coregister → AOI patch → change detection → mask + CSV row.
//!
//! Every run is a pure function of its config. A batch runs configs
//! concurrently and emits rows in config order; a failing config produces a
//! row with the `error` column filled instead of aborting the batch.

mod config;

pub use config::{
    apply_overrides, comparison_configs, load_config_dir, load_config_file, AdaptiveParams, Aoi,
    Method, PipelineConfig, RegistrationConfig, DEFAULT_AOI_SIZE,
};

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coregister::coregister_pair;
use crate::cva::c2va_change_map;
use crate::dcva::{builtin_extractor, dcva_detailed, default_band_quadruple, FeatureExtractor};
use crate::error::{Error, Result};
use crate::raster::{
    extract_patch, read_raster, write_mask_pgm, write_raster, ChangeMap, RasterImage, ScalarMap,
};
use crate::threshold::{bimodality_coefficient, ThresholdSpec};

/// Columns that vary between identical runs.
pub const TIMING_COLUMNS: &[&str] = &["elapsed_ms"];

/// One CSV row; numeric fields are pre-formatted so the file is stable.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportRow {
    pub location_tag: String,
    pub method: String,
    pub layers: String,
    /// Percent of valid AOI pixels marked, 4 decimals.
    pub changed_percent: String,
    pub threshold_used: String,
    /// Largest flow component in pixels, empty when registration is off.
    pub max_flow: String,
    /// Sarle's bimodality coefficient of the thresholded map.
    pub bimodality: String,
    pub warning: String,
    pub error: String,
    pub elapsed_ms: u64,
}

impl ReportRow {
    fn failed(cfg: &PipelineConfig, err: &Error, elapsed_ms: u64) -> Self {
        Self {
            location_tag: cfg.location_tag.clone(),
            method: cfg.method.to_string(),
            layers: cfg.layers_label(),
            changed_percent: String::new(),
            threshold_used: String::new(),
            max_flow: String::new(),
            bimodality: String::new(),
            warning: String::new(),
            error: err.to_string(),
            elapsed_ms,
        }
    }
}

/// What a successful run produced.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub row: ReportRow,
    pub changed_percent: f64,
    pub threshold_used: f64,
    pub max_flow: Option<f32>,
    pub warning: Option<String>,
    /// Files written, data files before their headers.
    pub artifacts: Vec<PathBuf>,
    /// Wall time per stage in milliseconds.
    pub timings: Vec<(&'static str, u64)>,
}

/// Paths derived from the output prefix.
pub fn artifact_path(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// Tracks emitted files so a failed run can clean up after itself.
struct Outputs {
    prefix: PathBuf,
    written: Vec<PathBuf>,
}

impl Outputs {
    fn raster(&mut self, img: &RasterImage, suffix: &str) -> Result<()> {
        let path = artifact_path(&self.prefix, suffix);
        self.written.push(path.clone());
        self.written.push(crate::raster::io_header_path(&path));
        write_raster(img, &path)
    }

    fn mask(&mut self, m: &ChangeMap) -> Result<()> {
        let path = artifact_path(&self.prefix, "_mask.pgm");
        self.written.push(path.clone());
        write_mask_pgm(m, &path)
    }

    fn csv(&mut self, row: &ReportRow) -> Result<()> {
        let path = artifact_path(&self.prefix, "_stats.csv");
        self.written.push(path.clone());
        let mut buf = Vec::new();
        write_rows(&mut buf, std::slice::from_ref(row))?;
        std::fs::write(&path, buf).map_err(|e| Error::io(&path, e))
    }

    fn remove_all(&self) {
        for p in &self.written {
            if p.exists() {
                if let Err(e) = std::fs::remove_file(p) {
                    log::warn!("could not remove partial output {}: {e}", p.display());
                }
            }
        }
    }
}

fn ms_since(t: Instant) -> u64 {
    t.elapsed().as_millis() as u64
}

fn load_extractor(cfg: &PipelineConfig, bands: usize) -> Result<FeatureExtractor> {
    match &cfg.weights {
        Some(p) => {
            let ext = FeatureExtractor::load_weights(p)?;
            if ext.input_bands() != bands {
                return Err(Error::Shape(format!(
                    "weights expect {} input bands, config selects {bands}",
                    ext.input_bands()
                )));
            }
            Ok(ext)
        }
        None => builtin_extractor(cfg.seed, bands),
    }
}

struct Detection {
    mask: ChangeMap,
    /// Written as `<prefix><suffix>`; the first one is the thresholded map.
    maps: Vec<(&'static str, ScalarMap)>,
}

fn detect(cfg: &PipelineConfig, before: &RasterImage, after: &RasterImage) -> Result<Detection> {
    match cfg.method {
        Method::C2va => {
            let (mask, rho, theta) = c2va_change_map(before, after, cfg.percentile)?;
            Ok(Detection {
                mask,
                maps: vec![("_rho.bin", rho), ("_theta.bin", theta)],
            })
        }
        Method::DcvaOtsu | Method::DcvaAda => {
            let bands = cfg
                .bands
                .clone()
                .unwrap_or_else(|| default_band_quadruple(before.bands()));
            let b = before.select_bands(&bands)?;
            let a = after.select_bands(&bands)?;
            let ext = load_extractor(cfg, bands.len())?;
            let thr = match cfg.method {
                Method::DcvaOtsu => ThresholdSpec::Otsu {
                    bins: cfg.otsu_bins,
                },
                _ => ThresholdSpec::Adaptive {
                    radius: cfg.adaptive.radius,
                    k: cfg.adaptive.k,
                },
            };
            let out = dcva_detailed(&b, &a, &ext, &cfg.layers, &cfg.selection, &thr)?;
            log::info!(
                "{}: hypervector has {} channels",
                cfg.location_tag,
                out.hypervector_dims
            );
            Ok(Detection {
                mask: out.mask,
                maps: vec![("_norm.bin", out.norm)],
            })
        }
    }
}

fn run_stages(cfg: &PipelineConfig, out: &mut Outputs) -> Result<RunReport> {
    let started = Instant::now();
    let mut timings = Vec::new();

    let t = Instant::now();
    let before = read_raster(&cfg.before).map_err(|e| e.in_stage("input"))?;
    let mut after = read_raster(&cfg.after).map_err(|e| e.in_stage("input"))?;
    if !before.same_shape(&after) {
        return Err(Error::Shape(format!(
            "before is {}x{}x{}, after is {}x{}x{}",
            before.width(),
            before.height(),
            before.bands(),
            after.width(),
            after.height(),
            after.bands()
        ))
        .in_stage("input"));
    }
    timings.push(("input", ms_since(t)));

    let mut max_flow = None;
    if cfg.registration.enabled {
        let t = Instant::now();
        let (warped, flow) = coregister_pair(
            &before,
            &after,
            cfg.registration.band_index,
            &cfg.registration.params,
        )
        .map_err(|e| e.in_stage("registration"))?;
        after = warped;
        max_flow = Some(flow.max_displacement());
        out.raster(&flow.to_raster(), "_flow.bin")
            .map_err(|e| e.in_stage("registration"))?;
        timings.push(("registration", ms_since(t)));
    }

    let t = Instant::now();
    let (before, after) = match cfg.aoi {
        Some(aoi) => {
            let patch = |img: &RasterImage| extract_patch(img, aoi.x0, aoi.y0, aoi.size);
            (
                patch(&before).map_err(|e| e.in_stage("patch"))?,
                patch(&after).map_err(|e| e.in_stage("patch"))?,
            )
        }
        None => (before, after),
    };
    timings.push(("patch", ms_since(t)));

    let t = Instant::now();
    let det = detect(cfg, &before, &after).map_err(|e| e.in_stage("change detection"))?;
    timings.push(("change detection", ms_since(t)));

    let t = Instant::now();
    let write = |out: &mut Outputs| -> Result<()> {
        out.mask(&det.mask)?;
        for (suffix, map) in &det.maps {
            out.raster(&map.to_raster(), suffix)?;
        }
        Ok(())
    };
    write(out).map_err(|e| e.in_stage("output"))?;

    let changed_percent = det.mask.changed_percent();
    let bimodality = bimodality_coefficient(&det.maps[0].1.valid_values());
    let warning = det.mask.warning().map(str::to_string);
    let mut row = ReportRow {
        location_tag: cfg.location_tag.clone(),
        method: cfg.method.to_string(),
        layers: cfg.layers_label(),
        changed_percent: format!("{changed_percent:.4}"),
        threshold_used: format!("{:.6}", det.mask.threshold_used()),
        max_flow: max_flow.map(|m| format!("{m:.4}")).unwrap_or_default(),
        bimodality: bimodality.map(|b| format!("{b:.4}")).unwrap_or_default(),
        warning: warning.clone().unwrap_or_default(),
        error: String::new(),
        elapsed_ms: 0,
    };
    timings.push(("output", ms_since(t)));
    row.elapsed_ms = ms_since(started);
    out.csv(&row).map_err(|e| e.in_stage("output"))?;

    Ok(RunReport {
        changed_percent,
        threshold_used: det.mask.threshold_used(),
        max_flow,
        warning,
        row,
        artifacts: out.written.clone(),
        timings,
    })
}

/// Executes one config. On error every file this run wrote is removed.
pub fn run(cfg: &PipelineConfig) -> Result<RunReport> {
    cfg.validate()?;
    let mut out = Outputs {
        prefix: cfg.output_prefix.clone(),
        written: Vec::new(),
    };
    let result = run_stages(cfg, &mut out);
    if result.is_err() {
        out.remove_all();
    }
    result
}

/// Runs every config (concurrently) and returns one row each, in input order.
pub fn batch(configs: &[PipelineConfig]) -> Vec<ReportRow> {
    configs
        .par_iter()
        .map(|cfg| {
            let t = Instant::now();
            match run(cfg) {
                Ok(report) => report.row,
                Err(e) => {
                    log::error!("{} / {}: {e}", cfg.location_tag, cfg.method);
                    ReportRow::failed(cfg, &e, ms_since(t))
                }
            }
        })
        .collect()
}

/// CSV with a header line.
pub fn write_rows<W: Write>(w: W, rows: &[ReportRow]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    let header_only = rows.is_empty();
    if header_only {
        wr.write_record([
            "location_tag",
            "method",
            "layers",
            "changed_percent",
            "threshold_used",
            "max_flow",
            "bimodality",
            "warning",
            "error",
            "elapsed_ms",
        ])
        .map_err(csv_error)?;
    }
    for r in rows {
        wr.serialize(r).map_err(csv_error)?;
    }
    wr.flush().map_err(|e| Error::io("<csv>", e))
}

pub fn read_rows<R: std::io::Read>(r: R) -> Result<Vec<ReportRow>> {
    csv::Reader::from_reader(r)
        .deserialize()
        .map(|row| row.map_err(csv_error))
        .collect()
}

fn csv_error(e: csv::Error) -> Error {
    Error::Format(format!("csv: {e}"))
}
