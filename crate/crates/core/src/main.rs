use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use hycd::coregister::{coregister_pair, FlowParams};
use hycd::cva::c2va_change_map;
use hycd::dcva::{
    builtin_extractor, dcva_change_map, FeatureExtractor, LayerSelection, SelectionParams,
};
use hycd::pipeline::{self, artifact_path, PipelineConfig};
use hycd::raster::{read_mask_pgm, read_raster, write_mask_pgm, write_raster};
use hycd::synth::{evaluate, generate_pair, SceneSpec};
use hycd::threshold::{
    ThresholdSpec, DEFAULT_ADAPTIVE_K, DEFAULT_ADAPTIVE_RADIUS, DEFAULT_OTSU_BINS,
};
use hycd::{Error, Result};

#[derive(Parser)]
#[command(name = "hycd", version, about = "Hyperspectral change detection")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Align AFTER onto BEFORE with dense optical flow.
    Coregister {
        #[arg(long)]
        before: PathBuf,
        #[arg(long)]
        after: PathBuf,
        /// Band used to estimate the flow.
        #[arg(long, default_value_t = 0)]
        band: usize,
        #[arg(long, default_value_t = 3)]
        levels: usize,
        #[arg(long, default_value_t = 8)]
        radius: usize,
        #[arg(long, default_value_t = 5)]
        iterations: usize,
        #[arg(long, default_value_t = 1e-4)]
        eps: f64,
        /// Warped AFTER image.
        #[arg(long)]
        out: PathBuf,
        /// Two-band (u, v) flow raster.
        #[arg(long)]
        out_flow: Option<PathBuf>,
    },
    /// Compressed change vector analysis with a percentile threshold.
    C2va {
        #[arg(long)]
        before: PathBuf,
        #[arg(long)]
        after: PathBuf,
        #[arg(long, visible_alias = "p", default_value_t = 90.0)]
        percentile: f64,
        #[arg(long)]
        out_mask: PathBuf,
        #[arg(long)]
        out_rho: Option<PathBuf>,
        #[arg(long)]
        out_theta: Option<PathBuf>,
    },
    /// Deep change vector analysis.
    Dcva {
        #[arg(long)]
        before: PathBuf,
        #[arg(long)]
        after: PathBuf,
        /// Comma-separated band indices fed to the extractor.
        #[arg(long, value_delimiter = ',')]
        bands: Option<Vec<usize>>,
        /// preset1 | preset2 | preset3 | comma-separated indices.
        #[arg(long, default_value = "preset1")]
        layers: LayerSelection,
        #[arg(long, value_enum, default_value_t = ThresholdKind::Otsu)]
        threshold: ThresholdKind,
        /// Percentile for `--threshold percentile`.
        #[arg(long, default_value_t = 90.0)]
        p: f64,
        #[arg(long, default_value_t = DEFAULT_ADAPTIVE_RADIUS)]
        radius: usize,
        #[arg(long, default_value_t = DEFAULT_ADAPTIVE_K)]
        k: f64,
        #[arg(long, default_value_t = DEFAULT_OTSU_BINS)]
        bins: usize,
        /// Seed of the built-in extractor and of the k-means initialisation.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 4)]
        clusters: usize,
        #[arg(long, default_value_t = 90.0)]
        keep_percentile: f64,
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long)]
        out_mask: PathBuf,
        #[arg(long)]
        out_norm: Option<PathBuf>,
    },
    /// Generate a synthetic before/after pair with its truth mask.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        /// Writes <prefix>before.bin, <prefix>after.bin and <prefix>truth.pgm.
        #[arg(long)]
        out_prefix: PathBuf,
    },
    /// Compare a predicted mask against a truth mask.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        /// CSV output; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Execute one pipeline config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Dotted-path edits such as `aoi.size=256`.
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Execute every config in a directory (or file) and tabulate the results.
    Batch {
        #[arg(long)]
        configs: PathBuf,
        /// CSV output; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ThresholdKind {
    Percentile,
    Otsu,
    Adaptive,
}

fn csv_sink(out: Option<&Path>) -> Result<Box<dyn std::io::Write>> {
    Ok(match out {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(|e| Error::Io {
                    path: dir.to_path_buf(),
                    source: e,
                })?;
            }
            Box::new(std::fs::File::create(p).map_err(|e| Error::Io {
                path: p.to_path_buf(),
                source: e,
            })?)
        }
        None => Box::new(std::io::stdout().lock()),
    })
}

fn execute(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Coregister {
            before,
            after,
            band,
            levels,
            radius,
            iterations,
            eps,
            out,
            out_flow,
        } => {
            let params = FlowParams {
                pyramid_levels: levels,
                window_radius: radius,
                iterations_per_level: iterations,
                regularization_eps: eps,
            };
            params.validate().map_err(into_config)?;
            let (warped, flow) =
                coregister_pair(&read_raster(before)?, &read_raster(after)?, band, &params)?;
            write_raster(&warped, out)?;
            if let Some(p) = out_flow {
                write_raster(&flow.to_raster(), p)?;
            }
            println!("max_flow={:.4}", flow.max_displacement());
        }
        Cmd::C2va {
            before,
            after,
            percentile,
            out_mask,
            out_rho,
            out_theta,
        } => {
            ThresholdSpec::Percentile { p: percentile }
                .validate()
                .map_err(into_config)?;
            let (mask, rho, theta) =
                c2va_change_map(&read_raster(before)?, &read_raster(after)?, percentile)?;
            write_mask_pgm(&mask, out_mask)?;
            if let Some(p) = out_rho {
                write_raster(&rho.to_raster(), p)?;
            }
            if let Some(p) = out_theta {
                write_raster(&theta.to_raster(), p)?;
            }
            println!(
                "changed_percent={:.4} threshold={}",
                mask.changed_percent(),
                mask.threshold_used()
            );
        }
        Cmd::Dcva {
            before,
            after,
            bands,
            layers,
            threshold,
            p,
            radius,
            k,
            bins,
            seed,
            clusters,
            keep_percentile,
            weights,
            out_mask,
            out_norm,
        } => {
            let sel = SelectionParams {
                clusters_k: clusters,
                keep_percentile,
                rng_seed: seed,
            };
            let thr = match threshold {
                ThresholdKind::Percentile => ThresholdSpec::Percentile { p },
                ThresholdKind::Otsu => ThresholdSpec::Otsu { bins },
                ThresholdKind::Adaptive => ThresholdSpec::Adaptive { radius, k },
            };
            sel.validate()
                .and_then(|_| thr.validate())
                .map_err(into_config)?;
            let (b, a) = (read_raster(before)?, read_raster(after)?);
            let bands = bands.unwrap_or_else(|| hycd::dcva::default_band_quadruple(b.bands()));
            let (b, a) = (b.select_bands(&bands)?, a.select_bands(&bands)?);
            let ext = match weights {
                Some(p) => FeatureExtractor::load_weights(p)?,
                None => builtin_extractor(seed, bands.len())?,
            };
            let (mask, norm) = dcva_change_map(&b, &a, &ext, &layers, &sel, &thr)?;
            write_mask_pgm(&mask, out_mask)?;
            if let Some(p) = out_norm {
                write_raster(&norm.to_raster(), p)?;
            }
            if let Some(w) = mask.warning() {
                log::warn!("{w}");
            }
            println!(
                "changed_percent={:.4} threshold={}",
                mask.changed_percent(),
                mask.threshold_used()
            );
        }
        Cmd::Synth { spec, out_prefix } => {
            let text = std::fs::read_to_string(&spec).map_err(|e| Error::Io {
                path: spec.clone(),
                source: e,
            })?;
            let spec: SceneSpec =
                serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
            let (b, a, truth) = generate_pair(&spec)?;
            write_raster(&b, artifact_path(&out_prefix, "before.bin"))?;
            write_raster(&a, artifact_path(&out_prefix, "after.bin"))?;
            write_mask_pgm(&truth, artifact_path(&out_prefix, "truth.pgm"))?;
        }
        Cmd::Eval { pred, truth, out } => {
            let m = evaluate(&read_mask_pgm(pred)?, &read_mask_pgm(truth)?)?;
            let mut w = csv::Writer::from_writer(csv_sink(out.as_deref())?);
            w.serialize(m).map_err(|e| Error::Format(e.to_string()))?;
            w.flush().map_err(|e| Error::Io {
                path: "<csv>".into(),
                source: e,
            })?;
        }
        Cmd::Run { config, overrides } => {
            let cfg = PipelineConfig::load(&config, &overrides).map_err(into_config)?;
            let report = pipeline::run(&cfg)?;
            if let Some(w) = &report.warning {
                log::warn!("{w}");
            }
            for p in &report.artifacts {
                println!("{}", p.display());
            }
        }
        Cmd::Batch { configs, out } => {
            let cfgs = if configs.is_dir() {
                pipeline::load_config_dir(&configs)
            } else {
                pipeline::load_config_file(&configs)
            }
            .map_err(into_config)?;
            let rows = pipeline::batch(&cfgs);
            pipeline::write_rows(csv_sink(out.as_deref())?, &rows)?;
        }
    }
    Ok(())
}

/// Problems loading a config (missing file, bad JSON) count as config errors.
fn into_config(e: Error) -> Error {
    if e.is_config() {
        e
    } else {
        Error::Config(e.to_string())
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 2 } else { 1 })
        }
    }
}
