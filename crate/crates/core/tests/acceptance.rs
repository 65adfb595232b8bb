//! Acceptance criteria, one line each. Runs without the libtest harness so
//! the PASS/FAIL lines always reach the console.

mod common;

use std::f64::consts::{FRAC_PI_2, PI};
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use common::*;
use hycd::coregister::{compute_flow, FlowParams};
use hycd::cva::{c2va_change_map, change_magnitude, default_reference, phase_angle};
use hycd::dcva::{
    dcva_change_map, default_band_quadruple, Layer, LayerSelection, SelectionParams, BUILTIN_DEPTH,
};
use hycd::pipeline::{self, comparison_configs, PipelineConfig, ReportRow};
use hycd::raster::write_raster;
use hycd::synth::{evaluate, generate_pair, ChangeBlock, ChangeMode, SceneSpec};
use hycd::threshold::{nearest_rank, otsu_threshold_values, ThresholdSpec};
use hycd::RasterImage;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

/// Random 256×256×32 pair whose ρ values are a shuffled, well-spaced ladder.
fn distinct_rho_pair(seed: u64) -> (RasterImage, RasterImage) {
    let (w, h, b) = (256, 256, 32);
    let n = w * h;
    let mut r = rng(seed);
    let before: Vec<f32> = (0..n * b).map(|_| r.gen_range(0.0..1.0)).collect();
    let mut mags: Vec<f64> = (0..n).map(|i| 1.0 + i as f64 * 1e-3).collect();
    mags.shuffle(&mut r);
    let mut after = before.clone();
    let normal = Normal::new(0.0f64, 1.0).unwrap();
    for (i, m) in mags.iter().enumerate() {
        let dir: Vec<f64> = (0..b).map(|_| normal.sample(&mut r)).collect();
        let norm = dir.iter().map(|d| d * d).sum::<f64>().sqrt();
        for k in 0..b {
            after[k * n + i] = (before[k * n + i] as f64 + m * dir[k] / norm) as f32;
        }
    }
    (
        RasterImage::new(w, h, b, before).unwrap(),
        RasterImage::new(w, h, b, after).unwrap(),
    )
}

fn c1() -> Outcome {
    let mut elapsed = 0.0;
    let mut worst = 0.0f64;
    for seed in 0..20 {
        let (b, a) = distinct_rho_pair(seed);
        let t = Instant::now();
        let (mask, rho, _) = c2va_change_map(&b, &a, 90.0).map_err(|e| e.to_string())?;
        elapsed += t.elapsed().as_secs_f64();
        let mut sorted = rho.values().to_vec();
        sorted.sort_by(f32::total_cmp);
        ensure!(
            sorted.windows(2).all(|w| w[0] < w[1]),
            "scene {seed}: rho values not distinct"
        );
        let expected = 0.1 * mask.valid_count() as f64;
        let off = (mask.changed_count() as f64 - expected).abs();
        worst = worst.max(off);
        ensure!(
            off <= 1.0,
            "scene {seed}: {} marked, expected {expected}",
            mask.changed_count()
        );
        ensure!(
            (mask.changed_percent() - 10.0).abs() <= 100.0 / mask.valid_count() as f64,
            "scene {seed}"
        );
    }
    ensure!(elapsed < 5.0, "c2va took {elapsed:.2}s");
    Ok(format!(
        "20 scenes, max deviation {worst:.1} px from 10%, {elapsed:.2}s"
    ))
}

fn c2() -> Outcome {
    let mut worst = 0.0f64;
    for seed in 0..5 {
        let b = random_image(seed, 16, 16, 240);
        let a = random_image(seed + 77, 16, 16, 240);
        let rho = change_magnitude(&b, &a).map_err(|e| e.to_string())?;
        for (g, w) in rho.values().iter().zip(naive_rho(&b, &a)) {
            worst = worst.max((*g as f64 - w).abs() / w);
        }
    }
    ensure!(worst <= 1e-4, "max relative error {worst:e}");
    Ok(format!("max relative error {worst:.2e}"))
}

fn c3() -> Outcome {
    let bands = 6;
    let r = default_reference(bands).map_err(|e| e.to_string())?;
    let zero = RasterImage::zeros(3, 1, bands).unwrap();
    let mut d = vec![0.0f32; 3 * bands];
    for k in 0..bands {
        d[k * 3] = 2.5;
        d[k * 3 + 1] = if k % 2 == 0 { 1.0 } else { -1.0 };
        d[k * 3 + 2] = -0.75;
    }
    let after = RasterImage::new(3, 1, bands, d).unwrap();
    let th = phase_angle(&zero, &after, &r).map_err(|e| e.to_string())?;
    let got: Vec<f64> = th.values().iter().map(|&v| v as f64).collect();
    let errs = [
        got[0].abs(),
        (got[1] - FRAC_PI_2).abs(),
        (got[2] - PI).abs(),
    ];
    ensure!(errs.iter().all(|&e| e <= 1e-6), "angles {got:?}");
    Ok(format!(
        "errors {:.1e} {:.1e} {:.1e}",
        errs[0], errs[1], errs[2]
    ))
}

fn c4() -> Outcome {
    let t = Instant::now();
    let tex = periodic_texture(128, 128, 3);
    let target = RasterImage::new(128, 128, 1, tex.clone()).unwrap();
    let mut report = Vec::new();
    for (dx, dy) in [(2.0, 3.0), (0.5, 0.0)] {
        let moving = RasterImage::new(128, 128, 1, periodic_shift(&tex, 128, 128, dx, dy)).unwrap();
        let flow =
            compute_flow(&target, &moving, &FlowParams::default()).map_err(|e| e.to_string())?;
        let epe = flow.mean_endpoint_error(dx as f32, dy as f32, 16);
        ensure!(epe <= 0.25, "shift ({dx},{dy}): EPE {epe:.3}");
        report.push(format!("({dx},{dy}) EPE {epe:.3}"));
    }
    let secs = t.elapsed().as_secs_f64();
    ensure!(secs < 10.0, "took {secs:.2}s");
    Ok(format!("{}, {secs:.2}s", report.join(", ")))
}

fn value_set(seed: u64) -> Vec<f32> {
    let mut r = rng(seed);
    let n = r.gen_range(2..=10_000);
    match seed % 4 {
        0 => (0..n).map(|_| r.gen_range(0..32) as f32 * 0.25).collect(),
        1 => {
            let (a, b) = (
                Normal::new(0.0f32, 1.0).unwrap(),
                Normal::new(5.0f32, 2.0).unwrap(),
            );
            (0..n)
                .map(|i| {
                    if i % 3 == 0 {
                        b.sample(&mut r)
                    } else {
                        a.sample(&mut r)
                    }
                })
                .collect()
        }
        2 => (0..n)
            .map(|_| r.gen_range(0.0f32..1.0).powi(3) * 100.0)
            .collect(),
        _ => (0..n).map(|_| r.gen_range(-1e3f32..1e3)).collect(),
    }
}

fn c5() -> Outcome {
    let mut checked = 0;
    for seed in 0..100 {
        let v = value_set(seed);
        ensure!(v.iter().any(|&x| x != v[0]), "seed {seed}: constant set");
        let got = otsu_threshold_values(&v, 256).map_err(|e| e.to_string())?;
        let want = brute_otsu(&v, 256);
        ensure!(got == want, "seed {seed}: {got} vs {want}");
        checked += 1;
    }
    Ok(format!("{checked} sets identical"))
}

fn c6() -> Outcome {
    for seed in 0..100 {
        let v = value_set(seed + 500);
        for p in [1.0, 10.0, 50.0, 90.0, 99.0] {
            let got = nearest_rank(&mut v.clone(), p).map_err(|e| e.to_string())?;
            let want = sorted_percentile(&v, p);
            ensure!(got == want, "seed {seed} p{p}: {got} vs {want}");
        }
    }
    Ok("100 sets x 5 percentiles identical".into())
}

fn c7() -> Outcome {
    let ext = extractor(7);
    let sel = SelectionParams {
        rng_seed: 3,
        ..Default::default()
    };
    let l = LayerSelection::preset1();
    let ada = ThresholdSpec::adaptive();
    let x = random_image(1, 64, 64, 4);
    let (mask, norm) = dcva_change_map(&x, &x, &ext, &l, &sel, &ada).map_err(|e| e.to_string())?;
    ensure!(
        norm.values().iter().all(|&v| v == 0.0),
        "identical pair has nonzero norm"
    );
    ensure!(
        mask.changed_count() == 0,
        "identical pair marked {} px",
        mask.changed_count()
    );

    let (b, a, _) = detection_scene(42);
    let q = default_band_quadruple(b.bands());
    let (b, a) = (b.select_bands(&q).unwrap(), a.select_bands(&q).unwrap());
    let (m1, n1) = dcva_change_map(&b, &a, &ext, &l, &sel, &ada).map_err(|e| e.to_string())?;
    let (m2, n2) = dcva_change_map(&a, &b, &ext, &l, &sel, &ada).map_err(|e| e.to_string())?;
    ensure!(n1.values() == n2.values(), "norm differs under swap");
    ensure!(m1.mask() == m2.mask(), "mask differs under swap");
    Ok(format!(
        "zero norm on identical pair; swap-identical mask ({} px)",
        m1.changed_count()
    ))
}

/// Niblack window for objects of ~32 px: the window must reach well past the
/// object, otherwise its interior sets its own local mean.
const C8_RADIUS: usize = 64;
const C8_K: f64 = 0.75;

fn c8_scene(seed: u64) -> Result<(f64, f64, f64), String> {
    let (b, a, truth) = detection_scene(seed);
    let q = default_band_quadruple(b.bands());
    let (b4, a4) = (b.select_bands(&q).unwrap(), a.select_bands(&q).unwrap());
    let thr = ThresholdSpec::Adaptive {
        radius: C8_RADIUS,
        k: C8_K,
    };
    let (mask, _) = dcva_change_map(
        &b4,
        &a4,
        &extractor(7),
        &LayerSelection::preset1(),
        &SelectionParams::default(),
        &thr,
    )
    .map_err(|e| e.to_string())?;
    let m = evaluate(&mask, &truth).map_err(|e| e.to_string())?;
    let (c2va, _, _) = c2va_change_map(&b, &a, 90.0).map_err(|e| e.to_string())?;
    let iou = evaluate(&c2va, &truth).map_err(|e| e.to_string())?.iou;
    Ok((m.recall, m.false_positive_rate, iou))
}

fn c8() -> Outcome {
    let (recall, fpr, iou) = c8_scene(42)?;
    // Other scenes, reported but not asserted.
    let seeds = 0..12u64;
    let total = seeds.clone().count();
    let mut passing = 0;
    for s in seeds {
        let (r, f, i) = c8_scene(s)?;
        passing += usize::from(r >= 0.8 && f <= 0.05 && i >= 0.5);
    }
    ensure!(
        recall >= 0.8 && fpr <= 0.05 && iou >= 0.5,
        "recall {recall:.3}, background FPR {fpr:.4}, C2VA IoU {iou:.3}"
    );
    Ok(format!(
        "DCVA-Ada(r={C8_RADIUS},k={C8_K}) recall {recall:.3}, FPR {fpr:.4}; C2VA IoU {iou:.3}; \
         {passing}/{total} other scenes also pass"
    ))
}

fn scene_configs(dir: &Path) -> Vec<PipelineConfig> {
    let mut configs = Vec::new();
    for s in 0..3u64 {
        let spec = SceneSpec {
            width: 96,
            height: 96,
            bands: 24,
            n_materials: 5,
            noise_sigma: 0.01,
            change_blocks: vec![
                ChangeBlock {
                    x: 10,
                    y: 12,
                    w: 24,
                    h: 20,
                    mode: ChangeMode::MaterialSwap,
                },
                ChangeBlock {
                    x: 60,
                    y: 50,
                    w: 16,
                    h: 30,
                    mode: ChangeMode::SpectralShift,
                },
            ],
            seed: 100 + s,
            ..Default::default()
        };
        let (b, a, _) = generate_pair(&spec).unwrap();
        let (pb, pa) = (
            dir.join(format!("s{s}_before.bin")),
            dir.join(format!("s{s}_after.bin")),
        );
        write_raster(&b, &pb).unwrap();
        write_raster(&a, &pa).unwrap();
        configs.extend(comparison_configs(&PipelineConfig {
            location_tag: format!("scene{s}"),
            before: pb,
            after: pa,
            seed: 7,
            output_prefix: format!("out/scene{s}").into(),
            ..Default::default()
        }));
    }
    configs
}

fn strip_timing(rows: &[ReportRow]) -> Vec<ReportRow> {
    rows.iter()
        .cloned()
        .map(|r| ReportRow { elapsed_ms: 0, ..r })
        .collect()
}

fn c9() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut configs = scene_configs(dir.path());
    for c in &mut configs {
        c.output_prefix = dir.path().join(&c.output_prefix);
    }
    let first = pipeline::batch(&configs);
    let second = pipeline::batch(&configs);
    ensure!(first.len() == 15, "{} rows", first.len());
    for r in &first {
        ensure!(
            r.error.is_empty(),
            "{} {}: {}",
            r.location_tag,
            r.method,
            r.error
        );
        let pct: f64 = r
            .changed_percent
            .parse()
            .map_err(|_| "bad changed_percent".to_string())?;
        let thr: f64 = r
            .threshold_used
            .parse()
            .map_err(|_| "bad threshold".to_string())?;
        ensure!(pct.is_finite() && thr.is_finite(), "non-finite row");
    }
    ensure!(
        strip_timing(&first) == strip_timing(&second),
        "rows differ between reruns"
    );
    let ada: Vec<String> = first
        .iter()
        .filter(|r| r.method == "dcva_ada")
        .map(|r| r.changed_percent.clone())
        .collect();
    Ok(format!(
        "15 finite deterministic rows; DCVA-Ada % by preset (1)(2)(3) per scene: {}",
        ada.join(" ")
    ))
}

fn c10() -> Outcome {
    let ext = extractor(11);
    let img = random_image(5, 16, 16, 4);
    let all: Vec<usize> = (1..=BUILTIN_DEPTH).collect();
    let acts = ext.run(&img, &all).map_err(|e| e.to_string())?;
    let (mut layers, mut worst) = (0, 0.0f64);
    for (l, layer) in ext.layers().iter().enumerate() {
        let Layer::Conv3x3(conv) = layer else {
            continue;
        };
        let (input, w, h) = if l == 0 {
            (img.data().to_vec(), 16, 16)
        } else {
            (
                acts[l - 1].values.clone(),
                acts[l - 1].width,
                acts[l - 1].height,
            )
        };
        let want = naive_conv(
            &input,
            w,
            h,
            conv.in_ch,
            conv.out_ch,
            &conv.weights,
            &conv.bias,
            conv.rectify,
        );
        for (g, e) in acts[l].values.iter().zip(&want) {
            worst = worst.max((*g as f64 - e).abs());
        }
        layers += 1;
    }
    ensure!(worst <= 1e-4, "max abs error {worst:e}");
    Ok(format!("{layers} conv layers, max abs error {worst:.1e}"))
}

fn run_cli_batch(dir: &Path) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_hycd"))
        .args(["batch", "--configs"])
        .arg(dir.join("configs"))
        .arg("--out")
        .arg(dir.join("table.csv"))
        .output()
        .map_err(|e| e.to_string())?;
    ensure!(
        out.status.success(),
        "hycd batch failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    Ok(())
}

fn csv_without_timing(path: &Path) -> Result<Vec<ReportRow>, String> {
    let f = std::fs::File::open(path).map_err(|e| e.to_string())?;
    Ok(strip_timing(
        &pipeline::read_rows(f).map_err(|e| e.to_string())?,
    ))
}

fn c11() -> Outcome {
    let root = tempfile::tempdir().map_err(|e| e.to_string())?;
    let inputs = root.path().join("inputs");
    std::fs::create_dir_all(&inputs).unwrap();
    let configs = scene_configs(&inputs);
    let runs = [root.path().join("run1"), root.path().join("run2")];
    for run in &runs {
        std::fs::create_dir_all(run.join("configs")).unwrap();
        for (i, c) in configs.iter().enumerate() {
            let text = serde_json::to_string_pretty(c).unwrap();
            std::fs::write(run.join(format!("configs/{i:02}.json")), text).unwrap();
        }
        run_cli_batch(run)?;
    }
    let (a, b) = (
        csv_without_timing(&runs[0].join("table.csv"))?,
        csv_without_timing(&runs[1].join("table.csv"))?,
    );
    ensure!(a.len() == 15, "{} rows", a.len());
    ensure!(a == b, "CSV differs between reruns");
    ensure!(a.iter().all(|r| r.error.is_empty()), "rows with errors");
    let mut masks = 0;
    for c in &configs {
        let rel = format!("{}_mask.pgm", c.output_prefix.display());
        let x =
            std::fs::read(runs[0].join("configs").join(&rel)).map_err(|e| format!("{rel}: {e}"))?;
        let y =
            std::fs::read(runs[1].join("configs").join(&rel)).map_err(|e| format!("{rel}: {e}"))?;
        ensure!(x == y, "{rel} differs");
        masks += 1;
    }
    Ok(format!("CSV rows and {masks} PGM masks byte-identical"))
}

fn main() {
    let criteria: [(&str, &str, fn() -> Outcome); 11] = [
        (
            "C1",
            "C2VA p90 marks exactly 10% of distinct-rho scenes",
            c1,
        ),
        ("C2", "magnitude matches f64 loop at 240 bands", c2),
        ("C3", "phase angle 0, pi/2, pi cases", c3),
        ("C4", "registration recovers (2,3) and (0.5,0)", c4),
        ("C5", "Otsu equals exhaustive search", c5),
        ("C6", "nearest-rank equals full sort", c6),
        ("C7", "DCVA zero-change and swap soundness", c7),
        ("C8", "synthetic block detection", c8),
        ("C9", "method comparison batch over presets", c9),
        ("C10", "builtin conv layers match naive loop", c10),
        ("C11", "hycd batch rerun is byte-identical", c11),
    ];
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let mut failed = 0;
    for (id, name, check) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| id == f || name.contains(f.as_str())) {
            continue;
        }
        let t = Instant::now();
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("[PASS] {id:<4}{name}: {detail} ({secs:.1}s)"),
            Err(why) => {
                failed += 1;
                println!("[FAIL] {id:<4}{name}: {why} ({secs:.1}s)");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
