//! C2VA on a synthetic pair: magnitude, phase angle and the percentile mask,
//! scored against the injected change.
//!
//!     cargo run --release --example c2va_synthetic [percentile]

use hycd::cva::{c2va_change_map, default_reference, phase_angle};
use hycd::synth::{evaluate, generate_pair, ChangeBlock, ChangeMode, SceneSpec};

fn main() -> hycd::Result<()> {
    let p: f64 = std::env::args()
        .nth(1)
        .map_or(90.0, |a| a.parse().expect("percentile"));
    let spec = SceneSpec {
        width: 100,
        height: 100,
        bands: 48,
        noise_sigma: 0.01,
        change_blocks: vec![
            ChangeBlock {
                x: 10,
                y: 10,
                w: 20,
                h: 25,
                mode: ChangeMode::MaterialSwap,
            },
            ChangeBlock {
                x: 60,
                y: 55,
                w: 25,
                h: 20,
                mode: ChangeMode::SpectralShift,
            },
        ],
        seed: 5,
        ..Default::default()
    };
    let (before, after, truth) = generate_pair(&spec)?;
    println!("truth: {:.2}% changed", truth.changed_percent());

    let (mask, rho, _) = c2va_change_map(&before, &after, p)?;
    let theta = phase_angle(&before, &after, &default_reference(spec.bands)?)?;
    let mean = |v: &[f32], m: &[bool]| {
        let sel: Vec<f64> = v
            .iter()
            .zip(m)
            .filter(|(_, &t)| t)
            .map(|(&x, _)| x as f64)
            .collect();
        sel.iter().sum::<f64>() / sel.len().max(1) as f64
    };
    let outside: Vec<bool> = truth.mask().iter().map(|t| !t).collect();
    println!(
        "mean rho inside blocks {:.4}, outside {:.4}",
        mean(rho.values(), truth.mask()),
        mean(rho.values(), &outside)
    );
    println!(
        "mean theta inside blocks {:.3} rad",
        mean(theta.values(), truth.mask())
    );

    let m = evaluate(&mask, &truth)?;
    println!(
        "p{p}: threshold {:.4}, changed {:.2}%, precision {:.3}, recall {:.3}, iou {:.3}",
        mask.threshold_used(),
        mask.changed_percent(),
        m.precision,
        m.recall,
        m.iou
    );
    Ok(())
}
