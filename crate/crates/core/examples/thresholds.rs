//! The three thresholding rules on one bimodal magnitude map.
//!
//!     cargo run --example thresholds

use hycd::threshold::{bimodality_coefficient, threshold_map, ThresholdSpec};
use hycd::{MapKind, ScalarMap};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn main() -> hycd::Result<()> {
    let (w, h) = (120, 80);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (bg, fg) = (
        Normal::new(1.0f32, 0.2).unwrap(),
        Normal::new(3.0f32, 0.4).unwrap(),
    );
    // A bright disc of change on a noisy background.
    let values: Vec<f32> = (0..w * h)
        .map(|i| {
            let (x, y) = ((i % w) as f32 - 80.0, (i / w) as f32 - 40.0);
            if x * x + y * y < 15.0 * 15.0 {
                fg.sample(&mut rng)
            } else {
                bg.sample(&mut rng)
            }
        })
        .collect();
    let map = ScalarMap::new(w, h, values, MapKind::Magnitude)?;
    if let Some(b) = bimodality_coefficient(&map.valid_values()) {
        println!("bimodality coefficient {b:.3}");
    }

    for spec in [
        ThresholdSpec::percentile(90.0),
        ThresholdSpec::otsu(),
        ThresholdSpec::adaptive(),
        ThresholdSpec::Adaptive { radius: 40, k: 1.0 },
    ] {
        let mask = threshold_map(&map, &spec, "demo")?;
        println!(
            "{:<22} threshold {:>7.4}  changed {:>6.2}%",
            mask.method_tag(),
            mask.threshold_used(),
            mask.changed_percent()
        );
    }
    Ok(())
}
