//! Generates a scene from a JSON spec (or defaults), writes the pair and the
//! truth mask, and scores a trivial predictor.
//!
//!     cargo run --example synth_and_eval [spec.json] [out_dir]

use hycd::raster::{write_mask_pgm, write_raster};
use hycd::synth::{block_contrast, evaluate, generate_pair, SceneSpec};
use hycd::ChangeMap;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let spec: SceneSpec = match args.next() {
        Some(p) => serde_json::from_str(&std::fs::read_to_string(p)?)?,
        None => serde_json::from_str(
            r#"{"width": 64, "height": 48, "bands": 16, "noise_sigma": 0.01, "seed": 3,
                "change_blocks": [{"x": 5, "y": 5, "w": 20, "h": 12, "mode": "material_swap"}]}"#,
        )?,
    };
    let dir = args.next().unwrap_or_else(|| "out/synth".into());
    std::fs::create_dir_all(&dir)?;

    println!("mean per-band block change {:.4}", block_contrast(&spec)?);
    let (before, after, truth) = generate_pair(&spec)?;
    write_raster(&before, format!("{dir}/before.bin"))?;
    write_raster(&after, format!("{dir}/after.bin"))?;
    write_mask_pgm(&truth, format!("{dir}/truth.pgm"))?;
    println!(
        "wrote {dir}/before.bin, after.bin, truth.pgm ({:.2}% changed)",
        truth.changed_percent()
    );

    // Mark the left half of the image as changed.
    let (w, h) = (truth.width(), truth.height());
    let guess = ChangeMap::new(
        w,
        h,
        (0..w * h).map(|i| i % w < w / 2).collect(),
        0.0,
        "left_half",
    )?;
    let m = evaluate(&guess, &truth)?;
    println!("{}", serde_json::to_string_pretty(&m)?);
    Ok(())
}
