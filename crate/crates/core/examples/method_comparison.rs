//! Builds the method comparison table: C2VA, DCVA-Otsu and DCVA-Ada with the
//! three layer presets on a few synthetic locations, run as one batch.
//!
//!     cargo run --release --example method_comparison [out_dir]

use hycd::pipeline::{batch, comparison_configs, write_rows, PipelineConfig};
use hycd::raster::write_raster;
use hycd::synth::{generate_pair, ChangeBlock, ChangeMode, SceneSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::path::PathBuf::from(
        std::env::args()
            .nth(1)
            .unwrap_or_else(|| "out/comparison".into()),
    );
    std::fs::create_dir_all(&dir)?;

    let mut configs = Vec::new();
    for (i, name) in ["coast", "farmland", "city"].iter().enumerate() {
        let spec = SceneSpec {
            width: 128,
            height: 128,
            bands: 32,
            noise_sigma: 0.01,
            shift_px: (1, 0),
            change_blocks: vec![ChangeBlock {
                x: 20 + 20 * i,
                y: 30,
                w: 28,
                h: 24,
                mode: if i % 2 == 0 {
                    ChangeMode::MaterialSwap
                } else {
                    ChangeMode::SpectralShift
                },
            }],
            seed: 40 + i as u64,
            ..Default::default()
        };
        let (before, after, _) = generate_pair(&spec)?;
        let (pb, pa) = (
            dir.join(format!("{name}_before.bin")),
            dir.join(format!("{name}_after.bin")),
        );
        write_raster(&before, &pb)?;
        write_raster(&after, &pa)?;

        let mut base = PipelineConfig {
            location_tag: name.to_string(),
            before: pb,
            after: pa,
            seed: 7,
            output_prefix: dir.join(name),
            ..Default::default()
        };
        base.registration.enabled = true;
        configs.extend(comparison_configs(&base));
    }

    let rows = batch(&configs);
    write_rows(std::io::stdout().lock(), &rows)?;
    write_rows(std::fs::File::create(dir.join("comparison.csv"))?, &rows)?;
    Ok(())
}
