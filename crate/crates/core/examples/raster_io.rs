//! Writes a small cube with wavelengths and a nodata hole, reads it back,
//! cuts a patch and saves a mask as PGM.
//!
//!     cargo run --example raster_io [out_dir]

use hycd::raster::{extract_patch, read_mask_pgm, read_raster, write_mask_pgm, write_raster};
use hycd::{ChangeMap, RasterImage};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "out/raster_io".into());
    std::fs::create_dir_all(&dir)?;

    let (w, h, bands) = (40, 30, 5);
    let data: Vec<f32> = (0..bands * w * h).map(|i| (i % 97) as f32 * 0.01).collect();
    let mut nodata = vec![false; w * h];
    nodata[3 * w + 7] = true;
    let img = RasterImage::new(w, h, bands, data)?
        .with_wavelengths(vec![450.0, 550.0, 650.0, 850.0, 1650.0])?
        .with_nodata(nodata)?;

    let path = format!("{dir}/cube.bin");
    write_raster(&img, &path)?;
    let back = read_raster(&path)?;
    println!(
        "{}: {}x{}x{} wavelengths {:?} valid {}/{}",
        path,
        back.width(),
        back.height(),
        back.bands(),
        back.wavelengths_nm().unwrap_or(&[]),
        back.valid_mask().iter().filter(|&&v| v).count(),
        back.pixel_count()
    );
    // Nodata cells are stored as the sentinel; everything else round-trips.
    let plane = w * h;
    let same =
        (0..img.data().len()).all(|i| !img.is_valid(i % plane) || img.data()[i] == back.data()[i]);
    println!("valid samples identical after round trip: {same}");

    let patch = extract_patch(&back, 4, 2, 16)?;
    println!("patch 16x16 at (4,2): first value {}", patch.get(0, 0, 0));

    let mask: Vec<bool> = (0..w * h).map(|i| (i % w) > w / 2).collect();
    let map = ChangeMap::new(w, h, mask, 0.5, "example")?;
    let pgm = format!("{dir}/mask.pgm");
    write_mask_pgm(&map, &pgm)?;
    println!(
        "{pgm}: {:.2}% changed",
        read_mask_pgm(&pgm)?.changed_percent()
    );
    Ok(())
}
