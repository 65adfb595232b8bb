//! Flat little-endian f32 rasters with a JSON sidecar, and P5 PGM masks.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{ChangeMap, RasterImage};
use crate::error::{Error, Result};

/// Value written to every band of a nodata pixel.
pub const NODATA_SENTINEL: f32 = -9999.0;

#[derive(Debug, Serialize, Deserialize)]
struct RasterHeader {
    width: usize,
    height: usize,
    bands: usize,
    dtype: String,
    byte_order: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    wavelengths_nm: Option<Vec<f32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    nodata_value: Option<f32>,
}

pub(crate) fn header_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn read_raster(path: impl AsRef<Path>) -> Result<RasterImage> {
    let path = path.as_ref();
    let hpath = header_path(path);
    let htext = fs::read_to_string(&hpath)
        .map_err(|e| Error::Format(format!("cannot read header {}: {e}", hpath.display())))?;
    let header: RasterHeader = serde_json::from_str(&htext)
        .map_err(|e| Error::Format(format!("garbled header {}: {e}", hpath.display())))?;
    if header.dtype != "f32" {
        return Err(Error::Format(format!(
            "unsupported dtype {:?}",
            header.dtype
        )));
    }
    if header.byte_order != "little" {
        return Err(Error::Format(format!(
            "unsupported byte order {:?}",
            header.byte_order
        )));
    }

    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let expected = header.width * header.height * header.bands * 4;
    if bytes.len() != expected {
        return Err(Error::Size {
            expected,
            found: bytes.len(),
        });
    }
    let mut data: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();

    let plane = header.width * header.height;
    let nodata = header.nodata_value.map(|sentinel| {
        let bits = sentinel.to_bits();
        let mask: Vec<bool> = (0..plane)
            .map(|i| (0..header.bands).all(|k| data[k * plane + i].to_bits() == bits))
            .collect();
        for (i, _) in mask.iter().enumerate().filter(|(_, &n)| n) {
            for k in 0..header.bands {
                data[k * plane + i] = 0.0;
            }
        }
        mask
    });

    let mut img = RasterImage::new(header.width, header.height, header.bands, data)?;
    if let Some(wl) = header.wavelengths_nm {
        img = img.with_wavelengths(wl)?;
    }
    if let Some(mask) = nodata {
        img = img.with_nodata(mask)?;
    }
    Ok(img)
}

pub fn write_raster(img: &RasterImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let header = RasterHeader {
        width: img.width(),
        height: img.height(),
        bands: img.bands(),
        dtype: "f32".into(),
        byte_order: "little".into(),
        wavelengths_nm: img.wavelengths_nm().map(<[f32]>::to_vec),
        nodata_value: img.nodata().map(|_| NODATA_SENTINEL),
    };
    let plane = img.pixel_count();
    let mut bytes = Vec::with_capacity(img.data().len() * 4);
    for (idx, &v) in img.data().iter().enumerate() {
        let v = if img.is_valid(idx % plane) {
            v
        } else {
            NODATA_SENTINEL
        };
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    ensure_parent(path)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    let hpath = header_path(path);
    let text = serde_json::to_string_pretty(&header).expect("header serializes");
    fs::write(&hpath, text).map_err(|e| Error::io(hpath, e))?;
    Ok(())
}

/// Binary PGM, 255 = change, 0 = no change.
pub fn write_mask_pgm(map: &ChangeMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut bytes = format!("P5\n{} {}\n255\n", map.width(), map.height()).into_bytes();
    bytes.extend(map.mask().iter().map(|&m| if m { 255u8 } else { 0 }));
    ensure_parent(path)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Reads a P5 PGM as a mask; pixels above half of maxval are change.
pub fn read_mask_pgm(path: impl AsRef<Path>) -> Result<ChangeMap> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Format(format!(
                "truncated PGM header in {}",
                path.display()
            )));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    if fields[0] != "P5" {
        return Err(Error::Format(format!("{} is not a P5 PGM", path.display())));
    }
    let parse = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| Error::Format(format!("bad PGM header field {s:?}")))
    };
    let (width, height, maxval) = (parse(&fields[1])?, parse(&fields[2])?, parse(&fields[3])?);
    if maxval == 0 || maxval > 255 {
        return Err(Error::Format(format!("unsupported PGM maxval {maxval}")));
    }
    let payload = bytes.get(pos..).unwrap_or(&[]);
    if payload.len() != width * height {
        return Err(Error::Size {
            expected: width * height,
            found: payload.len(),
        });
    }
    let half = maxval / 2;
    let mask = payload.iter().map(|&b| b as usize > half).collect();
    ChangeMap::new(width, height, mask, half as f64, "pgm")
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() && !dir.exists() => {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
        }
        _ => Ok(()),
    }
}
