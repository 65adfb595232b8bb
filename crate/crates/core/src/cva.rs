//! Compressed change vector analysis over the full spectrum.
//!
//! For a coregistered pair the per-pixel spectral difference `D = after − before`
//! is reduced to its Euclidean magnitude ρ and to the angle θ between `D` and a
//! unit reference direction. Binary maps use ρ only.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::raster::{ChangeMap, MapKind, RasterImage, ScalarMap};
use crate::threshold::{apply_threshold, check_percentile, fmt_num, nearest_rank};

/// Below this difference norm the phase angle is undefined.
const MIN_DIFF_NORM: f64 = 1e-12;

/// Unit-norm direction in band space.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceVector {
    components: Vec<f64>,
}

impl ReferenceVector {
    /// Accepts an already-normalized vector (‖x‖₂ = 1 within 1e-6).
    pub fn new(components: Vec<f64>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::Domain(
                "reference vector needs at least one band".into(),
            ));
        }
        let norm = components.iter().map(|c| c * c).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-6 {
            return Err(Error::Domain(format!(
                "reference vector norm {norm} is not 1"
            )));
        }
        Ok(Self { components })
    }

    /// Normalizes an arbitrary non-zero direction.
    pub fn from_direction(direction: &[f64]) -> Result<Self> {
        let norm = direction.iter().map(|c| c * c).sum::<f64>().sqrt();
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(Error::Domain("reference direction must be non-zero".into()));
        }
        Self::new(direction.iter().map(|c| c / norm).collect())
    }

    pub fn components(&self) -> &[f64] {
        &self.components
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }
}

/// The equal-weight direction `(√B/B, …, √B/B)`.
pub fn default_reference(bands: usize) -> Result<ReferenceVector> {
    if bands == 0 {
        return Err(Error::Domain("band count must be >= 1".into()));
    }
    let b = bands as f64;
    ReferenceVector::new(vec![b.sqrt() / b; bands])
}

/// ρ = ‖after − before‖₂ per pixel, accumulated in f64.
pub fn change_magnitude(before: &RasterImage, after: &RasterImage) -> Result<ScalarMap> {
    before.check_same_shape(after)?;
    let (n, bands) = (before.pixel_count(), before.bands());
    let (b, a) = (before.data(), after.data());
    let valid = RasterImage::joint_valid(before, after);
    let values: Vec<f32> = (0..n)
        .into_par_iter()
        .map(|i| {
            if !valid[i] {
                return 0.0;
            }
            let mut acc = 0.0f64;
            for k in 0..bands {
                let d = (a[k * n + i] - b[k * n + i]) as f64;
                acc += d * d;
            }
            acc.sqrt() as f32
        })
        .collect();
    ScalarMap::with_valid(
        before.width(),
        before.height(),
        values,
        MapKind::Magnitude,
        Some(valid),
    )
}

/// θ = arccos(⟨D, ref⟩ / ‖D‖) per pixel; zero-difference pixels are nodata.
pub fn phase_angle(
    before: &RasterImage,
    after: &RasterImage,
    reference: &ReferenceVector,
) -> Result<ScalarMap> {
    before.check_same_shape(after)?;
    if reference.len() != before.bands() {
        return Err(Error::Shape(format!(
            "reference has {} components for {} bands",
            reference.len(),
            before.bands()
        )));
    }
    let (n, bands) = (before.pixel_count(), before.bands());
    let (b, a) = (before.data(), after.data());
    let r = reference.components();
    let joint = RasterImage::joint_valid(before, after);
    let out: Vec<(f32, bool)> = (0..n)
        .into_par_iter()
        .map(|i| {
            if !joint[i] {
                return (0.0, false);
            }
            let (mut dot, mut norm2) = (0.0f64, 0.0f64);
            for k in 0..bands {
                let d = (a[k * n + i] - b[k * n + i]) as f64;
                dot += d * r[k];
                norm2 += d * d;
            }
            let norm = norm2.sqrt();
            if norm < MIN_DIFF_NORM {
                return (0.0, false);
            }
            let theta = (dot / norm).clamp(-1.0, 1.0).acos() as f32;
            (theta.min(std::f32::consts::PI), true)
        })
        .collect();
    let (values, valid): (Vec<f32>, Vec<bool>) = out.into_iter().unzip();
    ScalarMap::with_valid(
        before.width(),
        before.height(),
        values,
        MapKind::AngleRadians,
        Some(valid),
    )
}

/// Binary C2VA map: ρ above its nearest-rank `percentile` over valid pixels.
///
/// Returns `(mask, ρ, θ)`; θ uses the default reference direction.
pub fn c2va_change_map(
    before: &RasterImage,
    after: &RasterImage,
    percentile: f64,
) -> Result<(ChangeMap, ScalarMap, ScalarMap)> {
    check_percentile(percentile)?;
    let magnitude = change_magnitude(before, after)?;
    let angle = phase_angle(before, after, &default_reference(before.bands())?)?;
    let t = nearest_rank(&mut magnitude.valid_values(), percentile)?;
    let mask = apply_threshold(&magnitude, t, &format!("c2va_p{}", fmt_num(percentile)))?;
    Ok((mask, magnitude, angle))
}
