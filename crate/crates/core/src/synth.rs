//! Synthetic before/after scenes with exact change masks, and mask metrics.
//!
//! The before image is a periodic Voronoi tiling of materials, each with a
//! smooth random reflectance spectrum over 400-2505 nm. The after image
//! applies the change blocks, a global gain, an optional haze offset and a
//! periodic translation. Both dates get independent Gaussian noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{roll, ChangeMap, RasterImage};

pub const WAVELENGTH_MIN_NM: f32 = 400.0;
pub const WAVELENGTH_MAX_NM: f32 = 2505.0;

const SPLINE_KNOTS: usize = 8;
const SITES_PER_MATERIAL: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChangeMode {
    /// Adds an offset spectrum to whatever is underneath.
    SpectralShift,
    /// Replaces the block with a new material.
    MaterialSwap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChangeBlock {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
    pub mode: ChangeMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub bands: usize,
    pub n_materials: usize,
    pub change_blocks: Vec<ChangeBlock>,
    pub noise_sigma: f32,
    pub illumination_gain: f32,
    /// Added to every band of the after image before noise.
    pub haze_offset: f32,
    pub shift_px: (i64, i64),
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            width: 128,
            height: 128,
            bands: 32,
            n_materials: 6,
            change_blocks: Vec::new(),
            noise_sigma: 0.0,
            illumination_gain: 1.0,
            haze_offset: 0.0,
            shift_px: (0, 0),
            seed: 0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 || self.bands == 0 {
            return Err(Error::Validation(
                "scene dimensions must be positive".into(),
            ));
        }
        if self.n_materials == 0 {
            return Err(Error::Validation("n_materials must be at least 1".into()));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Validation(format!(
                "noise_sigma {} < 0",
                self.noise_sigma
            )));
        }
        if !(self.illumination_gain > 0.0 && self.illumination_gain.is_finite()) {
            return Err(Error::Validation(format!(
                "illumination_gain {} must be > 0",
                self.illumination_gain
            )));
        }
        if !self.haze_offset.is_finite() {
            return Err(Error::Validation("haze_offset must be finite".into()));
        }
        for (i, b) in self.change_blocks.iter().enumerate() {
            if b.w == 0 || b.h == 0 || b.x + b.w > self.width || b.y + b.h > self.height {
                return Err(Error::Validation(format!(
                    "block {i} ({}, {}, {}x{}) outside {}x{} scene",
                    b.x, b.y, b.w, b.h, self.width, self.height
                )));
            }
        }
        Ok(())
    }

    /// Evenly spaced band centres over 400-2505 nm.
    pub fn wavelengths(&self) -> Vec<f32> {
        if self.bands == 1 {
            return vec![WAVELENGTH_MIN_NM];
        }
        let step = (WAVELENGTH_MAX_NM - WAVELENGTH_MIN_NM) as f64 / (self.bands - 1) as f64;
        (0..self.bands)
            .map(|k| (WAVELENGTH_MIN_NM as f64 + k as f64 * step) as f32)
            .collect()
    }

    fn truth_mask(&self) -> Vec<bool> {
        let mut m = vec![false; self.width * self.height];
        for b in &self.change_blocks {
            for y in b.y..b.y + b.h {
                m[y * self.width + b.x..y * self.width + b.x + b.w].fill(true);
            }
        }
        m
    }
}

/// Independent random streams, one per scene component.
fn stream(seed: u64, component: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(component);
    rng
}

/// Catmull-Rom interpolation of evenly spaced knots sampled at `n` points.
fn spline(knots: &[f64], n: usize) -> Vec<f32> {
    let m = knots.len();
    let at = |i: isize| knots[i.clamp(0, m as isize - 1) as usize];
    (0..n)
        .map(|k| {
            let s = if n == 1 {
                0.0
            } else {
                k as f64 * (m - 1) as f64 / (n - 1) as f64
            };
            let i = (s.floor() as isize).min(m as isize - 2);
            let t = s - i as f64;
            let (p0, p1, p2, p3) = (at(i - 1), at(i), at(i + 1), at(i + 2));
            let v = 0.5
                * (2.0 * p1
                    + (p2 - p0) * t
                    + (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3) * t * t
                    + (3.0 * p1 - p0 - 3.0 * p2 + p3) * t * t * t);
            v as f32
        })
        .collect()
}

fn random_spectrum(rng: &mut ChaCha8Rng, bands: usize, lo: f64, hi: f64) -> Vec<f32> {
    let knots: Vec<f64> = (0..SPLINE_KNOTS).map(|_| rng.gen_range(lo..hi)).collect();
    spline(&knots, bands)
}

/// Material index per pixel from a toroidal Voronoi tiling.
fn material_map(spec: &SceneSpec) -> Vec<usize> {
    let mut rng = stream(spec.seed, 1);
    let n_sites = spec.n_materials * SITES_PER_MATERIAL;
    let sites: Vec<(f64, f64, usize)> = (0..n_sites)
        .map(|i| {
            (
                rng.gen_range(0.0..spec.width as f64),
                rng.gen_range(0.0..spec.height as f64),
                i % spec.n_materials,
            )
        })
        .collect();
    let (w, h) = (spec.width as f64, spec.height as f64);
    let wrap = |d: f64, size: f64| {
        let d = d.abs();
        d.min(size - d)
    };
    let mut out = Vec::with_capacity(spec.width * spec.height);
    for y in 0..spec.height {
        for x in 0..spec.width {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let mut best = (f64::INFINITY, 0);
            for &(sx, sy, mat) in &sites {
                let (dx, dy) = (wrap(px - sx, w), wrap(py - sy, h));
                let d = dx * dx + dy * dy;
                if d < best.0 {
                    best = (d, mat);
                }
            }
            out.push(best.1);
        }
    }
    out
}

/// Noise-free before and after images (after not yet translated).
fn clean_pair(spec: &SceneSpec) -> (Vec<f32>, Vec<f32>) {
    let (n, b) = (spec.width * spec.height, spec.bands);
    let mut rng = stream(spec.seed, 2);
    let spectra: Vec<Vec<f32>> = (0..spec.n_materials)
        .map(|_| random_spectrum(&mut rng, b, 0.05, 0.6))
        .collect();
    let mats = material_map(spec);
    let mut before = vec![0.0f32; n * b];
    for (i, &m) in mats.iter().enumerate() {
        for k in 0..b {
            before[k * n + i] = spectra[m][k];
        }
    }

    let mut after = before.clone();
    let mut rng = stream(spec.seed, 3);
    for blk in &spec.change_blocks {
        let change = match blk.mode {
            ChangeMode::MaterialSwap => random_spectrum(&mut rng, b, 0.05, 0.6),
            ChangeMode::SpectralShift => {
                let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
                random_spectrum(&mut rng, b, 0.05, 0.2)
                    .into_iter()
                    .map(|v| sign * v)
                    .collect()
            }
        };
        for y in blk.y..blk.y + blk.h {
            for x in blk.x..blk.x + blk.w {
                let i = y * spec.width + x;
                for k in 0..b {
                    after[k * n + i] = match blk.mode {
                        ChangeMode::MaterialSwap => change[k],
                        ChangeMode::SpectralShift => before[k * n + i] + change[k],
                    };
                }
            }
        }
    }
    for v in &mut after {
        *v = *v * spec.illumination_gain + spec.haze_offset;
    }
    (before, after)
}

fn add_noise(data: &mut [f32], sigma: f32, rng: &mut ChaCha8Rng) {
    if sigma == 0.0 {
        return;
    }
    let normal = Normal::new(0.0f32, sigma).expect("sigma validated");
    for v in data {
        *v += normal.sample(rng);
    }
}

/// Mean absolute per-band difference between the noise-free dates over
/// the change blocks, before translation and ignoring gain/haze elsewhere.
///
/// Dividing by a desired signal-to-noise ratio gives a matching `noise_sigma`.
pub fn block_contrast(spec: &SceneSpec) -> Result<f64> {
    spec.validate()?;
    let (before, after) = clean_pair(spec);
    let truth = spec.truth_mask();
    let n = spec.width * spec.height;
    let (mut acc, mut count) = (0.0f64, 0usize);
    for (i, _) in truth.iter().enumerate().filter(|(_, &t)| t) {
        for k in 0..spec.bands {
            acc += (after[k * n + i] - before[k * n + i]).abs() as f64;
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::Validation("scene has no change blocks".into()));
    }
    Ok(acc / count as f64)
}

/// Builds `(before, after, truth)`; the truth mask is in the before frame.
pub fn generate_pair(spec: &SceneSpec) -> Result<(RasterImage, RasterImage, ChangeMap)> {
    spec.validate()?;
    let (w, h, b) = (spec.width, spec.height, spec.bands);
    let (mut before, after) = clean_pair(spec);
    let after = RasterImage::new(w, h, b, after)?;
    let mut after = roll(&after, spec.shift_px.0, spec.shift_px.1).into_data();
    add_noise(&mut before, spec.noise_sigma, &mut stream(spec.seed, 4));
    add_noise(&mut after, spec.noise_sigma, &mut stream(spec.seed, 5));

    let wl = spec.wavelengths();
    let before = RasterImage::new(w, h, b, before)?.with_wavelengths(wl.clone())?;
    let after = RasterImage::new(w, h, b, after)?.with_wavelengths(wl)?;
    let truth = ChangeMap::new(w, h, spec.truth_mask(), 0.5, "truth")?;
    Ok((before, after, truth))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub iou: f64,
    /// Percentage of valid pixels marked in the prediction.
    pub changed_percent: f64,
    /// Fraction of truly unchanged pixels marked as change.
    pub false_positive_rate: f64,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

/// Confusion counts over pixels valid in both maps.
///
/// Conventions for empty denominators: precision 1 (nothing predicted),
/// recall 1 (nothing to find), IoU 1 (both empty), false-positive rate 0.
pub fn evaluate(pred: &ChangeMap, truth: &ChangeMap) -> Result<DetectionMetrics> {
    if pred.width() != truth.width() || pred.height() != truth.height() {
        return Err(Error::Shape(format!(
            "prediction {}x{} vs truth {}x{}",
            pred.width(),
            pred.height(),
            truth.width(),
            truth.height()
        )));
    }
    let (mut tp, mut fp, mut fn_, mut tn) = (0usize, 0usize, 0usize, 0usize);
    for (i, (&p, &t)) in pred.mask().iter().zip(truth.mask()).enumerate() {
        if !pred.is_valid(i) || !truth.is_valid(i) {
            continue;
        }
        match (p, t) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    let ratio = |num: usize, den: usize, empty: f64| {
        if den == 0 {
            empty
        } else {
            num as f64 / den as f64
        }
    };
    let precision = ratio(tp, tp + fp, 1.0);
    let recall = ratio(tp, tp + fn_, 1.0);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(DetectionMetrics {
        precision,
        recall,
        f1,
        iou: ratio(tp, tp + fp + fn_, 1.0),
        changed_percent: pred.changed_percent(),
        false_positive_rate: ratio(fp, fp + tn, 0.0),
        tp,
        fp,
        fn_,
        tn,
    })
}
