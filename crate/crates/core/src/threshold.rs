//! Binarization of scalar maps: nearest-rank percentile, Otsu, and
//! Niblack-style local adaptive thresholds.
//!
//! Every method marks a pixel as change only when its value is strictly
//! greater than the threshold, and nodata pixels are never marked.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{ChangeMap, ScalarMap};

pub const DEFAULT_OTSU_BINS: usize = 256;
pub const DEFAULT_ADAPTIVE_RADIUS: usize = 16;
pub const DEFAULT_ADAPTIVE_K: f64 = 0.5;

fn default_bins() -> usize {
    DEFAULT_OTSU_BINS
}
fn default_radius() -> usize {
    DEFAULT_ADAPTIVE_RADIUS
}
fn default_k() -> f64 {
    DEFAULT_ADAPTIVE_K
}
fn default_p() -> f64 {
    90.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum ThresholdSpec {
    Percentile {
        #[serde(default = "default_p")]
        p: f64,
    },
    Otsu {
        #[serde(default = "default_bins")]
        bins: usize,
    },
    Adaptive {
        #[serde(default = "default_radius")]
        radius: usize,
        #[serde(default = "default_k")]
        k: f64,
    },
}

impl ThresholdSpec {
    pub fn percentile(p: f64) -> Self {
        ThresholdSpec::Percentile { p }
    }

    pub fn otsu() -> Self {
        ThresholdSpec::Otsu {
            bins: DEFAULT_OTSU_BINS,
        }
    }

    pub fn adaptive() -> Self {
        ThresholdSpec::Adaptive {
            radius: DEFAULT_ADAPTIVE_RADIUS,
            k: DEFAULT_ADAPTIVE_K,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            ThresholdSpec::Percentile { p } => check_percentile(p),
            ThresholdSpec::Otsu { bins } if bins < 2 => Err(Error::Config(format!(
                "otsu needs at least 2 bins, got {bins}"
            ))),
            ThresholdSpec::Adaptive { radius: 0, .. } => {
                Err(Error::Config("adaptive window radius must be >= 1".into()))
            }
            ThresholdSpec::Adaptive { k, .. } if k.is_nan() => {
                Err(Error::Config("adaptive k must be a number".into()))
            }
            _ => Ok(()),
        }
    }
}

pub(crate) fn check_percentile(p: f64) -> Result<()> {
    if p > 0.0 && p < 100.0 {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "percentile must lie in (0, 100), got {p}"
        )))
    }
}

/// Nearest-rank percentile: the ascending-sorted value at index
/// `ceil(p/100 * n) - 1` (clamped to the slice). Reorders `values`.
pub fn nearest_rank(values: &mut [f32], p: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyStatistics);
    }
    let n = values.len();
    let rank = (p * n as f64 / 100.0).ceil() as usize;
    let idx = rank.clamp(1, n) - 1;
    let (_, v, _) = values.select_nth_unstable_by(idx, f32::total_cmp);
    Ok(*v as f64)
}

pub fn percentile_threshold(values: &ScalarMap, p: f64) -> Result<f64> {
    check_percentile(p)?;
    nearest_rank(&mut values.valid_values(), p)
}

/// Equal-width histogram used by Otsu's method.
///
/// A value `v` falls in bin `floor((v - min) / (max - min) * bins)`, with the
/// maximum clamped into the last bin. Edge `j` (1 ≤ j < bins) sits at
/// `min + j * (max - min) / bins`.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub min: f64,
    pub max: f64,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn build(values: &[f32], bins: usize) -> Result<Self> {
        if bins < 2 {
            return Err(Error::Config(format!(
                "otsu needs at least 2 bins, got {bins}"
            )));
        }
        if values.is_empty() {
            return Err(Error::EmptyStatistics);
        }
        let (min, max) = values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v as f64), hi.max(v as f64))
            });
        if min == max {
            return Err(Error::DegenerateDistribution(format!(
                "all {} values equal {min}",
                values.len()
            )));
        }
        let mut counts = vec![0u64; bins];
        let span = max - min;
        for &v in values {
            let b = (((v as f64 - min) / span) * bins as f64).floor() as usize;
            counts[b.min(bins - 1)] += 1;
        }
        Ok(Self { min, max, counts })
    }

    pub fn edge(&self, j: usize) -> f64 {
        self.min + j as f64 * (self.max - self.min) / self.counts.len() as f64
    }
}

/// Between-class variance `ω0·ω1·(μ0 − μ1)²` for a split into bins
/// `[0, j)` and `[j, bins)`, with class means in bin-index units.
///
/// All sums are integers, so the value is independent of summation order.
pub fn between_class_variance(n0: u64, s0: u64, n1: u64, s1: u64) -> f64 {
    if n0 == 0 || n1 == 0 {
        return 0.0;
    }
    let total = (n0 + n1) as f64;
    let (w0, w1) = (n0 as f64 / total, n1 as f64 / total);
    let d = s0 as f64 / n0 as f64 - s1 as f64 / n1 as f64;
    w0 * w1 * d * d
}

/// Otsu split of a histogram: the edge index maximising between-class
/// variance, lowest index on ties.
///
/// Candidates are compared exactly: `N²·σ²_B = (s0·n1 − s1·n0)² / (n0·n1)`
/// is a ratio of integers, and ratios are ordered by 256-bit cross products.
pub fn otsu_split(hist: &Histogram) -> usize {
    let total_n: u64 = hist.counts.iter().sum();
    let total_s: u64 = hist
        .counts
        .iter()
        .enumerate()
        .map(|(i, &c)| i as u64 * c)
        .sum();
    let (mut n0, mut s0) = (0u64, 0u64);
    let mut best = (1usize, 0u128, 1u128);
    for j in 1..hist.counts.len() {
        n0 += hist.counts[j - 1];
        s0 += (j as u64 - 1) * hist.counts[j - 1];
        let (n1, s1) = (total_n - n0, total_s - s0);
        if n0 == 0 || n1 == 0 {
            continue;
        }
        let d = (s0 as i128 * n1 as i128 - s1 as i128 * n0 as i128).unsigned_abs();
        let (num, den) = (d * d, n0 as u128 * n1 as u128);
        if wide_mul(num, best.2) > wide_mul(best.1, den) {
            best = (j, num, den);
        }
    }
    best.0
}

/// Full 256-bit product as (high, low) words.
fn wide_mul(a: u128, b: u128) -> (u128, u128) {
    const MASK: u128 = u64::MAX as u128;
    let (a_hi, a_lo) = (a >> 64, a & MASK);
    let (b_hi, b_lo) = (b >> 64, b & MASK);
    let ll = a_lo * b_lo;
    let lh = a_lo * b_hi;
    let hl = a_hi * b_lo;
    let hh = a_hi * b_hi;
    let mid = (ll >> 64) + (lh & MASK) + (hl & MASK);
    let lo = (ll & MASK) | (mid << 64);
    let hi = hh + (lh >> 64) + (hl >> 64) + (mid >> 64);
    (hi, lo)
}

pub fn otsu_threshold(values: &ScalarMap, bins: usize) -> Result<f64> {
    otsu_threshold_values(&values.valid_values(), bins)
}

pub fn otsu_threshold_values(values: &[f32], bins: usize) -> Result<f64> {
    let hist = Histogram::build(values, bins)?;
    Ok(hist.edge(otsu_split(&hist)))
}

/// Sarle's bimodality coefficient `(γ² + 1) / (κ + 3(n−1)²/((n−2)(n−3)))`
/// with sample skewness γ and excess kurtosis κ. Values above 5/9 hint at a
/// bimodal histogram. `None` for fewer than 4 values or zero variance.
pub fn bimodality_coefficient(values: &[f32]) -> Option<f64> {
    let n = values.len();
    if n < 4 {
        return None;
    }
    let nf = n as f64;
    let mean = values.iter().map(|&v| v as f64).sum::<f64>() / nf;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for &v in values {
        let d = v as f64 - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    m2 /= nf;
    m3 /= nf;
    m4 /= nf;
    if m2 <= 0.0 {
        return None;
    }
    let g1 = m3 / m2.powf(1.5);
    let g2 = m4 / (m2 * m2) - 3.0;
    // Bias-corrected sample skewness and excess kurtosis.
    let skew = g1 * (nf * (nf - 1.0)).sqrt() / (nf - 2.0);
    let kurt = ((nf + 1.0) * g2 + 6.0) * (nf - 1.0) / ((nf - 2.0) * (nf - 3.0));
    let denom = kurt + 3.0 * (nf - 1.0).powi(2) / ((nf - 2.0) * (nf - 3.0));
    Some((skew * skew + 1.0) / denom)
}

/// `mask = value > t`; nodata pixels stay unmarked.
pub fn apply_threshold(values: &ScalarMap, t: f64, tag: &str) -> Result<ChangeMap> {
    let mask = values
        .values()
        .iter()
        .enumerate()
        .map(|(i, &v)| values.is_valid(i) && v as f64 > t)
        .collect();
    ChangeMap::new(values.width(), values.height(), mask, t, tag)?
        .with_valid(values.validity().map(<[bool]>::to_vec))
}

/// Per-pixel threshold `μ + k·σ` over the valid pixels of the clamped
/// `(2r+1)²` window around each pixel.
///
/// Window statistics come from f64 prefix sums of values offset by the
/// global minimum, so a constant field yields exactly σ = 0. The recorded
/// `threshold_used` is the mean of the per-pixel thresholds.
pub fn adaptive_threshold_map(values: &ScalarMap, radius: usize, k: f64) -> Result<ChangeMap> {
    if radius == 0 {
        return Err(Error::Config("adaptive window radius must be >= 1".into()));
    }
    let (w, h) = (values.width(), values.height());
    let vals = values.values();
    let offset = values
        .valid_values()
        .iter()
        .fold(f64::INFINITY, |m, &v| m.min(v as f64));
    let tag = format!("adaptive(r={radius},k={k})");
    if !offset.is_finite() {
        // No valid pixel at all.
        return ChangeMap::new(w, h, vec![false; w * h], 0.0, tag)?
            .with_valid(values.validity().map(<[bool]>::to_vec));
    }

    let stride = w + 1;
    let mut s1 = vec![0.0f64; stride * (h + 1)];
    let mut s2 = vec![0.0f64; stride * (h + 1)];
    let mut cnt = vec![0u64; stride * (h + 1)];
    for y in 0..h {
        let (mut r1, mut r2, mut rc) = (0.0, 0.0, 0u64);
        for x in 0..w {
            let i = y * w + x;
            if values.is_valid(i) {
                let d = vals[i] as f64 - offset;
                r1 += d;
                r2 += d * d;
                rc += 1;
            }
            let o = (y + 1) * stride + x + 1;
            s1[o] = s1[o - stride] + r1;
            s2[o] = s2[o - stride] + r2;
            cnt[o] = cnt[o - stride] + rc;
        }
    }
    let rect = |t: &[f64], x0: usize, y0: usize, x1: usize, y1: usize| {
        t[y1 * stride + x1] - t[y0 * stride + x1] - t[y1 * stride + x0] + t[y0 * stride + x0]
    };

    let mut mask = vec![false; w * h];
    let mut t_sum = 0.0f64;
    let mut t_n = 0usize;
    for y in 0..h {
        let (y0, y1) = (y.saturating_sub(radius), (y + radius + 1).min(h));
        for x in 0..w {
            let i = y * w + x;
            if !values.is_valid(i) {
                continue;
            }
            let (x0, x1) = (x.saturating_sub(radius), (x + radius + 1).min(w));
            let n = (cnt[y1 * stride + x1] + cnt[y0 * stride + x0]
                - cnt[y0 * stride + x1]
                - cnt[y1 * stride + x0]) as f64;
            let mean = rect(&s1, x0, y0, x1, y1) / n;
            let var = (rect(&s2, x0, y0, x1, y1) / n - mean * mean).max(0.0);
            let sigma = var.sqrt();
            // Avoid ∞·0 when k is infinite and the window is flat.
            let t = if sigma == 0.0 { mean } else { mean + k * sigma };
            mask[i] = vals[i] as f64 - offset > t;
            if t.is_finite() {
                t_sum += t + offset;
                t_n += 1;
            }
        }
    }
    let t_used = if t_n == 0 { offset } else { t_sum / t_n as f64 };
    ChangeMap::new(w, h, mask, t_used, tag)?.with_valid(values.validity().map(<[bool]>::to_vec))
}

/// Dispatches on `spec`; the tag is `<prefix>_p<p>`, `<prefix>_otsu` or
/// `<prefix>_ada(r,k)`.
pub fn threshold_map(values: &ScalarMap, spec: &ThresholdSpec, prefix: &str) -> Result<ChangeMap> {
    spec.validate()?;
    match *spec {
        ThresholdSpec::Percentile { p } => {
            let t = percentile_threshold(values, p)?;
            apply_threshold(values, t, &format!("{prefix}_p{}", fmt_num(p)))
        }
        ThresholdSpec::Otsu { bins } => {
            let t = otsu_threshold(values, bins)?;
            apply_threshold(values, t, &format!("{prefix}_otsu"))
        }
        ThresholdSpec::Adaptive { radius, k } => adaptive_threshold_map(values, radius, k),
    }
}

pub(crate) fn fmt_num(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::MapKind;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn map(values: Vec<f32>) -> ScalarMap {
        let n = values.len();
        ScalarMap::new(n, 1, values, MapKind::Magnitude).unwrap()
    }

    fn grid(w: usize, h: usize, values: Vec<f32>) -> ScalarMap {
        ScalarMap::new(w, h, values, MapKind::Magnitude).unwrap()
    }

    #[test]
    fn wide_products() {
        assert_eq!(wide_mul(3, 5), (0, 15));
        assert_eq!(wide_mul(u128::MAX, 1), (0, u128::MAX));
        assert_eq!(wide_mul(1 << 64, 1 << 64), (1, 0));
        assert_eq!(wide_mul(u128::MAX, u128::MAX), (u128::MAX - 1, 1));
        assert!(wide_mul(u128::MAX, 3) > wide_mul(u128::MAX, 2));
    }

    #[test]
    fn symmetric_split_prefers_lowest_edge() {
        // Two equal-variance optima; the lower edge wins.
        let mut h = Histogram {
            min: 0.0,
            max: 4.0,
            counts: vec![1, 0, 0, 1],
        };
        assert_eq!(otsu_split(&h), 1);
        h.counts = vec![2, 1, 1, 2];
        assert_eq!(otsu_split(&h), 2);
    }

    #[test]
    fn percentile_examples() {
        assert_eq!(percentile_threshold(&map(vec![5.0]), 90.0).unwrap(), 5.0);
        let m = map((1..=100).map(|v| v as f32).collect());
        assert_eq!(percentile_threshold(&m, 90.0).unwrap(), 90.0);
        assert_eq!(percentile_threshold(&m, 50.0).unwrap(), 50.0);
        assert!(percentile_threshold(&m, 100.0).is_err());
        assert!(percentile_threshold(&m, 0.0).is_err());
    }

    #[test]
    fn percentile_skips_nodata() {
        let m = ScalarMap::with_valid(
            3,
            1,
            vec![100.0, 1.0, 2.0],
            MapKind::Magnitude,
            Some(vec![false, true, true]),
        )
        .unwrap();
        assert_eq!(percentile_threshold(&m, 90.0).unwrap(), 2.0);
        let none =
            ScalarMap::with_valid(1, 1, vec![1.0], MapKind::Magnitude, Some(vec![false])).unwrap();
        assert!(matches!(
            percentile_threshold(&none, 50.0),
            Err(Error::EmptyStatistics)
        ));
    }

    #[test]
    fn otsu_symmetric_bimodal() {
        let m = map(vec![0.0, 0.0, 0.0, 10.0, 10.0, 10.0]);
        let t = otsu_threshold(&m, 256).unwrap();
        assert!(t > 0.0 && t < 10.0);
        let cm = apply_threshold(&m, t, "otsu").unwrap();
        assert_eq!(cm.mask(), &[false, false, false, true, true, true]);
    }

    #[test]
    fn otsu_constant_is_degenerate() {
        assert!(matches!(
            otsu_threshold(&map(vec![2.0; 10]), 256),
            Err(Error::DegenerateDistribution(_))
        ));
        assert!(otsu_threshold(&map(vec![1.0, 2.0]), 1).is_err());
    }

    #[test]
    fn otsu_separates_two_gaussians() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (a, b) = (
            Normal::new(10.0, 1.0).unwrap(),
            Normal::new(30.0, 1.0).unwrap(),
        );
        let mut vals = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..1000 {
            let second = rng.gen_bool(0.5);
            let v: f64 = if second {
                b.sample(&mut rng)
            } else {
                a.sample(&mut rng)
            };
            vals.push(v as f32);
            labels.push(second);
        }
        let t = otsu_threshold_values(&vals, 256).unwrap();
        let wrong = vals
            .iter()
            .zip(&labels)
            .filter(|(&v, &l)| ((v as f64) > t) != l)
            .count();
        assert!(wrong <= 10, "{wrong} misassigned at t={t}");
    }

    #[test]
    fn otsu_ties_go_low() {
        // Two far-apart spikes: every interior edge scores identically.
        let hist = Histogram::build(&[0.0, 1.0], 8).unwrap();
        assert_eq!(otsu_split(&hist), 1);
    }

    #[test]
    fn bimodality_of_two_spikes_exceeds_uniform_cut() {
        let mut v = vec![0.0f32; 50];
        v.extend(vec![1.0f32; 50]);
        assert!(bimodality_coefficient(&v).unwrap() > 5.0 / 9.0);
        let normalish: Vec<f32> = (0..1000).map(|i| ((i as f32) * 0.618).fract()).collect();
        assert!(bimodality_coefficient(&normalish).unwrap() > 0.0);
        assert!(bimodality_coefficient(&[1.0, 1.0, 1.0, 1.0]).is_none());
    }

    #[test]
    fn apply_threshold_examples() {
        let m = map(vec![1.0, 2.0, 3.0]);
        assert_eq!(
            apply_threshold(&m, 2.0, "t").unwrap().mask(),
            &[false, false, true]
        );
        assert_eq!(apply_threshold(&m, 3.0, "t").unwrap().changed_count(), 0);
        assert_eq!(apply_threshold(&m, 0.0, "t").unwrap().changed_count(), 3);
        assert!(apply_threshold(&m, f64::NAN, "t").is_err());
    }

    #[test]
    fn adaptive_constant_field_is_empty() {
        for c in [0.0f32, 0.1, 3.7, 1e6] {
            let cm = adaptive_threshold_map(&grid(9, 7, vec![c; 63]), 2, 0.5).unwrap();
            assert_eq!(cm.changed_count(), 0);
        }
    }

    #[test]
    fn adaptive_single_bright_pixel() {
        let mut v = vec![0.0f32; 11 * 11];
        v[5 * 11 + 5] = 100.0;
        let cm = adaptive_threshold_map(&grid(11, 11, v), 2, 0.5).unwrap();
        assert_eq!(cm.changed_count(), 1);
        assert!(cm.mask()[5 * 11 + 5]);
        assert_eq!(cm.method_tag(), "adaptive(r=2,k=0.5)");
    }

    #[test]
    fn adaptive_infinite_k_marks_nothing() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let v: Vec<f32> = (0..400).map(|_| rng.gen_range(0.0..10.0)).collect();
        let m = grid(20, 20, v);
        assert_eq!(
            adaptive_threshold_map(&m, 3, f64::INFINITY)
                .unwrap()
                .changed_count(),
            0
        );
        assert_eq!(
            adaptive_threshold_map(&m, 3, 1e12).unwrap().changed_count(),
            0
        );
    }

    #[test]
    fn adaptive_matches_direct_window_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (w, h, r, k) = (13usize, 9usize, 2usize, 0.7f64);
        let v: Vec<f32> = (0..w * h).map(|_| rng.gen_range(0.0..5.0)).collect();
        let cm = adaptive_threshold_map(&grid(w, h, v.clone()), r, k).unwrap();
        for y in 0..h {
            for x in 0..w {
                let mut win = Vec::new();
                for yy in y.saturating_sub(r)..(y + r + 1).min(h) {
                    for xx in x.saturating_sub(r)..(x + r + 1).min(w) {
                        win.push(v[yy * w + xx] as f64);
                    }
                }
                let mu = win.iter().sum::<f64>() / win.len() as f64;
                let var = win.iter().map(|a| (a - mu).powi(2)).sum::<f64>() / win.len() as f64;
                let t = mu + k * var.sqrt();
                let val = v[y * w + x] as f64;
                // Skip razor-thin margins where rounding could decide.
                if (val - t).abs() > 1e-9 {
                    assert_eq!(cm.mask()[y * w + x], val > t, "pixel ({x},{y})");
                }
            }
        }
    }

    #[test]
    fn threshold_spec_serde_and_validation() {
        let s: ThresholdSpec = serde_json::from_str(r#"{"method":"otsu"}"#).unwrap();
        assert_eq!(s, ThresholdSpec::otsu());
        let s: ThresholdSpec = serde_json::from_str(r#"{"method":"adaptive","k":1.5}"#).unwrap();
        assert_eq!(s, ThresholdSpec::Adaptive { radius: 16, k: 1.5 });
        assert!(ThresholdSpec::Otsu { bins: 1 }.validate().is_err());
        assert!(ThresholdSpec::Adaptive { radius: 0, k: 0.5 }
            .validate()
            .is_err());
        assert!(ThresholdSpec::percentile(100.0).validate().is_err());
    }

    proptest! {
        #[test]
        fn threshold_monotone(
            vals in proptest::collection::vec(0.0f32..100.0, 1..60),
            t1 in 0.0f64..100.0,
            dt in 0.0f64..50.0,
        ) {
            let m = map(vals);
            let lo = apply_threshold(&m, t1, "a").unwrap();
            let hi = apply_threshold(&m, t1 + dt, "b").unwrap();
            for (h, l) in hi.mask().iter().zip(lo.mask()) {
                prop_assert!(!h || *l);
            }
        }

        #[test]
        fn percentile_marks_exact_count_for_distinct(
            n in 1usize..400,
            p in 1u32..100,
            seed in any::<u64>(),
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut vals: Vec<f32> = (0..n).map(|i| i as f32).collect();
            for i in (1..n).rev() {
                vals.swap(i, rng.gen_range(0..=i));
            }
            let m = map(vals);
            let t = percentile_threshold(&m, p as f64).unwrap();
            let marked = apply_threshold(&m, t, "p").unwrap().changed_count();
            prop_assert_eq!(marked, n * (100 - p as usize) / 100);
        }

        #[test]
        fn otsu_shift_invariant_within_a_bin(
            vals in proptest::collection::vec(0.0f32..100.0, 2..200),
            c in -50.0f32..50.0,
        ) {
            let hist = match Histogram::build(&vals, 64) {
                Ok(h) => h,
                Err(_) => return Ok(()),
            };
            let width = (hist.max - hist.min) / 64.0;
            let shifted: Vec<f32> = vals.iter().map(|v| v + c).collect();
            let t0 = otsu_threshold_values(&vals, 64).unwrap();
            if let Ok(t1) = otsu_threshold_values(&shifted, 64) {
                prop_assert!((t1 - c as f64 - t0).abs() <= width * 1.0001 + 1e-4);
            }
        }
    }
}
