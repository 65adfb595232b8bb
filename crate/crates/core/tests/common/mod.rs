//! Reference implementations used as test oracles. Deliberately naive.
#![allow(dead_code)]

use hycd::dcva::builtin_extractor;
use hycd::synth::{block_contrast, generate_pair, ChangeBlock, ChangeMode, SceneSpec};
use hycd::{ChangeMap, RasterImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_image(seed: u64, w: usize, h: usize, b: usize) -> RasterImage {
    let mut r = rng(seed);
    RasterImage::new(
        w,
        h,
        b,
        (0..w * h * b).map(|_| r.gen_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

/// Zero-padded 3×3 cross-correlation, channel-major in and out.
pub fn naive_conv(
    input: &[f32],
    w: usize,
    h: usize,
    in_ch: usize,
    out_ch: usize,
    weights: &[f32],
    bias: &[f32],
    rectify: bool,
) -> Vec<f64> {
    let mut out = vec![0.0f64; out_ch * w * h];
    for o in 0..out_ch {
        for y in 0..h {
            for x in 0..w {
                let mut acc = bias[o] as f64;
                for i in 0..in_ch {
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let sx = x as i64 + kx as i64 - 1;
                            let sy = y as i64 + ky as i64 - 1;
                            if sx < 0 || sy < 0 || sx >= w as i64 || sy >= h as i64 {
                                continue;
                            }
                            let v = input[i * w * h + sy as usize * w + sx as usize] as f64;
                            let wt = weights[((o * in_ch + i) * 3 + ky) * 3 + kx] as f64;
                            acc += wt * v;
                        }
                    }
                }
                out[o * w * h + y * w + x] = if rectify { acc.max(0.0) } else { acc };
            }
        }
    }
    out
}

/// ‖after − before‖ per pixel in f64.
pub fn naive_rho(before: &RasterImage, after: &RasterImage) -> Vec<f64> {
    let n = before.width() * before.height();
    (0..n)
        .map(|i| {
            let mut s = 0.0f64;
            for k in 0..before.bands() {
                let d = after.data()[k * n + i] as f64 - before.data()[k * n + i] as f64;
                s += d * d;
            }
            s.sqrt()
        })
        .collect()
}

/// Nearest-rank percentile by full sort.
pub fn sorted_percentile(values: &[f32], p: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    let rank = ((p / 100.0) * n as f64).ceil() as usize;
    v[rank.max(1).min(n) - 1] as f64
}

/// Exhaustive Otsu over all interior edges of a `bins`-bin histogram built
/// with `floor((v − min)/(max − min)·bins)` (max clamped into the last
/// bin). Between-class variances are compared as exact rationals.
pub fn brute_otsu(values: &[f32], bins: usize) -> f64 {
    let min = values
        .iter()
        .map(|&v| v as f64)
        .fold(f64::INFINITY, f64::min);
    let max = values
        .iter()
        .map(|&v| v as f64)
        .fold(f64::NEG_INFINITY, f64::max);
    let idx: Vec<usize> = values
        .iter()
        .map(|&v| (((v as f64 - min) / (max - min) * bins as f64).floor() as usize).min(bins - 1))
        .collect();
    // N²·σ²_B = (s0·n1 − s1·n0)² / (n0·n1), compared via num·den' vs num'·den.
    let mut best: Option<(usize, u128, u128)> = None;
    for j in 1..bins {
        let (mut n0, mut s0, mut n1, mut s1) = (0u128, 0u128, 0u128, 0u128);
        for &b in &idx {
            if b < j {
                n0 += 1;
                s0 += b as u128;
            } else {
                n1 += 1;
                s1 += b as u128;
            }
        }
        let (num, den) = if n0 == 0 || n1 == 0 {
            (0, 1)
        } else {
            let d = (s0 * n1).abs_diff(s1 * n0);
            (d * d, n0 * n1)
        };
        let better = match best {
            None => true,
            Some((_, bn, bd)) => num * bd > bn * den,
        };
        if better {
            best = Some((j, num, den));
        }
    }
    let j = best.unwrap().0;
    min + j as f64 * (max - min) / bins as f64
}

#[derive(Debug, PartialEq)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

pub fn confusion(pred: &[bool], truth: &[bool]) -> Counts {
    let mut c = Counts {
        tp: 0,
        fp: 0,
        fn_: 0,
        tn: 0,
    };
    for i in 0..pred.len() {
        if pred[i] && truth[i] {
            c.tp += 1;
        } else if pred[i] {
            c.fp += 1;
        } else if truth[i] {
            c.fn_ += 1;
        } else {
            c.tn += 1;
        }
    }
    c
}

/// Smooth periodic texture: uniform noise blurred by repeated wrapped box filters.
pub fn periodic_texture(w: usize, h: usize, seed: u64) -> Vec<f32> {
    let mut r = rng(seed);
    let mut cur: Vec<f64> = (0..w * h).map(|_| r.gen_range(-1.0..1.0)).collect();
    let radius = 2i64;
    for _ in 0..3 {
        let mut tmp = vec![0.0; w * h];
        for y in 0..h {
            for x in 0..w {
                let s: f64 = (-radius..=radius)
                    .map(|d| cur[y * w + (x as i64 + d).rem_euclid(w as i64) as usize])
                    .sum();
                tmp[y * w + x] = s;
            }
        }
        for y in 0..h {
            for x in 0..w {
                let s: f64 = (-radius..=radius)
                    .map(|d| tmp[(y as i64 + d).rem_euclid(h as i64) as usize * w + x])
                    .sum();
                cur[y * w + x] = s / 25.0;
            }
        }
    }
    let peak = cur.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    cur.iter().map(|v| (v / peak) as f32).collect()
}

/// `img` sampled at `(x − dx, y − dy)` with periodic wrap, bilinear for fractional shifts.
pub fn periodic_shift(data: &[f32], w: usize, h: usize, dx: f64, dy: f64) -> Vec<f32> {
    let at = |x: i64, y: i64| {
        data[(y.rem_euclid(h as i64) as usize) * w + x.rem_euclid(w as i64) as usize] as f64
    };
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let sx = x as f64 - dx;
            let sy = y as f64 - dy;
            let (x0, y0) = (sx.floor(), sy.floor());
            let (fx, fy) = (sx - x0, sy - y0);
            let (x0, y0) = (x0 as i64, y0 as i64);
            let v = at(x0, y0) * (1.0 - fx) * (1.0 - fy)
                + at(x0 + 1, y0) * fx * (1.0 - fy)
                + at(x0, y0 + 1) * (1.0 - fx) * fy
                + at(x0 + 1, y0 + 1) * fx * fy;
            out.push(v as f32);
        }
    }
    out
}

/// The 128×128 single-block detection scene; noise is one fifth of the
/// mean per-band change inside the block.
pub fn detection_scene(seed: u64) -> (RasterImage, RasterImage, ChangeMap) {
    let mut spec = SceneSpec {
        width: 128,
        height: 128,
        bands: 32,
        n_materials: 6,
        change_blocks: vec![ChangeBlock {
            x: 48,
            y: 40,
            w: 32,
            h: 32,
            mode: ChangeMode::MaterialSwap,
        }],
        seed,
        ..Default::default()
    };
    spec.noise_sigma = (block_contrast(&spec).unwrap() / 5.0) as f32;
    generate_pair(&spec).unwrap()
}

pub fn extractor(seed: u64) -> hycd::dcva::FeatureExtractor {
    builtin_extractor(seed, 4).unwrap()
}
