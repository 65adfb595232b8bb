//! Per-cluster variance-based channel selection for feature differences.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::FeatureStack;
use crate::error::{Error, Result};

const MAX_ITERATIONS: usize = 50;
const CONVERGENCE_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectionParams {
    pub clusters_k: usize,
    /// Channels whose within-cluster variance exceeds this nearest-rank
    /// percentile are kept.
    pub keep_percentile: f64,
    /// Offsets the strided k-means initialisation.
    pub rng_seed: u64,
}

impl Default for SelectionParams {
    fn default() -> Self {
        Self {
            clusters_k: 4,
            keep_percentile: 90.0,
            rng_seed: 0,
        }
    }
}

impl SelectionParams {
    pub fn validate(&self) -> Result<()> {
        if self.clusters_k == 0 {
            return Err(Error::Config("clusters_k must be >= 1".into()));
        }
        crate::threshold::check_percentile(self.keep_percentile)
    }
}

/// Result of Lloyd iterations on pixel vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    pub labels: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub iterations: usize,
}

/// k-means over pixels, each pixel a point in channel space.
///
/// Initial centroids are the first pixel distinct from those already chosen
/// when scanning forward from `offset + j * (n / k)`, `offset = seed % (n / k)`.
/// Stops after 50 iterations or once no centroid moves by 1e-6 or more.
/// Assignment ties go to the lower cluster index; empty clusters keep their
/// previous centroid.
pub fn kmeans(stack: &FeatureStack, k: usize, seed: u64) -> Result<Clustering> {
    let n = stack.width * stack.height;
    let c = stack.channels();
    if k == 0 || k > n {
        return Err(Error::ClusteringDegeneracy(format!(
            "cannot form {k} clusters from {n} pixels"
        )));
    }
    // Pixel-major copy for cache-friendly distance evaluation.
    let mut points = vec![0.0f32; n * c];
    for ch in 0..c {
        for (i, &v) in stack.plane(ch).iter().enumerate() {
            points[i * c + ch] = v;
        }
    }
    let point = |i: usize| &points[i * c..(i + 1) * c];

    let stride = n / k;
    let offset = (seed % stride as u64) as usize;
    let mut chosen: Vec<usize> = Vec::with_capacity(k);
    for j in 0..k {
        let start = offset + j * stride;
        let pick = (0..n)
            .map(|s| (start + s) % n)
            .find(|&i| chosen.iter().all(|&q| point(q) != point(i)))
            .ok_or_else(|| {
                Error::ClusteringDegeneracy(format!("fewer than {k} distinct pixels"))
            })?;
        chosen.push(pick);
    }
    let mut centroids: Vec<Vec<f64>> = chosen
        .iter()
        .map(|&i| point(i).iter().map(|&v| v as f64).collect())
        .collect();

    let mut labels = vec![0usize; n];
    let mut iterations = 0;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        labels.par_iter_mut().enumerate().for_each(|(i, label)| {
            let p = point(i);
            let mut best = (0usize, f64::INFINITY);
            for (j, cen) in centroids.iter().enumerate() {
                let d: f64 = p
                    .iter()
                    .zip(cen)
                    .map(|(&a, &b)| {
                        let t = a as f64 - b;
                        t * t
                    })
                    .sum();
                if d < best.1 {
                    best = (j, d);
                }
            }
            *label = best.0;
        });

        let mut sums = vec![vec![0.0f64; c]; k];
        let mut counts = vec![0usize; k];
        for (i, &l) in labels.iter().enumerate() {
            counts[l] += 1;
            for (s, &v) in sums[l].iter_mut().zip(point(i)) {
                *s += v as f64;
            }
        }
        let mut moved = 0.0f64;
        for j in 0..k {
            if counts[j] == 0 {
                continue;
            }
            let inv = counts[j] as f64;
            let new: Vec<f64> = sums[j].iter().map(|s| s / inv).collect();
            let shift: f64 = new
                .iter()
                .zip(&centroids[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            moved = moved.max(shift);
            centroids[j] = new;
        }
        if moved < CONVERGENCE_TOL {
            break;
        }
    }
    Ok(Clustering {
        labels,
        centroids,
        iterations,
    })
}

/// Population variance of every channel within every cluster: `[cluster][channel]`.
/// Clusters with no pixels get an empty row.
pub fn cluster_channel_variances(
    stack: &FeatureStack,
    labels: &[usize],
    k: usize,
) -> Vec<Vec<f64>> {
    let c = stack.channels();
    let mut counts = vec![0usize; k];
    for &l in labels {
        counts[l] += 1;
    }
    let per_channel: Vec<Vec<f64>> = (0..c)
        .into_par_iter()
        .map(|ch| {
            let plane = stack.plane(ch);
            let mut sum = vec![0.0f64; k];
            for (&v, &l) in plane.iter().zip(labels) {
                sum[l] += v as f64;
            }
            let mean: Vec<f64> = (0..k)
                .map(|j| {
                    if counts[j] > 0 {
                        sum[j] / counts[j] as f64
                    } else {
                        0.0
                    }
                })
                .collect();
            let mut ss = vec![0.0f64; k];
            for (&v, &l) in plane.iter().zip(labels) {
                let d = v as f64 - mean[l];
                ss[l] += d * d;
            }
            (0..k)
                .map(|j| {
                    if counts[j] > 0 {
                        ss[j] / counts[j] as f64
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();
    (0..k)
        .map(|j| {
            if counts[j] == 0 {
                Vec::new()
            } else {
                per_channel.iter().map(|v| v[j]).collect()
            }
        })
        .collect()
}

/// Channels kept for one cluster: variance strictly above the nearest-rank
/// `q` percentile of that cluster's variances, plus the top-variance channel
/// (lowest index on ties) so at least one survives.
pub fn keep_for_cluster(variances: &[f64], q: f64) -> Vec<usize> {
    if variances.is_empty() {
        return Vec::new();
    }
    let mut sorted = variances.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = (q * sorted.len() as f64 / 100.0).ceil() as usize;
    let t = sorted[rank.clamp(1, sorted.len()) - 1];
    let top = variances
        .iter()
        .enumerate()
        .fold((0usize, f64::NEG_INFINITY), |best, (i, &v)| {
            if v > best.1 {
                (i, v)
            } else {
                best
            }
        })
        .0;
    variances
        .iter()
        .enumerate()
        .filter(|&(i, &v)| v > t || i == top)
        .map(|(i, _)| i)
        .collect()
}

/// Clusters the pixels of `delta`, then keeps the union over clusters of
/// each cluster's highest-variance channels, in original channel order.
///
/// When the stack has fewer distinct pixels than `clusters_k` (e.g. an
/// all-zero difference), the largest feasible cluster count is used.
pub fn select_features(delta: &FeatureStack, params: &SelectionParams) -> Result<FeatureStack> {
    params.validate()?;
    let mut k = params.clusters_k.min(delta.width * delta.height);
    let clustering = loop {
        match kmeans(delta, k, params.rng_seed) {
            Ok(c) => break c,
            Err(Error::ClusteringDegeneracy(why)) if k > 1 => {
                log::debug!(
                    "layer {}: {why}, retrying with k={}",
                    delta.layer_index,
                    k - 1
                );
                k -= 1;
            }
            Err(e) => return Err(e),
        }
    };
    let variances = cluster_channel_variances(delta, &clustering.labels, k);
    let mut keep = vec![false; delta.channels()];
    for row in &variances {
        for c in keep_for_cluster(row, params.keep_percentile) {
            keep[c] = true;
        }
    }
    let n = delta.width * delta.height;
    let mut channel_ids = Vec::new();
    let mut values = Vec::new();
    for (c, _) in keep.iter().enumerate().filter(|(_, &k)| k) {
        channel_ids.push(delta.channel_ids[c]);
        values.extend_from_slice(&delta.values[c * n..(c + 1) * n]);
    }
    Ok(FeatureStack {
        layer_index: delta.layer_index,
        width: delta.width,
        height: delta.height,
        channel_ids,
        values,
    })
}
