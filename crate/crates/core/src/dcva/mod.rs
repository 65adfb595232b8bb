//! Deep change vector analysis.
//!
//! Both dates go through the same convolutional extractor. For every
//! selected layer the feature difference `δ_l = F_l(before) − F_l(after)` is
//! upsampled to full resolution, pruned to the channels that vary most
//! within k-means pixel clusters, and concatenated into a per-pixel
//! hypervector `G`. Change is `‖G‖ > T` with `T` from Otsu or a local
//! adaptive rule.

mod extractor;
mod select;

pub use extractor::{
    builtin_extractor, Conv3x3, FeatureExtractor, FeatureStack, Layer, BUILTIN_DEPTH,
};
pub use select::{
    cluster_channel_variances, keep_for_cluster, kmeans, select_features, Clustering,
    SelectionParams,
};

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{ChangeMap, MapKind, RasterImage, ScalarMap};
use crate::threshold::{self, ThresholdSpec};

/// Per-layer feature difference at full input resolution.
pub type FeatureDelta = FeatureStack;

/// Ascending, 1-based layer indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "LayerSelectionRepr", into = "LayerSelectionRepr")]
pub struct LayerSelection {
    indices: Vec<usize>,
}

impl LayerSelection {
    pub fn new(indices: Vec<usize>) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::Config("layer selection is empty".into()));
        }
        if indices[0] == 0 {
            return Err(Error::Config("layer indices are 1-based".into()));
        }
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!(
                "layer indices must be strictly ascending: {indices:?}"
            )));
        }
        Ok(Self { indices })
    }

    /// `[2, 5]`
    pub fn preset1() -> Self {
        Self {
            indices: vec![2, 5],
        }
    }

    /// `[2, 5, 8, 10]`
    pub fn preset2() -> Self {
        Self {
            indices: vec![2, 5, 8, 10],
        }
    }

    /// `[2, 5, 8, 10, 11, 23]`
    pub fn preset3() -> Self {
        Self {
            indices: vec![2, 5, 8, 10, 11, 23],
        }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn max(&self) -> usize {
        *self.indices.last().expect("non-empty")
    }

    fn check_against(&self, ext: &FeatureExtractor) -> Result<()> {
        if self.max() > ext.len() {
            return Err(Error::Bounds(format!(
                "layer {} requested from a {}-layer extractor",
                self.max(),
                ext.len()
            )));
        }
        Ok(())
    }
}

impl fmt::Display for LayerSelection {
    /// Comma-separated indices, e.g. `2,5,8,10`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.indices.iter().map(usize::to_string).collect();
        f.write_str(&parts.join(","))
    }
}

impl FromStr for LayerSelection {
    type Err = Error;

    /// `preset1`, `preset2`, `preset3` or a comma-separated list.
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "preset1" => Ok(Self::preset1()),
            "preset2" => Ok(Self::preset2()),
            "preset3" => Ok(Self::preset3()),
            list => {
                let indices = list
                    .split(',')
                    .map(|t| {
                        t.trim()
                            .parse::<usize>()
                            .map_err(|_| Error::Config(format!("bad layer index {t:?}")))
                    })
                    .collect::<Result<Vec<_>>>()?;
                Self::new(indices)
            }
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum LayerSelectionRepr {
    Named(String),
    List(Vec<usize>),
}

impl TryFrom<LayerSelectionRepr> for LayerSelection {
    type Error = Error;

    fn try_from(r: LayerSelectionRepr) -> Result<Self> {
        match r {
            LayerSelectionRepr::Named(s) => s.parse(),
            LayerSelectionRepr::List(v) => Self::new(v),
        }
    }
}

impl From<LayerSelection> for LayerSelectionRepr {
    fn from(l: LayerSelection) -> Self {
        LayerSelectionRepr::List(l.indices)
    }
}

/// Four evenly spaced band indices (centres of four equal spectral slices),
/// or every band when there are fewer than four.
pub fn default_band_quadruple(bands: usize) -> Vec<usize> {
    if bands < 4 {
        return (0..bands).collect();
    }
    (0..4).map(|i| (2 * i + 1) * bands / 8).collect()
}

/// Runs the extractor once and returns one full-resolution stack per layer in `layers`.
pub fn extract_features(
    ext: &FeatureExtractor,
    img: &RasterImage,
    layers: &LayerSelection,
) -> Result<Vec<FeatureStack>> {
    layers.check_against(ext)?;
    let native = ext.run(img, layers.indices())?;
    Ok(native
        .iter()
        .map(|s| extractor::upsample(s, img.width(), img.height()))
        .collect())
}

/// `δ_l = F_l(before) − F_l(after)` for every selected layer.
pub fn feature_deltas(
    ext: &FeatureExtractor,
    before: &RasterImage,
    after: &RasterImage,
    layers: &LayerSelection,
) -> Result<Vec<FeatureDelta>> {
    before.check_same_shape(after)?;
    let fb = extract_features(ext, before, layers)?;
    let fa = extract_features(ext, after, layers)?;
    Ok(fb
        .into_iter()
        .zip(fa)
        .map(|(b, a)| FeatureStack {
            values: b.values.iter().zip(&a.values).map(|(x, y)| x - y).collect(),
            ..b
        })
        .collect())
}

/// Concatenated per-pixel feature differences, channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperVector {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f32>,
    /// `(layer index, original channel index)` for every channel of G.
    pub provenance: Vec<(usize, usize)>,
}

impl HyperVector {
    pub fn dims(&self) -> usize {
        self.provenance.len()
    }
}

/// Stacks the channels of every input in ascending layer order.
pub fn build_hypervector(selected: &[FeatureDelta]) -> Result<HyperVector> {
    let first = selected
        .first()
        .ok_or_else(|| Error::Validation("no feature stacks to concatenate".into()))?;
    let (w, h) = (first.width, first.height);
    if let Some(bad) = selected.iter().find(|s| s.width != w || s.height != h) {
        return Err(Error::Shape(format!(
            "layer {} is {}x{}, expected {w}x{h}",
            bad.layer_index, bad.width, bad.height
        )));
    }
    let mut order: Vec<&FeatureDelta> = selected.iter().collect();
    order.sort_by_key(|s| s.layer_index);
    let mut values = Vec::new();
    let mut provenance = Vec::new();
    for s in order {
        values.extend_from_slice(&s.values);
        provenance.extend(s.channel_ids.iter().map(|&c| (s.layer_index, c)));
    }
    if provenance.is_empty() {
        return Err(Error::Validation("hypervector has no channels".into()));
    }
    Ok(HyperVector {
        width: w,
        height: h,
        values,
        provenance,
    })
}

/// Per-pixel Euclidean norm of G (f64 accumulation).
pub fn hypervector_norm(g: &HyperVector) -> Result<ScalarMap> {
    let n = g.width * g.height;
    let d = g.dims();
    let values: Vec<f32> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut acc = 0.0f64;
            for c in 0..d {
                let v = g.values[c * n + i] as f64;
                acc += v * v;
            }
            acc.sqrt() as f32
        })
        .collect();
    ScalarMap::new(g.width, g.height, values, MapKind::HypervectorNorm)
}

/// Everything computed on the way to a DCVA mask.
#[derive(Debug, Clone)]
pub struct DcvaOutput {
    pub mask: ChangeMap,
    pub norm: ScalarMap,
    pub hypervector_dims: usize,
    pub provenance: Vec<(usize, usize)>,
}

/// Full DCVA: δ per layer → channel selection → G → ‖G‖ → threshold.
///
/// A constant ‖G‖ map (e.g. an unchanged pair) cannot be split by Otsu;
/// that case yields an empty mask carrying a warning instead of an error.
pub fn dcva_change_map(
    before: &RasterImage,
    after: &RasterImage,
    ext: &FeatureExtractor,
    layers: &LayerSelection,
    selection: &SelectionParams,
    thr: &ThresholdSpec,
) -> Result<(ChangeMap, ScalarMap)> {
    let out = dcva_detailed(before, after, ext, layers, selection, thr)?;
    Ok((out.mask, out.norm))
}

pub fn dcva_detailed(
    before: &RasterImage,
    after: &RasterImage,
    ext: &FeatureExtractor,
    layers: &LayerSelection,
    selection: &SelectionParams,
    thr: &ThresholdSpec,
) -> Result<DcvaOutput> {
    selection.validate()?;
    thr.validate()?;
    layers.check_against(ext)?;
    let deltas = feature_deltas(ext, before, after, layers)?;
    let selected = deltas
        .iter()
        .map(|d| select_features(d, selection))
        .collect::<Result<Vec<_>>>()?;
    let g = build_hypervector(&selected)?;
    let valid = RasterImage::joint_valid(before, after);
    let raw = hypervector_norm(&g)?;
    let norm = ScalarMap::with_valid(
        raw.width(),
        raw.height(),
        raw.values().to_vec(),
        MapKind::HypervectorNorm,
        Some(valid),
    )?;

    let mask = match *thr {
        ThresholdSpec::Otsu { bins } => match threshold::otsu_threshold(&norm, bins) {
            Ok(t) => threshold::apply_threshold(&norm, t, "dcva_otsu")?,
            Err(Error::DegenerateDistribution(why)) => {
                let level = norm.valid_values().first().copied().unwrap_or(0.0) as f64;
                log::warn!("dcva_otsu: {why}; reporting no change");
                ChangeMap::new(
                    norm.width(),
                    norm.height(),
                    vec![false; g.width * g.height],
                    level,
                    "dcva_otsu",
                )?
                .with_valid(norm.validity().map(<[bool]>::to_vec))?
                .with_warning(format!("degenerate norm distribution: {why}"))
            }
            Err(e) => return Err(e),
        },
        ThresholdSpec::Adaptive { radius, k } => {
            let m = threshold::adaptive_threshold_map(&norm, radius, k)?;
            retag(m, format!("dcva_ada(L={layers})"))?
        }
        ThresholdSpec::Percentile { .. } => threshold::threshold_map(&norm, thr, "dcva")?,
    };
    Ok(DcvaOutput {
        mask,
        norm,
        hypervector_dims: g.dims(),
        provenance: g.provenance,
    })
}

fn retag(m: ChangeMap, tag: String) -> Result<ChangeMap> {
    let valid = m.validity().map(<[bool]>::to_vec);
    ChangeMap::new(
        m.width(),
        m.height(),
        m.mask().to_vec(),
        m.threshold_used(),
        tag,
    )?
    .with_valid(valid)
}
