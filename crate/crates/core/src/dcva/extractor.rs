//! Convolutional feature extractor with fixed weights.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::RasterImage;

/// 3×3 "same" convolution with zero padding. Weights are laid out
/// `[out][in][ky][kx]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv3x3 {
    pub in_ch: usize,
    pub out_ch: usize,
    pub weights: Vec<f32>,
    pub bias: Vec<f32>,
    /// Apply `max(0, ·)` to the output.
    pub rectify: bool,
}

impl Conv3x3 {
    #[inline]
    pub fn weight(&self, o: usize, i: usize, ky: usize, kx: usize) -> f32 {
        self.weights[((o * self.in_ch + i) * 3 + ky) * 3 + kx]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv3x3(Conv3x3),
    /// 2×2 box average.
    Downsample2x,
    Relu,
}

/// Channel-major feature tensor captured at one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStack {
    /// 1-based layer index.
    pub layer_index: usize,
    pub width: usize,
    pub height: usize,
    /// Original channel index of each stored channel.
    pub channel_ids: Vec<usize>,
    pub values: Vec<f32>,
}

impl FeatureStack {
    pub fn channels(&self) -> usize {
        self.channel_ids.len()
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.width * self.height;
        &self.values[c * n..(c + 1) * n]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureExtractor {
    input_bands: usize,
    layers: Vec<Layer>,
}

impl FeatureExtractor {
    pub fn new(input_bands: usize, layers: Vec<Layer>) -> Result<Self> {
        if input_bands == 0 {
            return Err(Error::Validation(
                "extractor needs at least one input band".into(),
            ));
        }
        let mut ch = input_bands;
        for (i, layer) in layers.iter().enumerate() {
            if let Layer::Conv3x3(c) = layer {
                if c.in_ch != ch {
                    return Err(Error::Validation(format!(
                        "layer {} expects {} input channels, previous layer gives {ch}",
                        i + 1,
                        c.in_ch
                    )));
                }
                if c.weights.len() != c.out_ch * c.in_ch * 9 || c.bias.len() != c.out_ch {
                    return Err(Error::Validation(format!(
                        "layer {} weight/bias sizes do not match {}x{}x3x3",
                        i + 1,
                        c.out_ch,
                        c.in_ch
                    )));
                }
                if c.weights.iter().chain(&c.bias).any(|w| !w.is_finite()) {
                    return Err(Error::Validation(format!(
                        "layer {} has non-finite weights",
                        i + 1
                    )));
                }
                ch = c.out_ch;
            }
        }
        Ok(Self {
            input_bands,
            layers,
        })
    }

    pub fn input_bands(&self) -> usize {
        self.input_bands
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Number of layers N.
    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    /// Channels produced by layer `l` (1-based).
    pub fn channels_at(&self, l: usize) -> usize {
        self.layers[..l]
            .iter()
            .rev()
            .find_map(|layer| match layer {
                Layer::Conv3x3(c) => Some(c.out_ch),
                _ => None,
            })
            .unwrap_or(self.input_bands)
    }

    /// Cumulative spatial reduction after layer `l` (1-based).
    pub fn downsample_factor(&self, l: usize) -> usize {
        let steps = self.layers[..l]
            .iter()
            .filter(|layer| matches!(layer, Layer::Downsample2x))
            .count();
        1 << steps
    }

    /// Runs the stack once and captures activations after each listed layer
    /// at native (possibly reduced) resolution. `layers` must be ascending.
    pub fn run(&self, img: &RasterImage, layers: &[usize]) -> Result<Vec<FeatureStack>> {
        if img.bands() != self.input_bands {
            return Err(Error::Shape(format!(
                "extractor takes {} bands, image has {}",
                self.input_bands,
                img.bands()
            )));
        }
        let deepest = layers.iter().copied().max().unwrap_or(0);
        if deepest > self.layers.len() {
            return Err(Error::Bounds(format!(
                "layer {deepest} requested from a {}-layer extractor",
                self.layers.len()
            )));
        }
        let factor = self.downsample_factor(deepest);
        if !img.width().is_multiple_of(factor) || !img.height().is_multiple_of(factor) {
            return Err(Error::Padding(format!(
                "{}x{} is not divisible by {factor}; pad the input first",
                img.width(),
                img.height()
            )));
        }

        let mut t = Tensor {
            w: img.width(),
            h: img.height(),
            c: img.bands(),
            data: img.data().to_vec(),
        };
        let mut out = Vec::with_capacity(layers.len());
        for (idx, layer) in self.layers[..deepest].iter().enumerate() {
            t = match layer {
                Layer::Conv3x3(conv) => conv_forward(&t, conv),
                Layer::Downsample2x => downsample(&t),
                Layer::Relu => Tensor {
                    data: t.data.iter().map(|v| v.max(0.0)).collect(),
                    ..t
                },
            };
            if layers.contains(&(idx + 1)) {
                out.push(FeatureStack {
                    layer_index: idx + 1,
                    width: t.w,
                    height: t.h,
                    channel_ids: (0..t.c).collect(),
                    values: t.data.clone(),
                });
            }
        }
        Ok(out)
    }

    /// Writes `<path>` (f32 blob) and `<path>.json` (layer description).
    /// Each conv layer contributes its weights then its biases.
    pub fn save_weights(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut specs = Vec::with_capacity(self.layers.len());
        let mut blob = Vec::new();
        for layer in &self.layers {
            specs.push(match layer {
                Layer::Conv3x3(c) => {
                    for v in c.weights.iter().chain(&c.bias) {
                        blob.extend_from_slice(&v.to_le_bytes());
                    }
                    LayerSpec::Conv3x3 {
                        in_ch: c.in_ch,
                        out_ch: c.out_ch,
                        rectify: c.rectify,
                    }
                }
                Layer::Downsample2x => LayerSpec::Downsample2x,
                Layer::Relu => LayerSpec::Relu,
            });
        }
        let header = WeightsHeader {
            input_bands: self.input_bands,
            dtype: "f32".into(),
            byte_order: "little".into(),
            layers: specs,
        };
        fs::write(path, blob).map_err(|e| Error::io(path, e))?;
        let hpath = crate::raster::io_header_path(path);
        let text = serde_json::to_string_pretty(&header).expect("header serializes");
        fs::write(&hpath, text).map_err(|e| Error::io(hpath, e))
    }

    pub fn load_weights(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let hpath = crate::raster::io_header_path(path);
        let text = fs::read_to_string(&hpath)
            .map_err(|e| Error::Format(format!("cannot read {}: {e}", hpath.display())))?;
        let header: WeightsHeader = serde_json::from_str(&text)
            .map_err(|e| Error::Format(format!("garbled weights header: {e}")))?;
        if header.dtype != "f32" || header.byte_order != "little" {
            return Err(Error::Format("weights must be little-endian f32".into()));
        }
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let expected: usize = header
            .layers
            .iter()
            .map(|l| match l {
                LayerSpec::Conv3x3 { in_ch, out_ch, .. } => 4 * (out_ch * in_ch * 9 + out_ch),
                _ => 0,
            })
            .sum();
        if bytes.len() != expected {
            return Err(Error::Size {
                expected,
                found: bytes.len(),
            });
        }
        let mut floats = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]));
        let layers = header
            .layers
            .into_iter()
            .map(|spec| match spec {
                LayerSpec::Conv3x3 {
                    in_ch,
                    out_ch,
                    rectify,
                } => Layer::Conv3x3(Conv3x3 {
                    in_ch,
                    out_ch,
                    weights: floats.by_ref().take(out_ch * in_ch * 9).collect(),
                    bias: floats.by_ref().take(out_ch).collect(),
                    rectify,
                }),
                LayerSpec::Downsample2x => Layer::Downsample2x,
                LayerSpec::Relu => Layer::Relu,
            })
            .collect();
        Self::new(header.input_bands, layers)
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
enum LayerSpec {
    Conv3x3 {
        in_ch: usize,
        out_ch: usize,
        #[serde(default)]
        rectify: bool,
    },
    Downsample2x,
    Relu,
}

#[derive(Debug, Serialize, Deserialize)]
struct WeightsHeader {
    input_bands: usize,
    dtype: String,
    byte_order: String,
    layers: Vec<LayerSpec>,
}

pub const BUILTIN_DEPTH: usize = 24;
const BUILTIN_DOWNSAMPLE_AT: [usize; 3] = [6, 12, 18];
const BUILTIN_WIDTHS: [usize; 4] = [16, 32, 64, 128];

/// Deterministic 24-layer stand-in network: conv3×3+ReLU everywhere except
/// 2× downsampling at layers 6, 12 and 18; widths 16 → 32 → 64 → 128.
/// Weights are standard normal scaled by `1/√fan_in`, biases are zero.
pub fn builtin_extractor(seed: u64, input_bands: usize) -> Result<FeatureExtractor> {
    if input_bands == 0 {
        return Err(Error::Validation(
            "extractor needs at least one input band".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = Vec::with_capacity(BUILTIN_DEPTH);
    let mut in_ch = input_bands;
    let mut stage = 0;
    for l in 1..=BUILTIN_DEPTH {
        if BUILTIN_DOWNSAMPLE_AT.contains(&l) {
            layers.push(Layer::Downsample2x);
            stage += 1;
            continue;
        }
        let out_ch = BUILTIN_WIDTHS[stage];
        let scale = 1.0 / ((in_ch * 9) as f64).sqrt();
        let weights = (0..out_ch * in_ch * 9)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                (z * scale) as f32
            })
            .collect();
        layers.push(Layer::Conv3x3(Conv3x3 {
            in_ch,
            out_ch,
            weights,
            bias: vec![0.0; out_ch],
            rectify: true,
        }));
        in_ch = out_ch;
    }
    FeatureExtractor::new(input_bands, layers)
}

struct Tensor {
    w: usize,
    h: usize,
    c: usize,
    data: Vec<f32>,
}

fn conv_forward(t: &Tensor, conv: &Conv3x3) -> Tensor {
    let (w, h) = (t.w, t.h);
    let n = w * h;
    let mut data = vec![0.0f32; conv.out_ch * n];
    data.par_chunks_mut(n).enumerate().for_each(|(o, out)| {
        out.fill(conv.bias[o]);
        for i in 0..conv.in_ch {
            let src = &t.data[i * n..(i + 1) * n];
            for ky in 0..3 {
                for kx in 0..3 {
                    let wv = conv.weight(o, i, ky, kx);
                    // Output (x, y) reads input (x + kx − 1, y + ky − 1).
                    let (ys, ye) = (usize::from(ky == 0), h - usize::from(ky == 2));
                    let (xs, xe) = (usize::from(kx == 0), w - usize::from(kx == 2));
                    if xs >= xe || ys >= ye {
                        continue;
                    }
                    for y in ys..ye {
                        let sy = y + ky - 1;
                        let orow = &mut out[y * w + xs..y * w + xe];
                        let irow = &src[sy * w + xs + kx - 1..sy * w + xe + kx - 1];
                        for (o, &v) in orow.iter_mut().zip(irow) {
                            *o += wv * v;
                        }
                    }
                }
            }
        }
        if conv.rectify {
            for v in out.iter_mut() {
                *v = v.max(0.0);
            }
        }
    });
    Tensor {
        w,
        h,
        c: conv.out_ch,
        data,
    }
}

fn downsample(t: &Tensor) -> Tensor {
    let (w, h) = (t.w / 2, t.h / 2);
    let mut data = Vec::with_capacity(t.c * w * h);
    for c in 0..t.c {
        let src = &t.data[c * t.w * t.h..(c + 1) * t.w * t.h];
        for y in 0..h {
            for x in 0..w {
                let i = 2 * y * t.w + 2 * x;
                data.push(0.25 * (src[i] + src[i + 1] + src[i + t.w] + src[i + t.w + 1]));
            }
        }
    }
    Tensor { w, h, c: t.c, data }
}

/// Bilinear resize of every channel to `w`×`h` (pixel-centre aligned).
pub(crate) fn upsample(stack: &FeatureStack, w: usize, h: usize) -> FeatureStack {
    if stack.width == w && stack.height == h {
        return stack.clone();
    }
    let (sw, sh) = (stack.width, stack.height);
    let (fx, fy) = (sw as f64 / w as f64, sh as f64 / h as f64);
    let xs: Vec<(usize, usize, f64)> = (0..w)
        .map(|x| axis_weights((x as f64 + 0.5) * fx - 0.5, sw))
        .collect();
    let ys: Vec<(usize, usize, f64)> = (0..h)
        .map(|y| axis_weights((y as f64 + 0.5) * fy - 0.5, sh))
        .collect();
    let mut values = Vec::with_capacity(stack.channels() * w * h);
    for c in 0..stack.channels() {
        let p = stack.plane(c);
        for &(y0, y1, ty) in &ys {
            for &(x0, x1, tx) in &xs {
                let top = p[y0 * sw + x0] as f64 * (1.0 - tx) + p[y0 * sw + x1] as f64 * tx;
                let bot = p[y1 * sw + x0] as f64 * (1.0 - tx) + p[y1 * sw + x1] as f64 * tx;
                values.push((top * (1.0 - ty) + bot * ty) as f32);
            }
        }
    }
    FeatureStack {
        layer_index: stack.layer_index,
        width: w,
        height: h,
        channel_ids: stack.channel_ids.clone(),
        values,
    }
}

fn axis_weights(pos: f64, n: usize) -> (usize, usize, f64) {
    let pos = pos.clamp(0.0, (n - 1) as f64);
    let i0 = pos.floor() as usize;
    (i0, (i0 + 1).min(n - 1), pos - i0 as f64)
}
