//! Dense coregistration of an "after" image onto a "before" grid.
//!
//! Flow is estimated with coarse-to-fine iterative Lucas–Kanade on a single
//! band: at every pixel the `(2r+1)²` window is resampled at that pixel's
//! displacement, the 2×2 normal equations are accumulated in f64 and solved
//! with a small Tikhonov term, so flat windows give a zero update instead of a
//! singular system. Pixels are solved independently from the previous
//! iterate, so the result does not depend on the rayon schedule.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::RasterImage;

/// Per-pixel displacement: output pixel `(x, y)` samples the moving image
/// at `(x + u, y + v)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub width: usize,
    pub height: usize,
    pub u: Vec<f32>,
    pub v: Vec<f32>,
}

impl FlowField {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self::uniform(width, height, 0.0, 0.0)
    }

    pub fn uniform(width: usize, height: usize, u: f32, v: f32) -> Self {
        Self {
            width,
            height,
            u: vec![u; width * height],
            v: vec![v; width * height],
        }
    }

    /// Largest |u| or |v| over the field.
    pub fn max_displacement(&self) -> f32 {
        self.u
            .iter()
            .chain(&self.v)
            .fold(0.0f32, |m, d| m.max(d.abs()))
    }

    /// Mean Euclidean distance to a constant displacement over pixels at
    /// least `margin` away from every border.
    pub fn mean_endpoint_error(&self, du: f32, dv: f32, margin: usize) -> f64 {
        let mut sum = 0.0f64;
        let mut n = 0usize;
        for y in margin..self.height.saturating_sub(margin) {
            for x in margin..self.width.saturating_sub(margin) {
                let i = y * self.width + x;
                let eu = (self.u[i] - du) as f64;
                let ev = (self.v[i] - dv) as f64;
                sum += (eu * eu + ev * ev).sqrt();
                n += 1;
            }
        }
        if n == 0 {
            0.0
        } else {
            sum / n as f64
        }
    }

    /// Two-band raster (u, v).
    pub fn to_raster(&self) -> RasterImage {
        RasterImage::from_bands(
            self.width,
            self.height,
            vec![self.u.clone(), self.v.clone()],
        )
        .expect("flow values are finite")
    }

    pub fn from_raster(img: &RasterImage) -> Result<Self> {
        if img.bands() != 2 {
            return Err(Error::Shape(format!(
                "flow raster needs 2 bands, found {}",
                img.bands()
            )));
        }
        Ok(Self {
            width: img.width(),
            height: img.height(),
            u: img.band(0).to_vec(),
            v: img.band(1).to_vec(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlowParams {
    pub pyramid_levels: usize,
    pub window_radius: usize,
    pub iterations_per_level: usize,
    pub regularization_eps: f64,
}

impl Default for FlowParams {
    fn default() -> Self {
        Self {
            pyramid_levels: 3,
            window_radius: 8,
            iterations_per_level: 5,
            regularization_eps: 1e-4,
        }
    }
}

impl FlowParams {
    pub fn validate(&self) -> Result<()> {
        if self.pyramid_levels == 0 {
            return Err(Error::Config("pyramid_levels must be >= 1".into()));
        }
        if self.window_radius == 0 {
            return Err(Error::Config("window_radius must be >= 1".into()));
        }
        if self.iterations_per_level == 0 {
            return Err(Error::Config("iterations_per_level must be >= 1".into()));
        }
        if !(self.regularization_eps > 0.0 && self.regularization_eps.is_finite()) {
            return Err(Error::Config("regularization_eps must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone)]
struct Plane {
    w: usize,
    h: usize,
    data: Vec<f32>,
}

impl Plane {
    fn from_band(img: &RasterImage, k: usize) -> Self {
        Self {
            w: img.width(),
            h: img.height(),
            data: img.band(k).to_vec(),
        }
    }

    #[inline]
    fn at(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.w + x]
    }

    /// 2× box average; odd trailing rows/columns are dropped.
    fn downsample(&self) -> Plane {
        let (w, h) = (self.w / 2, self.h / 2);
        let mut data = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                let s = self.at(2 * x, 2 * y)
                    + self.at(2 * x + 1, 2 * y)
                    + self.at(2 * x, 2 * y + 1)
                    + self.at(2 * x + 1, 2 * y + 1);
                data.push(0.25 * s);
            }
        }
        Plane { w, h, data }
    }
}

/// Bilinear interpolation at an in-range position. Exact at integer sites.
#[inline]
fn bilinear(data: &[f32], w: usize, h: usize, x: f64, y: f64) -> f64 {
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let v00 = data[y0 * w + x0] as f64;
    let v10 = data[y0 * w + x1] as f64;
    let v01 = data[y1 * w + x0] as f64;
    let v11 = data[y1 * w + x1] as f64;
    (v00 * (1.0 - fx) + v10 * fx) * (1.0 - fy) + (v01 * (1.0 - fx) + v11 * fx) * fy
}

fn build_pyramid(base: Plane, levels: usize, min_side: usize) -> Vec<Plane> {
    let mut pyr = vec![base];
    while pyr.len() < levels {
        let last = pyr.last().unwrap();
        if last.w / 2 < min_side || last.h / 2 < min_side {
            break;
        }
        let next = last.downsample();
        pyr.push(next);
    }
    pyr
}

/// Bilinear ×2 upsampling of a flow component onto a `w`×`h` grid, values doubled.
fn upsample_component(src: &[f32], sw: usize, sh: usize, w: usize, h: usize) -> Vec<f32> {
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        let sy = ((y as f64 + 0.5) / 2.0 - 0.5).clamp(0.0, (sh - 1) as f64);
        for x in 0..w {
            let sx = ((x as f64 + 0.5) / 2.0 - 0.5).clamp(0.0, (sw - 1) as f64);
            out.push((2.0 * bilinear(src, sw, sh, sx, sy)) as f32);
        }
    }
    out
}

/// Central-difference gradients (replicated border).
fn gradients(p: &Plane) -> (Plane, Plane) {
    let (w, h) = (p.w, p.h);
    let mut gx = Vec::with_capacity(w * h);
    let mut gy = Vec::with_capacity(w * h);
    for y in 0..h {
        let (ym, yp) = (y.saturating_sub(1), (y + 1).min(h - 1));
        for x in 0..w {
            let (xm, xp) = (x.saturating_sub(1), (x + 1).min(w - 1));
            gx.push(0.5 * (p.at(xp, y) - p.at(xm, y)));
            gy.push(0.5 * (p.at(x, yp) - p.at(x, ym)));
        }
    }
    (Plane { w, h, data: gx }, Plane { w, h, data: gy })
}

fn refine_level(target: &Plane, moving: &Plane, u: &mut [f32], v: &mut [f32], params: &FlowParams) {
    let (w, h) = (target.w, target.h);
    let r = params.window_radius;
    let eps = params.regularization_eps;
    let (mgx, mgy) = gradients(moving);
    let (xmax, ymax) = ((w - 1) as f64, (h - 1) as f64);

    for _ in 0..params.iterations_per_level {
        // Each window is resampled at its centre pixel's displacement; samples
        // that land outside the moving image are dropped.
        let (u_prev, v_prev) = (u.to_vec(), v.to_vec());
        u.par_chunks_mut(w)
            .zip(v.par_chunks_mut(w))
            .enumerate()
            .for_each(|(y, (urow, vrow))| {
                let (y0, y1) = (y.saturating_sub(r), (y + r + 1).min(h));
                for x in 0..w {
                    let (x0, x1) = (x.saturating_sub(r), (x + r + 1).min(w));
                    let (du, dv) = (u_prev[y * w + x] as f64, v_prev[y * w + x] as f64);
                    let (mut a, mut b, mut c, mut bx, mut by) = (eps, 0.0, eps, 0.0, 0.0);
                    // Every sample in the window shares one fractional offset.
                    let (ix, iy) = (du.floor(), dv.floor());
                    let (fx, fy) = (du - ix, dv - iy);
                    let wts = [
                        (1.0 - fx) * (1.0 - fy),
                        fx * (1.0 - fy),
                        (1.0 - fx) * fy,
                        fx * fy,
                    ];
                    let (ix, iy) = (ix as i64, iy as i64);
                    for qy in y0..y1 {
                        let sy = qy as f64 + dv;
                        if !(0.0..=ymax).contains(&sy) {
                            continue;
                        }
                        let r0 = (qy as i64 + iy) as usize;
                        let r1 = (r0 + 1).min(h - 1);
                        for qx in x0..x1 {
                            let sx = qx as f64 + du;
                            if !(0.0..=xmax).contains(&sx) {
                                continue;
                            }
                            let c0 = (qx as i64 + ix) as usize;
                            let c1 = (c0 + 1).min(w - 1);
                            let idx = [r0 * w + c0, r0 * w + c1, r1 * w + c0, r1 * w + c1];
                            let mut s = [0.0f64; 3];
                            for (k, &j) in idx.iter().enumerate() {
                                s[0] += wts[k] * mgx.data[j] as f64;
                                s[1] += wts[k] * mgy.data[j] as f64;
                                s[2] += wts[k] * moving.data[j] as f64;
                            }
                            let (gx, gy) = (s[0], s[1]);
                            let gt = s[2] - target.at(qx, qy) as f64;
                            a += gx * gx;
                            b += gx * gy;
                            c += gy * gy;
                            bx += gx * gt;
                            by += gy * gt;
                        }
                    }
                    let det = a * c - b * b;
                    urow[x] += (-(c * bx - b * by) / det) as f32;
                    vrow[x] += (-(a * by - b * bx) / det) as f32;
                }
            });
    }
}

/// Estimates the flow that maps `moving` onto `target` (both single-band).
pub fn compute_flow(
    target: &RasterImage,
    moving: &RasterImage,
    params: &FlowParams,
) -> Result<FlowField> {
    params.validate()?;
    if target.bands() != 1 || moving.bands() != 1 {
        return Err(Error::Shape(format!(
            "flow needs single-band inputs, got {} and {} bands",
            target.bands(),
            moving.bands()
        )));
    }
    target.check_same_shape(moving)?;

    let min_side = (params.window_radius + 1).max(4);
    let tp = build_pyramid(Plane::from_band(target, 0), params.pyramid_levels, min_side);
    let mp = build_pyramid(Plane::from_band(moving, 0), tp.len(), min_side);

    let coarsest = tp.last().unwrap();
    let mut u = vec![0.0f32; coarsest.w * coarsest.h];
    let mut v = vec![0.0f32; coarsest.w * coarsest.h];
    let (mut cw, mut ch) = (coarsest.w, coarsest.h);

    for level in (0..tp.len()).rev() {
        let (t, m) = (&tp[level], &mp[level]);
        if (t.w, t.h) != (cw, ch) {
            u = upsample_component(&u, cw, ch, t.w, t.h);
            v = upsample_component(&v, cw, ch, t.w, t.h);
            cw = t.w;
            ch = t.h;
        }
        refine_level(t, m, &mut u, &mut v, params);
    }

    Ok(FlowField {
        width: cw,
        height: ch,
        u,
        v,
    })
}

/// Resamples every band at `(x + u, y + v)`. Samples that leave the image,
/// or touch a nodata source pixel, become nodata.
pub fn warp(img: &RasterImage, flow: &FlowField) -> Result<RasterImage> {
    let (w, h) = (img.width(), img.height());
    if flow.width != w || flow.height != h {
        return Err(Error::Shape(format!(
            "flow is {}x{}, image is {w}x{h}",
            flow.width, flow.height
        )));
    }
    let plane = w * h;
    let (xmax, ymax) = ((w - 1) as f64, (h - 1) as f64);

    let positions: Vec<Option<(f64, f64)>> = (0..plane)
        .map(|i| {
            let sx = (i % w) as f64 + flow.u[i] as f64;
            let sy = (i / w) as f64 + flow.v[i] as f64;
            if !(0.0..=xmax).contains(&sx) || !(0.0..=ymax).contains(&sy) {
                return None;
            }
            if img.nodata().is_some() {
                let (x0, y0) = (sx.floor() as usize, sy.floor() as usize);
                let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
                let touched = [
                    (x0, y0, true),
                    (x1, y0, sx > x0 as f64),
                    (x0, y1, sy > y0 as f64),
                ]
                .into_iter()
                .chain(std::iter::once((x1, y1, sx > x0 as f64 && sy > y0 as f64)));
                for (px, py, used) in touched {
                    if used && !img.is_valid(py * w + px) {
                        return None;
                    }
                }
            }
            Some((sx, sy))
        })
        .collect();

    let mut data = vec![0.0f32; img.data().len()];
    data.par_chunks_mut(plane).enumerate().for_each(|(k, out)| {
        let band = img.band(k);
        for (o, pos) in out.iter_mut().zip(&positions) {
            if let Some((sx, sy)) = *pos {
                *o = bilinear(band, w, h, sx, sy) as f32;
            }
        }
    });

    let mut out = RasterImage::new(w, h, img.bands(), data)?;
    if let Some(wl) = img.wavelengths_nm() {
        out = out.with_wavelengths(wl.to_vec())?;
    }
    out.with_nodata(positions.iter().map(Option::is_none).collect())
}

/// Registers `after` onto `before` using band `band_index` and warps all bands.
pub fn coregister_pair(
    before: &RasterImage,
    after: &RasterImage,
    band_index: usize,
    params: &FlowParams,
) -> Result<(RasterImage, FlowField)> {
    before.check_same_shape(after)?;
    if band_index >= before.bands() {
        return Err(Error::Bounds(format!(
            "band index {band_index} out of range for {} bands",
            before.bands()
        )));
    }
    let target = before.select_bands(&[band_index])?;
    let moving = after.select_bands(&[band_index])?;
    let flow = compute_flow(&target, &moving, params)?;
    let warped = warp(after, &flow)?;
    let max = flow.max_displacement();
    log::info!("coregistration on band {band_index}: max displacement {max:.3} px");
    if max >= 5.0 {
        log::warn!("max displacement {max:.2} px exceeds the expected 5 px regime");
    }
    Ok((warped, flow))
}
