//! Multi-band image cube, scalar maps and binary change masks.
//!
//! Layout is band-sequential: pixel `(x, y)` of band `k` lives at
//! `k * width * height + y * width + x`.

mod io;

pub(crate) use io::header_path as io_header_path;
pub use io::{read_mask_pgm, read_raster, write_mask_pgm, write_raster, NODATA_SENTINEL};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct RasterImage {
    width: usize,
    height: usize,
    bands: usize,
    data: Vec<f32>,
    wavelengths_nm: Option<Vec<f32>>,
    nodata: Option<Vec<bool>>,
}

impl RasterImage {
    pub fn new(width: usize, height: usize, bands: usize, data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Validation(format!(
                "raster dimensions must be positive, got {width}x{height}"
            )));
        }
        if bands == 0 {
            return Err(Error::Validation(
                "raster must have at least one band".into(),
            ));
        }
        let expected = width * height * bands;
        if data.len() != expected {
            return Err(Error::Validation(format!(
                "data length {} does not match {width}x{height}x{bands} = {expected}",
                data.len()
            )));
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self {
            width,
            height,
            bands,
            data,
            wavelengths_nm: None,
            nodata: None,
        })
    }

    pub fn zeros(width: usize, height: usize, bands: usize) -> Result<Self> {
        Self::new(width, height, bands, vec![0.0; width * height * bands])
    }

    /// Builds a cube from one plane per band.
    pub fn from_bands(width: usize, height: usize, planes: Vec<Vec<f32>>) -> Result<Self> {
        let bands = planes.len();
        if let Some(bad) = planes.iter().position(|p| p.len() != width * height) {
            return Err(Error::Shape(format!(
                "band {bad} has {} values, expected {}",
                planes[bad].len(),
                width * height
            )));
        }
        Self::new(width, height, bands, planes.concat())
    }

    pub fn with_wavelengths(mut self, wavelengths_nm: Vec<f32>) -> Result<Self> {
        if wavelengths_nm.len() != self.bands {
            return Err(Error::Validation(format!(
                "{} wavelengths given for {} bands",
                wavelengths_nm.len(),
                self.bands
            )));
        }
        if wavelengths_nm.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Validation(
                "wavelengths must be strictly increasing".into(),
            ));
        }
        self.wavelengths_nm = Some(wavelengths_nm);
        Ok(self)
    }

    /// Attaches a per-pixel nodata mask (`true` = nodata). An all-false mask
    /// is dropped.
    pub fn with_nodata(mut self, nodata: Vec<bool>) -> Result<Self> {
        if nodata.len() != self.pixel_count() {
            return Err(Error::Shape(format!(
                "nodata mask has {} entries for {} pixels",
                nodata.len(),
                self.pixel_count()
            )));
        }
        self.nodata = nodata.iter().any(|&n| n).then_some(nodata);
        Ok(self)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn wavelengths_nm(&self) -> Option<&[f32]> {
        self.wavelengths_nm.as_deref()
    }

    pub fn nodata(&self) -> Option<&[bool]> {
        self.nodata.as_deref()
    }

    pub fn is_valid(&self, pixel: usize) -> bool {
        self.nodata.as_ref().is_none_or(|m| !m[pixel])
    }

    /// Per-pixel validity (`true` = usable), materialised.
    pub fn valid_mask(&self) -> Vec<bool> {
        match &self.nodata {
            Some(m) => m.iter().map(|&n| !n).collect(),
            None => vec![true; self.pixel_count()],
        }
    }

    pub fn band(&self, k: usize) -> &[f32] {
        let plane = self.pixel_count();
        &self.data[k * plane..(k + 1) * plane]
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, k: usize) -> f32 {
        self.data[k * self.pixel_count() + y * self.width + x]
    }

    pub fn same_shape(&self, other: &RasterImage) -> bool {
        self.width == other.width && self.height == other.height && self.bands == other.bands
    }

    pub(crate) fn check_same_shape(&self, other: &RasterImage) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "{}x{}x{} vs {}x{}x{}",
                self.width, self.height, self.bands, other.width, other.height, other.bands
            )))
        }
    }

    /// New image holding the listed bands in the given order.
    pub fn select_bands(&self, indices: &[usize]) -> Result<RasterImage> {
        if indices.is_empty() {
            return Err(Error::Validation("band selection is empty".into()));
        }
        let mut planes = Vec::with_capacity(indices.len());
        for &k in indices {
            if k >= self.bands {
                return Err(Error::Bounds(format!(
                    "band index {k} out of range for {} bands",
                    self.bands
                )));
            }
            planes.push(self.band(k).to_vec());
        }
        let mut out = Self::from_bands(self.width, self.height, planes)?;
        if let Some(wl) = &self.wavelengths_nm {
            let picked: Vec<f32> = indices.iter().map(|&k| wl[k]).collect();
            // A reordered selection is no longer monotone; drop the metadata then.
            if picked.windows(2).all(|w| w[0] < w[1]) {
                out.wavelengths_nm = Some(picked);
            }
        }
        out.nodata = self.nodata.clone();
        Ok(out)
    }

    /// Pixelwise union of two nodata masks.
    pub(crate) fn joint_valid(a: &RasterImage, b: &RasterImage) -> Vec<bool> {
        (0..a.pixel_count())
            .map(|i| a.is_valid(i) && b.is_valid(i))
            .collect()
    }
}

/// Copies a `size`×`size` window with top-left corner `(x0, y0)`.
pub fn extract_patch(img: &RasterImage, x0: usize, y0: usize, size: usize) -> Result<RasterImage> {
    if size == 0 {
        return Err(Error::Bounds("patch size must be positive".into()));
    }
    if x0 + size > img.width || y0 + size > img.height {
        return Err(Error::Bounds(format!(
            "patch ({x0},{y0}) size {size} exceeds {}x{} image",
            img.width, img.height
        )));
    }
    let mut data = Vec::with_capacity(size * size * img.bands);
    for k in 0..img.bands {
        let plane = img.band(k);
        for y in y0..y0 + size {
            let row = y * img.width;
            data.extend_from_slice(&plane[row + x0..row + x0 + size]);
        }
    }
    let nodata = img.nodata.as_ref().map(|m| {
        (y0..y0 + size)
            .flat_map(|y| {
                m[y * img.width + x0..y * img.width + x0 + size]
                    .iter()
                    .copied()
            })
            .collect::<Vec<_>>()
    });
    let mut out = RasterImage::new(size, size, img.bands, data)?;
    out.wavelengths_nm = img.wavelengths_nm.clone();
    if let Some(m) = nodata {
        out = out.with_nodata(m)?;
    }
    Ok(out)
}

/// Periodic integer translation: `out(x, y) = img(x - dx, y - dy)` with
/// wrap-around, so content moves by `(+dx, +dy)`.
pub fn roll(img: &RasterImage, dx: i64, dy: i64) -> RasterImage {
    let (w, h) = (img.width as i64, img.height as i64);
    let mut data = Vec::with_capacity(img.data.len());
    for k in 0..img.bands {
        let plane = img.band(k);
        for y in 0..h {
            let sy = (y - dy).rem_euclid(h);
            for x in 0..w {
                let sx = (x - dx).rem_euclid(w);
                data.push(plane[(sy * w + sx) as usize]);
            }
        }
    }
    let nodata = img.nodata.as_ref().map(|m| {
        (0..h)
            .flat_map(|y| {
                (0..w)
                    .map(move |x| m[((y - dy).rem_euclid(h) * w + (x - dx).rem_euclid(w)) as usize])
            })
            .collect::<Vec<_>>()
    });
    RasterImage {
        width: img.width,
        height: img.height,
        bands: img.bands,
        data,
        wavelengths_nm: img.wavelengths_nm.clone(),
        nodata,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MapKind {
    Magnitude,
    AngleRadians,
    HypervectorNorm,
}

impl MapKind {
    fn check(self, v: f32) -> bool {
        match self {
            MapKind::Magnitude | MapKind::HypervectorNorm => v >= 0.0,
            MapKind::AngleRadians => (0.0..=std::f32::consts::PI).contains(&v),
        }
    }
}

/// One float per pixel: ρ, θ or ‖G‖.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarMap {
    width: usize,
    height: usize,
    values: Vec<f32>,
    kind: MapKind,
    valid: Option<Vec<bool>>,
}

impl ScalarMap {
    pub fn new(width: usize, height: usize, values: Vec<f32>, kind: MapKind) -> Result<Self> {
        Self::with_valid(width, height, values, kind, None)
    }

    /// `valid[i] == false` marks pixel `i` as nodata; its value is ignored.
    pub fn with_valid(
        width: usize,
        height: usize,
        values: Vec<f32>,
        kind: MapKind,
        valid: Option<Vec<bool>>,
    ) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::Shape(format!(
                "{} values for a {width}x{height} map",
                values.len()
            )));
        }
        if let Some(v) = &valid {
            if v.len() != values.len() {
                return Err(Error::Shape("validity mask length mismatch".into()));
            }
        }
        for (i, &v) in values.iter().enumerate() {
            let ok = valid.as_ref().is_none_or(|m| m[i]);
            if ok && !v.is_finite() {
                return Err(Error::NonFinite { index: i });
            }
            if ok && !kind.check(v) {
                return Err(Error::Validation(format!(
                    "value {v} at index {i} violates {kind:?} range"
                )));
            }
        }
        let valid = valid.filter(|m| m.iter().any(|&x| !x));
        Ok(Self {
            width,
            height,
            values,
            kind,
            valid,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn kind(&self) -> MapKind {
        self.kind
    }

    pub fn is_valid(&self, i: usize) -> bool {
        self.valid.as_ref().is_none_or(|m| m[i])
    }

    pub fn validity(&self) -> Option<&[bool]> {
        self.valid.as_deref()
    }

    /// Values of valid pixels, in pixel order.
    pub fn valid_values(&self) -> Vec<f32> {
        self.values
            .iter()
            .enumerate()
            .filter(|(i, _)| self.is_valid(*i))
            .map(|(_, &v)| v)
            .collect()
    }

    pub fn valid_count(&self) -> usize {
        self.valid
            .as_ref()
            .map_or(self.values.len(), |m| m.iter().filter(|&&v| v).count())
    }

    /// Single-band raster view, for writing with [`write_raster`].
    pub fn to_raster(&self) -> RasterImage {
        let data = self
            .values
            .iter()
            .enumerate()
            .map(|(i, &v)| if self.is_valid(i) { v } else { 0.0 })
            .collect();
        let img = RasterImage::new(self.width, self.height, 1, data)
            .expect("scalar map values are finite");
        match &self.valid {
            Some(m) => img
                .with_nodata(m.iter().map(|&v| !v).collect())
                .expect("mask length checked"),
            None => img,
        }
    }
}

/// Binary change mask (`true` = change) plus the threshold that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct ChangeMap {
    width: usize,
    height: usize,
    mask: Vec<bool>,
    valid: Option<Vec<bool>>,
    threshold_used: f64,
    method_tag: String,
    warning: Option<String>,
}

impl ChangeMap {
    pub fn new(
        width: usize,
        height: usize,
        mask: Vec<bool>,
        threshold_used: f64,
        method_tag: impl Into<String>,
    ) -> Result<Self> {
        if mask.len() != width * height {
            return Err(Error::Shape(format!(
                "{} mask entries for a {width}x{height} map",
                mask.len()
            )));
        }
        if !threshold_used.is_finite() {
            return Err(Error::Validation(format!(
                "threshold {threshold_used} is not finite"
            )));
        }
        Ok(Self {
            width,
            height,
            mask,
            valid: None,
            threshold_used,
            method_tag: method_tag.into(),
            warning: None,
        })
    }

    /// Restricts the mask to valid pixels; nodata pixels are forced to no-change.
    pub fn with_valid(mut self, valid: Option<Vec<bool>>) -> Result<Self> {
        if let Some(v) = &valid {
            if v.len() != self.mask.len() {
                return Err(Error::Shape("validity mask length mismatch".into()));
            }
            for (m, &ok) in self.mask.iter_mut().zip(v) {
                *m &= ok;
            }
        }
        self.valid = valid.filter(|m| m.iter().any(|&x| !x));
        Ok(self)
    }

    pub fn with_warning(mut self, warning: impl Into<String>) -> Self {
        self.warning = Some(warning.into());
        self
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn threshold_used(&self) -> f64 {
        self.threshold_used
    }

    pub fn method_tag(&self) -> &str {
        &self.method_tag
    }

    pub fn warning(&self) -> Option<&str> {
        self.warning.as_deref()
    }

    pub fn is_valid(&self, i: usize) -> bool {
        self.valid.as_ref().is_none_or(|m| m[i])
    }

    pub fn validity(&self) -> Option<&[bool]> {
        self.valid.as_deref()
    }

    pub fn changed_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn valid_count(&self) -> usize {
        (0..self.mask.len()).filter(|&i| self.is_valid(i)).count()
    }

    /// Changed pixels as a percentage of valid pixels; 0 when nothing is valid.
    pub fn changed_percent(&self) -> f64 {
        let valid = self.valid_count();
        if valid == 0 {
            0.0
        } else {
            100.0 * self.changed_count() as f64 / valid as f64
        }
    }
}
