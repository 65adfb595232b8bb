//! Hyperspectral change detection.
//!
//! The crate covers the full bi-temporal workflow:
//!
//! * [`raster`]: band-sequential f32 cubes, scalar maps, change masks and their file formats
//! * [`coregister`]: pyramidal Lucas–Kanade flow and warping of the "after" image
//! * [`cva`]: change magnitude / phase angle over all bands (C2VA)
//! * [`threshold`]: percentile, Otsu and local adaptive binarization
//! * [`dcva`]: deep change vector analysis on convolutional feature differences
//! * [`synth`]: synthetic scene pairs with exact ground truth, and detection metrics
//! * [`pipeline`]: coregister → AOI patch → change detection → mask + CSV row
//!
//! Runnable walkthroughs live in the crate's `examples/` directory.

pub mod coregister;
pub mod cva;
pub mod dcva;
pub mod error;
pub mod pipeline;
pub mod raster;
pub mod synth;
pub mod threshold;

pub use error::{Error, Result};
pub use raster::{ChangeMap, MapKind, RasterImage, ScalarMap};
