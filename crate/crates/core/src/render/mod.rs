//! Pinhole cameras, splat projection, the tiled software rasterizer with
//! its brute-force reference twin, compositing onto backgrounds, and image
//! metrics.

pub mod composite;
pub(crate) mod fastexp;
pub mod metrics;
mod project;
pub(crate) mod raster;
#[doc(hidden)]
pub mod rowkernel;

pub use composite::composite_overlay;
pub use metrics::{psnr, ssim};
pub use project::{project_splat, ScreenSplat};
pub use raster::{rasterize, rasterize_reference};
pub use rowkernel::RowKernel;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::Rigidf;

/// Rectified pinhole camera. Pixel (i, j) samples the scene at continuous
/// image coordinates (i, j); intrinsics are expressed in that convention.
#[derive(Debug, Clone)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub world_to_camera: Rigidf,
}

impl Camera {
    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::Domain("camera focal lengths must be positive".into()));
        }
        if !(self.cx > 0.0 && self.cx < self.width as f64) {
            return Err(Error::Domain("camera cx outside image".into()));
        }
        if !(self.cy > 0.0 && self.cy < self.height as f64) {
            return Err(Error::Domain("camera cy outside image".into()));
        }
        Ok(())
    }
}

/// Rasterization knobs shared by the tiled renderer, the projector and the
/// training backward pass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RasterSettings {
    /// Square tile edge in pixels.
    pub tile_size: usize,
    /// Per-splat alpha clamp.
    pub alpha_max: f64,
    /// Transmittance threshold for early termination.
    pub t_min: f64,
    /// Mahalanobis-radius cutoff for tile binning and per-pixel skipping.
    /// Contributions beyond it are below exp(-extent^2/2) ~ 2e-11 at the
    /// default, keeping the tiled output within reference tolerances.
    pub extent_sigma: f64,
    /// Near-plane depth in meters; splats at or behind it are culled.
    pub near: f64,
    /// Isotropic regularizer added to projected covariances, px^2.
    pub eps_cov: f64,
}

impl Default for RasterSettings {
    fn default() -> Self {
        RasterSettings {
            tile_size: 16,
            alpha_max: 0.99,
            t_min: 1e-4,
            extent_sigma: 7.0,
            near: 0.01,
            eps_cov: 0.3,
        }
    }
}
