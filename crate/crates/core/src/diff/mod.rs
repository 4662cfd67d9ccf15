//! Differentiable training machinery: the autodiff tape, parameter layout,
//! losses, rasterizer backward, the Adam optimizer and the fit loop.

pub mod adam;
pub mod backward;
pub mod fit;
pub mod gradcheck;
pub mod loss;
pub mod model;
pub mod params;
pub mod step;
pub mod tape;
