//! Surface-anchored 2D Gaussian avatars on articulated triangle meshes.
//!
//! The crate covers the full reconstruction loop: Gaussians parameterized on
//! mesh faces, closed-form transfer of their ellipses to posed geometry,
//! spherical-harmonics relighting driven by pose, a deterministic software
//! splatting renderer with a brute-force reference twin, reverse-mode
//! gradients through the whole image formation, adaptive density control,
//! and the dataset/checkpoint plumbing used by the `surfsplat` CLI.

pub mod checkpoint;
pub mod control;
pub mod config;
pub mod dataset;
pub mod error;
pub mod math;

pub mod mesh;
pub mod image;
pub mod lighting;
pub mod render;
pub mod surfgauss;
pub mod synthetic;

pub mod diff;

#[cfg(any(test, feature = "testutil"))]
pub mod testutil;

pub use error::{Error, Result};
