//! Run configuration: one TOML file holding every tunable default.
//! Unknown keys are rejected so typos fail loudly.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lighting::Activation;
use crate::render::RasterSettings;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FreezeConfig {
    /// Barycentric logits, scales, rotation and normal offset.
    pub gaussian_geometry: bool,
    pub gaussian_albedo: bool,
    pub gaussian_opacity: bool,
    pub vertex_offsets: bool,
    pub lighting: bool,
    pub pose_deltas: bool,
}

impl Default for FreezeConfig {
    fn default() -> Self {
        FreezeConfig {
            gaussian_geometry: false,
            gaussian_albedo: false,
            gaussian_opacity: false,
            vertex_offsets: false,
            lighting: false,
            pose_deltas: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitConfig {
    pub iterations: usize,
    /// DSSIM weight: total = (1 - lambda) * L1 + lambda * (1 - SSIM).
    pub lambda_dssim: f64,
    pub lr_gaussians: f64,
    pub lr_vertex_offsets: f64,
    pub lr_lighting: f64,
    /// Pose refinements move far slower than Gaussians: with Adam the
    /// rate is the per-step displacement and refinement is a correction.
    pub lr_pose_deltas: f64,
    pub reg_pose_delta: f64,
    pub reg_vertex_offsets: f64,
    /// Fraction of the run during which pose refinements and vertex offsets
    /// stay frozen; appearance settles first, refinement absorbs residual
    /// capture error second.
    pub refine_start_fraction: f64,
    pub checkpoint_interval: usize,
    pub log_interval: usize,
    /// Pose indices excluded from training (held out for evaluation).
    pub holdout_poses: Vec<usize>,
    pub freeze: FreezeConfig,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            iterations: 2000,
            lambda_dssim: 0.2,
            lr_gaussians: 0.02,
            lr_vertex_offsets: 2e-6,
            lr_lighting: 0.005,
            lr_pose_deltas: 2e-4,
            reg_pose_delta: 0.1,
            reg_vertex_offsets: 1.0,
            refine_start_fraction: 0.5,
            checkpoint_interval: 500,
            log_interval: 10,
            holdout_poses: Vec::new(),
            freeze: FreezeConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GaussianConfig {
    pub n_init_per_face: usize,
    /// Normal-offset bound, meters.
    pub z_max: f64,
    /// Initial scale as a fraction of sqrt(face area).
    pub init_scale_factor: f64,
    pub init_opacity: f64,
    pub init_albedo: f64,
}

impl Default for GaussianConfig {
    fn default() -> Self {
        GaussianConfig {
            n_init_per_face: 1,
            z_max: 0.002,
            init_scale_factor: 0.7,
            init_opacity: 0.1,
            init_albedo: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LightingConfig {
    /// Spherical harmonics order, 0 to 4.
    pub sh_order: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    /// Feed the root translation to the lighting net in addition to the
    /// joint rotations.
    pub include_root_translation: bool,
}

impl Default for LightingConfig {
    fn default() -> Self {
        LightingConfig {
            sh_order: 2,
            hidden: vec![64, 64],
            activation: Activation::Softplus,
            include_root_translation: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControlConfigToml {
    /// Steps between density-control cycles; 0 disables control.
    pub control_interval: usize,
    /// Mean positional-gradient magnitude (px) that triggers densification.
    pub grad_threshold: f64,
    /// Scale (m) above which densification splits instead of clones.
    /// 0 = auto: 1.5x the median canonical edge length.
    pub split_scale_threshold: f64,
    pub prune_opacity: f64,
    pub max_gaussians: usize,
    pub split_factor: f64,
}

impl Default for ControlConfigToml {
    fn default() -> Self {
        ControlConfigToml {
            control_interval: 300,
            grad_threshold: 2e-4,
            split_scale_threshold: 0.0,
            prune_opacity: 0.01,
            max_gaussians: 20000,
            split_factor: 1.6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    /// Worker threads for rendering; 0 keeps the library default.
    pub threads: usize,
    /// Scalar type for inference rasterization (fit always trains in f64).
    pub precision: Precision,
    pub fit: FitConfig,
    pub gaussians: GaussianConfig,
    pub lighting: LightingConfig,
    pub render: RasterSettings,
    pub control: ControlConfigToml,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 42,
            threads: 0,
            precision: Precision::F64,
            fit: FitConfig::default(),
            gaussians: GaussianConfig::default(),
            lighting: LightingConfig::default(),
            render: RasterSettings::default(),
            control: ControlConfigToml::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.lighting.sh_order > crate::lighting::MAX_SH_ORDER {
            return Err(Error::Config(format!(
                "lighting.sh_order {} exceeds {}",
                self.lighting.sh_order,
                crate::lighting::MAX_SH_ORDER
            )));
        }
        if !(0.0..=1.0).contains(&self.fit.lambda_dssim) {
            return Err(Error::Config("fit.lambda_dssim must be in [0, 1]".into()));
        }
        if self.gaussians.z_max <= 0.0 {
            return Err(Error::Config("gaussians.z_max must be positive".into()));
        }
        if !(self.gaussians.init_opacity > 0.0 && self.gaussians.init_opacity < 1.0) {
            return Err(Error::Config("gaussians.init_opacity must be in (0, 1)".into()));
        }
        if self.control.prune_opacity >= 1.0 || self.control.prune_opacity <= 0.0 {
            return Err(Error::Config("control.prune_opacity must be in (0, 1)".into()));
        }
        if self.control.split_factor <= 1.0 {
            return Err(Error::Config("control.split_factor must exceed 1".into()));
        }
        if self.render.alpha_max <= 0.0 || self.render.alpha_max >= 1.0 {
            return Err(Error::Config("render.alpha_max must be in (0, 1)".into()));
        }
        Ok(())
    }

    /// The fully commented template emitted by `config init`. Parsing it
    /// yields exactly the defaults.
    pub fn template() -> &'static str {
        TEMPLATE
    }
}

const TEMPLATE: &str = r#"# surfsplat run configuration. Every value below is the built-in default;
# delete anything you do not want to override. Unknown keys are rejected.

# Master RNG seed. Identical seed + config + dataset => identical outputs.
seed = 42
# Worker threads for rendering commands. 0 keeps the library default
# (one rayon worker per core).
threads = 0
# Scalar type used by the inference rasterizer ("f32" or "f64").
# Fitting always computes gradients in f64.
precision = "f64"

[fit]
# Optimizer steps.
iterations = 2000
# DSSIM weight: total = (1 - lambda) * L1 + lambda * (1 - SSIM).
lambda_dssim = 0.2
# Adam learning rates per parameter block.
lr_gaussians = 0.02
lr_vertex_offsets = 0.000002
lr_lighting = 0.005
# Pose refinements move two orders slower than Gaussians: with Adam the
# learning rate is the per-step displacement, and refinement is meant to
# absorb small capture error, not explore.
lr_pose_deltas = 0.0002
# L2 penalty on per-frame pose refinements; strong enough that refinements
# vanish when the input poses are already exact.
reg_pose_delta = 0.1
# L2 penalty pulling canonical vertex offsets toward zero, protecting the
# mesh prior.
reg_vertex_offsets = 1.0
# Keep pose refinements and vertex offsets frozen for this fraction of the
# run so appearance converges before geometry refinement unlocks.
refine_start_fraction = 0.5
# Write a checkpoint every this many steps (and at the end).
checkpoint_interval = 500
# Append a loss-curve CSV row every this many steps.
log_interval = 10
# Pose indices excluded from training, e.g. [19] to hold one out.
holdout_poses = []

[fit.freeze]
# Freeze parameter groups (no optimizer movement).
gaussian_geometry = false   # barycentrics, scales, rotation, normal offset
gaussian_albedo = false
gaussian_opacity = false
vertex_offsets = false
lighting = false
pose_deltas = false

[gaussians]
# Gaussians created per face at initialization.
n_init_per_face = 1
# Upper bound of the learned normal offset, meters (sigmoid-scaled).
z_max = 0.002
# Initial ellipse scale as a fraction of sqrt(face area).
init_scale_factor = 0.7
# Initial opacity (through the logit) and flat gray albedo.
init_opacity = 0.1
init_albedo = 0.5

[lighting]
# Spherical-harmonics order (0-4); order 2 uses 9 basis functions.
sh_order = 2
# Hidden layer widths of the pose-to-lighting MLP.
hidden = [64, 64]
# Activation: "softplus" (default, smooth), "tanh" or "relu".
activation = "softplus"
# Also feed the root translation (not just joint rotations) to the MLP.
include_root_translation = false

[render]
# Square tile edge in pixels for the tiled rasterizer.
tile_size = 16
# Per-splat alpha clamp.
alpha_max = 0.99
# Early-termination transmittance threshold.
t_min = 0.0001
# Mahalanobis-radius cutoff for binning/skipping; truncated contributions
# are below exp(-extent^2/2) ~ 2e-11 at the default.
extent_sigma = 7.0
# Near-plane depth, meters.
near = 0.01
# Isotropic regularizer added to projected covariances, px^2.
eps_cov = 0.3

[control]
# Steps between adaptive density-control cycles; 0 disables control.
control_interval = 300
# Mean screen-space positional-gradient magnitude that marks a Gaussian
# for densification.
grad_threshold = 0.0002
# Scales above this split in two; smaller ones clone. 0 = auto
# (1.5x the median canonical edge length).
split_scale_threshold = 0.0
# Gaussians dimmer than this are pruned.
prune_opacity = 0.01
# Population cap (largest-gradient candidates densify first).
max_gaussians = 20000
# Scale divisor applied to split children.
split_factor = 1.6
"#;
