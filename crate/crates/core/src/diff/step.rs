//! One differentiable training step: forward through the tape, hand-written
//! rasterizer/loss backward, tape sweep, regularizers.

use crate::diff::backward::rasterize_backward;
use crate::diff::loss::{reconstruction_loss_backward, LossReport};
use crate::diff::model::{forward_splats, Avatar};
use crate::diff::params::BlockId;
use crate::diff::tape::Tape;
use crate::error::{Error, Result};
use crate::image::Imagef;
use crate::mesh::PoseFrame;
use crate::render::{rasterize, Camera, RasterSettings};

#[derive(Debug, Clone, Copy)]
pub struct StepConfig {
    /// DSSIM weight in the image loss.
    pub lambda: f64,
    /// L2 weight on the sampled frame's pose refinement.
    pub reg_pose_delta: f64,
    /// L2 weight on the canonical vertex offsets.
    pub reg_vertex_offsets: f64,
    pub settings: RasterSettings,
}

pub struct StepOutput {
    pub report: LossReport,
    pub grad: Vec<f64>,
    /// Positional-gradient magnitude |dL/dmean2d| per surviving splat,
    /// keyed by source Gaussian index (densification statistic).
    pub splat_mean_grads: Vec<(usize, f64)>,
    pub n_splats: usize,
    pub rendered: Imagef,
}

fn regularizer_terms(
    avatar: &Avatar,
    values: &[f64],
    frame_idx: Option<usize>,
    cfg: &StepConfig,
) -> (f64, f64) {
    let layout = avatar.layout();
    let mut pose_term = 0.0;
    if let Some(fi) = frame_idx {
        if cfg.reg_pose_delta > 0.0 {
            for &d in &values[layout.pose_delta_range(fi)] {
                pose_term += d * d;
            }
            pose_term *= cfg.reg_pose_delta;
        }
    }
    let mut vert_term = 0.0;
    if cfg.reg_vertex_offsets > 0.0 {
        for &o in &values[layout.block_range(BlockId::VertexOffsets)] {
            vert_term += o * o;
        }
        vert_term *= cfg.reg_vertex_offsets;
    }
    (pose_term, vert_term)
}

/// Forward-only scalar loss (the oracle side of the gradient checks and the
/// NaN watchdog in the fit loop).
pub fn loss_forward(
    avatar: &Avatar,
    values: &[f64],
    pose: &PoseFrame,
    frame_idx: Option<usize>,
    camera: &Camera,
    target: &Imagef,
    cfg: &StepConfig,
) -> Result<LossReport> {
    let (splats, _) = forward_splats(avatar, values, pose, frame_idx, camera, &cfg.settings, |x| x)?;
    let img = rasterize(&splats, camera.width, camera.height, &cfg.settings)?;
    let mut report = crate::diff::loss::reconstruction_loss(&img, target, cfg.lambda)?;
    let (pose_term, vert_term) = regularizer_terms(avatar, values, frame_idx, cfg);
    report.regularizers.insert("pose_delta".into(), pose_term);
    report
        .regularizers
        .insert("vertex_offsets".into(), vert_term);
    report.total += pose_term + vert_term;
    Ok(report)
}

/// Loss and the gradient with respect to every parameter in the layout.
pub fn loss_and_grad(
    avatar: &Avatar,
    values: &[f64],
    pose: &PoseFrame,
    frame_idx: Option<usize>,
    camera: &Camera,
    target: &Imagef,
    cfg: &StepConfig,
    tape: &Tape,
) -> Result<StepOutput> {
    tape.clear();
    let vars = tape.vars(values);
    let (splat_vars, sources) = forward_splats(
        avatar,
        &vars,
        pose,
        frame_idx,
        camera,
        &cfg.settings,
        |x| tape.var(x),
    )?;
    let splats: Vec<_> = splat_vars.iter().map(|s| s.to_f64()).collect();
    let rendered = rasterize(&splats, camera.width, camera.height, &cfg.settings)?;
    let (mut report, dimg) = reconstruction_loss_backward(&rendered, target, cfg.lambda)?;
    let pixel_grad: Vec<[f64; 4]> = dimg.iter().map(|g| [g[0], g[1], g[2], 0.0]).collect();
    let sgrads = rasterize_backward(&splats, camera.width, camera.height, &cfg.settings, &pixel_grad)?;

    let mut seeds = Vec::with_capacity(splats.len() * 9);
    let mut splat_mean_grads = Vec::with_capacity(splats.len());
    for (i, sv) in splat_vars.iter().enumerate() {
        let g = &sgrads[i];
        seeds.push((sv.mean[0].idx, g.mean[0]));
        seeds.push((sv.mean[1].idx, g.mean[1]));
        seeds.push((sv.cov[0].idx, g.cov[0]));
        seeds.push((sv.cov[1].idx, g.cov[1]));
        seeds.push((sv.cov[2].idx, g.cov[2]));
        seeds.push((sv.color[0].idx, g.color[0]));
        seeds.push((sv.color[1].idx, g.color[1]));
        seeds.push((sv.color[2].idx, g.color[2]));
        seeds.push((sv.opacity.idx, g.opacity));
        splat_mean_grads.push((sources[i], (g.mean[0] * g.mean[0] + g.mean[1] * g.mean[1]).sqrt()));
    }
    let adj = tape.backward(&seeds);
    let layout = avatar.layout();
    let mut grad: Vec<f64> = adj[..layout.total_len()].to_vec();

    // Regularizers enter the gradient analytically.
    let (pose_term, vert_term) = regularizer_terms(avatar, values, frame_idx, cfg);
    if let Some(fi) = frame_idx {
        if cfg.reg_pose_delta > 0.0 {
            for i in layout.pose_delta_range(fi) {
                grad[i] += 2.0 * cfg.reg_pose_delta * values[i];
            }
        }
    }
    if cfg.reg_vertex_offsets > 0.0 {
        for i in layout.block_range(BlockId::VertexOffsets) {
            grad[i] += 2.0 * cfg.reg_vertex_offsets * values[i];
        }
    }
    report.regularizers.insert("pose_delta".into(), pose_term);
    report
        .regularizers
        .insert("vertex_offsets".into(), vert_term);
    report.total += pose_term + vert_term;

    // A non-finite gradient is a hard failure; name the offending block.
    for (i, g) in grad.iter().enumerate() {
        if !g.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite gradient in block '{}' at index {i}",
                layout.block_of(i).name()
            )));
        }
    }

    Ok(StepOutput {
        report,
        grad,
        splat_mean_grads,
        n_splats: splats.len(),
        rendered,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::model::tests::{test_avatar, test_camera};

    #[test]
    fn zero_loss_configuration_has_zero_gradient() {
        let avatar = test_avatar(1);
        let pose = PoseFrame::identity(2);
        let cam = test_camera();
        let cfg = StepConfig {
            lambda: 0.2,
            reg_pose_delta: 0.0,
            reg_vertex_offsets: 0.0,
            settings: RasterSettings::default(),
        };
        let values = avatar.gather();
        // Target = the avatar's own render.
        let target =
            crate::diff::model::render_frame(&avatar, &pose, Some(0), &cam, &cfg.settings).unwrap();
        let tape = Tape::new();
        let out = loss_and_grad(&avatar, &values, &pose, Some(0), &cam, &target, &cfg, &tape).unwrap();
        assert!(out.report.total.abs() < 1e-12);
        for g in &out.grad {
            assert!(g.abs() < 1e-9, "gradient {g} should vanish at zero loss");
        }
    }

    #[test]
    fn culled_gaussians_receive_zero_image_gradient() {
        let avatar = test_avatar(1);
        // Push one Gaussian's face behind the camera by moving every vertex
        // it references: simpler, shrink it to nothing off-screen by huge
        // offset logit? Instead: make the camera tiny so some splats cull.
        let pose = PoseFrame::identity(2);
        let mut cam = test_camera();
        cam.world_to_camera.t.x = 10.0; // everything far off-axis culls
        let cfg = StepConfig {
            lambda: 0.2,
            reg_pose_delta: 0.0,
            reg_vertex_offsets: 0.0,
            settings: RasterSettings::default(),
        };
        avatar.validate().unwrap();
        let values = avatar.gather();
        let target = Imagef::new(16, 16);
        let tape = Tape::new();
        let out = loss_and_grad(&avatar, &values, &pose, Some(0), &cam, &target, &cfg, &tape).unwrap();
        assert_eq!(out.n_splats, 0);
        for g in &out.grad {
            assert_eq!(*g, 0.0);
        }
    }
}
