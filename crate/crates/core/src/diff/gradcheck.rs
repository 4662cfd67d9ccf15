//! Central-difference verification of the analytic gradients on randomized
//! small scenes, block by block.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::diff::model::Avatar;
use crate::diff::params::{BlockId, PoseDelta};
use crate::diff::step::{loss_and_grad, loss_forward, StepConfig};
use crate::diff::tape::Tape;
use crate::error::Result;
use crate::image::Imagef;
use crate::lighting::{Activation, LightingNet};
use crate::math::{logit, Mat3f, Rigidf, Vec3};
use crate::mesh::{ArticulatedMesh, FaceSide, PoseFrame, ROOT_PARENT};
use crate::render::{Camera, RasterSettings};
use crate::surfgauss::SurfaceGaussian;

#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    pub scenes: usize,
    pub gaussians: usize,
    pub resolution: usize,
    pub h: f64,
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            scenes: 10,
            gaussians: 4,
            resolution: 16,
            h: 1e-6,
            rel_tol: 1e-4,
            abs_tol: 1e-7,
            seed: 20240,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct BlockStats {
    pub checked: usize,
    pub failures: usize,
    pub worst_rel: f64,
    pub worst_abs: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub blocks: BTreeMap<&'static str, BlockStats>,
    pub scenes: usize,
    pub passed: bool,
}

impl GradCheckReport {
    pub fn render_text(&self) -> String {
        use std::fmt::Write;
        let mut out = String::new();
        writeln!(out, "gradient check over {} scenes", self.scenes).unwrap();
        for (name, b) in &self.blocks {
            writeln!(
                out,
                "  {:<16} checked {:>6}  failures {:>3}  worst_rel {:.3e}  worst_abs {:.3e}",
                name, b.checked, b.failures, b.worst_rel, b.worst_abs
            )
            .unwrap();
        }
        writeln!(out, "result: {}", if self.passed { "PASS" } else { "FAIL" }).unwrap();
        out
    }
}

/// A randomized scene: two-face quad on a two-joint chain, a small lighting
/// net, two frames with nonzero refinements, random targets.
pub struct CheckScene {
    pub avatar: Avatar,
    pub poses: Vec<PoseFrame>,
    pub camera: Camera,
    pub targets: Vec<Imagef>,
    pub cfg: StepConfig,
}

pub fn build_scene(seed: u64, n_gaussians: usize, resolution: usize) -> CheckScene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mesh = ArticulatedMesh {
        rest_vertices: vec![
            Vec3::new(-0.05, -0.05, 0.35),
            Vec3::new(0.05, -0.05, 0.36),
            Vec3::new(-0.05, 0.05, 0.34),
            Vec3::new(0.05, 0.05, 0.35),
        ],
        faces: vec![[0, 1, 2], [1, 3, 2]],
        joint_parents: vec![ROOT_PARENT, 0],
        joint_rest_transforms: vec![
            Rigidf::IDENTITY,
            Rigidf {
                r: Mat3f::IDENTITY,
                t: Vec3::new(0.05, 0.0, 0.35),
            },
        ],
        skin_weights: vec![
            vec![(0, 1.0)],
            vec![(0, 0.4), (1, 0.6)],
            vec![(0, 0.7), (1, 0.3)],
            vec![(1, 1.0)],
        ],
        face_side_labels: vec![FaceSide::Palm, FaceSide::Back],
    };

    // Anisotropic scales well away from isotropy keep the eigen-angle path
    // well-conditioned for finite differences.
    let gaussians: Vec<SurfaceGaussian> = (0..n_gaussians)
        .map(|i| SurfaceGaussian {
            face_id: (i % 2) as u32,
            bary_logits: [
                rng.gen_range(-0.8..0.8),
                rng.gen_range(-0.8..0.8),
                rng.gen_range(-0.8..0.8),
            ],
            log_scales: [
                (rng.gen_range(0.025..0.04) as f64).ln(),
                (rng.gen_range(0.008..0.015) as f64).ln(),
            ],
            rotation_phi: rng.gen_range(-2.0..2.0),
            offset_logit: rng.gen_range(-1.0..1.0),
            albedo_logits: [
                logit(rng.gen_range(0.25..0.75)),
                logit(rng.gen_range(0.25..0.75)),
                logit(rng.gen_range(0.25..0.75)),
            ],
            opacity_logit: logit(rng.gen_range(0.4..0.8)),
        })
        .collect();

    let net = LightingNet::init(6, vec![6, 6], 1, Activation::Softplus, &mut rng);
    let mut avatar = Avatar::new(mesh, gaussians, net, 2, 0.002, false);
    for o in avatar.vertex_offsets.iter_mut() {
        *o = Vec3::new(
            rng.gen_range(-0.002..0.002),
            rng.gen_range(-0.002..0.002),
            rng.gen_range(-0.002..0.002),
        );
    }
    for d in avatar.pose_deltas.iter_mut() {
        *d = PoseDelta {
            joint_rotations: (0..2)
                .map(|_| {
                    [
                        rng.gen_range(-0.02..0.02),
                        rng.gen_range(-0.02..0.02),
                        rng.gen_range(-0.02..0.02),
                    ]
                })
                .collect(),
            root_translation: [
                rng.gen_range(-0.002..0.002),
                rng.gen_range(-0.002..0.002),
                rng.gen_range(-0.002..0.002),
            ],
        };
    }

    let poses: Vec<PoseFrame> = (0..2)
        .map(|_| PoseFrame {
            joint_rotations: (0..2)
                .map(|_| {
                    [
                        rng.gen_range(-0.3..0.3),
                        rng.gen_range(-0.3..0.3),
                        rng.gen_range(-0.3..0.3),
                    ]
                })
                .collect(),
            root_translation: [
                rng.gen_range(-0.01..0.01),
                rng.gen_range(-0.01..0.01),
                rng.gen_range(-0.01..0.01),
            ],
        })
        .collect();

    let camera = Camera {
        fx: 2.5 * resolution as f64,
        fy: 2.5 * resolution as f64,
        cx: resolution as f64 / 2.0,
        cy: resolution as f64 / 2.0,
        width: resolution,
        height: resolution,
        world_to_camera: Rigidf::IDENTITY,
    };

    let targets: Vec<Imagef> = (0..2)
        .map(|_| Imagef {
            width: resolution,
            height: resolution,
            data: (0..resolution * resolution)
                .map(|_| {
                    [
                        rng.gen_range(0.0..0.4),
                        rng.gen_range(0.0..0.4),
                        rng.gen_range(0.0..0.4),
                        1.0,
                    ]
                })
                .collect(),
        })
        .collect();

    let cfg = StepConfig {
        lambda: 0.2,
        reg_pose_delta: 1e-3,
        reg_vertex_offsets: 1e-2,
        settings: RasterSettings::default(),
    };

    CheckScene {
        avatar,
        poses,
        camera,
        targets,
        cfg,
    }
}

/// Total scene loss: both frames rendered and summed (so every pose-delta
/// slot carries an image gradient).
fn scene_loss(scene: &CheckScene, values: &[f64]) -> Result<f64> {
    let mut total = 0.0;
    for f in 0..scene.poses.len() {
        total += loss_forward(
            &scene.avatar,
            values,
            &scene.poses[f],
            Some(f),
            &scene.camera,
            &scene.targets[f],
            &scene.cfg,
        )?
        .total;
    }
    Ok(total)
}

fn scene_grad(scene: &CheckScene, values: &[f64], tape: &Tape) -> Result<Vec<f64>> {
    let mut grad = vec![0.0; values.len()];
    for f in 0..scene.poses.len() {
        let out = loss_and_grad(
            &scene.avatar,
            values,
            &scene.poses[f],
            Some(f),
            &scene.camera,
            &scene.targets[f],
            &scene.cfg,
            tape,
        )?;
        for (g, o) in grad.iter_mut().zip(&out.grad) {
            *g += o;
        }
    }
    Ok(grad)
}

/// Run the verification. Every parameter of every block is compared against
/// a central difference of the full scene loss.
pub fn run_gradcheck(cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let mut blocks: BTreeMap<&'static str, BlockStats> = BTreeMap::new();
    for id in BlockId::ALL {
        blocks.insert(id.name(), BlockStats::default());
    }
    let tape = Tape::new();
    for scene_idx in 0..cfg.scenes {
        let scene = build_scene(cfg.seed.wrapping_add(scene_idx as u64), cfg.gaussians, cfg.resolution);
        let layout = scene.avatar.layout();
        let values = scene.avatar.gather();
        let analytic = scene_grad(&scene, &values, &tape)?;
        for i in 0..values.len() {
            let mut plus = values.clone();
            plus[i] += cfg.h;
            let mut minus = values.clone();
            minus[i] -= cfg.h;
            let fd = (scene_loss(&scene, &plus)? - scene_loss(&scene, &minus)?) / (2.0 * cfg.h);
            let an = analytic[i];
            let diff = (an - fd).abs();
            let rel = diff / fd.abs().max(1e-8);
            let ok = diff <= cfg.abs_tol || rel <= cfg.rel_tol;
            let stats = blocks.get_mut(layout.block_of(i).name()).unwrap();
            stats.checked += 1;
            stats.worst_abs = stats.worst_abs.max(diff);
            if fd.abs() >= 1e-8 {
                stats.worst_rel = stats.worst_rel.max(rel);
            }
            if !ok {
                stats.failures += 1;
            }
        }
    }
    let passed = blocks.values().all(|b| b.failures == 0);
    Ok(GradCheckReport {
        blocks,
        scenes: cfg.scenes,
        passed,
    })
}
