//! Procedural datasets with known ground truth: a textured mesh, a scripted
//! pose sequence, fixed order-2 lighting, and frames rendered by the
//! reference rasterizer from a ground-truth Gaussian set. Fitting such a
//! dataset has a known optimum, and the generating checkpoint rides along
//! as `gt_checkpoint.ckpt`.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::{self, Checkpoint};
use crate::dataset::{rigid_to_rows, CameraView, CamerasFile, Dataset, PosesFile};
use crate::diff::model::{forward_splats, Avatar};
use crate::error::Result;
use crate::image::{write_mask, write_png, PngDepth};
use crate::lighting::{basis_count, LightingNet, ShCoefficients};
use crate::math::{axis_angle_to_matrix, logit, Mat3f, Rigidf, Vec3, Vec3f};
use crate::mesh::{io as mesh_io, ArticulatedMesh, FaceSide, PoseFrame, ROOT_PARENT};
use crate::render::{rasterize_reference, RasterSettings};
use crate::surfgauss::SurfaceGaussian;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SyntheticKind {
    Quad,
    Icosphere,
    TwoBoneCylinder,
}

impl SyntheticKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "quad" => Some(SyntheticKind::Quad),
            "icosphere" => Some(SyntheticKind::Icosphere),
            "two-bone-cylinder" => Some(SyntheticKind::TwoBoneCylinder),
            _ => None,
        }
    }

    fn resolution(self) -> usize {
        match self {
            SyntheticKind::Quad => 48,
            _ => 64,
        }
    }

    fn n_poses(self) -> usize {
        match self {
            SyntheticKind::Quad => 5,
            SyntheticKind::Icosphere => 20,
            SyntheticKind::TwoBoneCylinder => 8,
        }
    }
}

fn icosahedron() -> (Vec<Vec3f>, Vec<[u32; 3]>) {
    let phi = (1.0 + 5.0f64.sqrt()) / 2.0;
    let verts = vec![
        Vec3::new(-1.0, phi, 0.0),
        Vec3::new(1.0, phi, 0.0),
        Vec3::new(-1.0, -phi, 0.0),
        Vec3::new(1.0, -phi, 0.0),
        Vec3::new(0.0, -1.0, phi),
        Vec3::new(0.0, 1.0, phi),
        Vec3::new(0.0, -1.0, -phi),
        Vec3::new(0.0, 1.0, -phi),
        Vec3::new(phi, 0.0, -1.0),
        Vec3::new(phi, 0.0, 1.0),
        Vec3::new(-phi, 0.0, -1.0),
        Vec3::new(-phi, 0.0, 1.0),
    ];
    let faces = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    (verts, faces)
}

/// Subdivide each triangle into four, splitting edges at midpoints.
fn subdivide(verts: &mut Vec<Vec3f>, faces: &[[u32; 3]]) -> Vec<[u32; 3]> {
    use std::collections::HashMap;
    let mut midpoints: HashMap<(u32, u32), u32> = HashMap::new();
    let mut out = Vec::with_capacity(faces.len() * 4);
    let mut mid = |a: u32, b: u32, verts: &mut Vec<Vec3f>| -> u32 {
        let key = (a.min(b), a.max(b));
        *midpoints.entry(key).or_insert_with(|| {
            let m = (verts[a as usize] + verts[b as usize]) * 0.5;
            verts.push(m);
            (verts.len() - 1) as u32
        })
    };
    for f in faces {
        let ab = mid(f[0], f[1], verts);
        let bc = mid(f[1], f[2], verts);
        let ca = mid(f[2], f[0], verts);
        out.push([f[0], ab, ca]);
        out.push([f[1], bc, ab]);
        out.push([f[2], ca, bc]);
        out.push([ab, bc, ca]);
    }
    out
}

fn build_icosphere_mesh(radius: f64) -> ArticulatedMesh {
    let (mut verts, mut faces) = icosahedron();
    for _ in 0..2 {
        faces = subdivide(&mut verts, &faces);
    }
    for v in verts.iter_mut() {
        *v = v.normalized().scale(radius);
    }
    let face_side_labels = faces
        .iter()
        .map(|f| {
            let c = (verts[f[0] as usize] + verts[f[1] as usize] + verts[f[2] as usize])
                * (1.0 / 3.0);
            if c.x >= 0.0 {
                FaceSide::Palm
            } else {
                FaceSide::Back
            }
        })
        .collect();
    let nv = verts.len();
    ArticulatedMesh {
        rest_vertices: verts,
        faces,
        joint_parents: vec![ROOT_PARENT],
        joint_rest_transforms: vec![Rigidf::IDENTITY],
        skin_weights: vec![vec![(0, 1.0)]; nv],
        face_side_labels,
    }
}

fn build_quad_mesh() -> ArticulatedMesh {
    let half = 0.05;
    ArticulatedMesh {
        rest_vertices: vec![
            Vec3::new(-half, -half, 0.0),
            Vec3::new(half, -half, 0.0),
            Vec3::new(-half, half, 0.0),
            Vec3::new(half, half, 0.0),
        ],
        faces: vec![[0, 1, 2], [1, 3, 2]],
        joint_parents: vec![ROOT_PARENT],
        joint_rest_transforms: vec![Rigidf::IDENTITY],
        skin_weights: vec![vec![(0, 1.0)]; 4],
        face_side_labels: vec![FaceSide::Palm, FaceSide::Back],
    }
}

fn build_cylinder_mesh() -> ArticulatedMesh {
    let radius = 0.02;
    let half_len = 0.06;
    let segments = 12usize;
    let rings = 9usize;
    let mut verts = Vec::with_capacity(segments * rings);
    for ri in 0..rings {
        let x = -half_len + 2.0 * half_len * ri as f64 / (rings - 1) as f64;
        for si in 0..segments {
            let a = si as f64 / segments as f64 * std::f64::consts::TAU;
            verts.push(Vec3::new(x, radius * a.cos(), radius * a.sin()));
        }
    }
    let mut faces = Vec::new();
    for ri in 0..rings - 1 {
        for si in 0..segments {
            let a = (ri * segments + si) as u32;
            let b = (ri * segments + (si + 1) % segments) as u32;
            let c = ((ri + 1) * segments + si) as u32;
            let d = ((ri + 1) * segments + (si + 1) % segments) as u32;
            faces.push([a, b, c]);
            faces.push([b, d, c]);
        }
    }
    let face_side_labels = faces
        .iter()
        .map(|f: &[u32; 3]| {
            let c = (verts[f[0] as usize] + verts[f[1] as usize] + verts[f[2] as usize])
                * (1.0 / 3.0);
            if c.z >= 0.0 {
                FaceSide::Palm
            } else {
                FaceSide::Back
            }
        })
        .collect();
    // Root drives the -x half, the child joint at the origin bends +x.
    let child_rest = Rigidf {
        r: Mat3f::IDENTITY,
        t: Vec3f::ZERO,
    };
    let skin_weights = verts
        .iter()
        .map(|v| {
            // Smooth blend across the joint over a 2 cm band.
            let t = ((v.x + 0.01) / 0.02).clamp(0.0, 1.0);
            let w = t * t * (3.0 - 2.0 * t);
            if w <= 0.0 {
                vec![(0u32, 1.0)]
            } else if w >= 1.0 {
                vec![(1u32, 1.0)]
            } else {
                vec![(0u32, 1.0 - w), (1u32, w)]
            }
        })
        .collect();
    ArticulatedMesh {
        rest_vertices: verts,
        faces,
        joint_parents: vec![ROOT_PARENT, 0],
        joint_rest_transforms: vec![Rigidf::IDENTITY, child_rest],
        skin_weights,
        face_side_labels,
    }
}

/// Deterministic order-2 dual environment used by every synthetic set:
/// warm palm side, cool back side, DC-dominant so irradiance stays positive.
pub fn ground_truth_environment() -> (ShCoefficients, ShCoefficients) {
    let nb = basis_count(2);
    let mut palm = ShCoefficients::zeros(2);
    let mut back = ShCoefficients::zeros(2);
    let palm_dc = [2.6, 2.3, 2.0];
    let back_dc = [1.9, 2.1, 2.5];
    for ch in 0..3 {
        palm.coeffs[ch * nb] = palm_dc[ch];
        back.coeffs[ch * nb] = back_dc[ch];
        // Mild directional structure, well inside the positive regime.
        palm.coeffs[ch * nb + 1] = 0.35 - 0.1 * ch as f64;
        palm.coeffs[ch * nb + 2] = 0.45;
        palm.coeffs[ch * nb + 3] = -0.25 + 0.05 * ch as f64;
        palm.coeffs[ch * nb + 4] = 0.18;
        palm.coeffs[ch * nb + 6] = 0.22;
        palm.coeffs[ch * nb + 8] = -0.15;
        back.coeffs[ch * nb + 1] = -0.3;
        back.coeffs[ch * nb + 2] = 0.4 + 0.05 * ch as f64;
        back.coeffs[ch * nb + 3] = 0.2;
        back.coeffs[ch * nb + 5] = 0.17;
        back.coeffs[ch * nb + 7] = -0.12;
    }
    (palm, back)
}

/// A lighting net that always outputs the given environments regardless of
/// pose (zero weights, bias = coefficients).
pub fn constant_environment_net(
    input_dim: usize,
    palm: &ShCoefficients,
    back: &ShCoefficients,
) -> LightingNet {
    let order = palm.order;
    let mut net = LightingNet::constant(input_dim, vec![8], order);
    let nb3 = 3 * basis_count(order);
    let bias_start = net.param_count() - net.output_dim();
    net.params[bias_start..bias_start + nb3].copy_from_slice(&palm.coeffs);
    net.params[bias_start + nb3..].copy_from_slice(&back.coeffs);
    net
}

fn checker_albedo(centroid: Vec3f, cell: f64) -> [f64; 3] {
    let parity = ((centroid.x / cell).floor() + (centroid.y / cell).floor()
        + (centroid.z / cell).floor()) as i64;
    if parity.rem_euclid(2) == 0 {
        [0.85, 0.35, 0.25]
    } else {
        [0.2, 0.45, 0.85]
    }
}

fn ground_truth_gaussians(mesh: &ArticulatedMesh, cell: f64, rng: &mut ChaCha8Rng) -> Vec<SurfaceGaussian> {
    (0..mesh.face_count())
        .map(|f| {
            let [v0, v1, v2] = mesh.face_vertices(f);
            let centroid = (v0 + v1 + v2) * (1.0 / 3.0);
            let albedo = checker_albedo(centroid, cell);
            let s0 = 0.8 * mesh.rest_face_area(f).sqrt();
            SurfaceGaussian {
                face_id: f as u32,
                bary_logits: [
                    rng.gen_range(-0.15..0.15),
                    rng.gen_range(-0.15..0.15),
                    rng.gen_range(-0.15..0.15),
                ],
                log_scales: [
                    (s0 * rng.gen_range(1.0..1.15)).ln(),
                    (s0 * rng.gen_range(0.8..0.95)).ln(),
                ],
                rotation_phi: rng.gen_range(0.0..std::f64::consts::PI),
                offset_logit: rng.gen_range(-0.3..0.3),
                albedo_logits: [logit(albedo[0]), logit(albedo[1]), logit(albedo[2])],
                opacity_logit: logit(0.97),
            }
        })
        .collect()
}

fn scripted_poses(kind: SyntheticKind) -> Vec<PoseFrame> {
    let t_total = kind.n_poses();
    (0..t_total)
        .map(|t| {
            let ft = t as f64;
            match kind {
                SyntheticKind::Quad => PoseFrame {
                    joint_rotations: vec![[0.05 * ft, 0.1 * ft, 0.25 * ft]],
                    root_translation: [0.002 * ft, -0.001 * ft, 0.0],
                },
                SyntheticKind::Icosphere => PoseFrame {
                    joint_rotations: vec![[
                        0.25 * (0.9 * ft).sin(),
                        ft * std::f64::consts::TAU / t_total as f64 * 0.9,
                        0.15 * (1.3 * ft).cos(),
                    ]],
                    root_translation: [0.001 * (0.5 * ft).sin(), 0.001 * (0.8 * ft).cos(), 0.0],
                },
                SyntheticKind::TwoBoneCylinder => PoseFrame {
                    joint_rotations: vec![
                        [0.0, 0.12 * ft, 0.05 * ft],
                        [0.0, 0.0, 0.85 * ft / t_total as f64],
                    ],
                    root_translation: [0.0, 0.0, 0.0],
                },
            }
        })
        .collect()
}

fn camera_views(kind: SyntheticKind) -> Vec<CameraView> {
    let res = kind.resolution();
    let distance = 0.35;
    // Three views on a small arc about the y axis.
    [-0.35f64, 0.0, 0.35]
        .iter()
        .map(|&angle| {
            let r = axis_angle_to_matrix(Vec3::new(0.0, angle, 0.0));
            let w2c = Rigidf {
                r,
                t: Vec3::new(0.0, 0.0, distance),
            };
            CameraView {
                fx: 2.8 * res as f64,
                fy: 2.8 * res as f64,
                cx: res as f64 / 2.0,
                cy: res as f64 / 2.0,
                width: res,
                height: res,
                world_to_camera: Some(rigid_to_rows(&w2c)),
                world_to_camera_per_frame: None,
            }
        })
        .collect()
}

/// Generate a dataset under `out`. Identical `kind` + `seed` produce
/// byte-identical trees.
pub fn make_synthetic(kind: SyntheticKind, out: &Path, seed: u64) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mesh = match kind {
        SyntheticKind::Quad => build_quad_mesh(),
        SyntheticKind::Icosphere => build_icosphere_mesh(0.05),
        SyntheticKind::TwoBoneCylinder => build_cylinder_mesh(),
    };
    mesh.validate()?;

    let cell = match kind {
        SyntheticKind::Quad => 0.025,
        SyntheticKind::Icosphere => 0.02,
        SyntheticKind::TwoBoneCylinder => 0.015,
    };
    let gaussians = ground_truth_gaussians(&mesh, cell, &mut rng);
    let (palm, back) = ground_truth_environment();
    let net = constant_environment_net(mesh.joint_count() * 3, &palm, &back);
    let poses = scripted_poses(kind);
    let avatar = Avatar::new(mesh, gaussians, net, poses.len(), 0.002, false);
    avatar.validate()?;

    let views = camera_views(kind);
    let settings = RasterSettings::default();

    std::fs::create_dir_all(out)?;
    mesh_io::save_mesh(&avatar.mesh, &out.join("mesh.obj"), &out.join("rig.json"))?;
    std::fs::write(
        out.join("poses.json"),
        serde_json::to_string_pretty(&PosesFile {
            frames: poses.clone(),
        })
        .unwrap(),
    )?;
    std::fs::write(
        out.join("cameras.json"),
        serde_json::to_string_pretty(&CamerasFile {
            views: views.clone(),
        })
        .unwrap(),
    )?;

    // Frames from the reference rasterizer; masks derived from view 0.
    let values = avatar.gather();
    for (vi, view) in views.iter().enumerate() {
        for (t, pose) in poses.iter().enumerate() {
            let cam = view.camera_for_frame(t)?;
            let (splats, _) =
                forward_splats(&avatar, &values, pose, None, &cam, &settings, |x| x)?;
            let img = rasterize_reference(&splats, cam.width, cam.height, &settings)?;
            let path = out
                .join("frames")
                .join(vi.to_string())
                .join(format!("{t:04}.png"));
            write_png(&img, &path, PngDepth::Sixteen)?;
            if vi == 0 {
                let hand: Vec<bool> = img.data.iter().map(|p| p[3] > 0.5).collect();
                write_mask(
                    &hand,
                    cam.width,
                    cam.height,
                    &out.join("masks").join(format!("{t:04}_hand.png")),
                )?;
                // A fixed disc in the corner stands in for a foreground
                // object during compositing tests.
                let cxy = cam.width as f64 * 0.18;
                let radius = cam.width as f64 * 0.1;
                let object: Vec<bool> = (0..cam.width * cam.height)
                    .map(|i| {
                        let x = (i % cam.width) as f64;
                        let y = (i / cam.width) as f64;
                        ((x - cxy).powi(2) + (y - cxy).powi(2)).sqrt() < radius
                    })
                    .collect();
                write_mask(
                    &object,
                    cam.width,
                    cam.height,
                    &out.join("masks").join(format!("{t:04}_object.png")),
                )?;
            }
        }
    }

    checkpoint::save(
        &Checkpoint {
            avatar,
            seed,
            optimizer: None,
            config_echo: None,
        },
        &out.join("gt_checkpoint.ckpt"),
    )?;

    Dataset::load(out)
}
