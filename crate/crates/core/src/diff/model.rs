//! The trainable avatar state and the shared image-formation forward pass.
//!
//! `forward_splats` is written once over the `Real` scalar: instantiated at
//! `f64` it is the inference renderer and the finite-difference oracle's
//! forward; instantiated at `Var` it records the differentiation tape for
//! training. Keeping one code path is what makes the gradient checks
//! meaningful.

use crate::diff::params::{gather, scatter, ParamLayout, PoseDelta};
use crate::error::{Error, Result};
use crate::lighting::{basis_count, shade, LightingNet};
use crate::math::{Real, Vec3, Vec3f};
use crate::mesh::{skin_lbs, skinning_transforms_lifted, ArticulatedMesh, PoseFrame};
use crate::render::{project_splat, Camera, RasterSettings, ScreenSplat};
use crate::surfgauss::{realize_world, GaussianParams, SurfaceGaussian};

/// Everything the optimizer touches, plus the fixed architecture choices
/// needed to interpret it.
#[derive(Debug, Clone)]
pub struct Avatar {
    pub mesh: ArticulatedMesh,
    /// Learnable canonical refinement added to the rest vertices.
    pub vertex_offsets: Vec<Vec3f>,
    pub gaussians: Vec<SurfaceGaussian>,
    pub net: LightingNet,
    /// Per-training-frame pose refinements.
    pub pose_deltas: Vec<PoseDelta>,
    /// Normal-offset bound in meters.
    pub z_max: f64,
    /// Whether the lighting net input includes the root translation.
    pub lighting_uses_root_translation: bool,
}

impl Avatar {
    /// Fresh avatar with default Gaussian initialization and zeroed deltas.
    pub fn new(
        mesh: ArticulatedMesh,
        gaussians: Vec<SurfaceGaussian>,
        net: LightingNet,
        n_frames: usize,
        z_max: f64,
        lighting_uses_root_translation: bool,
    ) -> Self {
        let nv = mesh.vertex_count();
        let nj = mesh.joint_count();
        Avatar {
            mesh,
            vertex_offsets: vec![Vec3f::ZERO; nv],
            gaussians,
            net,
            pose_deltas: vec![PoseDelta::zero(nj); n_frames],
            z_max,
            lighting_uses_root_translation,
        }
    }

    pub fn layout(&self) -> ParamLayout {
        ParamLayout {
            n_gaussians: self.gaussians.len(),
            n_vertices: self.mesh.vertex_count(),
            lighting_len: self.net.params.len(),
            n_frames: self.pose_deltas.len(),
            n_joints: self.mesh.joint_count(),
        }
    }

    pub fn gather(&self) -> Vec<f64> {
        gather(
            &self.layout(),
            &self.gaussians,
            &self.vertex_offsets,
            &self.net.params,
            &self.pose_deltas,
        )
    }

    pub fn scatter(&mut self, values: &[f64]) {
        let layout = self.layout();
        scatter(
            &layout,
            values,
            &mut self.gaussians,
            &mut self.vertex_offsets,
            &mut self.net.params,
            &mut self.pose_deltas,
        );
    }

    pub fn validate(&self) -> Result<()> {
        self.mesh.validate()?;
        self.net.validate()?;
        let expected_input = self.mesh.joint_count() * 3
            + if self.lighting_uses_root_translation { 3 } else { 0 };
        if self.net.input_dim != expected_input {
            return Err(Error::Dimension(format!(
                "lighting net input {} does not match pose dimension {expected_input}",
                self.net.input_dim
            )));
        }
        for g in &self.gaussians {
            g.check_invariants(self.mesh.face_count(), self.z_max)?;
        }
        for d in &self.pose_deltas {
            if d.joint_rotations.len() != self.mesh.joint_count() {
                return Err(Error::Dimension("pose delta joint count mismatch".into()));
            }
        }
        Ok(())
    }
}

/// Realize, shade and project every Gaussian for one frame.
///
/// `frame_idx` selects which pose refinement applies; `None` renders the
/// dataset pose as-is (novel poses have no learned refinement). Returns the
/// surviving screen splats together with the index of the Gaussian each one
/// came from.
pub fn forward_splats<T: Real>(
    avatar: &Avatar,
    values: &[T],
    pose: &PoseFrame,
    frame_idx: Option<usize>,
    camera: &Camera,
    settings: &RasterSettings,
    lift: impl Fn(f64) -> T + Copy,
) -> Result<(Vec<ScreenSplat<T>>, Vec<usize>)> {
    let layout = avatar.layout();
    if values.len() != layout.total_len() {
        return Err(Error::Dimension(format!(
            "parameter vector has {} entries, layout needs {}",
            values.len(),
            layout.total_len()
        )));
    }
    let nj = avatar.mesh.joint_count();
    if pose.joint_count() != nj {
        return Err(Error::Dimension(format!(
            "pose has {} joints, mesh has {nj}",
            pose.joint_count()
        )));
    }

    // Effective pose: dataset pose plus the frame's learnable refinement.
    let mut rotations: Vec<Vec3<T>> = pose
        .joint_rotations
        .iter()
        .map(|r| Vec3::new(lift(r[0]), lift(r[1]), lift(r[2])))
        .collect();
    let mut root_t = Vec3::new(
        lift(pose.root_translation[0]),
        lift(pose.root_translation[1]),
        lift(pose.root_translation[2]),
    );
    if let Some(fi) = frame_idx {
        if fi >= layout.n_frames {
            return Err(Error::Dimension(format!(
                "frame index {fi} out of {} refinement slots",
                layout.n_frames
            )));
        }
        let d = &values[layout.pose_delta_range(fi)];
        for (j, r) in rotations.iter_mut().enumerate() {
            *r = Vec3::new(r.x + d[j * 3], r.y + d[j * 3 + 1], r.z + d[j * 3 + 2]);
        }
        let stride = layout.pose_frame_stride();
        root_t = Vec3::new(
            root_t.x + d[stride - 3],
            root_t.y + d[stride - 2],
            root_t.z + d[stride - 1],
        );
    }

    let offsets: Vec<Vec3<T>> = values[layout.block_range(crate::diff::params::BlockId::VertexOffsets)]
        .chunks_exact(3)
        .map(|c| Vec3::new(c[0], c[1], c[2]))
        .collect();

    let transforms = skinning_transforms_lifted(&avatar.mesh, &rotations, root_t, lift)?;
    let canonical = avatar.mesh.canonical(Some(&offsets), lift);
    let deformed = skin_lbs(&avatar.mesh, &transforms, Some(&offsets), lift)?;

    // Lighting: the net sees the refined pose.
    let mut light_input: Vec<T> = Vec::with_capacity(avatar.net.input_dim);
    for r in &rotations {
        light_input.extend_from_slice(&[r.x, r.y, r.z]);
    }
    if avatar.lighting_uses_root_translation {
        light_input.extend_from_slice(&[root_t.x, root_t.y, root_t.z]);
    }
    let light_params = &values[layout.block_range(crate::diff::params::BlockId::Lighting)];
    let env_out = avatar.net.forward(light_params, &light_input)?;
    let nb3 = 3 * basis_count(avatar.net.sh_order);

    let mut splats = Vec::with_capacity(avatar.gaussians.len());
    let mut sources = Vec::with_capacity(avatar.gaussians.len());
    for (gi, g) in avatar.gaussians.iter().enumerate() {
        let p = &values[layout.gaussian_range(gi)];
        let params = GaussianParams {
            face_id: g.face_id,
            bary_logits: [p[0], p[1], p[2]],
            log_scales: [p[3], p[4]],
            rotation_phi: p[5],
            offset_logit: p[6],
            albedo_logits: [p[7], p[8], p[9]],
            opacity_logit: p[10],
        };
        let ws = realize_world(&params, &canonical, &deformed, &avatar.mesh.faces, avatar.z_max)?;
        let side = avatar.mesh.face_side_labels[g.face_id as usize];
        let env = match side {
            crate::mesh::FaceSide::Palm => &env_out[..nb3],
            crate::mesh::FaceSide::Back => &env_out[nb3..],
        };
        let color = shade(ws.albedo, env, avatar.net.sh_order, ws.normal)?;
        if let Some(sp) = project_splat(camera, &ws, color, settings) {
            splats.push(sp);
            sources.push(gi);
        }
    }
    Ok((splats, sources))
}

/// Plain-f64 render of one frame (inference path).
pub fn render_frame(
    avatar: &Avatar,
    pose: &PoseFrame,
    frame_idx: Option<usize>,
    camera: &Camera,
    settings: &RasterSettings,
) -> Result<crate::image::Imagef> {
    let values = avatar.gather();
    let (splats, _) = forward_splats(avatar, &values, pose, frame_idx, camera, settings, |x| x)?;
    crate::render::rasterize(&splats, camera.width, camera.height, settings)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::lighting::Activation;
    use crate::math::Rigidf;
    use crate::mesh::{FaceSide, ROOT_PARENT};
    use crate::surfgauss::init_per_face;
    use rand::SeedableRng;

    pub(crate) fn test_avatar(n_frames: usize) -> Avatar {
        let mesh = ArticulatedMesh {
            rest_vertices: vec![
                Vec3::new(-0.05, -0.05, 0.35),
                Vec3::new(0.05, -0.05, 0.35),
                Vec3::new(-0.05, 0.05, 0.35),
                Vec3::new(0.05, 0.05, 0.35),
            ],
            faces: vec![[0, 1, 2], [1, 3, 2]],
            joint_parents: vec![ROOT_PARENT, 0],
            joint_rest_transforms: vec![
                Rigidf::IDENTITY,
                Rigidf {
                    r: crate::math::Mat3f::IDENTITY,
                    t: Vec3::new(0.05, 0.0, 0.35),
                },
            ],
            skin_weights: vec![
                vec![(0, 1.0)],
                vec![(0, 0.5), (1, 0.5)],
                vec![(0, 1.0)],
                vec![(1, 1.0)],
            ],
            face_side_labels: vec![FaceSide::Palm, FaceSide::Back],
        };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let gaussians = init_per_face(&mesh, 2, 0.7, 0.5, 0.5, &mut rng);
        let net = LightingNet::init(6, vec![6, 6], 1, Activation::Softplus, &mut rng);
        Avatar::new(mesh, gaussians, net, n_frames, 0.002, false)
    }

    pub(crate) fn test_camera() -> Camera {
        Camera {
            fx: 40.0,
            fy: 40.0,
            cx: 8.0,
            cy: 8.0,
            width: 16,
            height: 16,
            world_to_camera: Rigidf::IDENTITY,
        }
    }

    #[test]
    fn forward_is_deterministic_and_renders_content() {
        let avatar = test_avatar(2);
        avatar.validate().unwrap();
        let pose = PoseFrame::identity(2);
        let cam = test_camera();
        let settings = RasterSettings::default();
        let img1 = render_frame(&avatar, &pose, Some(0), &cam, &settings).unwrap();
        let img2 = render_frame(&avatar, &pose, Some(0), &cam, &settings).unwrap();
        assert_eq!(img1, img2);
        let energy: f64 = img1.data.iter().map(|p| p[3]).sum();
        assert!(energy > 0.1, "the quad should cover pixels, alpha sum {energy}");
    }

    #[test]
    fn tape_forward_matches_plain_forward() {
        use crate::diff::tape::Tape;
        let avatar = test_avatar(2);
        let pose = PoseFrame {
            joint_rotations: vec![[0.1, -0.2, 0.3], [0.2, 0.1, -0.1]],
            root_translation: [0.01, -0.02, 0.0],
        };
        let cam = test_camera();
        let settings = RasterSettings::default();
        let values = avatar.gather();

        let (plain, src_plain) =
            forward_splats(&avatar, &values, &pose, Some(1), &cam, &settings, |x| x).unwrap();

        let tape = Tape::new();
        let vars = tape.vars(&values);
        let (taped, src_taped) =
            forward_splats(&avatar, &vars, &pose, Some(1), &cam, &settings, |x| tape.var(x))
                .unwrap();
        assert_eq!(src_plain, src_taped);
        assert_eq!(plain.len(), taped.len());
        for (a, b) in plain.iter().zip(&taped) {
            let b = b.to_f64();
            assert!((a.mean[0] - b.mean[0]).abs() < 1e-12);
            assert!((a.mean[1] - b.mean[1]).abs() < 1e-12);
            for i in 0..3 {
                assert!((a.cov[i] - b.cov[i]).abs() < 1e-12);
                assert!((a.color[i] - b.color[i]).abs() < 1e-12);
            }
            assert!((a.depth - b.depth).abs() < 1e-12);
            assert!((a.opacity - b.opacity).abs() < 1e-12);
        }
    }

    #[test]
    fn scatter_gather_preserves_render() {
        let mut avatar = test_avatar(1);
        let pose = PoseFrame::identity(2);
        let cam = test_camera();
        let settings = RasterSettings::default();
        let img1 = render_frame(&avatar, &pose, Some(0), &cam, &settings).unwrap();
        let values = avatar.gather();
        avatar.scatter(&values);
        let img2 = render_frame(&avatar, &pose, Some(0), &cam, &settings).unwrap();
        assert_eq!(img1, img2);
    }
}
