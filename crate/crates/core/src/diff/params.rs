//! Flattened parameter vector with a named block layout.
//!
//! Block order: per-Gaussian parameters, canonical vertex offsets, lighting
//! network weights, per-frame pose refinements. Pose refinements store J*3
//! joint rotations followed by the 3 root-translation entries per frame.

use std::ops::Range;

use crate::math::{Vec3, Vec3f};
use crate::surfgauss::{SurfaceGaussian, GAUSSIAN_PARAM_COUNT};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BlockId {
    Gaussians,
    VertexOffsets,
    Lighting,
    PoseDeltas,
}

impl BlockId {
    pub const ALL: [BlockId; 4] = [
        BlockId::Gaussians,
        BlockId::VertexOffsets,
        BlockId::Lighting,
        BlockId::PoseDeltas,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BlockId::Gaussians => "gaussians",
            BlockId::VertexOffsets => "vertex_offsets",
            BlockId::Lighting => "lighting",
            BlockId::PoseDeltas => "pose_deltas",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamLayout {
    pub n_gaussians: usize,
    pub n_vertices: usize,
    pub lighting_len: usize,
    pub n_frames: usize,
    pub n_joints: usize,
}

impl ParamLayout {
    pub fn pose_frame_stride(&self) -> usize {
        self.n_joints * 3 + 3
    }

    pub fn block_range(&self, id: BlockId) -> Range<usize> {
        let g = self.n_gaussians * GAUSSIAN_PARAM_COUNT;
        let v = self.n_vertices * 3;
        let l = self.lighting_len;
        let p = self.n_frames * self.pose_frame_stride();
        match id {
            BlockId::Gaussians => 0..g,
            BlockId::VertexOffsets => g..g + v,
            BlockId::Lighting => g + v..g + v + l,
            BlockId::PoseDeltas => g + v + l..g + v + l + p,
        }
    }

    pub fn total_len(&self) -> usize {
        self.block_range(BlockId::PoseDeltas).end
    }

    pub fn gaussian_range(&self, g: usize) -> Range<usize> {
        let start = self.block_range(BlockId::Gaussians).start + g * GAUSSIAN_PARAM_COUNT;
        start..start + GAUSSIAN_PARAM_COUNT
    }

    pub fn pose_delta_range(&self, frame: usize) -> Range<usize> {
        let stride = self.pose_frame_stride();
        let start = self.block_range(BlockId::PoseDeltas).start + frame * stride;
        start..start + stride
    }

    /// Which block an index belongs to (diagnostics).
    pub fn block_of(&self, index: usize) -> BlockId {
        for id in BlockId::ALL {
            if self.block_range(id).contains(&index) {
                return id;
            }
        }
        BlockId::PoseDeltas
    }
}

/// Per-frame pose refinement, added to the dataset pose before posing.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PoseDelta {
    pub joint_rotations: Vec<[f64; 3]>,
    pub root_translation: [f64; 3],
}

impl PoseDelta {
    pub fn zero(joints: usize) -> Self {
        PoseDelta {
            joint_rotations: vec![[0.0; 3]; joints],
            root_translation: [0.0; 3],
        }
    }

    pub fn max_rotation_norm(&self) -> f64 {
        self.joint_rotations
            .iter()
            .map(|r| (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt())
            .fold(0.0, f64::max)
    }
}

/// Gather the learnable state into one flat vector following `layout`.
pub fn gather(
    layout: &ParamLayout,
    gaussians: &[SurfaceGaussian],
    vertex_offsets: &[Vec3f],
    lighting_params: &[f64],
    pose_deltas: &[PoseDelta],
) -> Vec<f64> {
    assert_eq!(gaussians.len(), layout.n_gaussians);
    assert_eq!(vertex_offsets.len(), layout.n_vertices);
    assert_eq!(lighting_params.len(), layout.lighting_len);
    assert_eq!(pose_deltas.len(), layout.n_frames);
    let mut out = Vec::with_capacity(layout.total_len());
    for g in gaussians {
        out.extend_from_slice(&g.to_params());
    }
    for v in vertex_offsets {
        out.extend_from_slice(&v.to_array());
    }
    out.extend_from_slice(lighting_params);
    for d in pose_deltas {
        for r in &d.joint_rotations {
            out.extend_from_slice(r);
        }
        out.extend_from_slice(&d.root_translation);
    }
    debug_assert_eq!(out.len(), layout.total_len());
    out
}

/// Scatter a flat vector back into structured state. Face ids are not part
/// of the vector and come from the existing Gaussians.
pub fn scatter(
    layout: &ParamLayout,
    values: &[f64],
    gaussians: &mut [SurfaceGaussian],
    vertex_offsets: &mut [Vec3f],
    lighting_params: &mut [f64],
    pose_deltas: &mut [PoseDelta],
) {
    assert_eq!(values.len(), layout.total_len());
    for (g, chunk) in gaussians
        .iter_mut()
        .zip(values[layout.block_range(BlockId::Gaussians)].chunks_exact(GAUSSIAN_PARAM_COUNT))
    {
        *g = SurfaceGaussian::from_params(g.face_id, chunk);
    }
    for (v, chunk) in vertex_offsets
        .iter_mut()
        .zip(values[layout.block_range(BlockId::VertexOffsets)].chunks_exact(3))
    {
        *v = Vec3::new(chunk[0], chunk[1], chunk[2]);
    }
    lighting_params.copy_from_slice(&values[layout.block_range(BlockId::Lighting)]);
    let stride = layout.pose_frame_stride();
    for (d, chunk) in pose_deltas
        .iter_mut()
        .zip(values[layout.block_range(BlockId::PoseDeltas)].chunks_exact(stride))
    {
        for (j, r) in d.joint_rotations.iter_mut().enumerate() {
            r.copy_from_slice(&chunk[j * 3..j * 3 + 3]);
        }
        d.root_translation
            .copy_from_slice(&chunk[stride - 3..stride]);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::logit;
    use rand::{Rng, SeedableRng};

    #[test]
    fn blocks_are_disjoint_and_exhaustive() {
        let layout = ParamLayout {
            n_gaussians: 3,
            n_vertices: 4,
            lighting_len: 17,
            n_frames: 2,
            n_joints: 2,
        };
        let mut covered = vec![0u8; layout.total_len()];
        for id in BlockId::ALL {
            for i in layout.block_range(id) {
                covered[i] += 1;
            }
        }
        assert!(covered.iter().all(|&c| c == 1));
        assert_eq!(layout.total_len(), 3 * 11 + 12 + 17 + 2 * 9);
    }

    #[test]
    fn gather_scatter_roundtrip_is_identity() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        let layout = ParamLayout {
            n_gaussians: 2,
            n_vertices: 3,
            lighting_len: 5,
            n_frames: 2,
            n_joints: 1,
        };
        let gaussians: Vec<SurfaceGaussian> = (0..2)
            .map(|i| SurfaceGaussian {
                face_id: i,
                bary_logits: [rng.gen(), rng.gen(), rng.gen()],
                log_scales: [rng.gen(), rng.gen()],
                rotation_phi: rng.gen(),
                offset_logit: rng.gen(),
                albedo_logits: [logit(0.3), logit(0.6), logit(0.9)],
                opacity_logit: rng.gen(),
            })
            .collect();
        let offsets: Vec<Vec3f> = (0..3)
            .map(|_| Vec3::new(rng.gen(), rng.gen(), rng.gen()))
            .collect();
        let lighting: Vec<f64> = (0..5).map(|_| rng.gen()).collect();
        let deltas: Vec<PoseDelta> = (0..2)
            .map(|_| PoseDelta {
                joint_rotations: vec![[rng.gen(), rng.gen(), rng.gen()]],
                root_translation: [rng.gen(), rng.gen(), rng.gen()],
            })
            .collect();

        let flat = gather(&layout, &gaussians, &offsets, &lighting, &deltas);
        let mut g2 = gaussians.clone();
        let mut o2 = offsets.clone();
        let mut l2 = lighting.clone();
        let mut d2 = deltas.clone();
        // Perturb, then scatter the original values back.
        g2[0].rotation_phi += 1.0;
        o2[1].x -= 2.0;
        l2[3] = 0.0;
        d2[1].root_translation[2] = 9.0;
        scatter(&layout, &flat, &mut g2, &mut o2, &mut l2, &mut d2);
        assert_eq!(g2, gaussians);
        assert_eq!(o2, offsets);
        assert_eq!(l2, lighting);
        assert_eq!(d2, deltas);
        // And gather again reproduces the same flat vector.
        assert_eq!(gather(&layout, &g2, &o2, &l2, &d2), flat);
    }
}
