//! Articulated triangle meshes: forward kinematics, linear blend skinning,
//! per-face orthonormal frames, and closest-triangle queries.

mod closest;
pub mod io;
mod kinematics;

pub use closest::{closest_point_on_triangle, closest_triangle, closest_triangle_linear};
pub use kinematics::{forward_kinematics, skin_lbs, skinning_transforms, skinning_transforms_lifted};

use crate::error::{Error, Result};
use crate::math::{Real, Rigidf, Vec3, Vec3f};

/// Default area threshold below which a face counts as degenerate (m^2).
pub const EPS_AREA: f64 = 1e-12;

/// Which lighting environment a face shades from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FaceSide {
    Palm,
    Back,
}

/// Canonical triangle mesh with a kinematic tree and skinning weights.
#[derive(Debug, Clone)]
pub struct ArticulatedMesh {
    /// Rest-pose vertex positions, meters.
    pub rest_vertices: Vec<Vec3f>,
    /// Triangles as vertex indices.
    pub faces: Vec<[u32; 3]>,
    /// Parent joint per joint; the single root uses `ROOT_PARENT`.
    pub joint_parents: Vec<u32>,
    /// Rest-pose joint transforms in world space.
    pub joint_rest_transforms: Vec<Rigidf>,
    /// Per-vertex sparse skinning weights `(joint, weight)`.
    pub skin_weights: Vec<Vec<(u32, f64)>>,
    /// Palm/back label per face.
    pub face_side_labels: Vec<FaceSide>,
}

pub const ROOT_PARENT: u32 = u32::MAX;

impl ArticulatedMesh {
    pub fn vertex_count(&self) -> usize {
        self.rest_vertices.len()
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    pub fn joint_count(&self) -> usize {
        self.joint_parents.len()
    }

    pub fn face_vertices(&self, f: usize) -> [Vec3f; 3] {
        let [a, b, c] = self.faces[f];
        [
            self.rest_vertices[a as usize],
            self.rest_vertices[b as usize],
            self.rest_vertices[c as usize],
        ]
    }

    pub fn rest_face_area(&self, f: usize) -> f64 {
        let [v0, v1, v2] = self.face_vertices(f);
        (v1 - v0).cross(v2 - v0).norm() * 0.5
    }

    /// Median edge length over all faces of the rest mesh.
    pub fn median_edge_length(&self) -> f64 {
        let mut edges: Vec<f64> = Vec::with_capacity(self.faces.len() * 3);
        for f in 0..self.faces.len() {
            let [v0, v1, v2] = self.face_vertices(f);
            edges.push((v1 - v0).norm());
            edges.push((v2 - v1).norm());
            edges.push((v0 - v2).norm());
        }
        edges.sort_by(|a, b| a.partial_cmp(b).unwrap());
        if edges.is_empty() {
            0.0
        } else {
            edges[edges.len() / 2]
        }
    }

    /// Check every structural invariant; returns a dataset-style error code
    /// naming the first violation.
    pub fn validate(&self) -> Result<()> {
        let nv = self.vertex_count();
        if self.rest_vertices.iter().any(|v| !v.is_finite()) {
            return Err(Error::dataset("mesh-nonfinite-vertex", "non-finite vertex"));
        }
        for (i, f) in self.faces.iter().enumerate() {
            if f.iter().any(|&v| v as usize >= nv) {
                return Err(Error::dataset(
                    "mesh-face-index",
                    format!("face {i} references vertex out of range"),
                ));
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(Error::dataset(
                    "mesh-face-repeated-vertex",
                    format!("face {i} repeats a vertex"),
                ));
            }
            if self.rest_face_area(i) <= EPS_AREA {
                return Err(Error::dataset(
                    "mesh-degenerate-face",
                    format!("face {i} has rest area below {EPS_AREA}"),
                ));
            }
        }
        if self.skin_weights.len() != nv {
            return Err(Error::dataset(
                "mesh-skin-rows",
                "skin weight rows do not match vertex count",
            ));
        }
        let nj = self.joint_count();
        for (vi, row) in self.skin_weights.iter().enumerate() {
            let mut sum = 0.0;
            for &(j, w) in row {
                if j as usize >= nj {
                    return Err(Error::dataset(
                        "mesh-skin-joint-index",
                        format!("vertex {vi} weights joint out of range"),
                    ));
                }
                if w < 0.0 {
                    return Err(Error::dataset(
                        "mesh-skin-negative",
                        format!("vertex {vi} has a negative weight"),
                    ));
                }
                sum += w;
            }
            if (sum - 1.0).abs() > 1e-6 {
                return Err(Error::dataset(
                    "mesh-skin-row-sum",
                    format!("vertex {vi} weights sum to {sum}"),
                ));
            }
        }
        if self.joint_rest_transforms.len() != nj {
            return Err(Error::dataset(
                "mesh-joint-transforms",
                "rest transform count does not match joint count",
            ));
        }
        // The parent graph must be a tree: one root, acyclic, connected.
        let mut roots = 0;
        for (j, &p) in self.joint_parents.iter().enumerate() {
            if p == ROOT_PARENT {
                roots += 1;
            } else if p as usize >= nj {
                return Err(Error::dataset(
                    "mesh-joint-parent-index",
                    format!("joint {j} has parent out of range"),
                ));
            }
        }
        if roots != 1 {
            return Err(Error::dataset(
                "mesh-joint-roots",
                format!("expected exactly one root joint, found {roots}"),
            ));
        }
        for j in 0..nj {
            // Walk to the root; a cycle never terminates within nj hops.
            let mut cur = j as u32;
            let mut hops = 0;
            while cur != ROOT_PARENT {
                cur = self.joint_parents[cur as usize];
                hops += 1;
                if hops > nj {
                    return Err(Error::dataset(
                        "mesh-joint-cycle",
                        format!("joint {j} sits in a parent cycle"),
                    ));
                }
            }
        }
        if self.face_side_labels.len() != self.faces.len() {
            return Err(Error::dataset(
                "mesh-face-labels",
                "face side labels do not match face count",
            ));
        }
        Ok(())
    }

    /// Joints ordered so every parent precedes its children.
    pub fn topo_order(&self) -> Vec<usize> {
        let nj = self.joint_count();
        let mut order = Vec::with_capacity(nj);
        let mut placed = vec![false; nj];
        while order.len() < nj {
            for j in 0..nj {
                if placed[j] {
                    continue;
                }
                let p = self.joint_parents[j];
                if p == ROOT_PARENT || placed[p as usize] {
                    placed[j] = true;
                    order.push(j);
                }
            }
        }
        order
    }
}

/// One frame of articulation: per-joint axis-angle plus a root translation.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PoseFrame {
    pub joint_rotations: Vec<[f64; 3]>,
    pub root_translation: [f64; 3],
}

impl PoseFrame {
    pub fn identity(joints: usize) -> Self {
        PoseFrame {
            joint_rotations: vec![[0.0; 3]; joints],
            root_translation: [0.0; 3],
        }
    }

    pub fn joint_count(&self) -> usize {
        self.joint_rotations.len()
    }

    /// Validate finiteness and wrap axis-angle magnitudes into [0, 2pi).
    pub fn normalized(mut self) -> Result<Self> {
        for r in self.joint_rotations.iter_mut() {
            if r.iter().any(|x| !x.is_finite()) {
                return Err(Error::dataset("pose-nonfinite", "non-finite joint rotation"));
            }
            let mag = (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt();
            if mag >= std::f64::consts::TAU {
                let wrapped = mag % std::f64::consts::TAU;
                let s = if mag > 0.0 { wrapped / mag } else { 0.0 };
                for x in r.iter_mut() {
                    *x *= s;
                }
            }
        }
        if self.root_translation.iter().any(|x| !x.is_finite()) {
            return Err(Error::dataset("pose-nonfinite", "non-finite root translation"));
        }
        Ok(self)
    }

    /// Flattened J*3 rotation vector, optionally with the root translation
    /// appended (the lighting network input layout).
    pub fn flatten(&self, include_root_translation: bool) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.joint_rotations.len() * 3 + 3);
        for r in &self.joint_rotations {
            out.extend_from_slice(r);
        }
        if include_root_translation {
            out.extend_from_slice(&self.root_translation);
        }
        out
    }
}

/// A posed mesh with per-face normals and Gram-Schmidt frames.
///
/// Generic over the scalar so the differentiated training path and the plain
/// inference path share the construction code.
#[derive(Debug, Clone)]
pub struct DeformedMesh<T> {
    pub vertices: Vec<Vec3<T>>,
    pub face_normals: Vec<Vec3<T>>,
    /// Per-face orthonormal tangent pair (u, v); (u, v, n) is right-handed.
    pub face_frames: Vec<(Vec3<T>, Vec3<T>)>,
    /// Faces whose deformed area fell below the degeneracy threshold.
    pub degenerate_faces: Vec<bool>,
}

impl<T: Real> DeformedMesh<T> {
    pub fn face_vertices(&self, faces: &[[u32; 3]], f: usize) -> [Vec3<T>; 3] {
        let [a, b, c] = faces[f];
        [
            self.vertices[a as usize],
            self.vertices[b as usize],
            self.vertices[c as usize],
        ]
    }

    /// Build normals and frames for the given vertex set.
    pub fn from_vertices(vertices: Vec<Vec3<T>>, faces: &[[u32; 3]]) -> Self {
        let mut face_normals = Vec::with_capacity(faces.len());
        let mut face_frames = Vec::with_capacity(faces.len());
        let mut degenerate_faces = Vec::with_capacity(faces.len());
        for f in faces {
            let v0 = vertices[f[0] as usize];
            let v1 = vertices[f[1] as usize];
            let v2 = vertices[f[2] as usize];
            let e1 = v1 - v0;
            let e2 = v2 - v0;
            let cross = e1.cross(e2);
            let area2 = cross.norm_sq().val().sqrt();
            if area2 * 0.5 <= EPS_AREA {
                degenerate_faces.push(true);
                // Keep placeholder axes so indices stay aligned; consumers
                // must check the flag before using them.
                let zero = e1.x * 0.0;
                face_normals.push(Vec3::new(zero, zero, zero + 1.0));
                face_frames.push((
                    Vec3::new(zero + 1.0, zero, zero),
                    Vec3::new(zero, zero + 1.0, zero),
                ));
                continue;
            }
            degenerate_faces.push(false);
            let (u, v) = gram_schmidt_frame(e1, e2).expect("non-degenerate by area check");
            face_normals.push(u.cross(v));
            face_frames.push((u, v));
        }
        DeformedMesh {
            vertices,
            face_normals,
            face_frames,
            degenerate_faces,
        }
    }
}

impl ArticulatedMesh {
    /// The rest pose as a `DeformedMesh`, optionally with per-vertex offsets
    /// added (the learnable canonical refinement).
    pub fn canonical<T: Real>(&self, offsets: Option<&[Vec3<T>]>, lift: impl Fn(f64) -> T) -> DeformedMesh<T> {
        let vertices: Vec<Vec3<T>> = self
            .rest_vertices
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let base = Vec3::new(lift(v.x), lift(v.y), lift(v.z));
                match offsets {
                    Some(o) => base + o[i],
                    None => base,
                }
            })
            .collect();
        DeformedMesh::from_vertices(vertices, &self.faces)
    }
}

/// Orthonormal tangent basis of a triangle from its two edges:
/// u = e1/|e1|, v = normalized component of e2 orthogonal to u.
pub fn gram_schmidt_frame<T: Real>(e1: Vec3<T>, e2: Vec3<T>) -> Result<(Vec3<T>, Vec3<T>)> {
    let n1 = e1.norm();
    if n1.val() < 1e-12 {
        return Err(Error::DegenerateTriangle("zero-length first edge".into()));
    }
    let u = e1 * n1.recip();
    let w = e2 - u * e2.dot(u);
    let nw = w.norm();
    if nw.val() < 1e-12 || e1.cross(e2).norm().val() < 1e-12 {
        return Err(Error::DegenerateTriangle("collinear edges".into()));
    }
    let v = w * nw.recip();
    Ok((u, v))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn gram_schmidt_axis_aligned() {
        let (u, v) =
            gram_schmidt_frame(Vec3::new(2.0, 0.0, 0.0), Vec3::new(1.0, 1.0, 0.0)).unwrap();
        assert!((u - Vec3::new(1.0, 0.0, 0.0)).norm() < 1e-15);
        assert!((v - Vec3::new(0.0, 1.0, 0.0)).norm() < 1e-15);

        let (u, v) =
            gram_schmidt_frame(Vec3::new(0.0, 3.0, 0.0), Vec3::new(0.0, 0.0, 5.0)).unwrap();
        assert!((u - Vec3::new(0.0, 1.0, 0.0)).norm() < 1e-15);
        assert!((v - Vec3::new(0.0, 0.0, 1.0)).norm() < 1e-15);
    }

    #[test]
    fn gram_schmidt_rejects_collinear() {
        let r = gram_schmidt_frame(Vec3::new(1.0, 0.0, 0.0), Vec3::new(2.0, 0.0, 0.0));
        assert!(matches!(r, Err(Error::DegenerateTriangle(_))));
    }

    proptest! {
        #[test]
        fn gram_schmidt_orthonormal(
            e1 in prop::array::uniform3(-1.0f64..1.0),
            e2 in prop::array::uniform3(-1.0f64..1.0),
        ) {
            let e1 = Vec3::from_array(e1);
            let e2 = Vec3::from_array(e2);
            prop_assume!(e1.norm() > 1e-3 && e1.cross(e2).norm() > 1e-3);
            let (u, v) = gram_schmidt_frame(e1, e2).unwrap();
            prop_assert!(u.dot(v).abs() < 1e-12);
            prop_assert!((u.norm() - 1.0).abs() < 1e-12);
            prop_assert!((v.norm() - 1.0).abs() < 1e-12);
            // (u, v, n) right-handed with n aligned to e1 x e2.
            let n = u.cross(v);
            prop_assert!(n.dot(e1.cross(e2)) > 0.0);
        }
    }

    fn tiny_mesh() -> ArticulatedMesh {
        ArticulatedMesh {
            rest_vertices: vec![
                Vec3::new(0.0, 0.0, 0.0),
                Vec3::new(1.0, 0.0, 0.0),
                Vec3::new(0.0, 1.0, 0.0),
                Vec3::new(1.0, 1.0, 0.0),
            ],
            faces: vec![[0, 1, 2], [1, 3, 2]],
            joint_parents: vec![ROOT_PARENT],
            joint_rest_transforms: vec![Rigidf::IDENTITY],
            skin_weights: vec![vec![(0, 1.0)]; 4],
            face_side_labels: vec![FaceSide::Palm, FaceSide::Back],
        }
    }

    #[test]
    fn validate_accepts_good_mesh() {
        tiny_mesh().validate().unwrap();
    }

    #[test]
    fn validate_rejects_bad_face_index() {
        let mut m = tiny_mesh();
        m.faces[0] = [0, 1, 9];
        let err = m.validate().unwrap_err();
        assert!(matches!(err, Error::Dataset { code: "mesh-face-index", .. }));
    }

    #[test]
    fn validate_rejects_bad_weight_sum() {
        let mut m = tiny_mesh();
        m.skin_weights[2] = vec![(0, 0.5)];
        let err = m.validate().unwrap_err();
        assert!(matches!(err, Error::Dataset { code: "mesh-skin-row-sum", .. }));
    }

    #[test]
    fn validate_rejects_two_roots() {
        let mut m = tiny_mesh();
        m.joint_parents = vec![ROOT_PARENT, ROOT_PARENT];
        m.joint_rest_transforms = vec![Rigidf::IDENTITY; 2];
        let err = m.validate().unwrap_err();
        assert!(matches!(err, Error::Dataset { code: "mesh-joint-roots", .. }));
    }

    #[test]
    fn pose_normalization_wraps_large_angles() {
        let p = PoseFrame {
            joint_rotations: vec![[3.0 * std::f64::consts::PI, 0.0, 0.0]],
            root_translation: [0.0; 3],
        }
        .normalized()
        .unwrap();
        let mag = p.joint_rotations[0][0];
        assert!((mag - std::f64::consts::PI).abs() < 1e-12);
    }
}
