//! Gaussians parameterized on mesh faces and the closed-form transfer of
//! their ellipses from the canonical surface to a posed one.
//!
//! Each Gaussian lives on one triangle: softmaxed barycentric logits place
//! its anchor, a 2D scale/rotation pair shapes its ellipse in the face's
//! Gram-Schmidt tangent frame, and a sigmoid-bounded offset lifts it along
//! the face normal so stacked Gaussians keep distinct depths. Posing the
//! mesh never moves Gaussians directly; the per-face linear map between the
//! canonical and deformed edge frames transports the ellipse instead.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{logit, sym_eigen_2x2, Mat2, Real, Vec3};
use crate::mesh::{ArticulatedMesh, DeformedMesh};

/// Learnable per-Gaussian parameters. All constrained quantities are stored
/// through free reparameterizations: softmax for barycentrics, exp for
/// scales, sigmoid for offset/albedo/opacity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceGaussian {
    pub face_id: u32,
    pub bary_logits: [f64; 3],
    pub log_scales: [f64; 2],
    pub rotation_phi: f64,
    pub offset_logit: f64,
    pub albedo_logits: [f64; 3],
    pub opacity_logit: f64,
}

/// Number of scalar parameters per Gaussian in flattened layouts.
pub const GAUSSIAN_PARAM_COUNT: usize = 11;

impl SurfaceGaussian {
    pub fn to_params(&self) -> [f64; GAUSSIAN_PARAM_COUNT] {
        [
            self.bary_logits[0],
            self.bary_logits[1],
            self.bary_logits[2],
            self.log_scales[0],
            self.log_scales[1],
            self.rotation_phi,
            self.offset_logit,
            self.albedo_logits[0],
            self.albedo_logits[1],
            self.albedo_logits[2],
            self.opacity_logit,
        ]
    }

    pub fn from_params(face_id: u32, p: &[f64]) -> Self {
        SurfaceGaussian {
            face_id,
            bary_logits: [p[0], p[1], p[2]],
            log_scales: [p[3], p[4]],
            rotation_phi: p[5],
            offset_logit: p[6],
            albedo_logits: [p[7], p[8], p[9]],
            opacity_logit: p[10],
        }
    }

    pub fn scales(&self) -> [f64; 2] {
        [self.log_scales[0].exp(), self.log_scales[1].exp()]
    }

    pub fn opacity(&self) -> f64 {
        self.opacity_logit.sigmoid()
    }

    pub fn albedo(&self) -> [f64; 3] {
        [
            self.albedo_logits[0].sigmoid(),
            self.albedo_logits[1].sigmoid(),
            self.albedo_logits[2].sigmoid(),
        ]
    }

    pub fn offset(&self, z_max: f64) -> f64 {
        self.offset_logit.sigmoid() * z_max
    }

    pub fn weights(&self) -> [f64; 3] {
        barycentric_weights(self.bary_logits)
    }

    /// Anchor point on the given mesh: barycentric blend plus the normal
    /// offset of the anchor face.
    pub fn anchor_point(&self, dm: &DeformedMesh<f64>, faces: &[[u32; 3]], z_max: f64) -> Vec3<f64> {
        let w = self.weights();
        let [v0, v1, v2] = dm.face_vertices(faces, self.face_id as usize);
        let base = v0 * w[0] + v1 * w[1] + v2 * w[2];
        base + dm.face_normals[self.face_id as usize] * self.offset(z_max)
    }

    /// Check the parameter-space invariants against a bound mesh.
    pub fn check_invariants(&self, face_count: usize, z_max: f64) -> Result<()> {
        if self.face_id as usize >= face_count {
            return Err(Error::Domain(format!(
                "face id {} out of range {face_count}",
                self.face_id
            )));
        }
        let w = self.weights();
        let sum: f64 = w.iter().sum();
        if (sum - 1.0).abs() > 1e-12 || w.iter().any(|&x| x <= 0.0) {
            return Err(Error::Domain("barycentric weights left the open simplex".into()));
        }
        let s = self.scales();
        if s[0] <= 0.0 || s[1] <= 0.0 {
            return Err(Error::Domain("non-positive scale".into()));
        }
        let off = self.offset(z_max);
        if off <= 0.0 || off >= z_max {
            return Err(Error::Domain("offset left (0, z_max)".into()));
        }
        if self.to_params().iter().any(|p| !p.is_finite()) {
            return Err(Error::Numeric("non-finite gaussian parameter".into()));
        }
        Ok(())
    }
}

/// Softmax of the barycentric logits; always in the open 2-simplex and
/// renormalized so the weights sum to one exactly.
pub fn barycentric_weights<T: Real>(logits: [T; 3]) -> [T; 3] {
    let m = logits[0].val().max(logits[1].val()).max(logits[2].val());
    let e0 = (logits[0] - m).exp();
    let e1 = (logits[1] - m).exp();
    let e2 = (logits[2] - m).exp();
    let inv = (e0 + e1 + e2).recip();
    [e0 * inv, e1 * inv, e2 * inv]
}

/// Project a triangle's two edges into its Gram-Schmidt tangent frame.
/// Columns of the result are the 2D edge vectors; the first lands on the
/// u-axis by construction and the determinant is twice the face area.
pub fn edge_projection<T: Real>(v1: Vec3<T>, v2: Vec3<T>, v3: Vec3<T>) -> Result<Mat2<T>> {
    let e1 = v2 - v1;
    let e2 = v3 - v1;
    let (u, v) = crate::mesh::gram_schmidt_frame(e1, e2)?;
    Ok(Mat2::from_cols(
        [e1.dot(u), e1.dot(v)],
        [e2.dot(u), e2.dot(v)],
    ))
}

/// Threshold on |det| below which a local frame counts as singular.
pub const EPS_DET: f64 = 1e-10;

/// Linear map carrying canonical local-frame coordinates onto deformed
/// local-frame coordinates of the same triangle.
pub fn deformation_gradient<T: Real>(m_canon: Mat2<T>, m_deform: Mat2<T>) -> Result<Mat2<T>> {
    if m_canon.det().val().abs() <= EPS_DET {
        return Err(Error::DegenerateTriangle("singular canonical frame".into()));
    }
    Ok(m_deform.mul_mat(m_canon.inverse()))
}

/// The symmetric quadratic form whose unit level set is the Gaussian's 1-sigma
/// ellipse: R(phi) diag(1/sx^2, 1/sy^2) R(phi)^T.
pub fn ellipse_quadratic<T: Real>(s: [T; 2], phi: T) -> Result<Mat2<T>> {
    if s[0].val() <= 0.0 || s[1].val() <= 0.0 {
        return Err(Error::Domain("ellipse scales must be positive".into()));
    }
    let r = Mat2::rotation(phi);
    let d0 = (s[0] * s[0]).recip();
    let d1 = (s[1] * s[1]).recip();
    let zero = phi * 0.0;
    let diag = Mat2::new(d0, zero, zero, d1);
    Ok(r.mul_mat(diag).mul_mat(r.transpose()))
}

/// Push an ellipse through an invertible 2D map and recover scale/rotation
/// from the eigen-decomposition of Q' = A^-T Q A^-1.
///
/// Convention: `s' = (major, minor)` (largest scale first) and `phi'` in
/// `[0, pi)` is the direction of the major axis, i.e. the eigenvector of the
/// smaller eigenvalue of Q'. Near-isotropic results pin `phi'` to 0.
pub fn transform_ellipse<T: Real>(q: Mat2<T>, a: Mat2<T>) -> Result<([T; 2], T)> {
    if a.det().val().abs() <= EPS_DET {
        return Err(Error::Domain("degenerate deformation".into()));
    }
    let a_inv = a.inverse();
    let q_prime = a_inv.transpose().mul_mat(q).mul_mat(a_inv);
    // Symmetrize before decomposing so rounding cannot produce a complex pair.
    let off = (q_prime.m[0][1] + q_prime.m[1][0]) * 0.5;
    let (l_max, l_min, angle) = sym_eigen_2x2(q_prime.m[0][0], off, q_prime.m[1][1]);
    if l_min.val() <= 0.0 {
        return Err(Error::Domain("transformed ellipse lost definiteness".into()));
    }
    let s_major = l_min.sqrt().recip();
    let s_minor = l_max.sqrt().recip();
    Ok(([s_major, s_minor], angle))
}

/// A Gaussian realized in world space on a posed mesh.
#[derive(Debug, Clone, Copy)]
pub struct WorldSplat<T> {
    pub center: Vec3<T>,
    pub tangent_u: Vec3<T>,
    pub tangent_v: Vec3<T>,
    /// Ellipse scales along (tangent_u, tangent_v), major first, meters.
    pub scales: [T; 2],
    pub normal: Vec3<T>,
    pub albedo: [T; 3],
    pub opacity: T,
}

/// Per-Gaussian inputs already lifted to the working scalar type.
#[derive(Debug, Clone, Copy)]
pub struct GaussianParams<T> {
    pub face_id: u32,
    pub bary_logits: [T; 3],
    pub log_scales: [T; 2],
    pub rotation_phi: T,
    pub offset_logit: T,
    pub albedo_logits: [T; 3],
    pub opacity_logit: T,
}

impl GaussianParams<f64> {
    pub fn from_gaussian(g: &SurfaceGaussian) -> Self {
        GaussianParams {
            face_id: g.face_id,
            bary_logits: g.bary_logits,
            log_scales: g.log_scales,
            rotation_phi: g.rotation_phi,
            offset_logit: g.offset_logit,
            albedo_logits: g.albedo_logits,
            opacity_logit: g.opacity_logit,
        }
    }
}

/// Realize one Gaussian on the deformed surface.
///
/// The anchor interpolates the deformed face vertices by the softmaxed
/// barycentrics and lifts along the deformed normal by sigmoid(offset) *
/// z_max. The ellipse transfers through the face's deformation gradient and
/// the returned tangent axes are the deformed frame rotated in-plane by the
/// recovered angle.
pub fn realize_world<T: Real>(
    g: &GaussianParams<T>,
    canonical: &DeformedMesh<T>,
    deformed: &DeformedMesh<T>,
    faces: &[[u32; 3]],
    z_max: f64,
) -> Result<WorldSplat<T>> {
    let fid = g.face_id as usize;
    if fid >= faces.len() {
        return Err(Error::Domain(format!("face id {fid} out of range")));
    }
    if canonical.degenerate_faces[fid] || deformed.degenerate_faces[fid] {
        return Err(Error::DegenerateTriangle(format!(
            "face {fid} is degenerate in the canonical or deformed mesh"
        )));
    }
    let w = barycentric_weights(g.bary_logits);
    let [d0, d1, d2] = deformed.face_vertices(faces, fid);
    let normal = deformed.face_normals[fid];
    let offset = g.offset_logit.sigmoid() * z_max;
    let center = d0 * w[0] + d1 * w[1] + d2 * w[2] + normal * offset;

    let [c0, c1, c2] = canonical.face_vertices(faces, fid);
    let m_canon = edge_projection(c0, c1, c2)?;
    let m_deform = edge_projection(d0, d1, d2)?;
    let a = deformation_gradient(m_canon, m_deform)?;

    let scales = [g.log_scales[0].exp(), g.log_scales[1].exp()];
    let q = ellipse_quadratic(scales, g.rotation_phi)?;
    let (s_prime, phi_prime) = transform_ellipse(q, a)?;

    let (u, v) = deformed.face_frames[fid];
    let (sin_p, cos_p) = (phi_prime.sin(), phi_prime.cos());
    let tangent_u = u * cos_p + v * sin_p;
    let tangent_v = u * (-sin_p) + v * cos_p;

    Ok(WorldSplat {
        center,
        tangent_u,
        tangent_v,
        scales: s_prime,
        normal,
        albedo: [
            g.albedo_logits[0].sigmoid(),
            g.albedo_logits[1].sigmoid(),
            g.albedo_logits[2].sigmoid(),
        ],
        opacity: g.opacity_logit.sigmoid(),
    })
}

/// Default initialization: `n_per_face` Gaussians on every face, anchored at
/// the face center with near-isotropic scales sized so the Gaussians on a
/// face jointly cover about its area: scale = factor * sqrt(area / n).
pub fn init_per_face(
    mesh: &ArticulatedMesh,
    n_per_face: usize,
    init_scale_factor: f64,
    init_opacity: f64,
    init_albedo: f64,
    rng: &mut impl Rng,
) -> Vec<SurfaceGaussian> {
    let mut out = Vec::with_capacity(mesh.face_count() * n_per_face);
    for f in 0..mesh.face_count() {
        let s = init_scale_factor * (mesh.rest_face_area(f) / n_per_face.max(1) as f64).sqrt();
        for k in 0..n_per_face {
            // Subsequent Gaussians on a face get a small deterministic
            // barycentric jitter so they can specialize.
            let jitter = if k == 0 {
                [0.0; 3]
            } else {
                [
                    rng.gen_range(-0.35..0.35),
                    rng.gen_range(-0.35..0.35),
                    rng.gen_range(-0.35..0.35),
                ]
            };
            out.push(SurfaceGaussian {
                face_id: f as u32,
                bary_logits: jitter,
                log_scales: [s.ln(), s.ln()],
                rotation_phi: 0.0,
                offset_logit: 0.0,
                albedo_logits: [logit(init_albedo); 3],
                opacity_logit: logit(init_opacity),
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::{axis_angle_to_matrix, Mat2f, Vec3f};
    use crate::testutil::{barycentric_in_plane, eigenvalues_2x2_charpoly};
    use rand::{Rng, SeedableRng};

    fn mat2(m00: f64, m01: f64, m10: f64, m11: f64) -> Mat2f {
        Mat2::new(m00, m01, m10, m11)
    }

    #[test]
    fn softmax_symmetry_and_shift_invariance() {
        for &c in &[0.0, 1.7, -3.2] {
            let w = barycentric_weights([c, c, c]);
            for x in w {
                assert!((x - 1.0 / 3.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn softmax_ln2_case() {
        // exp(ln 2) = 2 against two units: (0.5, 0.25, 0.25).
        let w = barycentric_weights([2.0f64.ln(), 0.0, 0.0]);
        assert!((w[0] - 0.5).abs() < 1e-15);
        assert!((w[1] - 0.25).abs() < 1e-15);
        assert!((w[2] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn edge_projection_unit_triangle() {
        let m = edge_projection(
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
        )
        .unwrap();
        assert!((m.m[0][0] - 1.0).abs() < 1e-15);
        assert!(m.m[1][0].abs() < 1e-15);
        assert!((m.m[0][1] - 0.0).abs() < 1e-15);
        assert!((m.m[1][1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn edge_projection_known_matrix() {
        let m = edge_projection(
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(2.0, 0.0, 0.0),
            Vec3::new(1.0, 1.0, 0.0),
        )
        .unwrap();
        assert!((m.m[0][0] - 2.0).abs() < 1e-15);
        assert!(m.m[1][0].abs() < 1e-15);
        assert!((m.m[0][1] - 1.0).abs() < 1e-15);
        assert!((m.m[1][1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn edge_projection_rigid_invariance() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let tri = [
            Vec3::new(0.2, -0.1, 0.4),
            Vec3::new(1.1, 0.3, -0.2),
            Vec3::new(-0.4, 0.9, 0.1),
        ];
        let m0 = edge_projection(tri[0], tri[1], tri[2]).unwrap();
        for _ in 0..20 {
            let r = axis_angle_to_matrix(Vec3::new(
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
            ));
            let t = Vec3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            );
            let moved: Vec<Vec3f> = tri.iter().map(|&p| r.mul_vec(p) + t).collect();
            let m1 = edge_projection(moved[0], moved[1], moved[2]).unwrap();
            for i in 0..2 {
                for j in 0..2 {
                    assert!((m0.m[i][j] - m1.m[i][j]).abs() < 1e-9);
                }
            }
            // det = twice the area, positive.
            let area2 = (tri[1] - tri[0]).cross(tri[2] - tri[0]).norm();
            assert!((m1.det() - area2).abs() < 1e-9);
        }
    }

    #[test]
    fn deformation_gradient_identity_and_stretch() {
        let m = mat2(1.3, 0.2, -0.4, 0.9);
        let a = deformation_gradient(m, m).unwrap();
        assert!((a.m[0][0] - 1.0).abs() < 1e-12 && (a.m[1][1] - 1.0).abs() < 1e-12);
        assert!(a.m[0][1].abs() < 1e-12 && a.m[1][0].abs() < 1e-12);

        let a = deformation_gradient(mat2(1.0, 0.0, 0.0, 1.0), mat2(2.0, 0.0, 0.0, 1.0)).unwrap();
        assert!((a.m[0][0] - 2.0).abs() < 1e-15 && (a.m[1][1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn deformation_gradient_rejects_singular_frame() {
        let r = deformation_gradient(mat2(1.0, 2.0, 0.5, 1.0), mat2(1.0, 0.0, 0.0, 1.0));
        assert!(matches!(r, Err(Error::DegenerateTriangle(_))));
    }

    #[test]
    fn deformation_gradient_preserves_barycentrics() {
        // Random triangle pairs: a point's barycentric coordinates survive A.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let tri_a: Vec<Vec3f> = (0..3)
                .map(|_| {
                    Vec3::new(
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                    )
                })
                .collect();
            let tri_b: Vec<Vec3f> = (0..3)
                .map(|_| {
                    Vec3::new(
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                    )
                })
                .collect();
            let (a2a, a2b) = (
                (tri_a[1] - tri_a[0]).cross(tri_a[2] - tri_a[0]).norm(),
                (tri_b[1] - tri_b[0]).cross(tri_b[2] - tri_b[0]).norm(),
            );
            if a2a < 1e-2 || a2b < 1e-2 {
                continue;
            }
            let m_canon = edge_projection(tri_a[0], tri_a[1], tri_a[2]).unwrap();
            let m_deform = edge_projection(tri_b[0], tri_b[1], tri_b[2]).unwrap();
            let a = deformation_gradient(m_canon, m_deform).unwrap();

            let wa = rng.gen_range(0.05..0.9);
            let wb = rng.gen_range(0.05..(0.95 - wa));
            let bary = [1.0 - wa - wb, wa, wb];
            // Local 2D coordinate of the barycentric point (v1 is the origin).
            let p = m_canon.mul_vec([bary[1], bary[2]]);
            let p_prime = a.mul_vec(p);
            // Recover barycentrics in the deformed triangle's plane.
            let world = tri_b[0]
                + (tri_b[1] - tri_b[0]) * {
                    let c = m_deform.inverse().mul_vec(p_prime);
                    c[0]
                }
                + (tri_b[2] - tri_b[0]) * {
                    let c = m_deform.inverse().mul_vec(p_prime);
                    c[1]
                };
            let got = barycentric_in_plane(world, tri_b[0], tri_b[1], tri_b[2]);
            for (g, w) in got.iter().zip(bary.iter()) {
                assert!((g - w).abs() < 1e-9, "barycentric drifted: {got:?} vs {bary:?}");
            }
        }
    }

    #[test]
    fn quadratic_isotropic_and_axis_aligned() {
        for &phi in &[0.0, 0.7, -2.1] {
            let q = ellipse_quadratic([1.0, 1.0], phi).unwrap();
            assert!((q.m[0][0] - 1.0).abs() < 1e-12);
            assert!((q.m[1][1] - 1.0).abs() < 1e-12);
            assert!(q.m[0][1].abs() < 1e-12);
        }
        let q = ellipse_quadratic([2.0, 1.0], 0.0).unwrap();
        assert!((q.m[0][0] - 0.25).abs() < 1e-15);
        assert!((q.m[1][1] - 1.0).abs() < 1e-15);

        let q = ellipse_quadratic([2.0, 1.0], std::f64::consts::FRAC_PI_2).unwrap();
        assert!((q.m[0][0] - 1.0).abs() < 1e-12);
        assert!((q.m[1][1] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn quadratic_eigenvalues_are_inverse_square_scales() {
        let q = ellipse_quadratic([2.0, 1.0], 0.6).unwrap();
        let (l1, l2) = eigenvalues_2x2_charpoly(q.m[0][0], q.m[0][1], q.m[1][1]);
        assert!((l1 - 1.0).abs() < 1e-12);
        assert!((l2 - 0.25).abs() < 1e-12);
    }

    #[test]
    fn quadratic_rejects_nonpositive_scale() {
        assert!(ellipse_quadratic([0.0, 1.0], 0.0).is_err());
        assert!(ellipse_quadratic([1.0, -2.0], 0.0).is_err());
    }

    #[test]
    fn transform_identity_returns_canonical_form() {
        let q = ellipse_quadratic([2.0, 1.0], 0.4).unwrap();
        let (s, phi) = transform_ellipse(q, mat2(1.0, 0.0, 0.0, 1.0)).unwrap();
        assert!((s[0] - 2.0).abs() < 1e-12);
        assert!((s[1] - 1.0).abs() < 1e-12);
        assert!((phi - 0.4).abs() < 1e-12);
    }

    #[test]
    fn transform_pure_stretch_of_unit_circle() {
        let q = ellipse_quadratic([1.0, 1.0], 0.0).unwrap();
        let (s, phi) = transform_ellipse(q, mat2(2.0, 0.0, 0.0, 1.0)).unwrap();
        assert!((s[0] - 2.0).abs() < 1e-12);
        assert!((s[1] - 1.0).abs() < 1e-12);
        assert!(phi.abs() < 1e-12);
    }

    #[test]
    fn transform_rotation_shifts_angle_only() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(31);
        for _ in 0..50 {
            let sx = rng.gen_range(1.2..3.0);
            let sy = rng.gen_range(0.3..1.0);
            let phi = rng.gen_range(0.0..std::f64::consts::PI);
            let theta = rng.gen_range(-3.0..3.0);
            let q = ellipse_quadratic([sx, sy], phi).unwrap();
            let a = Mat2::rotation(theta);
            let (s, phi_p) = transform_ellipse(q, a).unwrap();
            assert!((s[0] - sx).abs() < 1e-9);
            assert!((s[1] - sy).abs() < 1e-9);
            let want = (phi + theta).rem_euclid(std::f64::consts::PI);
            let diff = (phi_p - want).abs();
            let diff = diff.min((diff - std::f64::consts::PI).abs());
            assert!(diff < 1e-9, "angle {phi_p} vs {want}");
        }
    }

    #[test]
    fn transform_recovers_eigen_structure_of_known_matrix() {
        // Q = [[2,1],[1,2]] has eigenvalues 3 and 1 (cross-checked against an
        // independent characteristic-polynomial solve), so the scales are
        // 1/sqrt(1) = 1 (major) and 1/sqrt(3) (minor), with the major axis
        // along (1,-1): angle 3pi/4.
        let q = mat2(2.0, 1.0, 1.0, 2.0);
        let (l1, l2) = eigenvalues_2x2_charpoly(2.0, 1.0, 2.0);
        assert!((l1 - 3.0).abs() < 1e-12 && (l2 - 1.0).abs() < 1e-12);
        let (s, phi) = transform_ellipse(q, mat2(1.0, 0.0, 0.0, 1.0)).unwrap();
        assert!((s[0] - 1.0).abs() < 1e-12);
        assert!((s[1] - 1.0 / 3.0f64.sqrt()).abs() < 1e-12);
        assert!((phi - 3.0 * std::f64::consts::FRAC_PI_4).abs() < 1e-12);
    }

    #[test]
    fn boundary_points_stay_on_transformed_boundary() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(41);
        for _ in 0..200 {
            let sx = rng.gen_range(0.2..3.0);
            let sy = rng.gen_range(0.2..3.0);
            let phi = rng.gen_range(-3.0..3.0);
            let a = mat2(
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
            );
            if a.det().abs() < 0.05 {
                continue;
            }
            let q = ellipse_quadratic([sx, sy], phi).unwrap();
            let (s_p, phi_p) = transform_ellipse(q, a).unwrap();
            let q_prime = ellipse_quadratic(s_p, phi_p).unwrap();
            let r = Mat2::rotation(phi);
            for k in 0..16 {
                let t = k as f64 / 16.0 * std::f64::consts::TAU;
                let p = r.mul_vec([sx * t.cos(), sy * t.sin()]);
                let p2 = a.mul_vec(p);
                let quad = p2[0] * (q_prime.m[0][0] * p2[0] + q_prime.m[0][1] * p2[1])
                    + p2[1] * (q_prime.m[1][0] * p2[0] + q_prime.m[1][1] * p2[1]);
                assert!((quad - 1.0).abs() < 1e-9, "boundary violated: {quad}");
            }
            // Area identity: product of scales transforms by |det A|.
            assert!((s_p[0] * s_p[1] - sx * sy * a.det().abs()).abs() < 1e-9);
        }
    }

    fn quad_mesh() -> ArticulatedMesh {
        ArticulatedMesh {
            rest_vertices: vec![
                Vec3::new(0.0, 0.0, 0.0),
                Vec3::new(0.1, 0.0, 0.0),
                Vec3::new(0.0, 0.1, 0.0),
                Vec3::new(0.1, 0.1, 0.0),
            ],
            faces: vec![[0, 1, 2], [1, 3, 2]],
            joint_parents: vec![crate::mesh::ROOT_PARENT],
            joint_rest_transforms: vec![crate::math::Rigidf::IDENTITY],
            skin_weights: vec![vec![(0, 1.0)]; 4],
            face_side_labels: vec![crate::mesh::FaceSide::Palm; 2],
        }
    }

    #[test]
    fn realize_on_undeformed_mesh_reproduces_parameters() {
        let mesh = quad_mesh();
        let canonical = mesh.canonical::<f64>(None, |x| x);
        let g = SurfaceGaussian {
            face_id: 0,
            bary_logits: [0.3, -0.1, 0.2],
            log_scales: [(0.02f64).ln(), (0.01f64).ln()],
            rotation_phi: 0.5,
            offset_logit: 0.0,
            albedo_logits: [0.0; 3],
            opacity_logit: 0.0,
        };
        let z_max = 0.002;
        let ws = realize_world(
            &GaussianParams::from_gaussian(&g),
            &canonical,
            &canonical,
            &mesh.faces,
            z_max,
        )
        .unwrap();
        // sigmoid(0) = 0.5 -> offset is z_max / 2 = 1 mm along +z.
        let w = g.weights();
        let [v0, v1, v2] = canonical.face_vertices(&mesh.faces, 0);
        let expect = v0 * w[0] + v1 * w[1] + v2 * w[2] + Vec3::new(0.0, 0.0, 0.001);
        assert!((ws.center - expect).norm() < 1e-15);
        assert!((ws.scales[0] - 0.02).abs() < 1e-12);
        assert!((ws.scales[1] - 0.01).abs() < 1e-12);
        // Tangent axes carry the rotation; orthonormal triple.
        assert!(ws.tangent_u.dot(ws.tangent_v).abs() < 1e-12);
        assert!(ws.tangent_u.dot(ws.normal).abs() < 1e-12);
        assert!((ws.tangent_u.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn realize_rigid_motion_moves_splat_rigidly() {
        let mesh = quad_mesh();
        let canonical = mesh.canonical::<f64>(None, |x| x);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(77);
        let g = SurfaceGaussian {
            face_id: 1,
            bary_logits: [0.1, 0.4, -0.2],
            log_scales: [(0.03f64).ln(), (0.015f64).ln()],
            rotation_phi: 1.1,
            offset_logit: 0.3,
            albedo_logits: [0.2, -0.1, 0.4],
            opacity_logit: 0.5,
        };
        let z_max = 0.002;
        let base = realize_world(
            &GaussianParams::from_gaussian(&g),
            &canonical,
            &canonical,
            &mesh.faces,
            z_max,
        )
        .unwrap();
        for _ in 0..10 {
            let r = axis_angle_to_matrix(Vec3::new(
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
            ));
            let t = Vec3::new(
                rng.gen_range(-0.5..0.5),
                rng.gen_range(-0.5..0.5),
                rng.gen_range(-0.5..0.5),
            );
            let moved_verts: Vec<Vec3f> = canonical
                .vertices
                .iter()
                .map(|&p| r.mul_vec(p) + t)
                .collect();
            let deformed = DeformedMesh::from_vertices(moved_verts, &mesh.faces);
            let ws = realize_world(
                &GaussianParams::from_gaussian(&g),
                &canonical,
                &deformed,
                &mesh.faces,
                z_max,
            )
            .unwrap();
            assert!((ws.center - (r.mul_vec(base.center) + t)).norm() < 1e-9);
            assert!((ws.scales[0] - base.scales[0]).abs() < 1e-9);
            assert!((ws.scales[1] - base.scales[1]).abs() < 1e-9);
            // The realized ellipse axes also move rigidly (up to the shared
            // sign ambiguity of an axis pair).
            let ru = r.mul_vec(base.tangent_u);
            assert!(
                (ws.tangent_u - ru).norm() < 1e-9 || (ws.tangent_u + ru).norm() < 1e-9,
                "tangent drifted"
            );
        }
    }

    #[test]
    fn init_covers_every_face_with_valid_gaussians() {
        let mesh = quad_mesh();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let set = init_per_face(&mesh, 2, 0.7, 0.1, 0.5, &mut rng);
        assert_eq!(set.len(), 4);
        for g in &set {
            g.check_invariants(mesh.face_count(), 0.002).unwrap();
        }
        // Opacity init: sigmoid(logit(0.1)) = 0.1.
        assert!((set[0].opacity() - 0.1).abs() < 1e-12);
        assert!((set[0].albedo()[0] - 0.5).abs() < 1e-12);
    }
}
