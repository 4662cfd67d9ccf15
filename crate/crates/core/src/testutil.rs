//! Independent reference routines used only by the test suites. Nothing in
//! the library's own code paths may call into this module; the point is
//! that these stay algorithmically separate from what they check.

use crate::math::Vec3f;

/// Closest point on a triangle the slow way: project onto the supporting
/// plane and, when the projection leaves the triangle, clamp against each
/// of the three edge segments.
pub fn closest_point_plane_clamp(p: Vec3f, a: Vec3f, b: Vec3f, c: Vec3f) -> Vec3f {
    let n = (b - a).cross(c - a).normalized();
    let q = p - n * n.dot(p - a);

    // Barycentric test of the projection.
    let v0 = b - a;
    let v1 = c - a;
    let v2 = q - a;
    let d00 = v0.dot(v0);
    let d01 = v0.dot(v1);
    let d11 = v1.dot(v1);
    let d20 = v2.dot(v0);
    let d21 = v2.dot(v1);
    let denom = d00 * d11 - d01 * d01;
    let v = (d11 * d20 - d01 * d21) / denom;
    let w = (d00 * d21 - d01 * d20) / denom;
    let u = 1.0 - v - w;
    if u >= 0.0 && v >= 0.0 && w >= 0.0 {
        return q;
    }

    let mut best = closest_point_on_segment(p, a, b);
    for cand in [
        closest_point_on_segment(p, b, c),
        closest_point_on_segment(p, c, a),
    ] {
        if (p - cand).norm() < (p - best).norm() {
            best = cand;
        }
    }
    best
}

fn closest_point_on_segment(p: Vec3f, a: Vec3f, b: Vec3f) -> Vec3f {
    let ab = b - a;
    let t = (ab.dot(p - a) / ab.dot(ab)).clamp(0.0, 1.0);
    a + ab * t
}

/// Barycentric coordinates of a point known to lie in the triangle plane.
pub fn barycentric_in_plane(p: Vec3f, a: Vec3f, b: Vec3f, c: Vec3f) -> [f64; 3] {
    let v0 = b - a;
    let v1 = c - a;
    let v2 = p - a;
    let d00 = v0.dot(v0);
    let d01 = v0.dot(v1);
    let d11 = v1.dot(v1);
    let d20 = v2.dot(v0);
    let d21 = v2.dot(v1);
    let denom = d00 * d11 - d01 * d01;
    let v = (d11 * d20 - d01 * d21) / denom;
    let w = (d00 * d21 - d01 * d20) / denom;
    [1.0 - v - w, v, w]
}

/// Roots of the characteristic polynomial of `[[a, b], [b, c]]`, largest
/// first, solved numerically rather than through the library's eigen path.
pub fn eigenvalues_2x2_charpoly(a: f64, b: f64, c: f64) -> (f64, f64) {
    // lambda^2 - (a + c) lambda + (ac - b^2) = 0
    let tr = a + c;
    let det = a * c - b * b;
    let disc = (tr * tr - 4.0 * det).max(0.0).sqrt();
    ((tr + disc) / 2.0, (tr - disc) / 2.0)
}
