//! Exact point-to-triangle queries with deterministic tie-breaking.

use crate::error::{Error, Result};
use crate::math::Vec3f;

/// Closest point on a single triangle via Voronoi-region classification.
/// Returns the surface point and its barycentric coordinates.
pub fn closest_point_on_triangle(p: Vec3f, a: Vec3f, b: Vec3f, c: Vec3f) -> (Vec3f, [f64; 3]) {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(ap);
    let d2 = ac.dot(ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return (a, [1.0, 0.0, 0.0]);
    }

    let bp = p - b;
    let d3 = ab.dot(bp);
    let d4 = ac.dot(bp);
    if d3 >= 0.0 && d4 <= d3 {
        return (b, [0.0, 1.0, 0.0]);
    }

    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return (a + ab * v, [1.0 - v, v, 0.0]);
    }

    let cp = p - c;
    let d5 = ab.dot(cp);
    let d6 = ac.dot(cp);
    if d6 >= 0.0 && d5 <= d6 {
        return (c, [0.0, 0.0, 1.0]);
    }

    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return (a + ac * w, [1.0 - w, 0.0, w]);
    }

    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return (b + (c - b) * w, [0.0, 1.0 - w, w]);
    }

    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    (a + ab * v + ac * w, [1.0 - v - w, v, w])
}

/// Scan every face for the closest one. Ties break deterministically toward
/// the lowest face index (strict-less update). Errors when no face exists.
pub fn closest_triangle_linear(
    vertices: &[Vec3f],
    faces: &[[u32; 3]],
    point: Vec3f,
) -> Result<(usize, [f64; 3], f64)> {
    if faces.is_empty() {
        return Err(Error::Domain("mesh has no faces".into()));
    }
    let mut best: Option<(usize, [f64; 3], f64)> = None;
    for (fi, f) in faces.iter().enumerate() {
        let (q, bary) = closest_point_on_triangle(
            point,
            vertices[f[0] as usize],
            vertices[f[1] as usize],
            vertices[f[2] as usize],
        );
        let d = (point - q).norm();
        match best {
            Some((_, _, bd)) if d >= bd => {}
            _ => best = Some((fi, bary, d)),
        }
    }
    Ok(best.unwrap())
}

/// Closest face to a query point on a deformed or rest mesh.
pub fn closest_triangle(
    vertices: &[Vec3f],
    faces: &[[u32; 3]],
    point: Vec3f,
) -> Result<(usize, [f64; 3], f64)> {
    closest_triangle_linear(vertices, faces, point)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::Vec3;
    use crate::testutil::closest_point_plane_clamp;
    use rand::{Rng, SeedableRng};

    #[test]
    fn centroid_lifted_along_normal() {
        let a = Vec3::new(0.0, 0.0, 0.0);
        let b = Vec3::new(1.0, 0.0, 0.0);
        let c = Vec3::new(0.0, 1.0, 0.0);
        let centroid = (a + b + c) * (1.0 / 3.0);
        let h = 0.25;
        let p = centroid + Vec3::new(0.0, 0.0, h);
        let (fi, bary, d) = closest_triangle(&[a, b, c], &[[0, 1, 2]], p).unwrap();
        assert_eq!(fi, 0);
        assert!((d - h).abs() < 1e-12);
        for w in bary {
            assert!((w - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn shared_vertex_ties_break_low() {
        // Two faces sharing vertex 1; querying at that vertex must pick face 0.
        let verts = vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
            Vec3::new(2.0, 1.0, 0.0),
        ];
        let faces = vec![[0, 1, 2], [1, 3, 2]];
        let (fi, _, d) = closest_triangle(&verts, &faces, verts[1]).unwrap();
        assert_eq!(fi, 0);
        assert!(d < 1e-15);
    }

    #[test]
    fn barycentric_output_in_simplex() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let a = Vec3::new(0.1, -0.2, 0.3);
        let b = Vec3::new(1.2, 0.4, -0.1);
        let c = Vec3::new(-0.3, 0.9, 0.8);
        for _ in 0..500 {
            let p = Vec3::new(
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
            );
            let (q, bary) = closest_point_on_triangle(p, a, b, c);
            let sum: f64 = bary.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
            for w in bary {
                assert!((-1e-12..=1.0 + 1e-12).contains(&w));
            }
            // Barycentric reconstruction matches the returned point.
            let r = a * bary[0] + b * bary[1] + c * bary[2];
            assert!((r - q).norm() < 1e-12);
        }
    }

    #[test]
    fn matches_independent_plane_clamp_oracle() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        for _ in 0..200 {
            let tri: Vec<Vec3f> = (0..3)
                .map(|_| {
                    Vec3::new(
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                    )
                })
                .collect();
            let area2 = (tri[1] - tri[0]).cross(tri[2] - tri[0]).norm();
            if area2 < 1e-3 {
                continue;
            }
            let p = Vec3::new(
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
            );
            let (q, _) = closest_point_on_triangle(p, tri[0], tri[1], tri[2]);
            let q_oracle = closest_point_plane_clamp(p, tri[0], tri[1], tri[2]);
            assert!(
                ((p - q).norm() - (p - q_oracle).norm()).abs() < 1e-10,
                "distance mismatch: {} vs {}",
                (p - q).norm(),
                (p - q_oracle).norm()
            );
        }
    }

    #[test]
    fn scan_agrees_with_oracle_scan_on_random_mesh() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(23);
        let verts: Vec<Vec3f> = (0..12)
            .map(|_| {
                Vec3::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                )
            })
            .collect();
        let mut faces = Vec::new();
        for _ in 0..8 {
            let mut idx = [0u32; 3];
            loop {
                for k in &mut idx {
                    *k = rng.gen_range(0..verts.len() as u32);
                }
                if idx[0] != idx[1] && idx[1] != idx[2] && idx[0] != idx[2] {
                    let a2 = (verts[idx[1] as usize] - verts[idx[0] as usize])
                        .cross(verts[idx[2] as usize] - verts[idx[0] as usize])
                        .norm();
                    if a2 > 1e-3 {
                        break;
                    }
                }
            }
            faces.push(idx);
        }
        for _ in 0..200 {
            let p = Vec3::new(
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
            );
            let (fi, _, d) = closest_triangle(&verts, &faces, p).unwrap();
            // Independent scan with the independent per-face routine.
            let mut best = (usize::MAX, f64::INFINITY);
            for (gi, g) in faces.iter().enumerate() {
                let q = closest_point_plane_clamp(
                    p,
                    verts[g[0] as usize],
                    verts[g[1] as usize],
                    verts[g[2] as usize],
                );
                let gd = (p - q).norm();
                if gd < best.1 {
                    best = (gi, gd);
                }
            }
            assert!((d - best.1).abs() < 1e-10);
            // Faces may differ only on exact distance ties.
            if fi != best.0 {
                assert!((d - best.1).abs() < 1e-10);
            }
        }
    }
}
