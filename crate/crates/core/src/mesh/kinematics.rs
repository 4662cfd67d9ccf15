//! Forward kinematics over the joint tree and linear blend skinning.

use crate::error::{Error, Result};
use crate::math::{axis_angle_to_matrix, Real, Rigid, Rigidf, Vec3};
use crate::mesh::{ArticulatedMesh, DeformedMesh, PoseFrame, ROOT_PARENT};

/// World transform of every joint under the given pose.
///
/// Per-joint rotations apply about each joint's own origin in its local
/// frame; the root additionally receives the pose's translation. A zero pose
/// therefore reproduces the rest transforms exactly.
pub fn forward_kinematics<T: Real>(
    mesh: &ArticulatedMesh,
    joint_rotations: &[Vec3<T>],
    root_translation: Vec3<T>,
    lift: impl Fn(f64) -> T + Copy,
) -> Result<Vec<Rigid<T>>> {
    let nj = mesh.joint_count();
    if joint_rotations.len() != nj {
        return Err(Error::Dimension(format!(
            "pose has {} joints, mesh has {nj}",
            joint_rotations.len()
        )));
    }
    let lift_rigid = |g: &Rigidf| Rigid {
        r: crate::math::Mat3 {
            m: [
                [lift(g.r.m[0][0]), lift(g.r.m[0][1]), lift(g.r.m[0][2])],
                [lift(g.r.m[1][0]), lift(g.r.m[1][1]), lift(g.r.m[1][2])],
                [lift(g.r.m[2][0]), lift(g.r.m[2][1]), lift(g.r.m[2][2])],
            ],
        },
        t: Vec3::new(lift(g.t.x), lift(g.t.y), lift(g.t.z)),
    };

    let mut world: Vec<Option<Rigid<T>>> = vec![None; nj];
    for j in mesh.topo_order() {
        let rot = Rigid {
            r: axis_angle_to_matrix(joint_rotations[j]),
            t: Vec3::new(lift(0.0), lift(0.0), lift(0.0)),
        };
        let parent = mesh.joint_parents[j];
        let w = if parent == ROOT_PARENT {
            // World = translate ∘ rest ∘ rotate.
            let rest = lift_rigid(&mesh.joint_rest_transforms[j]);
            let mut w = rest.compose(rot);
            w.t = w.t + root_translation;
            w
        } else {
            // Local rest offset relative to the parent, then the local
            // rotation about this joint's origin.
            let local_rest = mesh.joint_rest_transforms[parent as usize]
                .inverse()
                .compose(mesh.joint_rest_transforms[j]);
            world[parent as usize]
                .unwrap()
                .compose(lift_rigid(&local_rest))
                .compose(rot)
        };
        world[j] = Some(w);
    }
    Ok(world.into_iter().map(|w| w.unwrap()).collect())
}

/// Skinning transforms: world pose composed with the inverse rest bind.
/// Applying these to rest vertices realizes the pose; an identity pose
/// yields identity transforms.
pub fn skinning_transforms<T: Real>(
    mesh: &ArticulatedMesh,
    pose: &PoseFrame,
    lift: impl Fn(f64) -> T + Copy,
) -> Result<Vec<Rigid<T>>> {
    let rotations: Vec<Vec3<T>> = pose
        .joint_rotations
        .iter()
        .map(|r| Vec3::new(lift(r[0]), lift(r[1]), lift(r[2])))
        .collect();
    let root_t = Vec3::new(
        lift(pose.root_translation[0]),
        lift(pose.root_translation[1]),
        lift(pose.root_translation[2]),
    );
    skinning_transforms_lifted(mesh, &rotations, root_t, lift)
}

/// As [`skinning_transforms`], but over already-lifted pose values so the
/// articulation can carry gradients.
pub fn skinning_transforms_lifted<T: Real>(
    mesh: &ArticulatedMesh,
    rotations: &[Vec3<T>],
    root_translation: Vec3<T>,
    lift: impl Fn(f64) -> T + Copy,
) -> Result<Vec<Rigid<T>>> {
    let world = forward_kinematics(mesh, rotations, root_translation, lift)?;
    Ok(world
        .into_iter()
        .enumerate()
        .map(|(j, w)| {
            let inv_rest = mesh.joint_rest_transforms[j].inverse();
            let lifted_inv = Rigid {
                r: crate::math::Mat3 {
                    m: [
                        [
                            lift(inv_rest.r.m[0][0]),
                            lift(inv_rest.r.m[0][1]),
                            lift(inv_rest.r.m[0][2]),
                        ],
                        [
                            lift(inv_rest.r.m[1][0]),
                            lift(inv_rest.r.m[1][1]),
                            lift(inv_rest.r.m[1][2]),
                        ],
                        [
                            lift(inv_rest.r.m[2][0]),
                            lift(inv_rest.r.m[2][1]),
                            lift(inv_rest.r.m[2][2]),
                        ],
                    ],
                },
                t: Vec3::new(lift(inv_rest.t.x), lift(inv_rest.t.y), lift(inv_rest.t.z)),
            };
            w.compose(lifted_inv)
        })
        .collect())
}

/// Linear blend skinning: each vertex is the weight-blended image of its
/// rest position under the given skinning transforms. Recomputes face
/// normals and Gram-Schmidt frames; degenerate deformed faces are flagged.
pub fn skin_lbs<T: Real>(
    mesh: &ArticulatedMesh,
    transforms: &[Rigid<T>],
    vertex_offsets: Option<&[Vec3<T>]>,
    lift: impl Fn(f64) -> T + Copy,
) -> Result<DeformedMesh<T>> {
    if transforms.len() != mesh.joint_count() {
        return Err(Error::Dimension(format!(
            "{} transforms for {} joints",
            transforms.len(),
            mesh.joint_count()
        )));
    }
    let mut vertices = Vec::with_capacity(mesh.vertex_count());
    for (vi, rest) in mesh.rest_vertices.iter().enumerate() {
        let mut base = Vec3::new(lift(rest.x), lift(rest.y), lift(rest.z));
        if let Some(offsets) = vertex_offsets {
            base = base + offsets[vi];
        }
        let mut acc = Vec3::new(lift(0.0), lift(0.0), lift(0.0));
        for &(j, w) in &mesh.skin_weights[vi] {
            acc = acc + transforms[j as usize].apply(base) * lift(w);
        }
        vertices.push(acc);
    }
    Ok(DeformedMesh::from_vertices(vertices, &mesh.faces))
}
