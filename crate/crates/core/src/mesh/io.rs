//! Mesh geometry I/O: plain-text OBJ for vertices and triangular faces,
//! plus a JSON rig sidecar holding the kinematic tree, skinning weights and
//! optional face side labels.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{Mat3, Rigidf, Vec3, Vec3f};
use crate::mesh::{ArticulatedMesh, FaceSide, ROOT_PARENT};

/// Parse a minimal OBJ: `v x y z` and triangular `f` statements. Face
/// entries may carry `/vt/vn` suffixes, which are ignored. Indices are
/// 1-based; negative (relative) indices are accepted.
pub fn parse_obj(text: &str) -> Result<(Vec<Vec3f>, Vec<[u32; 3]>)> {
    let mut vertices: Vec<Vec3f> = Vec::new();
    let mut faces: Vec<[u32; 3]> = Vec::new();
    for (ln, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut it = line.split_whitespace();
        match it.next() {
            Some("v") => {
                let mut coords = [0.0; 3];
                for c in coords.iter_mut() {
                    *c = it
                        .next()
                        .and_then(|t| t.parse::<f64>().ok())
                        .ok_or_else(|| {
                            Error::dataset("obj-bad-vertex", format!("line {}", ln + 1))
                        })?;
                }
                vertices.push(Vec3::from_array(coords));
            }
            Some("f") => {
                let idx: Vec<i64> = it
                    .map(|t| {
                        t.split('/')
                            .next()
                            .and_then(|s| s.parse::<i64>().ok())
                            .ok_or_else(|| {
                                Error::dataset("obj-bad-face", format!("line {}", ln + 1))
                            })
                    })
                    .collect::<Result<_>>()?;
                if idx.len() != 3 {
                    return Err(Error::dataset(
                        "obj-non-triangle",
                        format!("face with {} vertices at line {}", idx.len(), ln + 1),
                    ));
                }
                let mut f = [0u32; 3];
                for (k, &i) in idx.iter().enumerate() {
                    let resolved = if i > 0 {
                        i - 1
                    } else {
                        vertices.len() as i64 + i
                    };
                    if resolved < 0 || resolved >= vertices.len() as i64 {
                        return Err(Error::dataset(
                            "obj-face-index",
                            format!("face index {i} out of range at line {}", ln + 1),
                        ));
                    }
                    f[k] = resolved as u32;
                }
                faces.push(f);
            }
            // vt/vn/usemtl/etc. are irrelevant here.
            _ => {}
        }
    }
    Ok((vertices, faces))
}

pub fn write_obj(vertices: &[Vec3f], faces: &[[u32; 3]]) -> String {
    let mut out = String::new();
    for v in vertices {
        writeln!(out, "v {} {} {}", v.x, v.y, v.z).unwrap();
    }
    for f in faces {
        writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1).unwrap();
    }
    out
}

/// JSON rig sidecar. Rest transforms are row-major 3x4 (rotation | translation).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RigFile {
    /// Parent index per joint; the root entry is `null`.
    pub joint_parents: Vec<Option<u32>>,
    pub joint_rest_transforms: Vec<[[f64; 4]; 3]>,
    /// Sparse skinning weights as (vertex, joint, weight) triplets.
    pub skin_weights: Vec<(u32, u32, f64)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub face_side_labels: Option<Vec<FaceSide>>,
    /// Used to derive labels when none are given: faces whose rest normal
    /// has positive dot with this axis are palm.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub palm_axis: Option<[f64; 3]>,
}

impl RigFile {
    pub fn from_mesh(mesh: &ArticulatedMesh) -> Self {
        let mut triplets = Vec::new();
        for (vi, row) in mesh.skin_weights.iter().enumerate() {
            for &(j, w) in row {
                triplets.push((vi as u32, j, w));
            }
        }
        RigFile {
            joint_parents: mesh
                .joint_parents
                .iter()
                .map(|&p| if p == ROOT_PARENT { None } else { Some(p) })
                .collect(),
            joint_rest_transforms: mesh
                .joint_rest_transforms
                .iter()
                .map(|g| {
                    [
                        [g.r.m[0][0], g.r.m[0][1], g.r.m[0][2], g.t.x],
                        [g.r.m[1][0], g.r.m[1][1], g.r.m[1][2], g.t.y],
                        [g.r.m[2][0], g.r.m[2][1], g.r.m[2][2], g.t.z],
                    ]
                })
                .collect(),
            skin_weights: triplets,
            face_side_labels: Some(mesh.face_side_labels.clone()),
            palm_axis: None,
        }
    }
}

/// Assemble and validate an `ArticulatedMesh` from parsed OBJ geometry and a
/// rig sidecar. Missing side labels are derived from `palm_axis` (default
/// +z) against each face's rest normal.
pub fn assemble_mesh(
    vertices: Vec<Vec3f>,
    faces: Vec<[u32; 3]>,
    rig: RigFile,
) -> Result<ArticulatedMesh> {
    let nv = vertices.len();
    let nj = rig.joint_parents.len();
    if rig.joint_rest_transforms.len() != nj {
        return Err(Error::dataset(
            "rig-transform-count",
            "rest transform count does not match joint count",
        ));
    }
    let mut skin_weights: Vec<Vec<(u32, f64)>> = vec![Vec::new(); nv];
    for &(v, j, w) in &rig.skin_weights {
        if v as usize >= nv {
            return Err(Error::dataset(
                "rig-weight-vertex",
                format!("weight references vertex {v} out of range"),
            ));
        }
        skin_weights[v as usize].push((j, w));
    }
    let joint_rest_transforms: Vec<Rigidf> = rig
        .joint_rest_transforms
        .iter()
        .map(|rows| Rigidf {
            r: Mat3 {
                m: [
                    [rows[0][0], rows[0][1], rows[0][2]],
                    [rows[1][0], rows[1][1], rows[1][2]],
                    [rows[2][0], rows[2][1], rows[2][2]],
                ],
            },
            t: Vec3::new(rows[0][3], rows[1][3], rows[2][3]),
        })
        .collect();

    let face_side_labels = match rig.face_side_labels {
        Some(labels) => {
            if labels.len() != faces.len() {
                return Err(Error::dataset(
                    "rig-label-count",
                    "face side labels do not match face count",
                ));
            }
            labels
        }
        None => {
            let axis = Vec3::from_array(rig.palm_axis.unwrap_or([0.0, 0.0, 1.0]));
            faces
                .iter()
                .map(|f| {
                    let a = vertices[f[0] as usize];
                    let b = vertices[f[1] as usize];
                    let c = vertices[f[2] as usize];
                    if (b - a).cross(c - a).dot(axis) >= 0.0 {
                        FaceSide::Palm
                    } else {
                        FaceSide::Back
                    }
                })
                .collect()
        }
    };

    let mesh = ArticulatedMesh {
        rest_vertices: vertices,
        faces,
        joint_parents: rig
            .joint_parents
            .iter()
            .map(|p| p.unwrap_or(ROOT_PARENT))
            .collect(),
        joint_rest_transforms,
        skin_weights,
        face_side_labels,
    };
    mesh.validate()?;
    Ok(mesh)
}

pub fn load_mesh(obj_path: &Path, rig_path: &Path) -> Result<ArticulatedMesh> {
    let obj_text = std::fs::read_to_string(obj_path)?;
    let (vertices, faces) = parse_obj(&obj_text)?;
    let rig_text = std::fs::read_to_string(rig_path)?;
    let rig: RigFile = serde_json::from_str(&rig_text)
        .map_err(|e| Error::dataset("rig-parse", e.to_string()))?;
    assemble_mesh(vertices, faces, rig)
}

pub fn save_mesh(mesh: &ArticulatedMesh, obj_path: &Path, rig_path: &Path) -> Result<()> {
    std::fs::write(obj_path, write_obj(&mesh.rest_vertices, &mesh.faces))?;
    let rig = RigFile::from_mesh(mesh);
    std::fs::write(rig_path, serde_json::to_string_pretty(&rig).unwrap())?;
    Ok(())
}
