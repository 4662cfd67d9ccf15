//! Versioned checkpoint container: a JSON manifest followed by raw
//! little-endian numeric blobs. Self-contained for rendering: the full mesh
//! rides along with the learned state, so `render` needs no dataset.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::diff::adam::AdamState;
use crate::diff::model::Avatar;
use crate::diff::params::PoseDelta;
use crate::error::{Error, Result};
use crate::lighting::{Activation, LightingNet};
use crate::math::{Rigidf, Vec3, Vec3f};
use crate::mesh::{ArticulatedMesh, FaceSide, ROOT_PARENT};
use crate::surfgauss::{SurfaceGaussian, GAUSSIAN_PARAM_COUNT};

const MAGIC: &[u8; 8] = b"SSPLATC1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct BlobDesc {
    name: String,
    dtype: String, // "f64" | "u32"
    offset: u64,
    len: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LightingDesc {
    input_dim: usize,
    hidden: Vec<usize>,
    sh_order: usize,
    activation: Activation,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    version: u32,
    seed: u64,
    z_max: f64,
    lighting: LightingDesc,
    lighting_uses_root_translation: bool,
    n_vertices: usize,
    n_faces: usize,
    n_joints: usize,
    n_gaussians: usize,
    n_frames: usize,
    joint_parents: Vec<Option<u32>>,
    face_side_labels: Vec<FaceSide>,
    optimizer_step: Option<u64>,
    config_echo: Option<RunConfig>,
    blobs: Vec<BlobDesc>,
}

/// Fully materialized checkpoint contents.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub avatar: Avatar,
    pub seed: u64,
    pub optimizer: Option<AdamState>,
    pub config_echo: Option<RunConfig>,
}

struct BlobWriter {
    bytes: Vec<u8>,
    descs: Vec<BlobDesc>,
}

impl BlobWriter {
    fn new() -> Self {
        BlobWriter {
            bytes: Vec::new(),
            descs: Vec::new(),
        }
    }

    fn push_f64(&mut self, name: &str, values: impl IntoIterator<Item = f64>) {
        let offset = self.bytes.len() as u64;
        let mut len = 0u64;
        for v in values {
            self.bytes.extend_from_slice(&v.to_le_bytes());
            len += 1;
        }
        self.descs.push(BlobDesc {
            name: name.into(),
            dtype: "f64".into(),
            offset,
            len,
        });
    }

    fn push_u32(&mut self, name: &str, values: impl IntoIterator<Item = u32>) {
        let offset = self.bytes.len() as u64;
        let mut len = 0u64;
        for v in values {
            self.bytes.extend_from_slice(&v.to_le_bytes());
            len += 1;
        }
        self.descs.push(BlobDesc {
            name: name.into(),
            dtype: "u32".into(),
            offset,
            len,
        });
    }
}

struct BlobReader<'a> {
    bytes: &'a [u8],
    manifest: &'a Manifest,
}

impl<'a> BlobReader<'a> {
    fn find(&self, name: &str, dtype: &str) -> Result<&'a BlobDesc> {
        self.manifest
            .blobs
            .iter()
            .find(|b| b.name == name)
            .filter(|b| b.dtype == dtype)
            .ok_or_else(|| Error::Checkpoint(format!("missing blob '{name}' ({dtype})")))
    }

    fn read_f64(&self, name: &str) -> Result<Vec<f64>> {
        let d = self.find(name, "f64")?;
        let start = d.offset as usize;
        let end = start + d.len as usize * 8;
        if end > self.bytes.len() {
            return Err(Error::Checkpoint(format!("blob '{name}' out of bounds")));
        }
        Ok(self.bytes[start..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn read_u32(&self, name: &str) -> Result<Vec<u32>> {
        let d = self.find(name, "u32")?;
        let start = d.offset as usize;
        let end = start + d.len as usize * 4;
        if end > self.bytes.len() {
            return Err(Error::Checkpoint(format!("blob '{name}' out of bounds")));
        }
        Ok(self.bytes[start..end]
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub fn save(checkpoint: &Checkpoint, path: &Path) -> Result<()> {
    let avatar = &checkpoint.avatar;
    let mesh = &avatar.mesh;
    let mut blobs = BlobWriter::new();
    blobs.push_f64(
        "rest_vertices",
        mesh.rest_vertices.iter().flat_map(|v| v.to_array()),
    );
    blobs.push_u32("faces", mesh.faces.iter().flatten().copied());
    blobs.push_f64(
        "joint_rest_transforms",
        mesh.joint_rest_transforms.iter().flat_map(|g| {
            [
                g.r.m[0][0], g.r.m[0][1], g.r.m[0][2], g.t.x, g.r.m[1][0], g.r.m[1][1],
                g.r.m[1][2], g.t.y, g.r.m[2][0], g.r.m[2][1], g.r.m[2][2], g.t.z,
            ]
        }),
    );
    let mut sw_vertex = Vec::new();
    let mut sw_joint = Vec::new();
    let mut sw_weight = Vec::new();
    for (vi, row) in mesh.skin_weights.iter().enumerate() {
        for &(j, w) in row {
            sw_vertex.push(vi as u32);
            sw_joint.push(j);
            sw_weight.push(w);
        }
    }
    blobs.push_u32("skin_vertex", sw_vertex);
    blobs.push_u32("skin_joint", sw_joint);
    blobs.push_f64("skin_weight", sw_weight);
    blobs.push_f64(
        "vertex_offsets",
        avatar.vertex_offsets.iter().flat_map(|v| v.to_array()),
    );
    blobs.push_u32("gaussian_face_ids", avatar.gaussians.iter().map(|g| g.face_id));
    blobs.push_f64(
        "gaussian_params",
        avatar.gaussians.iter().flat_map(|g| g.to_params()),
    );
    blobs.push_f64("lighting_params", avatar.net.params.iter().copied());
    blobs.push_f64(
        "pose_deltas",
        avatar.pose_deltas.iter().flat_map(|d| {
            d.joint_rotations
                .iter()
                .flatten()
                .copied()
                .chain(d.root_translation)
                .collect::<Vec<_>>()
        }),
    );
    if let Some(opt) = &checkpoint.optimizer {
        blobs.push_f64("adam_m", opt.m.iter().copied());
        blobs.push_f64("adam_v", opt.v.iter().copied());
    }

    let manifest = Manifest {
        version: FORMAT_VERSION,
        seed: checkpoint.seed,
        z_max: avatar.z_max,
        lighting: LightingDesc {
            input_dim: avatar.net.input_dim,
            hidden: avatar.net.hidden.clone(),
            sh_order: avatar.net.sh_order,
            activation: avatar.net.activation,
        },
        lighting_uses_root_translation: avatar.lighting_uses_root_translation,
        n_vertices: mesh.vertex_count(),
        n_faces: mesh.face_count(),
        n_joints: mesh.joint_count(),
        n_gaussians: avatar.gaussians.len(),
        n_frames: avatar.pose_deltas.len(),
        joint_parents: mesh
            .joint_parents
            .iter()
            .map(|&p| if p == ROOT_PARENT { None } else { Some(p) })
            .collect(),
        face_side_labels: mesh.face_side_labels.clone(),
        optimizer_step: checkpoint.optimizer.as_ref().map(|o| o.step),
        config_echo: checkpoint.config_echo.clone(),
        blobs: blobs.descs.clone(),
    };
    let manifest_json = serde_json::to_vec(&manifest).unwrap();

    let mut out = Vec::with_capacity(12 + manifest_json.len() + blobs.bytes.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(manifest_json.len() as u32).to_le_bytes());
    out.extend_from_slice(&manifest_json);
    out.extend_from_slice(&blobs.bytes);
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path)?;
    if bytes.len() < 12 || &bytes[..8] != MAGIC {
        return Err(Error::Checkpoint(format!(
            "{} is not a checkpoint file",
            path.display()
        )));
    }
    let mlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    if bytes.len() < 12 + mlen {
        return Err(Error::Checkpoint("truncated manifest".into()));
    }
    let manifest: Manifest = serde_json::from_slice(&bytes[12..12 + mlen])
        .map_err(|e| Error::Checkpoint(format!("manifest parse: {e}")))?;
    if manifest.version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {}",
            manifest.version
        )));
    }
    let reader = BlobReader {
        bytes: &bytes[12 + mlen..],
        manifest: &manifest,
    };

    let rest_raw = reader.read_f64("rest_vertices")?;
    let rest_vertices: Vec<Vec3f> = rest_raw
        .chunks_exact(3)
        .map(|c| Vec3::new(c[0], c[1], c[2]))
        .collect();
    if rest_vertices.len() != manifest.n_vertices {
        return Err(Error::Checkpoint("vertex count mismatch".into()));
    }
    let faces_raw = reader.read_u32("faces")?;
    let faces: Vec<[u32; 3]> = faces_raw
        .chunks_exact(3)
        .map(|c| [c[0], c[1], c[2]])
        .collect();
    let jrt_raw = reader.read_f64("joint_rest_transforms")?;
    let joint_rest_transforms: Vec<Rigidf> = jrt_raw
        .chunks_exact(12)
        .map(|c| Rigidf {
            r: crate::math::Mat3 {
                m: [[c[0], c[1], c[2]], [c[4], c[5], c[6]], [c[8], c[9], c[10]]],
            },
            t: Vec3::new(c[3], c[7], c[11]),
        })
        .collect();
    let sw_vertex = reader.read_u32("skin_vertex")?;
    let sw_joint = reader.read_u32("skin_joint")?;
    let sw_weight = reader.read_f64("skin_weight")?;
    if sw_vertex.len() != sw_joint.len() || sw_joint.len() != sw_weight.len() {
        return Err(Error::Checkpoint("skin weight triplet lengths differ".into()));
    }
    let mut skin_weights: Vec<Vec<(u32, f64)>> = vec![Vec::new(); manifest.n_vertices];
    for ((&v, &j), &w) in sw_vertex.iter().zip(&sw_joint).zip(&sw_weight) {
        if v as usize >= skin_weights.len() {
            return Err(Error::Checkpoint("skin weight vertex out of range".into()));
        }
        skin_weights[v as usize].push((j, w));
    }
    let mesh = ArticulatedMesh {
        rest_vertices,
        faces,
        joint_parents: manifest
            .joint_parents
            .iter()
            .map(|p| p.unwrap_or(ROOT_PARENT))
            .collect(),
        joint_rest_transforms,
        skin_weights,
        face_side_labels: manifest.face_side_labels.clone(),
    };
    mesh.validate()?;

    let vertex_offsets: Vec<Vec3f> = reader
        .read_f64("vertex_offsets")?
        .chunks_exact(3)
        .map(|c| Vec3::new(c[0], c[1], c[2]))
        .collect();
    let face_ids = reader.read_u32("gaussian_face_ids")?;
    let gparams = reader.read_f64("gaussian_params")?;
    if gparams.len() != face_ids.len() * GAUSSIAN_PARAM_COUNT {
        return Err(Error::Checkpoint("gaussian parameter blob size mismatch".into()));
    }
    let gaussians: Vec<SurfaceGaussian> = face_ids
        .iter()
        .zip(gparams.chunks_exact(GAUSSIAN_PARAM_COUNT))
        .map(|(&fid, chunk)| SurfaceGaussian::from_params(fid, chunk))
        .collect();

    let mut net = LightingNet {
        input_dim: manifest.lighting.input_dim,
        hidden: manifest.lighting.hidden.clone(),
        sh_order: manifest.lighting.sh_order,
        activation: manifest.lighting.activation,
        params: Vec::new(),
    };
    net.params = reader.read_f64("lighting_params")?;
    net.validate()?;

    let deltas_raw = reader.read_f64("pose_deltas")?;
    let stride = manifest.n_joints * 3 + 3;
    if deltas_raw.len() != manifest.n_frames * stride {
        return Err(Error::Checkpoint("pose delta blob size mismatch".into()));
    }
    let pose_deltas: Vec<PoseDelta> = deltas_raw
        .chunks_exact(stride)
        .map(|c| PoseDelta {
            joint_rotations: c[..manifest.n_joints * 3]
                .chunks_exact(3)
                .map(|r| [r[0], r[1], r[2]])
                .collect(),
            root_translation: [c[stride - 3], c[stride - 2], c[stride - 1]],
        })
        .collect();

    let avatar = Avatar {
        mesh,
        vertex_offsets,
        gaussians,
        net,
        pose_deltas,
        z_max: manifest.z_max,
        lighting_uses_root_translation: manifest.lighting_uses_root_translation,
    };
    avatar.validate()?;

    let optimizer = match (
        reader.read_f64("adam_m").ok(),
        reader.read_f64("adam_v").ok(),
        manifest.optimizer_step,
    ) {
        (Some(m), Some(v), Some(step)) => Some(AdamState { m, v, step }),
        _ => None,
    };

    Ok(Checkpoint {
        avatar,
        seed: manifest.seed,
        optimizer,
        config_echo: manifest.config_echo,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lighting::Activation;
    use crate::surfgauss::init_per_face;
    use rand::SeedableRng;

    fn sample_checkpoint() -> Checkpoint {
        let mesh = ArticulatedMesh {
            rest_vertices: vec![
                Vec3::new(0.0, 0.0, 0.3),
                Vec3::new(0.1, 0.0, 0.3),
                Vec3::new(0.0, 0.1, 0.3),
                Vec3::new(0.1, 0.1, 0.3),
            ],
            faces: vec![[0, 1, 2], [1, 3, 2]],
            joint_parents: vec![ROOT_PARENT],
            joint_rest_transforms: vec![Rigidf::IDENTITY],
            skin_weights: vec![vec![(0, 1.0)]; 4],
            face_side_labels: vec![FaceSide::Palm, FaceSide::Back],
        };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let gaussians = init_per_face(&mesh, 2, 0.7, 0.1, 0.5, &mut rng);
        let net = LightingNet::init(3, vec![8], 2, Activation::Softplus, &mut rng);
        let mut avatar = Avatar::new(mesh, gaussians, net, 3, 0.002, false);
        avatar.vertex_offsets[2] = Vec3::new(1e-4, -2e-4, 3e-4);
        avatar.pose_deltas[1].joint_rotations[0] = [0.01, -0.02, 0.03];
        let mut optimizer = AdamState::new(avatar.layout().total_len());
        optimizer.step = 17;
        optimizer.m[3] = 0.25;
        optimizer.v[3] = 0.5;
        Checkpoint {
            avatar,
            seed: 1234,
            optimizer: Some(optimizer),
            config_echo: Some(RunConfig::default()),
        }
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.ckpt");
        let p2 = dir.path().join("b.ckpt");
        let ck = sample_checkpoint();
        save(&ck, &p1).unwrap();
        let loaded = load(&p1).unwrap();
        save(&loaded, &p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn loaded_state_matches_saved_state() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.ckpt");
        let ck = sample_checkpoint();
        save(&ck, &p).unwrap();
        let loaded = load(&p).unwrap();
        assert_eq!(loaded.seed, ck.seed);
        assert_eq!(loaded.avatar.gaussians, ck.avatar.gaussians);
        assert_eq!(loaded.avatar.net.params, ck.avatar.net.params);
        assert_eq!(loaded.avatar.pose_deltas, ck.avatar.pose_deltas);
        assert_eq!(loaded.optimizer, ck.optimizer);
        assert_eq!(loaded.config_echo, ck.config_echo);
        assert_eq!(
            loaded.avatar.mesh.rest_vertices[3].to_array(),
            ck.avatar.mesh.rest_vertices[3].to_array()
        );
    }

    #[test]
    fn rejects_non_checkpoint_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("junk.ckpt");
        std::fs::write(&p, b"not a checkpoint").unwrap();
        assert!(matches!(load(&p), Err(Error::Checkpoint(_))));
    }
}
