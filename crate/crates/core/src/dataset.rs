//! On-disk dataset layout and validation.
//!
//! ```text
//! root/
//!   mesh.obj            triangle geometry
//!   rig.json            joints, skinning, face side labels
//!   poses.json          T pose frames
//!   cameras.json        per-view intrinsics + fixed or per-frame extrinsics
//!   frames/<view>/<t>.png   target images (16-bit linear PNG), t zero-padded to 4
//!   masks/<t>_object.png    optional binary object masks
//!   masks/<t>_hand.png      optional binary hand masks
//!   gt_checkpoint.ckpt      (synthetic sets) the generating ground truth
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{read_mask, read_png, Imagef};
use crate::math::{Mat3, Rigidf, Vec3};
use crate::mesh::{io as mesh_io, ArticulatedMesh, PoseFrame};
use crate::render::Camera;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PosesFile {
    pub frames: Vec<PoseFrame>,
}

/// Row-major 3x4 rigid transform as stored in JSON.
pub type RigidRows = [[f64; 4]; 3];

pub fn rigid_to_rows(g: &Rigidf) -> RigidRows {
    [
        [g.r.m[0][0], g.r.m[0][1], g.r.m[0][2], g.t.x],
        [g.r.m[1][0], g.r.m[1][1], g.r.m[1][2], g.t.y],
        [g.r.m[2][0], g.r.m[2][1], g.r.m[2][2], g.t.z],
    ]
}

pub fn rigid_from_rows(rows: &RigidRows) -> Rigidf {
    Rigidf {
        r: Mat3 {
            m: [
                [rows[0][0], rows[0][1], rows[0][2]],
                [rows[1][0], rows[1][1], rows[1][2]],
                [rows[2][0], rows[2][1], rows[2][2]],
            ],
        },
        t: Vec3::new(rows[0][3], rows[1][3], rows[2][3]),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraView {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    /// Fixed extrinsics, or omit and provide `world_to_camera_per_frame`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub world_to_camera: Option<RigidRows>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub world_to_camera_per_frame: Option<Vec<RigidRows>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CamerasFile {
    pub views: Vec<CameraView>,
}

impl CameraView {
    /// Camera for a specific frame index.
    pub fn camera_for_frame(&self, t: usize) -> Result<Camera> {
        let extr = match (&self.world_to_camera, &self.world_to_camera_per_frame) {
            (Some(fixed), None) => rigid_from_rows(fixed),
            (None, Some(per_frame)) => {
                let rows = per_frame.get(t).ok_or_else(|| {
                    Error::dataset(
                        "camera-frame-extrinsics",
                        format!("view has no extrinsics for frame {t}"),
                    )
                })?;
                rigid_from_rows(rows)
            }
            _ => {
                return Err(Error::dataset(
                    "camera-extrinsics",
                    "exactly one of world_to_camera / world_to_camera_per_frame required",
                ))
            }
        };
        let cam = Camera {
            fx: self.fx,
            fy: self.fy,
            cx: self.cx,
            cy: self.cy,
            width: self.width,
            height: self.height,
            world_to_camera: extr,
        };
        cam.validate()
            .map_err(|e| Error::dataset("camera-invalid", e.to_string()))?;
        Ok(cam)
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub mesh: ArticulatedMesh,
    pub poses: Vec<PoseFrame>,
    pub views: Vec<CameraView>,
}

impl Dataset {
    pub fn frame_path(&self, view: usize, t: usize) -> PathBuf {
        self.root.join("frames").join(view.to_string()).join(format!("{t:04}.png"))
    }

    pub fn object_mask_path(&self, t: usize) -> PathBuf {
        self.root.join("masks").join(format!("{t:04}_object.png"))
    }

    pub fn hand_mask_path(&self, t: usize) -> PathBuf {
        self.root.join("masks").join(format!("{t:04}_hand.png"))
    }

    pub fn n_frames(&self) -> usize {
        self.poses.len()
    }

    pub fn n_views(&self) -> usize {
        self.views.len()
    }

    pub fn load_frame(&self, view: usize, t: usize) -> Result<Imagef> {
        read_png(&self.frame_path(view, t))
    }

    /// Parse the dataset structure and run full validation.
    pub fn load(root: &Path) -> Result<Dataset> {
        let need = |name: &str| -> Result<PathBuf> {
            let p = root.join(name);
            if !p.exists() {
                return Err(Error::dataset(
                    "dataset-missing-file",
                    format!("{} not found", p.display()),
                ));
            }
            Ok(p)
        };
        let mesh = mesh_io::load_mesh(&need("mesh.obj")?, &need("rig.json")?)?;
        let poses_text = std::fs::read_to_string(need("poses.json")?)?;
        let poses_file: PosesFile = serde_json::from_str(&poses_text)
            .map_err(|e| Error::dataset("poses-parse", e.to_string()))?;
        let poses: Vec<PoseFrame> = poses_file
            .frames
            .into_iter()
            .map(|p| p.normalized())
            .collect::<Result<_>>()?;
        let cameras_text = std::fs::read_to_string(need("cameras.json")?)?;
        let cameras_file: CamerasFile = serde_json::from_str(&cameras_text)
            .map_err(|e| Error::dataset("cameras-parse", e.to_string()))?;
        let ds = Dataset {
            root: root.to_path_buf(),
            mesh,
            poses,
            views: cameras_file.views,
        };
        ds.validate()?;
        Ok(ds)
    }

    /// Structural validation: pose/joint agreement, camera sanity, frame
    /// presence and dimensions, mask binarity and dimensions.
    pub fn validate(&self) -> Result<()> {
        self.mesh.validate()?;
        if self.poses.is_empty() {
            return Err(Error::dataset("poses-empty", "dataset has no poses"));
        }
        if self.views.is_empty() {
            return Err(Error::dataset("cameras-empty", "dataset has no views"));
        }
        let nj = self.mesh.joint_count();
        for (t, p) in self.poses.iter().enumerate() {
            if p.joint_count() != nj {
                return Err(Error::dataset(
                    "pose-joint-count",
                    format!("pose {t} has {} joints, mesh has {nj}", p.joint_count()),
                ));
            }
        }
        let t_total = self.poses.len();
        for (vi, view) in self.views.iter().enumerate() {
            if let Some(per_frame) = &view.world_to_camera_per_frame {
                if per_frame.len() != t_total {
                    return Err(Error::dataset(
                        "camera-frame-count",
                        format!(
                            "view {vi} has {} per-frame extrinsics for {t_total} poses",
                            per_frame.len()
                        ),
                    ));
                }
            }
            // Validates intrinsics and extrinsics presence.
            view.camera_for_frame(0)?;
            for t in 0..t_total {
                let p = self.frame_path(vi, t);
                if !p.exists() {
                    return Err(Error::dataset(
                        "dataset-frame-count",
                        format!("missing frame {}", p.display()),
                    ));
                }
                let img = read_png(&p)?;
                if img.width != view.width || img.height != view.height {
                    return Err(Error::dataset(
                        "dataset-image-dims",
                        format!(
                            "frame {} is {}x{}, camera says {}x{}",
                            p.display(),
                            img.width,
                            img.height,
                            view.width,
                            view.height
                        ),
                    ));
                }
            }
        }
        // Masks are optional but must be binary and well-sized when present.
        let (w0, h0) = (self.views[0].width, self.views[0].height);
        for t in 0..t_total {
            for path in [self.object_mask_path(t), self.hand_mask_path(t)] {
                if path.exists() {
                    let m = read_mask(&path)?;
                    if m.len() != w0 * h0 {
                        return Err(Error::dataset(
                            "mask-dims",
                            format!("mask {} has wrong size", path.display()),
                        ));
                    }
                }
            }
        }
        Ok(())
    }
}
