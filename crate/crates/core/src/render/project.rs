//! Perspective projection of world splats into screen space.

use crate::math::{Real, Vec3};
use crate::render::{Camera, RasterSettings};
use crate::surfgauss::WorldSplat;

/// A splat in screen space. `cov` is the symmetric 2x2 covariance stored as
/// (a, b, c) for [[a, b], [b, c]], in px^2 and already regularized.
#[derive(Debug, Clone, Copy)]
pub struct ScreenSplat<S> {
    pub mean: [S; 2],
    pub cov: [S; 3],
    /// Camera-space depth, used only for ordering.
    pub depth: S,
    /// Post-shading color.
    pub color: [S; 3],
    pub opacity: S,
}

impl<T: Real> ScreenSplat<T> {
    pub fn to_f64(&self) -> ScreenSplat<f64> {
        ScreenSplat {
            mean: [self.mean[0].val(), self.mean[1].val()],
            cov: [self.cov[0].val(), self.cov[1].val(), self.cov[2].val()],
            depth: self.depth.val(),
            color: [self.color[0].val(), self.color[1].val(), self.color[2].val()],
            opacity: self.opacity.val(),
        }
    }
}

/// Project a shaded world splat through a pinhole camera.
///
/// The flat tangent-plane ellipse maps through the local affine
/// approximation of the projection at the splat center: with camera-frame
/// axes u, v scaled by the ellipse radii, cov2d = (J [u v]) (J [u v])^T plus
/// the isotropic regularizer. Returns `None` when the center sits at or
/// behind the near plane or the entire `extent_sigma` footprint misses the
/// image.
pub fn project_splat<T: Real>(
    cam: &Camera,
    ws: &WorldSplat<T>,
    shaded_color: [T; 3],
    settings: &RasterSettings,
) -> Option<ScreenSplat<T>> {
    let r = cam.world_to_camera.r;
    let t = cam.world_to_camera.t;
    let lift_rot = |p: Vec3<T>| {
        Vec3::new(
            p.x * r.m[0][0] + p.y * r.m[0][1] + p.z * r.m[0][2],
            p.x * r.m[1][0] + p.y * r.m[1][1] + p.z * r.m[1][2],
            p.x * r.m[2][0] + p.y * r.m[2][1] + p.z * r.m[2][2],
        )
    };
    let mut p_cam = lift_rot(ws.center);
    p_cam = Vec3::new(p_cam.x + t.x, p_cam.y + t.y, p_cam.z + t.z);
    if p_cam.z.val() <= settings.near {
        return None;
    }
    let inv_z = p_cam.z.recip();
    let mean = [
        p_cam.x * inv_z * cam.fx + cam.cx,
        p_cam.y * inv_z * cam.fy + cam.cy,
    ];

    // Scaled ellipse axes in camera coordinates.
    let axis_u = lift_rot(ws.tangent_u) * ws.scales[0];
    let axis_v = lift_rot(ws.tangent_v) * ws.scales[1];

    // Projection Jacobian at the center applied to each axis:
    // d(px)/d(cam) = [fx/z, 0, -fx x/z^2; 0, fy/z, -fy y/z^2].
    let jac = |a: Vec3<T>| {
        [
            (a.x - p_cam.x * inv_z * a.z) * inv_z * cam.fx,
            (a.y - p_cam.y * inv_z * a.z) * inv_z * cam.fy,
        ]
    };
    let m0 = jac(axis_u);
    let m1 = jac(axis_v);
    let cov = [
        m0[0] * m0[0] + m1[0] * m1[0] + settings.eps_cov,
        m0[0] * m0[1] + m1[0] * m1[1],
        m0[1] * m0[1] + m1[1] * m1[1] + settings.eps_cov,
    ];

    // Conservative screen radius from the largest covariance eigenvalue.
    let (a, b, c) = (cov[0].val(), cov[1].val(), cov[2].val());
    let eig_max = 0.5 * ((a + c) + ((a - c) * (a - c) + 4.0 * b * b).sqrt());
    let radius = settings.extent_sigma * eig_max.max(0.0).sqrt();
    let (mx, my) = (mean[0].val(), mean[1].val());
    if mx + radius < 0.0
        || mx - radius > (cam.width - 1) as f64
        || my + radius < 0.0
        || my - radius > (cam.height - 1) as f64
    {
        return None;
    }

    Some(ScreenSplat {
        mean,
        cov,
        depth: p_cam.z,
        color: shaded_color,
        opacity: ws.opacity,
    })
}
