//! Reconstruction loss: (1 - lambda) * L1 + lambda * (1 - SSIM) on linear
//! RGB, with a hand-derived backward pass for the SSIM term.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::image::Imagef;
use crate::render::metrics::{
    channel_plane, filter_renorm_adjoint, ssim_channel_maps, SSIM_C1, SSIM_C2,
};

#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    /// (1 - lambda) * l1 + lambda * dssim + sum of regularizers.
    pub total: f64,
    pub l1: f64,
    pub dssim: f64,
    pub regularizers: BTreeMap<String, f64>,
}

impl LossReport {
    pub fn weighted_image_terms(lambda: f64, l1: f64, dssim: f64) -> f64 {
        (1.0 - lambda) * l1 + lambda * dssim
    }
}

fn check_dims(rendered: &Imagef, target: &Imagef) -> Result<()> {
    if !rendered.same_dims(target) {
        return Err(Error::Dimension(format!(
            "loss images {}x{} vs {}x{}",
            rendered.width, rendered.height, target.width, target.height
        )));
    }
    Ok(())
}

/// Forward-only loss, no regularizers.
pub fn reconstruction_loss(rendered: &Imagef, target: &Imagef, lambda: f64) -> Result<LossReport> {
    check_dims(rendered, target)?;
    let (w, h) = (rendered.width, rendered.height);
    let n = (w * h * 3) as f64;
    let mut l1 = 0.0;
    for (r, t) in rendered.data.iter().zip(&target.data) {
        for ch in 0..3 {
            l1 += (r[ch] - t[ch]).abs();
        }
    }
    l1 /= n;
    let mut ssim_sum = 0.0;
    for ch in 0..3 {
        let maps = ssim_channel_maps(
            &channel_plane(rendered, ch),
            &channel_plane(target, ch),
            w,
            h,
        );
        ssim_sum += maps.ssim_map.iter().sum::<f64>() / (w * h) as f64;
    }
    let dssim = 1.0 - ssim_sum / 3.0;
    Ok(LossReport {
        total: LossReport::weighted_image_terms(lambda, l1, dssim),
        l1,
        dssim,
        regularizers: BTreeMap::new(),
    })
}

/// Loss plus its gradient with respect to every rendered RGB sample.
/// The sign convention at exact equality (|x| subgradient 0) makes the
/// gradient vanish when rendered == target.
pub fn reconstruction_loss_backward(
    rendered: &Imagef,
    target: &Imagef,
    lambda: f64,
) -> Result<(LossReport, Vec<[f64; 3]>)> {
    check_dims(rendered, target)?;
    let (w, h) = (rendered.width, rendered.height);
    let npix = w * h;
    let n = (npix * 3) as f64;
    let mut grad = vec![[0.0; 3]; npix];

    let mut l1 = 0.0;
    for (i, (r, t)) in rendered.data.iter().zip(&target.data).enumerate() {
        for ch in 0..3 {
            let d = r[ch] - t[ch];
            l1 += d.abs();
            let sign = if d > 0.0 {
                1.0
            } else if d < 0.0 {
                -1.0
            } else {
                0.0
            };
            grad[i][ch] = (1.0 - lambda) * sign / n;
        }
    }
    l1 /= n;

    let mut ssim_sum = 0.0;
    let pixel_weight = 1.0 / (3.0 * npix as f64);
    for ch in 0..3 {
        let x = channel_plane(rendered, ch);
        let y = channel_plane(target, ch);
        let maps = ssim_channel_maps(&x, &y, w, h);
        ssim_sum += maps.ssim_map.iter().sum::<f64>() / npix as f64;

        // Per-pixel partials of the SSIM map wrt its filtered statistics.
        let mut d_mu = vec![0.0; npix];
        let mut d_sx2 = vec![0.0; npix];
        let mut d_sxy = vec![0.0; npix];
        for i in 0..npix {
            let (mx, my) = (maps.mu_x[i], maps.mu_y[i]);
            let a1 = 2.0 * mx * my + SSIM_C1;
            let a2 = 2.0 * maps.sigma_xy[i] + SSIM_C2;
            let b1 = mx * mx + my * my + SSIM_C1;
            let b2 = maps.sigma_x2[i] + maps.sigma_y2[i] + SSIM_C2;
            let s = maps.ssim_map[i];
            d_mu[i] = 2.0 * my * a2 / (b1 * b2) - s * 2.0 * mx / b1;
            d_sx2[i] = -s / b2;
            d_sxy[i] = 2.0 * a1 / (b1 * b2);
        }

        // dS/dx(q) = F^T[dmu](q) + 2 x(q) F^T[dsx2](q) - 2 F^T[dsx2*mux](q)
        //          + y(q) F^T[dsxy](q) - F^T[dsxy*muy](q)
        let ft_mu = filter_renorm_adjoint(&d_mu, w, h);
        let ft_sx2 = filter_renorm_adjoint(&d_sx2, w, h);
        let sx2_mu: Vec<f64> = d_sx2.iter().zip(&maps.mu_x).map(|(a, b)| a * b).collect();
        let ft_sx2_mu = filter_renorm_adjoint(&sx2_mu, w, h);
        let ft_sxy = filter_renorm_adjoint(&d_sxy, w, h);
        let sxy_mu: Vec<f64> = d_sxy.iter().zip(&maps.mu_y).map(|(a, b)| a * b).collect();
        let ft_sxy_mu = filter_renorm_adjoint(&sxy_mu, w, h);

        // d(total)/dx = lambda * d(1 - mean SSIM)/dx = -lambda * weight * dS/dx
        let scale = -lambda * pixel_weight;
        for q in 0..npix {
            let ds = ft_mu[q] + 2.0 * x[q] * ft_sx2[q] - 2.0 * ft_sx2_mu[q] + y[q] * ft_sxy[q]
                - ft_sxy_mu[q];
            grad[q][ch] += scale * ds;
        }
    }
    let dssim = 1.0 - ssim_sum / 3.0;
    let report = LossReport {
        total: LossReport::weighted_image_terms(lambda, l1, dssim),
        l1,
        dssim,
        regularizers: BTreeMap::new(),
    };
    Ok((report, grad))
}
