//! PSNR and SSIM on linear RGB.
//!
//! SSIM uses an 11x11 Gaussian window (sigma 1.5) with the standard
//! constants C1 = 0.01^2, C2 = 0.03^2 on a unit dynamic range, evaluated
//! per channel and averaged. At image borders the window renormalizes over
//! its in-image support. The same filtered maps feed the loss backward in
//! the training module.

use crate::error::{Error, Result};
use crate::image::Imagef;

/// PSNR in dB over the RGB channels, capped at 99 (the reported value for
/// identical images).
pub const PSNR_CAP: f64 = 99.0;

pub fn psnr(a: &Imagef, b: &Imagef) -> Result<f64> {
    if !a.same_dims(b) {
        return Err(Error::Dimension("psnr image size mismatch".into()));
    }
    let mut mse = 0.0;
    for (pa, pb) in a.data.iter().zip(&b.data) {
        for ch in 0..3 {
            let d = pa[ch] - pb[ch];
            mse += d * d;
        }
    }
    mse /= (a.width * a.height * 3) as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP))
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

/// Normalized 1D Gaussian window taps.
pub(crate) fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let r = (SSIM_WINDOW / 2) as i64;
    let mut sum = 0.0;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as i64 - r;
        *v = (-((d * d) as f64) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        sum += *v;
    }
    for v in k.iter_mut() {
        *v /= sum;
    }
    k
}

/// Separable Gaussian filtering with per-pixel renormalization over the
/// in-image support. Returns the filtered plane.
pub(crate) fn filter_renorm(plane: &[f64], w: usize, h: usize) -> Vec<f64> {
    let k = gaussian_kernel();
    let r = SSIM_WINDOW as i64 / 2;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            let mut wsum = 0.0;
            for t in -r..=r {
                let xx = x as i64 + t;
                if xx < 0 || xx >= w as i64 {
                    continue;
                }
                let kv = k[(t + r) as usize];
                acc += kv * plane[y * w + xx as usize];
                wsum += kv;
            }
            tmp[y * w + x] = acc / wsum;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            let mut wsum = 0.0;
            for t in -r..=r {
                let yy = y as i64 + t;
                if yy < 0 || yy >= h as i64 {
                    continue;
                }
                let kv = k[(t + r) as usize];
                acc += kv * tmp[yy as usize * w + x];
                wsum += kv;
            }
            out[y * w + x] = acc / wsum;
        }
    }
    out
}

/// Adjoint of `filter_renorm`: divides by the same per-pixel normalization
/// weights, then applies the plain (zero-padded) correlation. Because the
/// kernel is symmetric the correlation reuses the same taps.
pub(crate) fn filter_renorm_adjoint(grad: &[f64], w: usize, h: usize) -> Vec<f64> {
    let k = gaussian_kernel();
    let r = SSIM_WINDOW as i64 / 2;
    // Column pass adjoint first (forward applied rows then columns).
    let mut colw = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut wsum = 0.0;
            for t in -r..=r {
                let yy = y as i64 + t;
                if yy >= 0 && yy < h as i64 {
                    wsum += k[(t + r) as usize];
                }
            }
            colw[y * w + x] = grad[y * w + x] / wsum;
        }
    }
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for t in -r..=r {
                let yy = y as i64 + t;
                if yy < 0 || yy >= h as i64 {
                    continue;
                }
                acc += k[(t + r) as usize] * colw[yy as usize * w + x];
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut roww = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut wsum = 0.0;
            for t in -r..=r {
                let xx = x as i64 + t;
                if xx >= 0 && xx < w as i64 {
                    wsum += k[(t + r) as usize];
                }
            }
            roww[y * w + x] = tmp[y * w + x] / wsum;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for t in -r..=r {
                let xx = x as i64 + t;
                if xx < 0 || xx >= w as i64 {
                    continue;
                }
                acc += k[(t + r) as usize] * roww[y * w + xx as usize];
            }
            out[y * w + x] = acc;
        }
    }
    out
}

/// Per-channel filtered statistics used by both the metric and its backward.
pub(crate) struct SsimMaps {
    pub mu_x: Vec<f64>,
    pub mu_y: Vec<f64>,
    pub sigma_x2: Vec<f64>,
    pub sigma_y2: Vec<f64>,
    pub sigma_xy: Vec<f64>,
    pub ssim_map: Vec<f64>,
}

pub(crate) fn ssim_channel_maps(x: &[f64], y: &[f64], w: usize, h: usize) -> SsimMaps {
    let mu_x = filter_renorm(x, w, h);
    let mu_y = filter_renorm(y, w, h);
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(a, b)| a * b).collect();
    let ex2 = filter_renorm(&xx, w, h);
    let ey2 = filter_renorm(&yy, w, h);
    let exy = filter_renorm(&xy, w, h);
    let n = w * h;
    let mut sigma_x2 = vec![0.0; n];
    let mut sigma_y2 = vec![0.0; n];
    let mut sigma_xy = vec![0.0; n];
    let mut ssim_map = vec![0.0; n];
    for i in 0..n {
        sigma_x2[i] = ex2[i] - mu_x[i] * mu_x[i];
        sigma_y2[i] = ey2[i] - mu_y[i] * mu_y[i];
        sigma_xy[i] = exy[i] - mu_x[i] * mu_y[i];
        let a1 = 2.0 * mu_x[i] * mu_y[i] + SSIM_C1;
        let a2 = 2.0 * sigma_xy[i] + SSIM_C2;
        let b1 = mu_x[i] * mu_x[i] + mu_y[i] * mu_y[i] + SSIM_C1;
        let b2 = sigma_x2[i] + sigma_y2[i] + SSIM_C2;
        ssim_map[i] = (a1 * a2) / (b1 * b2);
    }
    SsimMaps {
        mu_x,
        mu_y,
        sigma_x2,
        sigma_y2,
        sigma_xy,
        ssim_map,
    }
}

pub(crate) fn channel_plane(img: &Imagef, ch: usize) -> Vec<f64> {
    img.data.iter().map(|p| p[ch]).collect()
}

/// Mean SSIM over RGB channels, in [-1, 1] (1 for identical images).
pub fn ssim(a: &Imagef, b: &Imagef) -> Result<f64> {
    if !a.same_dims(b) {
        return Err(Error::Dimension("ssim image size mismatch".into()));
    }
    let (w, h) = (a.width, a.height);
    let mut total = 0.0;
    for ch in 0..3 {
        let maps = ssim_channel_maps(&channel_plane(a, ch), &channel_plane(b, ch), w, h);
        total += maps.ssim_map.iter().sum::<f64>() / (w * h) as f64;
    }
    Ok(total / 3.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn constant(w: usize, h: usize, v: f64) -> Imagef {
        Imagef {
            width: w,
            height: h,
            data: vec![[v, v, v, 1.0]; w * h],
        }
    }

    #[test]
    fn identical_images_cap_psnr_and_unit_ssim() {
        let img = constant(16, 16, 0.37);
        assert_eq!(psnr(&img, &img).unwrap(), PSNR_CAP);
        assert!((ssim(&img, &img).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn psnr_known_value_for_uniform_difference() {
        // MSE 0.25 -> 10 log10(4) = 6.0206 dB.
        let a = constant(8, 8, 0.0);
        let b = constant(8, 8, 0.5);
        let got = psnr(&a, &b).unwrap();
        assert!((got - 6.020599913279624).abs() < 1e-9, "{got}");
    }

    #[test]
    fn metrics_match_independent_scalar_loops() {
        // Same formulas written as straight loops without the separable
        // filtering machinery.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let (w, h) = (20, 14);
        let mut a = constant(w, h, 0.0);
        let mut b = constant(w, h, 0.0);
        for p in a.data.iter_mut().chain(b.data.iter_mut()) {
            for ch in 0..3 {
                p[ch] = rng.gen_range(0.0..1.0);
            }
        }

        // PSNR oracle.
        let mut mse = 0.0;
        for (pa, pb) in a.data.iter().zip(&b.data) {
            for ch in 0..3 {
                mse += (pa[ch] - pb[ch]) * (pa[ch] - pb[ch]);
            }
        }
        mse /= (w * h * 3) as f64;
        let want_psnr = 10.0 * (1.0 / mse).log10();
        assert!((psnr(&a, &b).unwrap() - want_psnr).abs() < 1e-9);

        // SSIM oracle: direct windowed loops with border renormalization.
        let k = gaussian_kernel();
        let r = SSIM_WINDOW as i64 / 2;
        let mut want_ssim = 0.0;
        for ch in 0..3 {
            let xp = channel_plane(&a, ch);
            let yp = channel_plane(&b, ch);
            let mut acc = 0.0;
            for py in 0..h as i64 {
                for px in 0..w as i64 {
                    let mut wsum = 0.0;
                    let (mut mx, mut my) = (0.0, 0.0);
                    let (mut mxx, mut myy, mut mxy) = (0.0, 0.0, 0.0);
                    for dy in -r..=r {
                        for dx in -r..=r {
                            let (qx, qy) = (px + dx, py + dy);
                            if qx < 0 || qx >= w as i64 || qy < 0 || qy >= h as i64 {
                                continue;
                            }
                            let kv = k[(dx + r) as usize] * k[(dy + r) as usize];
                            let xv = xp[qy as usize * w + qx as usize];
                            let yv = yp[qy as usize * w + qx as usize];
                            wsum += kv;
                            mx += kv * xv;
                            my += kv * yv;
                            mxx += kv * xv * xv;
                            myy += kv * yv * yv;
                            mxy += kv * xv * yv;
                        }
                    }
                    mx /= wsum;
                    my /= wsum;
                    mxx /= wsum;
                    myy /= wsum;
                    mxy /= wsum;
                    let sx2 = mxx - mx * mx;
                    let sy2 = myy - my * my;
                    let sxy = mxy - mx * my;
                    acc += ((2.0 * mx * my + SSIM_C1) * (2.0 * sxy + SSIM_C2))
                        / ((mx * mx + my * my + SSIM_C1) * (sx2 + sy2 + SSIM_C2));
                }
            }
            want_ssim += acc / (w * h) as f64;
        }
        want_ssim /= 3.0;
        let got = ssim(&a, &b).unwrap();
        assert!((got - want_ssim).abs() < 1e-9, "{got} vs {want_ssim}");
    }

    #[test]
    fn filter_adjoint_is_true_adjoint() {
        // <F u, v> == <u, F^T v> for random u, v.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        let (w, h) = (13, 9);
        let u: Vec<f64> = (0..w * h).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let v: Vec<f64> = (0..w * h).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let fu = filter_renorm(&u, w, h);
        let ftv = filter_renorm_adjoint(&v, w, h);
        let lhs: f64 = fu.iter().zip(&v).map(|(x, y)| x * y).sum();
        let rhs: f64 = u.iter().zip(&ftv).map(|(x, y)| x * y).sum();
        assert!((lhs - rhs).abs() < 1e-10, "{lhs} vs {rhs}");
    }

    #[test]
    fn mismatched_dims_error() {
        let a = constant(4, 4, 0.1);
        let b = constant(5, 4, 0.1);
        assert!(psnr(&a, &b).is_err());
        assert!(ssim(&a, &b).is_err());
    }
}
