//! Hand-written backward pass of the tiled rasterizer.
//!
//! Walks the same tiles, the same depth order, the same extent cutoff and
//! the same early-termination rule as the forward renderer, so the computed
//! gradients are the exact derivatives of what `rasterize` produced. Per
//! pixel the forward compositing is redone while recording each surviving
//! contribution, then a reverse sweep with suffix sums distributes the
//! pixel adjoint over colors, opacities, means and covariances. Depth only
//! orders the sort and therefore carries no gradient.

use crate::error::Result;
use crate::render::raster::{bin_splats, invert_cov, sort_order};
use crate::render::{RasterSettings, ScreenSplat};

/// Adjoints for one screen splat.
#[derive(Debug, Clone, Copy, Default)]
pub struct SplatGrad {
    pub mean: [f64; 2],
    pub cov: [f64; 3],
    pub color: [f64; 3],
    pub opacity: f64,
}

struct Contribution {
    oi: u32,
    dx: f64,
    dy: f64,
    g: f64,
    alpha: f64,
    transmittance: f64,
    clamped: bool,
}

/// Backpropagate per-pixel RGBA adjoints to the splats.
///
/// `pixel_grad` holds dL/d(pixel) for the RGB channels and the output alpha.
pub fn rasterize_backward(
    splats: &[ScreenSplat<f64>],
    width: usize,
    height: usize,
    settings: &RasterSettings,
    pixel_grad: &[[f64; 4]],
) -> Result<Vec<SplatGrad>> {
    assert_eq!(pixel_grad.len(), width * height);
    let order = sort_order(splats);
    let inv_covs: Vec<[f64; 3]> = splats.iter().map(|s| invert_cov(s.cov)).collect();
    let bins = bin_splats(splats, &order, width, height, settings);
    let cutoff_q = settings.extent_sigma * settings.extent_sigma;

    let mut grads = vec![SplatGrad::default(); splats.len()];
    // Accumulated adjoints on the inverse covariance entries; converted to
    // covariance adjoints once per splat at the end.
    let mut inv_cov_grads = vec![[0.0f64; 3]; splats.len()];

    let mut contribs: Vec<Contribution> = Vec::with_capacity(128);
    for ti in 0..bins.bins.len() {
        let list = &bins.bins[ti];
        if list.is_empty() {
            continue;
        }
        let tx = ti % bins.tiles_x;
        let ty = ti / bins.tiles_x;
        let x_end = ((tx + 1) * bins.tile).min(width);
        let y_end = ((ty + 1) * bins.tile).min(height);
        for y in ty * bins.tile..y_end {
            for x in tx * bins.tile..x_end {
                let dpix = pixel_grad[y * width + x];
                let (px, py) = (x as f64, y as f64);

                // Forward replay, recording surviving contributions.
                contribs.clear();
                let mut transmittance = 1.0;
                for &oi in list {
                    let s = &splats[oi as usize];
                    let ic = &inv_covs[oi as usize];
                    let dx = px - s.mean[0];
                    let dy = py - s.mean[1];
                    let q = ic[0] * dx * dx + 2.0 * ic[1] * dx * dy + ic[2] * dy * dy;
                    if q > cutoff_q {
                        continue;
                    }
                    let g = crate::render::fastexp::exp_neg(-0.5 * q);
                    let raw = s.opacity * g;
                    let clamped = raw > settings.alpha_max;
                    let alpha = if clamped { settings.alpha_max } else { raw };
                    contribs.push(Contribution {
                        oi,
                        dx,
                        dy,
                        g,
                        alpha,
                        transmittance,
                        clamped,
                    });
                    transmittance *= 1.0 - alpha;
                    if transmittance < settings.t_min {
                        break;
                    }
                }
                if contribs.is_empty()
                    || (dpix[0] == 0.0 && dpix[1] == 0.0 && dpix[2] == 0.0 && dpix[3] == 0.0)
                {
                    continue;
                }

                // Reverse sweep with suffix accumulators:
                // dC/dalpha_i = T_i c_i - S_i / (1 - alpha_i), where S_i is
                // the composited color behind splat i.
                let mut suffix = [0.0f64; 4]; // rgb + alpha behind current
                for c in contribs.iter().rev() {
                    let s = &splats[c.oi as usize];
                    let gr = &mut grads[c.oi as usize];
                    let w = c.transmittance * c.alpha;
                    let mut d_alpha = 0.0;
                    for ch in 0..3 {
                        gr.color[ch] += dpix[ch] * w;
                        d_alpha += dpix[ch]
                            * (c.transmittance * s.color[ch] - suffix[ch] / (1.0 - c.alpha));
                    }
                    d_alpha += dpix[3] * (c.transmittance - suffix[3] / (1.0 - c.alpha));
                    for ch in 0..3 {
                        suffix[ch] += w * s.color[ch];
                    }
                    suffix[3] += w;

                    if c.clamped {
                        continue;
                    }
                    let d_g = d_alpha * s.opacity;
                    gr.opacity += d_alpha * c.g;
                    let d_q = -0.5 * c.g * d_g;
                    let ic = &inv_covs[c.oi as usize];
                    // q = ia dx^2 + 2 ib dx dy + ic dy^2, with d = p - mean.
                    gr.mean[0] += -d_q * 2.0 * (ic[0] * c.dx + ic[1] * c.dy);
                    gr.mean[1] += -d_q * 2.0 * (ic[1] * c.dx + ic[2] * c.dy);
                    let icg = &mut inv_cov_grads[c.oi as usize];
                    icg[0] += d_q * c.dx * c.dx;
                    icg[1] += d_q * 2.0 * c.dx * c.dy;
                    icg[2] += d_q * c.dy * c.dy;
                }
            }
        }
    }

    // d(cov) = -Icov * d(Icov) * Icov with the off-diagonal adjoint split
    // over the two symmetric entries.
    for (i, s) in splats.iter().enumerate() {
        let ic = invert_cov(s.cov);
        let g = inv_cov_grads[i];
        let gm = [[g[0], 0.5 * g[1]], [0.5 * g[1], g[2]]];
        let icm = [[ic[0], ic[1]], [ic[1], ic[2]]];
        let mut tmp = [[0.0; 2]; 2];
        for r in 0..2 {
            for c in 0..2 {
                tmp[r][c] = icm[r][0] * gm[0][c] + icm[r][1] * gm[1][c];
            }
        }
        let mut out = [[0.0; 2]; 2];
        for r in 0..2 {
            for c in 0..2 {
                out[r][c] = -(tmp[r][0] * icm[0][c] + tmp[r][1] * icm[1][c]);
            }
        }
        grads[i].cov[0] += out[0][0];
        grads[i].cov[1] += out[0][1] + out[1][0];
        grads[i].cov[2] += out[1][1];
    }
    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::Imagef;
    use crate::render::rasterize;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_scene(rng: &mut ChaCha8Rng, n: usize, res: f64) -> Vec<ScreenSplat<f64>> {
        (0..n)
            .map(|_| {
                let sx: f64 = rng.gen_range(1.0..4.0);
                let sy: f64 = rng.gen_range(1.0..4.0);
                let rho: f64 = rng.gen_range(-0.6..0.6);
                ScreenSplat {
                    mean: [rng.gen_range(2.0..res - 2.0), rng.gen_range(2.0..res - 2.0)],
                    cov: [sx * sx, rho * sx * sy, sy * sy],
                    depth: rng.gen_range(0.2..2.0),
                    color: [
                        rng.gen_range(0.1..0.9),
                        rng.gen_range(0.1..0.9),
                        rng.gen_range(0.1..0.9),
                    ],
                    opacity: rng.gen_range(0.2..0.9),
                }
            })
            .collect()
    }

    /// Scalar objective: weighted sum of the rendered image against fixed
    /// random weights, so dL/dpixel is exactly those weights.
    fn weighted_sum(img: &Imagef, weights: &[[f64; 4]]) -> f64 {
        img.data
            .iter()
            .zip(weights)
            .map(|(p, w)| p[0] * w[0] + p[1] * w[1] + p[2] * w[2] + p[3] * w[3])
            .sum()
    }

    #[test]
    fn matches_finite_differences_on_all_fields() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let settings = RasterSettings::default();
        let (w, h) = (16usize, 16usize);
        let scene = random_scene(&mut rng, 6, 16.0);
        let weights: Vec<[f64; 4]> = (0..w * h)
            .map(|_| {
                [
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                ]
            })
            .collect();

        let grads = rasterize_backward(&scene, w, h, &settings, &weights).unwrap();

        let eval = |scene: &[ScreenSplat<f64>]| {
            let img = rasterize(scene, w, h, &settings).unwrap();
            weighted_sum(&img, &weights)
        };
        let hstep = 1e-6;
        for (si, _) in scene.iter().enumerate() {
            let check = |get: &dyn Fn(&mut ScreenSplat<f64>) -> &mut f64, an: f64, what: &str| {
                let mut plus = scene.clone();
                *get(&mut plus[si]) += hstep;
                let mut minus = scene.clone();
                *get(&mut minus[si]) -= hstep;
                let fd = (eval(&plus) - eval(&minus)) / (2.0 * hstep);
                let tol = 1e-5 * fd.abs().max(1e-2);
                assert!(
                    (an - fd).abs() < tol,
                    "splat {si} {what}: analytic {an} vs fd {fd}"
                );
            };
            check(&|s| &mut s.mean[0], grads[si].mean[0], "mean.x");
            check(&|s| &mut s.mean[1], grads[si].mean[1], "mean.y");
            check(&|s| &mut s.cov[0], grads[si].cov[0], "cov.a");
            check(&|s| &mut s.cov[1], grads[si].cov[1], "cov.b");
            check(&|s| &mut s.cov[2], grads[si].cov[2], "cov.c");
            check(&|s| &mut s.color[0], grads[si].color[0], "color.r");
            check(&|s| &mut s.color[1], grads[si].color[1], "color.g");
            check(&|s| &mut s.color[2], grads[si].color[2], "color.b");
            check(&|s| &mut s.opacity, grads[si].opacity, "opacity");
        }
    }

    #[test]
    fn clamped_alpha_blocks_opacity_gradient() {
        // A splat pinned at the alpha clamp: opacity and shape gradients
        // vanish at its center pixel, color gradient does not.
        let settings = RasterSettings::default();
        let s = ScreenSplat {
            mean: [4.0, 4.0],
            cov: [4.0, 0.0, 4.0],
            depth: 1.0,
            color: [0.5, 0.5, 0.5],
            opacity: 0.999999,
        };
        let mut weights = vec![[0.0; 4]; 81];
        weights[4 * 9 + 4] = [1.0, 0.0, 0.0, 0.0]; // only the center pixel
        let grads = rasterize_backward(&[s], 9, 9, &settings, &weights).unwrap();
        assert_eq!(grads[0].opacity, 0.0);
        assert_eq!(grads[0].mean, [0.0, 0.0]);
        assert!(grads[0].color[0] > 0.0);
    }

    #[test]
    fn zero_pixel_grad_means_zero_splat_grad() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let scene = random_scene(&mut rng, 5, 12.0);
        let weights = vec![[0.0; 4]; 144];
        let grads = rasterize_backward(&scene, 12, 12, &RasterSettings::default(), &weights).unwrap();
        for g in grads {
            assert_eq!(g.mean, [0.0, 0.0]);
            assert_eq!(g.cov, [0.0, 0.0, 0.0]);
            assert_eq!(g.color, [0.0, 0.0, 0.0]);
            assert_eq!(g.opacity, 0.0);
        }
    }
}
