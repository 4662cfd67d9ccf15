//! Depth-sorted, alpha-composited splatting.
//!
//! Both renderers share the exact compositing recurrence: splats sort
//! front-to-back by depth with a stable index tie-break, each pixel
//! accumulates color = sum(alpha_i * T_i * color_i) with T updating as
//! T *= (1 - alpha_i), and the loop stops once T drops below `t_min`. The
//! tiled renderer additionally bins splats into tiles by a conservative
//! screen radius and skips pixels outside the `extent_sigma` Mahalanobis
//! cutoff; the reference renderer loops every splat at every pixel with no
//! cutoff of any kind and is the oracle the tiled path is tested against.

use num_traits::Float;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::render::fastexp::RasterExp;
use crate::render::rowkernel::{RowKernel, SplatRowCtx};
use crate::render::{RasterSettings, ScreenSplat};

fn validate_splats<S: Float>(splats: &[ScreenSplat<S>]) -> Result<()> {
    for (i, s) in splats.iter().enumerate() {
        let finite = s.mean.iter().all(|v| v.is_finite())
            && s.cov.iter().all(|v| v.is_finite())
            && s.depth.is_finite()
            && s.color.iter().all(|v| v.is_finite())
            && s.opacity.is_finite();
        if !finite {
            return Err(Error::Render(format!(
                "splat {i} has non-finite parameters"
            )));
        }
    }
    Ok(())
}

/// Front-to-back ordering: depth ascending, original index breaking ties.
pub(crate) fn sort_order<S: Float>(splats: &[ScreenSplat<S>]) -> Vec<u32> {
    let mut order: Vec<u32> = (0..splats.len() as u32).collect();
    order.sort_by(|&a, &b| {
        splats[a as usize]
            .depth
            .partial_cmp(&splats[b as usize].depth)
            .unwrap()
            .then(a.cmp(&b))
    });
    order
}

/// Inverse covariance entries (ia, ib, ic) of [[a, b], [b, c]].
#[inline]
pub(crate) fn invert_cov<S: Float>(cov: [S; 3]) -> [S; 3] {
    let det = cov[0] * cov[2] - cov[1] * cov[1];
    let inv = det.recip();
    [cov[2] * inv, -cov[1] * inv, cov[0] * inv]
}

/// Composite all splats (already front-to-back) into one pixel.
#[inline]
fn composite_pixel<S: Float + RasterExp>(
    px: S,
    py: S,
    splats: &[ScreenSplat<S>],
    inv_covs: &[[S; 3]],
    order: &[u32],
    alpha_max: S,
    t_min: S,
    cutoff_q: Option<S>,
) -> [S; 4] {
    let mut color = [S::zero(); 3];
    let mut alpha_out = S::zero();
    let mut transmittance = S::one();
    for &oi in order {
        let s = &splats[oi as usize];
        let ic = &inv_covs[oi as usize];
        let dx = px - s.mean[0];
        let dy = py - s.mean[1];
        let q = ic[0] * dx * dx + (ic[1] + ic[1]) * dx * dy + ic[2] * dy * dy;
        if let Some(qc) = cutoff_q {
            if q > qc {
                continue;
            }
        }
        let g = (-q * S::from(0.5).unwrap()).raster_exp_neg();
        let alpha = (s.opacity * g).min(alpha_max);
        let w = transmittance * alpha;
        color[0] = color[0] + s.color[0] * w;
        color[1] = color[1] + s.color[1] * w;
        color[2] = color[2] + s.color[2] * w;
        alpha_out = alpha_out + w;
        transmittance = transmittance * (S::one() - alpha);
        if transmittance < t_min {
            break;
        }
    }
    [color[0], color[1], color[2], alpha_out]
}

/// Tile decomposition with per-tile, depth-sorted splat lists. Shared by the
/// forward rasterizer and the training backward pass so both visit exactly
/// the same pixel/splat pairs.
pub(crate) struct TileBins {
    pub tile: usize,
    pub tiles_x: usize,
    pub tiles_y: usize,
    pub bins: Vec<Vec<u32>>,
}

pub(crate) fn bin_splats<S: Float>(
    splats: &[ScreenSplat<S>],
    order: &[u32],
    width: usize,
    height: usize,
    settings: &RasterSettings,
) -> TileBins {
    let tile = settings.tile_size.max(1);
    let tiles_x = width.div_ceil(tile);
    let tiles_y = height.div_ceil(tile);

    let mut bins: Vec<Vec<u32>> = vec![Vec::new(); tiles_x * tiles_y];
    for &oi in order {
        let s = &splats[oi as usize];
        // Conservative pixel radius from the largest covariance eigenvalue.
        let (a, b, c) = (
            s.cov[0].to_f64().unwrap(),
            s.cov[1].to_f64().unwrap(),
            s.cov[2].to_f64().unwrap(),
        );
        let eig = 0.5 * ((a + c) + ((a - c) * (a - c) + 4.0 * b * b).sqrt());
        let r = settings.extent_sigma * eig.max(0.0).sqrt();
        let mx = s.mean[0].to_f64().unwrap();
        let my = s.mean[1].to_f64().unwrap();
        if mx + r < 0.0 || my + r < 0.0 || mx - r > (width - 1) as f64 || my - r > (height - 1) as f64
        {
            continue;
        }
        let x0 = ((mx - r).floor().max(0.0) as usize).min(width - 1) / tile;
        let x1 = ((mx + r).ceil().max(0.0) as usize).min(width - 1) / tile;
        let y0 = ((my - r).floor().max(0.0) as usize).min(height - 1) / tile;
        let y1 = ((my + r).ceil().max(0.0) as usize).min(height - 1) / tile;
        for ty in y0..=y1 {
            for tx in x0..=x1 {
                bins[ty * tiles_x + tx].push(oi);
            }
        }
    }
    TileBins {
        tile,
        tiles_x,
        tiles_y,
        bins,
    }
}

/// Tile-binned rasterization. Deterministic: tile partitioning and the
/// global depth sort fix the compositing order regardless of how tiles are
/// scheduled across threads.
pub fn rasterize<S: RowKernel + Send + Sync>(
    splats: &[ScreenSplat<S>],
    width: usize,
    height: usize,
    settings: &RasterSettings,
) -> Result<Image<S>> {
    validate_splats(splats)?;
    let order = sort_order(splats);
    let inv_covs: Vec<[S; 3]> = splats.iter().map(|s| invert_cov(s.cov)).collect();
    let TileBins {
        tile,
        tiles_x,
        tiles_y,
        bins,
    } = bin_splats(splats, &order, width, height, settings);
    let extent = S::from(settings.extent_sigma).unwrap();
    let cutoff_q = extent * extent;

    let alpha_max = S::from(settings.alpha_max).unwrap();
    let t_min = S::from(settings.t_min).unwrap();

    // Splat radii in pixels, for per-splat footprint bounds inside a tile.
    // The bound is conservative against the Mahalanobis cutoff, so skipping
    // pixels outside it never changes a pixel's contributor sequence.
    let radii: Vec<f64> = splats
        .iter()
        .map(|s| {
            let (a, b, c) = (
                s.cov[0].to_f64().unwrap(),
                s.cov[1].to_f64().unwrap(),
                s.cov[2].to_f64().unwrap(),
            );
            let eig = 0.5 * ((a + c) + ((a - c) * (a - c) + 4.0 * b * b).sqrt());
            settings.extent_sigma * eig.max(0.0).sqrt()
        })
        .collect();

    // Splat-major compositing inside each tile: per pixel the contributor
    // order is the same depth order as a pixel-major scan, so results are
    // identical, but a fully saturated tile skips the rest of its list with
    // one counter check per splat. The inner row kernel is branch-free
    // (masked contributions are exact no-ops: +0 into the accumulators and
    // an unchanged transmittance), which lets it vectorize across pixels.
    let tile_outputs: Vec<(usize, Vec<[S; 4]>)> = (0..tiles_x * tiles_y)
        .into_par_iter()
        .map(|ti| {
            let tx = ti % tiles_x;
            let ty = ti / tiles_x;
            let x0 = tx * tile;
            let y0 = ty * tile;
            let x_end = ((tx + 1) * tile).min(width);
            let y_end = ((ty + 1) * tile).min(height);
            let tw = x_end - x0;
            let th = y_end - y0;
            // Channel-planar tile buffers keep the kernel's memory streams
            // contiguous.
            let mut acc_r = vec![S::zero(); tw * th];
            let mut acc_g = vec![S::zero(); tw * th];
            let mut acc_b = vec![S::zero(); tw * th];
            let mut acc_a = vec![S::zero(); tw * th];
            let mut trans = vec![S::one(); tw * th];
            let mut alive = tw * th;
            let qc_f = settings.extent_sigma * settings.extent_sigma;
            for &oi in &bins[ti] {
                if alive == 0 {
                    break;
                }
                let s = &splats[oi as usize];
                let ic = &inv_covs[oi as usize];
                let r = radii[oi as usize];
                let mx = s.mean[0].to_f64().unwrap();
                let my = s.mean[1].to_f64().unwrap();
                let sy0 = ((my - r).floor().max(y0 as f64) as usize).max(y0);
                let sy1 = (((my + r).ceil() + 1.0).max(0.0) as usize).min(y_end);
                // Solve the cutoff ellipse row by row for the exact pixel
                // interval; the in-loop test stays the semantic arbiter, the
                // interval (padded a pixel each side) only avoids dead work.
                // Row center and half-width come from the Schur complement
                // of the inverse covariance, precomputed per splat.
                let ia = ic[0].to_f64().unwrap();
                let ib = ic[1].to_f64().unwrap();
                let icc = ic[2].to_f64().unwrap();
                let inv_ia = 1.0 / ia;
                let schur = icc - ib * ib * inv_ia;
                let slope = -ib * inv_ia;
                let splat_ctx = SplatRowCtx {
                    mean: s.mean,
                    inv_cov: *ic,
                    cutoff_q,
                    opacity: s.opacity,
                    alpha_max,
                    t_min,
                    color: s.color,
                    x0,
                };
                for y in sy0..sy1 {
                    let dy_f = y as f64 - my;
                    let radicand = (qc_f - schur * dy_f * dy_f) * inv_ia;
                    if radicand <= 0.0 {
                        continue;
                    }
                    let halfwidth = radicand.sqrt() + 1.0;
                    let xc = mx + slope * dy_f;
                    let sx0 = ((xc - halfwidth).floor().max(x0 as f64) as usize).max(x0);
                    let sx1 = (((xc + halfwidth).ceil() + 1.0).max(0.0) as usize).min(x_end);
                    if sx0 >= sx1 {
                        continue;
                    }
                    alive -= S::composite_row(
                        &splat_ctx,
                        sx0,
                        sx1,
                        y,
                        (y - y0) * tw,
                        &mut acc_r,
                        &mut acc_g,
                        &mut acc_b,
                        &mut acc_a,
                        &mut trans,
                    );
                }
            }
            let mut out = vec![[S::zero(); 4]; tw * th];
            for (i, px) in out.iter_mut().enumerate() {
                *px = [acc_r[i], acc_g[i], acc_b[i], acc_a[i]];
            }
            (ti, out)
        })
        .collect();

    let mut img = Image::new(width, height);
    for (ti, pixels) in tile_outputs {
        let tx = ti % tiles_x;
        let ty = ti / tiles_x;
        let x_start = tx * tile;
        let x_end = ((tx + 1) * tile).min(width);
        let mut it = pixels.into_iter();
        for y in ty * tile..((ty + 1) * tile).min(height) {
            for x in x_start..x_end {
                *img.pixel_mut(x, y) = it.next().unwrap();
            }
        }
    }
    Ok(img)
}

/// Brute-force reference: every splat at every pixel, no tiling, no extent
/// cutoff. O(pixels * splats).
pub fn rasterize_reference<S: Float + RasterExp + Send + Sync>(
    splats: &[ScreenSplat<S>],
    width: usize,
    height: usize,
    settings: &RasterSettings,
) -> Result<Image<S>> {
    validate_splats(splats)?;
    let order = sort_order(splats);
    let inv_covs: Vec<[S; 3]> = splats.iter().map(|s| invert_cov(s.cov)).collect();
    let alpha_max = S::from(settings.alpha_max).unwrap();
    let t_min = S::from(settings.t_min).unwrap();
    let mut img = Image::new(width, height);
    for y in 0..height {
        for x in 0..width {
            *img.pixel_mut(x, y) = composite_pixel(
                S::from(x).unwrap(),
                S::from(y).unwrap(),
                splats,
                &inv_covs,
                &order,
                alpha_max,
                t_min,
                None,
            );
        }
    }
    Ok(img)
}
