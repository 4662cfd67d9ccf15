//! Per-row splat compositing kernels over planar tile buffers.
//!
//! The generic path batches Gaussian weights through the shared lane
//! function; the f32 path hand-vectorizes the same arithmetic with SSE2
//! (baseline on x86-64). Both perform the identical IEEE operation
//! sequence per pixel, so kernel choice never changes a rendered value.

use num_traits::Float;

use crate::render::fastexp::{RasterExp, EXP_LANES};

/// Per-splat constants shared by every row the splat touches in a tile.
#[doc(hidden)]
pub struct SplatRowCtx<S> {
    pub mean: [S; 2],
    pub inv_cov: [S; 3],
    pub cutoff_q: S,
    pub opacity: S,
    pub alpha_max: S,
    pub t_min: S,
    pub color: [S; 3],
    /// Tile-left absolute x (buffer index = x - x0 within a row).
    pub x0: usize,
}

#[inline]
pub(crate) fn composite_row_generic<S: Float + RasterExp>(
    ctx: &SplatRowCtx<S>,
    sx0: usize,
    sx1: usize,
    y: usize,
    rowbase: usize,
    acc_r: &mut [S],
    acc_g: &mut [S],
    acc_b: &mut [S],
    acc_a: &mut [S],
    trans: &mut [S],
) -> usize {
    let half = S::from(0.5).unwrap();
    let mut newly_dead = 0usize;
    let dy = S::from(y).unwrap() - ctx.mean[1];
    let ic = ctx.inv_cov;
    let mut x = sx0;
    while x < sx1 {
        let n = EXP_LANES.min(sx1 - x);
        let mut qv = [S::zero(); EXP_LANES];
        let mut xv = [S::zero(); EXP_LANES];
        for k in 0..EXP_LANES {
            let dx = S::from(x + k).unwrap() - ctx.mean[0];
            let q = ic[0] * dx * dx + (ic[1] + ic[1]) * dx * dy + ic[2] * dy * dy;
            qv[k] = q;
            xv[k] = -q * half;
        }
        let gv = S::raster_exp_neg8(xv);
        for k in 0..n {
            let j = rowbase + (x + k - ctx.x0);
            let t = trans[j];
            let live = t >= ctx.t_min;
            let alpha = if qv[k] <= ctx.cutoff_q && live {
                (ctx.opacity * gv[k]).min(ctx.alpha_max)
            } else {
                S::zero()
            };
            let w = t * alpha;
            acc_r[j] = acc_r[j] + ctx.color[0] * w;
            acc_g[j] = acc_g[j] + ctx.color[1] * w;
            acc_b[j] = acc_b[j] + ctx.color[2] * w;
            acc_a[j] = acc_a[j] + w;
            let nt = t * (S::one() - alpha);
            trans[j] = nt;
            newly_dead += (live && nt < ctx.t_min) as usize;
        }
        x += n;
    }
    newly_dead
}

/// Scalar types the tiled rasterizer can composite rows with.
pub trait RowKernel: Float + RasterExp {
    #[doc(hidden)]
    #[allow(clippy::too_many_arguments)]
    fn composite_row(
        ctx: &SplatRowCtx<Self>,
        sx0: usize,
        sx1: usize,
        y: usize,
        rowbase: usize,
        acc_r: &mut [Self],
        acc_g: &mut [Self],
        acc_b: &mut [Self],
        acc_a: &mut [Self],
        trans: &mut [Self],
    ) -> usize;
}

impl RowKernel for f64 {
    #[inline]
    fn composite_row(
        ctx: &SplatRowCtx<f64>,
        sx0: usize,
        sx1: usize,
        y: usize,
        rowbase: usize,
        acc_r: &mut [f64],
        acc_g: &mut [f64],
        acc_b: &mut [f64],
        acc_a: &mut [f64],
        trans: &mut [f64],
    ) -> usize {
        composite_row_generic(ctx, sx0, sx1, y, rowbase, acc_r, acc_g, acc_b, acc_a, trans)
    }
}

impl RowKernel for f32 {
    #[inline]
    fn composite_row(
        ctx: &SplatRowCtx<f32>,
        sx0: usize,
        sx1: usize,
        y: usize,
        rowbase: usize,
        acc_r: &mut [f32],
        acc_g: &mut [f32],
        acc_b: &mut [f32],
        acc_a: &mut [f32],
        trans: &mut [f32],
    ) -> usize {
        #[cfg(target_arch = "x86_64")]
        {
            composite_row_f32_sse2(ctx, sx0, sx1, y, rowbase, acc_r, acc_g, acc_b, acc_a, trans)
        }
        #[cfg(not(target_arch = "x86_64"))]
        {
            composite_row_generic(ctx, sx0, sx1, y, rowbase, acc_r, acc_g, acc_b, acc_a, trans)
        }
    }
}

/// SSE2 lanes for the f32 row. Performs per pixel exactly the operation
/// sequence of `composite_row_generic` (same groupings, same clamps, same
/// update order), so lane width never changes a rendered value; a scalar
/// loop covers the sub-width remainder.
#[cfg(target_arch = "x86_64")]
#[allow(clippy::too_many_arguments)]
fn composite_row_f32_sse2(
    ctx: &SplatRowCtx<f32>,
    sx0: usize,
    sx1: usize,
    y: usize,
    rowbase: usize,
    acc_r: &mut [f32],
    acc_g: &mut [f32],
    acc_b: &mut [f32],
    acc_a: &mut [f32],
    trans: &mut [f32],
) -> usize {
    use std::arch::x86_64::*;
    let mut newly_dead = 0usize;
    let dy = y as f32 - ctx.mean[1];
    let ic = ctx.inv_cov;
    let cy = ic[2] * dy * dy;
    let ib2 = ic[1] + ic[1];
    // The row's pixel span stays inside the tile row by construction.
    debug_assert!(rowbase + (sx1 - ctx.x0) <= trans.len());
    unsafe {
        let v_mx = _mm_set1_ps(ctx.mean[0]);
        let v_ia = _mm_set1_ps(ic[0]);
        let v_ib2 = _mm_set1_ps(ib2);
        let v_dy = _mm_set1_ps(dy);
        let v_cy = _mm_set1_ps(cy);
        let v_qc = _mm_set1_ps(ctx.cutoff_q);
        let v_op = _mm_set1_ps(ctx.opacity);
        let v_amax = _mm_set1_ps(ctx.alpha_max);
        let v_tmin = _mm_set1_ps(ctx.t_min);
        let v_one = _mm_set1_ps(1.0);
        let v_neg_half = _mm_set1_ps(-0.5);
        let v_clamp = _mm_set1_ps(-32.0);
        let v_scale = _mm_set1_ps(1.0 / 32.0);
        let v_cr = _mm_set1_ps(ctx.color[0]);
        let v_cg = _mm_set1_ps(ctx.color[1]);
        let v_cb = _mm_set1_ps(ctx.color[2]);
        let c = [
            _mm_set1_ps(1.0),
            _mm_set1_ps(1.0),
            _mm_set1_ps(0.5),
            _mm_set1_ps(1.0 / 6.0),
            _mm_set1_ps(1.0 / 24.0),
            _mm_set1_ps(1.0 / 120.0),
            _mm_set1_ps(1.0 / 720.0),
            _mm_set1_ps(1.0 / 5040.0),
            _mm_set1_ps(1.0 / 40320.0),
            _mm_set1_ps(1.0 / 362880.0),
        ];

        let mut x = sx0;
        while x + 4 <= sx1 {
            let j = rowbase + (x - ctx.x0);
            let xs = _mm_cvtepi32_ps(_mm_setr_epi32(
                x as i32,
                (x + 1) as i32,
                (x + 2) as i32,
                (x + 3) as i32,
            ));
            let dx = _mm_sub_ps(xs, v_mx);
            // q = ((ia dx) dx + ((2 ib) dx) dy) + (ic dy) dy, grouped as in
            // the scalar kernel.
            let q = _mm_add_ps(
                _mm_add_ps(
                    _mm_mul_ps(_mm_mul_ps(v_ia, dx), dx),
                    _mm_mul_ps(_mm_mul_ps(v_ib2, dx), v_dy),
                ),
                v_cy,
            );
            let r = _mm_mul_ps(_mm_max_ps(_mm_mul_ps(q, v_neg_half), v_clamp), v_scale);
            let mut p = c[9];
            for k in (0..9).rev() {
                p = _mm_add_ps(_mm_mul_ps(p, r), c[k]);
            }
            let p2 = _mm_mul_ps(p, p);
            let p4 = _mm_mul_ps(p2, p2);
            let p8 = _mm_mul_ps(p4, p4);
            let p16 = _mm_mul_ps(p8, p8);
            let g = _mm_mul_ps(p16, p16);

            let t = _mm_loadu_ps(trans.as_ptr().add(j));
            let live = _mm_cmpge_ps(t, v_tmin);
            let inside = _mm_cmple_ps(q, v_qc);
            let mask = _mm_and_ps(live, inside);
            let alpha = _mm_and_ps(_mm_min_ps(_mm_mul_ps(v_op, g), v_amax), mask);
            let w = _mm_mul_ps(t, alpha);

            let r0 = _mm_loadu_ps(acc_r.as_ptr().add(j));
            _mm_storeu_ps(acc_r.as_mut_ptr().add(j), _mm_add_ps(r0, _mm_mul_ps(v_cr, w)));
            let g0 = _mm_loadu_ps(acc_g.as_ptr().add(j));
            _mm_storeu_ps(acc_g.as_mut_ptr().add(j), _mm_add_ps(g0, _mm_mul_ps(v_cg, w)));
            let b0 = _mm_loadu_ps(acc_b.as_ptr().add(j));
            _mm_storeu_ps(acc_b.as_mut_ptr().add(j), _mm_add_ps(b0, _mm_mul_ps(v_cb, w)));
            let a0 = _mm_loadu_ps(acc_a.as_ptr().add(j));
            _mm_storeu_ps(acc_a.as_mut_ptr().add(j), _mm_add_ps(a0, w));

            let nt = _mm_mul_ps(t, _mm_sub_ps(v_one, alpha));
            _mm_storeu_ps(trans.as_mut_ptr().add(j), nt);
            let died = _mm_and_ps(live, _mm_cmplt_ps(nt, v_tmin));
            newly_dead += (_mm_movemask_ps(died) as u32).count_ones() as usize;
            x += 4;
        }
        while x < sx1 {
            let j = rowbase + (x - ctx.x0);
            let t = trans[j];
            let dx = x as f32 - ctx.mean[0];
            let q = ic[0] * dx * dx + (ic[1] + ic[1]) * dx * dy + ic[2] * dy * dy;
            let g = (-q * 0.5).raster_exp_neg();
            let live = t >= ctx.t_min;
            let alpha = if q <= ctx.cutoff_q && live {
                (ctx.opacity * g).min(ctx.alpha_max)
            } else {
                0.0
            };
            let w = t * alpha;
            acc_r[j] += ctx.color[0] * w;
            acc_g[j] += ctx.color[1] * w;
            acc_b[j] += ctx.color[2] * w;
            acc_a[j] += w;
            let nt = t * (1.0 - alpha);
            trans[j] = nt;
            newly_dead += (live && nt < ctx.t_min) as usize;
            x += 1;
        }
    }
    newly_dead
}
