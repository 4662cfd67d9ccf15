//! Polynomial exponential used throughout the rasterization family.
//!
//! Both the tiled renderer, the brute-force reference and the training
//! backward replay call the same per-type lane function, so their outputs
//! stay mutually consistent to the last bit and the loss differentiates
//! exactly the function that rendering deploys.
//!
//! The evaluation is a branch-free multiply-add chain: e^x = p(x/32)^32
//! with p a Taylor polynomial, accurate on the splatting domain
//! (extent_sigma^2 / 2 <= 32) and exact at 0. Arguments below -32 clamp to
//! e^-32 ~ 1.3e-14, an absolute error far below every rendering tolerance
//! (the tiled path never evaluates past the extent cutoff; only the
//! no-cutoff reference reaches the clamp). Being branch-free keeps the
//! batched pixel loops vectorizable.

/// e^x for non-positive arguments, f64 lane: relative accuracy ~1e-10 on
/// [-32, 0].
#[inline]
pub fn exp_neg(x: f64) -> f64 {
    let r = x.max(-32.0) * (1.0 / 32.0);
    // Degree-13 Taylor of e^r on [-1, 0].
    let p = 1.0
        + r * (1.0
            + r * (0.5
                + r * (1.0 / 6.0
                    + r * (1.0 / 24.0
                        + r * (1.0 / 120.0
                            + r * (1.0 / 720.0
                                + r * (1.0 / 5040.0
                                    + r * (1.0 / 40320.0
                                        + r * (1.0 / 362880.0
                                            + r * (1.0 / 3628800.0
                                                + r * (1.0 / 39916800.0
                                                    + r * (1.0 / 479001600.0
                                                        + r * (1.0 / 6227020800.0)))))))))))));
    let p2 = p * p;
    let p4 = p2 * p2;
    let p8 = p4 * p4;
    let p16 = p8 * p8;
    p16 * p16
}

/// e^x for non-positive arguments, f32 lane: relative accuracy ~1e-5 on
/// [-32, 0], dominated by f32 rounding through the squarings.
#[inline]
pub fn exp_neg_f32(x: f32) -> f32 {
    let r = x.max(-32.0) * (1.0 / 32.0);
    // Degree-9 Taylor of e^r on [-1, 0].
    let p = 1.0
        + r * (1.0
            + r * (0.5
                + r * (1.0 / 6.0
                    + r * (1.0 / 24.0
                        + r * (1.0 / 120.0
                            + r * (1.0 / 720.0
                                + r * (1.0 / 5040.0
                                    + r * (1.0 / 40320.0 + r * (1.0 / 362880.0)))))))));
    let p2 = p * p;
    let p4 = p2 * p2;
    let p8 = p4 * p4;
    let p16 = p8 * p8;
    p16 * p16
}

/// Batch width of the rasterizer's inner pixel loop.
pub const EXP_LANES: usize = 8;

/// Scalar hook for the rasterizer. The batch method must agree with the
/// scalar method bit-for-bit; the default implementation keeps that true by
/// construction.
pub trait RasterExp: Copy {
    fn raster_exp_neg(self) -> Self;
    fn raster_exp_neg8(x: [Self; EXP_LANES]) -> [Self; EXP_LANES];
}

impl RasterExp for f64 {
    #[inline(always)]
    fn raster_exp_neg(self) -> Self {
        exp_neg(self)
    }

    #[inline(always)]
    fn raster_exp_neg8(x: [Self; EXP_LANES]) -> [Self; EXP_LANES] {
        let mut out = [0.0; EXP_LANES];
        for k in 0..EXP_LANES {
            out[k] = exp_neg(x[k]);
        }
        out
    }
}

impl RasterExp for f32 {
    #[inline(always)]
    fn raster_exp_neg(self) -> Self {
        exp_neg_f32(self)
    }

    #[inline(always)]
    fn raster_exp_neg8(x: [Self; EXP_LANES]) -> [Self; EXP_LANES] {
        let mut out = [0.0; EXP_LANES];
        for k in 0..EXP_LANES {
            out[k] = exp_neg_f32(x[k]);
        }
        out
    }
}
