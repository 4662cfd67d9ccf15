//! Real spherical-harmonics environment lighting with separate palm/back
//! environments predicted from pose by a small MLP.
//!
//! Basis convention: real SH with Condon-Shortley phase folded into the
//! associated Legendre terms, flattened by `index = l^2 + l + m` for
//! `l = 0..=order`, `m = -l..=l`. Band 1 therefore evaluates to
//! `(-K*y, K*z, -K*x)` with `K = sqrt(3/4pi)`. Coefficient vectors are
//! channel-major: all R coefficients in basis order, then G, then B.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{Real, Vec3};
use crate::mesh::FaceSide;
use crate::surfgauss::WorldSplat;

/// Highest supported SH order.
pub const MAX_SH_ORDER: usize = 4;

/// Basis function count for a given order.
pub fn basis_count(order: usize) -> usize {
    (order + 1) * (order + 1)
}

/// Evaluate the real SH basis at a unit direction.
///
/// Works for any order <= 4. Azimuthal factors are built from the real and
/// imaginary parts of (x + iy)^m, so the evaluation is polynomial in the
/// direction components and smooth at the poles.
pub fn sh_basis<T: Real>(direction: Vec3<T>, order: usize) -> Result<Vec<T>> {
    if order > MAX_SH_ORDER {
        return Err(Error::Domain(format!(
            "sh order {order} exceeds maximum {MAX_SH_ORDER}"
        )));
    }
    let n2 = direction.norm_sq().val();
    if (n2 - 1.0).abs() > 2.5e-6 {
        return Err(Error::Domain(format!(
            "direction must be unit length (|d|^2 = {n2})"
        )));
    }
    let (x, y, z) = (direction.x, direction.y, direction.z);
    let zero = x * 0.0;
    let n = order;
    let mut out = vec![zero; basis_count(n)];

    // Azimuthal parts: a[m] = Re((x+iy)^m), b[m] = Im((x+iy)^m).
    let mut a = vec![zero; n + 1];
    let mut b = vec![zero; n + 1];
    a[0] = zero + 1.0;
    for m in 1..=n {
        a[m] = x * a[m - 1] - y * b[m - 1];
        b[m] = x * b[m - 1] + y * a[m - 1];
    }

    // q[m][l] is the associated Legendre polynomial with the sin^m(theta)
    // factor removed (it cancels against the azimuthal parts above), with
    // Condon-Shortley phase.
    let mut q = vec![vec![zero; n + 1]; n + 1];
    for m in 0..=n {
        // Q_m^m = (-1)^m (2m-1)!!
        let mut qmm = 1.0;
        for k in 0..m {
            qmm *= -(2.0 * k as f64 + 1.0);
        }
        q[m][m] = zero + qmm;
        if m + 1 <= n {
            q[m][m + 1] = z * (2.0 * m as f64 + 1.0) * qmm;
        }
        for l in (m + 2)..=n {
            let lf = l as f64;
            let mf = m as f64;
            q[m][l] = (z * q[m][l - 1] * (2.0 * lf - 1.0) - q[m][l - 2] * (lf + mf - 1.0))
                / (lf - mf);
        }
    }

    let four_pi = 4.0 * std::f64::consts::PI;
    for l in 0..=n {
        for m in 0..=l {
            // K(l, m) = sqrt((2l+1)/(4pi) * (l-m)!/(l+m)!)
            let mut ratio = 1.0;
            for k in (l - m + 1)..=(l + m) {
                ratio /= k as f64;
            }
            let k_lm = ((2.0 * l as f64 + 1.0) / four_pi * ratio).sqrt();
            if m == 0 {
                out[l * l + l] = q[0][l] * k_lm;
            } else {
                let norm = std::f64::consts::SQRT_2 * k_lm;
                out[l * l + l + m] = q[m][l] * a[m] * norm;
                out[l * l + l - m] = q[m][l] * b[m] * norm;
            }
        }
    }
    Ok(out)
}

/// SH coefficients for an RGB environment, channel-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShCoefficients {
    pub order: usize,
    /// 3 * (order+1)^2 values: R block, G block, B block.
    pub coeffs: Vec<f64>,
}

impl ShCoefficients {
    pub fn zeros(order: usize) -> Self {
        ShCoefficients {
            order,
            coeffs: vec![0.0; 3 * basis_count(order)],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.coeffs.len() != 3 * basis_count(self.order) {
            return Err(Error::Dimension(format!(
                "expected {} coefficients for order {}, got {}",
                3 * basis_count(self.order),
                self.order,
                self.coeffs.len()
            )));
        }
        if self.coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::Numeric("non-finite sh coefficient".into()));
        }
        Ok(())
    }

    pub fn channel(&self, ch: usize) -> &[f64] {
        let n = basis_count(self.order);
        &self.coeffs[ch * n..(ch + 1) * n]
    }

    /// Coefficient-major RGB triplets in basis order (the JSON dump layout).
    pub fn to_rgb_triplets(&self) -> Vec<[f64; 3]> {
        let n = basis_count(self.order);
        (0..n)
            .map(|i| [self.coeffs[i], self.coeffs[n + i], self.coeffs[2 * n + i]])
            .collect()
    }

    pub fn from_rgb_triplets(order: usize, triplets: &[[f64; 3]]) -> Result<Self> {
        let n = basis_count(order);
        if triplets.len() != n {
            return Err(Error::Dimension(format!(
                "expected {n} triplets for order {order}, got {}",
                triplets.len()
            )));
        }
        let mut coeffs = vec![0.0; 3 * n];
        for (i, t) in triplets.iter().enumerate() {
            coeffs[i] = t[0];
            coeffs[n + i] = t[1];
            coeffs[2 * n + i] = t[2];
        }
        let out = ShCoefficients { order, coeffs };
        out.validate()?;
        Ok(out)
    }
}

/// Palm and back environments of matching order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualEnvironment {
    pub palm: ShCoefficients,
    pub back: ShCoefficients,
}

impl DualEnvironment {
    pub fn select(&self, side: FaceSide) -> &ShCoefficients {
        match side {
            FaceSide::Palm => &self.palm,
            FaceSide::Back => &self.back,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.palm.validate()?;
        self.back.validate()?;
        if self.palm.order != self.back.order {
            return Err(Error::Dimension("palm/back orders differ".into()));
        }
        Ok(())
    }
}

/// Diffuse shading: per channel `albedo * max(0, sum(coeffs * basis(n)))`.
pub fn shade<T: Real>(albedo: [T; 3], l: &[T], order: usize, normal: Vec3<T>) -> Result<[T; 3]> {
    let basis = sh_basis(normal, order)?;
    let nb = basis_count(order);
    if l.len() != 3 * nb {
        return Err(Error::Dimension(format!(
            "coefficient vector has {} entries, expected {}",
            l.len(),
            3 * nb
        )));
    }
    let mut out = [albedo[0], albedo[1], albedo[2]];
    for ch in 0..3 {
        let mut irr = basis[0] * 0.0;
        for (i, &bv) in basis.iter().enumerate() {
            irr = irr + l[ch * nb + i] * bv;
        }
        out[ch] = albedo[ch] * irr.max0();
    }
    Ok(out)
}

/// Plain-f64 shading against an `ShCoefficients`.
pub fn shade_env(albedo: [f64; 3], env: &ShCoefficients, normal: Vec3<f64>) -> Result<[f64; 3]> {
    shade(albedo, &env.coeffs, env.order, normal)
}

/// Shade a realized splat against the environment its anchor face selects.
pub fn shade_splat(
    splat: &WorldSplat<f64>,
    env: &DualEnvironment,
    side: FaceSide,
) -> Result<[f64; 3]> {
    shade_env(splat.albedo, env.select(side), splat.normal)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Softplus,
    Tanh,
    Relu,
}

impl Activation {
    fn apply<T: Real>(self, x: T) -> T {
        match self {
            Activation::Softplus => x.softplus(),
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max0(),
        }
    }
}

/// Pose-to-lighting network: a plain MLP from the flattened pose vector to
/// the stacked palm and back coefficient blocks.
///
/// Output layout: palm channel-major block (3 * (order+1)^2), then the same
/// for back.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LightingNet {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub sh_order: usize,
    pub activation: Activation,
    /// Flattened parameters, per layer: row-major weights [out x in], then
    /// biases [out].
    pub params: Vec<f64>,
}

impl LightingNet {
    pub fn output_dim(&self) -> usize {
        2 * 3 * basis_count(self.sh_order)
    }

    /// Layer sizes including input and output.
    pub fn layer_dims(&self) -> Vec<usize> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 2);
        dims.push(self.input_dim);
        dims.extend_from_slice(&self.hidden);
        dims.push(self.output_dim());
        dims
    }

    pub fn param_count(&self) -> usize {
        let dims = self.layer_dims();
        dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// Seeded init: uniform Xavier weights, zero biases except the DC
    /// coefficient of every channel, which starts at 1/Y00 so the initial
    /// environments shade neutrally.
    pub fn init(
        input_dim: usize,
        hidden: Vec<usize>,
        sh_order: usize,
        activation: Activation,
        rng: &mut impl rand::Rng,
    ) -> Self {
        let mut net = LightingNet {
            input_dim,
            hidden,
            sh_order,
            activation,
            params: Vec::new(),
        };
        let dims = net.layer_dims();
        let mut params = Vec::with_capacity(net.param_count());
        for w in dims.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for _ in 0..fan_in * fan_out {
                params.push(rng.gen_range(-bound..bound));
            }
            for _ in 0..fan_out {
                params.push(0.0);
            }
        }
        net.params = params;
        // DC bias = 1 / Y00 per channel in both environments.
        let dc = 1.0 / sh_basis(Vec3::new(0.0, 0.0, 1.0), 0).unwrap()[0];
        let nb = basis_count(sh_order);
        let bias_start = net.param_count() - net.output_dim();
        for env in 0..2 {
            for ch in 0..3 {
                net.params[bias_start + env * 3 * nb + ch * nb] = dc;
            }
        }
        net
    }

    /// Zero-weight net whose output is exactly its output-layer bias; used
    /// when optimizing raw coefficients rather than a pose response.
    pub fn constant(input_dim: usize, hidden: Vec<usize>, sh_order: usize) -> Self {
        let mut net = LightingNet {
            input_dim,
            hidden,
            sh_order,
            activation: Activation::Softplus,
            params: Vec::new(),
        };
        net.params = vec![0.0; net.param_count()];
        net
    }

    pub fn validate(&self) -> Result<()> {
        if self.params.len() != self.param_count() {
            return Err(Error::Dimension(format!(
                "lighting net has {} parameters, layout needs {}",
                self.params.len(),
                self.param_count()
            )));
        }
        if self.params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Numeric("non-finite lighting net weight".into()));
        }
        Ok(())
    }

    /// Forward pass over lifted parameters (shared by training and
    /// inference). `params` must follow this net's layout.
    pub fn forward<T: Real>(&self, params: &[T], input: &[T]) -> Result<Vec<T>> {
        if input.len() != self.input_dim {
            return Err(Error::Dimension(format!(
                "lighting net input has {} entries, expected {}",
                input.len(),
                self.input_dim
            )));
        }
        let dims = self.layer_dims();
        let mut act: Vec<T> = input.to_vec();
        let mut offset = 0usize;
        for (li, w) in dims.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let weights = &params[offset..offset + fan_in * fan_out];
            let biases = &params[offset + fan_in * fan_out..offset + fan_in * fan_out + fan_out];
            offset += fan_in * fan_out + fan_out;
            let mut next = Vec::with_capacity(fan_out);
            for o in 0..fan_out {
                let mut acc = biases[o];
                for i in 0..fan_in {
                    acc = acc + weights[o * fan_in + i] * act[i];
                }
                if li + 2 < dims.len() {
                    acc = self.activation.apply(acc);
                }
                next.push(acc);
            }
            act = next;
        }
        Ok(act)
    }

    /// Split a forward output into the palm/back environments.
    pub fn split_output(&self, out: &[f64]) -> DualEnvironment {
        let nb = 3 * basis_count(self.sh_order);
        DualEnvironment {
            palm: ShCoefficients {
                order: self.sh_order,
                coeffs: out[..nb].to_vec(),
            },
            back: ShCoefficients {
                order: self.sh_order,
                coeffs: out[nb..].to_vec(),
            },
        }
    }
}

/// Predict both environments from a pose vector (flattened joint rotations,
/// with or without the root translation depending on the net's input size).
pub fn predict_environments(net: &LightingNet, pose_input: &[f64]) -> Result<DualEnvironment> {
    let out = net.forward(&net.params, pose_input)?;
    Ok(net.split_output(&out))
}
