//! Scalar reverse-mode automatic differentiation on a flat tape.
//!
//! Every recorded node stores its parent indices together with the local
//! partial derivatives evaluated at record time, so the backward sweep is a
//! single reverse loop that never inspects operation kinds. Branches taken
//! while recording (activation guards, culling, clamps) are baked into the
//! tape, which is the standard operator-overloading contract.

use std::cell::RefCell;

use crate::math::Real;

const NONE: u32 = u32::MAX;

#[derive(Clone, Copy)]
struct Node {
    a: u32,
    b: u32,
    pa: f64,
    pb: f64,
}

#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// A value recorded on a tape. Copyable; carries its numeric value inline.
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    pub idx: u32,
    v: f64,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Drop all recorded nodes but keep the allocation.
    pub fn clear(&self) {
        self.nodes.borrow_mut().clear();
    }

    /// Record a leaf (independent variable or constant).
    pub fn var(&self, v: f64) -> Var<'_> {
        let idx = self.push(Node {
            a: NONE,
            b: NONE,
            pa: 0.0,
            pb: 0.0,
        });
        Var { tape: self, idx, v }
    }

    /// Record `n` leaves from a slice, returning their starting index.
    pub fn vars<'t>(&'t self, values: &[f64]) -> Vec<Var<'t>> {
        values.iter().map(|&v| self.var(v)).collect()
    }

    fn push(&self, n: Node) -> u32 {
        let mut nodes = self.nodes.borrow_mut();
        let idx = nodes.len();
        assert!(idx < NONE as usize, "tape overflow");
        nodes.push(n);
        idx as u32
    }

    fn unary(&self, a: u32, pa: f64, v: f64) -> Var<'_> {
        let idx = self.push(Node {
            a,
            b: NONE,
            pa,
            pb: 0.0,
        });
        Var { tape: self, idx, v }
    }

    fn binary(&self, a: u32, b: u32, pa: f64, pb: f64, v: f64) -> Var<'_> {
        let idx = self.push(Node { a, b, pa, pb });
        Var { tape: self, idx, v }
    }

    /// Reverse sweep from the given seed adjoints. Returns the adjoint of
    /// every node; leaves created first sit at the front of the vector.
    pub fn backward(&self, seeds: &[(u32, f64)]) -> Vec<f64> {
        let nodes = self.nodes.borrow();
        let mut adj = vec![0.0; nodes.len()];
        for &(idx, g) in seeds {
            adj[idx as usize] += g;
        }
        for i in (0..nodes.len()).rev() {
            let g = adj[i];
            if g == 0.0 {
                continue;
            }
            let n = nodes[i];
            if n.a != NONE {
                adj[n.a as usize] += g * n.pa;
            }
            if n.b != NONE {
                adj[n.b as usize] += g * n.pb;
            }
        }
        adj
    }
}

impl<'t> Var<'t> {
    pub fn value(self) -> f64 {
        self.v
    }

    fn same_tape(self, o: Var<'t>) {
        debug_assert!(std::ptr::eq(self.tape, o.tape), "vars from different tapes");
    }
}

impl<'t> std::ops::Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, o: Self) -> Self {
        self.same_tape(o);
        self.tape.binary(self.idx, o.idx, 1.0, 1.0, self.v + o.v)
    }
}

impl<'t> std::ops::Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, o: Self) -> Self {
        self.same_tape(o);
        self.tape.binary(self.idx, o.idx, 1.0, -1.0, self.v - o.v)
    }
}

impl<'t> std::ops::Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, o: Self) -> Self {
        self.same_tape(o);
        self.tape.binary(self.idx, o.idx, o.v, self.v, self.v * o.v)
    }
}

impl<'t> std::ops::Div for Var<'t> {
    type Output = Var<'t>;
    fn div(self, o: Self) -> Self {
        self.same_tape(o);
        let inv = 1.0 / o.v;
        self.tape
            .binary(self.idx, o.idx, inv, -self.v * inv * inv, self.v * inv)
    }
}

impl<'t> std::ops::Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Self {
        self.tape.unary(self.idx, -1.0, -self.v)
    }
}

impl<'t> std::ops::Add<f64> for Var<'t> {
    type Output = Var<'t>;
    fn add(self, c: f64) -> Self {
        self.tape.unary(self.idx, 1.0, self.v + c)
    }
}

impl<'t> std::ops::Sub<f64> for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, c: f64) -> Self {
        self.tape.unary(self.idx, 1.0, self.v - c)
    }
}

impl<'t> std::ops::Mul<f64> for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, c: f64) -> Self {
        self.tape.unary(self.idx, c, self.v * c)
    }
}

impl<'t> std::ops::Div<f64> for Var<'t> {
    type Output = Var<'t>;
    fn div(self, c: f64) -> Self {
        let inv = 1.0 / c;
        self.tape.unary(self.idx, inv, self.v * inv)
    }
}

impl<'t> Real for Var<'t> {
    fn val(self) -> f64 {
        self.v
    }

    fn sqrt(self) -> Self {
        let r = self.v.sqrt();
        self.tape.unary(self.idx, 0.5 / r, r)
    }

    fn exp(self) -> Self {
        let e = self.v.exp();
        self.tape.unary(self.idx, e, e)
    }

    fn ln(self) -> Self {
        self.tape.unary(self.idx, 1.0 / self.v, self.v.ln())
    }

    fn sin(self) -> Self {
        self.tape.unary(self.idx, self.v.cos(), self.v.sin())
    }

    fn cos(self) -> Self {
        self.tape.unary(self.idx, -self.v.sin(), self.v.cos())
    }

    fn atan2(self, x: Self) -> Self {
        self.same_tape(x);
        let (y, xv) = (self.v, x.v);
        let d = y * y + xv * xv;
        self.tape
            .binary(self.idx, x.idx, xv / d, -y / d, y.atan2(xv))
    }

    fn recip(self) -> Self {
        let inv = 1.0 / self.v;
        self.tape.unary(self.idx, -inv * inv, inv)
    }

    fn max0(self) -> Self {
        if self.v > 0.0 {
            self.tape.unary(self.idx, 1.0, self.v)
        } else {
            self.tape.unary(self.idx, 0.0, 0.0)
        }
    }

    fn sigmoid(self) -> Self {
        let s = 1.0 / (1.0 + (-self.v).exp());
        self.tape.unary(self.idx, s * (1.0 - s), s)
    }

    fn softplus(self) -> Self {
        let (v, d) = if self.v > 30.0 {
            (self.v, 1.0)
        } else if self.v < -30.0 {
            (self.v.exp(), self.v.exp())
        } else {
            ((1.0 + self.v.exp()).ln(), 1.0 / (1.0 + (-self.v).exp()))
        };
        self.tape.unary(self.idx, d, v)
    }

    fn tanh(self) -> Self {
        let t = self.v.tanh();
        self.tape.unary(self.idx, 1.0 - t * t, t)
    }

    fn detach(self) -> Self {
        self.tape.var(self.v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Central finite difference of a scalar function of a slice.
    fn fd(f: &dyn Fn(&[f64]) -> f64, x: &[f64], i: usize, h: f64) -> f64 {
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[i] += h;
        xm[i] -= h;
        (f(&xp) - f(&xm)) / (2.0 * h)
    }

    fn grad_of(f: &dyn for<'t> Fn(&[Var<'t>]) -> Var<'t>, x: &[f64]) -> Vec<f64> {
        let tape = Tape::new();
        let vars = tape.vars(x);
        let out = f(&vars);
        let adj = tape.backward(&[(out.idx, 1.0)]);
        (0..x.len()).map(|i| adj[i]).collect()
    }

    #[test]
    fn gradients_match_finite_differences() {
        fn fv(x: &[f64]) -> f64 {
            let (a, b, c) = (x[0], x[1], x[2]);
            ((a * b).sin() + (c / a).exp()).sqrt() * b.atan2(c) + (a * a + 1.0).ln()
        }
        fn ft<'t>(x: &[Var<'t>]) -> Var<'t> {
            let (a, b, c) = (x[0], x[1], x[2]);
            ((a * b).sin() + (c / a).exp()).sqrt() * b.atan2(c) + (a * a + 1.0).ln()
        }
        let x = [1.3, 0.7, -0.4];
        let g = grad_of(&ft, &x);
        for i in 0..3 {
            let want = fd(&fv, &x, i, 1e-6);
            assert!(
                (g[i] - want).abs() < 1e-7 * want.abs().max(1.0),
                "grad[{i}] = {} vs fd {}",
                g[i],
                want
            );
        }
    }

    #[test]
    fn activations_match_finite_differences() {
        fn fv(x: &[f64]) -> f64 {
            x[0].sigmoid() + x[0].softplus() * x[0].tanh() + x[0].max0()
        }
        fn ft<'t>(x: &[Var<'t>]) -> Var<'t> {
            x[0].sigmoid() + x[0].softplus() * x[0].tanh() + x[0].max0()
        }
        for &x0 in &[-2.0, -0.5, 0.3, 1.7] {
            let g = grad_of(&ft, &[x0]);
            let want = fd(&fv, &[x0], 0, 1e-6);
            assert!((g[0] - want).abs() < 1e-8, "at {x0}: {} vs {}", g[0], want);
        }
    }

    #[test]
    fn detach_blocks_gradient() {
        let tape = Tape::new();
        let x = tape.var(2.0);
        let y = x.detach() * x; // d/dx should be 2.0, not 4.0
        let adj = tape.backward(&[(y.idx, 1.0)]);
        assert_eq!(adj[x.idx as usize], 2.0);
    }

    #[test]
    fn fan_out_accumulates() {
        let tape = Tape::new();
        let x = tape.var(3.0);
        let y = x * x + x * 2.0; // y = x^2 + 2x, dy/dx = 2x + 2 = 8
        let adj = tape.backward(&[(y.idx, 1.0)]);
        assert_eq!(adj[x.idx as usize], 8.0);
    }

    #[test]
    fn quadratic_derivative_exact() {
        // f(t) = t^2 at t = 3 -> 6.
        let tape = Tape::new();
        let t = tape.var(3.0);
        let f = t * t;
        let adj = tape.backward(&[(f.idx, 1.0)]);
        assert!((adj[t.idx as usize] - 6.0).abs() < 1e-12);
    }
}
