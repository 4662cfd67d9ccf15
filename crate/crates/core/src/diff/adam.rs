//! Adam with bias correction and per-index learning rates.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }

    /// Rebuild moments after the parameter vector is restructured. Each new
    /// index maps to its source index in the old vector, or `None` for a
    /// freshly created parameter (zero moments).
    pub fn remap(&self, mapping: &[Option<usize>]) -> AdamState {
        AdamState {
            m: mapping
                .iter()
                .map(|src| src.map_or(0.0, |i| self.m[i]))
                .collect(),
            v: mapping
                .iter()
                .map(|src| src.map_or(0.0, |i| self.v[i]))
                .collect(),
            step: self.step,
        }
    }
}

/// One optimizer step. `lrs` carries the per-index learning rate (zero
/// freezes a parameter outright: no moment update, no movement).
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    lrs: &[f64],
    hyper: &AdamHyper,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() || params.len() != lrs.len() {
        return Err(Error::Dimension(format!(
            "adam length mismatch: params {}, grads {}, state {}, lrs {}",
            params.len(),
            grads.len(),
            state.m.len(),
            lrs.len()
        )));
    }
    state.step += 1;
    let t = state.step as f64;
    let bc1 = 1.0 - hyper.beta1.powf(t);
    let bc2 = 1.0 - hyper.beta2.powf(t);
    for i in 0..params.len() {
        if lrs[i] == 0.0 {
            continue;
        }
        let g = grads[i];
        state.m[i] = hyper.beta1 * state.m[i] + (1.0 - hyper.beta1) * g;
        state.v[i] = hyper.beta2 * state.v[i] + (1.0 - hyper.beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= lrs[i] * m_hat / (v_hat.sqrt() + hyper.eps);
    }
    Ok(())
}
