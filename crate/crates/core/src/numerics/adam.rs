use crate::error::{Error, Result};

use super::{Gradients, ParamId, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 5e-4,
            beta1: 0.9,
            beta2: 0.98,
            epsilon: 1e-8,
        }
    }
}

/// Adam moments for every tensor in a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(store: &ParamStore<f32>, cfg: AdamConfig) -> Self {
        let zeros = || store.iter().map(|(_, t)| vec![0.0; t.numel()]).collect();
        AdamState {
            m: zeros(),
            v: zeros(),
            step: 0,
            lr: cfg.lr,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            epsilon: cfg.epsilon,
        }
    }

    /// Clears both moments of the given rows of a matrix parameter.
    pub fn reset_rows(&mut self, id: ParamId, cols: usize, rows: &[usize]) {
        for r in rows {
            self.m[id.0][r * cols..(r + 1) * cols].fill(0.0);
            self.v[id.0][r * cols..(r + 1) * cols].fill(0.0);
        }
    }
}

/// One bias-corrected Adam update. Parameters without a gradient are skipped.
/// A non-finite gradient aborts the step before anything is modified.
pub fn adam_step(
    store: &mut ParamStore<f32>,
    grads: &Gradients<f32>,
    state: &mut AdamState,
) -> Result<()> {
    if grads.len() != store.len() || state.m.len() != store.len() {
        return Err(Error::Config(format!(
            "adam: {} params, {} gradient slots, {} moment slots",
            store.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for id in store.ids() {
        if let Some(g) = grads.get(id) {
            if let Some(bad) = g.iter().position(|v| !v.is_finite()) {
                return Err(Error::Divergence(format!(
                    "non-finite gradient in {} at element {bad}",
                    store.name(id)
                )));
            }
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - state.beta1.powi(t);
    let c2 = 1.0 - state.beta2.powi(t);
    for id in store.ids() {
        let Some(g) = grads.get(id) else { continue };
        let (m, v) = (&mut state.m[id.0], &mut state.v[id.0]);
        let p = store.get_mut(id).data_mut();
        for i in 0..p.len() {
            let gi = g[i] as f64;
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * gi;
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * gi * gi;
            let mh = m[i] / c1;
            let vh = v[i] / c2;
            p[i] = (p[i] as f64 - state.lr * mh / (vh.sqrt() + state.epsilon)) as f32;
        }
    }
    Ok(())
}
