//! Central finite differences on the `f64` shadow of a graph.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{config_err, Result};

use super::{Graph, ParamStore, Var};

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖)` over every sampled coordinate.
    pub relative_error: f64,
    pub coordinates: usize,
    pub analytic_norm: f64,
}

/// Compares reverse-mode gradients of the scalar built by `loss` against
/// central differences with step `h`, sampling up to `per_tensor`
/// coordinates from every tensor in `store`.
pub fn gradient_check(
    store: &mut ParamStore<f64>,
    per_tensor: usize,
    h: f64,
    seed: u64,
    loss: impl Fn(&mut Graph<f64>) -> Result<Var>,
) -> Result<GradCheckReport> {
    let grads = {
        let mut g = Graph::new(store);
        let l = loss(&mut g)?;
        if g.shape(l) != (1, 1) {
            config_err!("gradient check needs a scalar loss");
        }
        g.backward(l)?.params
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let n = store.get(id).numel();
        let coords: Vec<usize> = if n <= per_tensor {
            (0..n).collect()
        } else {
            (0..per_tensor).map(|_| rng.random_range(0..n)).collect()
        };
        for c in coords {
            let a = grads.get(id).map_or(0.0, |g| g[c]);
            let orig = store.get(id).data()[c];
            store.get_mut(id).data_mut()[c] = orig + h;
            let plus = eval(store, &loss)?;
            store.get_mut(id).data_mut()[c] = orig - h;
            let minus = eval(store, &loss)?;
            store.get_mut(id).data_mut()[c] = orig;
            analytic.push(a);
            numeric.push((plus - minus) / (2.0 * h));
        }
    }

    let diff: f64 = analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| (a - n) * (a - n))
        .sum::<f64>()
        .sqrt();
    let na = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
    let denom = na.max(nn);
    Ok(GradCheckReport {
        relative_error: if denom < 1e-12 { diff } else { diff / denom },
        coordinates: analytic.len(),
        analytic_norm: na,
    })
}

fn eval(store: &ParamStore<f64>, loss: &impl Fn(&mut Graph<f64>) -> Result<Var>) -> Result<f64> {
    let mut g = Graph::new(store);
    let l = loss(&mut g)?;
    Ok(g.scalar(l))
}
