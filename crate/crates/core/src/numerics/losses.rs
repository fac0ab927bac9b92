use crate::error::{config_err, Result};

use super::{Graph, Real, Var};

/// Mean over frames of the per-frame Euclidean distance. `target` is detached.
pub fn mse_loss<T: Real>(g: &mut Graph<T>, pred: Var, target: Var) -> Result<Var> {
    if g.shape(pred) != g.shape(target) {
        config_err!(
            "mse_loss: prediction {:?} vs target {:?}",
            g.shape(pred),
            g.shape(target)
        );
    }
    let target = g.detach(target);
    let diff = g.sub(pred, target)?;
    g.row_norm_mean(diff)
}

/// Mean element-wise binary cross-entropy between `sigmoid(logits)` and 0/1 labels.
pub fn bce_elementwise<T: Real>(g: &mut Graph<T>, logits: Var, labels: &[T]) -> Result<Var> {
    g.bce_logits(logits, labels)
}

/// Linear learning-rate ramp from `lr_max` at epoch 0 down to 0 at `max_epochs`.
pub fn lr_linear_decay(epoch: usize, max_epochs: usize, lr_max: f64) -> f64 {
    if max_epochs == 0 || epoch >= max_epochs {
        return 0.0;
    }
    lr_max * (1.0 - epoch as f64 / max_epochs as f64)
}
