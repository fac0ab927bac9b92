use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{slice_windows, SwerModel};
use crate::config::{ModelDims, Schedule};
use crate::corpus::{MelSpectrogram, UtterancePair};
use crate::error::{Error, Result};
use crate::manifold::mel_constant;
use crate::numerics::{adam_step, bce_elementwise, lr_linear_decay, AdamState, Gradients, Graph, ParamStore};
use crate::seed::derive;

#[derive(Clone, Debug)]
pub struct SwerTrainConfig {
    pub dims: ModelDims,
    pub schedule: Schedule,
    pub radius: usize,
    pub seed: u64,
    /// Best-validation checkpoint path, rewritten whenever accuracy improves.
    pub checkpoint: Option<PathBuf>,
}

impl Default for SwerTrainConfig {
    fn default() -> Self {
        SwerTrainConfig {
            dims: ModelDims::default(),
            schedule: Schedule::default(),
            radius: 2,
            seed: 0,
            checkpoint: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SwerEpoch {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SwerHistory {
    /// Mean per-element BCE over the training windows before any update.
    pub initial_loss: f64,
    pub epochs: Vec<SwerEpoch>,
    pub best_epoch: usize,
    pub best_accuracy: f64,
}

struct Sample {
    frames: MelSpectrogram,
    label: usize,
}

fn windows(pairs: &[UtterancePair], radius: usize) -> Result<Vec<Sample>> {
    let mut out = Vec::new();
    for p in pairs {
        for w in slice_windows(&p.mel_emotional, &p.phonemes.boundaries(), radius)? {
            out.push(Sample {
                frames: w.frames,
                label: p.emotion,
            });
        }
    }
    Ok(out)
}

fn one_hot(k: usize, n: usize) -> Vec<f32> {
    (0..n).map(|j| if j == k { 1.0 } else { 0.0 }).collect()
}

/// Mean BCE and argmax accuracy over `samples` in inference mode.
fn evaluate(model: &SwerModel, samples: &[Sample]) -> Result<(f64, f64)> {
    let n = model.dims.emotions;
    let mut loss = 0.0;
    let mut correct = 0usize;
    for s in samples {
        let mut g = Graph::new(&model.store);
        let x = mel_constant(&mut g, &s.frames)?;
        let logits = model.net.forward(&mut g, x)?;
        let l = bce_elementwise(&mut g, logits, &one_hot(s.label, n))?;
        loss += g.scalar(l) as f64;
        let v = g.value(logits);
        let arg = (0..n).fold(0, |b, k| if v[k] > v[b] { k } else { b });
        correct += usize::from(arg == s.label);
    }
    let m = samples.len().max(1) as f64;
    Ok((loss / m, correct as f64 / m))
}

/// Validation window accuracy of a trained model on `pairs`.
pub fn window_accuracy(model: &SwerModel, pairs: &[UtterancePair]) -> Result<f64> {
    Ok(window_metrics(model, pairs)?.1)
}

/// Mean window BCE and accuracy on `pairs`.
pub fn window_metrics(model: &SwerModel, pairs: &[UtterancePair]) -> Result<(f64, f64)> {
    evaluate(model, &windows(pairs, model.radius)?)
}

/// Trains Pred D on every window of every training utterance, each window
/// labelled with its utterance's emotion.
pub fn train_swer(
    train: &[UtterancePair],
    val: &[UtterancePair],
    cfg: &SwerTrainConfig,
) -> Result<(SwerModel, SwerHistory)> {
    cfg.schedule.validate()?;
    let train = windows(train, cfg.radius)?;
    let val = windows(val, cfg.radius)?;
    if train.is_empty() {
        return Err(Error::Config("no training windows".into()));
    }
    let val = if val.is_empty() { &train } else { &val };
    let n = cfg.dims.emotions;
    if let Some(s) = train.iter().chain(val.iter()).find(|s| s.label >= n) {
        return Err(Error::Config(format!("label {} out of range for {n} emotions", s.label)));
    }
    let mut model = SwerModel::new(cfg.dims, cfg.radius, derive(cfg.seed, &[0]))?;
    let mut adam = AdamState::new(&model.store, cfg.schedule.adam);
    let mut history = SwerHistory {
        initial_loss: evaluate(&model, &train)?.0,
        ..Default::default()
    };
    let mut best: Option<(f64, f64, ParamStore<f32>)> = None;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut step = 0u64;

    for epoch in 0..cfg.schedule.epochs {
        adam.lr = lr_linear_decay(epoch, cfg.schedule.epochs, cfg.schedule.adam.lr);
        let mut rng = ChaCha8Rng::seed_from_u64(derive(cfg.seed, &[1, epoch as u64]));
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.schedule.batch_size) {
            let mut grads = Gradients::new(model.store.len());
            for &i in batch {
                let s = &train[i];
                let mut g = Graph::training(&model.store, derive(cfg.seed, &[2, step, i as u64]));
                let x = mel_constant(&mut g, &s.frames)?;
                let logits = model.net.forward(&mut g, x)?;
                let l = bce_elementwise(&mut g, logits, &one_hot(s.label, n))?;
                let lv = g.scalar(l) as f64;
                if !lv.is_finite() {
                    return Err(Error::Divergence(format!("swer loss {lv} at epoch {epoch}")));
                }
                loss_sum += lv;
                grads.merge(&g.backward(l)?.params);
            }
            grads.scale(1.0 / batch.len() as f32);
            adam_step(&mut model.store, &grads, &mut adam)?;
            step += 1;
        }
        let (val_loss, val_accuracy) = evaluate(&model, val)?;
        let stats = SwerEpoch {
            epoch,
            lr: adam.lr,
            train_loss: loss_sum / train.len() as f64,
            val_loss,
            val_accuracy,
        };
        log::info!(
            "swer epoch {epoch}: train {:.5} val {:.5} accuracy {:.4}",
            stats.train_loss,
            val_loss,
            val_accuracy
        );
        history.epochs.push(stats);
        let improved = best
            .as_ref()
            .is_none_or(|(acc, loss, _)| val_accuracy > *acc || (val_accuracy == *acc && val_loss < *loss));
        if improved {
            best = Some((val_accuracy, val_loss, model.store.clone()));
            history.best_epoch = epoch;
            history.best_accuracy = val_accuracy;
            if let Some(path) = &cfg.checkpoint {
                model.save(path)?;
            }
        }
    }
    if let Some((_, _, store)) = best {
        model.store = store;
    }
    if let Some(path) = &cfg.checkpoint {
        model.save(path)?;
    }
    Ok((model, history))
}
