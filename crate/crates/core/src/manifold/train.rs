use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{mel_constant, reconstruction_graph, ManifoldModel, QuantMode, ReconInput};
use crate::config::{ModelDims, Schedule};
use crate::corpus::UtterancePair;
use crate::error::{Error, Result};
use crate::numerics::{adam_step, lr_linear_decay, AdamState, Gradients, Graph, ParamStore, Segments};
use crate::seed::derive;

#[derive(Clone, Debug)]
pub struct ManifoldTrainConfig {
    pub dims: ModelDims,
    pub schedule: Schedule,
    /// Commitment weight.
    pub beta: f64,
    pub seed: u64,
    /// When set, the best-validation model is written here after every
    /// improving epoch and the latest model to `<path>.last`.
    pub checkpoint: Option<PathBuf>,
}

impl Default for ManifoldTrainConfig {
    fn default() -> Self {
        ManifoldTrainConfig {
            dims: ModelDims::default(),
            schedule: Schedule::default(),
            beta: 0.25,
            seed: 0,
            checkpoint: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManifoldEpoch {
    pub epoch: usize,
    pub lr: f64,
    /// Mean training-mode loss over the epoch's steps.
    pub train_loss: f64,
    pub val_loss: f64,
    pub dead_codes: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ManifoldHistory {
    /// Inference-mode training loss before the first update.
    pub initial_train_loss: f64,
    pub epochs: Vec<ManifoldEpoch>,
    pub best_epoch: usize,
    pub steps: usize,
}

struct Prepared<'a> {
    pair: &'a UtterancePair,
    segments: Segments,
}

fn prepare(pairs: &[UtterancePair]) -> Vec<Prepared<'_>> {
    pairs
        .iter()
        .filter(|p| p.emotion > 0)
        .map(|pair| Prepared {
            segments: pair.phonemes.boundaries(),
            pair,
        })
        .collect()
}

fn mean_loss(model: &ManifoldModel, data: &[Prepared]) -> Result<f64> {
    let mut total = 0.0;
    for p in data {
        total += model.loss(&ReconInput {
            emotional: &p.pair.mel_emotional,
            neutral: &p.pair.mel_neutral,
            segments: &p.segments,
            speaker: p.pair.speaker,
        })?;
    }
    Ok(total / data.len().max(1) as f64)
}

/// Mean inference-mode reconstruction loss over the emotional pairs.
pub fn reconstruction_loss(model: &ManifoldModel, pairs: &[UtterancePair]) -> Result<f64> {
    mean_loss(model, &prepare(pairs))
}

/// Assignment counts of every code over the emotional pairs of `pairs`.
pub fn codebook_usage(model: &ManifoldModel, pairs: &[UtterancePair]) -> Result<Vec<u64>> {
    usage_of(model, &prepare(pairs))
}

fn usage_of(model: &ManifoldModel, data: &[Prepared]) -> Result<Vec<u64>> {
    let mut usage = vec![0u64; model.dims.codes];
    for p in data {
        for k in model.encode(&p.pair.mel_emotional, &p.segments)?.indices {
            usage[k] += 1;
        }
    }
    Ok(usage)
}

/// Fixed-size uniform sample of encoder rows seen during an epoch.
struct Reservoir {
    rows: Vec<Vec<f32>>,
    seen: usize,
    cap: usize,
}

impl Reservoir {
    fn offer(&mut self, row: &[f32], rng: &mut impl Rng) {
        self.seen += 1;
        if self.rows.len() < self.cap {
            self.rows.push(row.to_vec());
        } else {
            let j = rng.random_range(0..self.seen);
            if j < self.cap {
                self.rows[j] = row.to_vec();
            }
        }
    }
}

/// Trains the manifold autoencoder on the emotional pairs of `train`,
/// returning the model with the lowest validation loss.
pub fn train_manifold(
    train: &[UtterancePair],
    val: &[UtterancePair],
    cfg: &ManifoldTrainConfig,
) -> Result<(ManifoldModel, ManifoldHistory)> {
    cfg.schedule.validate()?;
    let train = prepare(train);
    let val = prepare(val);
    if train.is_empty() {
        return Err(Error::Config("no emotional training pairs".into()));
    }
    let val = if val.is_empty() { &train } else { &val };
    let mut model = ManifoldModel::new(cfg.dims, cfg.beta, derive(cfg.seed, &[0]))?;
    let mut adam = AdamState::new(&model.store, cfg.schedule.adam);
    let d = cfg.dims.latent;
    let cb_id = model.nets.codebook;

    let mut history = ManifoldHistory {
        initial_train_loss: mean_loss(&model, &train)?,
        ..Default::default()
    };
    let mut best: Option<(f64, ParamStore<f32>)> = None;
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 0..cfg.schedule.epochs {
        adam.lr = lr_linear_decay(epoch, cfg.schedule.epochs, cfg.schedule.adam.lr);
        let mut rng = ChaCha8Rng::seed_from_u64(derive(cfg.seed, &[1, epoch as u64]));
        order.shuffle(&mut rng);
        let mut usage = vec![0u64; cfg.dims.codes];
        let mut reservoir = Reservoir {
            rows: Vec::new(),
            seen: 0,
            cap: 4 * cfg.dims.codes,
        };
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.schedule.batch_size) {
            let mut grads = Gradients::new(model.store.len());
            for &i in batch {
                let p = &train[i];
                let mut g = Graph::training(&model.store, derive(cfg.seed, &[2, history.steps as u64, i as u64]));
                let e = mel_constant(&mut g, &p.pair.mel_emotional)?;
                let n = mel_constant(&mut g, &p.pair.mel_neutral)?;
                let r = reconstruction_graph(
                    &mut g,
                    &model.nets,
                    e,
                    n,
                    &p.segments,
                    p.pair.speaker,
                    &QuantMode::Nearest,
                    cfg.beta,
                )?;
                let l = g.scalar(r.loss) as f64;
                if !l.is_finite() {
                    return Err(Error::Divergence(format!(
                        "manifold loss {l} at epoch {epoch}, utterance {}",
                        p.pair.id
                    )));
                }
                loss_sum += l;
                for &k in &r.indices {
                    usage[k] += 1;
                }
                for row in g.value(r.pre).chunks_exact(d) {
                    reservoir.offer(row, &mut rng);
                }
                grads.merge(&g.backward(r.loss)?.params);
            }
            grads.scale(1.0 / batch.len() as f32);
            adam_step(&mut model.store, &grads, &mut adam)?;
            history.steps += 1;
        }

        let dead: Vec<usize> = (0..cfg.dims.codes).filter(|&k| usage[k] == 0).collect();
        if !reservoir.rows.is_empty() {
            let cb = model.store.get_mut(cb_id);
            for &k in &dead {
                let src = &reservoir.rows[rng.random_range(0..reservoir.rows.len())];
                cb.row_mut(k).copy_from_slice(src);
            }
            adam.reset_rows(cb_id, d, &dead);
        }

        let val_loss = mean_loss(&model, val)?;
        let stats = ManifoldEpoch {
            epoch,
            lr: adam.lr,
            train_loss: loss_sum / train.len() as f64,
            val_loss,
            dead_codes: dead.len(),
        };
        log::info!(
            "manifold epoch {epoch}: train {:.5} val {:.5} dead codes {}",
            stats.train_loss,
            stats.val_loss,
            stats.dead_codes
        );
        history.epochs.push(stats);
        let improved = best.as_ref().is_none_or(|(b, _)| val_loss < *b);
        if improved {
            best = Some((val_loss, model.store.clone()));
            history.best_epoch = epoch;
        }
        if let Some(path) = &cfg.checkpoint {
            let mut last = path.clone().into_os_string();
            last.push(".last");
            model.save(std::path::Path::new(&last))?;
            if improved {
                model.save(path)?;
            }
        }
    }

    if let Some((_, store)) = best {
        model.store = store;
    }
    model.usage = usage_of(&model, &train)?;
    if let Some(path) = &cfg.checkpoint {
        model.save(path)?;
    }
    Ok((model, history))
}
