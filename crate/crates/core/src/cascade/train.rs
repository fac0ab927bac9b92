use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{cascade_graph, loss_imp, loss_imp_graph, CascadeModel, FrozenRefs, Variant};
use crate::config::Schedule;
use crate::corpus::UtterancePair;
use crate::error::{config_err, Error, Result};
use crate::manifold::{mel_constant, ManifoldModel, QuantMode};
use crate::numerics::{adam_step, lr_linear_decay, mse_loss, AdamState, Gradients, Graph, ParamStore, Tensor};
use crate::seed::derive;
use crate::swer::{EmotionDistribution, SwerModel};

#[derive(Clone, Debug)]
pub struct CascadeTrainConfig {
    pub schedule: Schedule,
    /// Weight of the implicit-control loss.
    pub lambda: f64,
    pub detach_syn: bool,
    pub variant: Variant,
    pub seed: u64,
    pub checkpoint: Option<PathBuf>,
}

impl Default for CascadeTrainConfig {
    fn default() -> Self {
        CascadeTrainConfig {
            schedule: Schedule::default(),
            lambda: 0.1,
            detach_syn: false,
            variant: Variant::Casein,
            seed: 0,
            checkpoint: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CascadeEpoch {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_syn: f64,
    pub train_imp: f64,
    /// Inference-mode synthesis loss on the validation split.
    pub val_syn: f64,
    /// Quantised-to-quantised distance on the training split (casein only).
    pub literal_imp: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CascadeHistory {
    pub initial_literal_imp: Option<f64>,
    pub final_literal_imp: Option<f64>,
    pub epochs: Vec<CascadeEpoch>,
    pub best_epoch: usize,
}

/// A training pair with its frozen-path targets computed once.
pub struct Prepared<'a> {
    pub pair: &'a UtterancePair,
    /// Quantised manifold codes of the emotional mel.
    pub z_d: Tensor<f32>,
    pub dist: EmotionDistribution,
}

pub fn prepare<'a>(pairs: &'a [UtterancePair], manifold: &ManifoldModel, swer: &SwerModel) -> Result<Vec<Prepared<'a>>> {
    pairs
        .iter()
        .map(|pair| {
            let seg = pair.phonemes.boundaries();
            Ok(Prepared {
                z_d: manifold.encode(&pair.mel_emotional, &seg)?.quantized,
                dist: swer.predict_distribution(&pair.mel_emotional, &seg)?,
                pair,
            })
        })
        .collect()
}

/// Mean `‖quantize(f_gen(D)) − z_d‖` over prepared pairs.
pub fn literal_imp(model: &CascadeModel, data: &[Prepared]) -> Result<f64> {
    let mut total = 0.0;
    for p in data {
        total += loss_imp(&model.gen_manifold(&p.dist)?.latents.quantized, &p.z_d)?;
    }
    Ok(total / data.len().max(1) as f64)
}

/// Mean inference-mode synthesis loss against the emotional mels.
pub fn mean_syn_loss(model: &CascadeModel, data: &[Prepared]) -> Result<f64> {
    let mut total = 0.0;
    for p in data {
        let mel = model.render(&p.pair.phonemes, p.pair.speaker, &p.dist)?;
        let mut g = Graph::<f32>::new(&model.store);
        let a = mel_constant(&mut g, &mel)?;
        let b = mel_constant(&mut g, &p.pair.mel_emotional)?;
        let l = mse_loss(&mut g, a, b)?;
        total += g.scalar(l) as f64;
    }
    Ok(total / data.len().max(1) as f64)
}

/// Trains the cascade networks against frozen manifold and SWER models.
/// Returns the model with the lowest validation synthesis loss.
pub fn train_casein(
    train: &[UtterancePair],
    val: &[UtterancePair],
    manifold: &ManifoldModel,
    swer: &SwerModel,
    cfg: &CascadeTrainConfig,
) -> Result<(CascadeModel, CascadeHistory)> {
    cfg.schedule.validate()?;
    let dims = manifold.dims;
    if swer.dims.emotions != dims.emotions || swer.dims.channels != dims.channels {
        config_err!("swer and manifold checkpoints disagree on emotions or channels");
    }
    if train.is_empty() {
        config_err!("no cascade training pairs");
    }
    let frozen = FrozenRefs {
        codebook: manifold.codebook().clone(),
        speakers: manifold.speaker_table().clone(),
        manifold_fingerprint: manifold.store.fingerprint(),
        swer_fingerprint: swer.store.fingerprint(),
    };
    let train = prepare(train, manifold, swer)?;
    let val = prepare(val, manifold, swer)?;
    let val = if val.is_empty() { &train } else { &val };
    let mut model = CascadeModel::new(dims, cfg.variant, cfg.lambda, cfg.detach_syn, frozen, derive(cfg.seed, &[0]))?;
    let casein = cfg.variant == Variant::Casein;
    let literal = |m: &CascadeModel| -> Result<Option<f64>> {
        if casein {
            literal_imp(m, &train).map(Some)
        } else {
            Ok(None)
        }
    };
    let mut history = CascadeHistory {
        initial_literal_imp: literal(&model)?,
        ..Default::default()
    };
    let mut adam = AdamState::new(&model.store, cfg.schedule.adam);
    let mut best: Option<(f64, ParamStore<f32>)> = None;
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 0..cfg.schedule.epochs {
        adam.lr = lr_linear_decay(epoch, cfg.schedule.epochs, cfg.schedule.adam.lr);
        let mut rng = ChaCha8Rng::seed_from_u64(derive(cfg.seed, &[1, epoch as u64]));
        order.shuffle(&mut rng);
        let (mut sum, mut syn_sum, mut imp_sum) = (0.0, 0.0, 0.0);
        for batch in order.chunks(cfg.schedule.batch_size) {
            let mut grads = Gradients::new(model.store.len());
            for &i in batch {
                let p = &train[i];
                let mut g = Graph::new(&model.store);
                let r = cascade_graph(
                    &mut g,
                    &model.nets,
                    &model.frozen,
                    &p.dist,
                    &p.pair.phonemes,
                    p.pair.speaker,
                    &QuantMode::Nearest,
                    cfg.detach_syn,
                )?;
                let target = mel_constant(&mut g, &p.pair.mel_emotional)?;
                let syn = mse_loss(&mut g, r.mel, target)?;
                let loss = if casein {
                    let imp = loss_imp_graph(&mut g, r.pre, &p.z_d)?;
                    imp_sum += g.scalar(imp) as f64;
                    let imp = g.scale(imp, cfg.lambda);
                    g.add(syn, imp)?
                } else {
                    syn
                };
                let l = g.scalar(loss) as f64;
                if !l.is_finite() {
                    return Err(Error::Divergence(format!("cascade loss {l} at epoch {epoch}, utterance {}", p.pair.id)));
                }
                sum += l;
                syn_sum += g.scalar(syn) as f64;
                grads.merge(&g.backward(loss)?.params);
            }
            grads.scale(1.0 / batch.len() as f32);
            adam_step(&mut model.store, &grads, &mut adam)?;
        }
        let m = train.len() as f64;
        let stats = CascadeEpoch {
            epoch,
            lr: adam.lr,
            train_loss: sum / m,
            train_syn: syn_sum / m,
            train_imp: imp_sum / m,
            val_syn: mean_syn_loss(&model, val)?,
            literal_imp: literal(&model)?,
        };
        log::info!(
            "cascade epoch {epoch}: train {:.5} (syn {:.5}, imp {:.5}) val syn {:.5} literal imp {:?}",
            stats.train_loss,
            stats.train_syn,
            stats.train_imp,
            stats.val_syn,
            stats.literal_imp
        );
        let improved = best.as_ref().is_none_or(|(b, _)| stats.val_syn < *b);
        if improved {
            best = Some((stats.val_syn, model.store.clone()));
            history.best_epoch = epoch;
            if let Some(path) = &cfg.checkpoint {
                model.save(path)?;
            }
        }
        history.epochs.push(stats);
    }
    if let Some((_, store)) = best {
        model.store = store;
    }
    history.final_literal_imp = literal(&model)?;
    if let Some(path) = &cfg.checkpoint {
        model.save(path)?;
    }
    Ok((model, history))
}
