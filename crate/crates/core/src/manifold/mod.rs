//! Emotion manifold: a vector-quantised autoencoder that reconstructs
//! emotional spectrograms from per-phoneme codes plus linguistic and speaker
//! conditions.

pub mod quantize;
pub mod train;

pub use quantize::{assign, nearest, quantize, quantize_graph, vq_losses, GraphQuant, ManifoldLatents, QuantMode};
pub use train::{codebook_usage, reconstruction_loss, train_manifold, ManifoldHistory, ManifoldTrainConfig};

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::ModelDims;
use crate::corpus::MelSpectrogram;
use crate::error::{config_err, Result};
use crate::numerics::params::uniform_tensor;
use crate::numerics::{
    Container, Conv1d, Embedding, FrameDecoder, Graph, Linear, ParamId, ParamStore, Real, Segments,
    Tensor, Var,
};

/// Name under which the codebook is stored in checkpoints.
pub const CODEBOOK: &str = "codebook.vectors";

/// Convolutional encoder producing one continuous latent row per phoneme.
#[derive(Clone, Debug)]
pub struct PredM {
    pub conv1: Conv1d,
    pub conv2: Conv1d,
    pub dropout: f64,
    pub slope: f64,
}

impl PredM {
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, mel: Var, segments: &Segments) -> Result<Var> {
        let x = self.conv1.forward(g, mel)?;
        let x = g.leaky_relu(x, self.slope);
        let x = g.dropout(x, self.dropout)?;
        let x = self.conv2.forward(g, x)?;
        g.segment_mean(x, segments)
    }
}

/// Linguistic feature extractor applied to the neutral spectrogram.
#[derive(Clone, Debug)]
pub struct Extractor {
    pub conv1: Conv1d,
    pub conv2: Conv1d,
    pub slope: f64,
}

impl Extractor {
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, mel: Var, segments: &Segments) -> Result<Var> {
        let x = self.conv1.forward(g, mel)?;
        let x = g.leaky_relu(x, self.slope);
        let x = self.conv2.forward(g, x)?;
        g.segment_mean(x, segments)
    }
}

/// Fuses codes with the condition, then renders frames.
#[derive(Clone, Debug)]
pub struct VqDecoder {
    pub fuse: Linear,
    pub frames: FrameDecoder,
}

impl VqDecoder {
    /// `codes` is `t × d`, `linguistic` and `speaker` are `t × h`.
    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<T>,
        codes: Var,
        linguistic: Var,
        speaker: Var,
        durations: &[usize],
    ) -> Result<Var> {
        let x = g.concat_cols(&[codes, linguistic, speaker])?;
        let x = self.fuse.forward(g, x)?;
        self.frames.forward(g, x, durations)
    }
}

/// Parameter handles of every manifold network.
#[derive(Clone, Debug)]
pub struct ManifoldNets {
    pub pred_m: PredM,
    pub extractor: Extractor,
    pub speakers: Embedding,
    pub decoder: VqDecoder,
    pub codebook: ParamId,
}

impl ManifoldNets {
    pub fn new(store: &mut ParamStore<f32>, dims: &ModelDims, rng: &mut ChaCha8Rng) -> Result<Self> {
        dims.validate()?;
        let ModelDims {
            channels: c,
            hidden: h,
            latent: d,
            kernel: k,
            ..
        } = *dims;
        let pred_m = PredM {
            conv1: Conv1d::new(store, "pred_m.conv1", c, h, k, rng)?,
            conv2: Conv1d::new(store, "pred_m.conv2", h, d, k, rng)?,
            dropout: dims.dropout,
            slope: dims.slope,
        };
        let extractor = Extractor {
            conv1: Conv1d::new(store, "extractor.conv1", c, h, k, rng)?,
            conv2: Conv1d::new(store, "extractor.conv2", h, h, k, rng)?,
            slope: dims.slope,
        };
        let speakers = Embedding::new(store, "speakers", dims.speakers, h, rng)?;
        let decoder = VqDecoder {
            fuse: Linear::new(store, "decoder.fuse", d + 2 * h, h, rng)?,
            frames: FrameDecoder::new(store, "decoder", h, c, dims.blocks, k, rng)?,
        };
        let bound = 1.0 / (d as f64).sqrt();
        let codebook = store.add(CODEBOOK, uniform_tensor(vec![dims.codes, d], bound, rng))?;
        Ok(ManifoldNets {
            pred_m,
            extractor,
            speakers,
            decoder,
            codebook,
        })
    }

    /// Speaker embedding broadcast to `t` rows.
    pub fn speaker_rows<T: Real>(&self, g: &mut Graph<T>, speaker: usize, t: usize) -> Result<Var> {
        let table = g.param(self.speakers.table);
        g.gather(table, &vec![speaker; t])
    }
}

/// Tensors needed to run one reconstruction.
pub struct ReconInput<'a> {
    pub emotional: &'a MelSpectrogram,
    pub neutral: &'a MelSpectrogram,
    pub segments: &'a Segments,
    pub speaker: usize,
}

/// Graph nodes produced by one reconstruction.
pub struct ReconGraph {
    pub loss: Var,
    pub reconstruction: Var,
    pub pre: Var,
    pub indices: Vec<usize>,
}

/// Copies a spectrogram into the graph as a constant.
pub fn mel_constant<T: Real>(g: &mut Graph<T>, mel: &MelSpectrogram) -> Result<Var> {
    let data = mel.data().iter().map(|&x| T::lit(x as f64)).collect();
    g.constant(mel.frames(), mel.channels(), data)
}

/// Reconstruction loss of the emotional mel from codes, linguistic features
/// and speaker embedding, plus the quantiser terms.
pub fn reconstruction_graph<T: Real>(
    g: &mut Graph<T>,
    nets: &ManifoldNets,
    emotional: Var,
    neutral: Var,
    segments: &Segments,
    speaker: usize,
    mode: &QuantMode<T>,
    beta: f64,
) -> Result<ReconGraph> {
    if g.shape(emotional) != g.shape(neutral) {
        config_err!("neutral and emotional mels differ in shape");
    }
    let pre = nets.pred_m.forward(g, emotional, segments)?;
    let cb = g.param(nets.codebook);
    let q = quantize_graph(g, pre, cb, mode)?;
    let ling = nets.extractor.forward(g, neutral, segments)?;
    let spk = nets.speaker_rows(g, speaker, segments.len())?;
    let rec = nets
        .decoder
        .forward(g, q.codes_st, ling, spk, &segments.durations())?;
    let target = g.detach(emotional);
    let mse = crate::numerics::mse_loss(g, rec, target)?;
    let vq = vq_losses(g, pre, &q, beta)?;
    let loss = g.add(mse, vq)?;
    Ok(ReconGraph {
        loss,
        reconstruction: rec,
        pre,
        indices: q.indices,
    })
}

/// Per-phoneme linguistic and speaker condition.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditionBundle {
    pub linguistic: Tensor<f32>,
    /// Single `h`-wide speaker row.
    pub speaker: Tensor<f32>,
}

/// Trained manifold networks with their parameters.
#[derive(Clone, Debug)]
pub struct ManifoldModel {
    pub dims: ModelDims,
    pub beta: f64,
    pub store: ParamStore<f32>,
    pub nets: ManifoldNets,
    /// Assignment counts per code over the last full pass of the training set.
    pub usage: Vec<u64>,
}

impl ManifoldModel {
    pub fn new(dims: ModelDims, beta: f64, seed: u64) -> Result<Self> {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let nets = ManifoldNets::new(&mut store, &dims, &mut rng)?;
        Ok(ManifoldModel {
            usage: vec![0; dims.codes],
            dims,
            beta,
            store,
            nets,
        })
    }

    pub fn codebook(&self) -> &Tensor<f32> {
        self.store.get(self.nets.codebook)
    }

    pub fn speaker_table(&self) -> &Tensor<f32> {
        self.store.get(self.nets.speakers.table)
    }

    fn check_mel(&self, mel: &MelSpectrogram, segments: &Segments) -> Result<()> {
        if mel.channels() != self.dims.channels {
            config_err!("mel has {} channels, model expects {}", mel.channels(), self.dims.channels);
        }
        if segments.total() != mel.frames() {
            config_err!("boundaries cover {} frames, mel has {}", segments.total(), mel.frames());
        }
        Ok(())
    }

    /// Continuous per-phoneme latents of an emotional mel (inference mode).
    pub fn pred_m(&self, mel: &MelSpectrogram, segments: &Segments) -> Result<Tensor<f32>> {
        self.check_mel(mel, segments)?;
        let mut g = Graph::new(&self.store);
        let x = mel_constant(&mut g, mel)?;
        let z = self.nets.pred_m.forward(&mut g, x, segments)?;
        Tensor::new(vec![segments.len(), self.dims.latent], g.value(z).to_vec())
    }

    /// Pred M followed by nearest-code assignment.
    pub fn encode(&self, mel: &MelSpectrogram, segments: &Segments) -> Result<ManifoldLatents> {
        quantize(&self.pred_m(mel, segments)?, self.codebook())
    }

    pub fn extract_linguistic(&self, mel: &MelSpectrogram, segments: &Segments) -> Result<Tensor<f32>> {
        self.check_mel(mel, segments)?;
        let mut g = Graph::new(&self.store);
        let x = mel_constant(&mut g, mel)?;
        let z = self.nets.extractor.forward(&mut g, x, segments)?;
        Tensor::new(vec![segments.len(), self.dims.hidden], g.value(z).to_vec())
    }

    pub fn condition(&self, neutral: &MelSpectrogram, segments: &Segments, speaker: usize) -> Result<ConditionBundle> {
        if speaker >= self.dims.speakers {
            config_err!("speaker {speaker} out of range");
        }
        Ok(ConditionBundle {
            linguistic: self.extract_linguistic(neutral, segments)?,
            speaker: Tensor::new(vec![1, self.dims.hidden], self.speaker_table().row(speaker).to_vec())?,
        })
    }

    /// Renders a spectrogram from quantised codes and a condition.
    pub fn vq_decode(
        &self,
        latents: &ManifoldLatents,
        condition: &ConditionBundle,
        durations: &[usize],
    ) -> Result<MelSpectrogram> {
        let t = latents.len();
        if condition.linguistic.rows() != t || durations.len() != t {
            config_err!(
                "{t} latents, {} linguistic rows, {} durations",
                condition.linguistic.rows(),
                durations.len()
            );
        }
        let (d, h) = (self.dims.latent, self.dims.hidden);
        let mut g = Graph::new(&self.store);
        let z = g.constant(t, d, latents.quantized.data().to_vec())?;
        let l = g.constant(t, h, condition.linguistic.data().to_vec())?;
        let spk = condition.speaker.data().repeat(t);
        let s = g.constant(t, h, spk)?;
        let out = self.nets.decoder.forward(&mut g, z, l, s, durations)?;
        MelSpectrogram::new(g.rows(out), self.dims.channels, g.value(out).to_vec())
    }

    /// Inference-mode loss on one pair, accumulated in `f64`.
    pub fn loss(&self, input: &ReconInput) -> Result<f64> {
        self.check_mel(input.emotional, input.segments)?;
        let mut g = Graph::new(&self.store);
        let e = mel_constant(&mut g, input.emotional)?;
        let n = mel_constant(&mut g, input.neutral)?;
        let r = reconstruction_graph(
            &mut g,
            &self.nets,
            e,
            n,
            input.segments,
            input.speaker,
            &QuantMode::Nearest,
            self.beta,
        )?;
        Ok(g.scalar(r.loss) as f64)
    }

    pub fn to_container(&self) -> Container {
        let mut c = Container::new();
        c.set_meta("kind", "manifold");
        let mut meta = Vec::new();
        self.dims.write("dims", &mut meta);
        for (k, v) in meta {
            c.set_meta(k, v);
        }
        c.set_meta("beta", self.beta);
        c.set_meta("fingerprint", self.store.fingerprint());
        c.push_store(&self.store);
        let usage = self.usage.iter().map(|&u| u as f32).collect();
        c.push_tensor("codebook.usage", Tensor::new(vec![self.usage.len()], usage).expect("usage shape"));
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        c.expect_kind("manifold")?;
        let dims = ModelDims::read("dims", |k| c.meta(k).map(str::to_string))?;
        let beta = crate::kv::parse_value("beta", c.require("beta")?)?;
        let mut m = ManifoldModel::new(dims, beta, 0)?;
        c.load_store(&mut m.store)?;
        if let Some(u) = c.tensor("codebook.usage") {
            m.usage = u.data().iter().map(|&x| x as u64).collect();
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&Container::load(path)?)
    }
}
