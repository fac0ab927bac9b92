//! Cascade: maps an explicit emotion distribution onto the frozen emotion
//! manifold and synthesises spectrograms from phonemes plus the adapted codes.

mod curves;
pub mod train;

pub use curves::{interpolate, CurveSpec};
pub use train::{literal_imp, mean_syn_loss, prepare, train_casein, CascadeEpoch, CascadeHistory, CascadeTrainConfig};

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::ModelDims;
use crate::corpus::{MelSpectrogram, PhonemeSequence};
use crate::error::{config_err, Error, Result};
use crate::manifold::{quantize, quantize_graph, ManifoldLatents, QuantMode};
use crate::numerics::{Container, Conv1d, Embedding, FrameDecoder, Graph, Linear, ParamStore, Real, Tensor, Var};
use crate::swer::EmotionDistribution;

/// Which path turns the distribution into adapter input.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    /// f_gen, nearest code, f_ada.
    Casein,
    /// A linear projection of the distribution straight into f_ada.
    ExplicitOnly,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Casein => "casein",
            Variant::ExplicitOnly => "explicit-only",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "casein" => Ok(Variant::Casein),
            "explicit-only" => Ok(Variant::ExplicitOnly),
            _ => Err(Error::Config(format!("unknown cascade variant {s}"))),
        }
    }
}

/// Two convolutions with a leaky ReLU between them, applied along the phoneme axis.
#[derive(Clone, Debug)]
pub struct ConvPair {
    pub conv1: Conv1d,
    pub conv2: Conv1d,
    pub slope: f64,
}

impl ConvPair {
    fn new(
        store: &mut ParamStore<f32>,
        name: &str,
        widths: (usize, usize, usize),
        dims: &ModelDims,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        Ok(ConvPair {
            conv1: Conv1d::new(store, &format!("{name}.conv1"), widths.0, widths.1, dims.kernel, rng)?,
            conv2: Conv1d::new(store, &format!("{name}.conv2"), widths.1, widths.2, dims.kernel, rng)?,
            slope: dims.slope,
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let x = self.conv1.forward(g, x)?;
        let x = g.leaky_relu(x, self.slope);
        self.conv2.forward(g, x)
    }
}

/// Phoneme embedding plus injected rows, rendered to frames.
#[derive(Clone, Debug)]
pub struct Synthesizer {
    pub phonemes: Embedding,
    pub frames: FrameDecoder,
}

/// Parameter handles of the trainable cascade networks.
#[derive(Clone, Debug)]
pub struct CascadeNets {
    pub variant: Variant,
    /// `n → h → d`; present for [`Variant::Casein`].
    pub f_gen: Option<ConvPair>,
    /// `n → d`; present for [`Variant::ExplicitOnly`].
    pub explicit: Option<Linear>,
    /// `d → h → h`.
    pub f_ada: ConvPair,
    pub f_syn: Synthesizer,
}

impl CascadeNets {
    pub fn new(store: &mut ParamStore<f32>, dims: &ModelDims, variant: Variant, rng: &mut ChaCha8Rng) -> Result<Self> {
        dims.validate()?;
        let (n, h, d) = (dims.emotions, dims.hidden, dims.latent);
        let (f_gen, explicit) = match variant {
            Variant::Casein => (Some(ConvPair::new(store, "f_gen", (n, h, d), dims, rng)?), None),
            Variant::ExplicitOnly => (None, Some(Linear::new(store, "explicit", n, d, rng)?)),
        };
        let f_ada = ConvPair::new(store, "f_ada", (d, h, h), dims, rng)?;
        let f_syn = Synthesizer {
            phonemes: Embedding::new(store, "f_syn.phonemes", dims.vocab, h, rng)?,
            frames: FrameDecoder::new(store, "f_syn", h, dims.channels, dims.blocks, dims.kernel, rng)?,
        };
        Ok(CascadeNets {
            variant,
            f_gen,
            explicit,
            f_ada,
            f_syn,
        })
    }

    /// Adapter input computed straight from the distribution (no quantiser).
    pub fn explicit_rows<T: Real>(&self, g: &mut Graph<T>, dist: Var) -> Result<Var> {
        match &self.explicit {
            Some(l) => l.forward(g, dist),
            None => config_err!("explicit projection only exists in the explicit-only variant"),
        }
    }

    pub fn gen<T: Real>(&self, g: &mut Graph<T>, dist: Var) -> Result<Var> {
        match &self.f_gen {
            Some(f) => f.forward(g, dist),
            None => config_err!("f_gen only exists in the casein variant"),
        }
    }

    /// `ids` embedded, plus adapter output of `z` and the speaker row, rendered to frames.
    pub fn synthesize<T: Real>(
        &self,
        g: &mut Graph<T>,
        phonemes: &PhonemeSequence,
        speaker_row: &[f32],
        z: Var,
    ) -> Result<Var> {
        let t = phonemes.len();
        if g.rows(z) != t {
            config_err!("{} latent rows for {t} phonemes", g.rows(z));
        }
        let emb = self.f_syn.phonemes.forward(g, phonemes.ids())?;
        let ada = self.f_ada.forward(g, z)?;
        let x = g.add(emb, ada)?;
        let spk = g.constant(1, speaker_row.len(), speaker_row.iter().map(|&v| T::lit(v as f64)).collect())?;
        let x = g.add_row(x, spk)?;
        self.f_syn.frames.forward(g, x, phonemes.durations())
    }
}

/// Frozen tensors borrowed from the manifold checkpoint.
#[derive(Clone, Debug, PartialEq)]
pub struct FrozenRefs {
    pub codebook: Tensor<f32>,
    pub speakers: Tensor<f32>,
    /// Parameter fingerprints of the upstream checkpoints.
    pub manifold_fingerprint: String,
    pub swer_fingerprint: String,
}

/// Graph nodes of one cascade forward pass.
pub struct CascadeGraph {
    pub mel: Var,
    /// Continuous f_gen output (casein) or explicit projection.
    pub pre: Var,
    pub indices: Vec<usize>,
}

/// Builds distribution → (f_gen → codes | projection) → synthesis.
/// `detach_syn` stops synthesis gradients at the codes.
#[allow(clippy::too_many_arguments)]
pub fn cascade_graph<T: Real>(
    g: &mut Graph<T>,
    nets: &CascadeNets,
    frozen: &FrozenRefs,
    dist: &EmotionDistribution,
    phonemes: &PhonemeSequence,
    speaker: usize,
    mode: &QuantMode<T>,
    detach_syn: bool,
) -> Result<CascadeGraph> {
    if dist.phonemes() != phonemes.len() {
        config_err!("distribution has {} rows for {} phonemes", dist.phonemes(), phonemes.len());
    }
    if speaker >= frozen.speakers.rows() {
        config_err!("speaker {speaker} out of range");
    }
    let t = phonemes.len();
    let dv = g.constant(t, dist.emotions(), dist.data().iter().map(|&v| T::lit(v as f64)).collect())?;
    let (pre, z, indices) = match nets.variant {
        Variant::Casein => {
            let pre = nets.gen(g, dv)?;
            let cb = &frozen.codebook;
            let cb = g.constant(cb.rows(), cb.cols(), cb.data().iter().map(|&v| T::lit(v as f64)).collect())?;
            let q = quantize_graph(g, pre, cb, mode)?;
            let z = if detach_syn { g.detach(q.codes_st) } else { q.codes_st };
            (pre, z, q.indices)
        }
        Variant::ExplicitOnly => {
            let pre = nets.explicit_rows(g, dv)?;
            (pre, pre, Vec::new())
        }
    };
    let mel = nets.synthesize(g, phonemes, frozen.speakers.row(speaker), z)?;
    Ok(CascadeGraph { mel, pre, indices })
}

/// `(1/t) Σᵢ ‖preᵢ − targetᵢ‖₂` over matching rows.
pub fn loss_imp(pre_gen: &Tensor<f32>, target: &Tensor<f32>) -> Result<f64> {
    if pre_gen.shape() != target.shape() || pre_gen.rows() == 0 {
        config_err!("loss_imp shapes {:?} and {:?}", pre_gen.shape(), target.shape());
    }
    let d = pre_gen.cols();
    let total: f64 = pre_gen
        .data()
        .chunks(d)
        .zip(target.data().chunks(d))
        .map(|(a, b)| {
            a.iter()
                .zip(b)
                .map(|(x, y)| (*x as f64 - *y as f64).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .sum();
    Ok(total / pre_gen.rows() as f64)
}

/// Graph form of [`loss_imp`] with a constant target.
pub fn loss_imp_graph<T: Real>(g: &mut Graph<T>, pre: Var, target: &Tensor<f32>) -> Result<Var> {
    let (t, d) = g.shape(pre);
    if target.shape() != [t, d] {
        config_err!("loss_imp target {:?} for {t} × {d} rows", target.shape());
    }
    let z = g.constant(t, d, target.data().iter().map(|&v| T::lit(v as f64)).collect())?;
    let diff = g.sub(pre, z)?;
    g.row_norm_mean(diff)
}

/// Output of f_gen followed by nearest-code assignment.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratedManifold {
    pub pre_gen: Tensor<f32>,
    pub latents: ManifoldLatents,
}

/// Trained cascade with the frozen references it needs for inference.
#[derive(Clone, Debug)]
pub struct CascadeModel {
    pub dims: ModelDims,
    pub lambda: f64,
    pub detach_syn: bool,
    pub store: ParamStore<f32>,
    pub nets: CascadeNets,
    pub frozen: FrozenRefs,
}

impl CascadeModel {
    pub fn new(dims: ModelDims, variant: Variant, lambda: f64, detach_syn: bool, frozen: FrozenRefs, seed: u64) -> Result<Self> {
        if frozen.codebook.shape() != [dims.codes, dims.latent] || frozen.speakers.cols() != dims.hidden {
            config_err!(
                "frozen codebook {:?} and speaker table {:?} do not fit the cascade dims",
                frozen.codebook.shape(),
                frozen.speakers.shape()
            );
        }
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let nets = CascadeNets::new(&mut store, &dims, variant, &mut rng)?;
        Ok(CascadeModel {
            dims,
            lambda,
            detach_syn,
            store,
            nets,
            frozen,
        })
    }

    pub fn variant(&self) -> Variant {
        self.nets.variant
    }

    fn dist_constant(&self, g: &mut Graph<f32>, dist: &EmotionDistribution) -> Result<Var> {
        if dist.emotions() != self.dims.emotions {
            config_err!("distribution has {} emotions, model expects {}", dist.emotions(), self.dims.emotions);
        }
        g.constant(dist.phonemes(), dist.emotions(), dist.data().to_vec())
    }

    /// f_gen on the distribution, then nearest codebook rows.
    pub fn gen_manifold(&self, dist: &EmotionDistribution) -> Result<GeneratedManifold> {
        let mut g = Graph::new(&self.store);
        let dv = self.dist_constant(&mut g, dist)?;
        let pre = self.nets.gen(&mut g, dv)?;
        let pre_gen = Tensor::new(vec![dist.phonemes(), self.dims.latent], g.value(pre).to_vec())?;
        Ok(GeneratedManifold {
            latents: quantize(&pre_gen, &self.frozen.codebook)?,
            pre_gen,
        })
    }

    /// Adapter input rows for either variant: quantised codes or the explicit projection.
    pub fn latent_rows(&self, dist: &EmotionDistribution) -> Result<Tensor<f32>> {
        match self.variant() {
            Variant::Casein => Ok(self.gen_manifold(dist)?.latents.quantized),
            Variant::ExplicitOnly => {
                let mut g = Graph::new(&self.store);
                let dv = self.dist_constant(&mut g, dist)?;
                let z = self.nets.explicit_rows(&mut g, dv)?;
                Tensor::new(vec![dist.phonemes(), self.dims.latent], g.value(z).to_vec())
            }
        }
    }

    /// Spectrogram from phonemes, speaker and `t × d` latent rows.
    pub fn synthesize(&self, phonemes: &PhonemeSequence, speaker: usize, z: &Tensor<f32>) -> Result<MelSpectrogram> {
        if speaker >= self.frozen.speakers.rows() {
            config_err!("speaker {speaker} out of range");
        }
        if z.shape() != [phonemes.len(), self.dims.latent] {
            config_err!("latents {:?} for {} phonemes", z.shape(), phonemes.len());
        }
        if let Some(&p) = phonemes.ids().iter().find(|&&p| p >= self.dims.vocab) {
            config_err!("phoneme {p} outside the vocabulary");
        }
        let mut g = Graph::new(&self.store);
        let zv = g.constant(z.rows(), z.cols(), z.data().to_vec())?;
        let mel = self.nets.synthesize(&mut g, phonemes, self.frozen.speakers.row(speaker), zv)?;
        MelSpectrogram::new(g.rows(mel), self.dims.channels, g.value(mel).to_vec())
    }

    /// Distribution to spectrogram through the model's variant.
    pub fn render(&self, phonemes: &PhonemeSequence, speaker: usize, dist: &EmotionDistribution) -> Result<MelSpectrogram> {
        if dist.phonemes() != phonemes.len() {
            config_err!("distribution has {} rows for {} phonemes", dist.phonemes(), phonemes.len());
        }
        self.synthesize(phonemes, speaker, &self.latent_rows(dist)?)
    }

    /// Evaluates the curves into a distribution, then renders it.
    pub fn infer_from_curves(
        &self,
        phonemes: &PhonemeSequence,
        speaker: usize,
        curves: &CurveSpec,
        emotions: &[String],
    ) -> Result<(EmotionDistribution, MelSpectrogram)> {
        let dist = curves.distribution(emotions, phonemes.len())?;
        let mel = self.render(phonemes, speaker, &dist)?;
        Ok((dist, mel))
    }

    pub fn to_container(&self) -> Container {
        let mut c = Container::new();
        c.set_meta("kind", "cascade");
        let mut meta = Vec::new();
        self.dims.write("dims", &mut meta);
        for (k, v) in meta {
            c.set_meta(k, v);
        }
        c.set_meta("variant", self.variant());
        c.set_meta("lambda", self.lambda);
        c.set_meta("detach_syn", self.detach_syn);
        c.set_meta("fingerprint", self.store.fingerprint());
        c.set_meta("frozen.manifold", &self.frozen.manifold_fingerprint);
        c.set_meta("frozen.swer", &self.frozen.swer_fingerprint);
        c.push_store(&self.store);
        c.push_tensor("frozen.codebook", self.frozen.codebook.clone());
        c.push_tensor("frozen.speakers", self.frozen.speakers.clone());
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        use crate::kv::parse_value;
        c.expect_kind("cascade")?;
        let dims = ModelDims::read("dims", |k| c.meta(k).map(str::to_string))?;
        let tensor = |name: &str| {
            c.tensor(name)
                .cloned()
                .ok_or_else(|| Error::Format(format!("checkpoint lacks tensor {name}")))
        };
        let frozen = FrozenRefs {
            codebook: tensor("frozen.codebook")?,
            speakers: tensor("frozen.speakers")?,
            manifold_fingerprint: c.require("frozen.manifold")?.to_string(),
            swer_fingerprint: c.require("frozen.swer")?.to_string(),
        };
        let mut m = CascadeModel::new(
            dims,
            c.require("variant")?.parse()?,
            parse_value("lambda", c.require("lambda")?)?,
            parse_value("detach_syn", c.require("detach_syn")?)?,
            frozen,
            0,
        )?;
        c.load_store(&mut m.store)?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&Container::load(path)?)
    }
}

#[cfg(test)]
mod tests;
