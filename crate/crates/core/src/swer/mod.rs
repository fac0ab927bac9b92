//! Sliding-window emotion recogniser: per-phoneme emotion probabilities
//! from windows spanning neighbouring phonemes.

mod train;

pub use train::{train_swer, window_accuracy, window_metrics, SwerEpoch, SwerHistory, SwerTrainConfig};

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::ModelDims;
use crate::corpus::MelSpectrogram;
use crate::error::{config_err, Result};
use crate::manifold::mel_constant;
use crate::numerics::{sigmoid, Container, Conv1d, Graph, Linear, ParamStore, Real, Segments, Tensor, Var};

/// Frames of phonemes `first..=last` around phoneme `center`.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowedSlice {
    pub center: usize,
    pub first: usize,
    pub last: usize,
    /// Frame span `[start, end)`.
    pub start: usize,
    pub end: usize,
    pub frames: MelSpectrogram,
}

/// Phoneme range and frame span of every window, clamped at the edges.
pub fn window_spans(boundaries: &Segments, radius: usize) -> Vec<(usize, usize, usize, usize)> {
    let t = boundaries.len();
    (0..t)
        .map(|i| {
            let first = i.saturating_sub(radius);
            let last = (i + radius).min(t - 1);
            (first, last, boundaries.get(first).0, boundaries.get(last).1)
        })
        .collect()
}

pub fn slice_windows(mel: &MelSpectrogram, boundaries: &Segments, radius: usize) -> Result<Vec<WindowedSlice>> {
    if boundaries.total() != mel.frames() {
        config_err!("boundaries cover {} frames, mel has {}", boundaries.total(), mel.frames());
    }
    let c = mel.channels();
    window_spans(boundaries, radius)
        .into_iter()
        .enumerate()
        .map(|(center, (first, last, start, end))| {
            Ok(WindowedSlice {
                center,
                first,
                last,
                start,
                end,
                frames: MelSpectrogram::new(end - start, c, mel.data()[start * c..end * c].to_vec())?,
            })
        })
        .collect()
}

/// Convolutional window classifier emitting one logit per emotion.
#[derive(Clone, Debug)]
pub struct PredD {
    pub conv1: Conv1d,
    pub conv2: Conv1d,
    pub out: Linear,
    pub dropout: f64,
    pub slope: f64,
}

impl PredD {
    pub fn new(store: &mut ParamStore<f32>, dims: &ModelDims, rng: &mut ChaCha8Rng) -> Result<Self> {
        dims.validate()?;
        let out = Linear::new(store, "pred_d.out", dims.hidden, dims.emotions, rng)?;
        out.zero(store);
        Ok(PredD {
            conv1: Conv1d::new(store, "pred_d.conv1", dims.channels, dims.hidden, dims.kernel, rng)?,
            conv2: Conv1d::new(store, "pred_d.conv2", dims.hidden, dims.hidden, dims.kernel, rng)?,
            out,
            dropout: dims.dropout,
            slope: dims.slope,
        })
    }

    /// `window` is `frames × C`; returns `1 × n` logits.
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, window: Var) -> Result<Var> {
        let x = self.conv1.forward(g, window)?;
        let x = g.leaky_relu(x, self.slope);
        let x = g.dropout(x, self.dropout)?;
        let x = self.conv2.forward(g, x)?;
        let x = g.mean_rows(x)?;
        self.out.forward(g, x)
    }
}

/// Per-phoneme emotion probabilities, `t × n`; rows need not sum to one.
#[derive(Clone, Debug, PartialEq)]
pub struct EmotionDistribution(pub Tensor<f32>);

impl EmotionDistribution {
    pub fn new(t: usize, n: usize, data: Vec<f32>) -> Result<Self> {
        if data.iter().any(|p| !(0.0..=1.0).contains(p)) {
            config_err!("emotion probabilities must lie in [0, 1]");
        }
        Ok(EmotionDistribution(Tensor::new(vec![t, n], data)?))
    }

    pub fn phonemes(&self) -> usize {
        self.0.rows()
    }

    pub fn emotions(&self) -> usize {
        self.0.cols()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        self.0.row(i)
    }

    pub fn column(&self, k: usize) -> Vec<f32> {
        (0..self.phonemes()).map(|i| self.0.row(i)[k]).collect()
    }

    pub fn data(&self) -> &[f32] {
        self.0.data()
    }

    /// Comma-separated rows with an `phoneme,<names...>` header.
    pub fn to_csv(&self, names: &[String]) -> String {
        let mut s = String::from("phoneme");
        for n in names {
            s.push(',');
            s.push_str(n);
        }
        s.push('\n');
        for i in 0..self.phonemes() {
            s.push_str(&i.to_string());
            for p in self.row(i) {
                s.push_str(&format!(",{p}"));
            }
            s.push('\n');
        }
        s
    }
}

#[derive(Clone, Debug)]
pub struct SwerModel {
    pub dims: ModelDims,
    pub radius: usize,
    pub store: ParamStore<f32>,
    pub net: PredD,
}

impl SwerModel {
    pub fn new(dims: ModelDims, radius: usize, seed: u64) -> Result<Self> {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = PredD::new(&mut store, &dims, &mut rng)?;
        Ok(SwerModel {
            dims,
            radius,
            store,
            net,
        })
    }

    /// Inference-mode logits of one window.
    pub fn logits(&self, window: &MelSpectrogram) -> Result<Vec<f32>> {
        if window.channels() != self.dims.channels {
            config_err!("window has {} channels, model expects {}", window.channels(), self.dims.channels);
        }
        let mut g = Graph::new(&self.store);
        let x = mel_constant(&mut g, window)?;
        let y = self.net.forward(&mut g, x)?;
        Ok(g.value(y).to_vec())
    }

    /// Sigmoid of the window logits for every phoneme.
    pub fn predict_distribution(&self, mel: &MelSpectrogram, boundaries: &Segments) -> Result<EmotionDistribution> {
        let n = self.dims.emotions;
        let mut data = Vec::with_capacity(boundaries.len() * n);
        for w in slice_windows(mel, boundaries, self.radius)? {
            data.extend(self.logits(&w.frames)?.into_iter().map(sigmoid));
        }
        EmotionDistribution::new(boundaries.len(), n, data)
    }

    pub fn to_container(&self) -> Container {
        let mut c = Container::new();
        c.set_meta("kind", "swer");
        let mut meta = Vec::new();
        self.dims.write("dims", &mut meta);
        for (k, v) in meta {
            c.set_meta(k, v);
        }
        c.set_meta("radius", self.radius);
        c.set_meta("fingerprint", self.store.fingerprint());
        c.push_store(&self.store);
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        c.expect_kind("swer")?;
        let dims = ModelDims::read("dims", |k| c.meta(k).map(str::to_string))?;
        let radius = crate::kv::parse_value("radius", c.require("radius")?)?;
        let mut m = SwerModel::new(dims, radius, 0)?;
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
