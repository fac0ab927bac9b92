//! Parameterised layers. Each layer records only [`ParamId`]s, so the same
//! layer value drives an `f32` training store or its `f64` shadow.

use rand::Rng;

use crate::error::Result;

use super::params::uniform_tensor;
use super::{Graph, ParamId, ParamStore, Real, Tensor, Var};

/// Fully connected layer, weight stored `out × in`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore<f32>,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let weight = store.add(
            format!("{name}.weight"),
            uniform_tensor(vec![fan_out, fan_in], bound, rng),
        )?;
        let bias = store.add(
            format!("{name}.bias"),
            uniform_tensor(vec![fan_out], bound, rng),
        )?;
        Ok(Linear {
            weight,
            bias,
            fan_in,
            fan_out,
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        g.linear(x, w, Some(b))
    }

    /// Sets weight and bias to zero.
    pub fn zero(&self, store: &mut ParamStore<f32>) {
        store.get_mut(self.weight).data_mut().fill(0.0);
        store.get_mut(self.bias).data_mut().fill(0.0);
    }
}

/// Same-padded temporal convolution, weight stored `out × in × kernel`.
#[derive(Clone, Debug)]
pub struct Conv1d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
}

impl Conv1d {
    pub fn new(
        store: &mut ParamStore<f32>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let bound = 1.0 / ((in_channels * kernel) as f64).sqrt();
        let weight = store.add(
            format!("{name}.weight"),
            uniform_tensor(vec![out_channels, in_channels, kernel], bound, rng),
        )?;
        let bias = store.add(
            format!("{name}.bias"),
            uniform_tensor(vec![out_channels], bound, rng),
        )?;
        Ok(Conv1d {
            weight,
            bias,
            in_channels,
            out_channels,
            kernel,
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        g.conv1d(x, w, Some(b), self.kernel)
    }
}

/// Lookup table of learned rows.
#[derive(Clone, Debug)]
pub struct Embedding {
    pub table: ParamId,
    pub rows: usize,
    pub dim: usize,
}

impl Embedding {
    pub fn new(
        store: &mut ParamStore<f32>,
        name: &str,
        rows: usize,
        dim: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let table = store.add(
            format!("{name}.table"),
            uniform_tensor(vec![rows, dim], 3f64.sqrt() * 0.1, rng),
        )?;
        Ok(Embedding { table, rows, dim })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, indices: &[usize]) -> Result<Var> {
        let t = g.param(self.table);
        g.gather(t, indices)
    }
}

/// Standard sinusoidal position table: even columns `sin(n·ωᵢ)`, odd columns
/// `cos(n·ωᵢ)`, with `ωᵢ = 10000^(-2i/width)`.
pub fn sinusoidal_positions<T: Real>(frames: usize, width: usize) -> Tensor<T> {
    let mut data = Vec::with_capacity(frames * width);
    for n in 0..frames {
        for c in 0..width {
            let i = c / 2;
            let w = positional_frequency(i, width);
            let a = n as f64 * w;
            data.push(T::lit(if c % 2 == 0 { a.sin() } else { a.cos() }));
        }
    }
    Tensor::new(vec![frames, width], data).expect("shape matches")
}

/// Angular frequency (radians per frame) of sinusoid pair `i` in a table of `width` columns.
pub fn positional_frequency(i: usize, width: usize) -> f64 {
    10000f64.powf(-2.0 * i as f64 / width as f64)
}

/// `x + glu(conv(x))` with the convolution doubling the width.
#[derive(Clone, Debug)]
pub struct ResidualGlu {
    pub conv: Conv1d,
}

impl ResidualGlu {
    pub fn new(
        store: &mut ParamStore<f32>,
        name: &str,
        width: usize,
        kernel: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Ok(ResidualGlu {
            conv: Conv1d::new(store, name, width, 2 * width, kernel, rng)?,
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let y = self.conv.forward(g, x)?;
        let y = g.glu(y)?;
        g.add(x, y)
    }
}

/// Frame-level back end shared by the reconstruction decoder and the
/// synthesiser: expand phoneme rows by duration, add sinusoidal positions,
/// run the residual stack and project to spectrogram channels.
#[derive(Clone, Debug)]
pub struct FrameDecoder {
    pub blocks: Vec<ResidualGlu>,
    pub out: Linear,
    pub width: usize,
}

impl FrameDecoder {
    pub fn new(
        store: &mut ParamStore<f32>,
        name: &str,
        width: usize,
        channels: usize,
        blocks: usize,
        kernel: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let blocks = (0..blocks)
            .map(|i| ResidualGlu::new(store, &format!("{name}.block{i}"), width, kernel, rng))
            .collect::<Result<_>>()?;
        let out = Linear::new(store, &format!("{name}.out"), width, channels, rng)?;
        Ok(FrameDecoder { blocks, out, width })
    }

    /// `rows` is `t × width`; returns `Σ durations × channels`.
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, rows: Var, durations: &[usize]) -> Result<Var> {
        let x = g.expand(rows, durations)?;
        let frames = g.rows(x);
        let pe = sinusoidal_positions::<T>(frames, self.width);
        let pe = g.constant(frames, self.width, pe.into_data())?;
        let mut x = g.add(x, pe)?;
        for b in &self.blocks {
            x = b.forward(g, x)?;
        }
        self.out.forward(g, x)
    }
}
