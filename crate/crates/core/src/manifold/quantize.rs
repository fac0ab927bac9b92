//! Nearest-code assignment and its straight-through graph form.

use crate::error::{config_err, Result};
use crate::numerics::{Graph, Real, Tensor, Var};

/// Index of the code nearest to `row` (squared Euclidean distance in `f64`),
/// ties going to the smallest index, with that distance.
pub fn nearest<T: Real>(row: &[T], codebook: &[T], d: usize) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, code) in codebook.chunks_exact(d).enumerate() {
        let dist: f64 = row
            .iter()
            .zip(code)
            .map(|(x, e)| {
                let diff = x.f64() - e.f64();
                diff * diff
            })
            .sum();
        if dist < best.1 {
            best = (j, dist);
        }
    }
    best
}

/// Nearest code for every `d`-wide row of `rows`.
pub fn assign<T: Real>(rows: &[T], codebook: &[T], d: usize) -> Vec<usize> {
    rows.chunks_exact(d).map(|r| nearest(r, codebook, d).0).collect()
}

/// Continuous encoder rows, their code indices and the code rows themselves.
#[derive(Clone, Debug, PartialEq)]
pub struct ManifoldLatents {
    pub pre_quant: Tensor<f32>,
    pub indices: Vec<usize>,
    pub quantized: Tensor<f32>,
}

impl ManifoldLatents {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Snaps every row of `pre_quant` (`t × d`) to its nearest codebook row (`b × d`).
pub fn quantize(pre_quant: &Tensor<f32>, codebook: &Tensor<f32>) -> Result<ManifoldLatents> {
    let d = codebook.cols();
    if pre_quant.cols() != d || pre_quant.shape().len() != 2 {
        config_err!(
            "latent shape {:?} does not match codebook {:?}",
            pre_quant.shape(),
            codebook.shape()
        );
    }
    let indices = assign(pre_quant.data(), codebook.data(), d);
    let mut q = Vec::with_capacity(pre_quant.numel());
    for &k in &indices {
        q.extend_from_slice(codebook.row(k));
    }
    Ok(ManifoldLatents {
        pre_quant: pre_quant.clone(),
        quantized: Tensor::new(vec![indices.len(), d], q)?,
        indices,
    })
}

/// How the graph form picks codes.
#[derive(Clone, Debug)]
pub enum QuantMode<T> {
    /// Nearest code of the current encoder output.
    Nearest,
    /// Everything recorded at one encoder output: indices, the
    /// straight-through offset and the stop-gradient values. The forward
    /// pass becomes smooth in the parameters while keeping the exact value
    /// and gradient at the recorded point, so finite differences can check
    /// the surrogate gradients.
    Frozen {
        indices: Vec<usize>,
        offset: Vec<T>,
        pre: Vec<T>,
        codes: Vec<T>,
    },
}

impl<T: Real> QuantMode<T> {
    /// Records the frozen surrogate at the given encoder output.
    pub fn freeze(pre: &[T], codebook: &[T], d: usize) -> Self {
        let indices = assign(pre, codebook, d);
        let codes: Vec<T> = indices
            .iter()
            .flat_map(|&k| codebook[k * d..(k + 1) * d].iter().copied())
            .collect();
        let offset = codes.iter().zip(pre).map(|(e, x)| *e - *x).collect();
        QuantMode::Frozen {
            indices,
            offset,
            pre: pre.to_vec(),
            codes,
        }
    }
}

/// Graph-side quantisation result.
#[derive(Clone, Debug)]
pub struct GraphQuant {
    /// Straight-through codes: forward value is the code rows, gradient goes to `pre`.
    pub codes_st: Var,
    /// Code rows gathered from the codebook (carries codebook gradients).
    pub codes: Var,
    /// Stop-gradient copies of the encoder output and of the codes.
    pub pre_sg: Var,
    pub codes_sg: Var,
    pub indices: Vec<usize>,
}

pub fn quantize_graph<T: Real>(
    g: &mut Graph<T>,
    pre: Var,
    codebook: Var,
    mode: &QuantMode<T>,
) -> Result<GraphQuant> {
    let d = g.cols(codebook);
    let (t, width) = g.shape(pre);
    if width != d {
        config_err!("latent width {width} does not match codebook width {d}");
    }
    let (indices, value, pre_sg, codes_sg) = match mode {
        QuantMode::Nearest => {
            let indices = assign(g.value(pre), g.value(codebook), d);
            let cb = g.value(codebook);
            let mut v = Vec::with_capacity(indices.len() * d);
            for &k in &indices {
                v.extend_from_slice(&cb[k * d..(k + 1) * d]);
            }
            let pre_sg = g.detach(pre);
            let codes_sg = g.constant(t, d, v.clone())?;
            (indices, v, pre_sg, codes_sg)
        }
        QuantMode::Frozen {
            indices,
            offset,
            pre: pre0,
            codes,
        } => {
            if offset.len() != g.value(pre).len() {
                config_err!("frozen quantiser recorded for a different shape");
            }
            let v = g.value(pre).iter().zip(offset).map(|(x, o)| *x + *o).collect();
            let pre_sg = g.constant(t, d, pre0.clone())?;
            let codes_sg = g.constant(t, d, codes.clone())?;
            (indices.clone(), v, pre_sg, codes_sg)
        }
    };
    let codes_st = g.straight_through(pre, value)?;
    let codes = g.gather(codebook, &indices)?;
    Ok(GraphQuant {
        codes_st,
        codes,
        pre_sg,
        codes_sg,
        indices,
    })
}

/// Codebook term `‖sg(pre) − codes‖²` plus `beta · ‖pre − sg(codes)‖²`, each
/// averaged over rows.
pub fn vq_losses<T: Real>(g: &mut Graph<T>, pre: Var, q: &GraphQuant, beta: f64) -> Result<Var> {
    let diff = g.sub(q.pre_sg, q.codes)?;
    let codebook_term = g.row_sq_norm_mean(diff)?;
    let diff = g.sub(pre, q.codes_sg)?;
    let commit = g.row_sq_norm_mean(diff)?;
    let commit = g.scale(commit, beta);
    g.add(codebook_term, commit)
}
