//! Reverse-mode automatic differentiation over 2-D values.
//!
//! Every node holds a `rows × cols` matrix (time-major for sequences). Nodes
//! are appended in evaluation order, so the node list is already a
//! topological order and the backward pass is a single reverse sweep.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{config_err, Result};

use super::real::{rm, tr};
use super::{Gradients, ParamId, ParamStore, Real, Segments};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Value<T> {
    Owned(Vec<T>),
    Param(ParamId),
}

enum Op<T> {
    Leaf,
    Param(ParamId),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddRow(Var, Var),
    MatMul { a: Var, b: Var, trans_b: bool },
    Linear { x: Var, w: Var, b: Option<Var> },
    Conv1d { x: Var, w: Var, b: Option<Var>, kernel: usize, cols: Vec<T> },
    LeakyRelu(Var, T),
    Sigmoid(Var),
    Glu(Var),
    Dropout(Var, Vec<T>),
    SegmentMean(Var, Segments),
    Expand(Var, Vec<usize>),
    MeanRows(Var),
    Concat(Vec<Var>),
    Gather { table: Var, indices: Vec<usize> },
    StraightThrough(Var),
    RowNormMean(Var),
    RowSqNormMean(Var),
    SoftmaxRows(Var),
    BceLogits(Var, Vec<T>),
}

struct Node<T> {
    rows: usize,
    cols: usize,
    value: Value<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// A single forward evaluation recorded for differentiation.
pub struct Graph<'p, T: Real> {
    params: &'p ParamStore<T>,
    nodes: Vec<Node<T>>,
    param_vars: HashMap<ParamId, Var>,
    dropout_rng: Option<ChaCha8Rng>,
}

/// Result of [`Graph::backward`].
pub struct Backward<T> {
    pub params: Gradients<T>,
    leaves: HashMap<Var, Vec<T>>,
}

impl<T: Real> Backward<T> {
    /// Gradient of the loss with respect to a leaf created with `requires_grad`.
    pub fn wrt(&self, v: Var) -> Option<&[T]> {
        self.leaves.get(&v).map(Vec::as_slice)
    }
}

impl<'p, T: Real> Graph<'p, T> {
    /// Inference graph: dropout is the identity.
    pub fn new(params: &'p ParamStore<T>) -> Self {
        Graph {
            params,
            nodes: Vec::new(),
            param_vars: HashMap::new(),
            dropout_rng: None,
        }
    }

    /// Training graph: dropout masks are drawn from a stream seeded by `seed`.
    pub fn training(params: &'p ParamStore<T>, seed: u64) -> Self {
        Graph {
            dropout_rng: Some(ChaCha8Rng::seed_from_u64(seed)),
            ..Graph::new(params)
        }
    }

    pub fn is_training(&self) -> bool {
        self.dropout_rng.is_some()
    }

    pub fn params(&self) -> &'p ParamStore<T> {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[T] {
        match &self.nodes[v.0].value {
            Value::Owned(data) => data,
            Value::Param(id) => self.params.get(*id).data(),
        }
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.0];
        (n.rows, n.cols)
    }

    pub fn rows(&self, v: Var) -> usize {
        self.nodes[v.0].rows
    }

    pub fn cols(&self, v: Var) -> usize {
        self.nodes[v.0].cols
    }

    /// Scalar value of a `1 × 1` node.
    pub fn scalar(&self, v: Var) -> T {
        self.value(v)[0]
    }

    fn push(&mut self, rows: usize, cols: usize, value: Vec<T>, op: Op<T>, needs_grad: bool) -> Var {
        debug_assert_eq!(rows * cols, value.len());
        self.nodes.push(Node {
            rows,
            cols,
            value: Value::Owned(value),
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            config_err!("{what}: shape {:?} vs {:?}", self.shape(a), self.shape(b));
        }
        Ok(())
    }

    // ---- leaves ---------------------------------------------------------

    pub fn input(&mut self, rows: usize, cols: usize, data: Vec<T>, requires_grad: bool) -> Result<Var> {
        if rows * cols != data.len() {
            config_err!("input {rows}x{cols} given {} values", data.len());
        }
        Ok(self.push(rows, cols, data, Op::Leaf, requires_grad))
    }

    /// Non-differentiable leaf.
    pub fn constant(&mut self, rows: usize, cols: usize, data: Vec<T>) -> Result<Var> {
        self.input(rows, cols, data, false)
    }

    /// Leaf bound to a stored parameter, viewed as `shape[0] × rest`.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars.get(&id) {
            return *v;
        }
        let t = self.params.get(id);
        let (rows, cols) = (t.rows(), t.cols());
        self.nodes.push(Node {
            rows,
            cols,
            value: Value::Param(id),
            op: Op::Param(id),
            needs_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars.insert(id, v);
        v
    }

    /// Copy of `x` that blocks gradient flow.
    pub fn detach(&mut self, x: Var) -> Var {
        let (r, c) = self.shape(x);
        let data = self.value(x).to_vec();
        self.push(r, c, data, Op::Leaf, false)
    }

    // ---- elementwise ----------------------------------------------------

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let data = self.value(a).iter().zip(self.value(b)).map(|(x, y)| *x + *y).collect();
        let (r, c) = self.shape(a);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(r, c, data, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let data = self.value(a).iter().zip(self.value(b)).map(|(x, y)| *x - *y).collect();
        let (r, c) = self.shape(a);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(r, c, data, Op::Sub(a, b), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let data = self.value(a).iter().zip(self.value(b)).map(|(x, y)| *x * *y).collect();
        let (r, c) = self.shape(a);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(r, c, data, Op::Mul(a, b), ng))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let s = T::lit(s);
        let data = self.value(a).iter().map(|x| *x * s).collect();
        let (r, c) = self.shape(a);
        let ng = self.ng(a);
        self.push(r, c, data, Op::Scale(a, s), ng)
    }

    /// `x + row` with `row` broadcast over every row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (r, c) = self.shape(x);
        if self.value(row).len() != c {
            config_err!("add_row: row has {} values, x has {c} columns", self.value(row).len());
        }
        let rv = self.value(row);
        let mut data = self.value(x).to_vec();
        for chunk in data.chunks_mut(c) {
            chunk.iter_mut().zip(rv).for_each(|(d, b)| *d += *b);
        }
        let ng = self.ng(x) || self.ng(row);
        Ok(self.push(r, c, data, Op::AddRow(x, row), ng))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let s = T::lit(slope);
        let data = self
            .value(x)
            .iter()
            .map(|v| if *v > T::zero() { *v } else { *v * s })
            .collect();
        let (r, c) = self.shape(x);
        let ng = self.ng(x);
        self.push(r, c, data, Op::LeakyRelu(x, s), ng)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let data = self.value(x).iter().map(|v| sigmoid(*v)).collect();
        let (r, c) = self.shape(x);
        let ng = self.ng(x);
        self.push(r, c, data, Op::Sigmoid(x), ng)
    }

    /// Gated linear unit: the first half of the columns times the sigmoid of the second half.
    pub fn glu(&mut self, x: Var) -> Result<Var> {
        let (r, c2) = self.shape(x);
        if c2 % 2 != 0 {
            config_err!("glu needs an even column count, got {c2}");
        }
        let c = c2 / 2;
        let xv = self.value(x);
        let mut data = Vec::with_capacity(r * c);
        for row in xv.chunks(c2) {
            let (a, b) = row.split_at(c);
            data.extend(a.iter().zip(b).map(|(a, b)| *a * sigmoid(*b)));
        }
        let ng = self.ng(x);
        Ok(self.push(r, c, data, Op::Glu(x), ng))
    }

    /// Inverted dropout; the identity on inference graphs or when `p == 0`.
    pub fn dropout(&mut self, x: Var, p: f64) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            config_err!("dropout probability {p} outside [0, 1)");
        }
        let Some(rng) = self.dropout_rng.as_mut() else {
            return Ok(x);
        };
        if p == 0.0 {
            return Ok(x);
        }
        let n = self.nodes[x.0].rows * self.nodes[x.0].cols;
        let keep = T::lit(1.0 / (1.0 - p));
        let mask: Vec<T> = (0..n)
            .map(|_| if rng.random::<f64>() < p { T::zero() } else { keep })
            .collect();
        let data = self.value(x).iter().zip(&mask).map(|(v, m)| *v * *m).collect();
        let (r, c) = self.shape(x);
        let ng = self.ng(x);
        Ok(self.push(r, c, data, Op::Dropout(x, mask), ng))
    }

    // ---- linear algebra -------------------------------------------------

    /// `a · b` (`trans_b == false`) or `a · bᵀ`.
    pub fn matmul(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (m, k) = self.shape(a);
        let (br, bc) = self.shape(b);
        let (kb, n, bs) = if trans_b { (bc, br, tr(bc)) } else { (br, bc, rm(bc)) };
        if k != kb {
            config_err!("matmul: inner dimensions {k} vs {kb}");
        }
        let mut out = vec![T::zero(); m * n];
        T::gemm(m, k, n, self.value(a), rm(k), self.value(b), bs, T::zero(), &mut out);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(m, n, out, Op::MatMul { a, b, trans_b }, ng))
    }

    /// `x · wᵀ + b` with `w` stored `out × in`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (r, fin) = self.shape(x);
        let (fout, win) = self.shape(w);
        if fin != win {
            config_err!("linear: input width {fin}, weight expects {win}");
        }
        if let Some(b) = b {
            if self.value(b).len() != fout {
                config_err!("linear: bias length {} != {fout}", self.value(b).len());
            }
        }
        let mut out = vec![T::zero(); r * fout];
        T::gemm(r, fin, fout, self.value(x), rm(fin), self.value(w), tr(win), T::zero(), &mut out);
        if let Some(b) = b {
            let bv = self.value(b);
            for row in out.chunks_mut(fout) {
                row.iter_mut().zip(bv).for_each(|(o, b)| *o += *b);
            }
        }
        let ng = self.ng(x) || self.ng(w) || b.is_some_and(|b| self.ng(b));
        Ok(self.push(r, fout, out, Op::Linear { x, w, b }, ng))
    }

    /// Same-padded 1-D convolution along rows. `w` is `out × in × kernel`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Option<Var>, kernel: usize) -> Result<Var> {
        if kernel % 2 == 0 {
            config_err!("conv1d kernel must be odd, got {kernel}");
        }
        let (time, cin) = self.shape(x);
        let (cout, wk) = self.shape(w);
        if wk != cin * kernel {
            config_err!(
                "conv1d: weight has {wk} taps per output channel, expected {cin}x{kernel}"
            );
        }
        if let Some(b) = b {
            if self.value(b).len() != cout {
                config_err!("conv1d: bias length {} != {cout}", self.value(b).len());
            }
        }
        let pad = kernel / 2;
        let xv = self.value(x);
        let ck = cin * kernel;
        let mut cols = vec![T::zero(); time * ck];
        for t in 0..time {
            let row = &mut cols[t * ck..(t + 1) * ck];
            for j in 0..kernel {
                let src = t + j;
                if src < pad || src - pad >= time {
                    continue;
                }
                let xr = &xv[(src - pad) * cin..(src - pad + 1) * cin];
                for (ci, v) in xr.iter().enumerate() {
                    row[ci * kernel + j] = *v;
                }
            }
        }
        let mut out = vec![T::zero(); time * cout];
        T::gemm(time, ck, cout, &cols, rm(ck), self.value(w), tr(ck), T::zero(), &mut out);
        if let Some(b) = b {
            let bv = self.value(b);
            for row in out.chunks_mut(cout) {
                row.iter_mut().zip(bv).for_each(|(o, b)| *o += *b);
            }
        }
        let ng = self.ng(x) || self.ng(w) || b.is_some_and(|b| self.ng(b));
        Ok(self.push(time, cout, out, Op::Conv1d { x, w, b, kernel, cols }, ng))
    }

    // ---- sequence reshaping --------------------------------------------

    /// Mean of the rows inside each segment.
    pub fn segment_mean(&mut self, x: Var, segments: &Segments) -> Result<Var> {
        let (time, c) = self.shape(x);
        if segments.total() != time {
            config_err!("segment_mean: segments cover {} frames, input has {time}", segments.total());
        }
        let xv = self.value(x);
        let mut out = vec![T::zero(); segments.len() * c];
        for (i, (s, e)) in segments.iter().enumerate() {
            let o = &mut out[i * c..(i + 1) * c];
            for f in s..e {
                o.iter_mut().zip(&xv[f * c..(f + 1) * c]).for_each(|(o, v)| *o += *v);
            }
            let inv = T::lit(1.0 / (e - s) as f64);
            o.iter_mut().for_each(|v| *v *= inv);
        }
        let ng = self.ng(x);
        Ok(self.push(segments.len(), c, out, Op::SegmentMean(x, segments.clone()), ng))
    }

    /// Repeats row `i` `durations[i]` times.
    pub fn expand(&mut self, x: Var, durations: &[usize]) -> Result<Var> {
        let (r, c) = self.shape(x);
        if durations.len() != r {
            config_err!("expand: {} durations for {r} rows", durations.len());
        }
        let total: usize = durations.iter().sum();
        let xv = self.value(x);
        let mut out = Vec::with_capacity(total * c);
        for (i, d) in durations.iter().enumerate() {
            for _ in 0..*d {
                out.extend_from_slice(&xv[i * c..(i + 1) * c]);
            }
        }
        let ng = self.ng(x);
        Ok(self.push(total, c, out, Op::Expand(x, durations.to_vec()), ng))
    }

    /// Average over rows (global pooling over time), giving `1 × cols`.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.shape(x);
        if r == 0 {
            config_err!("mean_rows on an empty input");
        }
        let mut out = vec![T::zero(); c];
        for row in self.value(x).chunks(c) {
            out.iter_mut().zip(row).for_each(|(o, v)| *o += *v);
        }
        let inv = T::lit(1.0 / r as f64);
        out.iter_mut().for_each(|v| *v *= inv);
        let ng = self.ng(x);
        Ok(self.push(1, c, out, Op::MeanRows(x), ng))
    }

    /// Column-wise concatenation of inputs sharing a row count.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(first) = parts.first() else {
            config_err!("concat of nothing");
        };
        let r = self.rows(*first);
        if parts.iter().any(|p| self.rows(*p) != r) {
            config_err!("concat: row counts differ");
        }
        let total: usize = parts.iter().map(|p| self.cols(*p)).sum();
        let mut out = Vec::with_capacity(r * total);
        for i in 0..r {
            for p in parts {
                let c = self.cols(*p);
                out.extend_from_slice(&self.value(*p)[i * c..(i + 1) * c]);
            }
        }
        let ng = parts.iter().any(|p| self.ng(*p));
        Ok(self.push(r, total, out, Op::Concat(parts.to_vec()), ng))
    }

    /// Row lookup (embedding).
    pub fn gather(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let (rows, c) = self.shape(table);
        if let Some(bad) = indices.iter().find(|i| **i >= rows) {
            config_err!("gather index {bad} out of range for {rows} rows");
        }
        let tv = self.value(table);
        let mut out = Vec::with_capacity(indices.len() * c);
        for i in indices {
            out.extend_from_slice(&tv[i * c..(i + 1) * c]);
        }
        let ng = self.ng(table);
        Ok(self.push(indices.len(), c, out, Op::Gather { table, indices: indices.to_vec() }, ng))
    }

    /// Emits `value` forward while passing gradients to `x` unchanged.
    pub fn straight_through(&mut self, x: Var, value: Vec<T>) -> Result<Var> {
        let (r, c) = self.shape(x);
        if value.len() != r * c {
            config_err!("straight_through: value has {} entries, expected {}", value.len(), r * c);
        }
        let ng = self.ng(x);
        Ok(self.push(r, c, value, Op::StraightThrough(x), ng))
    }

    /// Row-wise softmax.
    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let (r, c) = self.shape(x);
        let mut out = self.value(x).to_vec();
        for row in out.chunks_mut(c) {
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut s = T::zero();
            row.iter_mut().for_each(|v| {
                *v = (*v - m).exp();
                s += *v;
            });
            row.iter_mut().for_each(|v| *v /= s);
        }
        let ng = self.ng(x);
        self.push(r, c, out, Op::SoftmaxRows(x), ng)
    }

    // ---- reductions used by losses ---------------------------------------

    /// `(1/rows) Σᵢ ‖xᵢ‖₂`.
    pub fn row_norm_mean(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.shape(x);
        if r == 0 {
            config_err!("row_norm_mean on an empty input");
        }
        let s: f64 = self
            .value(x)
            .chunks(c)
            .map(|row| row.iter().map(|v| v.f64() * v.f64()).sum::<f64>().sqrt())
            .sum();
        let ng = self.ng(x);
        Ok(self.push(1, 1, vec![T::lit(s / r as f64)], Op::RowNormMean(x), ng))
    }

    /// `(1/rows) Σᵢ ‖xᵢ‖₂²`.
    pub fn row_sq_norm_mean(&mut self, x: Var) -> Result<Var> {
        let (r, _) = self.shape(x);
        if r == 0 {
            config_err!("row_sq_norm_mean on an empty input");
        }
        let s: f64 = self.value(x).iter().map(|v| v.f64() * v.f64()).sum();
        let ng = self.ng(x);
        Ok(self.push(1, 1, vec![T::lit(s / r as f64)], Op::RowSqNormMean(x), ng))
    }

    /// Mean element-wise binary cross-entropy of sigmoid(`x`) against 0/1 labels.
    pub fn bce_logits(&mut self, x: Var, labels: &[T]) -> Result<Var> {
        let n = self.value(x).len();
        if labels.len() != n {
            config_err!("bce: {} labels for {n} logits", labels.len());
        }
        if labels.iter().any(|y| *y != T::zero() && *y != T::one()) {
            config_err!("bce labels must be 0 or 1");
        }
        let s: f64 = self
            .value(x)
            .iter()
            .zip(labels)
            .map(|(x, y)| {
                let (x, y) = (x.f64(), y.f64());
                x.max(0.0) - x * y + (-x.abs()).exp().ln_1p()
            })
            .sum();
        let ng = self.ng(x);
        Ok(self.push(1, 1, vec![T::lit(s / n as f64)], Op::BceLogits(x, labels.to_vec()), ng))
    }

    // ---- backward -------------------------------------------------------

    /// Reverse sweep from a scalar `loss`, visiting every node once.
    pub fn backward(&self, loss: Var) -> Result<Backward<T>> {
        if self.shape(loss) != (1, 1) {
            config_err!("backward needs a scalar loss, got {:?}", self.shape(loss));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        let mut out = Backward {
            params: Gradients::new(self.params.len()),
            leaves: HashMap::new(),
        };

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            match &node.op {
                Op::Leaf => {
                    out.leaves.insert(Var(i), g);
                }
                Op::Param(id) => out.params.accumulate(*id, &g),
                Op::Add(a, b) => {
                    self.acc(&mut grads, *a, |d| add_into(d, &g));
                    self.acc(&mut grads, *b, |d| add_into(d, &g));
                }
                Op::Sub(a, b) => {
                    self.acc(&mut grads, *a, |d| add_into(d, &g));
                    self.acc(&mut grads, *b, |d| d.iter_mut().zip(&g).for_each(|(d, g)| *d -= *g));
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    self.acc(&mut grads, *a, |d| {
                        d.iter_mut().zip(&g).zip(bv).for_each(|((d, g), b)| *d += *g * *b)
                    });
                    self.acc(&mut grads, *b, |d| {
                        d.iter_mut().zip(&g).zip(av).for_each(|((d, g), a)| *d += *g * *a)
                    });
                }
                Op::Scale(a, s) => {
                    self.acc(&mut grads, *a, |d| d.iter_mut().zip(&g).for_each(|(d, g)| *d += *g * *s));
                }
                Op::AddRow(x, row) => {
                    let c = node.cols;
                    self.acc(&mut grads, *x, |d| add_into(d, &g));
                    self.acc(&mut grads, *row, |d| col_sums_into(d, &g, c));
                }
                Op::MatMul { a, b, trans_b } => {
                    let (m, k) = self.shape(*a);
                    let n = node.cols;
                    let (av, bv) = (self.value(*a), self.value(*b));
                    if *trans_b {
                        // out = a · bᵀ, b is n × k
                        self.acc(&mut grads, *a, |d| T::gemm(m, n, k, &g, rm(n), bv, rm(k), T::one(), d));
                        self.acc(&mut grads, *b, |d| T::gemm(n, m, k, &g, tr(n), av, rm(k), T::one(), d));
                    } else {
                        // out = a · b, b is k × n
                        self.acc(&mut grads, *a, |d| T::gemm(m, n, k, &g, rm(n), bv, tr(n), T::one(), d));
                        self.acc(&mut grads, *b, |d| T::gemm(k, m, n, av, tr(k), &g, rm(n), T::one(), d));
                    }
                }
                Op::Linear { x, w, b } => {
                    let (r, fin) = self.shape(*x);
                    let fout = node.cols;
                    let (xv, wv) = (self.value(*x), self.value(*w));
                    self.acc(&mut grads, *x, |d| T::gemm(r, fout, fin, &g, rm(fout), wv, rm(fin), T::one(), d));
                    self.acc(&mut grads, *w, |d| T::gemm(fout, r, fin, &g, tr(fout), xv, rm(fin), T::one(), d));
                    if let Some(b) = b {
                        self.acc(&mut grads, *b, |d| col_sums_into(d, &g, fout));
                    }
                }
                Op::Conv1d { x, w, b, kernel, cols } => {
                    let (time, cin) = self.shape(*x);
                    let cout = node.cols;
                    let ck = cin * kernel;
                    let wv = self.value(*w);
                    self.acc(&mut grads, *w, |d| T::gemm(cout, time, ck, &g, tr(cout), cols, rm(ck), T::one(), d));
                    if let Some(b) = b {
                        self.acc(&mut grads, *b, |d| col_sums_into(d, &g, cout));
                    }
                    if self.ng(*x) {
                        let mut dcols = vec![T::zero(); time * ck];
                        T::gemm(time, cout, ck, &g, rm(cout), wv, rm(ck), T::zero(), &mut dcols);
                        let pad = kernel / 2;
                        self.acc(&mut grads, *x, |d| {
                            for t in 0..time {
                                let row = &dcols[t * ck..(t + 1) * ck];
                                for j in 0..*kernel {
                                    let src = t + j;
                                    if src < pad || src - pad >= time {
                                        continue;
                                    }
                                    let dx = &mut d[(src - pad) * cin..(src - pad + 1) * cin];
                                    for (ci, v) in dx.iter_mut().enumerate() {
                                        *v += row[ci * kernel + j];
                                    }
                                }
                            }
                        });
                    }
                }
                Op::LeakyRelu(x, s) => {
                    let xv = self.value(*x);
                    self.acc(&mut grads, *x, |d| {
                        d.iter_mut().zip(&g).zip(xv).for_each(|((d, g), x)| {
                            *d += if *x > T::zero() { *g } else { *g * *s }
                        })
                    });
                }
                Op::Sigmoid(x) => {
                    let yv = self.value(Var(i));
                    self.acc(&mut grads, *x, |d| {
                        d.iter_mut()
                            .zip(&g)
                            .zip(yv)
                            .for_each(|((d, g), y)| *d += *g * *y * (T::one() - *y))
                    });
                }
                Op::Glu(x) => {
                    let c = node.cols;
                    let xv = self.value(*x);
                    self.acc(&mut grads, *x, |d| {
                        for ((drow, xrow), grow) in d.chunks_mut(2 * c).zip(xv.chunks(2 * c)).zip(g.chunks(c)) {
                            let (a, b) = xrow.split_at(c);
                            let (da, db) = drow.split_at_mut(c);
                            for j in 0..c {
                                let s = sigmoid(b[j]);
                                da[j] += grow[j] * s;
                                db[j] += grow[j] * a[j] * s * (T::one() - s);
                            }
                        }
                    });
                }
                Op::Dropout(x, mask) => {
                    self.acc(&mut grads, *x, |d| {
                        d.iter_mut().zip(&g).zip(mask).for_each(|((d, g), m)| *d += *g * *m)
                    });
                }
                Op::SegmentMean(x, segs) => {
                    let c = node.cols;
                    self.acc(&mut grads, *x, |d| {
                        for (i, (s, e)) in segs.iter().enumerate() {
                            let inv = T::lit(1.0 / (e - s) as f64);
                            let gi = &g[i * c..(i + 1) * c];
                            for f in s..e {
                                d[f * c..(f + 1) * c]
                                    .iter_mut()
                                    .zip(gi)
                                    .for_each(|(d, g)| *d += *g * inv);
                            }
                        }
                    });
                }
                Op::Expand(x, durations) => {
                    let c = node.cols;
                    self.acc(&mut grads, *x, |d| {
                        let mut f = 0;
                        for (i, dur) in durations.iter().enumerate() {
                            let di = &mut d[i * c..(i + 1) * c];
                            for _ in 0..*dur {
                                add_into(di, &g[f * c..(f + 1) * c]);
                                f += 1;
                            }
                        }
                    });
                }
                Op::MeanRows(x) => {
                    let r = self.rows(*x);
                    let inv = T::lit(1.0 / r as f64);
                    self.acc(&mut grads, *x, |d| {
                        for row in d.chunks_mut(g.len()) {
                            row.iter_mut().zip(&g).for_each(|(d, g)| *d += *g * inv);
                        }
                    });
                }
                Op::Concat(parts) => {
                    let total = node.cols;
                    let mut off = 0;
                    for p in parts {
                        let c = self.cols(*p);
                        self.acc(&mut grads, *p, |d| {
                            for (drow, grow) in d.chunks_mut(c).zip(g.chunks(total)) {
                                add_into(drow, &grow[off..off + c]);
                            }
                        });
                        off += c;
                    }
                }
                Op::Gather { table, indices } => {
                    let c = node.cols;
                    self.acc(&mut grads, *table, |d| {
                        for (k, idx) in indices.iter().enumerate() {
                            add_into(&mut d[idx * c..(idx + 1) * c], &g[k * c..(k + 1) * c]);
                        }
                    });
                }
                Op::StraightThrough(x) => {
                    self.acc(&mut grads, *x, |d| add_into(d, &g));
                }
                Op::RowNormMean(x) => {
                    let (r, c) = self.shape(*x);
                    let xv = self.value(*x);
                    let scale = g[0] / T::lit(r as f64);
                    self.acc(&mut grads, *x, |d| {
                        for (drow, xrow) in d.chunks_mut(c).zip(xv.chunks(c)) {
                            let norm = xrow.iter().map(|v| v.f64() * v.f64()).sum::<f64>().sqrt();
                            if norm > 0.0 {
                                let k = scale / T::lit(norm);
                                drow.iter_mut().zip(xrow).for_each(|(d, x)| *d += k * *x);
                            }
                        }
                    });
                }
                Op::RowSqNormMean(x) => {
                    let r = self.rows(*x);
                    let xv = self.value(*x);
                    let k = g[0] * T::lit(2.0 / r as f64);
                    self.acc(&mut grads, *x, |d| d.iter_mut().zip(xv).for_each(|(d, x)| *d += k * *x));
                }
                Op::SoftmaxRows(x) => {
                    let c = node.cols;
                    let yv = self.value(Var(i));
                    self.acc(&mut grads, *x, |d| {
                        for ((drow, yrow), grow) in d.chunks_mut(c).zip(yv.chunks(c)).zip(g.chunks(c)) {
                            let dot: T = yrow.iter().zip(grow).map(|(y, g)| *y * *g).sum();
                            for j in 0..c {
                                drow[j] += yrow[j] * (grow[j] - dot);
                            }
                        }
                    });
                }
                Op::BceLogits(x, labels) => {
                    let xv = self.value(*x);
                    let k = g[0] / T::lit(labels.len() as f64);
                    self.acc(&mut grads, *x, |d| {
                        d.iter_mut()
                            .zip(xv)
                            .zip(labels)
                            .for_each(|((d, x), y)| *d += k * (sigmoid(*x) - *y))
                    });
                }
            }
        }
        Ok(out)
    }

    fn acc(&self, grads: &mut [Option<Vec<T>>], v: Var, f: impl FnOnce(&mut [T])) {
        if !self.ng(v) {
            return;
        }
        let n = self.nodes[v.0].rows * self.nodes[v.0].cols;
        let slot = grads[v.0].get_or_insert_with(|| vec![T::zero(); n]);
        f(slot);
    }
}

fn add_into<T: Real>(d: &mut [T], g: &[T]) {
    d.iter_mut().zip(g).for_each(|(d, g)| *d += *g);
}

fn col_sums_into<T: Real>(d: &mut [T], g: &[T], cols: usize) {
    for row in g.chunks(cols) {
        add_into(d, row);
    }
}

/// Logistic function, stable for large `|x|`.
pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}
