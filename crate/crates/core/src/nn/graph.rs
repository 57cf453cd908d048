//! Tape-based reverse-mode automatic differentiation over [`Mat`] values.
//!
//! A [`Graph`] records every primitive as it runs. Parameters are borrowed
//! from a [`ParamStore`] rather than copied, so building a graph over a
//! large model is cheap. [`Graph::backward`] walks the tape in reverse and
//! returns a [`Gradients`] table for inputs and parameters.

use std::collections::BTreeMap;

use super::attention::{self, AttentionCache, KeyMask};
use super::mat::{gemm, Mat};
use super::tensor::{ParamId, ParamStore};
use crate::error::{Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Value {
    Owned(Mat),
    Param(ParamId),
}

enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddConst(Var),
    LayerNorm {
        x: Var,
        gamma: Option<Var>,
        beta: Option<Var>,
        xhat: Mat,
        inv_std: Vec<f64>,
    },
    Gelu(Var),
    Silu(Var),
    Softmax(Var),
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        cache: AttentionCache,
    },
    GatherRows {
        src: Var,
        idx: Vec<usize>,
    },
    ConcatRows(Vec<Var>),
    SliceCols {
        x: Var,
        start: usize,
    },
    Mse(Var, Var),
    Sum(Var),
}

struct Node {
    value: Value,
    op: Op,
    needs_grad: bool,
}

/// Gradients produced by one backward pass.
#[derive(Debug, Default)]
pub struct Gradients {
    vars: Vec<Option<Mat>>,
    params: BTreeMap<ParamId, Mat>,
}

impl Gradients {
    /// Gradient with respect to a graph node, if it was reachable.
    pub fn wrt(&self, v: Var) -> Option<&Mat> {
        self.vars.get(v.0).and_then(Option::as_ref)
    }

    pub fn param(&self, id: ParamId) -> Option<&Mat> {
        self.params.get(&id)
    }

    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Mat)> {
        self.params.iter().map(|(k, v)| (*k, v))
    }
}

pub struct Graph<'p> {
    store: Option<&'p ParamStore>,
    nodes: Vec<Node>,
    track_params: bool,
    check_finite: bool,
}

impl<'p> Graph<'p> {
    /// A graph that records gradients for every parameter it touches.
    pub fn new(store: &'p ParamStore) -> Self {
        Graph {
            store: Some(store),
            nodes: Vec::new(),
            track_params: true,
            check_finite: false,
        }
    }

    /// A graph over parameters that are treated as constants.
    pub fn inference(store: &'p ParamStore) -> Self {
        Graph {
            track_params: false,
            ..Graph::new(store)
        }
    }

    /// A graph with no parameter store, for checking primitives on raw inputs.
    pub fn standalone() -> Graph<'static> {
        Graph {
            store: None,
            nodes: Vec::new(),
            track_params: false,
            check_finite: false,
        }
    }

    /// Fail any op whose output contains NaN or infinity.
    pub fn with_finite_checks(mut self, on: bool) -> Self {
        self.check_finite = on;
        self
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Mat {
        match &self.nodes[v.0].value {
            Value::Owned(m) => m,
            Value::Param(id) => self.store.expect("param node without a store").value(*id),
        }
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).shape()
    }

    /// Scalar value of a 1×1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v).data()[0]
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Mat, op: Op, needs_grad: bool) -> Result<Var> {
        if self.check_finite && !value.all_finite() {
            return Err(Error::Numerical(format!(
                "non-finite output from {} at node {}",
                op_name(&op),
                self.nodes.len()
            )));
        }
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn input(&mut self, value: Mat, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Value::Owned(value),
            op: Op::Leaf,
            needs_grad: requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Mat) -> Var {
        self.input(value, false)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        let store = self.store.expect("graph has no parameter store");
        let needs_grad = self.track_params && store.get(id).requires_grad;
        self.nodes.push(Node {
            value: Value::Param(id),
            op: Op::Param(id),
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        let ng = self.needs(a) || self.needs(b);
        self.push(out, Op::MatMul(a, b), ng)
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape(format!(
                "{what}: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Mat {
        let (x, y) = (self.value(a), self.value(b));
        let data = x
            .data()
            .iter()
            .zip(y.data())
            .map(|(&p, &q)| f(p, q))
            .collect();
        Mat::from_vec(x.rows(), x.cols(), data).expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let out = self.zip_with(a, b, |x, y| x + y);
        let ng = self.needs(a) || self.needs(b);
        self.push(out, Op::Add(a, b), ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let out = self.zip_with(a, b, |x, y| x - y);
        let ng = self.needs(a) || self.needs(b);
        self.push(out, Op::Sub(a, b), ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let out = self.zip_with(a, b, |x, y| x * y);
        let ng = self.needs(a) || self.needs(b);
        self.push(out, Op::Mul(a, b), ng)
    }

    /// Adds a 1×n row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (r, c) = self.shape(a);
        if self.shape(row) != (1, c) {
            return Err(Error::Shape(format!(
                "add_row: {r}x{c} with {:?}",
                self.shape(row)
            )));
        }
        let mut out = self.value(a).clone();
        let b = self.value(row).row(0).to_vec();
        for i in 0..r {
            for (o, bv) in out.row_mut(i).iter_mut().zip(&b) {
                *o += bv;
            }
        }
        let ng = self.needs(a) || self.needs(row);
        self.push(out, Op::AddRow(a, row), ng)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let out = self.value(a).map(|v| v * s);
        let ng = self.needs(a);
        self.push(out, Op::Scale(a, s), ng)
    }

    pub fn add_const(&mut self, a: Var, c: f64) -> Result<Var> {
        let out = self.value(a).map(|v| v + c);
        let ng = self.needs(a);
        self.push(out, Op::AddConst(a), ng)
    }

    /// `x·W + b`, with `x` sequence-major.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let y = self.matmul(x, w)?;
        match b {
            Some(b) => self.add_row(y, b),
            None => Ok(y),
        }
    }

    /// Row-wise layer normalization with optional affine parameters.
    pub fn layer_norm(&mut self, x: Var, gamma: Option<Var>, beta: Option<Var>) -> Result<Var> {
        let (r, c) = self.shape(x);
        for p in [gamma, beta].into_iter().flatten() {
            if self.shape(p) != (1, c) {
                return Err(Error::Shape(format!(
                    "layer_norm affine {:?} for width {c}",
                    self.shape(p)
                )));
            }
        }
        let xv = self.value(x);
        let mut xhat = Mat::zeros(r, c);
        let mut inv_std = Vec::with_capacity(r);
        for i in 0..r {
            let row = xv.row(i);
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            for (o, v) in xhat.row_mut(i).iter_mut().zip(row) {
                *o = (v - mean) * is;
            }
            inv_std.push(is);
        }
        let mut out = xhat.clone();
        if let Some(g) = gamma {
            let g = self.value(g).row(0).to_vec();
            for i in 0..r {
                for (o, gv) in out.row_mut(i).iter_mut().zip(&g) {
                    *o *= gv;
                }
            }
        }
        if let Some(b) = beta {
            let b = self.value(b).row(0).to_vec();
            for i in 0..r {
                for (o, bv) in out.row_mut(i).iter_mut().zip(&b) {
                    *o += bv;
                }
            }
        }
        let ng = self.needs(x)
            || gamma.is_some_and(|g| self.needs(g))
            || beta.is_some_and(|b| self.needs(b));
        self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            ng,
        )
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(gelu);
        let ng = self.needs(a);
        self.push(out, Op::Gelu(a), ng)
    }

    pub fn silu(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(|x| x * sigmoid(x));
        let ng = self.needs(a);
        self.push(out, Op::Silu(a), ng)
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let mut out = self.value(a).clone();
        for i in 0..out.rows() {
            attention::softmax_in_place(out.row_mut(i));
        }
        let ng = self.needs(a);
        self.push(out, Op::Softmax(a), ng)
    }

    /// Multi-head attention of `q` over `k`/`v` restricted by `mask`.
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        mask: &KeyMask,
    ) -> Result<Var> {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        attention::check_shapes(qv, kv, vv, heads, mask)?;
        let (out, cache) = attention::forward(qv, kv, vv, heads, mask);
        let ng = self.needs(q) || self.needs(k) || self.needs(v);
        self.push(
            out,
            Op::Attention {
                q,
                k,
                v,
                heads,
                cache,
            },
            ng,
        )
    }

    /// Causal self-attention over back-to-back sequences of the given lengths.
    pub fn causal_self_attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        segments: &[usize],
    ) -> Result<Var> {
        let mask = KeyMask::causal_segments(segments);
        self.attention(q, k, v, heads, &mask)
    }

    /// Cross-attention from queries to a separate key/value memory.
    pub fn cross_attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        mask: &KeyMask,
    ) -> Result<Var> {
        self.attention(q, k, v, heads, mask)
    }

    /// Selects rows of `src` by index (an embedding lookup).
    pub fn gather_rows(&mut self, src: Var, idx: &[usize]) -> Result<Var> {
        let s = self.value(src);
        if let Some(&bad) = idx.iter().find(|&&i| i >= s.rows()) {
            return Err(Error::Shape(format!(
                "row {bad} out of range for {} rows",
                s.rows()
            )));
        }
        let mut out = Mat::zeros(idx.len(), s.cols());
        for (o, &i) in idx.iter().enumerate() {
            out.row_mut(o).copy_from_slice(s.row(i));
        }
        let ng = self.needs(src);
        self.push(
            out,
            Op::GatherRows {
                src,
                idx: idx.to_vec(),
            },
            ng,
        )
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = parts
            .first()
            .map(|&p| self.shape(p).1)
            .ok_or_else(|| Error::Shape("concat of nothing".into()))?;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let m = self.value(p);
            if m.cols() != cols {
                return Err(Error::Shape(format!(
                    "concat widths {} vs {cols}",
                    m.cols()
                )));
            }
            data.extend_from_slice(m.data());
            rows += m.rows();
        }
        let out = Mat::from_vec(rows, cols, data)?;
        let ng = parts.iter().any(|&p| self.needs(p));
        self.push(out, Op::ConcatRows(parts.to_vec()), ng)
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let m = self.value(x);
        if start + len > m.cols() || len == 0 {
            return Err(Error::Shape(format!(
                "columns {start}..{} of {}",
                start + len,
                m.cols()
            )));
        }
        let mut out = Mat::zeros(m.rows(), len);
        for i in 0..m.rows() {
            out.row_mut(i)
                .copy_from_slice(&m.row(i)[start..start + len]);
        }
        let ng = self.needs(x);
        self.push(out, Op::SliceCols { x, start }, ng)
    }

    /// Mean over every element of the squared difference.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        self.same_shape(pred, target, "mse")?;
        let (p, t) = (self.value(pred), self.value(target));
        let n = p.len().max(1) as f64;
        let s: f64 = p
            .data()
            .iter()
            .zip(t.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        let ng = self.needs(pred) || self.needs(target);
        self.push(Mat::filled(1, 1, s / n), Op::Mse(pred, target), ng)
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s: f64 = self.value(a).data().iter().sum();
        let ng = self.needs(a);
        self.push(Mat::filled(1, 1, s), Op::Sum(a), ng)
    }

    /// Reverse-mode sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.shape(loss) != (1, 1) {
            return Err(Error::Shape(format!(
                "backward needs a scalar loss, got {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut params: BTreeMap<ParamId, Mat> = BTreeMap::new();
        grads[loss.0] = Some(Mat::filled(1, 1, 1.0));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            match &node.op {
                Op::Leaf => {
                    grads[i] = Some(g);
                    continue;
                }
                Op::Param(id) => {
                    match params.get_mut(id) {
                        Some(acc) => acc.add_assign(&g),
                        None => {
                            params.insert(*id, g.clone());
                        }
                    }
                    grads[i] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    if self.needs(*a) {
                        let mut da = Mat::zeros(av.rows(), av.cols());
                        gemm(&g, false, bv, true, &mut da, 0.0);
                        accumulate(&mut grads, *a, da);
                    }
                    if self.needs(*b) {
                        let mut db = Mat::zeros(bv.rows(), bv.cols());
                        gemm(av, true, &g, false, &mut db, 0.0);
                        accumulate(&mut grads, *b, db);
                    }
                }
                Op::Add(a, b) => {
                    if self.needs(*a) {
                        accumulate(&mut grads, *a, g.clone());
                    }
                    if self.needs(*b) {
                        accumulate(&mut grads, *b, g.clone());
                    }
                }
                Op::Sub(a, b) => {
                    if self.needs(*a) {
                        accumulate(&mut grads, *a, g.clone());
                    }
                    if self.needs(*b) {
                        accumulate(&mut grads, *b, g.map(|v| -v));
                    }
                }
                Op::AddRow(a, row) => {
                    if self.needs(*a) {
                        accumulate(&mut grads, *a, g.clone());
                    }
                    if self.needs(*row) {
                        accumulate(&mut grads, *row, column_sums(&g));
                    }
                }
                Op::Mul(a, b) => {
                    if self.needs(*a) {
                        let d = hadamard(&g, self.value(*b));
                        accumulate(&mut grads, *a, d);
                    }
                    if self.needs(*b) {
                        let d = hadamard(&g, self.value(*a));
                        accumulate(&mut grads, *b, d);
                    }
                }
                Op::Scale(a, s) => {
                    let s = *s;
                    accumulate(&mut grads, *a, g.map(|v| v * s));
                }
                Op::AddConst(a) => accumulate(&mut grads, *a, g.clone()),
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                } => {
                    let (r, c) = xhat.shape();
                    if let Some(b) = beta {
                        if self.needs(*b) {
                            accumulate(&mut grads, *b, column_sums(&g));
                        }
                    }
                    if let Some(gm) = gamma {
                        if self.needs(*gm) {
                            accumulate(&mut grads, *gm, column_sums(&hadamard(&g, xhat)));
                        }
                    }
                    if self.needs(*x) {
                        let gvec = gamma.map(|gm| self.value(gm).row(0).to_vec());
                        let mut dx = Mat::zeros(r, c);
                        for i in 0..r {
                            let dy = g.row(i);
                            let xh = xhat.row(i);
                            let dxhat: Vec<f64> = match &gvec {
                                Some(gv) => dy.iter().zip(gv).map(|(a, b)| a * b).collect(),
                                None => dy.to_vec(),
                            };
                            let sum_d: f64 = dxhat.iter().sum();
                            let sum_dx: f64 = dxhat.iter().zip(xh).map(|(a, b)| a * b).sum();
                            let k = inv_std[i] / c as f64;
                            for (j, o) in dx.row_mut(i).iter_mut().enumerate() {
                                *o = k * (c as f64 * dxhat[j] - sum_d - xh[j] * sum_dx);
                            }
                        }
                        accumulate(&mut grads, *x, dx);
                    }
                }
                Op::Gelu(a) => {
                    let d = zip_map(&g, self.value(*a), |gv, x| gv * gelu_grad(x));
                    accumulate(&mut grads, *a, d);
                }
                Op::Silu(a) => {
                    let d = zip_map(&g, self.value(*a), |gv, x| {
                        let s = sigmoid(x);
                        gv * (s + x * s * (1.0 - s))
                    });
                    accumulate(&mut grads, *a, d);
                }
                Op::Softmax(a) => {
                    let y = self.value(Var(i));
                    let mut d = Mat::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let inner: f64 = g.row(r).iter().zip(y.row(r)).map(|(a, b)| a * b).sum();
                        for ((o, gv), yv) in d.row_mut(r).iter_mut().zip(g.row(r)).zip(y.row(r)) {
                            *o = yv * (gv - inner);
                        }
                    }
                    accumulate(&mut grads, *a, d);
                }
                Op::Attention {
                    q,
                    k,
                    v,
                    heads,
                    cache,
                } => {
                    let (dq, dk, dv) = attention::backward(
                        self.value(*q),
                        self.value(*k),
                        self.value(*v),
                        *heads,
                        cache,
                        &g,
                    );
                    for (var, d) in [(*q, dq), (*k, dk), (*v, dv)] {
                        if self.needs(var) {
                            accumulate(&mut grads, var, d);
                        }
                    }
                }
                Op::GatherRows { src, idx } => {
                    let (r, c) = self.shape(*src);
                    let mut d = Mat::zeros(r, c);
                    for (o, &src_row) in idx.iter().enumerate() {
                        for (dv, gv) in d.row_mut(src_row).iter_mut().zip(g.row(o)) {
                            *dv += gv;
                        }
                    }
                    accumulate(&mut grads, *src, d);
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let (r, c) = self.shape(p);
                        if self.needs(p) {
                            let slice = g.data()[offset * c..(offset + r) * c].to_vec();
                            accumulate(&mut grads, p, Mat::from_vec(r, c, slice)?);
                        }
                        offset += r;
                    }
                }
                Op::SliceCols { x, start } => {
                    let (r, c) = self.shape(*x);
                    let mut d = Mat::zeros(r, c);
                    for row in 0..r {
                        let gr = g.row(row);
                        d.row_mut(row)[*start..*start + gr.len()].copy_from_slice(gr);
                    }
                    accumulate(&mut grads, *x, d);
                }
                Op::Mse(p, t) => {
                    let (pv, tv) = (self.value(*p), self.value(*t));
                    let k = 2.0 * g.data()[0] / pv.len().max(1) as f64;
                    let diff = zip_map(pv, tv, |a, b| k * (a - b));
                    if self.needs(*p) {
                        accumulate(&mut grads, *p, diff.clone());
                    }
                    if self.needs(*t) {
                        accumulate(&mut grads, *t, diff.map(|v| -v));
                    }
                }
                Op::Sum(a) => {
                    let (r, c) = self.shape(*a);
                    accumulate(&mut grads, *a, Mat::filled(r, c, g.data()[0]));
                }
            }
            grads[i] = Some(g);
        }

        // Parameters that were used but received no signal get explicit zeros.
        for node in &self.nodes {
            if let (Op::Param(id), true) = (&node.op, node.needs_grad) {
                params.entry(*id).or_insert_with(|| {
                    let m = self.store.expect("store").value(*id);
                    Mat::zeros(m.rows(), m.cols())
                });
            }
        }
        Ok(Gradients {
            vars: grads,
            params,
        })
    }
}

fn accumulate(grads: &mut [Option<Mat>], v: Var, d: Mat) {
    match &mut grads[v.0] {
        Some(acc) => acc.add_assign(&d),
        slot => *slot = Some(d),
    }
}

fn column_sums(m: &Mat) -> Mat {
    let mut out = vec![0.0; m.cols()];
    for r in 0..m.rows() {
        for (o, v) in out.iter_mut().zip(m.row(r)) {
            *o += v;
        }
    }
    Mat::row_vector(out)
}

fn hadamard(a: &Mat, b: &Mat) -> Mat {
    zip_map(a, b, |x, y| x * y)
}

fn zip_map(a: &Mat, b: &Mat, f: impl Fn(f64, f64) -> f64) -> Mat {
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Mat::from_vec(a.rows(), a.cols(), data).expect("same shape")
}

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_C: f64 = 0.044715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_K * (x + GELU_C * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_K * (x + GELU_C * x * x * x);
    let th = u.tanh();
    0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * GELU_K * (1.0 + 3.0 * GELU_C * x * x)
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf => "input",
        Op::Param(_) => "param",
        Op::MatMul(..) => "matmul",
        Op::Add(..) => "add",
        Op::Sub(..) => "sub",
        Op::AddRow(..) => "add_row",
        Op::Mul(..) => "mul",
        Op::Scale(..) => "scale",
        Op::AddConst(..) => "add_const",
        Op::LayerNorm { .. } => "layer_norm",
        Op::Gelu(..) => "gelu",
        Op::Silu(..) => "silu",
        Op::Softmax(..) => "softmax",
        Op::Attention { .. } => "attention",
        Op::GatherRows { .. } => "gather_rows",
        Op::ConcatRows(..) => "concat_rows",
        Op::SliceCols { .. } => "slice_cols",
        Op::Mse(..) => "mse",
        Op::Sum(..) => "sum",
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mse_of_identical_inputs_is_zero() {
        let mut g = Graph::standalone();
        let x = g.input(Mat::from_rows(&[[1.0, -2.0], [0.5, 3.0]]).unwrap(), true);
        let l = g.mse(x, x).unwrap();
        assert_eq!(g.scalar(l), 0.0);
    }

    #[test]
    fn softmax_of_constant_is_uniform() {
        let mut g = Graph::standalone();
        let x = g.input(Mat::row_vector(vec![2.5; 4]), false);
        let y = g.softmax(x).unwrap();
        assert_eq!(g.value(y).row(0), &[0.25, 0.25, 0.25, 0.25]);
    }

    #[test]
    fn closed_form_mse_gradient() {
        // d/dw mean((w*x - y)^2) = 2/n * (w*x - y) * x, elementwise
        let (w, x, y) = ([0.7, -1.3], [2.0, 0.5], [1.0, 1.0]);
        let mut g = Graph::standalone();
        let wv = g.input(Mat::row_vector(w.to_vec()), true);
        let xv = g.constant(Mat::row_vector(x.to_vec()));
        let yv = g.constant(Mat::row_vector(y.to_vec()));
        let p = g.mul(wv, xv).unwrap();
        let l = g.mse(p, yv).unwrap();
        let grads = g.backward(l).unwrap();
        let dw = grads.wrt(wv).unwrap();
        for i in 0..2 {
            let want = 2.0 / 2.0 * (w[i] * x[i] - y[i]) * x[i];
            assert!((dw.data()[i] - want).abs() < 1e-10);
        }
    }

    #[test]
    fn constant_has_zero_gradient_contribution() {
        let mut store = ParamStore::new();
        let id = store.constant("w", vec![3], 0.5).unwrap();
        let mut g = Graph::new(&store);
        let w = g.param(id);
        let c = g.constant(Mat::row_vector(vec![1.0, 2.0, 3.0]));
        let _unused = g.add(w, w).unwrap();
        let l = g.sum(c).unwrap();
        let grads = g.backward(l).unwrap();
        assert!(grads.param(id).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut g = Graph::standalone();
        let x = g.input(Mat::zeros(2, 2), true);
        assert!(matches!(g.backward(x), Err(Error::Shape(_))));
    }

    #[test]
    fn finite_checks_flag_overflow() {
        let mut g = Graph::standalone().with_finite_checks(true);
        let x = g.input(Mat::row_vector(vec![1e300]), false);
        assert!(matches!(g.scale(x, 1e300), Err(Error::Numerical(_))));
    }

    #[test]
    fn backward_twice_accumulates_into_store() {
        let mut store = ParamStore::new();
        let id = store.constant("w", vec![2], 1.0).unwrap();
        let grads = {
            let mut g = Graph::new(&store);
            let w = g.param(id);
            let l = g.sum(w).unwrap();
            g.backward(l).unwrap()
        };
        store.accumulate(&grads);
        store.accumulate(&grads);
        assert_eq!(store.get(id).grad.as_ref().unwrap().data(), &[2.0, 2.0]);
    }

    #[test]
    fn causal_attention_ignores_future_positions() {
        let rows: Vec<Vec<f64>> = (0..5)
            .map(|i| (0..4).map(|j| ((i * 4 + j) as f64 * 0.37).sin()).collect())
            .collect();
        let run = |rows: &[Vec<f64>]| {
            let mut g = Graph::standalone();
            let x = g.input(Mat::from_rows(rows).unwrap(), false);
            let y = g.causal_self_attention(x, x, x, 2, &[rows.len()]).unwrap();
            g.value(y).clone()
        };
        let base = run(&rows);
        let mut perturbed = rows.clone();
        perturbed[3] = vec![9.0, -4.0, 2.0, 0.1];
        let out = run(&perturbed);
        for r in 0..3 {
            assert_eq!(base.row(r), out.row(r));
        }
        assert_ne!(base.row(3), out.row(3));
    }
}
