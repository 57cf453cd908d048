//! Multi-head scaled dot-product attention with per-query key masks.

use std::ops::Range;

use super::mat::Mat;
use crate::error::{Error, Result};

/// Which keys each query row may attend to, as a union of index ranges.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KeyMask {
    n_keys: usize,
    rows: Vec<Vec<Range<usize>>>,
}

impl KeyMask {
    pub fn new(n_keys: usize, rows: Vec<Vec<Range<usize>>>) -> Result<Self> {
        for (i, ranges) in rows.iter().enumerate() {
            if ranges.iter().all(|r| r.is_empty()) {
                return Err(Error::Shape(format!("query row {i} has no visible keys")));
            }
            if ranges.iter().any(|r| r.end > n_keys) {
                return Err(Error::Shape(format!(
                    "query row {i} references a key beyond {n_keys}"
                )));
            }
        }
        Ok(KeyMask { n_keys, rows })
    }

    /// Every query sees every key.
    pub fn full(n_queries: usize, n_keys: usize) -> Result<Self> {
        Self::new(n_keys, vec![vec![0..n_keys]; n_queries])
    }

    /// Lower-triangular mask over a single sequence.
    pub fn causal(n: usize) -> Self {
        Self::causal_segments(&[n])
    }

    /// Block-diagonal causal mask over back-to-back sequences of the given
    /// lengths: a row only sees earlier rows of its own sequence.
    pub fn causal_segments(lengths: &[usize]) -> Self {
        let total = lengths.iter().sum();
        let mut rows = Vec::with_capacity(total);
        let mut start = 0;
        for &len in lengths {
            for j in 0..len {
                rows.push(vec![start..start + j + 1]);
            }
            start += len;
        }
        KeyMask {
            n_keys: total,
            rows,
        }
    }

    pub fn n_queries(&self) -> usize {
        self.rows.len()
    }

    pub fn n_keys(&self) -> usize {
        self.n_keys
    }

    pub fn visible(&self, row: usize) -> impl Iterator<Item = usize> + '_ {
        self.rows[row].iter().flat_map(|r| r.clone())
    }
}

/// Saved softmax weights, indexed `[head][row]` over that row's visible keys.
#[derive(Clone, Debug)]
pub(crate) struct AttentionCache {
    pub probs: Vec<Vec<Vec<f64>>>,
    pub keys: Vec<Vec<usize>>,
}

pub(crate) fn check_shapes(q: &Mat, k: &Mat, v: &Mat, heads: usize, mask: &KeyMask) -> Result<()> {
    if heads == 0 || !q.cols().is_multiple_of(heads) {
        return Err(Error::Shape(format!(
            "width {} not divisible into {heads} heads",
            q.cols()
        )));
    }
    if k.cols() != q.cols() || v.cols() != q.cols() {
        return Err(Error::Shape("query/key/value widths differ".into()));
    }
    if k.rows() != v.rows() || k.rows() != mask.n_keys() {
        return Err(Error::Shape(format!(
            "{} keys, {} values, mask over {}",
            k.rows(),
            v.rows(),
            mask.n_keys()
        )));
    }
    if q.rows() != mask.n_queries() {
        return Err(Error::Shape(format!(
            "{} queries but mask has {} rows",
            q.rows(),
            mask.n_queries()
        )));
    }
    Ok(())
}

pub(crate) fn forward(
    q: &Mat,
    k: &Mat,
    v: &Mat,
    heads: usize,
    mask: &KeyMask,
) -> (Mat, AttentionCache) {
    let width = q.cols();
    let dh = width / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let keys: Vec<Vec<usize>> = (0..q.rows()).map(|i| mask.visible(i).collect()).collect();
    let mut out = Mat::zeros(q.rows(), width);
    let mut probs = Vec::with_capacity(heads);
    for h in 0..heads {
        let cols = h * dh..(h + 1) * dh;
        let mut head_probs = Vec::with_capacity(q.rows());
        for (i, visible) in keys.iter().enumerate() {
            let qi = &q.row(i)[cols.clone()];
            let mut scores: Vec<f64> = visible
                .iter()
                .map(|&j| dot(qi, &k.row(j)[cols.clone()]) * scale)
                .collect();
            softmax_in_place(&mut scores);
            let orow = &mut out.row_mut(i)[cols.clone()];
            for (&j, &p) in visible.iter().zip(&scores) {
                for (o, &vv) in orow.iter_mut().zip(&v.row(j)[cols.clone()]) {
                    *o += p * vv;
                }
            }
            head_probs.push(scores);
        }
        probs.push(head_probs);
    }
    (out, AttentionCache { probs, keys })
}

pub(crate) fn backward(
    q: &Mat,
    k: &Mat,
    v: &Mat,
    heads: usize,
    cache: &AttentionCache,
    dout: &Mat,
) -> (Mat, Mat, Mat) {
    let width = q.cols();
    let dh = width / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut dq = Mat::zeros(q.rows(), width);
    let mut dk = Mat::zeros(k.rows(), width);
    let mut dv = Mat::zeros(v.rows(), width);
    for h in 0..heads {
        let cols = h * dh..(h + 1) * dh;
        for (i, visible) in cache.keys.iter().enumerate() {
            let p = &cache.probs[h][i];
            let doi = &dout.row(i)[cols.clone()];
            let dp: Vec<f64> = visible
                .iter()
                .map(|&j| dot(doi, &v.row(j)[cols.clone()]))
                .collect();
            let inner: f64 = p.iter().zip(&dp).map(|(a, b)| a * b).sum();
            for (idx, &j) in visible.iter().enumerate() {
                let pj = p[idx];
                for (d, &g) in dv.row_mut(j)[cols.clone()].iter_mut().zip(doi) {
                    *d += pj * g;
                }
                let ds = pj * (dp[idx] - inner) * scale;
                if ds != 0.0 {
                    for (d, kv) in dq.row_mut(i)[cols.clone()]
                        .iter_mut()
                        .zip(&k.row(j)[cols.clone()])
                    {
                        *d += ds * kv;
                    }
                    for (d, qv) in dk.row_mut(j)[cols.clone()]
                        .iter_mut()
                        .zip(&q.row(i)[cols.clone()])
                    {
                        *d += ds * qv;
                    }
                }
            }
        }
    }
    (dq, dk, dv)
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn softmax_in_place(xs: &mut [f64]) {
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in xs.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in xs.iter_mut() {
        *x /= sum;
    }
}
