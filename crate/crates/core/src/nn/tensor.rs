use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::mat::Mat;
use crate::error::{Error, Result};

/// Handle to a parameter registered in a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A named parameter tensor of rank 1 or 2.
///
/// Rank-1 tensors are stored as a single row so every op sees a matrix.
#[derive(Clone, Debug)]
pub struct Tensor {
    pub name: String,
    shape: Vec<usize>,
    value: Mat,
    pub grad: Option<Mat>,
    pub requires_grad: bool,
    /// Whether decoupled weight decay applies.
    pub decay: bool,
}

impl Tensor {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let (rows, cols) = match shape.as_slice() {
            [n] => (1, *n),
            [r, c] => (*r, *c),
            _ => {
                return Err(Error::Shape(format!(
                    "parameters must have rank 1 or 2, got {shape:?}"
                )))
            }
        };
        if shape.contains(&0) {
            return Err(Error::Shape(format!("zero-sized dimension in {shape:?}")));
        }
        let value = Mat::from_vec(rows, cols, data)?;
        Ok(Tensor {
            name: name.into(),
            decay: shape.len() == 2,
            shape,
            value,
            grad: None,
            requires_grad: true,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn value(&self) -> &Mat {
        &self.value
    }

    pub fn value_mut(&mut self) -> &mut Mat {
        &mut self.value
    }

    pub fn numel(&self) -> usize {
        self.value.len()
    }
}

/// Owns every trainable tensor of a model, addressed by [`ParamId`].
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    tensors: Vec<Tensor>,
    by_name: BTreeMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, tensor: Tensor) -> Result<ParamId> {
        if self.by_name.contains_key(&tensor.name) {
            return Err(Error::Shape(format!(
                "duplicate parameter `{}`",
                tensor.name
            )));
        }
        let id = ParamId(self.tensors.len());
        self.by_name.insert(tensor.name.clone(), id);
        self.tensors.push(tensor);
        Ok(id)
    }

    /// Registers a tensor drawn from N(0, std²).
    pub fn normal<R: Rng>(
        &mut self,
        name: &str,
        shape: Vec<usize>,
        std: f64,
        rng: &mut R,
    ) -> Result<ParamId> {
        let n = shape.iter().product();
        let dist = Normal::new(0.0, std).map_err(|e| Error::Config(e.to_string()))?;
        let data = (0..n).map(|_| dist.sample(rng)).collect();
        self.insert(Tensor::new(name, shape, data)?)
    }

    pub fn constant(&mut self, name: &str, shape: Vec<usize>, value: f64) -> Result<ParamId> {
        let n = shape.iter().product();
        let mut t = Tensor::new(name, shape, vec![value; n])?;
        t.decay = false;
        self.insert(t)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn value(&self, id: ParamId) -> &Mat {
        &self.tensors[id.0].value
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.tensors
            .iter()
            .enumerate()
            .map(|(i, t)| (ParamId(i), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (ParamId, &mut Tensor)> {
        self.tensors
            .iter_mut()
            .enumerate()
            .map(|(i, t)| (ParamId(i), t))
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn zero_grad(&mut self) {
        for t in &mut self.tensors {
            t.grad = None;
        }
    }

    /// Adds `grads` into each parameter's `.grad`, allocating on first use.
    pub fn accumulate(&mut self, grads: &super::graph::Gradients) {
        for (id, g) in grads.params() {
            let t = &mut self.tensors[id.0];
            match &mut t.grad {
                Some(acc) => acc.add_assign(g),
                None => t.grad = Some(g.clone()),
            }
        }
    }

    /// Global L2 norm over all populated gradients.
    pub fn grad_norm(&self) -> f64 {
        self.tensors
            .iter()
            .filter_map(|t| t.grad.as_ref())
            .map(Mat::sum_sq)
            .sum::<f64>()
            .sqrt()
    }

    /// Scales gradients so their global norm is at most `max_norm`; returns
    /// the norm before clipping.
    pub fn clip_grad_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.grad_norm();
        if norm > max_norm && norm > 0.0 {
            let s = max_norm / norm;
            for g in self.tensors.iter_mut().filter_map(|t| t.grad.as_mut()) {
                g.data_mut().iter_mut().for_each(|v| *v *= s);
            }
        }
        norm
    }

    /// Rounds every value through `f32`.
    pub fn round_to_f32(&mut self) {
        for t in &mut self.tensors {
            t.value
                .data_mut()
                .iter_mut()
                .for_each(|v| *v = *v as f32 as f64);
        }
    }

    pub(crate) fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }
}
