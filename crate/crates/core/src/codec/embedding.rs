use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A fixed-dimension, finite real vector representing one sentence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f32>", into = "Vec<f32>")]
pub struct ConceptEmbedding(Vec<f32>);

impl ConceptEmbedding {
    pub fn new(values: Vec<f32>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::DimensionMismatch {
                expected: 1,
                got: 0,
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!(
                "embedding element {i} is {}",
                values[i]
            )));
        }
        Ok(ConceptEmbedding(values))
    }

    pub fn from_f64(values: &[f64]) -> Result<Self> {
        Self::new(values.iter().map(|&v| v as f32).collect())
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.0
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.0.iter().map(|&v| v as f64).collect()
    }

    pub fn norm(&self) -> f64 {
        self.0
            .iter()
            .map(|&v| (v as f64) * (v as f64))
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&v| v == 0.0)
    }
}

impl TryFrom<Vec<f32>> for ConceptEmbedding {
    type Error = Error;
    fn try_from(v: Vec<f32>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<ConceptEmbedding> for Vec<f32> {
    fn from(e: ConceptEmbedding) -> Self {
        e.0
    }
}

fn check_dims(a: &ConceptEmbedding, b: &ConceptEmbedding) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    Ok(())
}

/// Cosine similarity, clamped to `[-1, 1]`.
pub fn cosine(a: &ConceptEmbedding, b: &ConceptEmbedding) -> Result<f64> {
    check_dims(a, b)?;
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(Error::DegenerateEmbedding);
    }
    let dot: f64 = a
        .values()
        .iter()
        .zip(b.values())
        .map(|(&x, &y)| x as f64 * y as f64)
        .sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Euclidean distance.
pub fn l2(a: &ConceptEmbedding, b: &ConceptEmbedding) -> Result<f64> {
    check_dims(a, b)?;
    Ok(a.values()
        .iter()
        .zip(b.values())
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum::<f64>()
        .sqrt())
}
