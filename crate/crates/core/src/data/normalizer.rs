//! Per-dimension robust scaler: median centre, IQR/1.349 scale. A
//! dimension that is mostly one value (IQR zero) but not constant falls
//! back to its standard deviation.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::codec::ConceptEmbedding;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"CLMN";
pub const SCALE_FLOOR: f64 = 1e-6;
/// IQR of the standard normal.
const IQR_TO_SIGMA: f64 = 1.349;

#[derive(Clone, Debug, PartialEq)]
pub struct Normalizer {
    center: Vec<f64>,
    scale: Vec<f64>,
}

/// Uniform reservoir sample of at most `cap` items (Algorithm R).
pub struct Reservoir<T> {
    cap: usize,
    seen: u64,
    items: Vec<T>,
    rng: ChaCha8Rng,
}

impl<T> Reservoir<T> {
    pub fn new(cap: usize, seed: u64) -> Self {
        Reservoir {
            cap,
            seen: 0,
            items: Vec::with_capacity(cap.min(1 << 16)),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn push(&mut self, item: T) {
        self.seen += 1;
        if self.items.len() < self.cap {
            self.items.push(item);
        } else if self.cap > 0 {
            let j = self.rng.gen_range(0..self.seen);
            if (j as usize) < self.cap {
                self.items[j as usize] = item;
            }
        }
    }

    pub fn seen(&self) -> u64 {
        self.seen
    }

    pub fn into_items(self) -> Vec<T> {
        self.items
    }
}

/// Linear-interpolation percentile of sorted data, `q` in `[0, 1]`.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn std_dev(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    (xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n).sqrt()
}

/// Fits on a reservoir sample of at most `sample_cap` embeddings from the
/// stream. Stored statistics are rounded to `f32` so saved files reload
/// exactly.
pub fn fit_normalizer<'a, I>(stream: I, sample_cap: usize, seed: u64) -> Result<Normalizer>
where
    I: IntoIterator<Item = &'a ConceptEmbedding>,
{
    let mut res = Reservoir::new(sample_cap, seed);
    let mut dim = None;
    for e in stream {
        match dim {
            None => dim = Some(e.dim()),
            Some(d) if d != e.dim() => {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: e.dim(),
                })
            }
            _ => {}
        }
        res.push(e);
    }
    let sample = res.into_items();
    if sample.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "normalizer needs at least 2 embeddings, got {}",
            sample.len()
        )));
    }
    let d = dim.unwrap_or(0);
    let mut center = Vec::with_capacity(d);
    let mut scale = Vec::with_capacity(d);
    let mut column = Vec::with_capacity(sample.len());
    for j in 0..d {
        column.clear();
        column.extend(sample.iter().map(|e| e.values()[j] as f64));
        column.sort_by(f64::total_cmp);
        let iqr = percentile(&column, 0.75) - percentile(&column, 0.25);
        let spread = if iqr > 0.0 {
            iqr / IQR_TO_SIGMA
        } else {
            std_dev(&column)
        };
        center.push(percentile(&column, 0.5) as f32 as f64);
        scale.push(spread.max(SCALE_FLOOR) as f32 as f64);
    }
    Normalizer::new(center, scale)
}

impl Normalizer {
    pub fn new(center: Vec<f64>, scale: Vec<f64>) -> Result<Self> {
        if center.len() != scale.len() {
            return Err(Error::DimensionMismatch {
                expected: center.len(),
                got: scale.len(),
            });
        }
        if scale.iter().any(|&s| !(s > 0.0 && s.is_finite()))
            || center.iter().any(|c| !c.is_finite())
        {
            return Err(Error::Numerical(
                "normalizer needs finite centres and positive scales".into(),
            ));
        }
        Ok(Normalizer { center, scale })
    }

    /// Centre 0, scale 1.
    pub fn identity(dim: usize) -> Self {
        Normalizer {
            center: vec![0.0; dim],
            scale: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    pub fn scale(&self) -> &[f64] {
        &self.scale
    }

    fn check(&self, n: usize) -> Result<()> {
        if n != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: n,
            });
        }
        Ok(())
    }

    /// `(e − centre) / scale`
    pub fn apply(&self, e: &ConceptEmbedding) -> Result<Vec<f64>> {
        self.apply_f64(&e.to_f64())
    }

    pub fn apply_f64(&self, e: &[f64]) -> Result<Vec<f64>> {
        self.check(e.len())?;
        Ok(e.iter()
            .zip(&self.center)
            .zip(&self.scale)
            .map(|((v, c), s)| (v - c) / s)
            .collect())
    }

    /// `e′ · scale + centre`
    pub fn invert(&self, e: &[f64]) -> Result<Vec<f64>> {
        self.check(e.len())?;
        Ok(e.iter()
            .zip(&self.center)
            .zip(&self.scale)
            .map(|((v, c), s)| v * s + c)
            .collect())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 8 * self.dim());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.dim() as u32).to_le_bytes());
        for v in self.center.iter().chain(&self.scale) {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        if bytes.len() < 8 || &bytes[..4] != MAGIC {
            return Err(Error::format(path, "missing CLMN header"));
        }
        let d = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
        if bytes.len() != 8 + 8 * d {
            return Err(Error::format(
                path,
                format!(
                    "expected {} bytes for dimension {d}, found {}",
                    8 + 8 * d,
                    bytes.len()
                ),
            ));
        }
        let vals: Vec<f64> = bytes[8..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect();
        Normalizer::new(vals[..d].to_vec(), vals[d..].to_vec())
            .map_err(|e| Error::format(path, e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())
            .map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes =
            std::fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::from_bytes(&bytes, path)
    }
}
