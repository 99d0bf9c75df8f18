use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-feature z-score transform fitted on a training fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    /// Population standard deviation; zero for constant features.
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Fits on row-major `rows × dims` data.
    pub fn fit(values: &[f64], dims: usize) -> Result<Self> {
        if dims == 0 || values.is_empty() || !values.len().is_multiple_of(dims) {
            return Err(Error::EmptyInput("standardization data"));
        }
        let n = (values.len() / dims) as f64;
        let mut mean = vec![0.0; dims];
        for row in values.chunks_exact(dims) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; dims];
        for row in values.chunks_exact(dims) {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var.into_iter().map(|s| (s / n).sqrt()).collect();
        Ok(Self { mean, std })
    }

    pub fn dims(&self) -> usize {
        self.mean.len()
    }

    /// `(x − mean) / std`, leaving constant features centred but unscaled.
    pub fn apply(&self, values: &[f64]) -> Vec<f64> {
        let d = self.dims();
        let mut out = values.to_vec();
        for row in out.chunks_exact_mut(d) {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *v -= m;
                if *s > 0.0 {
                    *v /= s;
                }
            }
        }
        out
    }
}
