//! Two-class support vector machine trained by sequential minimal
//! optimisation with maximal-violating-pair working-set selection.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SVM_FORMAT_VERSION: u32 = 1;

/// Numerical slack below which a curvature is treated as zero.
const TAU: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Kernel {
    Linear,
    /// `exp(−γ‖x − z‖²)`.
    Rbf { gamma: f64 },
}

impl Kernel {
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        match *self {
            Kernel::Linear => a.iter().zip(b).map(|(x, y)| x * y).sum(),
            Kernel::Rbf { gamma } => {
                let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                (-gamma * d2).exp()
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SvmParams {
    pub c: f64,
    pub kernel: Kernel,
    /// Stop once the maximal KKT violation drops to `tol`.
    pub tol: f64,
    /// Iteration budget in multiples of the training-set size.
    pub max_passes: usize,
}

impl Default for SvmParams {
    fn default() -> Self {
        Self {
            c: 1e-3,
            kernel: Kernel::Linear,
            tol: 1e-3,
            max_passes: 1000,
        }
    }
}

impl SvmParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.c.is_finite() && self.c > 0.0) {
            return Err(Error::InvalidParameter(format!("C must be positive, got {}", self.c)));
        }
        if !(self.tol.is_finite() && self.tol > 0.0) {
            return Err(Error::InvalidParameter(format!("tol must be positive, got {}", self.tol)));
        }
        if self.max_passes == 0 {
            return Err(Error::InvalidParameter("max_passes must be positive".into()));
        }
        if let Kernel::Rbf { gamma } = self.kernel {
            if !(gamma.is_finite() && gamma > 0.0) {
                return Err(Error::InvalidParameter(format!("gamma must be positive, got {gamma}")));
            }
        }
        Ok(())
    }
}

/// Trained SVM. Inputs are raw feature rows; the model keeps the retained
/// columns and their training-fold z-score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub params: SvmParams,
    pub input_dim: usize,
    /// Columns with non-zero training variance, ascending.
    pub retained: Vec<usize>,
    pub dropped: Vec<usize>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Standardized support vectors, `n_sv × retained.len()` row-major.
    pub support_vectors: Vec<f64>,
    /// `α_i·y_i` per support vector.
    pub coef: Vec<f64>,
    pub bias: f64,
    /// Training iterations performed and whether the tolerance was reached.
    pub iterations: usize,
    pub converged: bool,
    #[serde(skip)]
    primal: Option<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct SvmFile {
    format_version: u32,
    kind: String,
    #[serde(flatten)]
    model: SvmModel,
}

/// Raw dual solution, exposed for auditing.
#[derive(Debug, Clone, PartialEq)]
pub struct DualSolution {
    pub alpha: Vec<f64>,
    pub bias: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// SMO on already standardized rows (`n × dims`), labels in {−1, +1}.
pub fn smo_solve(x: &[f64], dims: usize, y: &[i8], params: &SvmParams) -> Result<DualSolution> {
    params.validate()?;
    let n = y.len();
    if dims == 0 || x.len() != n * dims {
        return Err(Error::DimensionMismatch {
            expected: n * dims,
            found: x.len(),
        });
    }
    if y.iter().any(|&v| v != 1 && v != -1) {
        return Err(Error::Validation("SVM labels must be -1 or +1".into()));
    }
    if !(y.contains(&1) && y.contains(&-1)) {
        return Err(Error::Validation("SVM training needs both classes".into()));
    }
    let row = |i: usize| &x[i * dims..(i + 1) * dims];
    let k = params.kernel;
    let c = params.c;
    let diag: Vec<f64> = (0..n).map(|i| k.eval(row(i), row(i))).collect();
    let yf: Vec<f64> = y.iter().map(|&v| f64::from(v)).collect();

    let mut alpha = vec![0.0; n];
    // gradient of ½αᵀQα − eᵀα
    let mut grad = vec![-1.0; n];
    let max_iter = params.max_passes.saturating_mul(n.max(1));
    let mut iterations = 0;
    let mut converged = false;
    let (mut ki, mut kj) = (vec![0.0; n], vec![0.0; n]);
    let (mut m, mut big_m);
    loop {
        // maximal violating pair
        let (mut i, mut j) = (usize::MAX, usize::MAX);
        m = f64::NEG_INFINITY;
        big_m = f64::INFINITY;
        for t in 0..n {
            let v = -yf[t] * grad[t];
            let up = (y[t] == 1 && alpha[t] < c) || (y[t] == -1 && alpha[t] > 0.0);
            let low = (y[t] == -1 && alpha[t] < c) || (y[t] == 1 && alpha[t] > 0.0);
            if up && v > m {
                m = v;
                i = t;
            }
            if low && v < big_m {
                big_m = v;
                j = t;
            }
        }
        if m - big_m <= params.tol {
            converged = true;
            break;
        }
        if iterations >= max_iter {
            break;
        }
        iterations += 1;

        for t in 0..n {
            ki[t] = k.eval(row(t), row(i));
            kj[t] = k.eval(row(t), row(j));
        }
        let eta = (diag[i] + diag[j] - 2.0 * ki[j]).max(TAU);
        let mut lambda = (m - big_m) / eta;
        let cap_i = if y[i] == 1 { c - alpha[i] } else { alpha[i] };
        let cap_j = if y[j] == 1 { alpha[j] } else { c - alpha[j] };
        lambda = lambda.min(cap_i).min(cap_j);

        alpha[i] += yf[i] * lambda;
        alpha[j] -= yf[j] * lambda;
        for (a, cap) in [(i, cap_i), (j, cap_j)] {
            if lambda == cap || alpha[a] < 0.0 || alpha[a] > c {
                // snap to the bound that was hit
                alpha[a] = if alpha[a] * 2.0 > c { c } else { 0.0 };
            }
        }
        for t in 0..n {
            grad[t] += yf[t] * lambda * (ki[t] - kj[t]);
        }
    }
    if !grad.iter().all(|g| g.is_finite()) {
        return Err(Error::Numeric("SMO gradient became non-finite".into()));
    }
    let bias = if m.is_finite() && big_m.is_finite() {
        (m + big_m) / 2.0
    } else if m.is_finite() {
        m
    } else {
        big_m
    };
    Ok(DualSolution {
        alpha,
        bias,
        iterations,
        converged,
    })
}

/// Standardizes on the training rows, drops zero-variance columns and runs
/// SMO. `features` is `n × dims` row-major.
pub fn smo_train(features: &[f64], dims: usize, labels: &[i8], params: &SvmParams) -> Result<SvmModel> {
    let n = labels.len();
    if dims == 0 || features.len() != n * dims {
        return Err(Error::DimensionMismatch {
            expected: n * dims,
            found: features.len(),
        });
    }
    if n == 0 {
        return Err(Error::EmptyInput("SVM training set"));
    }
    if features.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation("non-finite SVM feature".into()));
    }
    let mut mean = vec![0.0; dims];
    for r in features.chunks_exact(dims) {
        mean.iter_mut().zip(r).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut var = vec![0.0; dims];
    for r in features.chunks_exact(dims) {
        for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let std: Vec<f64> = var.iter().map(|s| (s / n as f64).sqrt()).collect();
    let (retained, dropped): (Vec<usize>, Vec<usize>) = (0..dims).partition(|&j| std[j] > 0.0);
    if retained.is_empty() {
        return Err(Error::Validation("every SVM feature is constant".into()));
    }
    let mean: Vec<f64> = retained.iter().map(|&j| mean[j]).collect();
    let std: Vec<f64> = retained.iter().map(|&j| std[j]).collect();
    let d = retained.len();
    let mut z = Vec::with_capacity(n * d);
    for r in features.chunks_exact(dims) {
        for (k, &j) in retained.iter().enumerate() {
            z.push((r[j] - mean[k]) / std[k]);
        }
    }
    let sol = smo_solve(&z, d, labels, params)?;
    let mut support_vectors = Vec::new();
    let mut coef = Vec::new();
    for (i, &a) in sol.alpha.iter().enumerate() {
        if a > 0.0 {
            support_vectors.extend_from_slice(&z[i * d..(i + 1) * d]);
            coef.push(a * f64::from(labels[i]));
        }
    }
    let mut model = SvmModel {
        params: *params,
        input_dim: dims,
        retained,
        dropped,
        mean,
        std,
        support_vectors,
        coef,
        bias: sol.bias,
        iterations: sol.iterations,
        converged: sol.converged,
        primal: None,
    };
    model.rebuild_primal();
    Ok(model)
}

impl SvmModel {
    fn rebuild_primal(&mut self) {
        self.primal = match self.params.kernel {
            Kernel::Linear => {
                let d = self.retained.len();
                let mut w = vec![0.0; d];
                for (sv, &a) in self.support_vectors.chunks_exact(d).zip(&self.coef) {
                    w.iter_mut().zip(sv).for_each(|(w, x)| *w += a * x);
                }
                Some(w)
            }
            Kernel::Rbf { .. } => None,
        };
    }

    pub fn num_support_vectors(&self) -> usize {
        self.coef.len()
    }

    /// Standardized retained columns of one raw row.
    pub fn transform(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim,
                found: x.len(),
            });
        }
        Ok(self
            .retained
            .iter()
            .enumerate()
            .map(|(k, &j)| (x[j] - self.mean[k]) / self.std[k])
            .collect())
    }

    pub fn decision_value(&self, x: &[f64]) -> Result<f64> {
        let z = self.transform(x)?;
        let s = match &self.primal {
            Some(w) => w.iter().zip(&z).map(|(a, b)| a * b).sum::<f64>(),
            None => {
                let d = z.len();
                self.support_vectors
                    .chunks_exact(d)
                    .zip(&self.coef)
                    .map(|(sv, &a)| a * self.params.kernel.eval(sv, &z))
                    .sum()
            }
        };
        Ok(s + self.bias)
    }

    pub fn to_json(&self) -> Result<String> {
        let file = SvmFile {
            format_version: SVM_FORMAT_VERSION,
            kind: "svm".into(),
            model: self.clone(),
        };
        let mut s = serde_json::to_string_pretty(&file)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: SvmFile = serde_json::from_str(text)?;
        if file.format_version != SVM_FORMAT_VERSION || file.kind != "svm" {
            return Err(Error::Validation(format!(
                "unsupported model file (kind {}, version {})",
                file.kind, file.format_version
            )));
        }
        let mut m = file.model;
        let d = m.retained.len();
        if m.mean.len() != d
            || m.std.len() != d
            || d == 0
            || m.support_vectors.len() != m.coef.len() * d
            || m.retained.iter().any(|&j| j >= m.input_dim)
            || m.std.iter().any(|&s| !(s > 0.0))
        {
            return Err(Error::Validation("inconsistent SVM model file".into()));
        }
        m.params.validate()?;
        m.rebuild_primal();
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_json(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

/// Class in {−1, +1} and the decision value. A zero decision value maps to +1.
pub fn svm_predict(model: &SvmModel, x: &[f64]) -> Result<(i8, f64)> {
    let v = model.decision_value(x)?;
    Ok((if v >= 0.0 { 1 } else { -1 }, v))
}
