use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::lstm::{concat_steps, lstm_backward, lstm_forward_trace, sigmoid, LstmLayerParams, LstmTrace};
use crate::error::{Error, Result};
use crate::norm::Standardizer;

pub const MODEL_FORMAT_VERSION: u32 = 1;
pub const INIT_RANGE: f64 = 0.1;

/// Architecture and training hyper-parameters of a recurrent classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub input_dim: usize,
    /// Cells per hidden layer, e.g. `[216, 216, 216]`.
    pub hidden_layout: Vec<usize>,
    pub bidirectional: bool,
    pub output_dim: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub max_epochs: usize,
    pub patience: usize,
    pub subsequence_len: usize,
    #[serde(default = "default_true")]
    pub peepholes: bool,
}

fn default_true() -> bool {
    true
}

impl NetworkSpec {
    /// Defaults: two outputs, learning rate 1e-5, 100 epochs, patience 10,
    /// 100-frame subsequences, peepholes on.
    pub fn new(input_dim: usize, hidden_layout: Vec<usize>, bidirectional: bool) -> Self {
        Self {
            input_dim,
            hidden_layout,
            bidirectional,
            output_dim: 2,
            learning_rate: 1e-5,
            seed: 0,
            max_epochs: 100,
            patience: 10,
            subsequence_len: 100,
            peepholes: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0
            || self.output_dim == 0
            || self.hidden_layout.is_empty()
            || self.hidden_layout.contains(&0)
        {
            return Err(Error::InvalidParameter(format!(
                "network sizes must be >= 1 (input {}, layout {:?}, output {})",
                self.input_dim, self.hidden_layout, self.output_dim
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.subsequence_len == 0 {
            return Err(Error::InvalidParameter("subsequence length must be >= 1".into()));
        }
        Ok(())
    }

    pub fn directions(&self) -> usize {
        if self.bidirectional {
            2
        } else {
            1
        }
    }
}

/// All trainable tensors. Also used to hold gradients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RnnParams {
    /// One entry per hidden layer; each holds one (forward) or two
    /// (forward, backward) directions.
    pub layers: Vec<Vec<LstmLayerParams>>,
    /// Output weights, `output_dim × top_width`, row-major.
    pub out_w: Vec<f64>,
    pub out_b: Vec<f64>,
}

impl RnnParams {
    fn zeros(spec: &NetworkSpec) -> Self {
        let dirs = spec.directions();
        let mut layers = Vec::with_capacity(spec.hidden_layout.len());
        let mut width = spec.input_dim;
        for &h in &spec.hidden_layout {
            layers.push((0..dirs).map(|_| LstmLayerParams::zeros(width, h)).collect());
            width = h * dirs;
        }
        Self {
            layers,
            out_w: vec![0.0; spec.output_dim * width],
            out_b: vec![0.0; spec.output_dim],
        }
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.for_each_tensor_mut(|t| t.iter_mut().for_each(|v| *v = 0.0));
        z
    }

    pub fn for_each_tensor(&self, mut f: impl FnMut(&[f64])) {
        for layer in &self.layers {
            for dir in layer {
                dir.tensors().into_iter().for_each(|t| f(t));
            }
        }
        f(&self.out_w);
        f(&self.out_b);
    }

    pub fn for_each_tensor_mut(&mut self, mut f: impl FnMut(&mut Vec<f64>)) {
        for layer in &mut self.layers {
            for dir in layer {
                dir.tensors_mut().into_iter().for_each(&mut f);
            }
        }
        f(&mut self.out_w);
        f(&mut self.out_b);
    }

    pub fn num_params(&self) -> usize {
        let mut n = 0;
        self.for_each_tensor(|t| n += t.len());
        n
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        self.for_each_tensor(|t| out.extend_from_slice(t));
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::DimensionMismatch {
                expected: self.num_params(),
                found: flat.len(),
            });
        }
        let mut offset = 0;
        self.for_each_tensor_mut(|t| {
            let n = t.len();
            t.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        });
        Ok(())
    }

    /// `self += alpha · other`.
    pub fn axpy(&mut self, alpha: f64, other: &RnnParams) {
        let flat = other.to_flat();
        let mut offset = 0;
        self.for_each_tensor_mut(|t| {
            for (v, g) in t.iter_mut().zip(&flat[offset..]) {
                *v += alpha * g;
            }
            offset += t.len();
        });
    }

    fn zero_peepholes(&mut self) {
        for layer in &mut self.layers {
            for dir in layer {
                dir.peep.iter_mut().for_each(|v| *v = 0.0);
            }
        }
    }

    fn all_finite(&self) -> bool {
        let mut ok = true;
        self.for_each_tensor(|t| ok &= t.iter().all(|v| v.is_finite()));
        ok
    }
}

/// Stacked LSTM/BLSTM network with a logistic output layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RnnModel {
    pub spec: NetworkSpec,
    pub params: RnnParams,
    /// Applied to inputs before the first layer when present.
    #[serde(default)]
    pub input_norm: Option<Standardizer>,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    kind: String,
    #[serde(flatten)]
    model: RnnModel,
}

/// Uniform `[-0.1, 0.1]` weights from a generator seeded with `spec.seed`; zero biases.
pub fn init_model(spec: &NetworkSpec) -> Result<RnnModel> {
    spec.validate()?;
    let mut params = RnnParams::zeros(spec);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut fill = |t: &mut Vec<f64>| {
        t.iter_mut()
            .for_each(|v| *v = rng.random_range(-INIT_RANGE..=INIT_RANGE))
    };
    for layer in &mut params.layers {
        for dir in layer.iter_mut() {
            fill(&mut dir.w);
            fill(&mut dir.r);
            if spec.peepholes {
                fill(&mut dir.peep);
            }
        }
    }
    fill(&mut params.out_w);
    Ok(RnnModel {
        spec: spec.clone(),
        params,
        input_norm: None,
    })
}

/// Everything recorded by a forward pass that the backward pass needs.
pub struct ForwardTrace {
    /// Input to each layer (`T × width`), the first being the network input.
    layer_inputs: Vec<Vec<f64>>,
    traces: Vec<Vec<LstmTrace>>,
    top: Vec<f64>,
    /// `T × output_dim` posteriors.
    pub outputs: Vec<f64>,
}

impl RnnModel {
    pub fn num_params(&self) -> usize {
        self.params.num_params()
    }

    pub fn top_width(&self) -> usize {
        self.spec.hidden_layout.last().copied().unwrap_or(0) * self.spec.directions()
    }

    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        let expected = RnnParams::zeros(&self.spec);
        let same_shape = expected.layers.len() == self.params.layers.len()
            && expected.layers.iter().zip(&self.params.layers).all(|(a, b)| {
                a.len() == b.len()
                    && a.iter().zip(b).all(|(x, y)| {
                        x.input_dim == y.input_dim && x.hidden == y.hidden && y.check_shapes().is_ok()
                    })
            })
            && expected.out_w.len() == self.params.out_w.len()
            && expected.out_b.len() == self.params.out_b.len();
        if !same_shape {
            return Err(Error::Validation(
                "model tensors do not match the network spec".into(),
            ));
        }
        if !self.params.all_finite() {
            return Err(Error::Numeric("model holds non-finite parameters".into()));
        }
        if let Some(n) = &self.input_norm {
            if n.dims() != self.spec.input_dim || n.std.len() != n.dims() {
                return Err(Error::Validation("input standardization has wrong width".into()));
            }
        }
        Ok(())
    }

    fn check_input(&self, inputs: &[f64]) -> Result<()> {
        if !inputs.len().is_multiple_of(self.spec.input_dim) {
            return Err(Error::DimensionMismatch {
                expected: self.spec.input_dim,
                found: inputs.len() % self.spec.input_dim,
            });
        }
        Ok(())
    }

    pub fn forward_trace(&self, inputs: &[f64]) -> Result<ForwardTrace> {
        self.check_input(inputs)?;
        let mut x = match &self.input_norm {
            Some(n) => n.apply(inputs),
            None => inputs.to_vec(),
        };
        let mut layer_inputs = Vec::with_capacity(self.params.layers.len());
        let mut traces = Vec::with_capacity(self.params.layers.len());
        for layer in &self.params.layers {
            let dir_traces = layer
                .iter()
                .enumerate()
                .map(|(d, p)| lstm_forward_trace(p, &x, d == 1))
                .collect::<Result<Vec<_>>>()?;
            let parts: Vec<&[f64]> = dir_traces.iter().map(|t| t.hidden.as_slice()).collect();
            let widths: Vec<usize> = layer.iter().map(|p| p.hidden).collect();
            let next = concat_steps(&parts, &widths);
            layer_inputs.push(std::mem::replace(&mut x, next));
            traces.push(dir_traces);
        }
        let width = self.top_width();
        let o = self.spec.output_dim;
        let t_len = if width == 0 { 0 } else { x.len() / width };
        let mut outputs = vec![0.0; t_len * o];
        for t in 0..t_len {
            let h = &x[t * width..(t + 1) * width];
            for k in 0..o {
                let a: f64 = self.params.out_b[k]
                    + self.params.out_w[k * width..(k + 1) * width]
                        .iter()
                        .zip(h)
                        .map(|(w, v)| w * v)
                        .sum::<f64>();
                outputs[t * o + k] = sigmoid(a);
            }
        }
        if outputs.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite network output".into()));
        }
        Ok(ForwardTrace {
            layer_inputs,
            traces,
            top: x,
            outputs,
        })
    }

    /// Per-frame logistic outputs, `T × output_dim`.
    pub fn forward(&self, inputs: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_trace(inputs)?.outputs)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn to_json(&self) -> Result<String> {
        let file = ModelFile {
            format_version: MODEL_FORMAT_VERSION,
            kind: "rnn".into(),
            model: self.clone(),
        };
        let mut s = serde_json::to_string(&file)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)?;
        if file.format_version != MODEL_FORMAT_VERSION || file.kind != "rnn" {
            return Err(Error::Validation(format!(
                "unsupported model file (kind {}, version {})",
                file.kind, file.format_version
            )));
        }
        file.model.validate()?;
        Ok(file.model)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

pub fn model_forward(model: &RnnModel, inputs: &[f64]) -> Result<Vec<f64>> {
    model.forward(inputs)
}

/// Sum of squared errors over all frames and outputs.
pub fn sse_loss(posteriors: &[f64], targets: &[f64]) -> Result<f64> {
    if posteriors.len() != targets.len() {
        return Err(Error::DimensionMismatch {
            expected: posteriors.len(),
            found: targets.len(),
        });
    }
    Ok(posteriors
        .iter()
        .zip(targets)
        .map(|(y, d)| (y - d) * (y - d))
        .sum())
}

/// One-hot targets, `labels.len() × classes`.
pub fn one_hot(labels: &[usize], classes: usize) -> Vec<f64> {
    let mut out = vec![0.0; labels.len() * classes];
    for (t, &l) in labels.iter().enumerate() {
        if l < classes {
            out[t * classes + l] = 1.0;
        }
    }
    out
}

/// Loss and exact parameter gradients of the SSE objective by backpropagation
/// through time.
pub fn bptt_gradients(model: &RnnModel, inputs: &[f64], targets: &[f64]) -> Result<(f64, RnnParams)> {
    let trace = model.forward_trace(inputs)?;
    let loss = sse_loss(&trace.outputs, targets)?;
    let mut grads = model.params.zeros_like();
    let o = model.spec.output_dim;
    let width = model.top_width();
    let t_len = trace.outputs.len() / o;

    let mut d_top = vec![0.0; t_len * width];
    for t in 0..t_len {
        let h = &trace.top[t * width..(t + 1) * width];
        for k in 0..o {
            let y = trace.outputs[t * o + k];
            let da = 2.0 * (y - targets[t * o + k]) * y * (1.0 - y);
            grads.out_b[k] += da;
            let w_row = &model.params.out_w[k * width..(k + 1) * width];
            let g_row = &mut grads.out_w[k * width..(k + 1) * width];
            for j in 0..width {
                g_row[j] += da * h[j];
                d_top[t * width + j] += da * w_row[j];
            }
        }
    }

    let mut d_out = d_top;
    for (l, layer) in model.params.layers.iter().enumerate().rev() {
        let x = &trace.layer_inputs[l];
        let in_dim = layer[0].input_dim;
        let out_width: usize = layer.iter().map(|p| p.hidden).sum();
        let mut d_in = vec![0.0; x.len()];
        let mut offset = 0;
        for (d, p) in layer.iter().enumerate() {
            let h = p.hidden;
            let dh: Vec<f64> = (0..t_len)
                .flat_map(|t| d_out[t * out_width + offset..t * out_width + offset + h].iter().copied())
                .collect();
            let dx = lstm_backward(p, x, &trace.traces[l][d], &dh, &mut grads.layers[l][d]);
            for (a, b) in d_in.iter_mut().zip(&dx) {
                *a += b;
            }
            offset += h;
        }
        debug_assert_eq!(d_in.len(), t_len * in_dim);
        d_out = d_in;
    }
    if !model.spec.peepholes {
        grads.zero_peepholes();
    }
    if !loss.is_finite() || !grads.all_finite() {
        return Err(Error::Numeric("non-finite loss or gradient".into()));
    }
    Ok((loss, grads))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(layout: &[usize], bi: bool, input: usize) -> NetworkSpec {
        NetworkSpec::new(input, layout.to_vec(), bi)
    }

    #[test]
    fn init_is_deterministic() {
        let s = spec(&[5, 4, 5], true, 3);
        let a = init_model(&s).unwrap();
        assert_eq!(a, init_model(&s).unwrap());
        let b = init_model(&NetworkSpec { seed: 9, ..s }).unwrap();
        assert_ne!(a.params, b.params);
        let flat = a.params.to_flat();
        assert!(flat.iter().all(|v| v.abs() <= INIT_RANGE));
        assert!(a.params.layers.iter().flatten().all(|l| l.b.iter().all(|&v| v == 0.0)));
        assert!(a.params.out_b.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn parameter_count() {
        let m = init_model(&spec(&[54, 54, 54], false, 54)).unwrap();
        let per_layer = 4 * 54 * 54 + 4 * 54 * 54 + 4 * 54 + 3 * 54;
        assert_eq!(m.num_params(), 3 * per_layer + 2 * 54 + 2);
        let bi = init_model(&spec(&[4, 3], true, 2)).unwrap();
        let l1 = 4 * 4 * 2 + 4 * 4 * 4 + 4 * 4 + 3 * 4;
        let l2 = 4 * 3 * 8 + 4 * 3 * 3 + 4 * 3 + 3 * 3;
        assert_eq!(bi.num_params(), 2 * (l1 + l2) + 2 * 6 + 2);
    }

    #[test]
    fn zero_model_outputs_half() {
        let mut m = init_model(&spec(&[3, 3, 3], true, 2)).unwrap();
        m.params = m.params.zeros_like();
        let y = m.forward(&[1.0, 2.0, -3.0, 4.0]).unwrap();
        assert_eq!(y, vec![0.5; 4]);
        assert!(m.forward(&[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn sse_values() {
        assert_eq!(sse_loss(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        let t = 7;
        let y = vec![0.5; 2 * t];
        let d = one_hot(&vec![1; t], 2);
        assert!((sse_loss(&y, &d).unwrap() - 0.5 * t as f64).abs() < 1e-12);
        assert!((sse_loss(&[0.9, 0.2], &[1.0, 0.0]).unwrap() - 0.05).abs() < 1e-12);
        assert!(sse_loss(&[0.1], &[0.1, 0.2]).is_err());
    }

    #[test]
    fn tiny_model_matches_scalar_oracle() {
        // 1 input -> one unidirectional layer of 1 cell -> 1 output, two frames
        let mut s = spec(&[1], false, 1);
        s.output_dim = 1;
        let mut m = init_model(&s).unwrap();
        let l = &mut m.params.layers[0][0];
        l.w = vec![0.4, 0.3, -0.6, 0.2];
        l.r = vec![0.5, -0.1, 0.2, 0.3];
        l.b = vec![0.0, 0.1, 0.05, -0.05];
        l.peep = vec![0.2, 0.1, -0.3];
        m.params.out_w = vec![1.5];
        m.params.out_b = vec![-0.2];
        let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
        let (mut h, mut c) = (0.0f64, 0.0f64);
        let mut expected = Vec::new();
        for x in [0.7, -1.1] {
            let i = sig(0.4 * x + 0.5 * h + 0.2 * c);
            let f = sig(0.3 * x - 0.1 * h + 0.1 * c + 0.1);
            let z = (-0.6 * x + 0.2 * h + 0.05).tanh();
            c = f * c + i * z;
            let o = sig(0.2 * x + 0.3 * h - 0.3 * c - 0.05);
            h = o * c.tanh();
            expected.push(sig(1.5 * h - 0.2));
        }
        let y = m.forward(&[0.7, -1.1]).unwrap();
        for (a, b) in y.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn gradients_vanish_at_trivial_points() {
        let m = init_model(&spec(&[3, 2, 3], true, 2)).unwrap();
        let (loss, g) = bptt_gradients(&m, &[], &[]).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.to_flat().iter().all(|&v| v == 0.0));

        let x = [0.2, -0.4, 0.9, 0.1, -0.3, 0.3];
        let y = m.forward(&x).unwrap();
        let (loss, g) = bptt_gradients(&m, &x, &y).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.to_flat().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn json_round_trip_is_exact() {
        let mut m = init_model(&spec(&[3, 4, 3], true, 5)).unwrap();
        m.input_norm = Some(Standardizer {
            mean: vec![0.1, 0.2, 0.3, 0.4, 0.5],
            std: vec![1.0, 2.0, 0.0, 0.3, 1e-3],
        });
        let back = RnnModel::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(back, m);
        let bad = m.to_json().unwrap().replace("\"format_version\":1", "\"format_version\":7");
        assert!(RnnModel::from_json(&bad).is_err());
    }

    /// Central-difference check of every parameter; returns the largest
    /// `|analytic − numeric| / max(|analytic|, |numeric|, floor)`.
    fn max_grad_error(m: &RnnModel, x: &[f64], target: &[f64], floor: f64) -> f64 {
        let (_, g) = bptt_gradients(m, x, target).unwrap();
        let g = g.to_flat();
        let base = m.params.to_flat();
        let mut probe = m.clone();
        let mut worst = 0.0f64;
        let h = 1e-5;
        for i in 0..base.len() {
            let mut flat = base.clone();
            flat[i] += h;
            probe.params.set_flat(&flat).unwrap();
            let up = sse_loss(&probe.forward(x).unwrap(), target).unwrap();
            flat[i] -= 2.0 * h;
            probe.params.set_flat(&flat).unwrap();
            let down = sse_loss(&probe.forward(x).unwrap(), target).unwrap();
            let num = (up - down) / (2.0 * h);
            let err = (g[i] - num).abs() / g[i].abs().max(num.abs()).max(floor);
            worst = worst.max(err);
        }
        worst
    }

    fn random_case(layout: &[usize], bi: bool, input: usize, frames: usize, seed: u64) -> (RnnModel, Vec<f64>, Vec<f64>) {
        let mut s = spec(layout, bi, input);
        s.seed = seed;
        let mut m = init_model(&s).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1000);
        // larger weights than the initialiser so every path carries signal
        let flat: Vec<f64> = m.params.to_flat().iter().map(|_| rng.random_range(-0.5..0.5)).collect();
        m.params.set_flat(&flat).unwrap();
        let x: Vec<f64> = (0..frames * input).map(|_| rng.random_range(-1.0..1.0)).collect();
        let labels: Vec<usize> = (0..frames).map(|_| rng.random_range(0..2)).collect();
        (m, x, one_hot(&labels, 2))
    }

    #[test]
    fn bptt_matches_finite_differences() {
        for (layout, bi) in [(&[4usize, 3, 4][..], false), (&[4, 3, 4][..], true), (&[2][..], false)] {
            for seed in 0..3 {
                let (m, x, t) = random_case(layout, bi, 3, 3, seed);
                let err = max_grad_error(&m, &x, &t, 1e-6);
                assert!(err <= 1e-4, "{layout:?} bi={bi} seed={seed}: {err:e}");
            }
        }
    }

    #[test]
    fn gradients_respect_disabled_peepholes() {
        let (mut m, x, t) = random_case(&[3, 3], false, 2, 4, 1);
        m.spec.peepholes = false;
        for layer in m.params.layers.iter_mut().flatten() {
            layer.peep.iter_mut().for_each(|v| *v = 0.0);
        }
        let (_, g) = bptt_gradients(&m, &x, &t).unwrap();
        assert!(g.layers.iter().flatten().all(|l| l.peep.iter().all(|&v| v == 0.0)));
    }
}
