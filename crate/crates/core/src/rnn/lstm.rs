//! A single LSTM layer with peephole connections.
//!
//! Gate pre-activations are stored fused, `4·hidden` rows in the order
//! input, forget, cell candidate, output. Peepholes are stored as three
//! `hidden` blocks: input, forget, output.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const GATE_I: usize = 0;
const GATE_F: usize = 1;
const GATE_Z: usize = 2;
const GATE_O: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmLayerParams {
    pub input_dim: usize,
    pub hidden: usize,
    /// Input weights, `4·hidden × input_dim`, row-major.
    pub w: Vec<f64>,
    /// Recurrent weights, `4·hidden × hidden`, row-major.
    pub r: Vec<f64>,
    /// Biases, `4·hidden`.
    pub b: Vec<f64>,
    /// Diagonal peephole weights, `3·hidden` (input, forget, output).
    pub peep: Vec<f64>,
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl LstmLayerParams {
    pub fn zeros(input_dim: usize, hidden: usize) -> Self {
        Self {
            input_dim,
            hidden,
            w: vec![0.0; 4 * hidden * input_dim],
            r: vec![0.0; 4 * hidden * hidden],
            b: vec![0.0; 4 * hidden],
            peep: vec![0.0; 3 * hidden],
        }
    }

    pub fn num_params(&self) -> usize {
        self.w.len() + self.r.len() + self.b.len() + self.peep.len()
    }

    pub(crate) fn tensors(&self) -> [&Vec<f64>; 4] {
        [&self.w, &self.r, &self.b, &self.peep]
    }

    pub(crate) fn tensors_mut(&mut self) -> [&mut Vec<f64>; 4] {
        [&mut self.w, &mut self.r, &mut self.b, &mut self.peep]
    }

    pub(crate) fn check_shapes(&self) -> Result<()> {
        let (h, d) = (self.hidden, self.input_dim);
        let ok = self.w.len() == 4 * h * d
            && self.r.len() == 4 * h * h
            && self.b.len() == 4 * h
            && self.peep.len() == 3 * h;
        if !ok {
            return Err(Error::Validation(format!(
                "lstm layer tensors inconsistent with {d} inputs and {h} cells"
            )));
        }
        Ok(())
    }
}

/// Activations recorded during a forward pass, indexed by input position.
#[derive(Debug, Clone)]
pub struct LstmTrace {
    reversed: bool,
    /// `T × 4H`: post-nonlinearity i, f, z, o.
    gates: Vec<f64>,
    /// `T × H`.
    cells: Vec<f64>,
    tanh_cells: Vec<f64>,
    /// `T × H`, the layer output.
    pub hidden: Vec<f64>,
}

fn step_order(len: usize, reversed: bool) -> Box<dyn Iterator<Item = usize>> {
    if reversed {
        Box::new((0..len).rev())
    } else {
        Box::new(0..len)
    }
}

/// Runs the layer over `inputs` (`T × input_dim`, row-major). With
/// `reversed`, the sequence is processed back to front; outputs stay in
/// input order.
pub fn lstm_forward_trace(layer: &LstmLayerParams, inputs: &[f64], reversed: bool) -> Result<LstmTrace> {
    let (h, d) = (layer.hidden, layer.input_dim);
    if d == 0 || !inputs.len().is_multiple_of(d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: inputs.len(),
        });
    }
    let t_len = inputs.len() / d;
    let mut trace = LstmTrace {
        reversed,
        gates: vec![0.0; t_len * 4 * h],
        cells: vec![0.0; t_len * h],
        tanh_cells: vec![0.0; t_len * h],
        hidden: vec![0.0; t_len * h],
    };
    let zeros = vec![0.0; h];
    let mut prev: Option<usize> = None;
    let mut pre = vec![0.0; 4 * h];
    for t in step_order(t_len, reversed) {
        let x = &inputs[t * d..(t + 1) * d];
        let (h_prev, c_prev) = match prev {
            Some(p) => (
                trace.hidden[p * h..(p + 1) * h].to_vec(),
                trace.cells[p * h..(p + 1) * h].to_vec(),
            ),
            None => (zeros.clone(), zeros.clone()),
        };
        for (row, a) in pre.iter_mut().enumerate() {
            *a = layer.b[row]
                + dot(&layer.w[row * d..(row + 1) * d], x)
                + dot(&layer.r[row * h..(row + 1) * h], &h_prev);
        }
        let g = &mut trace.gates[t * 4 * h..(t + 1) * 4 * h];
        for j in 0..h {
            let i_gate = sigmoid(pre[GATE_I * h + j] + layer.peep[j] * c_prev[j]);
            let f_gate = sigmoid(pre[GATE_F * h + j] + layer.peep[h + j] * c_prev[j]);
            let z = pre[GATE_Z * h + j].tanh();
            let c = f_gate * c_prev[j] + i_gate * z;
            let o_gate = sigmoid(pre[GATE_O * h + j] + layer.peep[2 * h + j] * c);
            let tc = c.tanh();
            g[GATE_I * h + j] = i_gate;
            g[GATE_F * h + j] = f_gate;
            g[GATE_Z * h + j] = z;
            g[GATE_O * h + j] = o_gate;
            trace.cells[t * h + j] = c;
            trace.tanh_cells[t * h + j] = tc;
            trace.hidden[t * h + j] = o_gate * tc;
        }
        prev = Some(t);
    }
    Ok(trace)
}

/// Hidden-state sequence (`T × hidden`) of one layer.
pub fn lstm_forward(layer: &LstmLayerParams, inputs: &[f64], reversed: bool) -> Result<Vec<f64>> {
    Ok(lstm_forward_trace(layer, inputs, reversed)?.hidden)
}

/// Reverse-mode pass through one layer. `d_hidden` is the loss gradient with
/// respect to the layer outputs (`T × hidden`). Parameter gradients are
/// accumulated into `grads`; the gradient with respect to the inputs is returned.
pub fn lstm_backward(
    layer: &LstmLayerParams,
    inputs: &[f64],
    trace: &LstmTrace,
    d_hidden: &[f64],
    grads: &mut LstmLayerParams,
) -> Vec<f64> {
    let (h, d) = (layer.hidden, layer.input_dim);
    let t_len = trace.hidden.len() / h.max(1);
    let mut d_inputs = vec![0.0; t_len * d];
    let mut dh_rec = vec![0.0; h];
    let mut dc_rec = vec![0.0; h];
    let mut da = vec![0.0; 4 * h];
    let zeros = vec![0.0; h];

    let order: Vec<usize> = step_order(t_len, trace.reversed).collect();
    for (k, &t) in order.iter().enumerate().rev() {
        let prev = if k > 0 { Some(order[k - 1]) } else { None };
        let (h_prev, c_prev) = match prev {
            Some(p) => (
                &trace.hidden[p * h..(p + 1) * h],
                &trace.cells[p * h..(p + 1) * h],
            ),
            None => (&zeros[..], &zeros[..]),
        };
        let g = &trace.gates[t * 4 * h..(t + 1) * 4 * h];
        for j in 0..h {
            let (i_gate, f_gate, z, o_gate) =
                (g[GATE_I * h + j], g[GATE_F * h + j], g[GATE_Z * h + j], g[GATE_O * h + j]);
            let c = trace.cells[t * h + j];
            let tc = trace.tanh_cells[t * h + j];
            let dh = d_hidden[t * h + j] + dh_rec[j];

            let da_o = dh * tc * o_gate * (1.0 - o_gate);
            let dc = dc_rec[j] + dh * o_gate * (1.0 - tc * tc) + da_o * layer.peep[2 * h + j];
            let da_i = dc * z * i_gate * (1.0 - i_gate);
            let da_z = dc * i_gate * (1.0 - z * z);
            let da_f = dc * c_prev[j] * f_gate * (1.0 - f_gate);

            dc_rec[j] = dc * f_gate + da_i * layer.peep[j] + da_f * layer.peep[h + j];
            grads.peep[j] += da_i * c_prev[j];
            grads.peep[h + j] += da_f * c_prev[j];
            grads.peep[2 * h + j] += da_o * c;

            da[GATE_I * h + j] = da_i;
            da[GATE_F * h + j] = da_f;
            da[GATE_Z * h + j] = da_z;
            da[GATE_O * h + j] = da_o;
        }

        let x = &inputs[t * d..(t + 1) * d];
        let dx = &mut d_inputs[t * d..(t + 1) * d];
        dh_rec.iter_mut().for_each(|v| *v = 0.0);
        for (row, &a) in da.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            grads.b[row] += a;
            let w_row = &layer.w[row * d..(row + 1) * d];
            let gw_row = &mut grads.w[row * d..(row + 1) * d];
            for ((gw, &xv), (dxv, &wv)) in gw_row.iter_mut().zip(x).zip(dx.iter_mut().zip(w_row)) {
                *gw += a * xv;
                *dxv += a * wv;
            }
            let r_row = &layer.r[row * h..(row + 1) * h];
            let gr_row = &mut grads.r[row * h..(row + 1) * h];
            for ((gr, &hv), (dhv, &rv)) in gr_row
                .iter_mut()
                .zip(h_prev)
                .zip(dh_rec.iter_mut().zip(r_row))
            {
                *gr += a * hv;
                *dhv += a * rv;
            }
        }
    }
    d_inputs
}

/// Bidirectional layer output: `[h_fwd; h_bwd]` concatenated per step (`T × 2·hidden`).
pub fn blstm_forward(fwd: &LstmLayerParams, bwd: &LstmLayerParams, inputs: &[f64]) -> Result<Vec<f64>> {
    if fwd.input_dim != bwd.input_dim {
        return Err(Error::DimensionMismatch {
            expected: fwd.input_dim,
            found: bwd.input_dim,
        });
    }
    let a = lstm_forward(fwd, inputs, false)?;
    let b = lstm_forward(bwd, inputs, true)?;
    Ok(concat_steps(&[&a, &b], &[fwd.hidden, bwd.hidden]))
}

/// Interleaves per-step blocks of several `T × width_i` sequences.
pub(crate) fn concat_steps(parts: &[&[f64]], widths: &[usize]) -> Vec<f64> {
    let total: usize = widths.iter().sum();
    let t_len = if widths[0] == 0 { 0 } else { parts[0].len() / widths[0] };
    let mut out = Vec::with_capacity(t_len * total);
    for t in 0..t_len {
        for (p, &w) in parts.iter().zip(widths) {
            out.extend_from_slice(&p[t * w..(t + 1) * w]);
        }
    }
    out
}
