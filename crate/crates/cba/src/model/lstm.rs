//! Single-direction LSTM used by the context encoder, with manual
//! backpropagation. Gate order in the stacked parameters is
//! input, forget, cell candidate, output.

use crate::numerics::{RngStream, Tensor2};

#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    /// Input weights, (4h x input_dim).
    pub w_ih: Tensor2,
    /// Recurrent weights, (4h x h).
    pub w_hh: Tensor2,
    /// Gate biases, length 4h.
    pub bias: Vec<f64>,
}

impl LstmParams {
    /// Gaussian init (sigma 0.1) with the forget-gate bias at 1.0.
    pub fn init(input_dim: usize, hidden: usize, rng: &mut RngStream) -> Self {
        let w_ih = Tensor2::from_fn(4 * hidden, input_dim, |_, _| rng.gaussian() * 0.1);
        let w_hh = Tensor2::from_fn(4 * hidden, hidden, |_, _| rng.gaussian() * 0.1);
        let mut bias = vec![0.0; 4 * hidden];
        for b in bias.iter_mut().skip(hidden).take(hidden) {
            *b = 1.0;
        }
        LstmParams { w_ih, w_hh, bias }
    }

    pub fn zeros_like(&self) -> Self {
        LstmParams {
            w_ih: Tensor2::zeros(self.w_ih.rows(), self.w_ih.cols()),
            w_hh: Tensor2::zeros(self.w_hh.rows(), self.w_hh.cols()),
            bias: vec![0.0; self.bias.len()],
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_hh.cols()
    }

    pub fn input_dim(&self) -> usize {
        self.w_ih.cols()
    }
}

/// Activations of one LSTM step kept for backpropagation.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmStep {
    pub i: Vec<f64>,
    pub f: Vec<f64>,
    pub g: Vec<f64>,
    pub o: Vec<f64>,
    pub c: Vec<f64>,
    pub tanh_c: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub c_prev: Vec<f64>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Run the LSTM over a sequence of input rows; returns the per-step caches
/// and the final hidden state.
pub fn lstm_forward(params: &LstmParams, inputs: &[&[f64]]) -> (Vec<LstmStep>, Vec<f64>) {
    let h_dim = params.hidden();
    let mut h = vec![0.0; h_dim];
    let mut c = vec![0.0; h_dim];
    let mut steps = Vec::with_capacity(inputs.len());

    for &x in inputs {
        let mut gates = params.bias.clone();
        for (j, row) in gates.iter_mut().enumerate() {
            let w_row = params.w_ih.row(j);
            let mut acc = 0.0;
            for (w, xv) in w_row.iter().zip(x) {
                acc += w * xv;
            }
            let r_row = params.w_hh.row(j);
            for (w, hv) in r_row.iter().zip(&h) {
                acc += w * hv;
            }
            *row += acc;
        }
        let mut step = LstmStep {
            i: vec![0.0; h_dim],
            f: vec![0.0; h_dim],
            g: vec![0.0; h_dim],
            o: vec![0.0; h_dim],
            c: vec![0.0; h_dim],
            tanh_c: vec![0.0; h_dim],
            h_prev: h.clone(),
            c_prev: c.clone(),
        };
        for k in 0..h_dim {
            step.i[k] = sigmoid(gates[k]);
            step.f[k] = sigmoid(gates[h_dim + k]);
            step.g[k] = gates[2 * h_dim + k].tanh();
            step.o[k] = sigmoid(gates[3 * h_dim + k]);
            step.c[k] = step.f[k] * step.c_prev[k] + step.i[k] * step.g[k];
            step.tanh_c[k] = step.c[k].tanh();
            h[k] = step.o[k] * step.tanh_c[k];
            c[k] = step.c[k];
        }
        steps.push(step);
    }
    (steps, h)
}

/// Backpropagate a gradient on the final hidden state through the cached
/// steps. Parameter gradients accumulate into `grads`; per-step input
/// gradients are handed to `sink(step_index, d_input)` in reverse order.
pub fn lstm_backward(
    params: &LstmParams,
    steps: &[LstmStep],
    inputs: &[&[f64]],
    dh_last: &[f64],
    grads: &mut LstmParams,
    mut sink: impl FnMut(usize, &[f64]),
) {
    let h_dim = params.hidden();
    let in_dim = params.input_dim();
    let mut dh = dh_last.to_vec();
    let mut dc = vec![0.0; h_dim];
    let mut da = vec![0.0; 4 * h_dim];
    let mut dx = vec![0.0; in_dim];

    for (t, step) in steps.iter().enumerate().rev() {
        for k in 0..h_dim {
            let d_o = dh[k] * step.tanh_c[k];
            let d_c = dc[k] + dh[k] * step.o[k] * (1.0 - step.tanh_c[k] * step.tanh_c[k]);
            let d_i = d_c * step.g[k];
            let d_f = d_c * step.c_prev[k];
            let d_g = d_c * step.i[k];
            da[k] = d_i * step.i[k] * (1.0 - step.i[k]);
            da[h_dim + k] = d_f * step.f[k] * (1.0 - step.f[k]);
            da[2 * h_dim + k] = d_g * (1.0 - step.g[k] * step.g[k]);
            da[3 * h_dim + k] = d_o * step.o[k] * (1.0 - step.o[k]);
            dc[k] = d_c * step.f[k];
        }

        let x = inputs[t];
        dx.iter_mut().for_each(|v| *v = 0.0);
        dh.iter_mut().for_each(|v| *v = 0.0);
        for (j, &d) in da.iter().enumerate() {
            grads.bias[j] += d;
            if d != 0.0 {
                let gw = grads.w_ih.row_mut(j);
                for (g, &xv) in gw.iter_mut().zip(x) {
                    *g += d * xv;
                }
                let gr = grads.w_hh.row_mut(j);
                for (g, hv) in gr.iter_mut().zip(&step.h_prev) {
                    *g += d * hv;
                }
                for (v, &w) in dx.iter_mut().zip(params.w_ih.row(j)) {
                    *v += d * w;
                }
                for (v, &w) in dh.iter_mut().zip(params.w_hh.row(j)) {
                    *v += d * w;
                }
            }
        }
        sink(t, &dx);
    }
}
