//! LSTM cell: parameters, single-step forward, full-sequence forward with a
//! recorded trace, and the matching analytic backward pass.
//!
//! Gate order inside the stacked weight matrices is fixed as
//! [input, forget, cell, output] and serialized models rely on it.

use serde::{Deserialize, Serialize};

use super::layers::sigmoid;
use super::matrix::Matrix;
use super::rng::Rng;
use super::NnError;

/// Parameters of one LSTM layer: W (4h × input), U (4h × hidden), b (4h).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmParams {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub w: Matrix,
    pub u: Matrix,
    pub b: Vec<f64>,
}

impl LstmParams {
    pub fn init_uniform(rng: &mut Rng, input_dim: usize, hidden_dim: usize, scale: f64) -> Self {
        LstmParams {
            input_dim,
            hidden_dim,
            w: Matrix::init_uniform(rng, 4 * hidden_dim, input_dim, scale),
            u: Matrix::init_uniform(rng, 4 * hidden_dim, hidden_dim, scale),
            b: vec![0.0; 4 * hidden_dim],
        }
    }

    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        LstmParams {
            input_dim,
            hidden_dim,
            w: Matrix::zeros(4 * hidden_dim, input_dim),
            u: Matrix::zeros(4 * hidden_dim, hidden_dim),
            b: vec![0.0; 4 * hidden_dim],
        }
    }
}

/// Per-step values recorded by the forward pass and consumed by backward.
#[derive(Debug, Clone)]
struct StepRecord {
    /// Post-activation gates i, f, g, o (each hidden_dim long).
    gates: Vec<f64>,
    c: Vec<f64>,
    h: Vec<f64>,
}

/// Recorded forward pass over an input sequence.
#[derive(Debug, Clone)]
pub struct LstmTrace {
    xs: Vec<Vec<f64>>,
    h0: Vec<f64>,
    c0: Vec<f64>,
    steps: Vec<StepRecord>,
}

impl LstmTrace {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn hidden(&self, t: usize) -> &[f64] {
        &self.steps[t].h
    }

    /// Final (h, c); the initial state when the sequence is empty.
    pub fn final_state(&self) -> (&[f64], &[f64]) {
        match self.steps.last() {
            Some(s) => (&s.h, &s.c),
            None => (&self.h0, &self.c0),
        }
    }
}

/// Gradients of a sequence forward pass.
#[derive(Debug, Clone)]
pub struct LstmBackward {
    pub dw: Matrix,
    pub du: Matrix,
    pub db: Vec<f64>,
    pub dxs: Vec<Vec<f64>>,
    pub dh0: Vec<f64>,
    pub dc0: Vec<f64>,
}

fn check_shapes(p: &LstmParams, x: &[f64], h: &[f64], c: &[f64]) -> Result<(), NnError> {
    if x.len() != p.input_dim || h.len() != p.hidden_dim || c.len() != p.hidden_dim {
        return Err(NnError::Shape(format!(
            "lstm_step: expected x[{}], h[{}], c[{}]; got x[{}], h[{}], c[{}]",
            p.input_dim,
            p.hidden_dim,
            p.hidden_dim,
            x.len(),
            h.len(),
            c.len()
        )));
    }
    Ok(())
}

/// Compute post-activation gates for one step. Returns the 4h gate vector
/// [i, f, g, o].
fn step_gates(p: &LstmParams, x: &[f64], h: &[f64]) -> Vec<f64> {
    let hd = p.hidden_dim;
    let mut z = p.b.clone();
    {
        let mut wx = vec![0.0; 4 * hd];
        p.w.matvec(x, &mut wx);
        let mut uh = vec![0.0; 4 * hd];
        p.u.matvec(h, &mut uh);
        for ((zv, wv), uv) in z.iter_mut().zip(&wx).zip(&uh) {
            *zv += wv + uv;
        }
    }
    for v in z[..2 * hd].iter_mut() {
        *v = sigmoid(*v); // i, f
    }
    for v in z[2 * hd..3 * hd].iter_mut() {
        *v = v.tanh(); // g
    }
    for v in z[3 * hd..].iter_mut() {
        *v = sigmoid(*v); // o
    }
    z
}

/// One LSTM step: c' = f⊙c + i⊙g, h' = o⊙tanh(c').
pub fn lstm_step(
    p: &LstmParams,
    x: &[f64],
    h: &[f64],
    c: &[f64],
) -> Result<(Vec<f64>, Vec<f64>), NnError> {
    check_shapes(p, x, h, c)?;
    let hd = p.hidden_dim;
    let gates = step_gates(p, x, h);
    let (gi, rest) = gates.split_at(hd);
    let (gf, rest) = rest.split_at(hd);
    let (gg, go) = rest.split_at(hd);
    let mut c_next = vec![0.0; hd];
    let mut h_next = vec![0.0; hd];
    for k in 0..hd {
        c_next[k] = gf[k] * c[k] + gi[k] * gg[k];
        h_next[k] = go[k] * c_next[k].tanh();
    }
    Ok((h_next, c_next))
}

/// Run the cell over a whole sequence, recording everything backward needs.
pub fn lstm_forward(
    p: &LstmParams,
    xs: &[Vec<f64>],
    h0: &[f64],
    c0: &[f64],
) -> Result<LstmTrace, NnError> {
    let hd = p.hidden_dim;
    if h0.len() != hd || c0.len() != hd {
        return Err(NnError::Shape(format!(
            "lstm_forward: initial state must have {hd} entries"
        )));
    }
    let mut steps = Vec::with_capacity(xs.len());
    let mut h = h0.to_vec();
    let mut c = c0.to_vec();
    for x in xs {
        check_shapes(p, x, &h, &c)?;
        let gates = step_gates(p, x, &h);
        let (gi, rest) = gates.split_at(hd);
        let (gf, rest) = rest.split_at(hd);
        let (gg, go) = rest.split_at(hd);
        let mut c_next = vec![0.0; hd];
        let mut h_next = vec![0.0; hd];
        for k in 0..hd {
            c_next[k] = gf[k] * c[k] + gi[k] * gg[k];
            h_next[k] = go[k] * c_next[k].tanh();
        }
        h = h_next.clone();
        c = c_next.clone();
        steps.push(StepRecord {
            gates,
            c: c_next,
            h: h_next,
        });
    }
    Ok(LstmTrace {
        xs: xs.to_vec(),
        h0: h0.to_vec(),
        c0: c0.to_vec(),
        steps,
    })
}

/// Backpropagate through a recorded forward pass.
///
/// `dh_seq[t]` is the loss gradient flowing into h_t from outside the cell
/// (zero vectors where a step's output is unused); `dc_last` flows into the
/// final cell state. Returns parameter gradients plus gradients w.r.t. the
/// inputs and the initial state.
pub fn lstm_backward(
    p: &LstmParams,
    trace: &LstmTrace,
    dh_seq: &[Vec<f64>],
    dc_last: &[f64],
) -> Result<LstmBackward, NnError> {
    let hd = p.hidden_dim;
    let n = trace.steps.len();
    if dh_seq.len() != n {
        return Err(NnError::Shape(format!(
            "lstm_backward: {n} recorded steps but {} dh vectors",
            dh_seq.len()
        )));
    }
    let mut out = LstmBackward {
        dw: Matrix::zeros(4 * hd, p.input_dim),
        du: Matrix::zeros(4 * hd, hd),
        db: vec![0.0; 4 * hd],
        dxs: vec![vec![0.0; p.input_dim]; n],
        dh0: vec![0.0; hd],
        dc0: vec![0.0; hd],
    };
    // Gradients carried across steps, from t+1 down to t.
    let mut dh_next = vec![0.0; hd];
    let mut dc_next = dc_last.to_vec();
    for t in (0..n).rev() {
        let rec = &trace.steps[t];
        let (gi, rest) = rec.gates.split_at(hd);
        let (gf, rest) = rest.split_at(hd);
        let (gg, go) = rest.split_at(hd);
        let c_prev = if t == 0 { &trace.c0 } else { &trace.steps[t - 1].c };
        let h_prev = if t == 0 { &trace.h0 } else { &trace.steps[t - 1].h };

        let mut dz = vec![0.0; 4 * hd];
        for k in 0..hd {
            let dh = dh_seq[t][k] + dh_next[k];
            let tc = rec.c[k].tanh();
            let d_o = dh * tc;
            let dc = dc_next[k] + dh * go[k] * (1.0 - tc * tc);
            let d_i = dc * gg[k];
            let d_f = dc * c_prev[k];
            let d_g = dc * gi[k];
            dz[k] = d_i * gi[k] * (1.0 - gi[k]);
            dz[hd + k] = d_f * gf[k] * (1.0 - gf[k]);
            dz[2 * hd + k] = d_g * (1.0 - gg[k] * gg[k]);
            dz[3 * hd + k] = d_o * go[k] * (1.0 - go[k]);
            dc_next[k] = dc * gf[k];
        }
        out.dw.add_outer(&dz, &trace.xs[t]);
        out.du.add_outer(&dz, h_prev);
        for (d, g) in out.db.iter_mut().zip(&dz) {
            *d += g;
        }
        p.w.matvec_t_add(&dz, &mut out.dxs[t]);
        dh_next = vec![0.0; hd];
        p.u.matvec_t_add(&dz, &mut dh_next);
    }
    out.dh0 = dh_next;
    out.dc0 = dc_next;
    Ok(out)
}
