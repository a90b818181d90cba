//! Single-layer LSTM with a two-layer ReLU head: forward pass and
//! backpropagation through time.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{LstmParams, TemporalError};

/// All trainable tensors, row-major. Gate rows are stacked in the order
/// input, forget, candidate, output; each row multiplies `[x_t; h_{t-1}]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmWeights {
    pub gates_w: Vec<f64>,
    pub gates_b: Vec<f64>,
    pub fc1_w: Vec<f64>,
    pub fc1_b: Vec<f64>,
    pub fc2_w: Vec<f64>,
    pub fc2_b: Vec<f64>,
}

impl LstmWeights {
    pub fn zeros(p: &LstmParams) -> Self {
        let (i, h, f) = (p.input_dim, p.hidden, p.fc1_dim);
        Self {
            gates_w: vec![0.0; 4 * h * (i + h)],
            gates_b: vec![0.0; 4 * h],
            fc1_w: vec![0.0; f * h],
            fc1_b: vec![0.0; f],
            fc2_w: vec![0.0; f],
            fc2_b: vec![0.0; 1],
        }
    }

    /// Uniform `±1/sqrt(fan_in)` per layer (the recurrent layer's scale is
    /// `1/sqrt(hidden)`), forget-gate bias 1.
    pub fn init(p: &LstmParams, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut w = Self::zeros(p);
        let mut fill = |v: &mut [f64], k: f64| v.iter_mut().for_each(|x| *x = rng.random_range(-k..k));
        let kh = 1.0 / (p.hidden as f64).sqrt();
        fill(&mut w.gates_w, kh);
        fill(&mut w.gates_b, kh);
        fill(&mut w.fc1_w, kh);
        fill(&mut w.fc1_b, kh);
        let kf = 1.0 / (p.fc1_dim as f64).sqrt();
        fill(&mut w.fc2_w, kf);
        fill(&mut w.fc2_b, kf);
        w.gates_b[p.hidden..2 * p.hidden].fill(1.0);
        w
    }

    pub fn tensors(&self) -> [&[f64]; 6] {
        [&self.gates_w, &self.gates_b, &self.fc1_w, &self.fc1_b, &self.fc2_w, &self.fc2_b]
    }

    pub fn tensors_mut(&mut self) -> [&mut Vec<f64>; 6] {
        [
            &mut self.gates_w,
            &mut self.gates_b,
            &mut self.fc1_w,
            &mut self.fc1_b,
            &mut self.fc2_w,
            &mut self.fc2_b,
        ]
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|x| *x *= s);
        }
    }

    pub fn shapes_match(&self, p: &LstmParams) -> bool {
        let z = Self::zeros(p);
        let same = self.tensors().iter().zip(z.tensors()).all(|(a, b)| a.len() == b.len());
        same
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    y.iter_mut().zip(x).for_each(|(yi, xi)| *yi += alpha * xi);
}

fn sigmoid(z: f64) -> f64 {
    crate::static_proctor::sigmoid(z)
}

/// Activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    steps: usize,
    /// `[x_t; h_{t-1}]` per step.
    v: Vec<f64>,
    /// Activated gates `i, f, g, o` per step.
    gates: Vec<f64>,
    /// Cell states `c_0 .. c_T`.
    c: Vec<f64>,
    tanh_c: Vec<f64>,
    mask: Vec<f64>,
    dropped: Vec<f64>,
    a1: Vec<f64>,
    relu: Vec<f64>,
    pub p: f64,
}

/// Inverted-dropout mask: each unit survives with probability `1 - rate`
/// and is scaled by `1 / (1 - rate)`.
pub fn dropout_mask(hidden: usize, rate: f64, seed: u64) -> Vec<f64> {
    if rate == 0.0 {
        return vec![1.0; hidden];
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let keep = 1.0 / (1.0 - rate);
    (0..hidden)
        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
        .collect()
}

fn check_sequence(p: &LstmParams, seq: &[Vec<f64>]) -> Result<(), TemporalError> {
    if seq.len() != p.window {
        return Err(TemporalError::ShapeMismatch(format!(
            "sequence has {} steps, model window is {}",
            seq.len(),
            p.window
        )));
    }
    for row in seq {
        if row.len() != p.input_dim {
            return Err(TemporalError::ShapeMismatch(format!(
                "row has {} features, model expects {}",
                row.len(),
                p.input_dim
            )));
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(TemporalError::NonFiniteInput);
        }
    }
    Ok(())
}

/// Runs the recurrence from a zero state. `mask` multiplies the final
/// hidden state; `None` means inference (no dropout).
pub fn forward_with_mask(
    p: &LstmParams,
    w: &LstmWeights,
    seq: &[Vec<f64>],
    mask: Option<&[f64]>,
) -> Result<ForwardCache, TemporalError> {
    check_sequence(p, seq)?;
    let (ni, nh, nf) = (p.input_dim, p.hidden, p.fc1_dim);
    let nv = ni + nh;
    let steps = seq.len();
    let mut v = vec![0.0; steps * nv];
    let mut gates = vec![0.0; steps * 4 * nh];
    let mut c = vec![0.0; (steps + 1) * nh];
    let mut tanh_c = vec![0.0; steps * nh];
    let mut h = vec![0.0; nh];
    for t in 0..steps {
        let vt = &mut v[t * nv..(t + 1) * nv];
        vt[..ni].copy_from_slice(&seq[t]);
        vt[ni..].copy_from_slice(&h);
        let g = &mut gates[t * 4 * nh..(t + 1) * 4 * nh];
        for (r, out) in g.iter_mut().enumerate() {
            *out = w.gates_b[r] + dot(&w.gates_w[r * nv..(r + 1) * nv], vt);
        }
        let (c_prev, c_next) = c[t * nh..(t + 2) * nh].split_at_mut(nh);
        for j in 0..nh {
            let ig = sigmoid(g[j]);
            let fg = sigmoid(g[nh + j]);
            let cg = g[2 * nh + j].tanh();
            let og = sigmoid(g[3 * nh + j]);
            g[j] = ig;
            g[nh + j] = fg;
            g[2 * nh + j] = cg;
            g[3 * nh + j] = og;
            c_next[j] = fg * c_prev[j] + ig * cg;
            let tc = c_next[j].tanh();
            tanh_c[t * nh + j] = tc;
            h[j] = og * tc;
        }
    }
    let mask = mask.map_or_else(|| vec![1.0; nh], |m| m.to_vec());
    let dropped: Vec<f64> = h.iter().zip(&mask).map(|(a, m)| a * m).collect();
    let a1: Vec<f64> = (0..nf)
        .map(|k| w.fc1_b[k] + dot(&w.fc1_w[k * nh..(k + 1) * nh], &dropped))
        .collect();
    let relu: Vec<f64> = a1.iter().map(|&a| a.max(0.0)).collect();
    let z2 = w.fc2_b[0] + dot(&w.fc2_w, &relu);
    Ok(ForwardCache {
        steps,
        v,
        gates,
        c,
        tanh_c,
        mask,
        dropped,
        a1,
        relu,
        p: sigmoid(z2),
    })
}

/// Probability of cheating for one window. With `training` set, dropout is
/// drawn from `seed`; otherwise the pass is deterministic and dropout-free.
pub fn lstm_forward(
    p: &LstmParams,
    w: &LstmWeights,
    seq: &[Vec<f64>],
    training: bool,
    seed: u64,
) -> Result<(f64, ForwardCache), TemporalError> {
    let mask = training.then(|| dropout_mask(p.hidden, p.dropout_rate, seed));
    let cache = forward_with_mask(p, w, seq, mask.as_deref())?;
    Ok((cache.p, cache))
}

pub const PROB_CLAMP: f64 = 1e-7;

pub fn bce_loss(p: f64, y: bool) -> f64 {
    let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    if y {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

/// Gradient of `bce_loss(cache.p, y)` with respect to every weight. The
/// output-logit gradient is taken as `p - y`, exact whenever `p` lies
/// inside the clamp band.
pub fn lstm_backward(p: &LstmParams, w: &LstmWeights, cache: &ForwardCache, y: bool) -> LstmWeights {
    let (ni, nh, nf) = (p.input_dim, p.hidden, p.fc1_dim);
    let nv = ni + nh;
    let mut gr = LstmWeights::zeros(p);
    let dz2 = cache.p - if y { 1.0 } else { 0.0 };
    gr.fc2_b[0] = dz2;
    axpy(dz2, &cache.relu, &mut gr.fc2_w);
    let mut dd = vec![0.0; nh];
    for k in 0..nf {
        if cache.a1[k] <= 0.0 {
            continue;
        }
        let da = dz2 * w.fc2_w[k];
        gr.fc1_b[k] = da;
        axpy(da, &cache.dropped, &mut gr.fc1_w[k * nh..(k + 1) * nh]);
        axpy(da, &w.fc1_w[k * nh..(k + 1) * nh], &mut dd);
    }
    let mut dh: Vec<f64> = dd.iter().zip(&cache.mask).map(|(a, m)| a * m).collect();
    let mut dc = vec![0.0; nh];
    let mut dz = vec![0.0; 4 * nh];
    let mut dv = vec![0.0; nv];
    for t in (0..cache.steps).rev() {
        let g = &cache.gates[t * 4 * nh..(t + 1) * 4 * nh];
        let c_prev = &cache.c[t * nh..(t + 1) * nh];
        for j in 0..nh {
            let (ig, fg, cg, og) = (g[j], g[nh + j], g[2 * nh + j], g[3 * nh + j]);
            let tc = cache.tanh_c[t * nh + j];
            let d_o = dh[j] * tc;
            dc[j] += dh[j] * og * (1.0 - tc * tc);
            dz[j] = dc[j] * cg * ig * (1.0 - ig);
            dz[nh + j] = dc[j] * c_prev[j] * fg * (1.0 - fg);
            dz[2 * nh + j] = dc[j] * ig * (1.0 - cg * cg);
            dz[3 * nh + j] = d_o * og * (1.0 - og);
            dc[j] *= fg;
        }
        let vt = &cache.v[t * nv..(t + 1) * nv];
        dv.fill(0.0);
        for (r, &d) in dz.iter().enumerate() {
            gr.gates_b[r] += d;
            if d == 0.0 {
                continue;
            }
            let row = r * nv..(r + 1) * nv;
            axpy(d, vt, &mut gr.gates_w[row.clone()]);
            axpy(d, &w.gates_w[row], &mut dv);
        }
        dh.copy_from_slice(&dv[ni..]);
    }
    gr
}
