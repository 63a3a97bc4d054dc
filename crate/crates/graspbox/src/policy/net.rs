//! The recurrent student network: stacked LSTM → FC → GELU → dropout →
//! FC, with a hand-written backward pass.
//!
//! Two execution paths share one set of kernels:
//!
//! - [`policy_step`] advances a single timestep from an explicit
//!   [`LstmState`] — this is what drives closed-loop rollouts.
//! - [`forward_seq`] runs a whole episode as matrix-matrix products
//!   (the input-to-hidden and head contractions batch over time) and
//!   records the caches [`backward_seq`] needs for backpropagation
//!   through time.
//!
//! Because both paths route every contraction through the fixed-order
//! kernels in [`super::linalg`], the stepwise and batched forwards are
//! bit-identical — a property the tests assert with `==`, not an
//! epsilon.
//!
//! Conventions, frozen for the gradient checker: gate order `[i, f, g,
//! o]` with one bias vector per layer; logistic gates, tanh candidate;
//! exact erf-based GELU; inverted dropout scaled by `1/(1−p)` at train
//! time only.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::linalg::{
    add_col_broadcast, gemm_acc, gemm_nt_acc, gemm_tn_acc, gemv_acc, gemv_tn_acc, row_sum_acc,
};
use super::{PolicyConfig, PolicyError};

/// One LSTM layer's parameters.
///
/// `w_ih`: (4·hidden × in_dim), `w_hh`: (4·hidden × hidden), `bias`:
/// (4·hidden).  Row blocks follow the gate order `[i, f, g, o]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmLayer {
    pub w_ih: DMatrix<f64>,
    pub w_hh: DMatrix<f64>,
    pub bias: DVector<f64>,
}

/// All learnable parameters.  Doubles as the gradient container — a
/// gradient has exactly these shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub lstm: Vec<LstmLayer>,
    pub fc1_w: DMatrix<f64>,
    pub fc1_b: DVector<f64>,
    pub fc2_w: DMatrix<f64>,
    pub fc2_b: DVector<f64>,
}

impl PolicyParams {
    /// Uniform `U(−k, k)` initialization with `k = 1/√fan_in` per
    /// tensor (the LSTM tensors use `k = 1/√hidden`).  Fill order is
    /// fixed — tensor by tensor, column-major — so a seed pins the
    /// exact parameter values.
    pub fn init(cfg: &PolicyConfig, rng: &mut ChaCha8Rng) -> Self {
        let mut fill = |m: &mut [f64], k: f64| {
            for v in m {
                *v = rng.gen_range(-k..k);
            }
        };
        let h = cfg.rnn_hidden;
        let k_rnn = 1.0 / (h as f64).sqrt();
        let mut lstm = Vec::with_capacity(cfg.rnn_layers);
        for layer in 0..cfg.rnn_layers {
            let in_dim = if layer == 0 { cfg.input_dim } else { h };
            let mut l = LstmLayer {
                w_ih: DMatrix::zeros(4 * h, in_dim),
                w_hh: DMatrix::zeros(4 * h, h),
                bias: DVector::zeros(4 * h),
            };
            fill(l.w_ih.as_mut_slice(), k_rnn);
            fill(l.w_hh.as_mut_slice(), k_rnn);
            fill(l.bias.as_mut_slice(), k_rnn);
            lstm.push(l);
        }
        let k_fc1 = 1.0 / (h as f64).sqrt();
        let mut fc1_w = DMatrix::zeros(cfg.actor_hidden, h);
        let mut fc1_b = DVector::zeros(cfg.actor_hidden);
        fill(fc1_w.as_mut_slice(), k_fc1);
        fill(fc1_b.as_mut_slice(), k_fc1);
        let k_fc2 = 1.0 / (cfg.actor_hidden as f64).sqrt();
        let mut fc2_w = DMatrix::zeros(cfg.action_dim, cfg.actor_hidden);
        let mut fc2_b = DVector::zeros(cfg.action_dim);
        fill(fc2_w.as_mut_slice(), k_fc2);
        fill(fc2_b.as_mut_slice(), k_fc2);
        Self {
            lstm,
            fc1_w,
            fc1_b,
            fc2_w,
            fc2_b,
        }
    }

    /// All-zero parameters with the configured shapes.
    pub fn zeros(cfg: &PolicyConfig) -> Self {
        let h = cfg.rnn_hidden;
        let lstm = (0..cfg.rnn_layers)
            .map(|layer| {
                let in_dim = if layer == 0 { cfg.input_dim } else { h };
                LstmLayer {
                    w_ih: DMatrix::zeros(4 * h, in_dim),
                    w_hh: DMatrix::zeros(4 * h, h),
                    bias: DVector::zeros(4 * h),
                }
            })
            .collect();
        Self {
            lstm,
            fc1_w: DMatrix::zeros(cfg.actor_hidden, h),
            fc1_b: DVector::zeros(cfg.actor_hidden),
            fc2_w: DMatrix::zeros(cfg.action_dim, cfg.actor_hidden),
            fc2_b: DVector::zeros(cfg.action_dim),
        }
    }

    /// Zero parameters with the same shapes as `self` (gradient buffer).
    pub fn zeros_like(&self) -> Self {
        let lstm = self
            .lstm
            .iter()
            .map(|l| LstmLayer {
                w_ih: DMatrix::zeros(l.w_ih.nrows(), l.w_ih.ncols()),
                w_hh: DMatrix::zeros(l.w_hh.nrows(), l.w_hh.ncols()),
                bias: DVector::zeros(l.bias.len()),
            })
            .collect();
        Self {
            lstm,
            fc1_w: DMatrix::zeros(self.fc1_w.nrows(), self.fc1_w.ncols()),
            fc1_b: DVector::zeros(self.fc1_b.len()),
            fc2_w: DMatrix::zeros(self.fc2_w.nrows(), self.fc2_w.ncols()),
            fc2_b: DVector::zeros(self.fc2_b.len()),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.lstm[0].w_ih.ncols()
    }

    pub fn hidden(&self) -> usize {
        self.lstm[0].w_hh.ncols()
    }

    pub fn n_layers(&self) -> usize {
        self.lstm.len()
    }

    pub fn actor_hidden(&self) -> usize {
        self.fc1_w.nrows()
    }

    pub fn action_dim(&self) -> usize {
        self.fc2_w.nrows()
    }

    /// Total scalar parameter count.
    pub fn n_params(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// Named views of every tensor, in the canonical flatten order.
    pub fn tensors(&self) -> Vec<(String, &[f64])> {
        let mut out = Vec::new();
        for (i, l) in self.lstm.iter().enumerate() {
            out.push((format!("lstm{i}.w_ih"), l.w_ih.as_slice()));
            out.push((format!("lstm{i}.w_hh"), l.w_hh.as_slice()));
            out.push((format!("lstm{i}.bias"), l.bias.as_slice()));
        }
        out.push(("fc1.w".to_owned(), self.fc1_w.as_slice()));
        out.push(("fc1.b".to_owned(), self.fc1_b.as_slice()));
        out.push(("fc2.w".to_owned(), self.fc2_w.as_slice()));
        out.push(("fc2.b".to_owned(), self.fc2_b.as_slice()));
        out
    }

    /// Mutable views in the same order as [`PolicyParams::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for l in self.lstm.iter_mut() {
            out.push(l.w_ih.as_mut_slice());
            out.push(l.w_hh.as_mut_slice());
            out.push(l.bias.as_mut_slice());
        }
        out.push(self.fc1_w.as_mut_slice());
        out.push(self.fc1_b.as_mut_slice());
        out.push(self.fc2_w.as_mut_slice());
        out.push(self.fc2_b.as_mut_slice());
        out
    }

    pub fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }
}

/// Recurrent state: per-layer `(h, c)` pairs, zero at sequence start.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub layers: Vec<(Vec<f64>, Vec<f64>)>,
}

impl LstmState {
    pub fn zero(params: &PolicyParams) -> Self {
        let h = params.hidden();
        Self {
            layers: vec![(vec![0.0; h], vec![0.0; h]); params.n_layers()],
        }
    }
}

/// Execution mode for a single inference step.
pub enum StepMode<'a> {
    /// Deterministic: dropout disabled.
    Eval,
    /// Inverted dropout active with the given probability and stream.
    Train {
        dropout_p: f64,
        rng: &'a mut ChaCha8Rng,
    },
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Exact GELU: `0.5·x·(1 + erf(x/√2))`.
#[inline]
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2))
}

/// GELU derivative: `Φ(x) + x·φ(x)` with the standard normal CDF and
/// PDF.
#[inline]
pub fn gelu_prime(x: f64) -> f64 {
    const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;
    let phi_cdf = 0.5 * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2));
    phi_cdf + x * INV_SQRT_2PI * (-0.5 * x * x).exp()
}

fn check_input(params: &PolicyParams, input: &[f64]) -> Result<(), PolicyError> {
    if input.len() != params.input_dim() {
        return Err(PolicyError::ShapeMismatch {
            what: "policy input",
            expected: params.input_dim(),
            got: input.len(),
        });
    }
    if input.iter().any(|v| !v.is_finite()) {
        return Err(PolicyError::NonFinite);
    }
    Ok(())
}

/// LSTM cell body shared by the stepwise and batched paths.
///
/// `z` holds the full pre-activation `[i, f, g, o]` for one timestep;
/// `h_prev`/`c_prev` are read, `h_out`/`c_out` written.  Returns the
/// post-activation gates and `tanh(c)` through the output slices so the
/// training path can cache them.
#[allow(clippy::too_many_arguments)]
#[inline]
fn cell_update(
    hidden: usize,
    z: &[f64],
    c_prev: &[f64],
    gates_out: &mut [f64],
    c_out: &mut [f64],
    tanh_c_out: &mut [f64],
    h_out: &mut [f64],
) {
    for k in 0..hidden {
        let i = sigmoid(z[k]);
        let f = sigmoid(z[hidden + k]);
        let g = z[2 * hidden + k].tanh();
        let o = sigmoid(z[3 * hidden + k]);
        let c = f * c_prev[k] + i * g;
        let tc = c.tanh();
        gates_out[k] = i;
        gates_out[hidden + k] = f;
        gates_out[2 * hidden + k] = g;
        gates_out[3 * hidden + k] = o;
        c_out[k] = c;
        tanh_c_out[k] = tc;
        h_out[k] = o * tc;
    }
}

/// Head body shared by both paths: FC1 → GELU → (dropout) → FC2 for one
/// column.  The dropout mask entries (0 or `1/(1−p)`) are produced by
/// `mask_fn` so eval mode can pass the identity.
fn head_column(
    params: &PolicyParams,
    x_top: &[f64],
    mut mask_fn: impl FnMut(usize) -> f64,
) -> Vec<f64> {
    let ah = params.actor_hidden();
    let mut a1 = vec![0.0; ah];
    gemv_acc(&mut a1, &params.fc1_w, x_top);
    for (v, b) in a1.iter_mut().zip(params.fc1_b.iter()) {
        *v += b;
    }
    let mut dropped = vec![0.0; ah];
    for k in 0..ah {
        dropped[k] = gelu(a1[k]) * mask_fn(k);
    }
    let mut y = vec![0.0; params.action_dim()];
    gemv_acc(&mut y, &params.fc2_w, &dropped);
    for (v, b) in y.iter_mut().zip(params.fc2_b.iter()) {
        *v += b;
    }
    y
}

/// Advance one timestep.
///
/// Returns the action vector and the successor state.  Eval mode is a
/// pure function of `(params, input, state)`.
pub fn policy_step(
    params: &PolicyParams,
    input: &[f64],
    state: &LstmState,
    mode: StepMode,
) -> Result<(Vec<f64>, LstmState), PolicyError> {
    check_input(params, input)?;
    let hidden = params.hidden();
    let mut next = state.clone();
    let mut x = input.to_vec();
    for (layer, params_l) in params.lstm.iter().enumerate() {
        let (h_prev, c_prev) = &state.layers[layer];
        // Same accumulation order as the batched path: input
        // contraction, bias, then the recurrent contraction.
        let mut z = vec![0.0; 4 * hidden];
        gemv_acc(&mut z, &params_l.w_ih, &x);
        for (v, b) in z.iter_mut().zip(params_l.bias.iter()) {
            *v += b;
        }
        gemv_acc(&mut z, &params_l.w_hh, h_prev);
        let mut gates = vec![0.0; 4 * hidden];
        let mut tanh_c = vec![0.0; hidden];
        let (h_new, c_new) = &mut next.layers[layer];
        cell_update(hidden, &z, c_prev, &mut gates, c_new, &mut tanh_c, h_new);
        x = h_new.clone();
    }
    let y = match mode {
        StepMode::Eval => head_column(params, &x, |_| 1.0),
        StepMode::Train { dropout_p, rng } => {
            debug_assert!((0.0..1.0).contains(&dropout_p));
            if dropout_p == 0.0 {
                head_column(params, &x, |_| 1.0)
            } else {
                let scale = 1.0 / (1.0 - dropout_p);
                head_column(params, &x, |_| {
                    if rng.gen::<f64>() < dropout_p {
                        0.0
                    } else {
                        scale
                    }
                })
            }
        }
    };
    if y.iter().any(|v| !v.is_finite()) {
        return Err(PolicyError::NonFinite);
    }
    Ok((y, next))
}

/// Fold [`policy_step`] over a sequence from the zero state.
///
/// Internally runs the batched whole-sequence kernels, so this *is* the
/// training-time forward (minus caching); the equivalence with an
/// explicit stepwise fold is asserted by tests.
pub fn policy_forward(
    params: &PolicyParams,
    inputs: &[Vec<f64>],
    mode: StepMode,
) -> Result<Vec<Vec<f64>>, PolicyError> {
    if inputs.is_empty() {
        return Ok(Vec::new());
    }
    for input in inputs {
        check_input(params, input)?;
    }
    let x0 = inputs_to_matrix(params.input_dim(), inputs);
    let dropout = match mode {
        StepMode::Eval => None,
        StepMode::Train { dropout_p, rng } => Some((dropout_p, rng)),
    };
    let (outputs, _) = forward_seq(params, &x0, dropout)?;
    Ok((0..outputs.ncols())
        .map(|t| outputs.column(t).iter().copied().collect())
        .collect())
}

/// Pack per-step inputs into the column-per-timestep matrix layout.
pub fn inputs_to_matrix(input_dim: usize, inputs: &[Vec<f64>]) -> DMatrix<f64> {
    let t_len = inputs.len();
    let mut x = DMatrix::zeros(input_dim, t_len);
    for (t, step) in inputs.iter().enumerate() {
        x.column_mut(t).copy_from_slice(step);
    }
    x
}

/// Per-layer activation record from a whole-sequence forward.
#[derive(Debug, Clone)]
pub struct LayerCache {
    /// Post-activation gates `[i, f, g, o]`, (4·hidden × T).
    pub gates: DMatrix<f64>,
    /// Cell states, (hidden × T).
    pub c: DMatrix<f64>,
    /// `tanh(c)`, (hidden × T).
    pub tanh_c: DMatrix<f64>,
    /// Hidden outputs, (hidden × T).
    pub h: DMatrix<f64>,
}

/// Everything the backward pass needs from a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Network input, (input_dim × T).
    pub x0: DMatrix<f64>,
    pub layers: Vec<LayerCache>,
    /// FC1 pre-activation, (actor_hidden × T).
    pub a1: DMatrix<f64>,
    /// Dropout mask (entries 0 or `1/(1−p)`), `None` in eval/`p = 0`.
    pub drop_mask: Option<DMatrix<f64>>,
    /// FC2 input (post-GELU, post-dropout), (actor_hidden × T).
    pub dropped: DMatrix<f64>,
}

/// Whole-sequence forward with caching.
///
/// The input-to-hidden contraction of every LSTM layer and the whole
/// head run as matrix-matrix products over time; only the recurrent
/// contraction is sequential.  Returns `(outputs (action_dim × T),
/// cache)`.
pub fn forward_seq(
    params: &PolicyParams,
    x0: &DMatrix<f64>,
    dropout: Option<(f64, &mut ChaCha8Rng)>,
) -> Result<(DMatrix<f64>, ForwardCache), PolicyError> {
    let hidden = params.hidden();
    let t_len = x0.ncols();
    if x0.nrows() != params.input_dim() {
        return Err(PolicyError::ShapeMismatch {
            what: "sequence input rows",
            expected: params.input_dim(),
            got: x0.nrows(),
        });
    }

    let mut layers = Vec::with_capacity(params.n_layers());
    let mut x = x0.clone();
    for params_l in &params.lstm {
        // Batched input contraction + bias for every timestep at once.
        let mut z_in = DMatrix::zeros(4 * hidden, t_len);
        gemm_acc(&mut z_in, &params_l.w_ih, &x);
        add_col_broadcast(&mut z_in, params_l.bias.as_slice());

        let mut gates = DMatrix::zeros(4 * hidden, t_len);
        let mut c_mat = DMatrix::zeros(hidden, t_len);
        let mut tanh_c = DMatrix::zeros(hidden, t_len);
        let mut h_mat = DMatrix::zeros(hidden, t_len);
        let mut h_prev = vec![0.0; hidden];
        let mut c_prev = vec![0.0; hidden];
        let mut z_t = vec![0.0; 4 * hidden];
        for t in 0..t_len {
            z_t.copy_from_slice(&z_in.as_slice()[t * 4 * hidden..(t + 1) * 4 * hidden]);
            gemv_acc(&mut z_t, &params_l.w_hh, &h_prev);
            let g_col = &mut gates.as_mut_slice()[t * 4 * hidden..(t + 1) * 4 * hidden];
            // Split borrows: c, tanh_c, h columns for this timestep.
            let c_col = &mut c_mat.as_mut_slice()[t * hidden..(t + 1) * hidden];
            let tc_col = &mut tanh_c.as_mut_slice()[t * hidden..(t + 1) * hidden];
            let h_col = &mut h_mat.as_mut_slice()[t * hidden..(t + 1) * hidden];
            cell_update(hidden, &z_t, &c_prev, g_col, c_col, tc_col, h_col);
            h_prev.copy_from_slice(h_col);
            c_prev.copy_from_slice(c_col);
        }
        x = h_mat.clone();
        layers.push(LayerCache {
            gates,
            c: c_mat,
            tanh_c,
            h: h_mat,
        });
    }

    // Head, batched over time.
    let mut a1 = DMatrix::zeros(params.actor_hidden(), t_len);
    gemm_acc(&mut a1, &params.fc1_w, &x);
    add_col_broadcast(&mut a1, params.fc1_b.as_slice());

    let drop_mask = match dropout {
        Some((p, rng)) if p > 0.0 => {
            debug_assert!(p < 1.0);
            let scale = 1.0 / (1.0 - p);
            let mut mask = DMatrix::zeros(params.actor_hidden(), t_len);
            // Column-major draw order matches per-step draws.
            for v in mask.as_mut_slice() {
                *v = if rng.gen::<f64>() < p { 0.0 } else { scale };
            }
            Some(mask)
        }
        _ => None,
    };

    let mut dropped = DMatrix::zeros(params.actor_hidden(), t_len);
    match &drop_mask {
        Some(mask) => {
            for ((d, a), m) in dropped
                .as_mut_slice()
                .iter_mut()
                .zip(a1.as_slice())
                .zip(mask.as_slice())
            {
                *d = gelu(*a) * m;
            }
        }
        None => {
            for (d, a) in dropped.as_mut_slice().iter_mut().zip(a1.as_slice()) {
                *d = gelu(*a);
            }
        }
    }

    let mut outputs = DMatrix::zeros(params.action_dim(), t_len);
    gemm_acc(&mut outputs, &params.fc2_w, &dropped);
    add_col_broadcast(&mut outputs, params.fc2_b.as_slice());

    if outputs.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(PolicyError::NonFinite);
    }

    Ok((
        outputs,
        ForwardCache {
            x0: x0.clone(),
            layers,
            a1,
            drop_mask,
            dropped,
        },
    ))
}

/// Backpropagation through time.
///
/// `d_out` is ∂loss/∂outputs, (action_dim × T).  Returns gradients with
/// the shapes of `params`.  Weight gradients accumulate as batched
/// outer products (`DZ·Xᵀ`); only the backward recurrence is
/// sequential.
pub fn backward_seq(
    params: &PolicyParams,
    cache: &ForwardCache,
    d_out: &DMatrix<f64>,
) -> PolicyParams {
    let hidden = params.hidden();
    let t_len = cache.x0.ncols();
    assert_eq!(d_out.shape(), (params.action_dim(), t_len));
    let mut grads = params.zeros_like();

    // Head.
    row_sum_acc(grads.fc2_b.as_mut_slice(), d_out);
    gemm_nt_acc(&mut grads.fc2_w, d_out, &cache.dropped);
    let mut d_dropped = DMatrix::zeros(params.actor_hidden(), t_len);
    gemm_tn_acc(&mut d_dropped, &params.fc2_w, d_out);
    // Through dropout and GELU in one elementwise pass.
    let mut d_a1 = d_dropped;
    match &cache.drop_mask {
        Some(mask) => {
            for ((d, a), m) in d_a1
                .as_mut_slice()
                .iter_mut()
                .zip(cache.a1.as_slice())
                .zip(mask.as_slice())
            {
                *d *= m * gelu_prime(*a);
            }
        }
        None => {
            for (d, a) in d_a1.as_mut_slice().iter_mut().zip(cache.a1.as_slice()) {
                *d *= gelu_prime(*a);
            }
        }
    }
    row_sum_acc(grads.fc1_b.as_mut_slice(), &d_a1);
    let x_top = &cache.layers.last().expect("at least one layer").h;
    gemm_nt_acc(&mut grads.fc1_w, &d_a1, x_top);
    let mut d_h = DMatrix::zeros(hidden, t_len);
    gemm_tn_acc(&mut d_h, &params.fc1_w, &d_a1);

    // LSTM layers, top to bottom.
    for layer in (0..params.n_layers()).rev() {
        let lc = &cache.layers[layer];
        let params_l = &params.lstm[layer];
        let gates = lc.gates.as_slice();
        let c_s = lc.c.as_slice();
        let tc_s = lc.tanh_c.as_slice();
        let dh_s = d_h.as_slice();

        let mut dz_all = DMatrix::zeros(4 * hidden, t_len);
        let mut dh_carry = vec![0.0; hidden];
        let mut dc_carry = vec![0.0; hidden];
        for t in (0..t_len).rev() {
            let g_col = &gates[t * 4 * hidden..(t + 1) * 4 * hidden];
            let tc_col = &tc_s[t * hidden..(t + 1) * hidden];
            let dh_col = &dh_s[t * hidden..(t + 1) * hidden];
            let dz_col = &mut dz_all.as_mut_slice()[t * 4 * hidden..(t + 1) * 4 * hidden];
            for k in 0..hidden {
                let i = g_col[k];
                let f = g_col[hidden + k];
                let g = g_col[2 * hidden + k];
                let o = g_col[3 * hidden + k];
                let tc = tc_col[k];
                let dh = dh_col[k] + dh_carry[k];
                let dc = dh * o * (1.0 - tc * tc) + dc_carry[k];
                let c_prev = if t > 0 { c_s[(t - 1) * hidden + k] } else { 0.0 };
                dz_col[k] = dc * g * i * (1.0 - i);
                dz_col[hidden + k] = dc * c_prev * f * (1.0 - f);
                dz_col[2 * hidden + k] = dc * i * (1.0 - g * g);
                dz_col[3 * hidden + k] = dh * tc * o * (1.0 - o);
                dc_carry[k] = dc * f;
            }
            dh_carry.iter_mut().for_each(|v| *v = 0.0);
            gemv_tn_acc(&mut dh_carry, &params_l.w_hh, dz_col);
        }

        // Batched weight gradients.
        row_sum_acc(grads.lstm[layer].bias.as_mut_slice(), &dz_all);
        let layer_input: &DMatrix<f64> = if layer == 0 {
            &cache.x0
        } else {
            &cache.layers[layer - 1].h
        };
        gemm_nt_acc(&mut grads.lstm[layer].w_ih, &dz_all, layer_input);
        // h shifted one step right (column t holds h_{t−1}).
        let mut h_shift = DMatrix::zeros(hidden, t_len);
        for t in 1..t_len {
            let src: Vec<f64> = lc.h.as_slice()[(t - 1) * hidden..t * hidden].to_vec();
            h_shift.as_mut_slice()[t * hidden..(t + 1) * hidden].copy_from_slice(&src);
        }
        gemm_nt_acc(&mut grads.lstm[layer].w_hh, &dz_all, &h_shift);

        if layer > 0 {
            let mut d_lower = DMatrix::zeros(hidden, t_len);
            gemm_tn_acc(&mut d_lower, &params_l.w_ih, &dz_all);
            d_h = d_lower;
        }
    }

    grads
}
