//! Behavior-cloning trainer, parameter persistence, and closed-loop
//! evaluation.
//!
//! Training is per-episode full-sequence gradient descent: each update
//! runs one episode through the cached forward, backpropagates the mean
//! L1 action error through time, and applies one AdamW step under a
//! warmup-then-cosine learning-rate schedule.  Observations are
//! re-masked afresh every epoch (per-camera Bernoulli dropping), so the
//! network keeps seeing new visibility patterns of the same
//! demonstrations.
//!
//! Determinism: all randomness — init, shuffle, masking, dropout —
//! runs on four ChaCha8 streams derived from `PolicyConfig::seed`, and
//! every float operation has a fixed order, so identical inputs
//! reproduce identical parameters bit for bit.

use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::observe::{apply_mask, FailureModel, ObservationVec, OBS_DIM, PROPRIO_DIM, VIS_DIM};
use crate::sim::{
    derive_seed, is_success, rollout, Agent, EnvAction, EnvState, Episode, RangeConfig, World,
    ACTION_DIM, DEFAULT_HORIZON,
};

use super::net::{backward_seq, forward_seq, policy_step, LstmState, PolicyParams, StepMode};
use super::{PolicyConfig, PolicyError};

/// RNG stream tags hung off `PolicyConfig::seed`.
const INIT_STREAM: u64 = 0;
const SHUFFLE_STREAM: u64 = 1;
const MASK_STREAM: u64 = 2;
const DROPOUT_STREAM: u64 = 3;

/// Episodes per evaluation batch unless a caller says otherwise.
pub const DEFAULT_EVAL_EPISODES: usize = 48;

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Mean absolute error over all `(action_dim × T)` entries, plus its
/// gradient with respect to the outputs.  The subgradient at an exact
/// tie is taken as zero.
pub(super) fn l1_loss_and_grad(
    outputs: &DMatrix<f64>,
    targets: &DMatrix<f64>,
) -> (f64, DMatrix<f64>) {
    assert_eq!(outputs.shape(), targets.shape());
    let n = (outputs.nrows() * outputs.ncols()) as f64;
    let mut grad = DMatrix::zeros(outputs.nrows(), outputs.ncols());
    let mut loss = 0.0;
    for ((g, &o), &t) in grad
        .as_mut_slice()
        .iter_mut()
        .zip(outputs.as_slice())
        .zip(targets.as_slice())
    {
        let d = o - t;
        loss += d.abs();
        *g = if d > 0.0 {
            1.0 / n
        } else if d < 0.0 {
            -1.0 / n
        } else {
            0.0
        };
    }
    (loss / n, grad)
}

/// Learning rate at a given update index: linear warmup to the peak
/// over `ceil(warmup_ratio · total)` updates, then cosine decay to
/// zero over the remainder.
pub(super) fn schedule_lr(peak: f64, update: usize, total: usize, warmup_ratio: f64) -> f64 {
    if total == 0 {
        return peak;
    }
    let warmup = (warmup_ratio * total as f64).ceil() as usize;
    if update < warmup {
        peak * (update + 1) as f64 / warmup as f64
    } else {
        let span = (total - warmup).max(1) as f64;
        let progress = (update - warmup) as f64 / span;
        peak * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}

/// AdamW with decoupled weight decay and bias correction.  Moment
/// buffers are flat and aligned with the canonical tensor order.
struct AdamW {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamW {
    fn new(n_params: usize) -> Self {
        Self {
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut PolicyParams, grads: &PolicyParams, lr: f64, wd: f64) {
        self.t += 1;
        let bc1 = 1.0 - ADAM_BETA1.powi(self.t as i32);
        let bc2 = 1.0 - ADAM_BETA2.powi(self.t as i32);
        let mut offset = 0;
        let grad_tensors = grads.tensors();
        for (p_slice, (_, g_slice)) in params.tensors_mut().into_iter().zip(grad_tensors) {
            for (p, &g) in p_slice.iter_mut().zip(g_slice) {
                let m = &mut self.m[offset];
                let v = &mut self.v[offset];
                *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *p -= lr * (m_hat / (v_hat.sqrt() + ADAM_EPS) + wd * *p);
                offset += 1;
            }
        }
        debug_assert_eq!(offset, self.m.len());
    }
}

/// Check one episode against the trainer's expected tensor widths.
fn check_episode(ep: &Episode) -> Result<(), PolicyError> {
    if ep.steps.is_empty() {
        return Err(PolicyError::EmptyDataset);
    }
    for step in &ep.steps {
        if step.obs.len() != VIS_DIM {
            return Err(PolicyError::ShapeMismatch {
                what: "episode bbox vector",
                expected: VIS_DIM,
                got: step.obs.len(),
            });
        }
        if step.proprio.len() != PROPRIO_DIM {
            return Err(PolicyError::ShapeMismatch {
                what: "episode proprio vector",
                expected: PROPRIO_DIM,
                got: step.proprio.len(),
            });
        }
        if step.action.len() != ACTION_DIM {
            return Err(PolicyError::ShapeMismatch {
                what: "episode action vector",
                expected: ACTION_DIM,
                got: step.action.len(),
            });
        }
    }
    Ok(())
}

/// Outcome of a behavior-cloning run.
#[derive(Debug, Clone)]
pub struct TrainReport {
    pub params: PolicyParams,
    /// Mean per-update loss of each epoch.
    pub loss_history: Vec<f64>,
    pub n_updates: usize,
}

impl TrainReport {
    pub fn final_loss(&self) -> f64 {
        *self.loss_history.last().expect("at least one epoch")
    }
}

/// Train a fresh policy on demonstration episodes by behavior cloning.
///
/// One gradient update per episode per epoch, in an order reshuffled
/// every epoch.  Each presentation re-rolls the observation mask, so a
/// single demonstration is seen under many visibility patterns across
/// the run.
pub fn bc_train(cfg: &PolicyConfig, episodes: &[Episode]) -> Result<TrainReport, PolicyError> {
    cfg.validate()?;
    if episodes.is_empty() {
        return Err(PolicyError::EmptyDataset);
    }
    if cfg.input_dim != OBS_DIM {
        return Err(PolicyError::ShapeMismatch {
            what: "trainer input width",
            expected: OBS_DIM,
            got: cfg.input_dim,
        });
    }
    if cfg.action_dim != ACTION_DIM {
        return Err(PolicyError::ShapeMismatch {
            what: "trainer action width",
            expected: ACTION_DIM,
            got: cfg.action_dim,
        });
    }
    for ep in episodes {
        check_episode(ep)?;
    }

    let mut init_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, INIT_STREAM));
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, SHUFFLE_STREAM));
    let mut mask_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, MASK_STREAM));
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, DROPOUT_STREAM));

    let mut params = PolicyParams::init(cfg, &mut init_rng);
    let mut opt = AdamW::new(params.n_params());
    let total_updates = cfg.epochs * episodes.len();

    // Targets never change; build them once.
    let targets: Vec<DMatrix<f64>> = episodes
        .iter()
        .map(|ep| {
            let mut t = DMatrix::zeros(ACTION_DIM, ep.steps.len());
            for (i, step) in ep.steps.iter().enumerate() {
                t.column_mut(i).copy_from_slice(&step.action);
            }
            t
        })
        .collect();

    let mut loss_history = Vec::with_capacity(cfg.epochs);
    let mut update = 0;
    let mut x = DMatrix::zeros(OBS_DIM, 0);
    for _epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..episodes.len()).collect();
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        for &idx in &order {
            let ep = &episodes[idx];
            let t_len = ep.steps.len();
            if x.ncols() != t_len {
                x = DMatrix::zeros(OBS_DIM, t_len);
            }
            for (t, step) in ep.steps.iter().enumerate() {
                let mut vis: [f64; VIS_DIM] =
                    step.obs.as_slice().try_into().expect("checked above");
                apply_mask(&mut vis, cfg.random_mask_ratio, &mut mask_rng);
                let col = &mut x.as_mut_slice()[t * OBS_DIM..(t + 1) * OBS_DIM];
                col[..VIS_DIM].copy_from_slice(&vis);
                col[VIS_DIM..].copy_from_slice(&step.proprio);
            }
            let dropout = if cfg.dropout_p > 0.0 {
                Some((cfg.dropout_p, &mut dropout_rng))
            } else {
                None
            };
            let (outputs, cache) = forward_seq(&params, &x, dropout)?;
            let (loss, d_out) = l1_loss_and_grad(&outputs, &targets[idx]);
            let grads = backward_seq(&params, &cache, &d_out);
            let lr = schedule_lr(cfg.lr, update, total_updates, cfg.warmup_ratio);
            opt.step(&mut params, &grads, lr, cfg.weight_decay);
            update += 1;
            epoch_loss += loss;
        }
        loss_history.push(epoch_loss / episodes.len() as f64);
    }

    if !params.is_finite() {
        return Err(PolicyError::NonFinite);
    }
    Ok(TrainReport {
        params,
        loss_history,
        n_updates: update,
    })
}

fn io_err(path: &Path, source: std::io::Error) -> PolicyError {
    PolicyError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn parse_err(path: &Path, detail: impl Into<String>) -> PolicyError {
    PolicyError::Parse {
        path: path.display().to_string(),
        detail: detail.into(),
    }
}

const PARAMS_MAGIC: &str = "graspbox-params v1";

/// Save parameters: a short text header listing tensor names and
/// shapes, the line `end`, then the raw little-endian f64 payload in
/// column-major order, tensor by tensor.
pub fn save_params(path: impl AsRef<Path>, params: &PolicyParams) -> Result<(), PolicyError> {
    let path = path.as_ref();
    let tensors = params.tensors();
    let mut buf = Vec::new();
    buf.extend_from_slice(PARAMS_MAGIC.as_bytes());
    buf.push(b'\n');
    for (i, l) in params.lstm.iter().enumerate() {
        use std::io::Write as _;
        write!(
            buf,
            "tensor lstm{i}.w_ih {} {}\ntensor lstm{i}.w_hh {} {}\ntensor lstm{i}.bias {} 1\n",
            l.w_ih.nrows(),
            l.w_ih.ncols(),
            l.w_hh.nrows(),
            l.w_hh.ncols(),
            l.bias.len(),
        )
        .expect("writing to Vec cannot fail");
    }
    {
        use std::io::Write as _;
        write!(
            buf,
            "tensor fc1.w {} {}\ntensor fc1.b {} 1\ntensor fc2.w {} {}\ntensor fc2.b {} 1\nend\n",
            params.fc1_w.nrows(),
            params.fc1_w.ncols(),
            params.fc1_b.len(),
            params.fc2_w.nrows(),
            params.fc2_w.ncols(),
            params.fc2_b.len(),
        )
        .expect("writing to Vec cannot fail");
    }
    for (_, data) in &tensors {
        for v in *data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    std::fs::write(path, buf).map_err(|e| io_err(path, e))
}

/// Load parameters saved by [`save_params`], rebuilding the
/// architecture from the header alone.
pub fn load_params(path: impl AsRef<Path>) -> Result<PolicyParams, PolicyError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| io_err(path, e))?;

    // Walk header lines up to `end`; everything after is payload.
    let mut specs: Vec<(String, usize, usize)> = Vec::new();
    let mut offset = 0;
    let mut saw_magic = false;
    let mut saw_end = false;
    while offset < bytes.len() {
        let rest = &bytes[offset..];
        let nl = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| parse_err(path, "unterminated header"))?;
        let line = std::str::from_utf8(&rest[..nl])
            .map_err(|_| parse_err(path, "non-UTF-8 header line"))?;
        offset += nl + 1;
        if !saw_magic {
            if line != PARAMS_MAGIC {
                return Err(parse_err(path, format!("bad magic line {line:?}")));
            }
            saw_magic = true;
            continue;
        }
        if line == "end" {
            saw_end = true;
            break;
        }
        let mut parts = line.split_whitespace();
        let (kw, name, rows, cols) = (
            parts.next().unwrap_or(""),
            parts.next().unwrap_or(""),
            parts.next().unwrap_or(""),
            parts.next().unwrap_or(""),
        );
        if kw != "tensor" || parts.next().is_some() {
            return Err(parse_err(path, format!("malformed header line {line:?}")));
        }
        let rows: usize = rows
            .parse()
            .map_err(|_| parse_err(path, format!("bad row count in {line:?}")))?;
        let cols: usize = cols
            .parse()
            .map_err(|_| parse_err(path, format!("bad column count in {line:?}")))?;
        if rows == 0 || cols == 0 {
            return Err(parse_err(path, format!("zero-sized tensor in {line:?}")));
        }
        specs.push((name.to_owned(), rows, cols));
    }
    if !saw_end {
        return Err(parse_err(path, "header missing `end` line"));
    }

    let payload = &bytes[offset..];
    let expected_len: usize = specs.iter().map(|(_, r, c)| r * c * 8).sum();
    if payload.len() != expected_len {
        return Err(parse_err(
            path,
            format!("payload is {} bytes, header promises {expected_len}", payload.len()),
        ));
    }

    let mut cursor = 0;
    let mut read_tensor = |rows: usize, cols: usize| -> Vec<f64> {
        let n = rows * cols;
        let data: Vec<f64> = payload[cursor..cursor + 8 * n]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        cursor += 8 * n;
        data
    };

    // The header must follow the canonical order; enforce as we build.
    let mut spec_iter = specs.iter();
    let mut expect = |want_name: &str| -> Result<(usize, usize, Vec<f64>), PolicyError> {
        let (name, rows, cols) = spec_iter
            .next()
            .ok_or_else(|| parse_err(path, format!("missing tensor {want_name}")))?;
        if name != want_name {
            return Err(parse_err(
                path,
                format!("expected tensor {want_name}, found {name}"),
            ));
        }
        Ok((*rows, *cols, read_tensor(*rows, *cols)))
    };

    let n_layers = specs
        .iter()
        .filter(|(n, _, _)| n.starts_with("lstm") && n.ends_with(".w_ih"))
        .count();
    if n_layers == 0 {
        return Err(parse_err(path, "no LSTM layers in header"));
    }

    let mut lstm = Vec::with_capacity(n_layers);
    for i in 0..n_layers {
        let (r_ih, c_ih, d_ih) = expect(&format!("lstm{i}.w_ih"))?;
        let (r_hh, c_hh, d_hh) = expect(&format!("lstm{i}.w_hh"))?;
        let (r_b, c_b, d_b) = expect(&format!("lstm{i}.bias"))?;
        if r_ih != r_hh || r_ih != r_b || c_b != 1 || r_hh != 4 * c_hh {
            return Err(parse_err(path, format!("inconsistent shapes in layer {i}")));
        }
        lstm.push(super::net::LstmLayer {
            w_ih: DMatrix::from_column_slice(r_ih, c_ih, &d_ih),
            w_hh: DMatrix::from_column_slice(r_hh, c_hh, &d_hh),
            bias: DVector::from_column_slice(&d_b),
        });
    }
    let hidden = lstm[0].w_hh.ncols();
    for (i, l) in lstm.iter().enumerate().skip(1) {
        if l.w_ih.ncols() != hidden || l.w_hh.ncols() != hidden {
            return Err(parse_err(path, format!("layer {i} width mismatch")));
        }
    }

    let (r1, c1, d1) = expect("fc1.w")?;
    let (rb1, cb1, db1) = expect("fc1.b")?;
    let (r2, c2, d2) = expect("fc2.w")?;
    let (rb2, cb2, db2) = expect("fc2.b")?;
    if spec_iter.next().is_some() {
        return Err(parse_err(path, "unexpected trailing tensor in header"));
    }
    if c1 != hidden || rb1 != r1 || cb1 != 1 || c2 != r1 || rb2 != r2 || cb2 != 1 {
        return Err(parse_err(path, "inconsistent head shapes"));
    }

    let params = PolicyParams {
        lstm,
        fc1_w: DMatrix::from_column_slice(r1, c1, &d1),
        fc1_b: DVector::from_column_slice(&db1),
        fc2_w: DMatrix::from_column_slice(r2, c2, &d2),
        fc2_b: DVector::from_column_slice(&db2),
    };
    if !params.is_finite() {
        return Err(parse_err(path, "non-finite parameter value"));
    }
    Ok(params)
}

/// Write a per-epoch loss curve as `epoch,loss` CSV.
pub fn save_loss_csv(path: impl AsRef<Path>, losses: &[f64]) -> Result<(), PolicyError> {
    let path = path.as_ref();
    let mut text = String::from("epoch,loss\n");
    for (epoch, loss) in losses.iter().enumerate() {
        text.push_str(&format!("{epoch},{loss:.16e}\n"));
    }
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

/// A trained policy driving the environment closed-loop.
///
/// Acts from the observation alone (the privileged state argument is
/// ignored), carrying LSTM state across steps and resetting it at
/// episode boundaries.
pub struct PolicyAgent {
    params: Arc<PolicyParams>,
    state: LstmState,
}

impl PolicyAgent {
    pub fn new(params: Arc<PolicyParams>) -> Self {
        let state = LstmState::zero(&params);
        Self { params, state }
    }
}

impl Agent for PolicyAgent {
    fn begin_episode(&mut self) {
        self.state = LstmState::zero(&self.params);
    }

    fn act(&mut self, _state: &EnvState, obs: &ObservationVec) -> EnvAction {
        let input = obs.to_input();
        // Finite params on bounded LSTM outputs cannot produce
        // non-finite actions, and the input width is fixed by
        // construction, so this cannot fail.
        let (y, next) = policy_step(&self.params, &input, &self.state, StepMode::Eval)
            .expect("eval step on validated parameters");
        self.state = next;
        EnvAction::from_array([y[0], y[1], y[2], y[3]])
    }
}

/// Closed-loop success statistics from an evaluation batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvalOutcome {
    pub episodes: usize,
    pub successes: usize,
}

impl EvalOutcome {
    pub fn success_rate(&self) -> f64 {
        if self.episodes == 0 {
            0.0
        } else {
            self.successes as f64 / self.episodes as f64
        }
    }
}

/// Evaluate any agent over `n_episodes` rollouts with per-episode
/// derived seeds.  Episodes run in parallel; `make_agent` supplies one
/// fresh agent per episode, so results are order-independent and
/// deterministic in `seed`.
pub fn evaluate_agent<A, F>(
    range: &RangeConfig,
    failure: &FailureModel,
    n_episodes: usize,
    seed: u64,
    make_agent: F,
) -> Result<EvalOutcome, PolicyError>
where
    A: Agent,
    F: Fn() -> A + Sync,
{
    let world = World::new(range.clone());
    let successes = (0..n_episodes)
        .into_par_iter()
        .map(|i| {
            let mut agent = make_agent();
            let ep_seed = derive_seed(seed, i as u64);
            rollout(&world, &mut agent, DEFAULT_HORIZON, ep_seed, failure)
                .map(|ep| usize::from(is_success(&ep)))
        })
        .try_reduce(|| 0, |a, b| Ok(a + b))
        .map_err(PolicyError::from)?;
    Ok(EvalOutcome {
        episodes: n_episodes,
        successes,
    })
}

/// Evaluate trained parameters closed-loop under a failure model.
pub fn evaluate(
    params: &PolicyParams,
    range: &RangeConfig,
    failure: &FailureModel,
    n_episodes: usize,
    seed: u64,
) -> Result<EvalOutcome, PolicyError> {
    let shared = Arc::new(params.clone());
    evaluate_agent(range, failure, n_episodes, seed, || {
        PolicyAgent::new(Arc::clone(&shared))
    })
}
