//! Finite-difference audit of the analytic backward pass.
//!
//! Hand-written backpropagation earns trust by surviving comparison
//! with central differences: perturb one parameter at a time by ±ε,
//! re-run the deterministic forward, and difference the losses.  The
//! audit samples a stratified subset of indices from *every* tensor —
//! a bug localized to one gradient term cannot hide behind the others.
//!
//! The fault-injection variant deliberately mis-scales one gradient
//! tensor and must report a large error; it guards the checker itself
//! against being vacuous.

use nalgebra::DMatrix;

use super::net::{backward_seq, forward_seq, PolicyParams};
use super::train::l1_loss_and_grad;
use super::PolicyError;

/// Default perturbation size.  Large enough to stay clear of f64
/// rounding on loss differences, small enough that curvature error is
/// negligible.
pub const DEFAULT_EPSILON: f64 = 1e-5;

/// Default indices sampled per tensor.  With the ten tensors of a
/// two-layer policy this audits ≥ 200 parameters.
pub const DEFAULT_PER_TENSOR: usize = 25;

/// Summary of one gradient audit.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Number of parameters compared.
    pub n_checked: usize,
    /// Worst relative error `|gₐ − gₙ| / (|gₐ| + |gₙ| + 1e-12)`.
    pub max_rel_err: f64,
    /// Mean relative error over all checked parameters.
    pub mean_rel_err: f64,
    /// Tensor containing the worst error.
    pub worst_tensor: String,
}

fn eval_loss(
    params: &PolicyParams,
    inputs: &DMatrix<f64>,
    targets: &DMatrix<f64>,
) -> Result<f64, PolicyError> {
    let (outputs, _) = forward_seq(params, inputs, None)?;
    Ok(l1_loss_and_grad(&outputs, targets).0)
}

fn check_with_tamper(
    params: &PolicyParams,
    inputs: &DMatrix<f64>,
    targets: &DMatrix<f64>,
    epsilon: f64,
    per_tensor: usize,
    tamper: impl FnOnce(&mut PolicyParams),
) -> Result<GradCheckReport, PolicyError> {
    assert!(epsilon > 0.0 && per_tensor > 0);
    let (outputs, cache) = forward_seq(params, inputs, None)?;
    let (_, d_out) = l1_loss_and_grad(&outputs, targets);
    let mut grads = backward_seq(params, &cache, &d_out);
    tamper(&mut grads);

    let tensor_names: Vec<String> = params.tensors().into_iter().map(|(n, _)| n).collect();
    let mut work = params.clone();
    let mut n_checked = 0;
    let mut max_rel_err = 0.0_f64;
    let mut sum_rel_err = 0.0;
    let mut worst_tensor = String::new();

    for (ti, name) in tensor_names.iter().enumerate() {
        let len = params.tensors()[ti].1.len();
        let n_here = per_tensor.min(len);
        for j in 0..n_here {
            // Evenly strided coverage: deterministic, touches both ends
            // of every tensor.
            let idx = j * len / n_here;
            let original = params.tensors()[ti].1[idx];

            work.tensors_mut()[ti][idx] = original + epsilon;
            let loss_plus = eval_loss(&work, inputs, targets)?;
            work.tensors_mut()[ti][idx] = original - epsilon;
            let loss_minus = eval_loss(&work, inputs, targets)?;
            work.tensors_mut()[ti][idx] = original;

            let numeric = (loss_plus - loss_minus) / (2.0 * epsilon);
            let analytic = grads.tensors()[ti].1[idx];
            let rel = (analytic - numeric).abs() / (analytic.abs() + numeric.abs() + 1e-12);
            n_checked += 1;
            sum_rel_err += rel;
            if rel > max_rel_err {
                max_rel_err = rel;
                worst_tensor = name.clone();
            }
        }
    }

    Ok(GradCheckReport {
        n_checked,
        max_rel_err,
        mean_rel_err: sum_rel_err / n_checked as f64,
        worst_tensor,
    })
}

/// Compare the analytic gradient against central differences on a
/// stratified sample of at least `per_tensor` indices from each tensor.
///
/// Runs in eval mode (no dropout), so the loss is a deterministic
/// function of the parameters and the comparison is exact up to
/// finite-difference truncation.
pub fn grad_check(
    params: &PolicyParams,
    inputs: &DMatrix<f64>,
    targets: &DMatrix<f64>,
    epsilon: f64,
    per_tensor: usize,
) -> Result<GradCheckReport, PolicyError> {
    check_with_tamper(params, inputs, targets, epsilon, per_tensor, |_| {})
}

/// [`grad_check`] with the decoder output-weight gradient deliberately
/// scaled by `fc2_scale` before comparison.  A scale away from 1 must
/// surface as a large reported error — this is the checker's own
/// self-test hook.
pub fn grad_check_with_fault(
    params: &PolicyParams,
    inputs: &DMatrix<f64>,
    targets: &DMatrix<f64>,
    epsilon: f64,
    per_tensor: usize,
    fc2_scale: f64,
) -> Result<GradCheckReport, PolicyError> {
    check_with_tamper(params, inputs, targets, epsilon, per_tensor, |grads| {
        grads.fc2_w *= fc2_scale;
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::net::inputs_to_matrix;
    use crate::policy::PolicyConfig;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy_problem(seed: u64) -> (PolicyParams, DMatrix<f64>, DMatrix<f64>) {
        let cfg = PolicyConfig {
            input_dim: 8,
            rnn_hidden: 8,
            actor_hidden: 8,
            rnn_layers: 2,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = PolicyParams::init(&cfg, &mut rng);
        let t_len = 10;
        let inputs: Vec<Vec<f64>> = (0..t_len)
            .map(|_| (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let x = inputs_to_matrix(8, &inputs);
        let mut y = DMatrix::zeros(4, t_len);
        for v in y.as_mut_slice() {
            *v = rng.gen_range(-0.05..0.05);
        }
        (params, x, y)
    }

    /// With zero parameters, inputs, and targets the loss is even in
    /// every parameter, so both gradients vanish identically.
    #[test]
    fn all_zero_problem_reports_exactly_zero_error() {
        let cfg = PolicyConfig {
            input_dim: 8,
            rnn_hidden: 8,
            actor_hidden: 8,
            ..Default::default()
        };
        let params = PolicyParams::zeros(&cfg);
        let x = DMatrix::zeros(8, 5);
        let y = DMatrix::zeros(4, 5);
        let report = grad_check(&params, &x, &y, DEFAULT_EPSILON, DEFAULT_PER_TENSOR).unwrap();
        assert_eq!(report.max_rel_err, 0.0);
        assert_eq!(report.mean_rel_err, 0.0);
    }

    #[test]
    fn analytic_gradient_matches_central_differences() {
        let (params, x, y) = toy_problem(41);
        let report = grad_check(&params, &x, &y, DEFAULT_EPSILON, DEFAULT_PER_TENSOR).unwrap();
        assert!(report.n_checked >= 200, "only {} checked", report.n_checked);
        assert!(
            report.max_rel_err < 1e-4,
            "max rel err {} in {}",
            report.max_rel_err,
            report.worst_tensor
        );
    }

    #[test]
    fn injected_gradient_fault_is_detected() {
        let (params, x, y) = toy_problem(42);
        let clean = grad_check(&params, &x, &y, DEFAULT_EPSILON, DEFAULT_PER_TENSOR).unwrap();
        assert!(clean.max_rel_err < 1e-4);
        let faulty =
            grad_check_with_fault(&params, &x, &y, DEFAULT_EPSILON, DEFAULT_PER_TENSOR, 1.1)
                .unwrap();
        assert!(
            faulty.max_rel_err > 1e-2,
            "fault went unnoticed: {}",
            faulty.max_rel_err
        );
        assert_eq!(faulty.worst_tensor, "fc2.w");
    }
}
