//! Scaling-law curve families and a Levenberg–Marquardt fitter.
//!
//! Success rates are handled in percent (0–100) throughout, matching
//! the coefficient magnitudes the rest of the toolkit reports.  Five
//! families cover the shapes that show up in the experiment sweeps:
//!
//! - [`CurveModel::MichaelisMenten`] — saturating success vs. data
//!   volume, `Vmax·x/(Km + x)`;
//! - [`CurveModel::PowerLaw`] — required data vs. spatial volume,
//!   `a·x^b`;
//! - [`CurveModel::Gaussian`] — success vs. inference mask ratio;
//! - [`CurveModel::ExpOffset`] — success vs. observation noise,
//!   `a·e^{kx} + c` with `k` deliberately unconstrained in sign;
//! - [`CurveModel::LogFit`] — the logarithmic alternative
//!   `a·ln(b·x) + c`, kept for curve-shape comparison near `x → 0`.
//!   Note `b` is redundant with `c` (`a·ln(bx) + c = a·ln x +
//!   (a·ln b + c)`), so only its *curve* is identifiable, not the
//!   individual parameters.
//!
//! The fitter damps `JᵀJ` with `μ·diag(JᵀJ)`, grows `μ` on rejected
//! steps and shrinks it on accepted ones, and reports `converged` only
//! when the final SSE gradient satisfies `‖∇SSE‖ ≤ 1e-8·(1 + SSE)` —
//! an optimality certificate, not merely a stall detector.

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Relative tolerance used by both the SSE-decrease stopping rule and
/// the gradient stopping rule unless the caller overrides it.
pub const DEFAULT_TOL: f64 = 1e-10;

/// Default iteration cap for [`lm_fit`].
pub const DEFAULT_MAX_ITER: usize = 200;

/// Gradient-certificate factor: a fit is `converged` iff
/// `‖∇SSE‖ ≤ CONVERGENCE_GRAD_FACTOR · (1 + SSE)`.
pub const CONVERGENCE_GRAD_FACTOR: f64 = 1e-8;

/// Errors from curve evaluation, fitting, and the capacity bound.
#[derive(Debug, thiserror::Error)]
pub enum FitError {
    #[error("domain error: {0}")]
    DomainError(String),
    #[error("normal matrix is singular beyond damping repair")]
    SingularNormalMatrix,
    #[error("need at least {needed} points for this family, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("invalid initial parameters: {0}")]
    InvalidInit(String),
    #[error("target success {target} is not reachable (Vmax = {vmax})")]
    Unreachable { vmax: f64, target: f64 },
}

/// Which parametric family to fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveFamily {
    MichaelisMenten,
    PowerLaw,
    Gaussian,
    ExpOffset,
    LogFit,
}

impl CurveFamily {
    pub fn n_params(self) -> usize {
        match self {
            Self::MichaelisMenten | Self::PowerLaw => 2,
            Self::Gaussian | Self::ExpOffset | Self::LogFit => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::MichaelisMenten => "michaelis_menten",
            Self::PowerLaw => "power_law",
            Self::Gaussian => "gaussian",
            Self::ExpOffset => "exp_offset",
            Self::LogFit => "log_fit",
        }
    }

    /// Parse a family name as used by the CLI (forgiving about case,
    /// hyphens, and a few aliases).
    pub fn parse(name: &str) -> Result<Self, FitError> {
        let key: String = name
            .to_ascii_lowercase()
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect();
        Ok(match key.as_str() {
            "michaelismenten" | "mm" => Self::MichaelisMenten,
            "powerlaw" | "power" => Self::PowerLaw,
            "gaussian" | "gauss" => Self::Gaussian,
            "expoffset" | "exp" | "exponential" => Self::ExpOffset,
            "logfit" | "log" | "logarithmic" => Self::LogFit,
            _ => {
                return Err(FitError::DomainError(format!(
                    "unknown curve family {name:?}"
                )))
            }
        })
    }

    /// Build a model of this family from a flat parameter vector.
    pub fn model(self, params: &[f64]) -> CurveModel {
        assert_eq!(params.len(), self.n_params());
        match self {
            Self::MichaelisMenten => CurveModel::MichaelisMenten {
                vmax: params[0],
                km: params[1],
            },
            Self::PowerLaw => CurveModel::PowerLaw {
                a: params[0],
                b: params[1],
            },
            Self::Gaussian => CurveModel::Gaussian {
                a: params[0],
                b: params[1],
                c: params[2],
            },
            Self::ExpOffset => CurveModel::ExpOffset {
                a: params[0],
                k: params[1],
                c: params[2],
            },
            Self::LogFit => CurveModel::LogFit {
                a: params[0],
                b: params[1],
                c: params[2],
            },
        }
    }
}

/// A parametric curve with concrete coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum CurveModel {
    /// `Vmax·x/(Km + x)` — saturating growth.
    MichaelisMenten { vmax: f64, km: f64 },
    /// `a·x^b`, defined for `x > 0`.
    PowerLaw { a: f64, b: f64 },
    /// `a·exp(−(x − b)²/(2c²))`.
    Gaussian { a: f64, b: f64, c: f64 },
    /// `a·exp(k·x) + c`; `k` may take either sign.
    ExpOffset { a: f64, k: f64, c: f64 },
    /// `a·ln(b·x) + c`, defined for `b·x > 0`.
    LogFit { a: f64, b: f64, c: f64 },
}

impl CurveModel {
    pub fn family(&self) -> CurveFamily {
        match self {
            Self::MichaelisMenten { .. } => CurveFamily::MichaelisMenten,
            Self::PowerLaw { .. } => CurveFamily::PowerLaw,
            Self::Gaussian { .. } => CurveFamily::Gaussian,
            Self::ExpOffset { .. } => CurveFamily::ExpOffset,
            Self::LogFit { .. } => CurveFamily::LogFit,
        }
    }

    /// Flat parameter vector in the family's canonical order.
    pub fn params(&self) -> Vec<f64> {
        match *self {
            Self::MichaelisMenten { vmax, km } => vec![vmax, km],
            Self::PowerLaw { a, b } => vec![a, b],
            Self::Gaussian { a, b, c } => vec![a, b, c],
            Self::ExpOffset { a, k, c } => vec![a, k, c],
            Self::LogFit { a, b, c } => vec![a, b, c],
        }
    }

    /// Parameter names in the same order as [`CurveModel::params`].
    pub fn param_names(&self) -> &'static [&'static str] {
        match self {
            Self::MichaelisMenten { .. } => &["vmax", "km"],
            Self::PowerLaw { .. } => &["a", "b"],
            Self::Gaussian { .. } => &["a", "b", "c"],
            Self::ExpOffset { .. } => &["a", "k", "c"],
            Self::LogFit { .. } => &["a", "b", "c"],
        }
    }
}

/// Evaluate a curve at `x`.
pub fn eval_curve(model: &CurveModel, x: f64) -> Result<f64, FitError> {
    let y = match *model {
        CurveModel::MichaelisMenten { vmax, km } => {
            let denom = km + x;
            if denom == 0.0 {
                return Err(FitError::DomainError(format!(
                    "Michaelis–Menten pole at x = −Km = {x}"
                )));
            }
            vmax * x / denom
        }
        CurveModel::PowerLaw { a, b } => {
            if x <= 0.0 {
                return Err(FitError::DomainError(format!(
                    "power law needs x > 0, got {x}"
                )));
            }
            a * x.powf(b)
        }
        CurveModel::Gaussian { a, b, c } => {
            if c == 0.0 {
                return Err(FitError::DomainError("Gaussian width c = 0".into()));
            }
            let z = (x - b) / c;
            a * (-0.5 * z * z).exp()
        }
        CurveModel::ExpOffset { a, k, c } => a * (k * x).exp() + c,
        CurveModel::LogFit { a, b, c } => {
            if b * x <= 0.0 {
                return Err(FitError::DomainError(format!(
                    "log fit needs b·x > 0, got b = {b}, x = {x}"
                )));
            }
            a * (b * x).ln() + c
        }
    };
    Ok(y)
}

/// Partial derivatives ∂y/∂θ at `x`, in canonical parameter order.
fn jacobian_row(model: &CurveModel, x: f64) -> Result<Vec<f64>, FitError> {
    Ok(match *model {
        CurveModel::MichaelisMenten { vmax, km } => {
            let denom = km + x;
            if denom == 0.0 {
                return Err(FitError::DomainError("Michaelis–Menten pole".into()));
            }
            vec![x / denom, -vmax * x / (denom * denom)]
        }
        CurveModel::PowerLaw { a, b } => {
            if x <= 0.0 {
                return Err(FitError::DomainError("power law needs x > 0".into()));
            }
            let xb = x.powf(b);
            vec![xb, a * xb * x.ln()]
        }
        CurveModel::Gaussian { a, b, c } => {
            if c == 0.0 {
                return Err(FitError::DomainError("Gaussian width c = 0".into()));
            }
            let z = (x - b) / c;
            let e = (-0.5 * z * z).exp();
            vec![e, a * e * (x - b) / (c * c), a * e * (x - b) * (x - b) / (c * c * c)]
        }
        CurveModel::ExpOffset { a, k, .. } => {
            let e = (k * x).exp();
            vec![e, a * x * e, 1.0]
        }
        CurveModel::LogFit { a, b, .. } => {
            if b * x <= 0.0 {
                return Err(FitError::DomainError("log fit needs b·x > 0".into()));
            }
            vec![(b * x).ln(), a / b, 1.0]
        }
    })
}

/// Result of one [`lm_fit`] run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub model: CurveModel,
    /// Sum of squared residuals at the returned parameters.
    pub sse: f64,
    /// Coefficient of determination; NaN when the data has zero
    /// variance.
    pub r2: f64,
    /// Levenberg–Marquardt iterations performed.
    pub iterations: usize,
    /// True iff the gradient certificate `‖∇SSE‖ ≤ 1e-8·(1 + SSE)`
    /// holds at the returned parameters.
    pub converged: bool,
}

/// Residuals `f(xᵢ) − yᵢ` and their sum of squares.  Any domain error
/// or non-finite value is reported as `None` (an infeasible trial).
fn residuals(model: &CurveModel, points: &[(f64, f64)]) -> Option<(DVector<f64>, f64)> {
    let mut r = DVector::zeros(points.len());
    let mut sse = 0.0;
    for (i, &(x, y)) in points.iter().enumerate() {
        let f = eval_curve(model, x).ok()?;
        if !f.is_finite() {
            return None;
        }
        let d = f - y;
        r[i] = d;
        sse += d * d;
    }
    sse.is_finite().then_some((r, sse))
}

fn jacobian(model: &CurveModel, points: &[(f64, f64)]) -> Option<DMatrix<f64>> {
    let p = model.family().n_params();
    let mut j = DMatrix::zeros(points.len(), p);
    for (i, &(x, _)) in points.iter().enumerate() {
        let row = jacobian_row(model, x).ok()?;
        for (k, v) in row.iter().enumerate() {
            if !v.is_finite() {
                return None;
            }
            j[(i, k)] = *v;
        }
    }
    Some(j)
}

/// Clamp parameters into the family's valid region.
///
/// Positivity constraints get a data-scaled floor rather than a raw
/// `> 0`: a Michaelis constant far below the smallest sampled volume
/// is indistinguishable from a constant curve, so the fitter pins it
/// at `1e-3·min positive x` and lets the convergence certificate
/// report the degeneracy instead of chasing the ridge to `Km → 0`.
fn project_into_region(family: CurveFamily, theta: &mut DVector<f64>, x_min_pos: f64) {
    match family {
        CurveFamily::MichaelisMenten => {
            theta[0] = theta[0].max(1e-12);
            theta[1] = theta[1].max(1e-3 * x_min_pos);
        }
        CurveFamily::PowerLaw | CurveFamily::Gaussian => {
            theta[0] = theta[0].max(1e-12);
        }
        CurveFamily::ExpOffset | CurveFamily::LogFit => {}
    }
}

/// Fit a family to `(x, y)` points by damped Gauss–Newton
/// (Levenberg–Marquardt, `μ·diag(JᵀJ)` damping).
///
/// Points are sorted internally, so the result is independent of input
/// ordering.  Trial parameters are projected into the family's valid
/// region (see [`project_into_region`]).  Returns the best parameters
/// found even when the optimality certificate fails
/// (`converged = false`); only structural problems (too few points,
/// infeasible init, irreparably singular normal equations) are errors.
pub fn lm_fit(
    family: CurveFamily,
    points: &[(f64, f64)],
    init: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<FitResult, FitError> {
    let p = family.n_params();
    if init.len() != p {
        return Err(FitError::InvalidInit(format!(
            "{} parameters expected, got {}",
            p,
            init.len()
        )));
    }
    if points.len() < p + 1 {
        return Err(FitError::InsufficientData {
            needed: p + 1,
            got: points.len(),
        });
    }
    let mut points: Vec<(f64, f64)> = points.to_vec();
    points.sort_by(|a, b| a.partial_cmp(b).expect("finite points"));
    let x_min_pos = points
        .iter()
        .map(|&(x, _)| x)
        .filter(|&x| x > 0.0)
        .fold(f64::INFINITY, f64::min);
    let x_min_pos = if x_min_pos.is_finite() { x_min_pos } else { 1e-9 };

    let mut theta = DVector::from_column_slice(init);
    project_into_region(family, &mut theta, x_min_pos);
    let model_at = |t: &DVector<f64>| family.model(t.as_slice());
    let (mut r, mut sse) = residuals(&model_at(&theta), &points)
        .ok_or_else(|| FitError::InvalidInit("initial parameters are infeasible".into()))?;

    let mut best_theta = theta.clone();
    let mut best_sse = sse;
    let mut mu: Option<f64> = None; // Seeded from the first JᵀJ diagonal.
    let mut nu = 2.0;
    let mut iterations = 0;

    for _ in 0..max_iter {
        iterations += 1;
        let j = jacobian(&model_at(&theta), &points).ok_or_else(|| {
            FitError::DomainError("Jacobian infeasible at current parameters".into())
        })?;
        let jtj = j.transpose() * &j;
        let g = j.transpose() * &r; // ∇SSE/2
        let gnorm = 2.0 * g.norm();
        if gnorm <= tol {
            break;
        }
        let mu_val = *mu.get_or_insert_with(|| {
            1e-3 * (0..p).map(|i| jtj[(i, i)]).fold(0.0, f64::max).max(1e-12)
        });

        // Damped normal equations; repeated Cholesky failure means the
        // problem is singular beyond what damping can repair.
        let mut solved = None;
        let mut mu_try = mu_val;
        for _ in 0..60 {
            let mut a = jtj.clone();
            for i in 0..p {
                a[(i, i)] += mu_try * jtj[(i, i)].max(1e-12);
            }
            if let Some(chol) = Cholesky::new(a) {
                let delta = chol.solve(&(-&g));
                if delta.iter().all(|v| v.is_finite()) {
                    solved = Some((delta, mu_try));
                    break;
                }
            }
            mu_try *= 4.0;
        }
        let (delta, mu_used) = solved.ok_or(FitError::SingularNormalMatrix)?;
        mu = Some(mu_used);

        let mut trial = &theta + &delta;
        project_into_region(family, &mut trial, x_min_pos);
        match residuals(&model_at(&trial), &points) {
            Some((r_trial, sse_trial)) if sse_trial < sse => {
                let decrease = (sse - sse_trial) / sse.max(f64::MIN_POSITIVE);
                theta = trial;
                r = r_trial;
                sse = sse_trial;
                if sse < best_sse {
                    best_sse = sse;
                    best_theta = theta.clone();
                }
                mu = Some((mu_used / 3.0).max(1e-15));
                nu = 2.0;
                if decrease < tol {
                    break;
                }
            }
            _ => {
                // Rejected (worse or infeasible): raise damping.
                mu = Some(mu_used * nu);
                nu *= 2.0;
                if mu.expect("set above") > 1e16 {
                    break;
                }
            }
        }
    }

    // The Gaussian is even in its width; report it positive.
    if family == CurveFamily::Gaussian {
        best_theta[2] = best_theta[2].abs();
    }
    let model = model_at(&best_theta);
    let (r_best, sse_best) = residuals(&model, &points).expect("best parameters were feasible");
    let converged = match jacobian(&model, &points) {
        Some(j) => {
            let gnorm = 2.0 * (j.transpose() * &r_best).norm();
            gnorm <= CONVERGENCE_GRAD_FACTOR * (1.0 + sse_best)
        }
        None => false,
    };

    let n = points.len() as f64;
    let y_mean = points.iter().map(|&(_, y)| y).sum::<f64>() / n;
    let sstot: f64 = points.iter().map(|&(_, y)| (y - y_mean).powi(2)).sum();
    let r2 = if sstot > 0.0 {
        1.0 - sse_best / sstot
    } else {
        f64::NAN
    };

    Ok(FitResult {
        model,
        sse: sse_best,
        r2,
        iterations,
        converged,
    })
}

/// Deterministic default initial parameters for [`lm_fit`], derived
/// from simple data statistics.
pub fn default_init(family: CurveFamily, points: &[(f64, f64)]) -> Result<Vec<f64>, FitError> {
    if points.len() < family.n_params() + 1 {
        return Err(FitError::InsufficientData {
            needed: family.n_params() + 1,
            got: points.len(),
        });
    }
    let mut sorted: Vec<(f64, f64)> = points.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite points"));
    let y_max = sorted.iter().map(|&(_, y)| y).fold(f64::MIN, f64::max);
    let y_min = sorted.iter().map(|&(_, y)| y).fold(f64::MAX, f64::min);
    let (x_lo, x_hi) = (sorted[0].0, sorted[sorted.len() - 1].0);

    Ok(match family {
        CurveFamily::MichaelisMenten => {
            let median_x = sorted[sorted.len() / 2].0;
            vec![y_max, median_x.max(f64::MIN_POSITIVE)]
        }
        CurveFamily::PowerLaw => {
            // Log–log linear regression over the positive quadrant.
            let logs: Vec<(f64, f64)> = sorted
                .iter()
                .filter(|&&(x, y)| x > 0.0 && y > 0.0)
                .map(|&(x, y)| (x.ln(), y.ln()))
                .collect();
            if logs.len() < 2 {
                return Err(FitError::InvalidInit(
                    "power-law init needs ≥ 2 points with x > 0 and y > 0".into(),
                ));
            }
            let n = logs.len() as f64;
            let mx = logs.iter().map(|p| p.0).sum::<f64>() / n;
            let my = logs.iter().map(|p| p.1).sum::<f64>() / n;
            let var: f64 = logs.iter().map(|p| (p.0 - mx).powi(2)).sum();
            let cov: f64 = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
            let b = if var > 0.0 { cov / var } else { 0.5 };
            vec![(my - b * mx).exp(), b]
        }
        CurveFamily::Gaussian => {
            let peak_x = sorted
                .iter()
                .max_by(|a, b| a.1.partial_cmp(&b.1).expect("finite"))
                .expect("non-empty")
                .0;
            let width = ((x_hi - x_lo) / 4.0).max(f64::MIN_POSITIVE);
            vec![y_max, peak_x, width]
        }
        CurveFamily::ExpOffset => {
            let k0 = if sorted[sorted.len() - 1].1 >= sorted[0].1 {
                1.0
            } else {
                -1.0
            };
            vec![sorted[0].1 - y_min, k0, y_min]
        }
        CurveFamily::LogFit => {
            // Regress y on ln x (b is redundant; pin it to 1).
            let logs: Vec<(f64, f64)> = sorted
                .iter()
                .filter(|&&(x, _)| x > 0.0)
                .map(|&(x, y)| (x.ln(), y))
                .collect();
            if logs.len() < 2 {
                return Err(FitError::InvalidInit(
                    "log-fit init needs ≥ 2 points with x > 0".into(),
                ));
            }
            let n = logs.len() as f64;
            let mx = logs.iter().map(|p| p.0).sum::<f64>() / n;
            let my = logs.iter().map(|p| p.1).sum::<f64>() / n;
            let var: f64 = logs.iter().map(|p| (p.0 - mx).powi(2)).sum();
            let cov: f64 = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
            let a = if var > 0.0 { cov / var } else { 1.0 };
            vec![a, 1.0, my - a * mx]
        }
    })
}

/// Data volume needed to reach `target` percent success under a
/// Michaelis–Menten law: the closed-form inversion
/// `n = target·Km/(Vmax − target)`.
pub fn data_for_success(mm: &CurveModel, target: f64) -> Result<f64, FitError> {
    let CurveModel::MichaelisMenten { vmax, km } = *mm else {
        return Err(FitError::DomainError(
            "data_for_success needs a Michaelis–Menten model".into(),
        ));
    };
    if !(target > 0.0) {
        return Err(FitError::DomainError(format!(
            "target must be positive, got {target}"
        )));
    }
    if km <= 0.0 {
        return Err(FitError::DomainError(format!(
            "Michaelis constant must be positive, got {km}"
        )));
    }
    if vmax <= target {
        return Err(FitError::Unreachable { vmax, target });
    }
    Ok(target * km / (vmax - target))
}

/// Inputs to the sample-complexity capacity bound.
///
/// `k`: cameras; `d`: grid resolution per dimension; `b`: workspace
/// extent (meters); `eps`: target precision (meters).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VcBoundQuery {
    pub k: f64,
    pub d: f64,
    pub b: f64,
    pub eps: f64,
}

impl VcBoundQuery {
    pub fn new(k: f64, d: f64, b: f64, eps: f64) -> Result<Self, FitError> {
        let q = Self { k, d, b, eps };
        q.validate()?;
        Ok(q)
    }

    pub fn validate(&self) -> Result<(), FitError> {
        for (name, v) in [("k", self.k), ("d", self.d), ("b", self.b), ("eps", self.eps)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(FitError::DomainError(format!(
                    "{name} must be positive and finite, got {v}"
                )));
            }
        }
        Ok(())
    }

    fn log_argument(&self) -> f64 {
        3.0 * self.b.powi(3) * self.k * self.d
            / (4.0 * std::f64::consts::PI * self.eps.powi(3))
    }
}

/// Capacity bound `k·d·ln(3·b³·k·d / (4π·ε³))`.
///
/// Errors with `DomainError` when the logarithm's argument is ≤ 1
/// (the bound would be non-positive and meaningless).
pub fn vc_bound(q: &VcBoundQuery) -> Result<f64, FitError> {
    q.validate()?;
    let arg = q.log_argument();
    if arg <= 1.0 {
        return Err(FitError::DomainError(format!(
            "log argument {arg} ≤ 1; bound undefined"
        )));
    }
    Ok(q.k * q.d * arg.ln())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample(model: &CurveModel, xs: &[f64]) -> Vec<(f64, f64)> {
        xs.iter()
            .map(|&x| (x, eval_curve(model, x).unwrap()))
            .collect()
    }

    /// Multiplicative noise `y·(1 + level·u)`, `u ~ U(−1, 1)`.
    fn noisy(points: &[(f64, f64)], level: f64, seed: u64) -> Vec<(f64, f64)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        points
            .iter()
            .map(|&(x, y)| (x, y * (1.0 + level * rng.gen_range(-1.0..1.0))))
            .collect()
    }

    fn perturbed(params: &[f64], frac: f64, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        params
            .iter()
            .map(|&p| p * (1.0 + frac * rng.gen_range(-1.0_f64..1.0)))
            .collect()
    }

    fn max_rel_err(got: &[f64], want: &[f64]) -> f64 {
        got.iter()
            .zip(want)
            .map(|(g, w)| (g - w).abs() / w.abs().max(1e-12))
            .fold(0.0, f64::max)
    }

    #[test]
    fn eval_matches_pinned_examples() {
        let mm = CurveModel::MichaelisMenten {
            vmax: 100.0,
            km: 500.0,
        };
        assert_eq!(eval_curve(&mm, 500.0).unwrap(), 50.0);
        assert_eq!(eval_curve(&mm, 0.0).unwrap(), 0.0);

        let power = CurveModel::PowerLaw { a: 640.32, b: 0.35 };
        let y = eval_curve(&power, 34440.0).unwrap();
        assert!((2.0e4..=3.0e4).contains(&y), "{y}");
        assert_relative_eq!(y, 2.48e4, max_relative = 0.01);
        assert!(matches!(
            eval_curve(&power, 0.0),
            Err(FitError::DomainError(_))
        ));

        let gauss = CurveModel::Gaussian {
            a: 92.23,
            b: 0.09,
            c: 0.41,
        };
        assert_relative_eq!(eval_curve(&gauss, 0.09).unwrap(), 92.23, epsilon = 1e-12);

        let exp = CurveModel::ExpOffset {
            a: 63.62,
            k: 10.01,
            c: 24.75,
        };
        assert_relative_eq!(eval_curve(&exp, 0.0).unwrap(), 88.37, epsilon = 1e-12);

        let log = CurveModel::LogFit {
            a: 2.0,
            b: 0.5,
            c: 1.0,
        };
        assert_relative_eq!(eval_curve(&log, 2.0).unwrap(), 1.0, epsilon = 1e-12);
        assert!(matches!(
            eval_curve(&log, -1.0),
            Err(FitError::DomainError(_))
        ));
    }

    #[test]
    fn mm_half_saturation_is_exact() {
        let mm = CurveModel::MichaelisMenten {
            vmax: 100.0,
            km: 500.0,
        };
        assert_eq!(eval_curve(&mm, 500.0).unwrap(), 50.0);
    }

    #[test]
    fn mm_is_strictly_increasing_and_bounded() {
        let mm = CurveModel::MichaelisMenten {
            vmax: 93.0,
            km: 210.0,
        };
        let mut prev = -1.0;
        for i in 0..2000 {
            let x = i as f64 * 10.0;
            let y = eval_curve(&mm, x).unwrap();
            assert!(y > prev, "not increasing at x = {x}");
            assert!(y < 93.0, "exceeds Vmax at x = {x}");
            prev = y;
        }
    }

    #[test]
    fn jacobians_match_central_differences() {
        let models = [
            CurveModel::MichaelisMenten {
                vmax: 90.0,
                km: 30.0,
            },
            CurveModel::PowerLaw { a: 640.0, b: 0.35 },
            CurveModel::Gaussian {
                a: 92.0,
                b: 0.1,
                c: 0.4,
            },
            CurveModel::ExpOffset {
                a: 60.0,
                k: -3.0,
                c: 25.0,
            },
            CurveModel::LogFit {
                a: 20.0,
                b: 0.3,
                c: -6.0,
            },
        ];
        for model in models {
            let family = model.family();
            let theta = model.params();
            for x in [0.07, 0.5, 2.0, 40.0] {
                let analytic = jacobian_row(&model, x).unwrap();
                for j in 0..theta.len() {
                    let h = 1e-6 * theta[j].abs().max(1e-3);
                    let mut plus = theta.clone();
                    plus[j] += h;
                    let mut minus = theta.clone();
                    minus[j] -= h;
                    let numeric = (eval_curve(&family.model(&plus), x).unwrap()
                        - eval_curve(&family.model(&minus), x).unwrap())
                        / (2.0 * h);
                    assert_relative_eq!(
                        analytic[j],
                        numeric,
                        epsilon = 1e-5,
                        max_relative = 1e-5
                    );
                }
            }
        }
    }

    #[test]
    fn power_law_recovers_printed_coefficients() {
        let truth = CurveModel::PowerLaw { a: 640.32, b: 0.35 };
        let points = sample(&truth, &[125.0, 1000.0, 8000.0, 34440.0]);
        let init = perturbed(&truth.params(), 0.5, 1);
        let fit = lm_fit(CurveFamily::PowerLaw, &points, &init, DEFAULT_TOL, 200).unwrap();
        // No converged assertion: at this data scale (x ~ 3e4, y ~ 2e4)
        // the Jacobian amplifies machine-epsilon residuals past the
        // absolute gradient certificate even at a perfect fit.  The
        // recovery itself is the contract.
        assert!(fit.sse < 1e-12, "{fit:?}");
        let got = fit.model.params();
        assert!((got[0] - 640.32).abs() / 640.32 < 1e-6, "{got:?}");
        assert!((got[1] - 0.35).abs() < 1e-8, "{got:?}");
    }

    #[test]
    fn gaussian_recovers_printed_coefficients() {
        let truth = CurveModel::Gaussian {
            a: 92.23,
            b: 0.09,
            c: 0.41,
        };
        let xs: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
        let points = sample(&truth, &xs);
        let init = perturbed(&truth.params(), 0.5, 2);
        let fit = lm_fit(CurveFamily::Gaussian, &points, &init, DEFAULT_TOL, 200).unwrap();
        assert!(fit.converged, "{fit:?}");
        assert!(max_rel_err(&fit.model.params(), &truth.params()) < 1e-6);
    }

    #[test]
    fn exp_offset_recovers_printed_coefficients() {
        let truth = CurveModel::ExpOffset {
            a: 63.62,
            k: 10.01,
            c: 24.75,
        };
        let xs = [0.0, 0.01, 0.02, 0.05, 0.1, 0.2, 0.5];
        let points = sample(&truth, &xs);
        let init = perturbed(&truth.params(), 0.5, 3);
        let fit = lm_fit(CurveFamily::ExpOffset, &points, &init, DEFAULT_TOL, 200).unwrap();
        assert!(fit.converged, "{fit:?}");
        assert!(max_rel_err(&fit.model.params(), &truth.params()) < 1e-6, "{fit:?}");
    }

    #[test]
    fn mm_recovers_from_default_init() {
        let truth = CurveModel::MichaelisMenten {
            vmax: 97.0,
            km: 38.0,
        };
        let xs = [1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0, 128.0, 256.0, 512.0];
        let points = sample(&truth, &xs);
        let init = default_init(CurveFamily::MichaelisMenten, &points).unwrap();
        let fit = lm_fit(CurveFamily::MichaelisMenten, &points, &init, DEFAULT_TOL, 200).unwrap();
        assert!(fit.converged);
        assert!(max_rel_err(&fit.model.params(), &truth.params()) < 1e-6);
        assert!(fit.r2 > 0.999999);
    }

    /// All identifiable families survive 1% multiplicative noise with
    /// ≤ 5% parameter error.
    #[test]
    fn noisy_recovery_stays_within_five_percent() {
        let cases: Vec<(CurveModel, Vec<f64>)> = vec![
            (
                CurveModel::MichaelisMenten {
                    vmax: 95.0,
                    km: 22.0,
                },
                vec![1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0, 128.0, 256.0],
            ),
            (
                CurveModel::PowerLaw { a: 640.32, b: 0.35 },
                vec![125.0, 500.0, 1000.0, 4000.0, 8000.0, 16000.0, 34440.0],
            ),
            (
                CurveModel::Gaussian {
                    a: 92.23,
                    b: 0.09,
                    c: 0.41,
                },
                (0..=10).map(|i| i as f64 / 10.0).collect(),
            ),
            (
                CurveModel::ExpOffset {
                    a: 63.62,
                    k: 10.01,
                    c: 24.75,
                },
                vec![0.0, 0.01, 0.02, 0.05, 0.1, 0.2, 0.35, 0.5],
            ),
        ];
        for (truth, xs) in cases {
            let points = noisy(&sample(&truth, &xs), 0.01, 9);
            let init = perturbed(&truth.params(), 0.5, 10);
            let fit = lm_fit(truth.family(), &points, &init, DEFAULT_TOL, 200).unwrap();
            let err = max_rel_err(&fit.model.params(), &truth.params());
            assert!(err < 0.05, "{:?}: rel err {err}", truth.family());
        }
    }

    /// The log family's parameters are redundant (`b` folds into `c`),
    /// so only the curve itself is recoverable.
    #[test]
    fn log_fit_recovers_the_curve_but_not_the_parameterization() {
        let truth = CurveModel::LogFit {
            a: 2095.51,
            b: 0.3,
            c: -642.93,
        };
        let xs = [1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0, 128.0];
        let points = sample(&truth, &xs);
        let init = default_init(CurveFamily::LogFit, &points).unwrap();
        let fit = lm_fit(CurveFamily::LogFit, &points, &init, DEFAULT_TOL, 200).unwrap();
        for &(x, y) in &points {
            let y_hat = eval_curve(&fit.model, x).unwrap();
            assert_relative_eq!(y_hat, y, epsilon = 1e-6, max_relative = 1e-6);
        }
    }

    #[test]
    fn fit_is_invariant_to_point_ordering() {
        let truth = CurveModel::MichaelisMenten {
            vmax: 88.0,
            km: 55.0,
        };
        let xs = [4.0, 512.0, 16.0, 1.0, 128.0, 64.0, 8.0, 2.0, 256.0, 32.0];
        let forward = noisy(&sample(&truth, &xs), 0.01, 4);
        let mut reversed = forward.clone();
        reversed.reverse();
        let init = [80.0, 40.0];
        let a = lm_fit(CurveFamily::MichaelisMenten, &forward, &init, DEFAULT_TOL, 200).unwrap();
        let b = lm_fit(CurveFamily::MichaelisMenten, &reversed, &init, DEFAULT_TOL, 200).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn constant_data_is_reported_unconverged() {
        let points: Vec<(f64, f64)> = [125.0, 1000.0, 8000.0, 34440.0]
            .iter()
            .map(|&x| (x, 50.0))
            .collect();
        let init = default_init(CurveFamily::MichaelisMenten, &points).unwrap();
        let fit = lm_fit(CurveFamily::MichaelisMenten, &points, &init, DEFAULT_TOL, 200).unwrap();
        assert!(!fit.converged, "{fit:?}");
        assert!(fit.r2.is_nan() || fit.r2 <= 1.0);
    }

    #[test]
    fn too_few_points_and_bad_inits_are_rejected() {
        let points = [(1.0, 2.0), (2.0, 3.0)];
        assert!(matches!(
            lm_fit(CurveFamily::Gaussian, &points, &[1.0, 0.0, 1.0], DEFAULT_TOL, 50),
            Err(FitError::InsufficientData { needed: 4, got: 2 })
        ));
        // Power-law init with a domain violation in the data.
        let bad = [(0.0, 1.0), (1.0, 2.0), (2.0, 3.0)];
        assert!(matches!(
            lm_fit(CurveFamily::PowerLaw, &bad, &[1.0, 0.5], DEFAULT_TOL, 50),
            Err(FitError::InvalidInit(_))
        ));
    }

    #[test]
    fn data_for_success_inverts_the_curve() {
        let mm = CurveModel::MichaelisMenten {
            vmax: 100.0,
            km: 500.0,
        };
        assert_eq!(data_for_success(&mm, 80.0).unwrap(), 2000.0);
        // Half-saturation: target = Vmax/2 ⟹ n = Km.
        assert_eq!(data_for_success(&mm, 50.0).unwrap(), 500.0);
        // Round trip: the curve at the returned volume hits the target.
        let n = data_for_success(&mm, 80.0).unwrap();
        assert_relative_eq!(eval_curve(&mm, n).unwrap(), 80.0, epsilon = 1e-12);

        let low = CurveModel::MichaelisMenten {
            vmax: 75.0,
            km: 500.0,
        };
        assert!(matches!(
            data_for_success(&low, 80.0),
            Err(FitError::Unreachable { .. })
        ));
        assert!(matches!(
            data_for_success(&mm, 0.0),
            Err(FitError::DomainError(_))
        ));
        assert!(matches!(
            data_for_success(&CurveModel::PowerLaw { a: 1.0, b: 1.0 }, 80.0),
            Err(FitError::DomainError(_))
        ));
    }

    #[test]
    fn vc_bound_matches_direct_evaluation() {
        let q = VcBoundQuery::new(1.0, 1e4, 0.3, 0.05).unwrap();
        let value = vc_bound(&q).unwrap();
        // k·d·ln(3·b³·k·d/(4π·ε³)) evaluated independently.
        let arg = 3.0 * 0.3f64.powi(3) * 1.0 * 1e4 / (4.0 * std::f64::consts::PI * 0.05f64.powi(3));
        assert_relative_eq!(value, 1e4 * arg.ln(), epsilon = 1e-9);
        assert_relative_eq!(value, 1.315e5, max_relative = 1e-3);
    }

    #[test]
    fn vc_bound_is_monotone_in_extent_and_resolution() {
        let base = VcBoundQuery::new(2.0, 5000.0, 0.3, 0.05).unwrap();
        let mut prev = vc_bound(&base).unwrap();
        for i in 1..20 {
            let q = VcBoundQuery {
                b: base.b + 0.05 * i as f64,
                ..base
            };
            let v = vc_bound(&q).unwrap();
            assert!(v > prev);
            prev = v;
        }
        let mut prev = vc_bound(&base).unwrap();
        for i in 1..20 {
            let q = VcBoundQuery {
                d: base.d * (1.0 + i as f64),
                ..base
            };
            let v = vc_bound(&q).unwrap();
            assert!(v > prev);
            prev = v;
        }
    }

    #[test]
    fn vc_bound_domain_errors() {
        // Log argument ≤ 1: tiny extent, large precision.
        let q = VcBoundQuery {
            k: 1.0,
            d: 1.0,
            b: 0.01,
            eps: 0.5,
        };
        assert!(matches!(vc_bound(&q), Err(FitError::DomainError(_))));
        assert!(VcBoundQuery::new(0.0, 1.0, 1.0, 1.0).is_err());
        assert!(VcBoundQuery::new(1.0, -2.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn family_parsing_is_forgiving() {
        assert_eq!(
            CurveFamily::parse("Michaelis-Menten").unwrap(),
            CurveFamily::MichaelisMenten
        );
        assert_eq!(CurveFamily::parse("power_law").unwrap(), CurveFamily::PowerLaw);
        assert_eq!(CurveFamily::parse("EXP").unwrap(), CurveFamily::ExpOffset);
        assert!(CurveFamily::parse("spline").is_err());
    }
}
