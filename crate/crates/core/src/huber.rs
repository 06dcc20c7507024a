//! Nuclear-norm penalized Huber trace regression.
//!
//! Minimizes `(1/n) Σ l_τ(yᵢ − ⟨Xᵢ, Θ⟩) + λ‖Θ‖_nuc` with a local adaptive
//! majorize-minimize (LAMM) loop: each outer step majorizes the smooth part by
//! an isotropic quadratic with curvature `α`, whose penalized minimizer is a
//! singular value soft-threshold. `α` is inflated by `ψ` until the quadratic
//! really lies above the loss at the candidate.

use nalgebra::{DMatrix, DVector};

use crate::error::{input_err, Result};
use crate::linalg::{full_svd, SvdFactors};

/// Inner-loop cap on `α` inflations per outer step.
const MAX_INFLATIONS: usize = 200;

/// One `(Xᵢ, yᵢ)` observation.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionSample {
    pub design: DMatrix<f64>,
    pub response: f64,
}

/// Huber loss `l_τ(x)`.
pub fn huber_loss(x: f64, tau: f64) -> Result<f64> {
    check_tau(tau)?;
    Ok(loss_unchecked(x, tau))
}

/// Derivative `l'_τ(x)`: `x` inside `[-τ, τ]`, `τ·sign(x)` outside.
pub fn huber_grad(x: f64, tau: f64) -> Result<f64> {
    check_tau(tau)?;
    Ok(grad_unchecked(x, tau))
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && !tau.is_nan() {
        Ok(())
    } else {
        input_err(format!("robustification tau must be > 0, got {tau}"))
    }
}

#[inline]
fn loss_unchecked(x: f64, tau: f64) -> f64 {
    let a = x.abs();
    if a <= tau {
        0.5 * x * x
    } else {
        tau * a - 0.5 * tau * tau
    }
}

/// `l(r − m) − l(r) + l'(r)·m`, exact in the quadratic and same-side linear regions.
#[inline]
fn huber_remainder(r: f64, m: f64, tau: f64) -> f64 {
    let r2 = r - m;
    if r.abs() <= tau && r2.abs() <= tau {
        0.5 * m * m
    } else if r.abs() > tau && r2.abs() > tau && r.signum() == r2.signum() {
        0.0
    } else {
        loss_unchecked(r2, tau) - loss_unchecked(r, tau) + grad_unchecked(r, tau) * m
    }
}

#[inline]
fn grad_unchecked(x: f64, tau: f64) -> f64 {
    x.clamp(-tau, tau)
}

/// Observations stacked for fast evaluation: row `i` of `design` is
/// `vec(Xᵢ)` (column-major), so `⟨Xᵢ, Θ⟩ = design.row(i) · vec(Θ)`.
#[derive(Debug, Clone)]
pub struct TraceRegression {
    d1: usize,
    d2: usize,
    design: DMatrix<f64>,
    response: DVector<f64>,
}

impl TraceRegression {
    pub fn from_samples(samples: &[RegressionSample]) -> Result<Self> {
        Self::from_pairs(samples.iter().map(|s| (&s.design, s.response)))
    }

    pub fn from_pairs<'a, I>(pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (&'a DMatrix<f64>, f64)>,
    {
        let mut rows: Vec<f64> = Vec::new();
        let mut ys = Vec::new();
        let mut shape = None;
        for (x, y) in pairs {
            match shape {
                None => shape = Some(x.shape()),
                Some(s) if s != x.shape() => {
                    return input_err(format!("design shape {:?} differs from {s:?}", x.shape()))
                }
                _ => {}
            }
            if !y.is_finite() || x.iter().any(|v| !v.is_finite()) {
                return input_err("non-finite observation");
            }
            rows.extend_from_slice(x.as_slice());
            ys.push(y);
        }
        let Some((d1, d2)) = shape else {
            return input_err("regression needs at least one sample");
        };
        let p = d1 * d2;
        let n = ys.len();
        // rows holds vec(Xᵢ) back to back, i.e. designᵀ in column-major order
        let design = DMatrix::from_column_slice(p, n, &rows).transpose();
        Ok(Self { d1, d2, design, response: DVector::from_vec(ys) })
    }

    pub fn len(&self) -> usize {
        self.response.len()
    }

    pub fn is_empty(&self) -> bool {
        self.response.is_empty()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.d1, self.d2)
    }

    /// Largest Frobenius norm among the designs.
    pub fn max_design_norm(&self) -> f64 {
        self.design.row_iter().map(|r| r.norm()).fold(0.0, f64::max)
    }

    fn residuals(&self, theta: &DMatrix<f64>) -> DVector<f64> {
        &self.response - self.predict(theta)
    }

    fn predict(&self, theta: &DMatrix<f64>) -> DVector<f64> {
        &self.design * DVector::from_column_slice(theta.as_slice())
    }

    /// `L̂_τ(Θ + Δ) − L̂_τ(Θ) − ⟨∇L̂_τ(Θ), Δ⟩` summed sample by sample so the
    /// quadratic region carries no cancellation error.
    fn bregman_remainder(&self, residuals: &DVector<f64>, step: &DMatrix<f64>, tau: f64) -> f64 {
        let moved = self.predict(step);
        let total: f64 = residuals.iter().zip(moved.iter()).map(|(&r, &m)| huber_remainder(r, m, tau)).sum();
        total / self.len() as f64
    }

    /// Smooth part `L̂_τ(Θ)` only.
    pub fn loss(&self, theta: &DMatrix<f64>, tau: f64) -> f64 {
        let r = self.residuals(theta);
        r.iter().map(|&x| loss_unchecked(x, tau)).sum::<f64>() / self.len() as f64
    }

    /// `L̂_τ(Θ)` and `∇L̂_τ(Θ) = −(1/n) Σ l'_τ(yᵢ − ⟨Xᵢ,Θ⟩) Xᵢ`.
    pub fn loss_and_grad(&self, theta: &DMatrix<f64>, tau: f64) -> (f64, DMatrix<f64>) {
        let n = self.len() as f64;
        let r = self.residuals(theta);
        let loss = r.iter().map(|&x| loss_unchecked(x, tau)).sum::<f64>() / n;
        let psi = r.map(|x| grad_unchecked(x, tau));
        let g = self.design.tr_mul(&psi) * (-1.0 / n);
        (loss, DMatrix::from_column_slice(self.d1, self.d2, g.as_slice()))
    }
}

/// Smooth objective and gradient on a list of samples.
pub fn objective_and_grad(theta: &DMatrix<f64>, data: &[RegressionSample], tau: f64) -> Result<(f64, DMatrix<f64>)> {
    check_tau(tau)?;
    let reg = TraceRegression::from_samples(data)?;
    if reg.shape() != theta.shape() {
        return input_err("parameter shape does not match designs");
    }
    Ok(reg.loss_and_grad(theta, tau))
}

/// Solver settings for [`lamm_solve`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HuberConfig {
    pub tau: f64,
    pub lambda_nuc: f64,
    pub stop_eps: f64,
    pub alpha0: f64,
    pub psi: f64,
    pub max_outer_iters: usize,
}

impl HuberConfig {
    /// `tau` and `lambda` with the default solver knobs
    /// (`α₀ = 1e-3`, `ψ = 2`, `ε = 1e-6`, 500 outer iterations).
    pub fn new(tau: f64, lambda_nuc: f64) -> Self {
        Self { tau, lambda_nuc, stop_eps: 1e-6, alpha0: 1e-3, psi: 2.0, max_outer_iters: 500 }
    }

    pub fn validate(&self) -> Result<()> {
        check_tau(self.tau)?;
        let ok = self.lambda_nuc > 0.0
            && self.stop_eps > 0.0
            && self.alpha0 > 0.0
            && self.psi > 1.0
            && self.lambda_nuc.is_finite()
            && self.alpha0.is_finite()
            && self.psi.is_finite();
        if ok {
            Ok(())
        } else {
            input_err(format!("invalid Huber solver config {self:?}"))
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub theta_hat: DMatrix<f64>,
    pub svd: SvdFactors,
    pub outer_iters: usize,
    pub final_objective: f64,
    /// False when `max_outer_iters` ran out before the step size fell below `stop_eps`.
    pub converged: bool,
    /// Penalized objective at the start point and after every accepted step.
    pub objective_trace: Vec<f64>,
}

/// Penalized Huber fit by LAMM, starting from `theta0` (zero when `None`).
pub fn lamm_solve(data: &TraceRegression, config: &HuberConfig, theta0: Option<&DMatrix<f64>>) -> Result<FitResult> {
    config.validate()?;
    if data.is_empty() {
        return input_err("regression needs at least one sample");
    }
    let (d1, d2) = data.shape();
    let mut theta = match theta0 {
        Some(t) if t.shape() != (d1, d2) => return input_err("warm start shape does not match designs"),
        Some(t) => t.clone(),
        None => DMatrix::zeros(d1, d2),
    };
    let tau = config.tau;
    let lambda = config.lambda_nuc;

    let mut nuc = full_svd(&theta)?.singular_values.sum();
    let mut residuals = data.residuals(&theta);
    let (mut loss, mut grad) = data.loss_and_grad(&theta, tau);
    let mut objective_trace = vec![loss + lambda * nuc];
    let mut alpha = config.alpha0;
    let mut converged = false;
    let mut outer_iters = 0;

    while outer_iters < config.max_outer_iters {
        outer_iters += 1;
        alpha = (alpha / config.psi).max(config.alpha0);
        let mut accepted = None;
        for _ in 0..MAX_INFLATIONS {
            let step = &theta - &grad / alpha;
            let svd = full_svd(&step)?;
            let shrink = lambda / alpha;
            let cand = svd.reconstruct_with(|s| (s - shrink).max(0.0));
            let cand_nuc: f64 = svd.singular_values.iter().map(|s| (s - shrink).max(0.0)).sum();
            let diff = &cand - &theta;
            // F(cand) ≥ L(cand)  ⇔  remainder ≤ α/2 ‖Δ‖²
            let remainder = data.bregman_remainder(&residuals, &diff, tau);
            if remainder <= 0.5 * alpha * diff.norm_squared() {
                accepted = Some((cand, cand_nuc, diff.norm()));
                break;
            }
            alpha *= config.psi;
        }
        let Some((cand, cand_nuc, step_norm)) = accepted else {
            // curvature blew up without a valid majorizer: only roundoff is left
            converged = true;
            break;
        };
        theta = cand;
        nuc = cand_nuc;
        residuals = data.residuals(&theta);
        let (l, g) = data.loss_and_grad(&theta, tau);
        loss = l;
        grad = g;
        objective_trace.push(loss + lambda * nuc);
        if step_norm <= config.stop_eps {
            converged = true;
            break;
        }
    }

    let svd = full_svd(&theta)?;
    let final_objective = loss + lambda * svd.singular_values.sum();
    Ok(FitResult { theta_hat: theta, svd, outer_iters, final_objective, converged, objective_trace })
}

/// Constants hidden behind the rate statements of the estimator schedules.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorConstants {
    pub c_tau: f64,
    pub c_lambda: f64,
    /// Prefactor of the useful-rank threshold.
    pub c1: f64,
    /// Sub-Gaussian scale of the exploration distribution.
    pub sigma: f64,
    /// Smallest eigenvalue of the exploration covariance.
    pub c_l: f64,
}

impl EstimatorConstants {
    /// Unit constants with `σ = √(1/(d1 d2))` and `c_l = 1/(d1 d2)`.
    pub fn for_dims(d1: usize, d2: usize) -> Self {
        let p = (d1 * d2) as f64;
        Self { c_tau: 1.0, c_lambda: 1.0, c1: 1.0, sigma: (1.0 / p).sqrt(), c_l: 1.0 / p }
    }
}

/// Robustification and penalty for `n` samples at confidence `eps`:
///
/// `τ = c_τ (n/(d + ln(1/ε)))^{1/(1+δ)} c^{1/(1+δ)}`,
/// `λ = c_λ σ ((d + ln(1/ε))/n)^{δ/(1+δ)} c^{1/(1+δ)}`.
#[allow(clippy::too_many_arguments)]
pub fn schedule_params(
    n: usize,
    d: usize,
    delta: f64,
    c: f64,
    eps: f64,
    c_tau: f64,
    c_lambda: f64,
    sigma: f64,
) -> (f64, f64) {
    let eff = d as f64 + (1.0 / eps).ln();
    let n = n as f64;
    let moment = c.powf(1.0 / (1.0 + delta));
    let tau = c_tau * (n / eff).powf(1.0 / (1.0 + delta)) * moment;
    let lambda = c_lambda * sigma * (eff / n).powf(delta / (1.0 + delta)) * moment;
    (tau, lambda)
}

/// `r̂ = (min{ i : D̂ᵢᵢ ≤ R(i) } − 1) ∨ 1` with a zero sentinel after the last
/// singular value. `threshold` receives the 1-based index `i`.
pub fn useful_rank_with(singular_values: &[f64], threshold: impl Fn(usize) -> f64) -> usize {
    let m = singular_values.len();
    let first_fail = (1..=m + 1)
        .find(|&i| {
            let s = if i <= m { singular_values[i - 1] } else { 0.0 };
            s <= threshold(i)
        })
        .unwrap_or(m + 1);
    (first_fail - 1).max(1)
}

/// Useful-rank threshold `R(i) = C₁ (σ√i / c_l) ((d + ln(1/ε_b))/n)^{δ/(1+δ)} c^{1/(1+δ)}`.
///
/// The caller folds the batch index into `eps_batch`.
#[allow(clippy::too_many_arguments)]
pub fn useful_rank_threshold(
    i: usize,
    n_h2: usize,
    d: usize,
    delta: f64,
    c: f64,
    eps_batch: f64,
    sigma: f64,
    c_l: f64,
    c1: f64,
) -> f64 {
    let eff = d as f64 + (1.0 / eps_batch).ln();
    c1 * sigma * (i as f64).sqrt() / c_l * (eff / n_h2 as f64).powf(delta / (1.0 + delta)) * c.powf(1.0 / (1.0 + delta))
}

/// Trim estimated singular values against [`useful_rank_threshold`].
#[allow(clippy::too_many_arguments)]
pub fn estimate_useful_rank(
    singular_values: &[f64],
    n_h2: usize,
    d: usize,
    delta: f64,
    c: f64,
    eps_batch: f64,
    sigma: f64,
    c_l: f64,
    c1: f64,
) -> usize {
    useful_rank_with(singular_values, |i| useful_rank_threshold(i, n_h2, d, delta, c, eps_batch, sigma, c_l, c1))
}
