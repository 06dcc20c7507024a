//! Batched explore/estimate/exploit orchestration.
//!
//! After `T₀` warm-up pulls, batch `i = 1, 2, …` lasts `2^i` rounds: `T₁`
//! exploration pulls feed the Huber estimator, the estimate's SVD splits the
//! arm space into an active block of dimension `k` and a complement, and
//! LowTO exploits for the remaining `T₂ = 2^i − T₁` rounds. Batch `i` runs
//! at confidence `ε_i = ε/2^{i+1}`.
//!
//! `H1` holds every observation, `H2` only warm-up and exploration pulls.
//! The estimator sees `H2`, LowTO is seeded with all of `H1`.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{Environment, ExploreMode};
use crate::error::{input_err, Result};
use crate::huber::{
    estimate_useful_rank, lamm_solve, schedule_params, EstimatorConstants, HuberConfig, TraceRegression,
};
use crate::linalg::SubspaceSplit;
use crate::lowto::{lambda_perp, run_lowto, Confidence, LowToParams, LowToState, Ridge};
use crate::sim::{Episode, Phase, RegretTrace};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum LotusMode {
    KnownRank {
        r: usize,
        d_rr: f64,
    },
    RankAgnostic,
    /// Per-round exploration coin with probability `T₁/2^i` (known-rank `T₁`).
    Randomized {
        r: usize,
        d_rr: f64,
    },
}

/// Bound used for `‖θ*_{k+1:p}‖`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SPerpRule {
    /// `r σ² c^{2/(1+δ)} / (c_l² D_rr²) · ((d + ln(1/ε_i))/|H2|)^{2δ/(1+δ)}`.
    Subspace,
    /// `r̂^{3/2} d (d/|H2|)^{δ/(1+δ)}`, needs no `D_rr`.
    RankFree,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverKnobs {
    pub stop_eps: f64,
    pub alpha0: f64,
    pub psi: f64,
    pub max_outer_iters: usize,
}

impl Default for SolverKnobs {
    fn default() -> Self {
        let h = HuberConfig::new(1.0, 1.0);
        Self { stop_eps: h.stop_eps, alpha0: h.alpha0, psi: h.psi, max_outer_iters: h.max_outer_iters }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LotusConfig {
    pub mode: LotusMode,
    pub t0: usize,
    pub delta: f64,
    pub c_moment: f64,
    pub eps: f64,
    pub estimator: EstimatorConstants,
    pub lambda0: f64,
    pub c_beta: f64,
    /// Multiplies the non-trivial branch of the exploration length.
    pub explore_scale: f64,
    /// Constant in front of the `S_⊥` bound.
    pub s_perp_scale: f64,
    /// `None` picks [`SPerpRule::RankFree`] in rank-agnostic mode, [`SPerpRule::Subspace`] otherwise.
    pub s_perp_rule: Option<SPerpRule>,
    pub explore_mode: ExploreMode,
    /// LowTO recomputes `θ̂` every this many rounds.
    pub refresh_every: usize,
    /// Randomized mode refits the estimator every this many exploit rounds.
    pub refit_every: usize,
    pub solver: SolverKnobs,
}

impl LotusConfig {
    /// Unit constants, `T₀ = d1·d2`, `ε = 0.1`, `λ₀ = 1`, `c_β = 4`.
    pub fn new(mode: LotusMode, d1: usize, d2: usize, delta: f64, c_moment: f64) -> Self {
        Self {
            mode,
            t0: d1 * d2,
            delta,
            c_moment,
            eps: 0.1,
            estimator: EstimatorConstants::for_dims(d1, d2),
            lambda0: 1.0,
            c_beta: 4.0,
            explore_scale: 1.0,
            s_perp_scale: 1.0,
            s_perp_rule: None,
            explore_mode: ExploreMode::ArmSet,
            refresh_every: 1,
            refit_every: 25,
            solver: SolverKnobs::default(),
        }
    }

    pub fn validate(&self, d1: usize, d2: usize) -> Result<()> {
        if self.t0 == 0 {
            return input_err("warm-up length T0 must be >= 1");
        }
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return input_err(format!("delta must lie in (0, 1], got {}", self.delta));
        }
        if !(self.eps > 0.0 && self.eps < 1.0) {
            return input_err(format!("eps must lie in (0, 1), got {}", self.eps));
        }
        let positive = [
            self.c_moment,
            self.lambda0,
            self.c_beta,
            self.explore_scale,
            self.s_perp_scale,
            self.estimator.c_tau,
            self.estimator.c_lambda,
            self.estimator.c1,
            self.estimator.sigma,
            self.estimator.c_l,
        ];
        if positive.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return input_err("LOTUS constants must be positive and finite");
        }
        if self.refresh_every == 0 || self.refit_every == 0 {
            return input_err("refresh and refit cadences must be >= 1");
        }
        if let LotusMode::KnownRank { r, d_rr } | LotusMode::Randomized { r, d_rr } = self.mode {
            if r == 0 || r > d1.min(d2) || !(d_rr > 0.0) {
                return input_err(format!(
                    "known rank needs 1 <= r <= {} and D_rr > 0, got r={r}, D_rr={d_rr}",
                    d1.min(d2)
                ));
            }
        }
        Ok(())
    }

    fn s_perp_rule(&self) -> SPerpRule {
        self.s_perp_rule.unwrap_or(match self.mode {
            LotusMode::RankAgnostic => SPerpRule::RankFree,
            _ => SPerpRule::Subspace,
        })
    }

    fn huber(&self, tau: f64, lambda: f64) -> HuberConfig {
        HuberConfig {
            tau,
            lambda_nuc: lambda,
            stop_eps: self.solver.stop_eps,
            alpha0: self.solver.alpha0,
            psi: self.solver.psi,
            max_outer_iters: self.solver.max_outer_iters,
        }
    }
}

/// `2^i` as a float-safe integer (saturates far beyond any horizon).
fn batch_len(i: usize) -> usize {
    if i >= usize::BITS as usize - 1 {
        usize::MAX / 2
    } else {
        1usize << i
    }
}

fn clamp_length(value: f64, i: usize) -> usize {
    let full = batch_len(i);
    if !value.is_finite() || value >= full as f64 {
        return full;
    }
    // snap values that are integers up to roundoff so the ceiling does not overshoot
    let nearest = value.round();
    let int = if (value - nearest).abs() <= 1e-9 * value.max(1.0) { nearest } else { value.ceil() };
    (int as usize).clamp(1, full)
}

/// Known-rank exploration length
/// `min{⌈((d^{2+4δ} r^{1+δ} / D_rr^{2+2δ}) 2^{i(1+δ)})^{1/(1+3δ)}⌉, 2^i}`.
pub fn exploration_length(i: usize, d: usize, r: usize, d_rr: f64, delta: f64) -> usize {
    exploration_length_scaled(i, d, r, d_rr, delta, 1.0)
}

pub fn exploration_length_scaled(i: usize, d: usize, r: usize, d_rr: f64, delta: f64, scale: f64) -> usize {
    let (d, r) = (d as f64, r as f64);
    let log_inner = (2.0 + 4.0 * delta) * d.ln() + (1.0 + delta) * r.ln() - (2.0 + 2.0 * delta) * d_rr.ln()
        + i as f64 * (1.0 + delta) * std::f64::consts::LN_2;
    clamp_length(scale * (log_inner / (1.0 + 3.0 * delta)).exp(), i)
}

/// Rank-agnostic exploration length `min{⌈d·2^{i(1+δ)/(1+2δ)}⌉, 2^i}`.
pub fn exploration_length_rank_agnostic(i: usize, d: usize, delta: f64) -> usize {
    exploration_length_rank_agnostic_scaled(i, d, delta, 1.0)
}

pub fn exploration_length_rank_agnostic_scaled(i: usize, d: usize, delta: f64, scale: f64) -> usize {
    let exponent = i as f64 * (1.0 + delta) / (1.0 + 2.0 * delta);
    clamp_length(scale * d as f64 * exponent.exp2(), i)
}

/// Bound on the complement block of the rotated parameter.
#[allow(clippy::too_many_arguments)]
pub fn compute_s_perp(
    n_h2: usize,
    d: usize,
    r_used: usize,
    delta: f64,
    c: f64,
    eps_i: f64,
    d_rr: f64,
    sigma: f64,
    c_l: f64,
) -> f64 {
    let eff = d as f64 + (1.0 / eps_i).ln();
    r_used as f64 * sigma * sigma * c.powf(2.0 / (1.0 + delta)) / (c_l * c_l * d_rr * d_rr)
        * (eff / n_h2 as f64).powf(2.0 * delta / (1.0 + delta))
}

/// Rank-free surrogate `r̂^{3/2} d (d/|H2|)^{δ/(1+δ)}`.
pub fn s_perp_rank_free(n_h2: usize, d: usize, r_hat: usize, delta: f64) -> f64 {
    let d = d as f64;
    (r_hat as f64).powf(1.5) * d * (d / n_h2 as f64).powf(delta / (1.0 + delta))
}

/// Smallest `T₁` covered by the known-rank regret guarantee:
/// `5 d^{(1+2δ)/δ} r^{(1+δ)/(2δ)} / D_rr^{(1+δ)/δ}`.
pub fn t1_precondition(d: usize, r: usize, d_rr: f64, delta: f64) -> f64 {
    5.0 * (d as f64).powf((1.0 + 2.0 * delta) / delta) * (r as f64).powf((1.0 + delta) / (2.0 * delta))
        / d_rr.powf((1.0 + delta) / delta)
}

/// `H1` holds every observation; `H2` indexes the warm-up and exploration
/// pulls inside `H1`.
#[derive(Debug, Clone, Default)]
pub struct HistoryBuffers {
    pub h1: Vec<(DMatrix<f64>, f64)>,
    pub h2_idx: Vec<usize>,
}

impl HistoryBuffers {
    pub fn push_explore(&mut self, x: DMatrix<f64>, y: f64) {
        self.h2_idx.push(self.h1.len());
        self.h1.push((x, y));
    }

    pub fn h2_len(&self) -> usize {
        self.h2_idx.len()
    }

    pub fn h2(&self) -> impl Iterator<Item = &(DMatrix<f64>, f64)> + '_ {
        self.h2_idx.iter().map(|&j| &self.h1[j])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchRecord {
    pub index: usize,
    /// Planned lengths; `t1 + t2 = 2^i`.
    pub t1: usize,
    pub t2: usize,
    /// Pulls actually made (smaller than planned only in a horizon-cut batch).
    pub explore_pulls: usize,
    pub exploit_pulls: usize,
    pub eps_i: f64,
    /// `None` when the horizon ended before the estimate was formed.
    pub fit: Option<BatchFit>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchFit {
    pub n_h2: usize,
    pub tau: f64,
    pub lambda: f64,
    pub r_hat: usize,
    pub k: usize,
    pub s_perp: f64,
    pub lambda_perp: f64,
    pub converged: bool,
    pub lamm_iters: usize,
    /// Known-rank modes only: whether `T₁` meets the guarantee's lower bound.
    pub t1_precondition_met: Option<bool>,
    pub singular_values: Vec<f64>,
    /// Column-major `Θ̂`.
    pub theta_hat: Vec<f64>,
}

pub struct LotusOutcome {
    pub trace: RegretTrace,
    pub batches: Vec<BatchRecord>,
    pub buffers: HistoryBuffers,
}

struct Fitted {
    split: SubspaceSplit,
    record: BatchFit,
}

/// Shared per-run state.
struct Runner<'a, 'e> {
    cfg: &'a LotusConfig,
    ep: Episode<'e>,
    buf: HistoryBuffers,
    d: usize,
    warm: Option<DMatrix<f64>>,
}

impl<'a, 'e> Runner<'a, 'e> {
    fn explore(&mut self, batch: usize, phase: Phase) -> Result<()> {
        let (idx, x) = self.ep.explore_draw(self.cfg.explore_mode)?;
        let y = self.ep.pull(&x, idx, batch, phase);
        self.buf.push_explore(x, y);
        Ok(())
    }

    fn warmup(&mut self) -> Result<()> {
        for _ in 0..self.cfg.t0 {
            if self.ep.done() {
                break;
            }
            self.explore(0, Phase::Warmup)?;
        }
        Ok(())
    }

    fn planned_t1(&self, i: usize) -> usize {
        let c = self.cfg;
        match c.mode {
            LotusMode::RankAgnostic => exploration_length_rank_agnostic_scaled(i, self.d, c.delta, c.explore_scale),
            LotusMode::KnownRank { r, d_rr } | LotusMode::Randomized { r, d_rr } => {
                exploration_length_scaled(i, self.d, r, d_rr, c.delta, c.explore_scale)
            }
        }
    }

    /// Fits `Θ̂` on `H2` at confidence `eps_i` and derives the split, `S_⊥` and `λ_⊥`.
    fn fit(&mut self, eps_i: f64, t1: usize, t2: usize) -> Result<Fitted> {
        let c = self.cfg;
        let est = c.estimator;
        let n = self.buf.h2_len();
        let data = TraceRegression::from_pairs(self.buf.h2().map(|(x, y)| (x, *y)))?;
        let (tau, lambda) = schedule_params(n, self.d, c.delta, c.c_moment, eps_i, est.c_tau, est.c_lambda, est.sigma);
        let fit = lamm_solve(&data, &c.huber(tau, lambda), self.warm.as_ref())?;
        self.warm = Some(fit.theta_hat.clone());
        let sv: Vec<f64> = fit.svd.singular_values.iter().copied().collect();
        let (d1, d2) = self.ep.env().shape();
        let (r_used, d_rr, precondition) = match c.mode {
            LotusMode::KnownRank { r, d_rr } | LotusMode::Randomized { r, d_rr } => {
                (r, d_rr, Some(t1 as f64 >= t1_precondition(self.d, r, d_rr, c.delta)))
            }
            LotusMode::RankAgnostic => {
                let r_hat =
                    estimate_useful_rank(&sv, n, self.d, c.delta, c.c_moment, eps_i, est.sigma, est.c_l, est.c1);
                let r_hat = r_hat.min(d1.min(d2));
                // the subspace bound needs a gap; fall back to the estimated value
                (r_hat, sv[r_hat - 1].max(f64::MIN_POSITIVE), None)
            }
        };
        let split = SubspaceSplit::from_svd(&fit.svd, r_used)?;
        let k = split.effective_dim();
        let s_bound = self.ep.env().s_bound();
        let raw = match c.s_perp_rule() {
            SPerpRule::Subspace => {
                compute_s_perp(n, self.d, r_used, c.delta, c.c_moment, eps_i, d_rr, est.sigma, est.c_l)
            }
            SPerpRule::RankFree => s_perp_rank_free(n, self.d, r_used, c.delta),
        };
        let s_perp = (c.s_perp_scale * raw).min(s_bound);
        let lp = lambda_perp(s_bound, t2, self.buf.h1.len(), k, c.lambda0);
        let record = BatchFit {
            n_h2: n,
            tau,
            lambda,
            r_hat: r_used,
            k,
            s_perp,
            lambda_perp: lp,
            converged: fit.converged,
            lamm_iters: fit.outer_iters,
            t1_precondition_met: precondition,
            singular_values: sv,
            theta_hat: fit.theta_hat.as_slice().to_vec(),
        };
        Ok(Fitted { split, record })
    }

    fn lowto_state(&self, fitted: &Fitted, eps_i: f64, t2: usize) -> Result<(LowToState, LowToParams)> {
        let c = self.cfg;
        let split = &fitted.split;
        let rows =
            self.buf.h1.iter().map(|(x, y)| Ok((split.rotate_and_vectorize(x)?, *y))).collect::<Result<Vec<_>>>()?;
        let ridge = Ridge { lambda0: c.lambda0, lambda_perp: fitted.record.lambda_perp, k: fitted.record.k };
        let state = LowToState::init(&rows, split.total_dim(), ridge)?;
        let s_bound = self.ep.env().s_bound();
        let params = LowToParams {
            delta: c.delta,
            b_moment: LowToParams::b_moment(c.delta, s_bound, c.c_moment),
            eps: eps_i,
            s_bound,
            s_perp: fitted.record.s_perp,
            t2,
            confidence: Confidence::Truncated { c_beta: c.c_beta },
            truncate: true,
            refresh_every: c.refresh_every,
        };
        Ok((state, params))
    }

    fn batch(&mut self, i: usize) -> Result<BatchRecord> {
        let full = batch_len(i);
        let t1 = self.planned_t1(i);
        let t2 = full - t1;
        let eps_i = self.cfg.eps / (i as f64 + 1.0).exp2();
        let mut rec = BatchRecord { index: i, t1, t2, explore_pulls: 0, exploit_pulls: 0, eps_i, fit: None };
        for _ in 0..t1 {
            if self.ep.done() {
                return Ok(rec);
            }
            self.explore(i, Phase::Explore)?;
            rec.explore_pulls += 1;
        }
        if self.ep.done() {
            return Ok(rec);
        }
        let fitted = self.fit(eps_i, t1, t2)?;
        if t2 > 0 {
            let (mut state, params) = self.lowto_state(&fitted, eps_i, t2)?;
            let before = self.ep.round();
            run_lowto(&mut state, &params, &mut self.ep, &fitted.split, t2, i, &mut self.buf.h1)?;
            rec.exploit_pulls = self.ep.round() - before;
        }
        rec.fit = Some(fitted.record);
        Ok(rec)
    }

    fn randomized_batch(&mut self, i: usize) -> Result<BatchRecord> {
        let full = batch_len(i);
        let t1 = self.planned_t1(i);
        let t2 = full - t1;
        let eps_i = self.cfg.eps / (i as f64 + 1.0).exp2();
        let prob = explore_probability(t1, i);
        let mut rec = BatchRecord { index: i, t1, t2, explore_pulls: 0, exploit_pulls: 0, eps_i, fit: None };
        let mut cache: Option<(Fitted, LowToState, LowToParams)> = None;
        let mut since_refit = 0usize;
        for _ in 0..full {
            if self.ep.done() {
                break;
            }
            let coin = self.ep.explore_rng.random::<f64>() < prob;
            if coin || self.buf.h2_len() == 0 {
                self.explore(i, Phase::Explore)?;
                rec.explore_pulls += 1;
                if let Some((f, state, _)) = cache.as_mut() {
                    let (x, y) = self.buf.h1.last().expect("just pushed");
                    state.update(&f.split.rotate_and_vectorize(x)?, *y);
                }
                continue;
            }
            if cache.is_none() || since_refit >= self.cfg.refit_every {
                let fitted = self.fit(eps_i, t1, t2)?;
                let (state, params) = self.lowto_state(&fitted, eps_i, t2)?;
                cache = Some((fitted, state, params));
                since_refit = 0;
            }
            let (f, state, params) = cache.as_mut().expect("fitted above");
            run_lowto(state, params, &mut self.ep, &f.split, 1, i, &mut self.buf.h1)?;
            rec.exploit_pulls += 1;
            since_refit += 1;
        }
        rec.fit = cache.map(|(f, _, _)| f.record);
        Ok(rec)
    }
}

/// Exploration probability `T₁/2^i` of the randomized variant.
pub fn explore_probability(t1: usize, i: usize) -> f64 {
    (t1 as f64 / batch_len(i) as f64).clamp(0.0, 1.0)
}

fn run(env: &Environment, cfg: &LotusConfig, total_rounds: usize, randomized: bool) -> Result<LotusOutcome> {
    let (d1, d2) = env.shape();
    cfg.validate(d1, d2)?;
    let mut runner =
        Runner { cfg, ep: Episode::new(env, total_rounds), buf: HistoryBuffers::default(), d: d1.max(d2), warm: None };
    runner.warmup()?;
    let mut batches = Vec::new();
    let mut i = 1;
    while !runner.ep.done() {
        let rec = if randomized { runner.randomized_batch(i)? } else { runner.batch(i)? };
        batches.push(rec);
        i += 1;
    }
    Ok(LotusOutcome { trace: runner.ep.into_trace(), batches, buffers: runner.buf })
}

/// Runs LOTUS for `total_rounds` pulls. The algorithm is anytime: the
/// horizon only cuts the run short.
pub fn run_lotus(env: &Environment, cfg: &LotusConfig, total_rounds: usize) -> Result<LotusOutcome> {
    if let LotusMode::Randomized { .. } = cfg.mode {
        return run(env, cfg, total_rounds, true);
    }
    run(env, cfg, total_rounds, false)
}

/// Randomized interleaving: inside batch `i`, each round explores with
/// probability `T₁/2^i` and otherwise plays one LowTO round on a cached fit.
pub fn run_randomized_lotus(env: &Environment, cfg: &LotusConfig, total_rounds: usize) -> Result<LotusOutcome> {
    run(env, cfg, total_rounds, true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{gen_scenario1, gen_scenario2, NoiseModel};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn known_rank_lengths() {
        // (10⁶·4/256·2²⁰)^{1/4} = 357.77…
        assert_eq!(exploration_length(10, 10, 2, 4.0, 1.0), 358);
        for i in 1..=6 {
            assert_eq!(exploration_length(i, 10, 2, 4.0, 1.0), 1 << i);
        }
        for i in 7..20 {
            let want = ((1e6 / 4f64.powi(4) * 4.0 * 4f64.powi(i as i32)).powf(0.25)).ceil() as usize;
            assert_eq!(exploration_length(i, 10, 2, 4.0, 1.0), want.min(1 << i));
        }
    }

    #[test]
    fn rank_agnostic_lengths() {
        assert_eq!(exploration_length_rank_agnostic(9, 10, 1.0), 512);
        assert_eq!(exploration_length_rank_agnostic(12, 10, 1.0), 2560);
        for i in 1..=13 {
            assert_eq!(exploration_length_rank_agnostic(i, 10, 0.5), 1 << i);
        }
        assert_eq!(exploration_length_rank_agnostic(14, 10, 0.5), (10.0 * 2f64.powf(10.5)).ceil() as usize);
        assert_eq!(exploration_length_rank_agnostic(3, 1, 1.0), 2f64.powf(2.0).ceil() as usize);
        assert_eq!(batch_len(80), usize::MAX / 2);
    }

    #[test]
    fn s_perp_values() {
        let got = compute_s_perp(1000, 10, 2, 1.0, 2.0, 0.05, 4.0, 0.1, 0.01);
        let want = 2.0 * 0.01 * 2.0 / (1e-4 * 16.0) * ((10.0 + 20f64.ln()) / 1000.0);
        assert!((got - want).abs() < 1e-12 * want);
        let half = compute_s_perp(2000, 10, 2, 1.0, 2.0, 0.05, 4.0, 0.1, 0.01);
        assert!((half - got / 2.0).abs() < 1e-12);
        let mut prev = f64::INFINITY;
        for n in [10, 100, 1000, 10_000, 100_000] {
            let v = compute_s_perp(n, 10, 2, 0.5, 2.0, 0.05, 4.0, 0.1, 0.01);
            assert!(v < prev);
            prev = v;
        }
        assert!(prev < 1e-1);
        assert!((s_perp_rank_free(1000, 10, 2, 1.0) - 8f64.sqrt() * 10.0 * 0.1).abs() < 1e-12);
    }

    fn agnostic(noise: NoiseModel) -> LotusConfig {
        LotusConfig::new(LotusMode::RankAgnostic, 10, 10, noise.delta, noise.c_bound)
    }

    #[test]
    fn warmup_only_and_first_batches() {
        let env = gen_scenario1(1, NoiseModel::laplace()).unwrap();
        let mut cfg = agnostic(NoiseModel::laplace());
        cfg.t0 = 50;
        let out = run_lotus(&env, &cfg, 50).unwrap();
        assert_eq!(out.trace.len(), 50);
        assert!(out.batches.is_empty());
        assert_eq!(out.buffers.h1.len(), 50);
        assert_eq!(out.buffers.h2_len(), 50);
        assert!(out.trace.records.iter().all(|r| r.phase == Phase::Warmup));

        let out = run_lotus(&env, &cfg, 56).unwrap();
        assert_eq!(out.batches.len(), 2);
        assert!(out.batches.iter().all(|b| b.explore_pulls + b.exploit_pulls == 1 << b.index));
        // the horizon ends with batch 2's exploration, so only batch 1 fits
        assert!(out.batches[0].fit.is_some() && out.batches[1].fit.is_none());

        let again = run_lotus(&env, &cfg, 56).unwrap();
        assert_eq!(out.buffers.h1, again.buffers.h1);
    }

    #[test]
    fn zero_warmup_rejected() {
        let env = gen_scenario1(1, NoiseModel::laplace()).unwrap();
        let mut cfg = agnostic(NoiseModel::laplace());
        cfg.t0 = 0;
        assert!(run_lotus(&env, &cfg, 10).is_err());
    }

    #[test]
    fn known_rank_batch_uses_k36() {
        let env = gen_scenario1(2, NoiseModel::laplace()).unwrap();
        let mut cfg = LotusConfig::new(LotusMode::KnownRank { r: 2, d_rr: 4.0 }, 10, 10, 1.0, 2.0);
        cfg.explore_scale = 0.01;
        let out = run_lotus(&env, &cfg, 100 + 2 + 4 + 8 + 16 + 32 + 64).unwrap();
        for b in &out.batches {
            let fit = b.fit.as_ref().unwrap();
            assert_eq!(fit.k, 36);
            assert_eq!(fit.t1_precondition_met, Some(false));
        }
        assert!(out.batches.iter().any(|b| b.exploit_pulls > 0));
        assert!(out.trace.records.iter().any(|r| r.phase == Phase::Exploit));
    }

    fn check_bookkeeping(out: &LotusOutcome, cfg: &LotusConfig, total: usize) {
        let t0 = cfg.t0.min(total);
        let pulls: usize = out.batches.iter().map(|b| b.explore_pulls + b.exploit_pulls).sum();
        assert_eq!(pulls + t0, total);
        assert_eq!(out.trace.len(), total);
        assert_eq!(out.buffers.h1.len(), total);
        let explored: Vec<usize> =
            out.trace.records.iter().enumerate().filter(|(_, r)| r.phase != Phase::Exploit).map(|(j, _)| j).collect();
        assert_eq!(explored, out.buffers.h2_idx);
        for (j, b) in out.batches.iter().enumerate() {
            assert_eq!(b.index, j + 1);
            assert!(b.t1 <= 1 << b.index && b.t1 + b.t2 == 1 << b.index);
            assert_eq!(b.eps_i, cfg.eps / 2f64.powi(b.index as i32 + 1));
        }
    }

    #[test]
    fn bookkeeping_over_random_horizons() {
        let env = gen_scenario2(3, NoiseModel::student_t()).unwrap();
        let mut cfg = LotusConfig::new(LotusMode::KnownRank { r: 2, d_rr: 4.0 }, 10, 10, 0.5, 6.0);
        cfg.t0 = 20;
        cfg.explore_scale = 0.02;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..6 {
            let total = rng.random_range(1..300);
            let out = run_lotus(&env, &cfg, total).unwrap();
            check_bookkeeping(&out, &cfg, total);
        }
    }

    #[test]
    fn runs_are_anytime() {
        let env = gen_scenario1(5, NoiseModel::pareto()).unwrap();
        let mut cfg = LotusConfig::new(LotusMode::KnownRank { r: 2, d_rr: 4.0 }, 10, 10, 0.5, 5.0);
        cfg.t0 = 30;
        cfg.explore_scale = 0.02;
        let long = run_lotus(&env, &cfg, 400).unwrap();
        let short = run_lotus(&env, &cfg, 170).unwrap();
        assert_eq!(&long.trace.records[..170], &short.trace.records[..]);
    }

    #[test]
    fn randomized_degenerate_coin_and_bookkeeping() {
        assert_eq!(explore_probability(8, 3), 1.0);
        assert_eq!(explore_probability(0, 3), 0.0);
        let env = gen_scenario1(6, NoiseModel::laplace()).unwrap();
        let mut cfg = LotusConfig::new(LotusMode::Randomized { r: 2, d_rr: 4.0 }, 10, 10, 1.0, 2.0);
        cfg.t0 = 20;
        // unscaled lengths cover every early batch: all rounds explore
        let out = run_randomized_lotus(&env, &cfg, 20 + 2 + 4 + 8).unwrap();
        assert!(out.trace.records.iter().all(|r| r.phase != Phase::Exploit));
        cfg.explore_scale = 0.05;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..4 {
            let total = rng.random_range(20..400);
            let out = run_lotus(&env, &cfg, total).unwrap();
            check_bookkeeping(&out, &cfg, total);
        }
    }

    #[test]
    fn randomized_explore_counts_concentrate() {
        let i = 7;
        let mut cfg = LotusConfig::new(LotusMode::Randomized { r: 2, d_rr: 4.0 }, 10, 10, 1.0, 2.0);
        cfg.t0 = 1;
        cfg.explore_scale = 0.3;
        cfg.refit_every = 64;
        let total = 1 + (1 << (i + 1)) - 2;
        let mut ok = 0;
        let seeds = 20;
        for seed in 0..seeds {
            let env = gen_scenario1(seed, NoiseModel::laplace()).unwrap();
            let out = run_randomized_lotus(&env, &cfg, total).unwrap();
            let b = out.batches.last().unwrap();
            assert_eq!(b.index, i);
            let n = (1usize << b.index) as f64;
            let p = explore_probability(b.t1, b.index);
            assert!(p > 0.0 && p < 1.0);
            if (b.explore_pulls as f64 - n * p).abs() <= 4.0 * (n * p * (1.0 - p)).sqrt() {
                ok += 1;
            }
        }
        assert!(ok as f64 >= 0.95 * seeds as f64, "{ok}");
    }
}
