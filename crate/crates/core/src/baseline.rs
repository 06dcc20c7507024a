//! `baseline-subg`: a one-shot explore-then-commit comparator that assumes
//! sub-Gaussian noise.
//!
//! It explores for `⌈scale·√(d³ r T)/D_rr⌉` rounds, fits the nuclear-norm
//! estimator with square loss (Huber with `τ = 10⁹`), and exploits with LowTO
//! with truncation switched off and a sub-Gaussian confidence width. Unlike
//! LOTUS it needs the horizon up front.

use serde::{Deserialize, Serialize};

use crate::env::{Environment, ExploreMode};
use crate::error::{input_err, Result};
use crate::huber::{lamm_solve, schedule_params, EstimatorConstants, HuberConfig, TraceRegression};
use crate::linalg::SubspaceSplit;
use crate::lotus::{compute_s_perp, SolverKnobs};
use crate::lowto::{lambda_perp, run_lowto, Confidence, LowToParams, LowToState, Ridge};
use crate::sim::{Episode, Phase, RegretTrace};

/// Robustification large enough that Huber is square loss on any realistic residual.
pub const SQUARE_LOSS_TAU: f64 = 1e9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaselineConfig {
    pub r: usize,
    pub d_rr: f64,
    pub explore_scale: f64,
    /// Assumed sub-Gaussian noise scale.
    pub sigma_noise: f64,
    /// Multiplier on the complement bound, as in LOTUS.
    pub s_perp_scale: f64,
    pub eps: f64,
    pub lambda0: f64,
    pub estimator: EstimatorConstants,
    pub explore_mode: ExploreMode,
    pub refresh_every: usize,
    pub solver: SolverKnobs,
}

impl BaselineConfig {
    pub fn new(r: usize, d_rr: f64, d1: usize, d2: usize) -> Self {
        Self {
            r,
            d_rr,
            explore_scale: 1.0,
            sigma_noise: 1.0,
            s_perp_scale: 1.0,
            eps: 0.1,
            lambda0: 1.0,
            estimator: EstimatorConstants::for_dims(d1, d2),
            explore_mode: ExploreMode::ArmSet,
            refresh_every: 1,
            solver: SolverKnobs::default(),
        }
    }
}

/// `⌈scale·√(d³ r T)/D_rr⌉`, capped at `T`.
pub fn baseline_explore_length(d: usize, r: usize, d_rr: f64, horizon: usize, scale: f64) -> usize {
    let v = scale * ((d as f64).powi(3) * r as f64 * horizon as f64).sqrt() / d_rr;
    (v.ceil() as usize).clamp(1, horizon.max(1))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineRecord {
    pub t1: usize,
    pub lambda: f64,
    pub k: usize,
    pub s_perp: f64,
    pub lambda_perp: f64,
    pub converged: bool,
    pub singular_values: Vec<f64>,
}

pub struct BaselineOutcome {
    pub trace: RegretTrace,
    pub record: Option<BaselineRecord>,
}

pub fn run_baseline_subgaussian(env: &Environment, cfg: &BaselineConfig, horizon: usize) -> Result<BaselineOutcome> {
    let (d1, d2) = env.shape();
    let d = d1.max(d2);
    if cfg.r == 0
        || cfg.r > d1.min(d2)
        || !(cfg.d_rr > 0.0)
        || !(cfg.explore_scale > 0.0)
        || !(cfg.sigma_noise > 0.0)
        || !(cfg.s_perp_scale > 0.0)
    {
        return input_err("baseline needs 1 <= r <= min(d1, d2) and positive D_rr, scales and sigma");
    }
    if !(cfg.eps > 0.0 && cfg.eps < 1.0) {
        return input_err(format!("eps must lie in (0, 1), got {}", cfg.eps));
    }
    let mut ep = Episode::new(env, horizon);
    let t1 = baseline_explore_length(d, cfg.r, cfg.d_rr, horizon, cfg.explore_scale);
    let mut h1 = Vec::with_capacity(horizon);
    for _ in 0..t1 {
        if ep.done() {
            break;
        }
        let (idx, x) = ep.explore_draw(cfg.explore_mode)?;
        let y = ep.pull(&x, idx, 1, Phase::Explore);
        h1.push((x, y));
    }
    if ep.done() {
        return Ok(BaselineOutcome { trace: ep.into_trace(), record: None });
    }

    let n = h1.len();
    let est = cfg.estimator;
    let c = cfg.sigma_noise * cfg.sigma_noise;
    let (_, lambda) = schedule_params(n, d, 1.0, c, cfg.eps, est.c_tau, est.c_lambda, est.sigma);
    let huber = HuberConfig {
        tau: SQUARE_LOSS_TAU,
        lambda_nuc: lambda,
        stop_eps: cfg.solver.stop_eps,
        alpha0: cfg.solver.alpha0,
        psi: cfg.solver.psi,
        max_outer_iters: cfg.solver.max_outer_iters,
    };
    let data = TraceRegression::from_pairs(h1.iter().map(|(x, y)| (x, *y)))?;
    let fit = lamm_solve(&data, &huber, None)?;
    let split = SubspaceSplit::from_svd(&fit.svd, cfg.r)?;
    let k = split.effective_dim();
    let s_bound = env.s_bound();
    let t2 = ep.remaining();
    let s_perp =
        (cfg.s_perp_scale * compute_s_perp(n, d, cfg.r, 1.0, c, cfg.eps, cfg.d_rr, est.sigma, est.c_l)).min(s_bound);
    let lp = lambda_perp(s_bound, t2, n, k, cfg.lambda0);
    let rows = h1.iter().map(|(x, y)| Ok((split.rotate_and_vectorize(x)?, *y))).collect::<Result<Vec<_>>>()?;
    let mut state = LowToState::init(&rows, split.total_dim(), Ridge { lambda0: cfg.lambda0, lambda_perp: lp, k })?;
    let params = LowToParams {
        delta: 1.0,
        b_moment: LowToParams::b_moment(1.0, s_bound, c),
        eps: cfg.eps,
        s_bound,
        s_perp,
        t2,
        confidence: Confidence::SubGaussian { sigma: cfg.sigma_noise },
        truncate: false,
        refresh_every: cfg.refresh_every,
    };
    run_lowto(&mut state, &params, &mut ep, &split, t2, 1, &mut h1)?;
    let record = BaselineRecord {
        t1,
        lambda,
        k,
        s_perp,
        lambda_perp: lp,
        converged: fit.converged,
        singular_values: fit.svd.singular_values.iter().copied().collect(),
    };
    Ok(BaselineOutcome { trace: ep.into_trace(), record: Some(record) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{gen_scenario1, NoiseModel};
    use crate::huber::huber_loss;

    #[test]
    fn explore_length_formula() {
        // √(10³·2·20000)/4 ≈ 1581.14
        assert_eq!(baseline_explore_length(10, 2, 4.0, 20000, 1.0), 1582);
        assert_eq!(baseline_explore_length(10, 2, 4.0, 50, 1.0), 50);
    }

    #[test]
    fn huge_tau_is_square_loss() {
        for r in [0.0, 1e-3, 1.5, -7.0, 123.4, -9999.0] {
            let h = huber_loss(r, SQUARE_LOSS_TAU).unwrap();
            assert!((h - 0.5 * r * r).abs() <= 1e-9 * (0.5 * r * r).max(1.0));
        }
    }

    #[test]
    fn gaussian_trend_is_sublinear() {
        let mut wins = 0;
        for seed in 0..4u64 {
            let env = gen_scenario1(seed, NoiseModel::gaussian(1.0)).unwrap();
            let mut cfg = BaselineConfig::new(2, 4.0, 10, 10);
            cfg.explore_scale = 0.2;
            let total = 1500;
            let out = run_baseline_subgaussian(&env, &cfg, total).unwrap();
            assert_eq!(out.trace.len(), total);
            let rec = out.record.unwrap();
            assert_eq!(rec.k, 36);
            let q = total / 4;
            let first = out.trace.mean_inst_regret(|r| r.round <= q).unwrap();
            let last = out.trace.mean_inst_regret(|r| r.round > total - q).unwrap();
            if last < first {
                wins += 1;
            }
        }
        assert!(wins >= 3, "{wins}");
    }
}
