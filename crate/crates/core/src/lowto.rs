//! Truncated optimistic exploitation in an almost-low-dimensional space.
//!
//! Arms are rotated into the `p`-dimensional coordinates of a
//! [`SubspaceSplit`]; the first `k` coordinates get ridge `λ₀`, the last
//! `p − k` get the much larger `λ_⊥`. Each round whitens the design by
//! `R = M^{-1/2}`, drops every response whose whitened contribution
//! `|u_{ij} y_j|` exceeds `b_t`, and plays the arm maximizing
//! `x·θ̂ + β_t‖x‖_{M⁻¹}`.
//!
//! The whitening needs an eigendecomposition of `M`, but a row can only be
//! truncated when `|y_j|‖x_j‖/√λ_min(M) > b_t`. Rows below that bound add
//! exactly `R x_j y_j` to the whitened response, so they are summed into
//! `Xᵀy` directly and only the remaining rows are whitened one by one. When
//! no row can be truncated the estimate is the ridge solution `M⁻¹Xᵀy`,
//! computed from the Cholesky factor without any eigendecomposition.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{input_err, Error, Result};
use crate::linalg::{sym_inv_sqrt_with_min, SubspaceSplit};
use crate::sim::{Episode, Phase};

/// Relative margin on the no-truncation bound so boundary rows take the exact path.
const SAFE_MARGIN: f64 = 1e-9;

/// Diagonal ridge `Λ = diag(λ₀·1_k, λ_⊥·1_{p−k})`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ridge {
    pub lambda0: f64,
    pub lambda_perp: f64,
    pub k: usize,
}

impl Ridge {
    pub fn uniform(lambda0: f64, p: usize) -> Self {
        Self { lambda0, lambda_perp: lambda0, k: p }
    }
}

/// `λ_⊥ = S²T₂ / (k·ln(1 + S²T/(kλ₀)))` with `T = T₂ + H`, floored at `λ₀`.
pub fn lambda_perp(s_bound: f64, t2: usize, h: usize, k: usize, lambda0: f64) -> f64 {
    let s2 = s_bound * s_bound;
    let kf = k.max(1) as f64;
    let total = (t2 + h) as f64;
    let denom = kf * (1.0 + s2 * total / (kf * lambda0)).ln();
    if t2 == 0 || denom <= 0.0 {
        return lambda0;
    }
    (s2 * t2 as f64 / denom).max(lambda0)
}

/// Width of the confidence ellipsoid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Confidence {
    /// Heavy-tailed width `c_β√p·b^{1/(1+δ)}·ln(2p/ε)^{δ/(1+δ)}·(t+H)^{(1−δ)/(2+2δ)}`.
    Truncated { c_beta: f64 },
    /// Sub-Gaussian width `σ√(ln(det M/det Λ) + 2ln(1/ε))`.
    SubGaussian { sigma: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LowToParams {
    pub delta: f64,
    /// `b = 2^δ S² + 2^δ c`.
    pub b_moment: f64,
    pub eps: f64,
    pub s_bound: f64,
    pub s_perp: f64,
    pub t2: usize,
    pub confidence: Confidence,
    /// `false` disables truncation (`b_t = ∞`).
    pub truncate: bool,
    /// Recompute `θ̂` every this many rounds; 1 is the exact algorithm.
    pub refresh_every: usize,
}

impl LowToParams {
    pub fn b_moment(delta: f64, s_bound: f64, c: f64) -> f64 {
        2f64.powf(delta) * (s_bound * s_bound + c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return input_err(format!("delta must lie in (0, 1], got {}", self.delta));
        }
        if !(self.eps > 0.0 && self.eps < 1.0) {
            return input_err(format!("eps must lie in (0, 1), got {}", self.eps));
        }
        if !(self.b_moment > 0.0 && self.s_bound > 0.0 && self.s_perp >= 0.0) {
            return input_err("b, S must be positive and S_perp non-negative");
        }
        if self.refresh_every == 0 {
            return input_err("refresh_every must be >= 1");
        }
        match self.confidence {
            Confidence::Truncated { c_beta } if !(c_beta > 0.0) => input_err("c_beta must be positive"),
            Confidence::SubGaussian { sigma } if !(sigma > 0.0) => input_err("sigma must be positive"),
            _ => Ok(()),
        }
    }
}

fn time_exponent(delta: f64) -> f64 {
    (1.0 - delta) / (2.0 + 2.0 * delta)
}

/// Truncation level `b_t = (b/ln(2p/ε))^{1/(1+δ)}·(t+H)^{(1−δ)/(2+2δ)}`;
/// infinite when truncation is disabled.
pub fn compute_bt(t: usize, params: &LowToParams, h: usize, p: usize) -> f64 {
    if !params.truncate {
        return f64::INFINITY;
    }
    let log_term = (2.0 * p as f64 / params.eps).ln();
    (params.b_moment / log_term).powf(1.0 / (1.0 + params.delta)) * ((t + h) as f64).powf(time_exponent(params.delta))
}

/// Heavy-tailed confidence width `β_t`.
pub fn compute_beta(t: usize, params: &LowToParams, h: usize, p: usize, ridge: &Ridge, c_beta: f64) -> f64 {
    let d = params.delta;
    let log_term = (2.0 * p as f64 / params.eps).ln();
    let spread = c_beta
        * (p as f64).sqrt()
        * params.b_moment.powf(1.0 / (1.0 + d))
        * log_term.powf(d / (1.0 + d))
        * ((t + h) as f64).powf(time_exponent(d));
    spread + ridge_bias(params, ridge)
}

fn ridge_bias(params: &LowToParams, ridge: &Ridge) -> f64 {
    ridge.lambda0.sqrt() * params.s_bound + ridge.lambda_perp.sqrt() * params.s_perp
}

#[derive(Debug, Clone)]
pub struct LowToState {
    ridge: Ridge,
    lambda_diag: DVector<f64>,
    gram: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    xty: DVector<f64>,
    design: Vec<DVector<f64>>,
    rewards: Vec<f64>,
    /// `|y_j|·‖x_j‖` per row.
    leverage: Vec<f64>,
    /// Lower bound on `λ_min(M)`; valid because `M` only grows.
    lambda_min_lb: f64,
    h: usize,
    t: usize,
}

impl LowToState {
    /// `M = Λ + Σ x xᵀ` over the seeded history.
    pub fn init(history: &[(DVector<f64>, f64)], p: usize, ridge: Ridge) -> Result<Self> {
        if ridge.k == 0 || ridge.k > p {
            return input_err(format!("effective dimension {} outside 1..={p}", ridge.k));
        }
        if !(ridge.lambda0 > 0.0) || ridge.lambda_perp < ridge.lambda0 {
            return input_err(format!(
                "need lambda0 > 0 and lambda_perp >= lambda0, got {} and {}",
                ridge.lambda0, ridge.lambda_perp
            ));
        }
        let lambda_diag = DVector::from_fn(p, |i, _| if i < ridge.k { ridge.lambda0 } else { ridge.lambda_perp });
        let mut gram = DMatrix::from_diagonal(&lambda_diag);
        let mut xty = DVector::zeros(p);
        for (x, y) in history {
            if x.len() != p {
                return input_err(format!("history row of length {} in a {p}-dimensional state", x.len()));
            }
            gram.ger(1.0, x, x, 1.0);
            xty.axpy(*y, x, 1.0);
        }
        let chol = cholesky(&gram)?;
        Ok(Self {
            ridge,
            lambda_diag,
            gram,
            chol,
            xty,
            design: history.iter().map(|(x, _)| x.clone()).collect(),
            rewards: history.iter().map(|(_, y)| *y).collect(),
            leverage: history.iter().map(|(x, y)| y.abs() * x.norm()).collect(),
            lambda_min_lb: ridge.lambda0,
            h: history.len(),
            t: 0,
        })
    }

    pub fn p(&self) -> usize {
        self.lambda_diag.len()
    }

    pub fn k(&self) -> usize {
        self.ridge.k
    }

    pub fn ridge(&self) -> &Ridge {
        &self.ridge
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    pub fn history_len(&self) -> usize {
        self.h
    }

    /// Exploitation rounds recorded so far.
    pub fn rounds(&self) -> usize {
        self.t
    }

    pub fn design_rows(&self) -> &[DVector<f64>] {
        &self.design
    }

    pub fn rewards(&self) -> &[f64] {
        &self.rewards
    }

    pub fn update(&mut self, x: &DVector<f64>, y: f64) {
        self.gram.ger(1.0, x, x, 1.0);
        self.chol.rank_one_update(x, 1.0);
        self.xty.axpy(y, x, 1.0);
        self.leverage.push(y.abs() * x.norm());
        self.design.push(x.clone());
        self.rewards.push(y);
        self.t += 1;
    }

    /// `ln det M − ln det Λ`.
    pub fn log_det_ratio(&self) -> f64 {
        let l = self.chol.l_dirty();
        let ld: f64 = (0..self.p()).map(|i| 2.0 * l[(i, i)].ln()).sum();
        ld - self.lambda_diag.iter().map(|v| v.ln()).sum::<f64>()
    }

    /// `β_t` for the current round.
    pub fn beta(&self, params: &LowToParams) -> f64 {
        match params.confidence {
            Confidence::Truncated { c_beta } => compute_beta(self.t, params, self.h, self.p(), &self.ridge, c_beta),
            Confidence::SubGaussian { sigma } => {
                let inner = self.log_det_ratio().max(0.0) + 2.0 * (1.0 / params.eps).ln();
                sigma * inner.sqrt() + ridge_bias(params, &self.ridge)
            }
        }
    }

    /// Truncated whitened estimate `θ̂ = R·[u_iᵀ ŷ_i]_i` with `R = M^{-1/2}`.
    pub fn estimate_theta(&mut self, b_t: f64) -> Result<DVector<f64>> {
        if b_t.is_nan() || b_t < 0.0 {
            return input_err(format!("truncation level must be >= 0, got {b_t}"));
        }
        let risky = |lb: f64| -> Vec<usize> {
            let cap = b_t * lb.sqrt() * (1.0 - SAFE_MARGIN);
            (0..self.leverage.len()).filter(|&j| self.leverage[j] > cap).collect()
        };
        if risky(self.lambda_min_lb).is_empty() {
            return Ok(self.chol.solve(&self.xty));
        }
        let inv = sym_inv_sqrt_with_min(&self.gram)?;
        self.lambda_min_lb = self.lambda_min_lb.max(inv.min_eigenvalue);
        let rows = risky(self.lambda_min_lb);
        let r = &inv.root;
        // sum whichever side is smaller
        let safe = if 2 * rows.len() <= self.rewards.len() {
            let mut acc = self.xty.clone();
            for &j in &rows {
                acc.axpy(-self.rewards[j], &self.design[j], 1.0);
            }
            acc
        } else {
            let mut acc = DVector::zeros(self.p());
            let mut next = rows.iter().peekable();
            for j in 0..self.rewards.len() {
                if next.peek() == Some(&&j) {
                    next.next();
                } else {
                    acc.axpy(self.rewards[j], &self.design[j], 1.0);
                }
            }
            acc
        };
        let mut z = r * safe;
        if !rows.is_empty() {
            let stacked = DMatrix::from_fn(self.p(), rows.len(), |i, c| self.design[rows[c]][i]);
            let u = r * stacked;
            for (c, &j) in rows.iter().enumerate() {
                let y = self.rewards[j];
                for (zi, ui) in z.iter_mut().zip(u.column(c).iter()) {
                    let v = ui * y;
                    if v.abs() <= b_t {
                        *zi += v;
                    }
                }
            }
        }
        Ok(r * z)
    }

    /// Reference implementation of [`Self::estimate_theta`] that whitens every row.
    pub fn estimate_theta_dense(&self, b_t: f64) -> Result<DVector<f64>> {
        let r = sym_inv_sqrt_with_min(&self.gram)?.root;
        let mut z = DVector::zeros(self.p());
        for (x, &y) in self.design.iter().zip(&self.rewards) {
            let u = &r * x;
            for (zi, ui) in z.iter_mut().zip(u.iter()) {
                if (ui * y).abs() <= b_t {
                    *zi += ui * y;
                }
            }
        }
        Ok(&r * z)
    }

    /// UCB scores `x·θ̂ + β‖x‖_{M⁻¹}` for arms stored as the columns of `arms`.
    pub fn ucb_scores(&self, theta: &DVector<f64>, arms: &DMatrix<f64>, beta: f64) -> Vec<f64> {
        let means = arms.tr_mul(theta);
        let whitened =
            self.chol.l_dirty().solve_lower_triangular(arms).expect("Cholesky factor has a positive diagonal");
        (0..arms.ncols()).map(|a| means[a] + beta * whitened.column(a).norm()).collect()
    }

    /// Maximizer of the UCB score; lowest index on ties.
    pub fn select_arm(&self, theta: &DVector<f64>, arms: &[DVector<f64>], beta: f64) -> Result<(usize, DVector<f64>)> {
        if arms.is_empty() {
            return input_err("cannot select from an empty arm set");
        }
        let a = self.select_column(theta, &DMatrix::from_columns(arms), beta);
        Ok((a, arms[a].clone()))
    }

    pub fn select_column(&self, theta: &DVector<f64>, arms: &DMatrix<f64>, beta: f64) -> usize {
        crate::env::argmax(&self.ucb_scores(theta, arms, beta)).0
    }
}

fn cholesky(m: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(m.clone()).ok_or_else(|| Error::Numerical {
        what: "Gram matrix is not positive definite".into(),
        value: m.diagonal().min(),
    })
}

/// Runs up to `rounds` exploitation rounds (fewer if the episode ends).
/// Every pull is appended to `h1` in matrix form.
pub fn run_lowto(
    state: &mut LowToState,
    params: &LowToParams,
    episode: &mut Episode<'_>,
    split: &SubspaceSplit,
    rounds: usize,
    batch: usize,
    h1: &mut Vec<(DMatrix<f64>, f64)>,
) -> Result<()> {
    params.validate()?;
    let p = state.p();
    if split.total_dim() != p || split.effective_dim() != state.k() {
        return input_err("subspace split does not match the LowTO state dimensions");
    }
    let fixed = !episode.env().is_contextual();
    let mut rotated: Option<DMatrix<f64>> = None;
    let mut theta = DVector::zeros(p);
    for step in 0..rounds {
        if episode.done() {
            break;
        }
        if rotated.is_none() || !fixed {
            let cols = episode.arms().iter().map(|x| split.rotate_and_vectorize(x)).collect::<Result<Vec<_>>>()?;
            rotated = Some(DMatrix::from_columns(&cols));
        }
        let arms = rotated.as_ref().expect("rotated above");
        if step % params.refresh_every == 0 {
            let b_t = compute_bt(state.rounds(), params, state.history_len(), p);
            theta = state.estimate_theta(b_t)?;
        }
        let beta = state.beta(params);
        let a = state.select_column(&theta, arms, beta);
        let x_mat = episode.arms()[a].clone();
        let y = episode.pull(&x_mat, Some(a), batch, Phase::Exploit);
        state.update(&arms.column(a).into_owned(), y);
        h1.push((x_mat, y));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{ArmSource, Environment, NoiseModel, RewardLaw};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn randv(rng: &mut ChaCha8Rng, p: usize) -> DVector<f64> {
        DVector::from_fn(p, |_, _| rng.sample(StandardNormal))
    }

    fn history(rng: &mut ChaCha8Rng, n: usize, p: usize) -> Vec<(DVector<f64>, f64)> {
        (0..n).map(|_| (randv(rng, p), rng.sample::<f64, _>(StandardNormal) * 3.0)).collect()
    }

    fn params(delta: f64, b: f64, eps: f64) -> LowToParams {
        LowToParams {
            delta,
            b_moment: b,
            eps,
            s_bound: 1.0,
            s_perp: 0.0,
            t2: 100,
            confidence: Confidence::Truncated { c_beta: 4.0 },
            truncate: true,
            refresh_every: 1,
        }
    }

    #[test]
    fn init_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ridge = Ridge { lambda0: 1.0, lambda_perp: 50.0, k: 2 };
        let empty = LowToState::init(&[], 4, ridge).unwrap();
        assert_eq!(empty.gram(), &DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 1.0, 50.0, 50.0])));
        let full = LowToState::init(&[], 3, Ridge::uniform(2.0, 3)).unwrap();
        assert_eq!(full.gram(), &(DMatrix::identity(3, 3) * 2.0));

        let hist = history(&mut rng, 3, 4);
        let s = LowToState::init(&hist, 4, ridge).unwrap();
        let mut want = empty.gram().clone();
        for (x, _) in &hist {
            want += x * x.transpose();
        }
        assert!((s.gram() - want).norm() < 1e-12);
        assert_eq!(s.design_rows().len(), 3);
        assert_eq!(s.history_len(), 3);
    }

    #[test]
    fn init_rejects_bad_ridge() {
        assert!(LowToState::init(&[], 4, Ridge { lambda0: 1.0, lambda_perp: 0.5, k: 2 }).is_err());
        assert!(LowToState::init(&[], 4, Ridge { lambda0: 1.0, lambda_perp: 1.0, k: 5 }).is_err());
    }

    #[test]
    fn bt_values() {
        let p1 = params(1.0, 2.0, 0.05);
        let want = (2.0 / 4000f64.ln()).sqrt();
        assert!((compute_bt(0, &p1, 7, 100) - want).abs() < 1e-15);
        assert!((compute_bt(500, &p1, 3, 100) - want).abs() < 1e-15);
        assert!((want - 0.4911).abs() < 1e-4);
        let p5 = params(0.5, 2.0, 0.05);
        let ratio = compute_bt(150, &p5, 10, 100) / compute_bt(0, &p5, 10, 100);
        assert!((ratio - 16f64.powf(1.0 / 6.0)).abs() < 1e-12);
        let mut off = p5;
        off.truncate = false;
        assert!(compute_bt(0, &off, 0, 10).is_infinite());
    }

    #[test]
    fn beta_values() {
        let mut pr = params(1.0, 2.0, 0.05);
        pr.s_bound = 8.06;
        pr.s_perp = 0.01;
        let ridge = Ridge { lambda0: 1.0, lambda_perp: 1e4, k: 36 };
        let beta = compute_beta(3, &pr, 9, 100, &ridge, 4.0);
        // 4·10·2^{1/2}·ln(4000)^{1/2} + 8.06 + 100·0.01
        let want = 40.0 * 2f64.sqrt() * 4000f64.ln().sqrt() + 8.06 + 1.0;
        assert!((beta - want).abs() < 1e-10);
        assert!((beta - 171.9739614898812).abs() < 1e-9);
        assert_eq!(beta, compute_beta(300, &pr, 9, 100, &ridge, 4.0));

        pr.s_perp = 0.0;
        let tiny = Ridge { lambda0: 1e-300, lambda_perp: 1e-300, k: 36 };
        let pure = compute_beta(3, &pr, 9, 100, &tiny, 4.0);
        assert!((pure - 40.0 * 2f64.sqrt() * 4000f64.ln().sqrt()).abs() < 1e-9);
    }

    #[test]
    fn lambda_perp_schedule() {
        let lp = lambda_perp(8.0, 1000, 200, 36, 1.0);
        let want = 64.0 * 1000.0 / (36.0 * (1.0 + 64.0 * 1200.0 / 36.0f64).ln());
        assert!((lp - want).abs() < 1e-9);
        assert_eq!(lambda_perp(8.0, 0, 200, 36, 1.0), 1.0);
        assert_eq!(lambda_perp(0.01, 1, 100, 36, 1.0), 1.0);
    }

    #[test]
    fn ridge_limit() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for p in [1usize, 5, 20, 50] {
            let hist = history(&mut rng, 2 * p + 3, p);
            let mut s = LowToState::init(&hist, p, Ridge::uniform(0.7, p)).unwrap();
            let got = s.estimate_theta(f64::INFINITY).unwrap();
            let x = DMatrix::from_columns(&hist.iter().map(|(x, _)| x.clone()).collect::<Vec<_>>()).transpose();
            let y = DVector::from_iterator(hist.len(), hist.iter().map(|(_, y)| *y));
            let m = x.transpose() * &x + DMatrix::identity(p, p) * 0.7;
            let want = m.lu().solve(&(x.transpose() * y)).unwrap();
            assert!((&got - &want).norm() < 1e-8 * want.norm().max(1.0));
            let dense = s.estimate_theta_dense(f64::INFINITY).unwrap();
            assert!((&dense - &want).norm() < 1e-8 * want.norm().max(1.0));
        }
    }

    #[test]
    fn total_truncation_and_scalar_case() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let hist = history(&mut rng, 10, 4);
        let mut s = LowToState::init(&hist, 4, Ridge::uniform(1.0, 4)).unwrap();
        assert!(s.estimate_theta(0.0).unwrap().norm() == 0.0);

        let (x, y, lam) = (2.0, 3.0, 0.5);
        let mut s = LowToState::init(&[(DVector::from_element(1, x), y)], 1, Ridge::uniform(lam, 1)).unwrap();
        // |u y| = |x y|/√(x²+λ) ≈ 2.83
        let got = s.estimate_theta(3.0).unwrap()[0];
        assert!((got - x * y / (x * x + lam)).abs() < 1e-12);
        assert_eq!(s.estimate_theta(2.0).unwrap()[0], 0.0);
    }

    #[test]
    fn fast_path_matches_dense_truncation() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for trial in 0..20 {
            let p = 3 + trial % 6;
            let mut hist = history(&mut rng, 40, p);
            for (j, (_, y)) in hist.iter_mut().enumerate() {
                if j % 7 == 0 {
                    *y *= 40.0;
                }
            }
            let ridge = Ridge { lambda0: 1.0, lambda_perp: 10.0, k: p - 1 };
            let mut s = LowToState::init(&hist, p, ridge).unwrap();
            for b in [0.5, 2.0, 8.0, 30.0, 1e3] {
                let fast = s.estimate_theta(b).unwrap();
                let dense = s.estimate_theta_dense(b).unwrap();
                assert!((&fast - &dense).norm() <= 1e-10 * dense.norm().max(1.0), "p={p} b={b}");
            }
        }
    }

    #[test]
    fn truncation_is_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let hist = history(&mut rng, 30, 5);
        let s = LowToState::init(&hist, 5, Ridge::uniform(1.0, 5)).unwrap();
        let r = sym_inv_sqrt_with_min(s.gram()).unwrap().root;
        let kept = |b: f64| -> Vec<bool> {
            hist.iter().flat_map(|(x, y)| (&r * x).iter().map(|u| (u * y).abs() <= b).collect::<Vec<_>>()).collect()
        };
        let (lo, hi) = (kept(1.0), kept(2.0));
        assert!(lo.iter().zip(&hi).all(|(&a, &b)| !a || b));
    }

    #[test]
    fn complement_penalty_suppresses_tail() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..10 {
            let (p, k) = (12, 4);
            let mut truth = randv(&mut rng, p);
            truth.rows_mut(k, p - k).fill(0.0);
            let hist: Vec<_> = (0..60)
                .map(|_| {
                    let x = randv(&mut rng, p);
                    let y = x.dot(&truth) + 0.1 * rng.sample::<f64, _>(StandardNormal);
                    (x, y)
                })
                .collect();
            let mut s = LowToState::init(&hist, p, Ridge { lambda0: 1.0, lambda_perp: 1e6, k }).unwrap();
            let th = s.estimate_theta(f64::INFINITY).unwrap();
            assert!(th.rows(k, p - k).norm() <= 1e-2 * th.rows(0, k).norm());
        }
    }

    #[test]
    fn selection_rules() {
        let s = LowToState::init(&[], 3, Ridge::uniform(1.0, 3)).unwrap();
        let e1 = DVector::from_vec(vec![1.0, 0.0, 0.0]);
        let arms = vec![
            DVector::from_vec(vec![0.2, 5.0, 0.0]),
            DVector::from_vec(vec![0.9, 0.0, 0.0]),
            DVector::from_vec(vec![0.5, 0.0, 1.0]),
        ];
        assert_eq!(s.select_arm(&e1, &arms, 0.0).unwrap().0, 1);
        let twins = vec![arms[1].clone(), arms[1].clone()];
        assert_eq!(s.select_arm(&e1, &twins, 0.7).unwrap().0, 0);
        assert!(s.select_arm(&e1, &[], 1.0).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let hist = history(&mut rng, 8, 3);
        let s = LowToState::init(&hist, 3, Ridge::uniform(1.0, 3)).unwrap();
        let inv = s.gram().clone().try_inverse().unwrap();
        for _ in 0..50 {
            let arms: Vec<_> = (0..5).map(|_| randv(&mut rng, 3)).collect();
            let theta = randv(&mut rng, 3);
            let beta = rng.random::<f64>() * 3.0;
            let brute =
                arms.iter().map(|x| x.dot(&theta) + beta * (x.transpose() * &inv * x)[0].sqrt()).collect::<Vec<_>>();
            let (a, _) = s.select_arm(&theta, &arms, beta).unwrap();
            assert_eq!(a, crate::env::argmax(&brute).0);
            // duplicates appended after the maximizer never change the choice
            let mut more = arms.clone();
            more.extend(arms.iter().cloned());
            assert_eq!(s.select_arm(&theta, &more, beta).unwrap().0, a);
        }
    }

    #[test]
    fn update_and_replay() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let hist = history(&mut rng, 12, 4);
        let ridge = Ridge { lambda0: 1.0, lambda_perp: 3.0, k: 3 };
        let mut s = LowToState::init(&hist[..4], 4, ridge).unwrap();
        let mut det = s.gram().determinant();
        for (x, y) in &hist[4..] {
            let before = s.gram().clone();
            s.update(x, *y);
            assert!((s.gram() - &before - x * x.transpose()).norm() < 1e-12);
            let now = s.gram().determinant();
            assert!(now >= det);
            det = now;
        }
        let replay = LowToState::init(&hist, 4, ridge).unwrap();
        assert!((s.gram() - replay.gram()).norm() < 1e-10);
        assert_eq!(s.rewards(), replay.rewards());
        assert_eq!(s.rounds(), 8);
        let a = s.estimate_theta(f64::INFINITY).unwrap();
        let b = replay.clone().estimate_theta(f64::INFINITY).unwrap();
        assert!((a - b).norm() < 1e-9);
        let ld = (s.gram().determinant() / 3.0).ln();
        assert!((s.log_det_ratio() - ld).abs() < 1e-9);
    }

    fn toy_env(seed: u64, arms: Vec<DMatrix<f64>>, noise: NoiseModel) -> Environment {
        let mut theta = DMatrix::zeros(2, 2);
        theta[(0, 0)] = 1.0;
        theta[(1, 1)] = 0.5;
        Environment::new(theta, 2, ArmSource::Fixed(arms), RewardLaw::Additive(noise), seed).unwrap()
    }

    #[test]
    fn run_zero_and_single_arm() {
        let split = SubspaceSplit::identity(2, 2, 2).unwrap();
        let env = toy_env(1, vec![DMatrix::identity(2, 2)], NoiseModel::pareto());
        let mut ep = Episode::new(&env, 30);
        let mut s = LowToState::init(&[], 4, Ridge::uniform(1.0, 4)).unwrap();
        let pr = params(0.5, 10.0, 0.1);
        let mut h1 = Vec::new();
        run_lowto(&mut s, &pr, &mut ep, &split, 0, 1, &mut h1).unwrap();
        assert_eq!(s.rounds(), 0);
        assert!(ep.trace().is_empty() && h1.is_empty());
        run_lowto(&mut s, &pr, &mut ep, &split, 30, 1, &mut h1).unwrap();
        assert_eq!(h1.len(), 30);
        assert!(ep.trace().records.iter().all(|r| r.inst_regret == 0.0));
    }

    #[test]
    fn oful_regime_is_sublinear() {
        let mut wins = 0;
        for seed in 0..10u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let arms: Vec<_> = (0..20).map(|_| crate::env::uniform_ball(&mut rng, 2, 2, 1.0)).collect();
            let env = toy_env(seed, arms, NoiseModel::gaussian(1.0));
            let split = SubspaceSplit::identity(2, 2, 2).unwrap();
            let mut s = LowToState::init(&[], 4, Ridge::uniform(1.0, 4)).unwrap();
            let mut pr = params(1.0, LowToParams::b_moment(1.0, env.s_bound(), 1.0), 0.1);
            pr.s_bound = env.s_bound();
            pr.s_perp = env.s_bound();
            let total = 2000;
            let mut ep = Episode::new(&env, total);
            run_lowto(&mut s, &pr, &mut ep, &split, total, 1, &mut Vec::new()).unwrap();
            let q = total / 4;
            let tr = ep.trace();
            let first = tr.mean_inst_regret(|r| r.round <= q).unwrap();
            let last = tr.mean_inst_regret(|r| r.round > total - q).unwrap();
            if last < first {
                wins += 1;
            }
        }
        assert!(wins >= 8, "{wins}");
    }
}
