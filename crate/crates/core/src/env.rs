//! Synthetic low-rank bandit environments with heavy-tailed rewards.
//!
//! An [`Environment`] is immutable once built. Randomness is drawn from
//! ChaCha8 streams derived from the environment seed: one for construction,
//! one for reward noise, one for exploration draws, and one stream per round
//! for contextual arm sets. The algorithm never touches the noise stream, so
//! two algorithms run on the same seed see the same noise sequence.

use std::borrow::Cow;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Pareto, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};

use crate::error::{input_err, Result};
use crate::linalg::{full_svd, trace_inner};

const STREAM_BUILD: u64 = 0;
const STREAM_NOISE: u64 = 1;
const STREAM_EXPLORE: u64 = 2;
/// Contextual round `t` draws its arm set from stream `STREAM_CONTEXT + t`.
const STREAM_CONTEXT: u64 = 1 << 32;

/// Relative tolerance used when checking norm bounds of emitted arms.
const NORM_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseKind {
    StudentT {
        nu: f64,
    },
    /// Lomax draw (Pareto shifted to start at 0) minus its mean `1/(α−1)`.
    ParetoCentered {
        alpha: f64,
    },
    Laplace {
        scale: f64,
    },
    Gaussian {
        std: f64,
    },
}

/// Zero-mean noise law with a declared `(1+δ)` moment bound `c`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    #[serde(flatten)]
    pub kind: NoiseKind,
    pub delta: f64,
    pub c_bound: f64,
}

impl NoiseModel {
    pub fn student_t() -> Self {
        Self { kind: NoiseKind::StudentT { nu: 1.7 }, delta: 0.5, c_bound: 6.0 }
    }

    pub fn pareto() -> Self {
        Self { kind: NoiseKind::ParetoCentered { alpha: 1.9 }, delta: 0.5, c_bound: 5.0 }
    }

    pub fn laplace() -> Self {
        Self { kind: NoiseKind::Laplace { scale: 1.0 }, delta: 1.0, c_bound: 2.0 }
    }

    /// Gaussian noise; declares `δ = 1` with `c = std²`.
    pub fn gaussian(std: f64) -> Self {
        Self { kind: NoiseKind::Gaussian { std }, delta: 1.0, c_bound: (std * std).max(f64::MIN_POSITIVE) }
    }

    /// Preset lookup by name: `student_t`, `pareto`, `laplace`, `gaussian`.
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "student_t" => Ok(Self::student_t()),
            "pareto" => Ok(Self::pareto()),
            "laplace" => Ok(Self::laplace()),
            "gaussian" => Ok(Self::gaussian(1.0)),
            other => input_err(format!("unknown noise preset '{other}'")),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return input_err(format!("noise delta must lie in (0, 1], got {}", self.delta));
        }
        if !(self.c_bound > 0.0 && self.c_bound.is_finite()) {
            return input_err(format!("noise moment bound must be positive, got {}", self.c_bound));
        }
        let ok = match self.kind {
            NoiseKind::StudentT { nu } => nu > 1.0 + self.delta && nu.is_finite(),
            NoiseKind::ParetoCentered { alpha } => alpha > 1.0 + self.delta && alpha.is_finite(),
            NoiseKind::Laplace { scale } => scale > 0.0 && scale.is_finite(),
            NoiseKind::Gaussian { std } => std >= 0.0 && std.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            input_err(format!("invalid noise parameters {:?} for delta {}", self.kind, self.delta))
        }
    }

    /// Draw without re-validating; callers validate once at construction.
    pub(crate) fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self.kind {
            NoiseKind::StudentT { nu } => StudentT::new(nu).expect("validated").sample(rng),
            NoiseKind::ParetoCentered { alpha } => {
                let raw: f64 = Pareto::new(1.0, alpha).expect("validated").sample(rng);
                (raw - 1.0) - 1.0 / (alpha - 1.0)
            }
            NoiseKind::Laplace { scale } => {
                let u: f64 = rng.random::<f64>() - 0.5;
                -scale * u.signum() * (1.0 - 2.0 * u.abs()).ln()
            }
            NoiseKind::Gaussian { std } => {
                if std == 0.0 {
                    0.0
                } else {
                    std * rng.sample::<f64, _>(StandardNormal)
                }
            }
        }
    }
}

pub fn sample_noise<R: Rng + ?Sized>(model: &NoiseModel, rng: &mut R) -> Result<f64> {
    model.validate()?;
    Ok(model.draw(rng))
}

/// How a pulled arm pays out given its mean `⟨X, Θ*⟩`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RewardLaw {
    Additive(NoiseModel),
    /// Pays `1/γ` with probability `γ·mean` (clamped to `[0, 1]`), else 0.
    HeavyBernoulli {
        gamma: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum ArmSource {
    Fixed(Vec<DMatrix<f64>>),
    /// `per_round` fresh arms from the Frobenius ball of the given radius.
    Contextual {
        per_round: usize,
        radius: f64,
    },
}

/// Exploration distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExploreMode {
    /// Uniform over the current round's arm set.
    #[default]
    ArmSet,
    /// i.i.d. `N(0, 1/(d1 d2))` entries, rescaled into the `S`-ball if needed.
    Ball,
}

#[derive(Debug, Clone)]
pub struct Environment {
    theta_star: DMatrix<f64>,
    rank: usize,
    arms: ArmSource,
    law: RewardLaw,
    s_bound: f64,
    seed: u64,
    /// Cached `⟨X, Θ*⟩` for fixed arm sets.
    fixed_means: Vec<f64>,
}

/// RNG streams handed to a simulation.
pub struct Streams {
    pub noise: ChaCha8Rng,
    pub explore: ChaCha8Rng,
}

impl Environment {
    /// Builds an environment; `Θ*` must have exactly `rank` singular values above 1e-10.
    pub fn new(theta_star: DMatrix<f64>, rank: usize, arms: ArmSource, law: RewardLaw, seed: u64) -> Result<Self> {
        if theta_star.iter().any(|v| !v.is_finite()) {
            return input_err("theta_star has non-finite entries");
        }
        let sv = full_svd(&theta_star)?.singular_values;
        let numerical_rank = sv.iter().filter(|&&s| s > 1e-10).count();
        if numerical_rank != rank {
            return input_err(format!("theta_star has rank {numerical_rank}, declared {rank}"));
        }
        if let RewardLaw::Additive(noise) = &law {
            noise.validate()?;
        }
        let (d1, d2) = theta_star.shape();
        let arm_norm = match &arms {
            ArmSource::Fixed(list) => {
                if list.is_empty() {
                    return input_err("fixed arm set is empty");
                }
                if let Some(bad) = list.iter().find(|x| x.shape() != (d1, d2)) {
                    return input_err(format!("arm shape {:?} does not match theta {:?}", bad.shape(), (d1, d2)));
                }
                list.iter().map(|x| x.norm()).fold(0.0, f64::max)
            }
            ArmSource::Contextual { per_round, radius } => {
                if *per_round == 0 || !(*radius > 0.0) {
                    return input_err("contextual arm source needs per_round >= 1 and radius > 0");
                }
                *radius
            }
        };
        let s_bound = theta_star.norm().max(arm_norm);
        let fixed_means = match &arms {
            ArmSource::Fixed(list) => list.iter().map(|x| trace_inner(x, &theta_star)).collect(),
            ArmSource::Contextual { .. } => Vec::new(),
        };
        Ok(Self { theta_star, rank, arms, law, s_bound, seed, fixed_means })
    }

    pub fn theta_star(&self) -> &DMatrix<f64> {
        &self.theta_star
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn shape(&self) -> (usize, usize) {
        self.theta_star.shape()
    }

    /// Norm bound `S` covering `Θ*` and every emitted arm.
    pub fn s_bound(&self) -> f64 {
        self.s_bound
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn law(&self) -> &RewardLaw {
        &self.law
    }

    pub fn arm_source(&self) -> &ArmSource {
        &self.arms
    }

    pub fn is_contextual(&self) -> bool {
        matches!(self.arms, ArmSource::Contextual { .. })
    }

    pub fn streams(&self) -> Streams {
        Streams { noise: stream(self.seed, STREAM_NOISE), explore: stream(self.seed, STREAM_EXPLORE) }
    }

    /// Arm set offered at 0-based round `t`.
    pub fn arms_at(&self, t: usize) -> Cow<'_, [DMatrix<f64>]> {
        match &self.arms {
            ArmSource::Fixed(list) => Cow::Borrowed(list.as_slice()),
            ArmSource::Contextual { per_round, radius } => {
                let (d1, d2) = self.shape();
                let mut rng = stream(self.seed, STREAM_CONTEXT + t as u64);
                let set: Vec<_> = (0..*per_round).map(|_| uniform_ball(&mut rng, d1, d2, *radius)).collect();
                Cow::Owned(set)
            }
        }
    }

    pub fn mean_reward(&self, x: &DMatrix<f64>) -> f64 {
        trace_inner(x, &self.theta_star)
    }

    /// Mean rewards of an arm set; uses the cache when `arms` is the fixed set.
    pub fn means(&self, arms: &[DMatrix<f64>]) -> Vec<f64> {
        if let ArmSource::Fixed(list) = &self.arms {
            if std::ptr::eq(list.as_slice(), arms) {
                return self.fixed_means.clone();
            }
        }
        arms.iter().map(|x| self.mean_reward(x)).collect()
    }

    /// Index and value of the best mean in `arms` (lowest index on ties).
    pub fn best_arm(&self, arms: &[DMatrix<f64>]) -> (usize, f64) {
        argmax(&self.means(arms))
    }

    /// Observed reward for pulling `x`.
    pub fn reward<R: Rng + ?Sized>(&self, x: &DMatrix<f64>, rng: &mut R) -> f64 {
        let mean = self.mean_reward(x);
        match self.law {
            RewardLaw::Additive(noise) => mean + noise.draw(rng),
            RewardLaw::HeavyBernoulli { gamma } => {
                let p = (gamma * mean).clamp(0.0, 1.0);
                if rng.random::<f64>() < p {
                    1.0 / gamma
                } else {
                    0.0
                }
            }
        }
    }
}

/// Exploration draw at round `t`. Returns the arm index when the draw comes
/// from the arm set, `None` in ball mode.
pub fn exploration_sample<R: Rng + ?Sized>(
    env: &Environment,
    arms: &[DMatrix<f64>],
    mode: ExploreMode,
    rng: &mut R,
) -> Result<(Option<usize>, DMatrix<f64>)> {
    match mode {
        ExploreMode::ArmSet => {
            if arms.is_empty() {
                return input_err("cannot explore an empty arm set");
            }
            let i = rng.random_range(0..arms.len());
            Ok((Some(i), arms[i].clone()))
        }
        ExploreMode::Ball => {
            let (d1, d2) = env.shape();
            Ok((None, ball_draw(rng, d1, d2, env.s_bound())))
        }
    }
}

fn ball_draw<R: Rng + ?Sized>(rng: &mut R, d1: usize, d2: usize, radius: f64) -> DMatrix<f64> {
    let sd = 1.0 / ((d1 * d2) as f64).sqrt();
    let mut x = DMatrix::from_fn(d1, d2, |_, _| sd * rng.sample::<f64, _>(StandardNormal));
    let n = x.norm();
    if n > radius {
        x *= radius / n;
    }
    x
}

/// Uniform draw from `{X : ‖X‖_F ≤ radius}`.
pub fn uniform_ball<R: Rng + ?Sized>(rng: &mut R, d1: usize, d2: usize, radius: f64) -> DMatrix<f64> {
    let p = (d1 * d2) as f64;
    loop {
        let z = DMatrix::from_fn(d1, d2, |_, _| rng.sample::<f64, _>(StandardNormal));
        let n = z.norm();
        if n > 0.0 {
            let u: f64 = rng.random();
            let x = z * (radius * u.powf(1.0 / p) / n);
            debug_assert!(x.norm() <= radius * (1.0 + NORM_SLACK));
            return x;
        }
    }
}

pub(crate) fn argmax(values: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, &v) in values.iter().enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// `Θ* = diag(7, 4, 0, …)` at 10×10 with 500 fixed arms from the unit ball.
pub fn gen_scenario1(seed: u64, noise: NoiseModel) -> Result<Environment> {
    let mut theta = DMatrix::zeros(10, 10);
    theta[(0, 0)] = 7.0;
    theta[(1, 1)] = 4.0;
    let mut rng = stream(seed, STREAM_BUILD);
    let arms = (0..500).map(|_| uniform_ball(&mut rng, 10, 10, 1.0)).collect();
    Environment::new(theta, 2, ArmSource::Fixed(arms), RewardLaw::Additive(noise), seed)
}

/// Rows 1 and 2 of `Θ*` are orthogonal random vectors of norm 7 and 4, the
/// rest zero; 10 fresh unit-ball arms per round.
pub fn gen_scenario2(seed: u64, noise: NoiseModel) -> Result<Environment> {
    let d = 10;
    let mut rng = stream(seed, STREAM_BUILD);
    let g1 = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let mut g2 = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let r1 = g1.normalize();
    g2 -= &r1 * r1.dot(&g2);
    // second Gram-Schmidt pass keeps the rows orthogonal to roundoff
    g2 -= &r1 * r1.dot(&g2);
    let r2 = g2.normalize();
    let mut theta = DMatrix::zeros(d, d);
    theta.row_mut(0).copy_from(&(r1 * 7.0).transpose());
    theta.row_mut(1).copy_from(&(r2 * 4.0).transpose());
    let arms = ArmSource::Contextual { per_round: 10, radius: 1.0 };
    Environment::new(theta, 2, arms, RewardLaw::Additive(noise), seed)
}

/// Hard instance with `K = (d−1)r` arms where one starred arm has mean
/// `2γ^δ` and every other arm `γ^δ`.
#[derive(Debug, Clone)]
pub struct LowerBoundInstance {
    pub arms: Vec<DMatrix<f64>>,
    pub theta_star: DMatrix<f64>,
    pub gamma: f64,
    pub starred_arm: usize,
    pub delta: f64,
}

impl LowerBoundInstance {
    pub fn k(&self) -> usize {
        self.arms.len()
    }

    /// Wraps the instance as an environment with the Bernoulli `1/γ` payoff.
    pub fn into_environment(self, seed: u64) -> Result<Environment> {
        let rank = full_svd(&self.theta_star)?.singular_values.iter().filter(|&&s| s > 1e-10).count();
        Environment::new(
            self.theta_star,
            rank,
            ArmSource::Fixed(self.arms),
            RewardLaw::HeavyBernoulli { gamma: self.gamma },
            seed,
        )
    }
}

pub fn gen_lower_bound_instance(
    d: usize,
    r: usize,
    delta: f64,
    horizon: usize,
    seed: u64,
) -> Result<LowerBoundInstance> {
    if d < 3 || r == 0 || r > d || (d - 1) * r < 4 {
        return input_err(format!("lower-bound instance needs d >= 3, 1 <= r <= d and (d-1)r >= 4, got d={d}, r={r}"));
    }
    if !(delta > 0.0 && delta <= 1.0) {
        return input_err(format!("delta must lie in (0, 1], got {delta}"));
    }
    let k = (d - 1) * r;
    let gamma = (k as f64 / (horizon + 2 * k) as f64).powf(1.0 / (1.0 + delta));
    if 2.0 * gamma.powf(1.0 + delta) >= 1.0 {
        return input_err(format!("gamma {gamma} violates 2 gamma^(1+delta) < 1"));
    }
    let gd = gamma.powf(delta);
    let rr = (r * (r + 1)) as f64;
    let starred_arm = stream(seed, STREAM_BUILD).random_range(0..k);
    // flattened position a ↦ entry (a % r, 1 + a / r) of the r×(d−1) block
    let slot = |a: usize| (a % r, 1 + a / r);

    let mut theta_star = DMatrix::zeros(d, d);
    for i in 0..r {
        theta_star[(i, 0)] = (4.0 * (i + 1) as f64 / rr).sqrt() * gd;
    }
    theta_star[slot(starred_arm)] = 2f64.sqrt() * gd;

    let arms = (0..k)
        .map(|a| {
            let mut x = DMatrix::zeros(d, d);
            for i in 0..r {
                x[(i, 0)] = ((i + 1) as f64 / rr).sqrt();
            }
            x[slot(a)] = std::f64::consts::FRAC_1_SQRT_2;
            x
        })
        .collect();
    Ok(LowerBoundInstance { arms, theta_star, gamma, starred_arm, delta })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::vec_col_major;
    use nalgebra::SymmetricEigen;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn moments(model: NoiseModel, n: usize, seed: u64, p: f64) -> (f64, f64) {
        let mut r = rng(seed);
        let (mut s, mut m) = (0.0, 0.0);
        for _ in 0..n {
            let x = sample_noise(&model, &mut r).unwrap();
            s += x;
            m += x.abs().powf(p);
        }
        (s / n as f64, m / n as f64)
    }

    #[test]
    fn laplace_moments() {
        let (mean, second) = moments(NoiseModel::laplace(), 1_000_000, 1, 2.0);
        assert!(mean.abs() < 0.01, "{mean}");
        assert!((second - 2.0).abs() < 0.2, "{second}");
    }

    #[test]
    fn pareto_is_centered() {
        let (mean, _) = moments(NoiseModel::pareto(), 1_000_000, 2, 1.0);
        assert!(mean.abs() < 0.05, "{mean}");
    }

    #[test]
    fn degenerate_gaussian_is_zero() {
        let mut r = rng(3);
        let g = NoiseModel::gaussian(0.0);
        assert!((0..100).all(|_| sample_noise(&g, &mut r).unwrap() == 0.0));
    }

    #[test]
    fn declared_moment_bounds_hold() {
        for (i, model) in [NoiseModel::student_t(), NoiseModel::pareto(), NoiseModel::laplace()].into_iter().enumerate()
        {
            let (_, m) = moments(model, 1_000_000, 10 + i as u64, 1.0 + model.delta);
            assert!(m <= 2.0 * model.c_bound, "{model:?}: {m}");
        }
    }

    #[test]
    fn invalid_noise_rejected() {
        let mut r = rng(0);
        let bad = NoiseModel { kind: NoiseKind::StudentT { nu: 1.4 }, delta: 0.5, c_bound: 1.0 };
        assert!(sample_noise(&bad, &mut r).is_err());
        let bad = NoiseModel { kind: NoiseKind::ParetoCentered { alpha: 1.9 }, delta: 1.0, c_bound: 1.0 };
        assert!(bad.validate().is_err());
        assert!(NoiseModel::preset("cauchy").is_err());
    }

    #[test]
    fn noiseless_rewards() {
        let env = gen_scenario1(4, NoiseModel::gaussian(0.0)).unwrap();
        let mut r = rng(0);
        let aligned = env.theta_star() / env.theta_star().norm();
        assert!((env.reward(&aligned, &mut r) - 65f64.sqrt()).abs() < 1e-12);
        let mut e11 = DMatrix::zeros(10, 10);
        e11[(0, 0)] = 1.0;
        assert_eq!(env.reward(&e11, &mut r), 7.0);
    }

    #[test]
    fn laplace_reward_mean_in_clt_band() {
        let env = gen_scenario1(5, NoiseModel::laplace()).unwrap();
        let x = env.arms_at(0)[3].clone();
        let mut r = rng(6);
        let n = 100_000;
        let mean = (0..n).map(|_| env.reward(&x, &mut r)).sum::<f64>() / n as f64;
        let band = 3.0 * 2f64.sqrt() / (n as f64).sqrt();
        assert!((mean - env.mean_reward(&x)).abs() < band);
    }

    #[test]
    fn scenario1_contract() {
        let env = gen_scenario1(7, NoiseModel::pareto()).unwrap();
        let arms = env.arms_at(0);
        assert_eq!(arms.len(), 500);
        assert!(arms.iter().all(|x| x.norm() <= 1.0 + 1e-12));
        let sv = full_svd(env.theta_star()).unwrap().singular_values;
        assert_eq!(sv[0], 7.0);
        assert_eq!(sv[1], 4.0);
        assert!(sv.iter().skip(2).all(|&s| s == 0.0));
        let again = gen_scenario1(7, NoiseModel::pareto()).unwrap();
        assert_eq!(env.arms_at(0), again.arms_at(0));
        assert!((env.s_bound() - 65f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn scenario2_contract() {
        let env = gen_scenario2(8, NoiseModel::student_t()).unwrap();
        let t = env.theta_star();
        let (r1, r2) = (t.row(0), t.row(1));
        assert!(r1.dot(&r2).abs() < 1e-12);
        assert!((r1.norm() - 7.0).abs() < 1e-12);
        assert!((r2.norm() - 4.0).abs() < 1e-12);
        assert!(t.rows(2, 8).iter().all(|&v| v == 0.0));
        assert_eq!(env.rank(), 2);
        let a = env.arms_at(5);
        assert_eq!(a.len(), 10);
        assert!(a.iter().all(|x| x.norm() <= 1.0 + 1e-12));
        assert_eq!(a, env.arms_at(5));
        assert_ne!(a, env.arms_at(6));
    }

    #[test]
    fn rank_declaration_checked() {
        let theta = DMatrix::identity(3, 3);
        let arms = ArmSource::Fixed(vec![DMatrix::zeros(3, 3)]);
        let law = RewardLaw::Additive(NoiseModel::gaussian(1.0));
        assert!(Environment::new(theta.clone(), 2, arms.clone(), law, 0).is_err());
        assert!(Environment::new(theta, 3, arms, law, 0).is_ok());
    }

    #[test]
    fn exploration_frequencies() {
        let arms = vec![DMatrix::zeros(2, 2), DMatrix::identity(2, 2)];
        let mut theta = DMatrix::zeros(2, 2);
        theta[(0, 0)] = 1.0;
        let env = Environment::new(
            theta,
            1,
            ArmSource::Fixed(arms.clone()),
            RewardLaw::Additive(NoiseModel::gaussian(1.0)),
            0,
        )
        .unwrap();
        let mut r = rng(9);
        let n = 10_000;
        let ones = (0..n)
            .filter(|_| exploration_sample(&env, &arms, ExploreMode::ArmSet, &mut r).unwrap().0 == Some(1))
            .count();
        let f = ones as f64 / n as f64;
        assert!((0.45..=0.55).contains(&f), "{f}");

        let single = [arms[1].clone()];
        for _ in 0..20 {
            let (i, x) = exploration_sample(&env, &single, ExploreMode::ArmSet, &mut r).unwrap();
            assert_eq!(i, Some(0));
            assert_eq!(x, arms[1]);
        }
        assert!(exploration_sample(&env, &[], ExploreMode::ArmSet, &mut r).is_err());
    }

    #[test]
    fn ball_exploration_covariance_scale() {
        let env = gen_scenario1(11, NoiseModel::gaussian(1.0)).unwrap();
        let mut r = rng(12);
        let n = 10_000;
        let p = 100;
        let mut cov = DMatrix::<f64>::zeros(p, p);
        for _ in 0..n {
            let (idx, x) = exploration_sample(&env, &[], ExploreMode::Ball, &mut r).unwrap();
            assert!(idx.is_none());
            assert!(x.norm() <= env.s_bound() + 1e-12);
            let v = vec_col_major(&x);
            cov.ger(1.0 / n as f64, &v, &v, 1.0);
        }
        let min = SymmetricEigen::new(cov).eigenvalues.min();
        let target = 1.0 / p as f64;
        assert!(min > target / 3.0 && min < target * 3.0, "{min}");
    }

    #[test]
    fn lower_bound_instance_values() {
        for &(d, r, delta) in &[(5usize, 2usize, 1.0), (6, 3, 0.5), (10, 2, 1.0)] {
            let inst = gen_lower_bound_instance(d, r, delta, 1000, 3).unwrap();
            assert_eq!(inst.k(), (d - 1) * r);
            let gd = inst.gamma.powf(delta);
            for (a, x) in inst.arms.iter().enumerate() {
                let m = trace_inner(x, &inst.theta_star);
                let want = if a == inst.starred_arm { 2.0 * gd } else { gd };
                assert!((m - want).abs() < 1e-12);
                assert!(x.norm() <= 1.0 + 1e-12);
            }
        }
        let k = 8;
        let inst = gen_lower_bound_instance(5, 2, 1.0, 8 * k, 0).unwrap();
        assert!((inst.gamma - 0.1f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn lower_bound_rejects_bad_parameters() {
        assert!(gen_lower_bound_instance(2, 2, 1.0, 100, 0).is_err());
        assert!(gen_lower_bound_instance(3, 1, 1.0, 100, 0).is_err());
        // tiny horizon makes γ large
        assert!(gen_lower_bound_instance(5, 2, 1.0, 0, 0).is_err());
    }

    #[test]
    fn heavy_bernoulli_mean() {
        let inst = gen_lower_bound_instance(5, 2, 1.0, 1000, 1).unwrap();
        let star = inst.starred_arm;
        let x = inst.arms[star].clone();
        let env = inst.into_environment(1).unwrap();
        let mut r = rng(2);
        let n = 200_000;
        let mean = (0..n).map(|_| env.reward(&x, &mut r)).sum::<f64>() / n as f64;
        let want = env.mean_reward(&x);
        let gamma = match env.law() {
            RewardLaw::HeavyBernoulli { gamma } => *gamma,
            _ => unreachable!(),
        };
        let sd = (want / gamma).sqrt();
        assert!((mean - want).abs() < 4.0 * sd / (n as f64).sqrt());
        assert_eq!(env.best_arm(&env.arms_at(0)).0, star);
    }
}
