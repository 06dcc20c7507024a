//! Round bookkeeping shared by every algorithm: pulling arms against an
//! environment, oracle regret, and the per-round trace.

use std::borrow::Cow;

use nalgebra::DMatrix;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{argmax, exploration_sample, Environment, ExploreMode};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Warmup,
    Explore,
    Exploit,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Warmup => "warmup",
            Phase::Explore => "explore",
            Phase::Exploit => "exploit",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "warmup" => Some(Phase::Warmup),
            "explore" => Some(Phase::Explore),
            "exploit" => Some(Phase::Exploit),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    /// 1-based round number.
    pub round: usize,
    pub batch: usize,
    pub phase: Phase,
    /// `None` when the pulled matrix is not a member of the arm set.
    pub arm_index: Option<usize>,
    pub inst_regret: f64,
    pub cum_regret: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RegretTrace {
    pub records: Vec<RoundRecord>,
}

impl RegretTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn final_regret(&self) -> f64 {
        self.records.last().map_or(0.0, |r| r.cum_regret)
    }

    /// Mean instantaneous regret over the rounds matching `pred`.
    pub fn mean_inst_regret(&self, pred: impl Fn(&RoundRecord) -> bool) -> Option<f64> {
        let (s, n) =
            self.records.iter().filter(|r| pred(r)).fold((0.0, 0usize), |(s, n), r| (s + r.inst_regret, n + 1));
        (n > 0).then(|| s / n as f64)
    }
}

/// Per-round regrets `max_a ⟨X_a, Θ*⟩ − ⟨X_chosen, Θ*⟩` for a sequence of
/// `(round, chosen arm index)` pairs.
pub fn compute_oracle_regret(env: &Environment, choices: &[(usize, usize)]) -> Vec<f64> {
    choices
        .iter()
        .map(|&(t, a)| {
            let arms = env.arms_at(t);
            let means = env.means(&arms);
            argmax(&means).1 - means[a]
        })
        .collect()
}

/// A running simulation against one environment: owns the noise and
/// exploration streams and the trace, and refuses pulls once the horizon is
/// reached. Algorithms only see `arms()` and observed rewards.
pub struct Episode<'a> {
    env: &'a Environment,
    horizon: usize,
    noise: ChaCha8Rng,
    pub explore_rng: ChaCha8Rng,
    trace: RegretTrace,
    arms: Cow<'a, [DMatrix<f64>]>,
    best: f64,
}

impl<'a> Episode<'a> {
    pub fn new(env: &'a Environment, horizon: usize) -> Self {
        let streams = env.streams();
        let arms = env.arms_at(0);
        let best = env.best_arm(&arms).1;
        Self {
            env,
            horizon,
            noise: streams.noise,
            explore_rng: streams.explore,
            trace: RegretTrace::default(),
            arms,
            best,
        }
    }

    pub fn env(&self) -> &'a Environment {
        self.env
    }

    /// Pulls made so far.
    pub fn round(&self) -> usize {
        self.trace.len()
    }

    pub fn remaining(&self) -> usize {
        self.horizon - self.round()
    }

    pub fn done(&self) -> bool {
        self.round() >= self.horizon
    }

    /// Arm set of the current round.
    pub fn arms(&self) -> &[DMatrix<f64>] {
        &self.arms
    }

    /// Exploration draw from the current round's arm set (or the ball).
    pub fn explore_draw(&mut self, mode: ExploreMode) -> Result<(Option<usize>, DMatrix<f64>)> {
        exploration_sample(self.env, &self.arms, mode, &mut self.explore_rng)
    }

    /// Pulls `x`, records regret against the current round's best arm and
    /// advances to the next round. Panics if the horizon is exhausted.
    pub fn pull(&mut self, x: &DMatrix<f64>, arm_index: Option<usize>, batch: usize, phase: Phase) -> f64 {
        assert!(!self.done(), "pull past the horizon");
        let y = self.env.reward(x, &mut self.noise);
        let inst = self.best - self.env.mean_reward(x);
        let cum = self.trace.final_regret() + inst;
        let round = self.round() + 1;
        self.trace.records.push(RoundRecord { round, batch, phase, arm_index, inst_regret: inst, cum_regret: cum });
        if self.env.is_contextual() && !self.done() {
            self.arms = self.env.arms_at(round);
            self.best = self.env.best_arm(&self.arms).1;
        }
        y
    }

    pub fn trace(&self) -> &RegretTrace {
        &self.trace
    }

    pub fn into_trace(self) -> RegretTrace {
        self.trace
    }
}
