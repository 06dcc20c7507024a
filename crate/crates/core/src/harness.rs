//! Experiment configuration, replication runner and artifact writer.
//!
//! A run is fully determined by its config: replication `j` of every
//! algorithm uses seed `base_seed + j` for the instance and all RNG streams,
//! and results are merged by replication index, so the worker count never
//! changes an output byte. Wall-clock time is reported on stderr only.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baseline::{run_baseline_subgaussian, BaselineConfig, BaselineRecord};
use crate::env::{
    exploration_sample, gen_lower_bound_instance, gen_scenario1, gen_scenario2, ArmSource, Environment, ExploreMode,
    NoiseModel, RewardLaw,
};
use crate::error::{Error, Result};
use crate::huber::{lamm_solve, schedule_params, EstimatorConstants, HuberConfig, TraceRegression};
use crate::linalg::{nuclear_norm, svd_soft_threshold, trace_inner, SubspaceSplit};
use crate::lotus::{run_lotus, BatchRecord, LotusConfig, LotusMode, SPerpRule};
use crate::lowto::{LowToState, Ridge};
use crate::sim::{Phase, RegretTrace, RoundRecord};

pub const SCHEMA_VERSION: u32 = 1;
pub const BASELINE_LABEL: &str = "baseline-subg";
pub const TRACE_HEADER: &str = "round,batch,phase,arm_index,inst_regret,cum_regret";
pub const AGGREGATE_HEADER: &str = "round,algo,median_cumreg,q25,q75";
/// Environment variable consulted when no thread count is given.
pub const THREADS_ENV: &str = "LOWHTR_THREADS";

fn config_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => config_err(format!("unknown format '{other}', expected csv or json")),
        }
    }
}

/// A preset name (`pareto`, `student_t`, `laplace`, `gaussian`) or a full table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NoiseSpec {
    Preset(String),
    Model(NoiseModel),
}

impl NoiseSpec {
    pub fn resolve(&self) -> Result<NoiseModel> {
        let m = match self {
            NoiseSpec::Preset(name) => NoiseModel::preset(name)?,
            NoiseSpec::Model(m) => *m,
        };
        m.validate()?;
        Ok(m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scenario", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvSpec {
    Scenario1 {
        noise: NoiseSpec,
    },
    Scenario2 {
        noise: NoiseSpec,
    },
    /// Hard instance with Bernoulli payoffs; its horizon is the experiment's.
    LowerBound {
        d: usize,
        r: usize,
        delta: f64,
    },
    /// Row-major `theta` and arm matrices.
    Explicit {
        theta: Vec<Vec<f64>>,
        rank: usize,
        arms: Vec<Vec<Vec<f64>>>,
        noise: NoiseSpec,
    },
}

fn matrix_from_rows(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let d1 = rows.len();
    let d2 = rows.first().map_or(0, Vec::len);
    if d1 == 0 || d2 == 0 || rows.iter().any(|r| r.len() != d2) {
        return config_err(format!("{what} must be a non-empty rectangular array of rows"));
    }
    Ok(DMatrix::from_fn(d1, d2, |i, j| rows[i][j]))
}

impl EnvSpec {
    pub fn build(&self, seed: u64, horizon: usize) -> Result<Environment> {
        match self {
            EnvSpec::Scenario1 { noise } => gen_scenario1(seed, noise.resolve()?),
            EnvSpec::Scenario2 { noise } => gen_scenario2(seed, noise.resolve()?),
            EnvSpec::LowerBound { d, r, delta } => {
                gen_lower_bound_instance(*d, *r, *delta, horizon, seed)?.into_environment(seed)
            }
            EnvSpec::Explicit { theta, rank, arms, noise } => {
                let theta = matrix_from_rows(theta, "theta")?;
                let arms = arms.iter().map(|a| matrix_from_rows(a, "arm")).collect::<Result<Vec<_>>>()?;
                Environment::new(theta, *rank, ArmSource::Fixed(arms), RewardLaw::Additive(noise.resolve()?), seed)
            }
        }
    }

    /// `(δ, c)` the algorithms assume. Bernoulli payoffs of the hard instance
    /// satisfy `E|y|^{1+δ} = μγ^{-δ} ≤ 2`.
    pub fn moment(&self) -> Result<(f64, f64)> {
        match self {
            EnvSpec::Scenario1 { noise } | EnvSpec::Scenario2 { noise } | EnvSpec::Explicit { noise, .. } => {
                let m = noise.resolve()?;
                Ok((m.delta, m.c_bound))
            }
            EnvSpec::LowerBound { delta, .. } => Ok((*delta, 2.0)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeTag {
    #[default]
    RankAgnostic,
    KnownRank,
    Randomized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LotusSpec {
    pub label: Option<String>,
    pub mode: ModeTag,
    /// Required by the known-rank and randomized modes.
    pub r: Option<usize>,
    pub d_rr: Option<f64>,
    /// Defaults to `d1·d2`.
    pub t0: Option<usize>,
    /// Override the environment's declared moment.
    pub delta: Option<f64>,
    pub c_moment: Option<f64>,
    pub eps: f64,
    pub c_tau: f64,
    pub c_lambda: f64,
    pub c1: f64,
    pub lambda0: f64,
    pub c_beta: f64,
    pub explore_scale: f64,
    pub s_perp_scale: f64,
    pub s_perp_rule: Option<SPerpRule>,
    pub explore_mode: ExploreMode,
    pub refresh_every: usize,
    pub refit_every: usize,
}

impl Default for LotusSpec {
    fn default() -> Self {
        let c = LotusConfig::new(LotusMode::RankAgnostic, 1, 1, 1.0, 1.0);
        Self {
            label: None,
            mode: ModeTag::RankAgnostic,
            r: None,
            d_rr: None,
            t0: None,
            delta: None,
            c_moment: None,
            eps: c.eps,
            c_tau: c.estimator.c_tau,
            c_lambda: c.estimator.c_lambda,
            c1: c.estimator.c1,
            lambda0: c.lambda0,
            c_beta: c.c_beta,
            explore_scale: c.explore_scale,
            s_perp_scale: c.s_perp_scale,
            s_perp_rule: None,
            explore_mode: c.explore_mode,
            refresh_every: c.refresh_every,
            refit_every: c.refit_every,
        }
    }
}

impl LotusSpec {
    pub fn label(&self) -> String {
        self.label.clone().unwrap_or_else(|| {
            match self.mode {
                ModeTag::RankAgnostic => "lotus-rank-agnostic",
                ModeTag::KnownRank => "lotus-known-rank",
                ModeTag::Randomized => "lotus-randomized",
            }
            .to_string()
        })
    }

    pub fn config(&self, d1: usize, d2: usize, moment: (f64, f64)) -> Result<LotusConfig> {
        let ranked = || match (self.r, self.d_rr) {
            (Some(r), Some(d_rr)) => Ok((r, d_rr)),
            _ => config_err(format!("{} needs both r and d_rr", self.label())),
        };
        let mode = match self.mode {
            ModeTag::RankAgnostic => LotusMode::RankAgnostic,
            ModeTag::KnownRank => {
                let (r, d_rr) = ranked()?;
                LotusMode::KnownRank { r, d_rr }
            }
            ModeTag::Randomized => {
                let (r, d_rr) = ranked()?;
                LotusMode::Randomized { r, d_rr }
            }
        };
        let mut c = LotusConfig::new(mode, d1, d2, self.delta.unwrap_or(moment.0), self.c_moment.unwrap_or(moment.1));
        if let Some(t0) = self.t0 {
            c.t0 = t0;
        }
        c.eps = self.eps;
        c.estimator.c_tau = self.c_tau;
        c.estimator.c_lambda = self.c_lambda;
        c.estimator.c1 = self.c1;
        c.lambda0 = self.lambda0;
        c.c_beta = self.c_beta;
        c.explore_scale = self.explore_scale;
        c.s_perp_scale = self.s_perp_scale;
        c.s_perp_rule = self.s_perp_rule;
        c.explore_mode = self.explore_mode;
        c.refresh_every = self.refresh_every;
        c.refit_every = self.refit_every;
        c.validate(d1, d2)?;
        Ok(c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineSpec {
    /// Must start with `baseline-subg`.
    pub label: Option<String>,
    pub r: usize,
    pub d_rr: f64,
    pub explore_scale: f64,
    pub sigma_noise: f64,
    pub s_perp_scale: f64,
    pub eps: f64,
    pub lambda0: f64,
    pub c_tau: f64,
    pub c_lambda: f64,
    pub explore_mode: ExploreMode,
    pub refresh_every: usize,
}

impl Default for BaselineSpec {
    fn default() -> Self {
        let c = BaselineConfig::new(2, 4.0, 1, 1);
        Self {
            label: None,
            r: c.r,
            d_rr: c.d_rr,
            explore_scale: c.explore_scale,
            sigma_noise: c.sigma_noise,
            s_perp_scale: c.s_perp_scale,
            eps: c.eps,
            lambda0: c.lambda0,
            c_tau: c.estimator.c_tau,
            c_lambda: c.estimator.c_lambda,
            explore_mode: c.explore_mode,
            refresh_every: c.refresh_every,
        }
    }
}

impl BaselineSpec {
    pub fn label(&self) -> String {
        self.label.clone().unwrap_or_else(|| BASELINE_LABEL.to_string())
    }

    pub fn config(&self, d1: usize, d2: usize) -> BaselineConfig {
        let mut c = BaselineConfig::new(self.r, self.d_rr, d1, d2);
        c.explore_scale = self.explore_scale;
        c.sigma_noise = self.sigma_noise;
        c.s_perp_scale = self.s_perp_scale;
        c.eps = self.eps;
        c.lambda0 = self.lambda0;
        c.estimator.c_tau = self.c_tau;
        c.estimator.c_lambda = self.c_lambda;
        c.explore_mode = self.explore_mode;
        c.refresh_every = self.refresh_every;
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "algo", rename_all = "kebab-case")]
pub enum AlgoSpec {
    Lotus(LotusSpec),
    BaselineSubg(BaselineSpec),
}

impl AlgoSpec {
    pub fn label(&self) -> String {
        match self {
            AlgoSpec::Lotus(s) => s.label(),
            AlgoSpec::BaselineSubg(s) => s.label(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSpec {
    pub dir: PathBuf,
    pub format: Format,
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self { dir: PathBuf::from("results"), format: Format::Csv }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub horizon: usize,
    #[serde(default = "one")]
    pub replications: usize,
    #[serde(default)]
    pub base_seed: u64,
    pub environment: EnvSpec,
    pub algorithms: Vec<AlgoSpec>,
    #[serde(default)]
    pub output: OutputSpec,
}

fn one() -> usize {
    1
}

/// The part of a config that determines results; hashed and echoed.
#[derive(Serialize)]
struct ResultKey<'a> {
    schema_version: u32,
    horizon: usize,
    replications: usize,
    base_seed: u64,
    environment: &'a EnvSpec,
    algorithms: &'a [AlgoSpec],
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string().trim().replace('\n', " ")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return config_err(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        if self.horizon == 0 {
            return config_err("horizon must be >= 1");
        }
        if self.replications == 0 {
            return config_err("replications must be >= 1");
        }
        if self.algorithms.is_empty() {
            return config_err("at least one algorithm is required");
        }
        let mut seen = BTreeSet::new();
        for a in &self.algorithms {
            let label = a.label();
            if label.is_empty() || label.contains(['/', '\\', ',']) {
                return config_err(format!("algorithm label '{label}' must be non-empty without '/', '\\' or ','"));
            }
            if !seen.insert(label.clone()) {
                return config_err(format!("duplicate algorithm label '{label}'"));
            }
            if matches!(a, AlgoSpec::BaselineSubg(_)) && !label.starts_with(BASELINE_LABEL) {
                return config_err(format!("baseline label '{label}' must start with '{BASELINE_LABEL}'"));
            }
        }
        let env = self.environment.build(self.base_seed, self.horizon)?;
        let (d1, d2) = env.shape();
        let moment = self.environment.moment()?;
        for a in &self.algorithms {
            if let AlgoSpec::Lotus(s) = a {
                let c = s.config(d1, d2, moment)?;
                if self.horizon < c.t0 {
                    return config_err(format!("horizon {} is below the warm-up length T0 = {}", self.horizon, c.t0));
                }
            }
        }
        Ok(())
    }

    fn result_key(&self) -> ResultKey<'_> {
        ResultKey {
            schema_version: self.schema_version,
            horizon: self.horizon,
            replications: self.replications,
            base_seed: self.base_seed,
            environment: &self.environment,
            algorithms: &self.algorithms,
        }
    }

    /// SHA-256 over the result-determining fields; output location excluded.
    pub fn config_hash(&self) -> String {
        let bytes = serde_json::to_vec(&self.result_key()).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn labels(&self) -> Vec<String> {
        self.algorithms.iter().map(AlgoSpec::label).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RunDetail {
    Lotus { batches: Vec<BatchRecord> },
    Baseline { record: Option<BaselineRecord> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationResult {
    pub algo: String,
    pub replication: usize,
    pub seed: u64,
    pub trace: RegretTrace,
    pub detail: RunDetail,
}

/// Replication `rep` of algorithm `algo`.
pub fn run_single(cfg: &ExperimentConfig, algo: usize, rep: usize) -> Result<ReplicationResult> {
    let spec = cfg.algorithms.get(algo).ok_or_else(|| Error::Input(format!("algorithm index {algo} out of range")))?;
    let seed = cfg.base_seed.wrapping_add(rep as u64);
    let env = cfg.environment.build(seed, cfg.horizon)?;
    let (d1, d2) = env.shape();
    let (trace, detail) = match spec {
        AlgoSpec::Lotus(s) => {
            let c = s.config(d1, d2, cfg.environment.moment()?)?;
            let out = run_lotus(&env, &c, cfg.horizon)?;
            (out.trace, RunDetail::Lotus { batches: out.batches })
        }
        AlgoSpec::BaselineSubg(s) => {
            let out = run_baseline_subgaussian(&env, &s.config(d1, d2), cfg.horizon)?;
            (out.trace, RunDetail::Baseline { record: out.record })
        }
    };
    Ok(ReplicationResult { algo: spec.label(), replication: rep, seed, trace, detail })
}

/// Worker count: explicit value, else `LOWHTR_THREADS`, else all cores.
pub fn resolve_threads(flag: Option<usize>) -> Result<usize> {
    if let Some(n) = flag {
        return if n == 0 { config_err("--threads must be >= 1") } else { Ok(n) };
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => config_err(format!("{THREADS_ENV} must be a positive integer, got '{v}'")),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

fn with_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("cannot build thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// Every (algorithm, replication) pair, ordered algorithm-major.
pub fn run_replications(cfg: &ExperimentConfig, threads: usize) -> Result<Vec<ReplicationResult>> {
    let jobs: Vec<(usize, usize)> =
        (0..cfg.algorithms.len()).flat_map(|a| (0..cfg.replications).map(move |j| (a, j))).collect();
    with_pool(threads, || jobs.par_iter().map(|&(a, j)| run_single(cfg, a, j)).collect())?
}

/// Quantile of sorted data with linear interpolation between order statistics.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty data");
    let h = (sorted.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    quantile_sorted(&v, 0.5)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub round: usize,
    pub algo: usize,
    pub median_cumreg: f64,
    pub q25: f64,
    pub q75: f64,
}

/// Per-round median and quartiles of cumulative regret for each label.
/// `AggregateRow::algo` indexes into `labels`.
pub fn aggregate(results: &[ReplicationResult], labels: &[String]) -> Vec<AggregateRow> {
    let mut rows = Vec::new();
    for (ai, label) in labels.iter().enumerate() {
        let traces: Vec<&RegretTrace> = results.iter().filter(|r| &r.algo == label).map(|r| &r.trace).collect();
        let len = traces.iter().map(|t| t.len()).min().unwrap_or(0);
        let mut col = Vec::with_capacity(traces.len());
        for t in 0..len {
            col.clear();
            col.extend(traces.iter().map(|tr| tr.records[t].cum_regret));
            col.sort_by(f64::total_cmp);
            rows.push(AggregateRow {
                round: t + 1,
                algo: ai,
                median_cumreg: quantile_sorted(&col, 0.5),
                q25: quantile_sorted(&col, 0.25),
                q75: quantile_sorted(&col, 0.75),
            });
        }
    }
    rows
}

pub fn write_trace_csv<W: Write>(w: &mut W, trace: &RegretTrace) -> std::io::Result<()> {
    writeln!(w, "{TRACE_HEADER}")?;
    for r in &trace.records {
        let arm = r.arm_index.map(|a| a.to_string()).unwrap_or_default();
        writeln!(
            w,
            "{},{},{},{},{:.16e},{:.16e}",
            r.round,
            r.batch,
            r.phase.as_str(),
            arm,
            r.inst_regret,
            r.cum_regret
        )?;
    }
    Ok(())
}

pub fn parse_trace_csv(text: &str) -> Result<RegretTrace> {
    let mut lines = text.lines();
    if lines.next() != Some(TRACE_HEADER) {
        return config_err("trace CSV header mismatch");
    }
    let bad = |n: usize| Error::Config(format!("malformed trace row {n}"));
    let mut records = Vec::new();
    for (n, line) in lines.enumerate() {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 6 {
            return Err(bad(n + 1));
        }
        records.push(RoundRecord {
            round: f[0].parse().map_err(|_| bad(n + 1))?,
            batch: f[1].parse().map_err(|_| bad(n + 1))?,
            phase: Phase::parse(f[2]).ok_or_else(|| bad(n + 1))?,
            arm_index: if f[3].is_empty() { None } else { Some(f[3].parse().map_err(|_| bad(n + 1))?) },
            inst_regret: f[4].parse().map_err(|_| bad(n + 1))?,
            cum_regret: f[5].parse().map_err(|_| bad(n + 1))?,
        });
    }
    Ok(RegretTrace { records })
}

pub fn write_aggregate_csv<W: Write>(w: &mut W, rows: &[AggregateRow], labels: &[String]) -> std::io::Result<()> {
    writeln!(w, "{AGGREGATE_HEADER}")?;
    for r in rows {
        writeln!(w, "{},{},{:.16e},{:.16e},{:.16e}", r.round, labels[r.algo], r.median_cumreg, r.q25, r.q75)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationSummary {
    pub replication: usize,
    pub seed: u64,
    pub final_regret: f64,
    pub detail: RunDetail,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgoSummary {
    pub label: String,
    pub median_final_regret: f64,
    pub replications: Vec<ReplicationSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub schema_version: u32,
    pub crate_version: String,
    pub config_hash: String,
    pub config: serde_json::Value,
    pub algorithms: Vec<AlgoSummary>,
}

pub fn summarize(cfg: &ExperimentConfig, results: &[ReplicationResult]) -> ExperimentSummary {
    let algorithms = cfg
        .labels()
        .into_iter()
        .map(|label| {
            let reps: Vec<ReplicationSummary> = results
                .iter()
                .filter(|r| r.algo == label)
                .map(|r| ReplicationSummary {
                    replication: r.replication,
                    seed: r.seed,
                    final_regret: r.trace.final_regret(),
                    detail: r.detail.clone(),
                })
                .collect();
            let finals: Vec<f64> = reps.iter().map(|r| r.final_regret).collect();
            AlgoSummary { label, median_final_regret: median(&finals), replications: reps }
        })
        .collect();
    ExperimentSummary {
        schema_version: SCHEMA_VERSION,
        crate_version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: cfg.config_hash(),
        config: serde_json::to_value(cfg.result_key()).expect("config serializes"),
        algorithms,
    }
}

/// Fails early when `dir` cannot be created or written.
pub fn check_output_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let probe = dir.join(".write_probe");
    fs::write(&probe, b"")?;
    fs::remove_file(&probe)?;
    Ok(())
}

pub fn trace_path(dir: &Path, label: &str, rep: usize, format: Format) -> PathBuf {
    dir.join("traces").join(label).join(format!("rep_{rep:04}.{}", format.extension()))
}

fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<fs::File>) -> std::io::Result<()>) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut w = BufWriter::new(fs::File::create(path)?);
    f(&mut w)?;
    w.flush()?;
    Ok(())
}

fn json_err(e: serde_json::Error) -> std::io::Error {
    std::io::Error::other(e)
}

/// Writes per-replication traces, the aggregate table and `summary.json`.
pub fn write_artifacts(
    cfg: &ExperimentConfig,
    results: &[ReplicationResult],
    dir: &Path,
    format: Format,
) -> Result<ExperimentSummary> {
    for r in results {
        write_file(&trace_path(dir, &r.algo, r.replication, format), |w| match format {
            Format::Csv => write_trace_csv(w, &r.trace),
            Format::Json => serde_json::to_writer(w, &r.trace.records).map_err(json_err),
        })?;
    }
    let labels = cfg.labels();
    let rows = aggregate(results, &labels);
    write_file(&dir.join(format!("aggregate.{}", format.extension())), |w| match format {
        Format::Csv => write_aggregate_csv(w, &rows, &labels),
        Format::Json => {
            let named: Vec<serde_json::Value> = rows
                .iter()
                .map(|r| {
                    serde_json::json!({
                        "round": r.round,
                        "algo": labels[r.algo],
                        "median_cumreg": r.median_cumreg,
                        "q25": r.q25,
                        "q75": r.q75,
                    })
                })
                .collect();
            serde_json::to_writer(w, &named).map_err(json_err)
        }
    })?;
    let summary = summarize(cfg, results);
    write_file(&dir.join("summary.json"), |w| {
        serde_json::to_writer_pretty(&mut *w, &summary).map_err(json_err)?;
        writeln!(w)
    })?;
    Ok(summary)
}

/// Validates, checks the output location, runs every replication and
/// persists the artifacts under `cfg.output`.
pub fn run_experiment(cfg: &ExperimentConfig, threads: usize) -> Result<ExperimentSummary> {
    cfg.validate()?;
    check_output_dir(&cfg.output.dir)?;
    let results = run_replications(cfg, threads)?;
    write_artifacts(cfg, &results, &cfg.output.dir, cfg.output.format)
}

/// Scenario 1 with Pareto noise, LOTUS (rank-agnostic) against `baseline-subg`,
/// using the tuned constants shipped in `configs/pareto_comparison.toml`.
pub fn pareto_comparison_config() -> ExperimentConfig {
    let lotus = LotusSpec {
        c_tau: 0.1,
        c_lambda: 0.3,
        c1: 0.3,
        c_beta: 3e-4,
        explore_scale: 0.05,
        s_perp_scale: 0.01,
        refresh_every: 10,
        ..LotusSpec::default()
    };
    let baseline =
        BaselineSpec { c_tau: 0.1, c_lambda: 0.3, s_perp_scale: 0.01, refresh_every: 10, ..BaselineSpec::default() };
    ExperimentConfig {
        schema_version: SCHEMA_VERSION,
        horizon: 20000,
        replications: 10,
        base_seed: 0,
        environment: EnvSpec::Scenario1 { noise: NoiseSpec::Preset("pareto".into()) },
        algorithms: vec![AlgoSpec::Lotus(lotus), AlgoSpec::BaselineSubg(baseline)],
        output: OutputSpec { dir: PathBuf::from("results/pareto_comparison"), format: Format::Csv },
    }
}

/// Estimator sweep: `‖Θ̂ − Θ*‖_F` on the scenario-1 parameter from `n`
/// Gaussian-design samples.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateSpec {
    pub noise: NoiseModel,
    pub sizes: Vec<usize>,
    pub seeds: usize,
    pub base_seed: u64,
    pub eps: f64,
    pub c_tau: f64,
    pub c_lambda: f64,
}

impl EstimateSpec {
    pub fn new(noise: NoiseModel) -> Self {
        Self { noise, sizes: vec![500, 1000, 2000, 4000], seeds: 20, base_seed: 0, eps: 0.1, c_tau: 1.0, c_lambda: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateRow {
    pub n: usize,
    pub median_error: f64,
    pub errors: Vec<f64>,
}

pub fn estimation_error(spec: &EstimateSpec, n: usize, seed: u64) -> Result<f64> {
    if n == 0 {
        return Err(Error::Input("sample size must be >= 1".into()));
    }
    let env = gen_scenario1(seed, spec.noise)?;
    let mut streams = env.streams();
    let mut pairs = Vec::with_capacity(n);
    for _ in 0..n {
        let (_, x) = exploration_sample(&env, &[], ExploreMode::Ball, &mut streams.explore)?;
        let y = env.reward(&x, &mut streams.noise);
        pairs.push((x, y));
    }
    let (d1, d2) = env.shape();
    let mut est = EstimatorConstants::for_dims(d1, d2);
    est.c_tau = spec.c_tau;
    est.c_lambda = spec.c_lambda;
    let (tau, lambda) = schedule_params(
        n,
        d1.max(d2),
        spec.noise.delta,
        spec.noise.c_bound,
        spec.eps,
        est.c_tau,
        est.c_lambda,
        est.sigma,
    );
    let data = TraceRegression::from_pairs(pairs.iter().map(|(x, y)| (x, *y)))?;
    let fit = lamm_solve(&data, &HuberConfig::new(tau, lambda), None)?;
    Ok((fit.theta_hat - env.theta_star()).norm())
}

pub fn run_estimate(spec: &EstimateSpec, threads: usize) -> Result<Vec<EstimateRow>> {
    let jobs: Vec<(usize, u64)> =
        spec.sizes.iter().flat_map(|&n| (0..spec.seeds as u64).map(move |s| (n, spec.base_seed + s))).collect();
    let errs: Vec<f64> = with_pool(threads, || {
        jobs.par_iter().map(|&(n, s)| estimation_error(spec, n, s)).collect::<Result<Vec<_>>>()
    })??;
    Ok(spec
        .sizes
        .iter()
        .zip(errs.chunks(spec.seeds.max(1)))
        .map(|(&n, e)| EstimateRow { n, median_error: median(e), errors: e.to_vec() })
        .collect())
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let m = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / m, ly.iter().sum::<f64>() / m);
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, d1: usize, d2: usize) -> DMatrix<f64> {
    DMatrix::from_fn(d1, d2, |_, _| rng.sample::<f64, _>(StandardNormal))
}

fn check_prox(rng: &mut ChaCha8Rng) -> Result<CheckOutcome> {
    let mut violations = 0;
    for _ in 0..20 {
        let (d1, d2) = (rng.random_range(1..=6), rng.random_range(1..=6));
        let theta = gaussian_matrix(rng, d1, d2);
        let k = rng.random_range(0.0..2.0);
        let obj = |z: &DMatrix<f64>| 0.5 * (z - &theta).norm_squared() + k * nuclear_norm(z);
        let z = svd_soft_threshold(&theta, k)?;
        let best = obj(&z);
        for _ in 0..100 {
            let p = gaussian_matrix(rng, d1, d2) * rng.random_range(1e-4..1.0);
            if obj(&(&z + p)) < best - 1e-12 {
                violations += 1;
            }
        }
    }
    Ok(CheckOutcome { name: "prox optimality", passed: violations == 0, detail: format!("{violations} violations") })
}

fn check_lamm_descent(rng: &mut ChaCha8Rng) -> Result<CheckOutcome> {
    let mut violations = 0;
    for _ in 0..5 {
        let theta = gaussian_matrix(rng, 6, 6);
        let pairs: Vec<(DMatrix<f64>, f64)> = (0..80)
            .map(|_| {
                let x = gaussian_matrix(rng, 6, 6) / 6.0;
                let y = trace_inner(&x, &theta) + rng.sample::<f64, _>(StandardNormal);
                (x, y)
            })
            .collect();
        let data = TraceRegression::from_pairs(pairs.iter().map(|(x, y)| (x, *y)))?;
        let fit = lamm_solve(&data, &HuberConfig::new(1.0, 0.05), None)?;
        violations += fit.objective_trace.windows(2).filter(|w| w[1] > w[0] + 1e-10).count();
        let obj = data.loss(&fit.theta_hat, 1.0) + 0.05 * nuclear_norm(&fit.theta_hat);
        if (obj - fit.final_objective).abs() > 1e-9 * obj.abs().max(1.0) {
            violations += 1;
        }
    }
    Ok(CheckOutcome { name: "LAMM descent", passed: violations == 0, detail: format!("{violations} violations") })
}

fn check_rotation(rng: &mut ChaCha8Rng) -> Result<CheckOutcome> {
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let (d1, d2) = (rng.random_range(2..=8), rng.random_range(2..=8));
        let r = rng.random_range(1..=d1.min(d2));
        let split = SubspaceSplit::from_svd(&crate::linalg::full_svd(&gaussian_matrix(rng, d1, d2))?, r)?;
        let x = gaussian_matrix(rng, d1, d2);
        let th = gaussian_matrix(rng, d1, d2);
        let lhs = trace_inner(&x, &th);
        let rhs = split.rotate_and_vectorize(&x)?.dot(&split.rotate_parameter(&th)?);
        worst = worst.max((lhs - rhs).abs() / (x.norm() * th.norm()));
    }
    Ok(CheckOutcome {
        name: "rotation isometry",
        passed: worst <= 1e-10,
        detail: format!("max scaled gap {worst:.3e}"),
    })
}

fn check_ridge_limit(rng: &mut ChaCha8Rng) -> Result<CheckOutcome> {
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let p = rng.random_range(2..=20);
        let rows: Vec<(DVector<f64>, f64)> = (0..2 * p)
            .map(|_| {
                (DVector::from_fn(p, |_, _| rng.sample::<f64, _>(StandardNormal)), rng.sample::<f64, _>(StandardNormal))
            })
            .collect();
        let mut state = LowToState::init(&rows, p, Ridge::uniform(1.0, p))?;
        let got = state.estimate_theta(f64::INFINITY)?;
        let mut m = DMatrix::<f64>::identity(p, p);
        let mut b = DVector::zeros(p);
        for (x, y) in &rows {
            m += x * x.transpose();
            b += x * *y;
        }
        let want =
            m.lu().solve(&b).ok_or_else(|| Error::Numerical { what: "singular ridge system".into(), value: 0.0 })?;
        worst = worst.max((got - want).amax());
    }
    Ok(CheckOutcome { name: "ridge limit", passed: worst <= 1e-8, detail: format!("max gap {worst:.3e}") })
}

fn check_lower_bound() -> Result<CheckOutcome> {
    let mut worst = 0.0f64;
    for (d, r, delta) in [(5, 2, 1.0), (6, 3, 0.5), (10, 2, 1.0)] {
        let inst = gen_lower_bound_instance(d, r, delta, 1000, 0)?;
        let gd = inst.gamma.powf(delta);
        for (a, x) in inst.arms.iter().enumerate() {
            let want = if a == inst.starred_arm { 2.0 * gd } else { gd };
            worst = worst.max((trace_inner(x, &inst.theta_star) - want).abs());
            if x.norm() > 1.0 + 1e-12 {
                worst = f64::INFINITY;
            }
        }
    }
    Ok(CheckOutcome { name: "lower-bound instance", passed: worst <= 1e-12, detail: format!("max gap {worst:.3e}") })
}

fn check_bookkeeping(seed: u64) -> Result<CheckOutcome> {
    let env = gen_scenario1(seed, NoiseModel::pareto())?;
    let mut cfg = LotusConfig::new(LotusMode::RankAgnostic, 10, 10, 0.5, 5.0);
    cfg.explore_scale = 0.05;
    let mut problems = String::new();
    for horizon in [100, 137, 420] {
        let out = run_lotus(&env, &cfg, horizon)?;
        let pulls: usize = out.batches.iter().map(|b| b.explore_pulls + b.exploit_pulls).sum();
        let explore: usize = out.batches.iter().map(|b| b.explore_pulls).sum();
        if pulls + cfg.t0 != out.trace.len() || out.trace.len() != horizon {
            let _ = write!(problems, "pulls {} + T0 != {horizon}; ", pulls);
        }
        if out.buffers.h2_len() != cfg.t0 + explore {
            let _ = write!(problems, "|H2| {} != T0 + {explore}; ", out.buffers.h2_len());
        }
        for b in &out.batches {
            let want = cfg.eps / 2f64.powi(b.index as i32 + 1);
            if (b.eps_i - want).abs() > 1e-15 * want {
                let _ = write!(problems, "eps_{} = {}; ", b.index, b.eps_i);
            }
        }
    }
    let passed = problems.is_empty();
    Ok(CheckOutcome { name: "batch bookkeeping", passed, detail: if passed { "ok".into() } else { problems } })
}

/// Small randomized versions of the core invariants.
pub fn quick_checks(seed: u64) -> Result<Vec<CheckOutcome>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(vec![
        check_prox(&mut rng)?,
        check_lamm_descent(&mut rng)?,
        check_rotation(&mut rng)?,
        check_ridge_limit(&mut rng)?,
        check_lower_bound()?,
        check_bookkeeping(seed)?,
    ])
}
