use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use lowhtr::env::{gen_lower_bound_instance, NoiseModel};
use lowhtr::harness::{
    log_log_slope, pareto_comparison_config, quick_checks, resolve_threads, run_estimate, run_experiment, AlgoSpec,
    BaselineSpec, EnvSpec, EstimateSpec, ExperimentConfig, ExperimentSummary, Format, LotusSpec, OutputSpec,
    SCHEMA_VERSION,
};
use lowhtr::linalg::trace_inner;
use lowhtr::{Error, Result};

#[derive(Parser)]
#[command(name = "lowhtr", version, about = "Low-rank matrix bandits with heavy-tailed rewards")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the Huber estimator on synthetic data and print error against sample size.
    Estimate(EstimateArgs),
    /// Run one algorithm on one environment and write its traces.
    Simulate(SimulateArgs),
    /// Paired comparison of every configured algorithm (defaults to the Pareto comparison).
    Bench(Common),
    /// Emit and validate a hard instance, optionally running an algorithm on it.
    LowerBound(LowerBoundArgs),
    /// Run the quick invariant suite.
    Validate(ValidateArgs),
}

#[derive(Args, Clone, Default)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    replications: Option<usize>,
    #[arg(long)]
    horizon: Option<usize>,
    /// Worker threads; falls back to LOWHTR_THREADS, then all cores.
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long, value_parser = parse_format)]
    format: Option<Format>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    /// Label of the algorithm to run when the config lists several.
    #[arg(long)]
    algo: Option<String>,
}

#[derive(Args)]
struct EstimateArgs {
    #[arg(long, default_value = "student_t")]
    noise: String,
    #[arg(long, value_delimiter = ',', default_value = "500,1000,2000,4000")]
    sizes: Vec<usize>,
    #[arg(long, default_value_t = 1.0)]
    c_tau: f64,
    #[arg(long, default_value_t = 1.0)]
    c_lambda: f64,
    /// Seeds per sample size.
    #[arg(long, default_value_t = 20)]
    replications: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long, value_parser = parse_format)]
    format: Option<Format>,
}

#[derive(Args)]
struct LowerBoundArgs {
    #[arg(long)]
    d: usize,
    #[arg(long)]
    r: usize,
    #[arg(long)]
    delta: f64,
    #[arg(long)]
    horizon: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also run `lotus` (rank-agnostic) or `baseline-subg` on the instance.
    #[arg(long)]
    run: Option<String>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long, value_parser = parse_format)]
    format: Option<Format>,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn parse_format(s: &str) -> std::result::Result<Format, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn apply(cfg: &mut ExperimentConfig, c: &Common) {
    if let Some(s) = c.seed {
        cfg.base_seed = s;
    }
    if let Some(d) = &c.out_dir {
        cfg.output.dir = d.clone();
    }
    if let Some(n) = c.replications {
        cfg.replications = n;
    }
    if let Some(h) = c.horizon {
        cfg.horizon = h;
    }
    if let Some(f) = c.format {
        cfg.output.format = f;
    }
}

fn execute(cfg: &ExperimentConfig, threads: Option<usize>) -> Result<ExperimentSummary> {
    let threads = resolve_threads(threads)?;
    let start = Instant::now();
    let summary = run_experiment(cfg, threads)?;
    eprintln!("wrote {} in {:.1?} with {threads} threads", cfg.output.dir.display(), start.elapsed());
    Ok(summary)
}

fn print_summary(s: &ExperimentSummary) {
    println!("config_hash {}", s.config_hash);
    println!("algo,median_final_regret,replications");
    for a in &s.algorithms {
        println!("{},{:.6},{}", a.label, a.median_final_regret, a.replications.len());
    }
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let path = args.common.config.as_ref().ok_or_else(|| Error::Config("simulate needs --config".into()))?;
    let mut cfg = ExperimentConfig::load(path)?;
    apply(&mut cfg, &args.common);
    match &args.algo {
        Some(label) => {
            cfg.algorithms.retain(|a| &a.label() == label);
            if cfg.algorithms.is_empty() {
                return Err(Error::Config(format!("no algorithm labelled '{label}' in the config")));
            }
        }
        None if cfg.algorithms.len() > 1 => {
            return Err(Error::Config(format!(
                "config lists {} algorithms; pick one with --algo",
                cfg.algorithms.len()
            )));
        }
        None => {}
    }
    print_summary(&execute(&cfg, args.common.threads)?);
    Ok(())
}

fn bench(c: Common) -> Result<()> {
    let mut cfg = match &c.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => pareto_comparison_config(),
    };
    apply(&mut cfg, &c);
    print_summary(&execute(&cfg, c.threads)?);
    Ok(())
}

fn estimate(a: EstimateArgs) -> Result<()> {
    let mut spec = EstimateSpec::new(NoiseModel::preset(&a.noise)?);
    if a.sizes.is_empty() || a.sizes.contains(&0) || a.replications == 0 {
        return Err(Error::Input("sizes and replications must be positive".into()));
    }
    spec.sizes = a.sizes;
    spec.seeds = a.replications;
    spec.base_seed = a.seed;
    spec.c_tau = a.c_tau;
    spec.c_lambda = a.c_lambda;
    let rows = run_estimate(&spec, resolve_threads(a.threads)?)?;
    let xs: Vec<f64> = rows.iter().map(|r| r.n as f64).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.median_error).collect();
    let slope = (rows.len() > 1).then(|| log_log_slope(&xs, &ys));
    match a.format.unwrap_or_default() {
        Format::Csv => {
            println!("n,median_error");
            for r in &rows {
                println!("{},{:.6e}", r.n, r.median_error);
            }
            if let Some(s) = slope {
                println!("# log-log slope {s:.4}");
            }
        }
        Format::Json => {
            let v = serde_json::json!({ "rows": rows, "slope": slope });
            println!("{}", serde_json::to_string_pretty(&v).expect("serializable"));
        }
    }
    Ok(())
}

fn lower_bound(a: LowerBoundArgs) -> Result<()> {
    let inst = gen_lower_bound_instance(a.d, a.r, a.delta, a.horizon, a.seed)?;
    let gd = inst.gamma.powf(a.delta);
    let mut valid = true;
    let arms: Vec<(usize, f64, f64, f64)> = inst
        .arms
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let want = if i == inst.starred_arm { 2.0 * gd } else { gd };
            let got = trace_inner(x, &inst.theta_star);
            valid &= (got - want).abs() <= 1e-12 && x.norm() <= 1.0 + 1e-12;
            (i, got, want, x.norm())
        })
        .collect();
    match a.format.unwrap_or_default() {
        Format::Csv => {
            println!("K={}", inst.k());
            println!("gamma={:.17e}", inst.gamma);
            println!("starred_arm={}", inst.starred_arm);
            println!("arm,inner_product,expected,norm");
            for (i, got, want, n) in &arms {
                println!("{i},{got:.17e},{want:.17e},{n:.17e}");
            }
            println!("valid={valid}");
        }
        Format::Json => {
            let rows: Vec<_> = arms
                .iter()
                .map(|(i, g, w, n)| serde_json::json!({"arm": i, "inner_product": g, "expected": w, "norm": n}))
                .collect();
            let v = serde_json::json!({"K": inst.k(), "gamma": inst.gamma, "starred_arm": inst.starred_arm, "arms": rows, "valid": valid});
            println!("{}", serde_json::to_string_pretty(&v).expect("serializable"));
        }
    }
    if !valid {
        return Err(Error::Numerical { what: "instance failed validation".into(), value: 0.0 });
    }
    if let Some(name) = &a.run {
        let algo = match name.as_str() {
            "lotus" => AlgoSpec::Lotus(LotusSpec::default()),
            "baseline-subg" => AlgoSpec::BaselineSubg(BaselineSpec { r: a.r, ..BaselineSpec::default() }),
            other => return Err(Error::Input(format!("unknown algorithm '{other}', expected lotus or baseline-subg"))),
        };
        let cfg = ExperimentConfig {
            schema_version: SCHEMA_VERSION,
            horizon: a.horizon,
            replications: 1,
            base_seed: a.seed,
            environment: EnvSpec::LowerBound { d: a.d, r: a.r, delta: a.delta },
            algorithms: vec![algo],
            output: OutputSpec {
                dir: a.out_dir.clone().unwrap_or_else(|| PathBuf::from("results/lower-bound")),
                format: a.format.unwrap_or_default(),
            },
        };
        print_summary(&execute(&cfg, a.threads)?);
    }
    Ok(())
}

fn validate(a: ValidateArgs) -> Result<()> {
    let checks = quick_checks(a.seed)?;
    let mut failed = 0;
    for c in &checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
        failed += usize::from(!c.passed);
    }
    if failed > 0 {
        return Err(Error::Numerical { what: format!("{failed} invariant checks failed"), value: failed as f64 });
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Input(_) | Error::Config(_) => 1,
        Error::Numerical { .. } | Error::Io(_) => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let res = match cli.command {
        Command::Estimate(a) => estimate(a),
        Command::Simulate(a) => simulate(a),
        Command::Bench(c) => bench(c),
        Command::LowerBound(a) => lower_bound(a),
        Command::Validate(a) => validate(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
