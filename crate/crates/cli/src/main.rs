use anyhow::{anyhow, Context, Result};
use ccopf::margins::build_uncertainty;
use ccopf::report;
use ccopf::{
    plan_experiment, run_experiment_on, sample_size_cc, sample_size_filtered, sample_size_is,
    sweep_1d, validate_setpoints, DispatchModel, ExperimentConfig, Method, PiMode, ScenarioCount,
};
use clap::{Args, Parser, Subcommand, ValueEnum};
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_SOLVER: u8 = 3;

#[derive(Parser, Debug)]
#[command(
    name = "ccopf",
    version,
    about = "Chance-constrained DC-OPF by scenario approximation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run repeated DC-OPF / SA / SA-IS experiments on a case.
    Run(RunArgs),
    /// Print a sufficient scenario count.
    Nsamples(NsamplesArgs),
    /// Feasibility rate of SA-IS on the one-dimensional benchmark over a grid of b and N.
    Sweep1d(SweepArgs),
    /// Out-of-sample check of a dispatch read from JSON.
    Validate(ValidateArgs),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum PiArg {
    UnionBound,
    MonteCarlo,
}

#[derive(Args, Debug)]
struct RunArgs {
    /// MATPOWER case file.
    #[arg(long)]
    case: PathBuf,
    /// Methods to run; comma-separated or repeated.
    #[arg(long, value_delimiter = ',', default_value = "sa-is", value_parser = parse_method)]
    method: Vec<Method>,
    #[arg(long, default_value_t = 0.05)]
    eta: f64,
    #[arg(long, default_value_t = 0.01)]
    delta: f64,
    /// Scenario count per repetition, or "auto".
    #[arg(long, default_value = "600", value_parser = parse_count)]
    scenarios: ScenarioCount,
    #[arg(long, default_value_t = 0.07)]
    sigma_frac: f64,
    #[arg(long, default_value_t = 50)]
    reps: usize,
    /// Out-of-sample draws per repetition.
    #[arg(long, default_value_t = 1000)]
    n_test: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = PiArg::UnionBound)]
    pi: PiArg,
    /// Nominal draws for the Monte Carlo pi estimate.
    #[arg(long, default_value_t = 100_000)]
    pi_samples: usize,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Full JSON report; printed to stdout when no output file is given.
    #[arg(long)]
    out: Option<PathBuf>,
    /// One CSV row per repetition.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Summary CSV with one row per (case, eta).
    #[arg(long)]
    summary: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct NsamplesArgs {
    #[arg(long)]
    eta: f64,
    #[arg(long, default_value_t = 0.01)]
    delta: f64,
    /// Number of decision variables.
    #[arg(long)]
    d: usize,
    /// Mass of the inner region; selects the filtered bound.
    #[arg(long)]
    pi: Option<f64>,
    /// Density-ratio bound; selects the importance-sampling bound.
    #[arg(long = "M")]
    m: Option<f64>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    a: f64,
    #[arg(long, default_value_t = 0.05)]
    eta: f64,
    /// Offsets b of the tightened set {x <= b}; defaults to 11 points from x* - 1 to x*.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    b: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "1,10,100,1000")]
    scenarios: Vec<usize>,
    #[arg(long, default_value_t = 50)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// CSV output; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ValidateArgs {
    #[arg(long)]
    case: PathBuf,
    /// JSON array of setpoints (MW) or an object with a `setpoints_mw` field.
    #[arg(long)]
    dispatch: PathBuf,
    #[arg(long, default_value_t = 0.07)]
    sigma_frac: f64,
    #[arg(long, default_value_t = 1000)]
    n_test: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn parse_method(s: &str) -> std::result::Result<Method, String> {
    s.parse().map_err(|e: ccopf::Error| e.to_string())
}

fn parse_count(s: &str) -> std::result::Result<ScenarioCount, String> {
    s.parse().map_err(|e: ccopf::Error| e.to_string())
}

/// Bad flag values that clap cannot catch.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.downcast_ref::<UsageError>().is_some() {
            return EXIT_USAGE;
        }
        if let Some(e) = cause.downcast_ref::<ccopf::Error>() {
            return match e {
                ccopf::Error::Parameter(_) => EXIT_USAGE,
                ccopf::Error::Numerical(_) => EXIT_SOLVER,
                _ => EXIT_DATA,
            };
        }
        if cause.downcast_ref::<io::Error>().is_some() {
            return EXIT_DATA;
        }
    }
    EXIT_SOLVER
}

/// `--seed`, unless `CCOPF_SEED` is set.
fn resolve_seed(flag: u64) -> Result<u64> {
    match std::env::var("CCOPF_SEED") {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| UsageError(format!("CCOPF_SEED='{v}' is not an unsigned integer")).into()),
        Err(_) => Ok(flag),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let f = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let seed = resolve_seed(args.seed)?;
    let model = DispatchModel::load(&args.case)
        .with_context(|| format!("loading {}", args.case.display()))?;
    let pi_mode = match args.pi {
        PiArg::UnionBound => PiMode::UnionBound,
        PiArg::MonteCarlo => PiMode::MonteCarlo {
            samples: args.pi_samples,
        },
    };

    let mut reports = Vec::with_capacity(args.method.len());
    let mut all_failed = false;
    for &method in &args.method {
        let config = ExperimentConfig {
            case_path: args.case.clone(),
            eta: args.eta,
            delta: args.delta,
            method,
            scenarios: args.scenarios,
            sigma_frac: args.sigma_frac,
            repetitions: args.reps,
            n_test: args.n_test,
            base_seed: seed,
            pi_mode,
            jobs: args.jobs,
        };
        let plan = plan_experiment(&model, &config)?;
        if config.scenarios == ScenarioCount::Auto {
            eprintln!(
                "{method}: auto scenario count N = {} (d = {})",
                plan.scenarios, plan.d
            );
        }
        let report = run_experiment_on(&model, &config)?;
        eprintln!(
            "{}: {} N={} reps={} mean cost={} mean conf={} failures={}",
            report.case,
            method,
            report.scenarios,
            report.repetitions,
            fmt_opt(report.mean_cost),
            fmt_opt(report.mean_confidence),
            report.failures
        );
        if report.failures > 0 {
            log::warn!(
                "{method}: {} of {} repetitions failed",
                report.failures,
                report.repetitions
            );
        }
        all_failed |= report.failures == report.repetitions;
        reports.push(report);
    }

    match &args.out {
        Some(path) => report::write_json(&reports, create(path)?)?,
        None => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            report::write_json(&reports, &mut lock)?;
            writeln!(lock)?;
        }
    }
    if let Some(path) = &args.csv {
        report::write_records_csv(&reports, create(path)?)?;
    }
    if let Some(path) = &args.summary {
        report::write_summary_csv(&reports, create(path)?)?;
    }
    if all_failed {
        return Err(ccopf::Error::Numerical("every repetition of a method failed".into()).into());
    }
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "n/a".into())
}

fn cmd_nsamples(args: NsamplesArgs) -> Result<()> {
    let n = match (args.pi, args.m) {
        (None, None) => sample_size_cc(args.eta, args.delta, args.d)?,
        (Some(pi), None) => sample_size_filtered(args.eta, args.delta, args.d, pi)?,
        (pi, Some(m)) => sample_size_is(args.eta, args.delta, args.d, pi.unwrap_or(0.0), m)?,
    };
    println!("{n}");
    Ok(())
}

fn cmd_sweep(args: SweepArgs) -> Result<()> {
    let seed = resolve_seed(args.seed)?;
    let b = if args.b.is_empty() {
        let x_star = args.a - ccopf::normal::inverse_sf(args.eta);
        (0..=10).map(|k| x_star - 1.0 + k as f64 / 10.0).collect()
    } else {
        args.b
    };
    let points = sweep_1d(args.a, args.eta, &b, &args.scenarios, args.reps, seed)?;
    match &args.out {
        Some(path) => report::write_sweep_csv(&points, create(path)?)?,
        None => report::write_sweep_csv(&points, io::stdout().lock())?,
    }
    Ok(())
}

fn read_setpoints(path: &Path) -> Result<Vec<f64>> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(ccopf::Error::from)
        .with_context(|| format!("parsing {}", path.display()))?;
    let list = match &value {
        serde_json::Value::Array(_) => &value,
        serde_json::Value::Object(map) => map.get("setpoints_mw").ok_or_else(|| {
            ccopf::Error::Validation("dispatch object has no 'setpoints_mw' field".into())
        })?,
        _ => {
            return Err(
                ccopf::Error::Validation("dispatch must be an array or object".into()).into(),
            )
        }
    };
    serde_json::from_value(list.clone())
        .map_err(|e| anyhow!(ccopf::Error::from(e)))
        .with_context(|| format!("reading setpoints from {}", path.display()))
}

fn cmd_validate(args: ValidateArgs) -> Result<()> {
    let seed = resolve_seed(args.seed)?;
    let model = DispatchModel::load(&args.case)
        .with_context(|| format!("loading {}", args.case.display()))?;
    let setpoints = read_setpoints(&args.dispatch)?;
    let g = build_uncertainty(&model.case, args.sigma_frac)?;
    let c = validate_setpoints(&model, &g, &setpoints, args.n_test, seed)?;
    println!(
        "{}",
        serde_json::json!({
            "case": model.case.name,
            "confidence": c.value,
            "std_error": c.std_error,
            "n_test": args.n_test,
            "seed": seed,
        })
    );
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Nsamples(a) => cmd_nsamples(a),
        Command::Sweep1d(a) => cmd_sweep(a),
        Command::Validate(a) => cmd_validate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
