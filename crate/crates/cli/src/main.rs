//! `seqpred` command line.
//!
//! Exit codes: 0 when every check passes, 2 when a check fails, 1 for usage
//! and configuration errors.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde_json::json;

use seqpred::analysis::{check_halanay_envelope, halanay_rate, HalanayParams};
use seqpred::observer::verify_observer_lipschitz;
use seqpred::scenarios::{builtin, builtin_scenarios, run_scenario, Scenario};
use seqpred::systems::verify_lipschitz;

mod trace_io;

const SCHEMA: u32 = 1;

#[derive(Parser)]
#[command(name = "seqpred", version, about = "Sequential predictors for delayed nonlinear plants")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write its trace and report
    Simulate(SimulateArgs),
    /// Smallest admissible chain length
    ChainLength(ChainLengthArgs),
    /// Halanay decay rate, optionally checked against a sampled series
    Halanay(HalanayArgs),
    /// List the built-in scenarios
    List,
    /// Lipschitz sampling plus the scenario checks, as JSON
    Verify(VerifyArgs),
}

#[derive(Args)]
struct ScenarioArgs {
    /// Built-in name or path to a TOML file
    #[arg(long)]
    scenario: Option<String>,
    /// `key.path=value`, applied in order
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    t_end: Option<f64>,
    #[arg(long)]
    step: Option<f64>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Run every built-in scenario
    #[arg(long, conflicts_with = "scenario")]
    all: bool,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct ChainLengthArgs {
    #[arg(long)]
    lipschitz: f64,
    #[arg(long)]
    epsilon: f64,
    /// Total delay `d` (or `d + τ`)
    #[arg(long)]
    delay: f64,
    /// Use `L + L·L_h` as the effective constant
    #[arg(long, requires = "lipschitz_h")]
    output_feedback: bool,
    #[arg(long)]
    lipschitz_h: Option<f64>,
}

#[derive(Args)]
struct HalanayArgs {
    #[arg(long)]
    a: f64,
    #[arg(long)]
    b: f64,
    #[arg(long)]
    delta: f64,
    /// Two-column `t,w` series to check against the envelope
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long, default_value_t = 0.0, requires = "csv")]
    t0: f64,
}

#[derive(Args)]
struct VerifyArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[arg(long, default_value_t = 10_000)]
    samples: usize,
    #[arg(long, default_value_t = 10.0)]
    radius: f64,
}

enum Outcome {
    Pass,
    Fail,
}

impl Outcome {
    fn from_bool(passed: bool) -> Self {
        if passed {
            Outcome::Pass
        } else {
            Outcome::Fail
        }
    }
}

fn load(args: &ScenarioArgs) -> Result<Scenario> {
    let Some(spec) = &args.scenario else {
        bail!("--scenario is required");
    };
    let path = Path::new(spec);
    let base = if path.is_file() {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {spec}"))?;
        Scenario::from_toml(&text)?
    } else {
        builtin(spec)?
    };
    let mut overrides = args.overrides.clone();
    if let Some(t) = args.t_end {
        overrides.push(format!("integrator.t_end={t:?}"));
    }
    if let Some(h) = args.step {
        overrides.push(format!("integrator.step={h:?}"));
    }
    Ok(base.with_overrides(&overrides)?)
}

/// Runs one scenario and writes `<name>.trace.csv` and `<name>.report.json`.
fn simulate_one(s: &Scenario, out: &Path) -> Result<bool> {
    s.validate()?;
    let outcome = run_scenario(s)?;
    let trace_path = out.join(format!("{}.trace.csv", s.name));
    let report_path = out.join(format!("{}.report.json", s.name));
    trace_io::write_trace(&trace_path, &outcome.trace)?;
    let report = json!({
        "schema": SCHEMA,
        "scenario": s,
        "rows": outcome.trace.len(),
        "report": outcome.report,
    });
    std::fs::write(&report_path, serde_json::to_string_pretty(&report)? + "\n")
        .with_context(|| format!("writing {}", report_path.display()))?;
    let passed = outcome.report.passed;
    println!(
        "{}: {} -> {}",
        s.name,
        if passed { "PASS" } else { "FAIL" },
        trace_path.display()
    );
    Ok(passed)
}

fn simulate(args: SimulateArgs) -> Result<Outcome> {
    std::fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    if !args.all {
        let s = load(&args.scenario)?;
        return simulate_one(&s, &args.out).map(Outcome::from_bool);
    }
    let overrides = ScenarioArgs {
        scenario: None,
        ..args.scenario
    };
    let results: Vec<Result<bool>> = builtin_scenarios()
        .into_par_iter()
        .map(|s| {
            let s = load(&ScenarioArgs {
                scenario: Some(s.name.clone()),
                overrides: overrides.overrides.clone(),
                t_end: overrides.t_end,
                step: overrides.step,
            })?;
            simulate_one(&s, &args.out)
        })
        .collect();
    let mut passed = true;
    for r in results {
        passed &= r?;
    }
    Ok(Outcome::from_bool(passed))
}

fn chain_length(args: ChainLengthArgs) -> Result<Outcome> {
    let lipschitz = if args.output_feedback {
        let lh = args.lipschitz_h.unwrap_or_default();
        args.lipschitz + args.lipschitz * lh
    } else {
        args.lipschitz
    };
    let m = seqpred::min_chain_length(lipschitz, args.epsilon, args.delay)?;
    println!("{m}");
    Ok(Outcome::Pass)
}

fn halanay(args: HalanayArgs) -> Result<Outcome> {
    let params = HalanayParams::new(args.a, args.b, args.delta)?;
    let lambda = halanay_rate(&params)?;
    let Some(csv) = args.csv else {
        println!("{lambda}");
        return Ok(Outcome::Pass);
    };
    let (times, values) = trace_io::read_series(&csv)?;
    let report = check_halanay_envelope(&times, &values, &params, args.t0)?;
    let holds = report.holds;
    let out = json!({
        "schema": SCHEMA,
        "params": params,
        "lambda": lambda,
        "report": report,
    });
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(Outcome::from_bool(holds))
}

fn list() -> Result<Outcome> {
    for s in builtin_scenarios() {
        println!("{:<22} {}", s.name, s.description);
    }
    Ok(Outcome::Pass)
}

fn seed() -> Result<u64> {
    match std::env::var("RP_SEED") {
        Ok(v) => v.trim().parse().with_context(|| format!("RP_SEED must be an integer, got `{v}`")),
        Err(_) => Ok(0),
    }
}

fn verify(args: VerifyArgs) -> Result<Outcome> {
    let s = load(&args.scenario)?;
    let seed = seed()?;
    s.validate()?;
    let built = s.build_plant()?;
    let lipschitz = verify_lipschitz(&built.plant, args.samples, args.radius, seed);
    // the declared observer constant is a design value, so its check is only reported
    let observer = built
        .observer
        .as_ref()
        .map(|o| verify_observer_lipschitz(o, args.samples, args.radius, seed));
    let outcome = run_scenario(&s)?;
    let passed = lipschitz.passed && outcome.report.passed;
    let out = json!({
        "schema": SCHEMA,
        "scenario": s.name,
        "seed": seed,
        "lipschitz": lipschitz,
        "observer_lipschitz": observer.map(|o| json!({"informational": true, "report": o})),
        "checks": outcome.report,
        "passed": passed,
    });
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(Outcome::from_bool(passed))
}

/// Error chain joined by `: `, skipping causes already spelled out by
/// their parent.
fn describe(e: &anyhow::Error) -> String {
    let mut msg = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if msg.contains(&text) {
            continue;
        }
        if !msg.is_empty() {
            msg.push_str(": ");
        }
        msg.push_str(&text);
    }
    msg
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return if usage { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::ChainLength(a) => chain_length(a),
        Command::Halanay(a) => halanay(a),
        Command::List => list(),
        Command::Verify(a) => verify(a),
    };
    match result {
        Ok(Outcome::Pass) => ExitCode::SUCCESS,
        Ok(Outcome::Fail) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(1)
        }
    }
}
