//! Command-line front end.
//!
//! Every command prints one JSON object per line on stdout. Exit codes:
//! 0 success, 1 validation failure, 2 budget failure, 3 parse failure.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::access::{minimal_sets, ParticipantSet};
use crate::binning::{make_family, BinningFamily};
use crate::eval::{
    run_reliability_trials, secrecy_audit, write_reliability_csv, write_secrecy_csv, EvalError,
    ReliabilityReport, SecrecyEntry,
};
use crate::numeric::trial_seeds;
use crate::protocol::{run_timeline, ProtocolError, TranscriptDocument};
use crate::rates::{achievable_rate, capacity_if_threshold, converse_bound, RateError, StepPlan};
use crate::scenario::{Model, Scenario, ScenarioError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_BUDGET: i32 = 2;
pub const EXIT_PARSE: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "aas-sim", version, about = "Secret sharing under additive access structures")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse and validate a scenario.
    Validate(CommonArgs),
    /// Per-step rate plan and capacity figures.
    Plan(CommonArgs),
    /// Run the protocol and reliability trials.
    Simulate(CommonArgs),
    /// Secrecy and uniformity metrics.
    Audit(CommonArgs),
}

#[derive(Debug, Args, Clone)]
pub struct CommonArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    /// Directory for transcripts, CSV files and the normalized scenario.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overrides both the enumeration and the exact-table budget.
    #[arg(long)]
    pub budget: Option<u64>,
    /// Worker threads; defaults to the rayon default.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Print the normalized scenario and exit.
    #[arg(long)]
    pub dump_normalized: bool,
}

#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    fn new(code: i32, message: impl std::fmt::Display) -> Self {
        Self {
            code,
            message: message.to_string(),
        }
    }
}

impl From<ScenarioError> for Failure {
    fn from(e: ScenarioError) -> Self {
        let code = match e {
            ScenarioError::Parse(_) => EXIT_PARSE,
            ScenarioError::Invalid(_) => EXIT_INVALID,
        };
        Failure::new(code, e)
    }
}

impl From<RateError> for Failure {
    fn from(e: RateError) -> Self {
        Failure::new(EXIT_INVALID, e)
    }
}

impl From<ProtocolError> for Failure {
    fn from(e: ProtocolError) -> Self {
        match e {
            ProtocolError::BudgetExceeded { .. } => Failure::new(EXIT_BUDGET, format!("BudgetExceeded: {e}")),
            other => Failure::new(EXIT_INVALID, other),
        }
    }
}

impl From<EvalError> for Failure {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Protocol(p) => p.into(),
            EvalError::BudgetExceeded { .. } => Failure::new(EXIT_BUDGET, format!("BudgetExceeded: {e}")),
            other => Failure::new(EXIT_INVALID, other),
        }
    }
}

fn io_failure(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure::new(EXIT_INVALID, format!("{}: {e}", path.display()))
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            if e.use_stderr() {
                let _ = write!(stderr, "{e}");
                return EXIT_PARSE;
            }
            let _ = write!(stdout, "{e}");
            return EXIT_OK;
        }
    };
    match execute(&cli, stdout) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            let _ = writeln!(stderr, "error: {}", f.message);
            let _ = writeln!(stdout, "{}", json!({"record": "error", "code": f.code, "message": f.message}));
            f.code
        }
    }
}

fn execute(cli: &Cli, stdout: &mut dyn Write) -> Result<(), Failure> {
    let args = match &cli.command {
        Command::Validate(a) | Command::Plan(a) | Command::Simulate(a) | Command::Audit(a) => a,
    };
    let text = fs::read_to_string(&args.scenario).map_err(|e| Failure::new(EXIT_PARSE, format!("{}: {e}", args.scenario.display())))?;
    let mut scenario = Scenario::from_toml(&text)?;
    if args.dump_normalized {
        write!(stdout, "{}", scenario.normalized()).map_err(|e| Failure::new(EXIT_INVALID, e))?;
        return Ok(());
    }
    if let Some(b) = args.budget {
        scenario.budgets.enumeration = b;
        scenario.budgets.exact = b;
    }
    let model = scenario.build()?;
    if let Some(dir) = &args.out {
        fs::create_dir_all(dir).map_err(|e| io_failure(dir, e))?;
        let path = dir.join("scenario.normalized.toml");
        fs::write(&path, scenario.normalized()).map_err(|e| io_failure(&path, e))?;
    }
    let body = || -> Result<Vec<Value>, Failure> {
        let mut records = Vec::new();
        match &cli.command {
            Command::Validate(_) => cmd_validate(&model, &mut records),
            Command::Plan(_) => cmd_plan(&scenario, &model, &mut records),
            Command::Simulate(_) => cmd_simulate(&scenario, &model, args.out.as_deref(), &mut records),
            Command::Audit(_) => cmd_audit(&scenario, &model, args.out.as_deref(), &mut records),
        }?;
        Ok(records)
    };
    let result = match args.jobs {
        Some(j) => rayon::ThreadPoolBuilder::new()
            .num_threads(j.max(1))
            .build()
            .map_err(|e| Failure::new(EXIT_INVALID, e))?
            .install(body),
        None => body(),
    };
    for r in &result? {
        writeln!(stdout, "{r}").map_err(|e| Failure::new(EXIT_INVALID, e))?;
    }
    Ok(())
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("report types serialize")
}

fn cmd_validate(model: &Model, records: &mut Vec<Value>) -> Result<(), Failure> {
    let steps: Vec<Value> = model
        .timeline
        .steps()
        .iter()
        .enumerate()
        .map(|(i, s)| {
            json!({
                "t": i + 1,
                "authorized": s.authorized().len(),
                "unauthorized": s.unauthorized().len(),
                "minimal_authorized": minimal_sets(s.authorized()),
                "notices": s.notices().iter().map(|n| n.to_string()).collect::<Vec<_>>(),
            })
        })
        .collect();
    records.push(json!({
        "record": "validate",
        "ok": true,
        "L": model.timeline.participants(),
        "alphabet_y": model.source.alphabet_y(),
        "steps": steps,
    }));
    Ok(())
}

fn family_for(scenario: &Scenario, model: &Model, n: usize) -> Result<BinningFamily, Failure> {
    make_family(scenario.seeds.binning, n, model.epsilon, model.source.alphabet_y())
        .map_err(|e| Failure::new(EXIT_INVALID, e))
}

fn plan_record(t: usize, step: &StepPlan, model: &Model) -> Result<Value, Failure> {
    let s = model.timeline.step(t);
    let mut v = json!({
        "record": "plan",
        "t": t,
        "achievable": achievable_rate(&model.source, s)?,
        "converse": converse_bound(&model.source, s)?,
        "capacity_if_threshold": capacity_if_threshold(&model.source, s),
    });
    if let (Value::Object(out), Value::Object(p)) = (&mut v, to_value(step)) {
        out.extend(p);
    }
    Ok(v)
}

fn cmd_plan(scenario: &Scenario, model: &Model, records: &mut Vec<Value>) -> Result<(), Failure> {
    // The counts depend on ε and |𝒴| only, so one block length suffices.
    let family = family_for(scenario, model, scenario.n[0])?;
    let plan = scenario.plan(model, &family)?;
    records.push(json!({"record": "plan_header", "epsilon": plan.epsilon, "b": plan.b}));
    for (i, step) in plan.steps.iter().enumerate() {
        let mut v = plan_record(i + 1, step, model)?;
        v["cumulative_message_rate"] = json!(plan.cumulative_message_rate(i + 1));
        records.push(v);
    }
    Ok(())
}

fn cmd_simulate(
    scenario: &Scenario,
    model: &Model,
    out: Option<&Path>,
    records: &mut Vec<Value>,
) -> Result<(), Failure> {
    let mut reports: Vec<ReliabilityReport> = Vec::new();
    for &n in &scenario.n {
        let family = family_for(scenario, model, n)?;
        let plan = scenario.plan(model, &family)?;
        let sample_seed = scenario.seeds.sampling;
        let run = run_timeline(
            &model.source,
            &model.timeline,
            &plan,
            &family,
            sample_seed,
            scenario.budgets.enumeration,
        )?;
        let doc = TranscriptDocument::new(&family, sample_seed, &run, scenario.reveal_secrets);
        if let Some(dir) = out {
            let path = dir.join(format!("transcript_n{n}.json"));
            let text = serde_json::to_string_pretty(&doc).expect("transcript serializes");
            fs::write(&path, text).map_err(|e| io_failure(&path, e))?;
        }
        records.push(json!({"record": "transcript", "n": n, "transcript": to_value(&doc)}));

        let seeds = trial_seeds(sample_seed, scenario.trials as usize);
        let report = run_reliability_trials(
            &model.source,
            &model.timeline,
            &plan,
            &family,
            &seeds,
            scenario.budgets.enumeration,
        )?;
        for cell in &report.cells {
            let mut v = to_value(cell);
            v["record"] = json!("reliability");
            v["n"] = json!(n);
            records.push(v);
        }
        records.push(json!({
            "record": "reliability_summary",
            "n": n,
            "trials": report.trials,
            "dominance_violations": report.dominance_violations,
        }));
        reports.push(report);
    }
    if let Some(dir) = out {
        let path = dir.join("reliability.csv");
        let file = fs::File::create(&path).map_err(|e| io_failure(&path, e))?;
        write_reliability_csv(file, &reports).map_err(|e| io_failure(&path, e))?;
    }
    Ok(())
}

fn cmd_audit(
    scenario: &Scenario,
    model: &Model,
    out: Option<&Path>,
    records: &mut Vec<Value>,
) -> Result<(), Failure> {
    let witnesses = scenario.witnesses()?;
    let config = scenario.audit_config(scenario.seeds.sampling);
    let mut rows: Vec<(usize, SecrecyEntry)> = Vec::new();
    for &n in &scenario.n {
        let family = family_for(scenario, model, n)?;
        let plan = scenario.plan(model, &family)?;
        for (i, step) in plan.steps.iter().enumerate() {
            let t = i + 1;
            let groups: Vec<ParticipantSet> = if witnesses.is_empty() {
                model.timeline.step(t).unauthorized().iter().copied().collect()
            } else {
                witnesses.clone()
            };
            let entries = groups
                .par_iter()
                .map(|&u| secrecy_audit(&model.source, &family, t, step.k, step.sigma, u, &config))
                .collect::<Result<Vec<_>, _>>()?;
            let worst = entries
                .iter()
                .enumerate()
                .fold(None::<(usize, f64)>, |best, (j, e)| match best {
                    Some((_, tv)) if tv >= e.tv_to_uniform_product => best,
                    _ => Some((j, e.tv_to_uniform_product)),
                })
                .map(|(j, _)| j);
            for (j, e) in entries.iter().enumerate() {
                let mut v = to_value(e);
                v["record"] = json!("secrecy");
                v["n"] = json!(n);
                v["worst"] = json!(Some(j) == worst);
                records.push(v);
            }
            rows.extend(entries.into_iter().map(|e| (n, e)));
        }
    }
    if let Some(dir) = out {
        let path = dir.join("secrecy.csv");
        let file = fs::File::create(&path).map_err(|e| io_failure(&path, e))?;
        write_secrecy_csv(file, &rows).map_err(|e| io_failure(&path, e))?;
    }
    Ok(())
}
