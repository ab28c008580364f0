mod serve;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use serde::Serialize;
use synchron::harness::{self, CaseOptions, CaseStudy, FsmSpec};
use synchron::{Board, DriverId, Outcome, RunReport, StimulusScript, Time, Trace};

#[derive(Parser)]
#[command(
    name = "synchron",
    version,
    about = "Run and analyse synchron case studies on a virtual clock"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a case study and write its trace.
    Run(RunArgs),
    /// Measure the periodicity of a driver's writes in a trace.
    Jitter(JitterArgs),
    /// Check a trace against a state-machine transition table.
    FsmCheck(FsmCheckArgs),
    /// Print the transition table derived for an FSM case study.
    FsmTable {
        /// four_button or complex_fsm
        case: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List the case studies.
    Cases,
}

#[derive(clap::Args)]
struct RunArgs {
    case: String,
    /// Board description (JSON); defaults to the case's own board.
    #[arg(long)]
    board: Option<PathBuf>,
    /// Stimulus script (JSON lines of {"at","driver","data"}).
    #[arg(long)]
    stimulus: Option<PathBuf>,
    /// Stop at this virtual instant (ticks).
    #[arg(long)]
    until: Option<Time>,
    /// Write the trace here (JSON lines).
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long)]
    clock_hz: Option<u64>,
    /// Baseline threshold below which a timed sync is not queued.
    #[arg(long)]
    epsilon: Option<Time>,
    /// Check runtime invariants after every step.
    #[arg(long)]
    audit: bool,
    /// Compute fib(N) before every timed sync (blinky, square_wave_1khz).
    #[arg(long, value_name = "N")]
    fib_load: Option<u32>,
    /// Serve the run to a panel over websocket on this port (0 picks one).
    #[arg(long, value_name = "PORT")]
    serve: Option<u16>,
    /// Virtual ticks per wall-clock tick in serve mode.
    #[arg(long, default_value_t = 1.0, requires = "serve")]
    speed: f64,
}

#[derive(clap::Args)]
struct JitterArgs {
    trace: PathBuf,
    #[arg(long)]
    driver: u32,
    /// Expected period in ticks.
    #[arg(long)]
    period: Time,
    /// Largest accepted deviation from the period.
    #[arg(long, default_value_t = 0)]
    tolerance: Time,
    /// Only edges at or after this instant.
    #[arg(long)]
    from: Option<Time>,
    /// Only edges before this instant.
    #[arg(long)]
    to: Option<Time>,
    /// Count every write rather than level changes.
    #[arg(long)]
    every_write: bool,
}

#[derive(clap::Args)]
struct FsmCheckArgs {
    trace: PathBuf,
    /// Transition table (JSON), as printed by fsm-table.
    #[arg(long, required_unless_present = "case", conflicts_with = "case")]
    spec: Option<PathBuf>,
    /// Use the table derived for this case study instead of a file.
    #[arg(long)]
    case: Option<String>,
}

/// Error kinds mapped to exit codes.
enum Failure {
    /// Bad arguments or input files.
    Usage(anyhow::Error),
    /// The run or check completed and found a problem.
    Check,
    Other(anyhow::Error),
}

impl From<synchron::Error> for Failure {
    fn from(e: synchron::Error) -> Self {
        match e {
            synchron::Error::Usage(_) | synchron::Error::Parse(_) | synchron::Error::Io(_) => Failure::Usage(e.into()),
            other => Failure::Other(other.into()),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        match e.downcast::<synchron::Error>() {
            Ok(e) => e.into(),
            Err(e) => Failure::Other(e),
        }
    }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let res = match cli.command {
        Command::Run(a) => run(a),
        Command::Jitter(a) => jitter(a),
        Command::FsmCheck(a) => fsm_check(a),
        Command::FsmTable { case, out } => fsm_table(&case, out.as_deref()),
        Command::Cases => {
            for c in CaseStudy::ALL {
                println!("{c}");
            }
            Ok(())
        }
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Check) => ExitCode::from(1),
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Other(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn parse_case(name: &str) -> Result<CaseStudy, Failure> {
    Ok(name.parse::<CaseStudy>()?)
}

#[derive(Serialize)]
struct RunSummary<'a> {
    case: &'a str,
    outcome: &'a str,
    end_time: Time,
    steps: u64,
    records: usize,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    blocked: Vec<String>,
    #[serde(skip_serializing_if = "<[String]>::is_empty")]
    violations: &'a [String],
    #[serde(skip_serializing_if = "<[String]>::is_empty")]
    edf_violations: &'a [String],
}

fn case_options(a: &RunArgs) -> Result<CaseOptions, Failure> {
    let board = a.board.as_deref().map(Board::load).transpose()?;
    let stimulus = a.stimulus.as_deref().map(StimulusScript::load).transpose()?;
    Ok(CaseOptions {
        board,
        stimulus,
        until: a.until,
        clock_hz: a.clock_hz,
        epsilon: a.epsilon,
        audit: a.audit,
        fib_load: a.fib_load,
    })
}

fn run(a: RunArgs) -> CmdResult {
    let case = parse_case(&a.case)?;
    let opts = case_options(&a)?;
    let report = match a.serve {
        Some(port) => {
            if !(a.speed > 0.0 && a.speed.is_finite()) {
                return Err(Failure::Usage(anyhow::anyhow!("--speed must be positive")));
            }
            serve::serve(case, &opts, port, a.speed)?
        }
        None => harness::run_case_study(case, &opts)?,
    };
    if let Some(path) = &a.trace {
        report
            .trace
            .save(path)
            .with_context(|| format!("writing trace to {}", path.display()))?;
    }
    summarise(case, &report)
}

fn summarise(case: CaseStudy, r: &RunReport) -> CmdResult {
    let blocked = match &r.outcome {
        Outcome::Deadlock(b) => b.iter().map(ToString::to_string).collect(),
        _ => Vec::new(),
    };
    let summary = RunSummary {
        case: case.name(),
        outcome: r.outcome.name(),
        end_time: r.end_time,
        steps: r.steps,
        records: r.trace.len(),
        blocked,
        violations: &r.violations,
        edf_violations: &r.edf_violations,
    };
    println!("{}", serde_json::to_string(&summary).map_err(anyhow::Error::from)?);
    if matches!(r.outcome, Outcome::Deadlock(_)) || !r.violations.is_empty() {
        return Err(Failure::Check);
    }
    Ok(())
}

fn jitter(a: JitterArgs) -> CmdResult {
    let trace = Trace::load(&a.trace)?;
    let driver = DriverId(a.driver);
    let times = if a.every_write {
        harness::write_times(&trace, driver)
    } else {
        harness::edges(&trace, driver)
    };
    let from = a.from.unwrap_or(0);
    let to = a.to.unwrap_or(Time::MAX);
    let times: Vec<Time> = times.into_iter().filter(|t| *t >= from && *t < to).collect();
    let report = harness::jitter::jitter_of_edges(&times, a.period)?;
    println!("{}", serde_json::to_string(&report).map_err(anyhow::Error::from)?);
    if report.max_abs_deviation > a.tolerance {
        return Err(Failure::Check);
    }
    Ok(())
}

fn fsm_spec_for(case: CaseStudy) -> Result<FsmSpec, Failure> {
    match case {
        CaseStudy::FourButton => Ok(harness::four_button_table()),
        CaseStudy::ComplexFsm => Ok(harness::complex_fsm_table()),
        other => Err(Failure::Usage(anyhow::anyhow!("{other} has no state-machine table"))),
    }
}

fn fsm_check(a: FsmCheckArgs) -> CmdResult {
    let trace = Trace::load(&a.trace)?;
    let spec = match (&a.spec, &a.case) {
        (Some(path), _) => FsmSpec::load(path)?,
        (None, Some(case)) => fsm_spec_for(parse_case(case)?)?,
        (None, None) => unreachable!("clap requires one of --spec and --case"),
    };
    let report = harness::fsm_conformance(&trace, &spec);
    println!("{}", serde_json::to_string(&report).map_err(anyhow::Error::from)?);
    if !report.passed() {
        return Err(Failure::Check);
    }
    Ok(())
}

fn fsm_table(case: &str, out: Option<&Path>) -> CmdResult {
    let spec = fsm_spec_for(parse_case(case)?)?;
    match out {
        Some(path) => std::fs::write(path, spec.to_json()).with_context(|| format!("writing {}", path.display()))?,
        None => println!("{}", spec.to_json()),
    }
    Ok(())
}
