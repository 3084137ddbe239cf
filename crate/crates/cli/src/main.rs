use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use clockforge::verify::RateMetric;
use clockforge_cli::reports::{self, GarpReport, LoadedTrace, RateOptions};
use clockforge_cli::trace_io::{read_json, write_atomic};
use clockforge_cli::valuations::{load_valuations, write_valuations};
use clockforge_cli::{load_config, run_experiment, run_single, RunOptions};
use log::warn;
use serde::Serialize;

/// Exit status of a check that ran but found a violation.
const CHECK_FAILED: u8 = 2;

#[derive(Parser)]
#[command(name = "clockforge", version, about = "Subgradient clock auction simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every cell of an experiment config.
    Run(RunArgs),
    /// Certificates and bounds for stored traces.
    #[command(subcommand)]
    Verify(VerifyCommand),
    /// Revealed-preference checks on stored traces.
    #[command(subcommand)]
    Garp(GarpCommand),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Sweep directory, or a `.csv` file for a single-cell config.
    /// Defaults to the config's `output.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write full JSON traces. With a `.csv` output, an optional path
    /// for the JSON file.
    #[arg(long, num_args = 0..=1)]
    full_json: Option<Option<PathBuf>>,
    /// Run this seed only.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: logical cores).
    #[arg(long)]
    workers: Option<usize>,
    /// Keep finished cells of an earlier run and run only the rest.
    #[arg(long)]
    resume: bool,
}

#[derive(Subcommand)]
enum VerifyCommand {
    /// Primal value, dual certificate and gap of one run.
    Duality {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        valuations: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Empirical convergence across runs against the rate envelope.
    Rates(RatesArgs),
    /// Magnitude, representer and regret bounds of one run.
    Bounds {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        valuations: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricArg {
    ObjectiveGap,
    PriceDistance,
}

#[derive(Args)]
struct RatesArgs {
    /// Full JSON traces, one per run.
    #[arg(long, required = true, num_args = 1..)]
    trace: Vec<PathBuf>,
    #[arg(long)]
    valuations: PathBuf,
    /// Trace whose averaged iterate serves as the reference optimum.
    #[arg(long)]
    reference: Option<PathBuf>,
    /// Length of the reference run when no reference trace is given
    /// (default: 20 times the longest trace).
    #[arg(long)]
    reference_rounds: Option<usize>,
    #[arg(long, value_enum, default_value = "objective-gap")]
    metric: MetricArg,
    /// Comma-separated rounds (default: powers of two from 16).
    #[arg(long, value_delimiter = ',')]
    checkpoints: Option<Vec<usize>>,
    #[arg(long, default_value_t = 2000)]
    samples: usize,
    #[arg(long, default_value_t = 1.0)]
    safety: f64,
    /// Report path; the per-checkpoint series goes to the same path with a
    /// `.csv` extension.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum GarpCommand {
    /// Report consistency or the first violating cycle.
    Check {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a valuation under which every logged bid is a best response.
    Recover {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn emit<T: Serialize>(value: &T, out: Option<&Path>) -> anyhow::Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    match out {
        Some(path) => write_atomic(path, &bytes),
        None => {
            print!("{}", String::from_utf8(bytes)?);
            Ok(())
        }
    }
}

fn load_trace(path: &Path) -> anyhow::Result<LoadedTrace> {
    LoadedTrace::new(read_json(path)?).with_context(|| format!("invalid trace {}", path.display()))
}

fn run(args: RunArgs) -> anyhow::Result<()> {
    let mut cfg = load_config(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seeds = vec![seed];
    }
    let out = match args.out.or_else(|| cfg.output.dir.clone()) {
        Some(o) => o,
        None => bail!("no output location: pass --out or set output.dir"),
    };
    if out.extension().is_some_and(|e| e == "csv") {
        if args.resume {
            warn!("--resume has no effect for a single .csv output");
        }
        let json = match args.full_json {
            Some(Some(p)) => Some(p),
            Some(None) => Some(out.with_extension("json")),
            None => None,
        };
        let summary = run_single(&cfg, &out, json.as_deref())?;
        return emit(&summary, None);
    }
    if matches!(args.full_json, Some(Some(_))) {
        bail!("--full-json takes no path when --out is a directory");
    }
    let opts = RunOptions {
        workers: args.workers,
        resume: args.resume,
        full_json: args.full_json.is_some() || cfg.output.full_json,
    };
    let report = run_experiment(&cfg, &out, &opts)?;
    eprintln!(
        "{} cells: {} run, {} reused; summary in {}",
        report.summary.cells.len(),
        report.ran.len(),
        report.reused.len(),
        out.join("summary.json").display()
    );
    Ok(())
}

fn verify(cmd: VerifyCommand) -> anyhow::Result<()> {
    match cmd {
        VerifyCommand::Duality { trace, valuations, out } => {
            let t = load_trace(&trace)?;
            let v = load_valuations(&valuations, t.file.agents, t.file.items)?;
            emit(&reports::duality_report(&t, &v)?, out.as_deref())
        }
        VerifyCommand::Bounds { trace, valuations, out } => {
            let t = load_trace(&trace)?;
            let v = valuations.map(|p| load_valuations(&p, t.file.agents, t.file.items)).transpose()?;
            emit(&reports::bounds_report(&t, v.as_ref())?, out.as_deref())
        }
        VerifyCommand::Rates(a) => {
            let traces = a.trace.iter().map(|p| load_trace(p)).collect::<anyhow::Result<Vec<_>>>()?;
            let first = &traces[0].file;
            let v = load_valuations(&a.valuations, first.agents, first.items)?;
            let reference = a.reference.as_deref().map(|p| load_trace(p).map(|t| t.result.averaged_w)).transpose()?;
            let opts = RateOptions {
                metric: match a.metric {
                    MetricArg::ObjectiveGap => RateMetric::ObjectiveGap,
                    MetricArg::PriceDistance => RateMetric::PriceDistance,
                },
                checkpoints: a.checkpoints,
                samples: a.samples,
                reference_rounds: a.reference_rounds,
                safety: a.safety,
            };
            let report = reports::rates_report(&traces, &v, reference, &opts)?;
            emit(&report, Some(&a.out))?;
            write_atomic(&a.out.with_extension("csv"), &reports::rate_csv(&report)?)
        }
    }
}

fn garp(cmd: GarpCommand) -> anyhow::Result<ExitCode> {
    match cmd {
        GarpCommand::Check { trace, out } => {
            let report = reports::garp_report(&read_json(&trace)?)?;
            println!("{}", report.render());
            if let Some(path) = out {
                emit(&report, Some(&path))?;
            }
            Ok(match report {
                GarpReport::Consistent { .. } => ExitCode::SUCCESS,
                GarpReport::Violation { .. } => ExitCode::from(CHECK_FAILED),
            })
        }
        GarpCommand::Recover { trace, out } => {
            let (fm, v) = reports::garp_recover(&read_json(&trace)?)?;
            write_valuations(&out, &v, fm.bundles())?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CLOCKFORGE_LOG", "warn")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(args) => run(args).map(|_| ExitCode::SUCCESS),
        Command::Verify(cmd) => verify(cmd).map(|_| ExitCode::SUCCESS),
        Command::Garp(cmd) => garp(cmd),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
