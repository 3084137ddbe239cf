//! Sweeps over `(scheme, rounds, seed)` cells on a bounded worker pool.
//! Every cell writes its own files; the summary is written once at the
//! end.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clockforge::auction::{self, AuctionConfig, AuctionResult, StepRule};
use clockforge::bidders::{BidderModel, GarpConstrained, Oscillator, Stochastic, Truthful};
use clockforge::{market, vecops, verify, FeatureMap, ValuationProfile};
use log::{debug, info};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{BidderSpec, ExperimentConfig, ModelKind, SchemeSpec};
use crate::trace_io::{csv_bytes, json_bytes, write_atomic, TraceFile};

pub const SUMMARY_FORMAT: &str = "clockforge-summary v1";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cell {
    pub scheme_index: usize,
    pub scheme: SchemeSpec,
    pub rounds: usize,
    pub seed: u64,
}

impl Cell {
    pub fn id(&self) -> String {
        format!("{:02}-{}-T{}-seed{}", self.scheme_index, self.scheme.label(), self.rounds, self.seed)
    }
}

/// Cells in scheme, then round count, then seed order.
pub fn cells(cfg: &ExperimentConfig) -> Vec<Cell> {
    let mut out = Vec::new();
    for (scheme_index, &scheme) in cfg.schemes.iter().enumerate() {
        for &rounds in &cfg.rounds {
            for &seed in &cfg.seeds {
                out.push(Cell { scheme_index, scheme, rounds, seed });
            }
        }
    }
    out
}

/// Instantiates a bidder population. The GARP model wraps a stochastic
/// population when noise is given and a truthful one otherwise.
pub fn build_bidder(
    spec: &BidderSpec,
    valuations: Option<&ValuationProfile>,
    fm: &FeatureMap,
    step: &StepRule,
    seed: u64,
) -> anyhow::Result<BidderModel> {
    let values = || valuations.cloned().context("this bidder model needs valuations");
    let plain = |with_noise: bool| -> anyhow::Result<BidderModel> {
        Ok(match (with_noise, spec.noise) {
            (true, Some(noise)) => BidderModel::Stochastic(Stochastic::new(values()?, fm.bundles(), noise, seed)?),
            (true, None) => bail!("the stochastic model needs a noise specification"),
            (false, _) => BidderModel::Truthful(Truthful::new(values()?, fm.bundles())),
        })
    };
    Ok(match spec.model {
        ModelKind::Truthful => plain(false)?,
        ModelKind::Stochastic => plain(true)?,
        ModelKind::Oscillator => BidderModel::Oscillator(Oscillator::new(fm.agents(), fm.items(), step.clone())?),
        ModelKind::Garp => {
            let inner = plain(spec.noise.is_some())?;
            BidderModel::Garp(Box::new(GarpConstrained::new(inner, fm.agents(), fm.items(), fm.bundles())))
        }
    })
}

/// Per-cell record, stored next to the trace and collected into the
/// summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellOutcome {
    pub id: String,
    pub scheme: SchemeSpec,
    pub rounds: usize,
    pub seed: u64,
    pub trace: String,
    pub played: usize,
    pub cleared: bool,
    pub termination_round: Option<usize>,
    pub radius: f64,
    pub lambda: f64,
    /// Primal value at the averaged iterate minus the best dual value,
    /// both under the mean valuations; `None` without valuations or
    /// without a finite dual certificate.
    pub final_gap: Option<f64>,
    pub averaged_objective: Option<f64>,
    pub averaged_w_norm: f64,
    pub final_w_norm: f64,
    /// Bids replaced by the GARP rule.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub repairs: Option<usize>,
}

pub struct CellRun {
    pub fm: FeatureMap,
    pub auction: AuctionConfig,
    pub result: AuctionResult,
    pub outcome: CellOutcome,
}

fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

pub fn run_cell(cfg: &ExperimentConfig, cell: &Cell, trace_name: &str) -> anyhow::Result<CellRun> {
    let fm = cfg.feature_map(&cell.scheme)?;
    let auction = cfg.auction_config(&fm, cell.rounds, cell.seed);
    let mut bidder = build_bidder(&cfg.bidder, cfg.valuations.as_ref(), &fm, &auction.step, cell.seed)?;
    let result = auction::run_auction(&fm, &auction, &mut bidder)?;
    let (final_gap, averaged_objective) = match &cfg.valuations {
        Some(v) => (
            finite(verify::duality_gap(&fm, v, auction.lambda, &result)?),
            Some(market::objective(&fm, &result.averaged_w, v, auction.lambda)?),
        ),
        None => (None, None),
    };
    let repairs = match &bidder {
        BidderModel::Garp(g) => Some(g.repairs()),
        _ => None,
    };
    let outcome = CellOutcome {
        id: cell.id(),
        scheme: cell.scheme,
        rounds: cell.rounds,
        seed: cell.seed,
        trace: trace_name.to_owned(),
        played: result.rounds(),
        cleared: result.cleared,
        termination_round: result.termination_round,
        radius: auction.radius,
        lambda: auction.lambda,
        final_gap,
        averaged_objective,
        averaged_w_norm: vecops::norm2(&result.averaged_w),
        final_w_norm: vecops::norm2(&result.final_w),
        repairs,
    };
    Ok(CellRun { fm, auction, result, outcome })
}

impl CellRun {
    pub fn trace_file(&self, cfg: &ExperimentConfig) -> TraceFile {
        TraceFile::new(
            &self.fm,
            self.outcome.scheme,
            &self.auction,
            cfg.value_scale,
            Some(&cfg.bidder),
            &self.result,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapStats {
    pub count: usize,
    pub min: f64,
    pub median: f64,
    pub mean: f64,
    pub max: f64,
}

impl GapStats {
    pub fn of(values: &[f64]) -> Option<GapStats> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        let median = if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) };
        Some(GapStats { count: n, min: v[0], median, mean: v.iter().sum::<f64>() / n as f64, max: v[n - 1] })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub format: String,
    pub config: String,
    pub cells: Vec<CellOutcome>,
    pub final_gap: Option<GapStats>,
}

impl Summary {
    fn new(cfg: &ExperimentConfig, cells: Vec<CellOutcome>) -> Self {
        let gaps: Vec<f64> = cells.iter().filter_map(|c| c.final_gap).collect();
        Summary {
            format: SUMMARY_FORMAT.into(),
            config: cfg.path.display().to_string(),
            final_gap: GapStats::of(&gaps),
            cells,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Pool width; `None` uses every logical core.
    pub workers: Option<usize>,
    /// Skip cells whose files are already complete.
    pub resume: bool,
    /// Also write full JSON traces.
    pub full_json: bool,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub summary: Summary,
    pub ran: Vec<String>,
    pub reused: Vec<String>,
}

/// Output layout under a sweep directory.
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: &Path) -> Self {
        Layout { root: root.to_owned() }
    }

    pub fn traces(&self) -> PathBuf {
        self.root.join("traces")
    }

    pub fn cells(&self) -> PathBuf {
        self.root.join("cells")
    }

    pub fn csv(&self, id: &str) -> PathBuf {
        self.traces().join(format!("{id}.csv"))
    }

    pub fn json(&self, id: &str) -> PathBuf {
        self.traces().join(format!("{id}.json"))
    }

    pub fn record(&self, id: &str) -> PathBuf {
        self.cells().join(format!("{id}.json"))
    }

    pub fn summary(&self) -> PathBuf {
        self.root.join("summary.json")
    }

    /// The stored record of a finished cell; the record is written last,
    /// after the trace files.
    fn finished(&self, id: &str, full_json: bool) -> Option<CellOutcome> {
        if !self.csv(id).is_file() || (full_json && !self.json(id).is_file()) {
            return None;
        }
        let text = fs::read_to_string(self.record(id)).ok()?;
        serde_json::from_str(&text).ok()
    }
}

enum CellStatus {
    Ran(CellOutcome),
    Reused(CellOutcome),
}

fn pool(workers: Option<usize>) -> anyhow::Result<rayon::ThreadPool> {
    if workers == Some(0) {
        bail!("--workers must be at least 1");
    }
    Ok(rayon::ThreadPoolBuilder::new().num_threads(workers.unwrap_or(0)).build()?)
}

/// Runs every cell into `dir` and writes `dir/summary.json`.
pub fn run_experiment(cfg: &ExperimentConfig, dir: &Path, opts: &RunOptions) -> anyhow::Result<RunReport> {
    let layout = Layout::new(dir);
    for d in [layout.traces(), layout.cells()] {
        fs::create_dir_all(&d).with_context(|| format!("cannot create {}", d.display()))?;
    }
    let cells = cells(cfg);
    let statuses: Vec<anyhow::Result<CellStatus>> = pool(opts.workers)?.install(|| {
        cells
            .par_iter()
            .map(|cell| {
                let id = cell.id();
                if opts.resume {
                    if let Some(done) = layout.finished(&id, opts.full_json) {
                        debug!("cell {id}: reusing stored result");
                        return Ok(CellStatus::Reused(done));
                    }
                }
                let trace_name = format!("traces/{id}.csv");
                let run = run_cell(cfg, cell, &trace_name).with_context(|| format!("cell {id}"))?;
                write_atomic(&layout.csv(&id), &csv_bytes(&run.result, run.auction.radius, run.auction.lambda)?)?;
                if opts.full_json {
                    write_atomic(&layout.json(&id), &json_bytes(&run.trace_file(cfg))?)?;
                }
                let mut record = serde_json::to_vec_pretty(&run.outcome)?;
                record.push(b'\n');
                write_atomic(&layout.record(&id), &record)?;
                info!("cell {id}: {} rounds, cleared = {}", run.outcome.played, run.outcome.cleared);
                Ok(CellStatus::Ran(run.outcome))
            })
            .collect()
    });

    let (mut outcomes, mut ran, mut reused) = (Vec::new(), Vec::new(), Vec::new());
    for status in statuses {
        match status? {
            CellStatus::Ran(o) => {
                ran.push(o.id.clone());
                outcomes.push(o);
            }
            CellStatus::Reused(o) => {
                reused.push(o.id.clone());
                outcomes.push(o);
            }
        }
    }
    let summary = Summary::new(cfg, outcomes);
    let mut bytes = serde_json::to_vec_pretty(&summary)?;
    bytes.push(b'\n');
    write_atomic(&layout.summary(), &bytes)?;
    Ok(RunReport { summary, ran, reused })
}

/// Runs a single-cell config straight into one CSV file, plus an optional
/// full JSON trace.
pub fn run_single(cfg: &ExperimentConfig, csv: &Path, json: Option<&Path>) -> anyhow::Result<Summary> {
    let cells = cells(cfg);
    let [cell] = cells.as_slice() else {
        bail!("a .csv output holds one run but the config describes {} cells; pass a directory", cells.len());
    };
    let name = csv.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let run = run_cell(cfg, cell, &name).with_context(|| format!("cell {}", cell.id()))?;
    write_atomic(csv, &csv_bytes(&run.result, run.auction.radius, run.auction.lambda)?)?;
    if let Some(path) = json {
        write_atomic(path, &json_bytes(&run.trace_file(cfg))?)?;
    }
    Ok(Summary::new(cfg, vec![run.outcome]))
}
