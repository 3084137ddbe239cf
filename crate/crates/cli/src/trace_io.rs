//! Trace files.
//!
//! The CSV trace holds one row per round under a versioned comment line
//! `# clockforge-trace v1 radius=<R> lambda=<λ>`. Column order is fixed by
//! [`CSV_COLUMNS`]. The full JSON trace adds the market, the scheme and
//! every iterate, bid and allocation, enough to rebuild the run.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use anyhow::{anyhow, bail, ensure, Context};
use clockforge::activity::{History, PriceSnapshot};
use clockforge::auction::{self, AuctionConfig, AuctionResult, RoundTrace, StepRule};
use clockforge::{market, vecops, AllocationVector, BidVector, Bundle, FeatureMap, Quote};
use serde::{Deserialize, Serialize};

use crate::config::{BidderSpec, SchemeSpec};
use crate::valuations::{parse_records, valuation_records, ValuationRecord};

pub const CSV_MAGIC: &str = "# clockforge-trace v1";
pub const JSON_FORMAT: &str = "clockforge-trace-json v1";
pub const CSV_COLUMNS: [&str; 10] =
    ["t", "eta", "gamma", "w_norm", "g_norm", "objective", "cleared", "step_applied", "revenue", "quotes"];

/// Relative slack on the ball constraint when re-checking a stored trace.
const NORM_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub t: usize,
    pub eta: f64,
    pub gamma: f64,
    pub w_norm: f64,
    pub g_norm: f64,
    pub objective: Option<f64>,
    pub cleared: bool,
    pub step_applied: bool,
    pub revenue: f64,
    pub quotes: usize,
}

impl From<&RoundTrace> for CsvRow {
    fn from(r: &RoundTrace) -> Self {
        CsvRow {
            t: r.t,
            eta: r.eta,
            gamma: r.gamma,
            w_norm: r.w_norm,
            g_norm: r.g_norm,
            objective: r.objective,
            cleared: r.cleared,
            step_applied: r.step_applied,
            revenue: r.revenue,
            quotes: r.quotes,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CsvTrace {
    pub radius: f64,
    pub lambda: f64,
    pub rows: Vec<CsvRow>,
}

pub fn csv_bytes(result: &AuctionResult, radius: f64, lambda: f64) -> anyhow::Result<Vec<u8>> {
    let mut out = format!("{CSV_MAGIC} radius={radius} lambda={lambda}\n").into_bytes();
    {
        let mut w = csv::Writer::from_writer(&mut out);
        for r in &result.trace {
            w.serialize(CsvRow::from(r))?;
        }
        w.flush()?;
    }
    Ok(out)
}

pub fn parse_csv<R: Read>(input: R) -> anyhow::Result<CsvTrace> {
    let mut input = BufReader::new(input);
    let mut first = String::new();
    input.read_line(&mut first)?;
    let rest = first
        .trim_end()
        .strip_prefix(CSV_MAGIC)
        .ok_or_else(|| anyhow!("missing `{CSV_MAGIC}` header line"))?;
    let (mut radius, mut lambda) = (None, None);
    for field in rest.split_whitespace() {
        match field.split_once('=') {
            Some(("radius", v)) => radius = Some(v.parse::<f64>().context("bad radius in header")?),
            Some(("lambda", v)) => lambda = Some(v.parse::<f64>().context("bad lambda in header")?),
            _ => bail!("unexpected header field `{field}`"),
        }
    }
    let mut reader = csv::Reader::from_reader(input);
    let header: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
    ensure!(header == CSV_COLUMNS, "columns {header:?} differ from {CSV_COLUMNS:?}");
    let rows = reader.deserialize().collect::<Result<Vec<CsvRow>, _>>()?;
    Ok(CsvTrace {
        radius: radius.ok_or_else(|| anyhow!("header lacks radius"))?,
        lambda: lambda.ok_or_else(|| anyhow!("header lacks lambda"))?,
        rows,
    })
}

pub fn read_csv(path: &Path) -> anyhow::Result<CsvTrace> {
    let file = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    parse_csv(file).with_context(|| format!("cannot parse {}", path.display()))
}

/// Checks the per-round invariants that survive in the CSV columns.
fn check_rows<'a>(radius: f64, rows: impl ExactSizeIterator<Item = &'a CsvRow>) -> anyhow::Result<()> {
    let count = rows.len();
    ensure!(count > 0, "trace has no rounds");
    for (k, r) in rows.enumerate() {
        let t = k + 1;
        ensure!(r.t == t, "row {k} is round {}, expected {t}", r.t);
        ensure!(r.eta > 0.0 && r.eta.is_finite(), "round {t}: step size {} is not positive", r.eta);
        ensure!(r.gamma > 0.0 && r.gamma <= 1.0, "round {t}: rescale {} outside (0, 1]", r.gamma);
        ensure!(r.g_norm.is_finite() && r.g_norm >= 0.0, "round {t}: bad subgradient norm");
        if t == 1 {
            ensure!(r.w_norm == 0.0, "the first iterate must be 0, has norm {}", r.w_norm);
        }
        ensure!(
            r.w_norm <= radius * (1.0 + NORM_SLACK),
            "round {t}: ‖w‖ = {} exceeds the radius {radius}",
            r.w_norm
        );
        if !r.step_applied {
            ensure!(t == count, "round {t} stopped the auction but later rounds follow");
            ensure!(r.cleared, "round {t} stopped without clearing");
            ensure!(r.gamma == 1.0, "round {t} stopped but records a projection");
        }
    }
    Ok(())
}

impl CsvTrace {
    pub fn validate(&self) -> anyhow::Result<()> {
        ensure!(self.radius > 0.0, "radius must be positive");
        ensure!(self.lambda >= 0.0, "lambda must be nonnegative");
        check_rows(self.radius, self.rows.iter())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub t: usize,
    pub w: Vec<f64>,
    pub quotes: usize,
    pub bid: Vec<Vec<usize>>,
    pub alloc: Vec<Vec<usize>>,
    pub revenue: f64,
    pub g: Vec<f64>,
    pub eta: f64,
    pub gamma: f64,
    pub step_applied: bool,
    pub objective: Option<f64>,
    pub cleared: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub valuation: Option<Vec<ValuationRecord>>,
}

/// Full JSON trace of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceFile {
    pub format: String,
    pub items: usize,
    pub agents: usize,
    /// Restricted bundle set, absent when every nonempty bundle is allowed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bundles: Option<Vec<Vec<usize>>>,
    pub scheme: SchemeSpec,
    pub lambda: f64,
    pub radius: f64,
    pub step: StepRule,
    pub clearing_eps: f64,
    pub value_scale: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bidder: Option<BidderSpec>,
    pub final_w: Vec<f64>,
    pub averaged_w: Vec<f64>,
    pub cleared: bool,
    pub termination_round: Option<usize>,
    pub rounds: Vec<RoundRecord>,
}

fn item_lists(bundles: &[Bundle]) -> Vec<Vec<usize>> {
    bundles.iter().map(|&b| b.into()).collect()
}

fn to_bundles(lists: &[Vec<usize>]) -> anyhow::Result<Vec<Bundle>> {
    lists.iter().map(|l| Bundle::from_items(l.iter().copied()).map_err(Into::into)).collect()
}

impl TraceFile {
    pub fn new(
        fm: &FeatureMap,
        scheme: SchemeSpec,
        cfg: &AuctionConfig,
        value_scale: f64,
        bidder: Option<&BidderSpec>,
        result: &AuctionResult,
    ) -> Self {
        let rounds = result
            .trace
            .iter()
            .map(|r| RoundRecord {
                t: r.t,
                w: r.w.clone(),
                quotes: r.quotes,
                bid: item_lists(r.bid.bundles()),
                alloc: item_lists(r.alloc.bundles()),
                revenue: r.revenue,
                g: r.g.clone(),
                eta: r.eta,
                gamma: r.gamma,
                step_applied: r.step_applied,
                objective: r.objective,
                cleared: r.cleared,
                valuation: r.valuation.as_ref().map(|v| valuation_records(v, fm.bundles())),
            })
            .collect();
        TraceFile {
            format: JSON_FORMAT.into(),
            items: fm.items(),
            agents: fm.agents(),
            bundles: (!fm.is_all_bundles()).then(|| item_lists(fm.bundles())),
            scheme,
            lambda: cfg.lambda,
            radius: cfg.radius,
            step: cfg.step.clone(),
            clearing_eps: cfg.clearing_eps,
            value_scale,
            bidder: bidder.cloned(),
            final_w: result.final_w.clone(),
            averaged_w: result.averaged_w.clone(),
            cleared: result.cleared,
            termination_round: result.termination_round,
            rounds,
        }
    }

    pub fn feature_map(&self) -> anyhow::Result<FeatureMap> {
        let bundles = self.bundles.as_deref().map(to_bundles).transpose()?;
        Ok(self.scheme.feature_map(self.items, self.agents, bundles.as_deref())?)
    }

    /// Rebuilds the in-memory run. Iterate and subgradient norms are
    /// recomputed from the stored vectors.
    pub fn to_result(&self) -> anyhow::Result<AuctionResult> {
        let trace = self
            .rounds
            .iter()
            .map(|r| {
                let valuation =
                    r.valuation.as_deref().map(|recs| parse_records(recs, self.agents, self.items)).transpose()?;
                Ok(RoundTrace {
                    t: r.t,
                    w: r.w.clone(),
                    quotes: r.quotes,
                    bid: BidVector(to_bundles(&r.bid)?),
                    alloc: AllocationVector::new(to_bundles(&r.alloc)?)
                        .with_context(|| format!("round {}", r.t))?,
                    revenue: r.revenue,
                    g: r.g.clone(),
                    eta: r.eta,
                    gamma: r.gamma,
                    step_applied: r.step_applied,
                    objective: r.objective,
                    cleared: r.cleared,
                    w_norm: vecops::norm2(&r.w),
                    g_norm: vecops::norm2(&r.g),
                    valuation,
                })
            })
            .collect::<anyhow::Result<Vec<_>>>()?;
        Ok(AuctionResult {
            final_w: self.final_w.clone(),
            averaged_w: self.averaged_w.clone(),
            trace,
            cleared: self.cleared,
            termination_round: self.termination_round,
        })
    }

    /// Bid and price history for revealed-preference checks. Prices are
    /// re-quoted from the logged iterates over the feature map's bundles.
    pub fn history(&self, fm: &FeatureMap) -> anyhow::Result<History> {
        let mut h = History::new(self.agents, self.items);
        for r in &self.rounds {
            let prices = PriceSnapshot::capture(&Quote::new(fm, &r.w), self.agents, fm.bundles())?;
            h.push(r.t, BidVector(to_bundles(&r.bid)?), prices);
        }
        Ok(h)
    }

    /// Checks the format tag, the per-round invariants, shapes, bid and
    /// allocation validity, the logged subgradients, the representer
    /// reconstruction of the iterates at power-of-two rounds and the
    /// averaged iterate.
    pub fn validate(&self) -> anyhow::Result<()> {
        ensure!(self.format == JSON_FORMAT, "unknown trace format `{}`", self.format);
        let fm = self.feature_map()?;
        let result = self.to_result()?;
        let rows: Vec<CsvRow> = result.trace.iter().map(CsvRow::from).collect();
        check_rows(self.radius, rows.iter())?;
        let dim = fm.dim();
        ensure!(self.final_w.len() == dim && self.averaged_w.len() == dim, "parameter length differs from {dim}");
        ensure!(vecops::norm2(&self.final_w) <= self.radius * (1.0 + NORM_SLACK), "final iterate leaves the ball");
        let close = |a: &[f64], b: &[f64]| {
            let scale = 1.0 + vecops::norm_inf(a).max(vecops::norm_inf(b));
            vecops::norm_inf(&vecops::sub(a, b)) <= 1e-9 * scale
        };
        for r in &result.trace {
            let t = r.t;
            ensure!(r.w.len() == dim && r.g.len() == dim, "round {t}: vector length differs from {dim}");
            r.bid.validate(&fm).with_context(|| format!("round {t}"))?;
            ensure!(r.alloc.bundles().len() == self.agents, "round {t}: allocation has wrong length");
            ensure!(r.alloc.bundles().iter().all(|&x| x.is_empty() || fm.admits(x)), "round {t}: allocation outside X");
            let g = market::subgradient(&fm, &r.w, &r.bid, &r.alloc, self.lambda)?;
            ensure!(close(&g, &r.g), "round {t}: logged subgradient does not match bids and allocation");
        }
        let played = result.trace.len();
        let mut checkpoints: Vec<usize> = (0..).map(|k| 1usize << k).take_while(|&t| t <= played).collect();
        checkpoints.push(played);
        for &t in &checkpoints {
            let rebuilt = auction::reconstruct_w(&result.trace, &fm, self.lambda, t)?;
            ensure!(close(&rebuilt, &result.trace[t - 1].w), "round {t}: iterate differs from its reconstruction");
        }
        if result.trace.last().is_some_and(|r| r.step_applied) {
            let rebuilt = auction::reconstruct_w(&result.trace, &fm, self.lambda, played + 1)?;
            ensure!(close(&rebuilt, &self.final_w), "final iterate differs from its reconstruction");
        }
        let avg = auction::averaged_iterate(&result.trace, played)?;
        ensure!(close(&avg, &self.averaged_w), "averaged iterate does not match the logged steps");
        Ok(())
    }
}

pub fn json_bytes(trace: &TraceFile) -> anyhow::Result<Vec<u8>> {
    let mut out = serde_json::to_vec(trace)?;
    out.push(b'\n');
    Ok(out)
}

pub fn read_json(path: &Path) -> anyhow::Result<TraceFile> {
    let file = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    serde_json::from_reader(BufReader::new(file)).with_context(|| format!("cannot parse {}", path.display()))
}

/// Writes through a sibling temporary file so readers never observe a
/// partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    let name = path.file_name().ok_or_else(|| anyhow!("{} is not a file path", path.display()))?;
    let tmp = path.with_file_name(format!(".{}.tmp", name.to_string_lossy()));
    {
        let mut f = File::create(&tmp).with_context(|| format!("cannot create {}", tmp.display()))?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path).with_context(|| format!("cannot move {} into place", path.display()))?;
    Ok(())
}
