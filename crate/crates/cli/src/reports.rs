//! Reports computed from stored full JSON traces.

use std::fmt::Write as _;

use anyhow::{bail, ensure, Context};
use clockforge::activity::{self, GarpOutcome};
use clockforge::auction::{self, AuctionResult, StepRule};
use clockforge::bidders::NoiseSpec;
use clockforge::verify::{
    self, BoundReport, DualCandidate, ExpectedObjective, MagnitudeCheck, RateMetric, RateSetup,
};
use clockforge::{market, vecops, FeatureMap, ValuationProfile};
use serde::{Deserialize, Serialize};

use crate::config::{BidderSpec, ModelKind};
use crate::experiment::build_bidder;
use crate::trace_io::TraceFile;

/// A trace file with its rebuilt feature map and run.
pub struct LoadedTrace {
    pub file: TraceFile,
    pub fm: FeatureMap,
    pub result: AuctionResult,
}

impl LoadedTrace {
    pub fn new(file: TraceFile) -> anyhow::Result<Self> {
        file.validate()?;
        let fm = file.feature_map()?;
        let result = file.to_result()?;
        Ok(LoadedTrace { file, fm, result })
    }

    fn noise(&self) -> Option<NoiseSpec> {
        self.file.bidder.as_ref().and_then(|b| b.noise)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimalitySummary {
    pub residual: f64,
    pub satisfied: bool,
    pub clearing: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualityReport {
    pub lambda: f64,
    pub rounds: usize,
    pub value_sup: f64,
    pub tolerance: f64,
    pub primal_averaged: f64,
    pub primal_final: f64,
    /// Dual value of the step-weighted bid and allocation averages; `None`
    /// when that candidate is infeasible (`λ = 0` with nonzero imbalance).
    pub dual_candidate: Option<f64>,
    pub efficient_welfare: f64,
    /// `primal_averaged` minus the larger of `dual_candidate` and
    /// `efficient_welfare`.
    pub gap: f64,
    /// `gap / (V n)`
    pub relative_gap: f64,
    pub within_tolerance: bool,
    /// Optimality conditions at the averaged iterate; `None` when the tie
    /// enumeration is too large.
    pub optimality: Option<OptimalitySummary>,
    pub magnitude: MagnitudeCheck,
}

pub fn duality_report(t: &LoadedTrace, v: &ValuationProfile) -> anyhow::Result<DualityReport> {
    let (fm, lambda, run) = (&t.fm, t.file.lambda, &t.result);
    let value_sup = v.sup_norm_over(fm.bundles());
    let tolerance = verify::residual_tol(value_sup);
    let primal_averaged = verify::primal_value(fm, &run.averaged_w, v, lambda)?;
    let primal_final = verify::primal_value(fm, &run.final_w, v, lambda)?;
    let dual = verify::dual_value(fm, v, lambda, &DualCandidate::from_run(run))?;
    let efficient_welfare = market::efficient_allocation(v, fm.bundles())?.1;
    let gap = verify::duality_gap(fm, v, lambda, run)?;
    let optimality = verify::check_optimality_conditions(fm, &run.averaged_w, v, lambda, tolerance)
        .ok()
        .map(|r| OptimalitySummary { residual: r.residual, satisfied: r.satisfied, clearing: r.clearing.is_some() });
    let scale = value_sup.max(1e-300) * fm.agents() as f64;
    Ok(DualityReport {
        lambda,
        rounds: run.rounds(),
        value_sup,
        tolerance,
        primal_averaged,
        primal_final,
        dual_candidate: dual.is_finite().then_some(dual),
        efficient_welfare,
        gap,
        relative_gap: gap / scale,
        within_tolerance: gap <= tolerance,
        optimality,
        magnitude: verify::check_w_magnitude(fm, &run.averaged_w, t.file.value_scale),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretSummary {
    pub comparator: String,
    pub weighted_regret: f64,
    pub bound: f64,
    pub lipschitz: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundsReport {
    pub kappa: f64,
    pub value_scale: f64,
    pub radius: f64,
    pub default_radius: f64,
    pub g_norm: f64,
    pub averaged: MagnitudeCheck,
    pub last: MagnitudeCheck,
    /// Largest coordinate error between logged iterates and their
    /// reconstruction from the bid and allocation log.
    pub representer_error: f64,
    pub regret: Vec<RegretSummary>,
    /// Why the regret check was skipped: per-round valuations unknown or a
    /// step rule other than `V/√t`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regret_skipped: Option<String>,
}

pub fn bounds_report(t: &LoadedTrace, v: Option<&ValuationProfile>) -> anyhow::Result<BoundsReport> {
    let (fm, f, run) = (&t.fm, &t.file, &t.result);
    let mut representer_error = 0.0f64;
    let played = run.rounds();
    let mut checkpoints: Vec<usize> = (0..).map(|k| 1usize << k).take_while(|&t| t < played).collect();
    checkpoints.push(played);
    for k in checkpoints {
        let rebuilt = auction::reconstruct_w(&run.trace, fm, f.lambda, k)?;
        representer_error = representer_error.max(vecops::norm_inf(&vecops::sub(&rebuilt, &run.trace[k - 1].w)));
    }
    let recorded = run.trace.iter().all(|r| r.valuation.is_some());
    let truthful = f.bidder.as_ref().is_some_and(|b| b.model == ModelKind::Truthful);
    let regret = match (&f.step, recorded, truthful && v.is_some()) {
        (StepRule::Explicit(_), _, _) => Err("regret bound needs the V/sqrt(t) step rule".to_string()),
        (_, false, false) => Err("per-round valuations were not recorded".to_string()),
        (StepRule::VOverSqrtT { scale }, _, _) => {
            let fallback = if recorded { None } else { v };
            let mut out = Vec::new();
            let ball = |w: &[f64]| auction::project_l2(w, f.radius).0;
            for (name, u) in [("zero", vec![0.0; fm.dim()]), ("averaged", ball(&run.averaged_w))] {
                let c = auction::regret_check(fm, run, f.lambda, *scale, &u, fallback)?;
                out.push(RegretSummary {
                    comparator: name.into(),
                    weighted_regret: c.weighted_regret,
                    bound: c.bound,
                    lipschitz: c.lipschitz,
                    holds: c.holds(1e-9),
                });
            }
            Ok(out)
        }
    };
    Ok(BoundsReport {
        kappa: auction::kappa_bound(fm),
        value_scale: f.value_scale,
        radius: f.radius,
        default_radius: auction::select_radius(fm, f.value_scale),
        g_norm: fm.g_norm_2inf(),
        averaged: verify::check_w_magnitude(fm, &run.averaged_w, f.value_scale),
        last: verify::check_w_magnitude(fm, &run.final_w, f.value_scale),
        representer_error,
        regret: regret.clone().unwrap_or_default(),
        regret_skipped: regret.err(),
    })
}

/// Options of `verify rates`.
#[derive(Debug, Clone)]
pub struct RateOptions {
    pub metric: RateMetric,
    pub checkpoints: Option<Vec<usize>>,
    /// Monte Carlo draws for the expected objective of noisy bidders.
    pub samples: usize,
    pub reference_rounds: Option<usize>,
    pub safety: f64,
}

pub const REFERENCE_SEED: u64 = 99_999;
const SAMPLE_SEED: u64 = 7;

fn default_checkpoints(shortest: usize) -> Vec<usize> {
    let mut c: Vec<usize> = (4..).map(|k| 1usize << k).take_while(|&t| t < shortest).collect();
    c.push(shortest);
    c
}

/// Reference optimum from a long run of the traces' own bidder model.
pub fn reference_run(
    base: &LoadedTrace,
    bidder: &BidderSpec,
    v: Option<&ValuationProfile>,
    rounds: usize,
) -> anyhow::Result<AuctionResult> {
    let f = &base.file;
    let StepRule::VOverSqrtT { scale } = f.step else {
        bail!("an explicit step schedule cannot be extended; pass --reference");
    };
    let step = StepRule::VOverSqrtT { scale };
    let cfg = clockforge::auction::AuctionConfig::new(rounds, f.lambda, f.radius, step.clone())
        .with_objective_every(0)
        .with_early_stop(false)
        .with_clearing_eps(f.clearing_eps);
    let mut model = build_bidder(bidder, v, &base.fm, &step, REFERENCE_SEED)?;
    Ok(auction::run_auction(&base.fm, &cfg, &mut model)?)
}

pub fn rates_report(
    traces: &[LoadedTrace],
    v: &ValuationProfile,
    reference_w: Option<Vec<f64>>,
    opts: &RateOptions,
) -> anyhow::Result<BoundReport> {
    let first = traces.first().context("no traces given")?;
    for t in &traces[1..] {
        ensure!(
            t.file.scheme == first.file.scheme
                && t.file.items == first.file.items
                && t.file.agents == first.file.agents
                && t.file.bundles == first.file.bundles
                && t.file.lambda == first.file.lambda,
            "all traces must share the market, scheme and lambda"
        );
    }
    let fm = &first.fm;
    let lambda = first.file.lambda;
    let reference = match reference_w {
        Some(w) => w,
        None => {
            let bidder = first.file.bidder.as_ref().context("trace has no bidder spec; pass --reference")?;
            let longest = traces.iter().map(|t| t.result.rounds()).max().unwrap_or(1);
            let rounds = opts.reference_rounds.unwrap_or(20 * longest);
            reference_run(first, bidder, Some(v), rounds)?.averaged_w
        }
    };
    ensure!(reference.len() == fm.dim(), "reference has length {}, expected {}", reference.len(), fm.dim());
    let expected = match first.noise() {
        Some(noise) => ExpectedObjective::sample(v, fm.bundles(), noise, opts.samples, SAMPLE_SEED)?,
        None => ExpectedObjective::new(vec![v.clone()])?,
    };
    let objective = |w: &[f64]| expected.value(fm, w, lambda);
    let shortest = traces.iter().map(|t| t.result.rounds()).min().unwrap_or(1);
    let checkpoints = opts.checkpoints.clone().unwrap_or_else(|| default_checkpoints(shortest));
    ensure!(
        checkpoints.iter().all(|&c| c >= 1 && c <= shortest),
        "checkpoints must lie in 1..={shortest}"
    );
    let v_bound = verify::v_bound(first.noise().as_ref(), v.sup_norm_over(fm.bundles()), fm.agents(), fm.bundle_count());
    let setup =
        RateSetup { fm, lambda, v_bound, delta: verify::DEFAULT_DELTA, checkpoints: &checkpoints, safety: opts.safety };
    let runs: Vec<AuctionResult> = traces.iter().map(|t| t.result.clone()).collect();
    Ok(verify::rate_report(&runs, Some(&reference), opts.metric, &objective, &setup)?)
}

/// Long-format CSV of a bound report: one row per run and checkpoint.
pub fn rate_csv(report: &BoundReport) -> anyhow::Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["checkpoint", "envelope", "scaled_envelope", "run", "empirical", "raw", "ratio"])?;
    for (r, series) in report.empirical.iter().enumerate() {
        for (k, &t) in report.checkpoints.iter().enumerate() {
            w.write_record([
                t.to_string(),
                report.envelope[k].to_string(),
                (report.fitted_c * report.envelope[k]).to_string(),
                r.to_string(),
                series[k].to_string(),
                report.raw[r][k].to_string(),
                report.ratio[r][k].to_string(),
            ])?;
        }
    }
    Ok(w.into_inner()?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum GarpReport {
    Consistent { rounds: usize },
    Violation { agent: usize, cycle: Vec<usize>, agent_sum: f64, joint_sum: Option<f64> },
}

pub fn garp_report(t: &TraceFile) -> anyhow::Result<GarpReport> {
    let fm = t.feature_map()?;
    let h = t.history(&fm)?;
    Ok(match activity::check_garp(&h)? {
        GarpOutcome::Consistent => GarpReport::Consistent { rounds: h.rounds.len() },
        GarpOutcome::Violation { agent, rounds, agent_sum, joint_sum } => {
            GarpReport::Violation { agent, cycle: rounds, agent_sum, joint_sum }
        }
    })
}

impl GarpReport {
    pub fn render(&self) -> String {
        match self {
            GarpReport::Consistent { rounds } => format!("consistent: {rounds} rounds satisfy GARP"),
            GarpReport::Violation { agent, cycle, agent_sum, joint_sum } => {
                let mut s = format!("violation: agent {agent}, cycle through rounds ");
                for t in cycle {
                    let _ = write!(s, "{t} -> ");
                }
                let _ = write!(s, "{} (cycle sum {agent_sum:.6e}", cycle[0]);
                match joint_sum {
                    Some(j) => {
                        let _ = write!(s, ", joint sum {j:.6e})");
                    }
                    None => s.push(')'),
                }
                s
            }
        }
    }
}

pub fn garp_recover(t: &TraceFile) -> anyhow::Result<(FeatureMap, ValuationProfile)> {
    let fm = t.feature_map()?;
    let h = t.history(&fm)?;
    let v = activity::recover_valuation(&h)?;
    Ok((fm, v))
}
