//! Certificates and bounds: primal/dual values, duality gaps, optimality
//! conditions, theoretical constants and empirical rate reports.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::auction::{self, AuctionResult};
use crate::bidders::{NoiseFamily, NoiseSpec};
use crate::encodings::{BaseScheme, Bundle, FeatureMap};
use crate::error::{invalid, Error, Result};
use crate::market::{self, AllocationVector, BidVector, ValuationProfile};
use crate::vecops;

/// Residual tolerance scaled to the valuation magnitude.
pub fn residual_tol(v_bound: f64) -> f64 {
    1e-6 * v_bound.max(1.0)
}

pub const DEFAULT_DELTA: f64 = 0.05;

pub fn primal_value(fm: &FeatureMap, w: &[f64], v: &ValuationProfile, lambda: f64) -> Result<f64> {
    market::objective(fm, w, v, lambda)
}

/// Convex combinations of observed bids (a point of `H`) and observed
/// allocations (a point of `F`).
#[derive(Debug, Clone, PartialEq)]
pub struct DualCandidate {
    pub bids: Vec<(f64, BidVector)>,
    pub allocs: Vec<(f64, AllocationVector)>,
}

impl DualCandidate {
    pub fn point(b: BidVector, q: AllocationVector) -> Self {
        DualCandidate { bids: vec![(1.0, b)], allocs: vec![(1.0, q)] }
    }

    /// Step-weighted averages of a run's bids and allocations.
    pub fn from_run(run: &AuctionResult) -> Self {
        let weights = run.averaging_weights();
        DualCandidate {
            bids: run.trace.iter().zip(&weights).map(|(r, &w)| (w, r.bid.clone())).collect(),
            allocs: run.trace.iter().zip(&weights).map(|(r, &w)| (w, r.alloc.clone())).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (side, weights) in [
            ("bid", self.bids.iter().map(|e| e.0).collect::<Vec<_>>()),
            ("allocation", self.allocs.iter().map(|e| e.0).collect()),
        ] {
            if weights.iter().any(|w| !(*w >= 0.0)) {
                return invalid(format!("negative {side} weight"));
            }
            let total: f64 = weights.iter().sum();
            if (total - 1.0).abs() > 1e-9 {
                return invalid(format!("{side} weights sum to {total}, not 1"));
            }
        }
        Ok(())
    }

    /// `v^⊤ q̄`
    pub fn bid_value(&self, v: &ValuationProfile) -> f64 {
        self.bids
            .iter()
            .map(|(wt, b)| {
                wt * b.bundles().iter().enumerate().map(|(i, &x)| v.value(i, x)).sum::<f64>()
            })
            .sum()
    }

    /// `G^⊤(q̄ − q̄′)`
    pub fn feature_imbalance(&self, fm: &FeatureMap) -> Result<Vec<f64>> {
        let mut out = vec![0.0; fm.dim()];
        for (wt, b) in &self.bids {
            for (i, &x) in b.bundles().iter().enumerate() {
                fm.accumulate(&mut out, i, x, *wt)?;
            }
        }
        for (wt, q) in &self.allocs {
            for (i, &x) in q.bundles().iter().enumerate() {
                fm.accumulate(&mut out, i, x, -*wt)?;
            }
        }
        Ok(out)
    }
}

/// Dual objective `v^⊤ q̄ − ‖G^⊤(q̄ − q̄′)‖² / 2λ`; for `λ = 0` the
/// candidate is feasible only when the imbalance vanishes (else `−∞`).
pub fn dual_value(fm: &FeatureMap, v: &ValuationProfile, lambda: f64, cand: &DualCandidate) -> Result<f64> {
    cand.validate()?;
    if lambda < 0.0 {
        return invalid("lambda must be nonnegative");
    }
    let imbalance = cand.feature_imbalance(fm)?;
    let value = cand.bid_value(v);
    if lambda > 0.0 {
        return Ok(value - vecops::dot(&imbalance, &imbalance) / (2.0 * lambda));
    }
    let tol = residual_tol(v.sup_norm());
    Ok(if vecops::norm_inf(&imbalance) <= tol { value } else { f64::NEG_INFINITY })
}

/// Primal value at the averaged iterate minus the best available dual
/// value: the larger of the run's averaged candidate and the efficient
/// allocation paired with itself (zero imbalance). With `λ = 0` and full
/// row rank the latter is the dual optimum.
pub fn duality_gap(fm: &FeatureMap, v: &ValuationProfile, lambda: f64, run: &AuctionResult) -> Result<f64> {
    let primal = primal_value(fm, &run.averaged_w, v, lambda)?;
    let welfare = market::efficient_allocation(v, fm.bundles())?.1;
    let candidate = dual_value(fm, v, lambda, &DualCandidate::from_run(run))?;
    Ok(primal - welfare.max(candidate))
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimalityReport {
    /// Smallest `‖G^⊤(b − q) − λw‖_∞` over tied demand/supply points.
    pub residual: f64,
    pub best_pair: Option<(BidVector, AllocationVector)>,
    /// `residual ≤ tol`
    pub satisfied: bool,
    /// For `λ = 0`: a bid that is also a revenue-maximizing allocation.
    pub clearing: Option<BidVector>,
}

/// Searches tied integer demand and supply points for a pair meeting the
/// optimality conditions at `w`.
pub fn check_optimality_conditions(
    fm: &FeatureMap,
    w: &[f64],
    v: &ValuationProfile,
    lambda: f64,
    tol: f64,
) -> Result<OptimalityReport> {
    const MAX_POINTS: usize = 100_000;
    let demand = market::demand_ties(fm, w, v, tol)?;
    let supply = market::supply_ties(fm, w, tol, MAX_POINTS)?;
    let combos: usize = demand.iter().map(Vec::len).product();
    if combos > MAX_POINTS {
        return Err(Error::Capacity { items: fm.items(), cap: MAX_POINTS });
    }
    let mut report = OptimalityReport { residual: f64::INFINITY, best_pair: None, satisfied: false, clearing: None };
    let mut choice = vec![0usize; demand.len()];
    loop {
        let bid = BidVector(choice.iter().zip(&demand).map(|(&k, d)| d[k]).collect());
        for q in &supply {
            let mut r = market::excess_supply(fm, &bid, q)?;
            // r = G^⊤(q − b); residual of G^⊤(b − q) = λw
            for (ri, wi) in r.iter_mut().zip(w) {
                *ri = -*ri - lambda * wi;
            }
            let res = vecops::norm_inf(&r);
            if res < report.residual {
                report.residual = res;
                report.best_pair = Some((bid.clone(), q.clone()));
            }
            if lambda == 0.0 && report.clearing.is_none() && bid.bundles() == q.bundles() {
                report.clearing = Some(bid.clone());
            }
        }
        // odometer over the tie sets
        let mut k = 0;
        loop {
            if k == choice.len() {
                report.satisfied = report.residual <= tol;
                return Ok(report);
            }
            choice[k] += 1;
            if choice[k] < demand[k].len() {
                break;
            }
            choice[k] = 0;
            k += 1;
        }
    }
}

/// High-probability bound on `‖v‖_∞` for `v = v̄ + ε` over `n` agents and
/// `ℓ` bundles; `noise = None` means deterministic valuations.
pub fn v_bound(noise: Option<&NoiseSpec>, mean_sup: f64, agents: usize, bundles: usize) -> f64 {
    let Some(spec) = noise else { return mean_sup };
    let sigma = spec.sigma_max();
    if sigma == 0.0 {
        return mean_sup;
    }
    let coords = (agents * bundles) as f64;
    match spec.family {
        NoiseFamily::Gumbel => mean_sup + 2.0 * sigma * (2.0 * coords * std::f64::consts::PI.sqrt()).ln(),
        NoiseFamily::Gaussian | NoiseFamily::BoundedUniform => {
            mean_sup + sigma * (2.0 * (2.0 * coords).ln()).sqrt()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MagnitudeCheck {
    pub inf_norm: f64,
    pub inf_bound: f64,
    pub l2_norm: f64,
    pub l2_bound: f64,
    pub passed: bool,
}

/// Compares an (approximately) optimal `w` with the a-priori magnitude
/// bounds, allowing 1% slack.
pub fn check_w_magnitude(fm: &FeatureMap, w: &[f64], v: f64) -> MagnitudeCheck {
    let n = fm.agents() as f64;
    let inf_bound = match fm.base() {
        BaseScheme::BundleIdentity => (n + 1.0) * v,
        other => (n + 1.0) * v * 2f64.powi(other.degree().unwrap_or(1) as i32),
    };
    let l2_bound = auction::select_radius(fm, v);
    let inf_norm = vecops::norm_inf(w);
    let l2_norm = vecops::norm2(w);
    let slack = |b: f64| 1.01 * b + 1e-9;
    MagnitudeCheck {
        inf_norm,
        inf_bound,
        l2_norm,
        l2_bound,
        passed: inf_norm <= slack(inf_bound) && l2_norm <= slack(l2_bound),
    }
}

/// Monte Carlo estimate of `E_ν D_λ(w; v)`. The seller term does not
/// depend on `v` and is computed once per evaluation.
#[derive(Debug, Clone)]
pub struct ExpectedObjective {
    samples: Vec<ValuationProfile>,
}

impl ExpectedObjective {
    pub fn new(samples: Vec<ValuationProfile>) -> Result<Self> {
        if samples.is_empty() {
            return invalid("at least one valuation sample is required");
        }
        Ok(ExpectedObjective { samples })
    }

    pub fn sample(mean: &ValuationProfile, bundles: &[Bundle], noise: NoiseSpec, count: usize, seed: u64) -> Result<Self> {
        noise.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let samples = (0..count)
            .map(|_| {
                let shared = if noise.shared_scale > 0.0 { noise.draw(noise.shared_scale, &mut rng) } else { 0.0 };
                let mut v = mean.clone();
                for i in 0..mean.agents() {
                    for &x in bundles {
                        let eps = noise.draw(noise.sigma, &mut rng) + shared;
                        v.set(i, x, mean.value(i, x) + eps)?;
                    }
                }
                Ok(v)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(samples)
    }

    pub fn samples(&self) -> &[ValuationProfile] {
        &self.samples
    }

    pub fn value(&self, fm: &FeatureMap, w: &[f64], lambda: f64) -> Result<f64> {
        let s = market::seller_revenue(fm, w)?;
        let mut u = 0.0;
        for v in &self.samples {
            u += market::demand_response(fm, w, v)?.1;
        }
        Ok(u / self.samples.len() as f64 + s + 0.5 * lambda * vecops::dot(w, w))
    }
}

/// What the rate report measures at each checkpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateMetric {
    /// `D(ŵ^T) − D(w̄)`
    ObjectiveGap,
    /// `‖G(ŵ^T − w̄)‖_∞`
    PriceDistance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub metric: RateMetric,
    pub kappa: f64,
    pub v_bound: f64,
    pub radius: f64,
    pub g_norm: f64,
    pub lambda: f64,
    pub delta: f64,
    pub checkpoints: Vec<usize>,
    /// Unscaled theoretical envelope per checkpoint.
    pub envelope: Vec<f64>,
    /// Per run, per checkpoint; clamped at 0.
    pub empirical: Vec<Vec<f64>>,
    /// Per run, per checkpoint, before clamping.
    pub raw: Vec<Vec<f64>>,
    /// Constant fitted at the earliest checkpoint (times the safety factor).
    pub fitted_c: f64,
    /// `empirical / (fitted_c · envelope)`
    pub ratio: Vec<Vec<f64>>,
    /// Any checkpoint whose empirical value exceeds the scaled envelope.
    pub exceeded: Vec<(usize, usize)>,
}

pub fn objective_envelope(kappa: f64, v: f64, delta: f64, t: usize) -> f64 {
    let t = t as f64;
    kappa * kappa * v * t.ln() * (1.0 / delta).ln().sqrt() / t.sqrt()
}

pub fn price_envelope(kappa: f64, g_norm: f64, lambda: f64, t: usize) -> f64 {
    let t = t as f64;
    kappa * g_norm / lambda * (t.ln() / t.sqrt()).sqrt()
}

pub struct RateSetup<'a> {
    pub fm: &'a FeatureMap,
    pub lambda: f64,
    pub v_bound: f64,
    pub delta: f64,
    pub checkpoints: &'a [usize],
    pub safety: f64,
}

/// Empirical gap or price-distance series at the averaged iterate of each
/// run, against the reference optimum `reference_w`. `objective` evaluates
/// the (expected) objective at a parameter; it is used only for the gap.
pub fn rate_report(
    runs: &[AuctionResult],
    reference_w: Option<&[f64]>,
    metric: RateMetric,
    objective: &dyn Fn(&[f64]) -> Result<f64>,
    setup: &RateSetup<'_>,
) -> Result<BoundReport> {
    let reference = reference_w.ok_or_else(|| Error::InvalidInput("a reference optimum is required".into()))?;
    let fm = setup.fm;
    if setup.checkpoints.is_empty() {
        return invalid("no checkpoints");
    }
    if metric == RateMetric::PriceDistance && !(setup.lambda > 0.0) {
        return invalid("price-distance envelopes need lambda > 0");
    }
    let kappa = auction::kappa_bound(fm);
    let g_norm = fm.g_norm_2inf();
    let envelope: Vec<f64> = setup
        .checkpoints
        .iter()
        .map(|&t| match metric {
            RateMetric::ObjectiveGap => objective_envelope(kappa, setup.v_bound, setup.delta, t),
            RateMetric::PriceDistance => price_envelope(kappa, g_norm, setup.lambda, t),
        })
        .collect();
    let reference_value = match metric {
        RateMetric::ObjectiveGap => objective(reference)?,
        RateMetric::PriceDistance => 0.0,
    };
    let mut raw = Vec::with_capacity(runs.len());
    for run in runs {
        let mut series = Vec::with_capacity(setup.checkpoints.len());
        for &t in setup.checkpoints {
            let avg = auction::averaged_iterate(&run.trace, t)?;
            series.push(match metric {
                RateMetric::ObjectiveGap => objective(&avg)? - reference_value,
                RateMetric::PriceDistance => price_distance(fm, &avg, reference)?,
            });
        }
        raw.push(series);
    }
    let empirical: Vec<Vec<f64>> = raw.iter().map(|s| s.iter().map(|x| x.max(0.0)).collect()).collect();
    let fitted_c = setup.safety
        * empirical.iter().map(|s| s[0] / envelope[0]).fold(0.0, f64::max);
    let mut exceeded = Vec::new();
    let ratio: Vec<Vec<f64>> = empirical
        .iter()
        .enumerate()
        .map(|(r, s)| {
            s.iter()
                .zip(&envelope)
                .enumerate()
                .map(|(k, (e, env))| {
                    let scaled = fitted_c * env;
                    if *e > scaled * (1.0 + 1e-12) {
                        exceeded.push((r, setup.checkpoints[k]));
                    }
                    if scaled > 0.0 { e / scaled } else { 0.0 }
                })
                .collect()
        })
        .collect();
    Ok(BoundReport {
        metric,
        kappa,
        v_bound: setup.v_bound,
        radius: auction::select_radius(fm, setup.v_bound),
        g_norm,
        lambda: setup.lambda,
        delta: setup.delta,
        checkpoints: setup.checkpoints.to_vec(),
        envelope,
        empirical,
        raw,
        fitted_c,
        ratio,
        exceeded,
    })
}

/// `max_{i,x} |p_i(x) − p̄_i(x)|` over the feature map's bundles.
pub fn price_distance(fm: &FeatureMap, w: &[f64], reference: &[f64]) -> Result<f64> {
    let diff = vecops::sub(w, reference);
    let mut worst = 0.0f64;
    for i in 0..fm.agents() {
        for &x in fm.bundles() {
            worst = worst.max(fm.price_of(&diff, i, x)?.abs());
        }
    }
    Ok(worst)
}
