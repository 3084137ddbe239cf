//! The subgradient clock auction: quote prices, collect bids, solve the
//! seller's problem, take a projected subgradient step.

use std::cell::Cell;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::encodings::{BaseScheme, Bundle, FeatureMap};
use crate::error::{invalid, Error, Result};
use crate::market::{
    self, AllocationVector, BidVector, PriceOracle, Quote, ValuationProfile, DEFAULT_ITEM_CAP,
};
use crate::vecops;

/// Step-size schedule `η^t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepRule {
    /// `η^t = scale / √t`
    VOverSqrtT { scale: f64 },
    /// `η^t = schedule[t - 1]`
    Explicit(Vec<f64>),
}

impl StepRule {
    /// Step size at round `t ≥ 1`, if the schedule covers it.
    pub fn eta(&self, t: usize) -> Option<f64> {
        match self {
            StepRule::VOverSqrtT { scale } => Some(scale / (t as f64).sqrt()),
            StepRule::Explicit(s) => t.checked_sub(1).and_then(|i| s.get(i)).copied(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuctionConfig {
    pub rounds: usize,
    pub lambda: f64,
    pub radius: f64,
    pub step: StepRule,
    #[serde(default)]
    pub clearing_eps: f64,
    #[serde(default = "default_true")]
    pub early_stop: bool,
    /// Evaluate the objective every this many rounds (0 disables).
    #[serde(default = "default_objective_every")]
    pub objective_every: usize,
    #[serde(default)]
    pub record_valuations: bool,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_item_cap")]
    pub item_cap: usize,
}

fn default_true() -> bool {
    true
}
fn default_objective_every() -> usize {
    10
}
fn default_item_cap() -> usize {
    DEFAULT_ITEM_CAP
}

impl AuctionConfig {
    pub fn new(rounds: usize, lambda: f64, radius: f64, step: StepRule) -> Self {
        AuctionConfig {
            rounds,
            lambda,
            radius,
            step,
            clearing_eps: 0.0,
            early_stop: true,
            objective_every: default_objective_every(),
            record_valuations: false,
            seed: 0,
            item_cap: DEFAULT_ITEM_CAP,
        }
    }

    pub fn with_early_stop(mut self, on: bool) -> Self {
        self.early_stop = on;
        self
    }

    pub fn with_objective_every(mut self, k: usize) -> Self {
        self.objective_every = k;
        self
    }

    pub fn with_recorded_valuations(mut self, on: bool) -> Self {
        self.record_valuations = on;
        self
    }

    pub fn with_clearing_eps(mut self, eps: f64) -> Self {
        self.clearing_eps = eps;
        self
    }

    /// Hard errors for unusable settings; warns when `λ > 1/V` under the
    /// `V/√t` rule.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.rounds == 0 {
            return bad("rounds must be at least 1".into());
        }
        if !(self.radius > 0.0) || !self.radius.is_finite() {
            return bad(format!("radius must be positive and finite, got {}", self.radius));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return bad(format!("lambda must be nonnegative and finite, got {}", self.lambda));
        }
        if !(self.clearing_eps >= 0.0) {
            return bad("clearing_eps must be nonnegative".into());
        }
        match &self.step {
            StepRule::VOverSqrtT { scale } => {
                if !(*scale > 0.0) || !scale.is_finite() {
                    return bad(format!("step scale must be positive, got {scale}"));
                }
                if self.lambda > 1.0 / scale {
                    warn!(
                        "lambda = {} exceeds 1/V = {}; convergence guarantees do not apply",
                        self.lambda,
                        1.0 / scale
                    );
                }
            }
            StepRule::Explicit(s) => {
                if s.len() < self.rounds {
                    return bad(format!(
                        "explicit step schedule has {} entries for {} rounds",
                        s.len(),
                        self.rounds
                    ));
                }
                if let Some(e) = s.iter().find(|e| !(**e > 0.0) || !e.is_finite()) {
                    return bad(format!("step sizes must be positive, got {e}"));
                }
            }
        }
        Ok(())
    }
}

/// A bidder population answering price quotes with one bundle per agent.
pub trait Bidder {
    fn bid(&mut self, round: usize, prices: &dyn PriceOracle) -> Result<BidVector>;

    /// Valuation the most recent bid was computed against, when known.
    fn realized_valuation(&self) -> Option<&ValuationProfile> {
        None
    }
}

/// Everything logged for one round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundTrace {
    pub t: usize,
    /// `w^t`, the parameter the round's prices were quoted at.
    pub w: Vec<f64>,
    /// Number of bundle prices the bidder requested.
    pub quotes: usize,
    pub bid: BidVector,
    pub alloc: AllocationVector,
    pub revenue: f64,
    /// `g^t = G^⊤(q^t − b^t) + λw^t`
    pub g: Vec<f64>,
    pub eta: f64,
    /// Rescale applied when projecting `w^t − η^t g^t` (the factor that
    /// produces `w^{t+1}`); 1 without projection.
    pub gamma: f64,
    /// False only for a round that stopped the auction on clearing.
    pub step_applied: bool,
    pub objective: Option<f64>,
    pub cleared: bool,
    pub w_norm: f64,
    pub g_norm: f64,
    pub valuation: Option<ValuationProfile>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuctionResult {
    /// Last iterate: `w^{T+1}`, or `w^t` of the clearing round on early stop.
    pub final_w: Vec<f64>,
    /// `Σ η^t w^t / Σ η^t` over all rounds played.
    pub averaged_w: Vec<f64>,
    pub trace: Vec<RoundTrace>,
    pub cleared: bool,
    pub termination_round: Option<usize>,
}

impl AuctionResult {
    pub fn rounds(&self) -> usize {
        self.trace.len()
    }

    /// Normalized step weights `η^t / Σ η^s`.
    pub fn averaging_weights(&self) -> Vec<f64> {
        averaging_weights(&self.trace)
    }
}

pub fn averaging_weights(trace: &[RoundTrace]) -> Vec<f64> {
    let total: f64 = trace.iter().map(|r| r.eta).sum();
    trace.iter().map(|r| r.eta / total).collect()
}

/// Step-weighted average of `w^1..w^k` for the first `k` rounds.
pub fn averaged_iterate(trace: &[RoundTrace], k: usize) -> Result<Vec<f64>> {
    if k == 0 || k > trace.len() {
        return invalid(format!("cannot average {k} of {} rounds", trace.len()));
    }
    let prefix = &trace[..k];
    let total: f64 = prefix.iter().map(|r| r.eta).sum();
    let mut avg = vec![0.0; prefix[0].w.len()];
    for r in prefix {
        vecops::axpy(&mut avg, r.eta / total, &r.w);
    }
    Ok(avg)
}

struct CountingOracle<'a> {
    inner: Quote<'a>,
    count: Cell<usize>,
}

impl PriceOracle for CountingOracle<'_> {
    fn price(&self, agent: usize, x: Bundle) -> Result<f64> {
        self.count.set(self.count.get() + 1);
        self.inner.price(agent, x)
    }
}

/// Orthogonal projection onto the ℓ₂ ball of radius `r`, with the rescale
/// factor `r / max(r, ‖w‖)`. Points within a few ulps of the sphere are
/// left alone so that a zero step from a projected iterate is a fixed point.
pub fn project_l2(w: &[f64], r: f64) -> (Vec<f64>, f64) {
    let norm = vecops::norm2(w);
    if norm <= r * (1.0 + 4.0 * f64::EPSILON) {
        return (w.to_vec(), 1.0);
    }
    let gamma = r / norm;
    (w.iter().map(|x| x * gamma).collect(), gamma)
}

/// Runs the auction for `cfg.rounds` rounds (or until clearing).
pub fn run_auction(
    fm: &FeatureMap,
    cfg: &AuctionConfig,
    bidder: &mut dyn Bidder,
) -> Result<AuctionResult> {
    cfg.validate()?;
    if fm.items() > cfg.item_cap {
        return Err(Error::Capacity { items: fm.items(), cap: cfg.item_cap });
    }
    let lambda = cfg.lambda;
    let mut w = vec![0.0; fm.dim()];
    let mut trace = Vec::with_capacity(cfg.rounds);
    let mut avg_num = vec![0.0; fm.dim()];
    let mut avg_den = 0.0;
    let mut termination_round = None;

    for t in 1..=cfg.rounds {
        let oracle = CountingOracle { inner: Quote::new(fm, &w), count: Cell::new(0) };
        let bid = bidder.bid(t, &oracle)?;
        bid.validate(fm)
            .map_err(|e| Error::Protocol { round: t, reason: e.to_string() })?;
        let (alloc, revenue) = market::supply_response_capped(fm, &w, cfg.item_cap)?;
        let g = market::subgradient(fm, &w, &bid, &alloc, lambda)?;
        let eta = cfg.step.eta(t).expect("validated schedule covers every round");
        let w_norm = vecops::norm2(&w);
        let cleared = bid.bundles() == alloc.bundles() && lambda * w_norm <= cfg.clearing_eps;

        let realized = bidder.realized_valuation();
        let sample = cfg.objective_every > 0
            && (t == 1 || t % cfg.objective_every == 0 || t == cfg.rounds);
        let objective = match (sample, realized) {
            (true, Some(v)) => {
                let (_, u) = market::demand_response(fm, &w, v)?;
                Some(u + revenue + 0.5 * lambda * w_norm * w_norm)
            }
            _ => None,
        };
        let valuation = if cfg.record_valuations { realized.cloned() } else { None };

        vecops::axpy(&mut avg_num, eta, &w);
        avg_den += eta;

        let stop = cleared && cfg.early_stop;
        let mut record = RoundTrace {
            t,
            w: w.clone(),
            quotes: oracle.count.get(),
            bid,
            alloc,
            revenue,
            g_norm: vecops::norm2(&g),
            g,
            eta,
            gamma: 1.0,
            step_applied: !stop,
            objective,
            cleared,
            w_norm,
            valuation,
        };
        if stop {
            trace.push(record);
            termination_round = Some(t);
            break;
        }
        let mut next = w.clone();
        vecops::axpy(&mut next, -eta, &record.g);
        let (next, gamma) = project_l2(&next, cfg.radius);
        debug_assert!(vecops::norm2(&next) <= cfg.radius * (1.0 + 1e-12));
        record.gamma = gamma;
        trace.push(record);
        w = next;
    }

    let averaged_w = avg_num.iter().map(|x| x / avg_den).collect();
    Ok(AuctionResult {
        final_w: w,
        averaged_w,
        cleared: trace.last().is_some_and(|r| r.cleared),
        trace,
        termination_round,
    })
}

/// Rebuilds `w^t` from the logged `(η^s, b^s, q^s, γ^{s+1})` of rounds
/// `s < t`, without touching the logged iterates.
pub fn reconstruct_w(trace: &[RoundTrace], fm: &FeatureMap, lambda: f64, t: usize) -> Result<Vec<f64>> {
    if t == 0 {
        return invalid("rounds are numbered from 1");
    }
    if t - 1 > trace.len() {
        return invalid(format!("trace holds {} rounds, round {t} needs {}", trace.len(), t - 1));
    }
    let prefix = &trace[..t - 1];
    for (k, r) in prefix.iter().enumerate() {
        if r.t != k + 1 {
            return invalid(format!("trace entry {k} is round {}, expected {}", r.t, k + 1));
        }
        if !r.step_applied {
            return invalid(format!("round {} stopped the auction; no later iterate exists", r.t));
        }
    }
    // sum over s of γ^{s+1} η^s G^⊤(b^s − q^s) · Π_{j>s} γ^{j+1}(1 − λη^j)
    let mut w = vec![0.0; fm.dim()];
    let mut carry = 1.0;
    for r in prefix.iter().rev() {
        let scale = carry * r.gamma * r.eta;
        let excess = market::excess_supply(fm, &r.bid, &r.alloc)?;
        vecops::axpy(&mut w, -scale, &excess);
        carry *= r.gamma * (1.0 - lambda * r.eta);
    }
    Ok(w)
}

/// `m^{r/2} 2^r`-type scale factor of the polynomial bounds.
fn poly_scale(items: usize, degree: usize) -> f64 {
    (items as f64).powf(degree as f64 / 2.0) * 2f64.powi(degree as i32)
}

/// Radius large enough to contain every optimal price parameter.
/// Personalized maps stack `n` copies, multiplying the ℓ₂ bound by `√n`.
pub fn select_radius(fm: &FeatureMap, v: f64) -> f64 {
    let n = fm.agents() as f64;
    let base = match fm.base() {
        BaseScheme::BundleIdentity => (n + 1.0) * v * (fm.bundle_count() as f64).sqrt(),
        other => (n + 1.0) * v * poly_scale(fm.items(), other.degree().unwrap_or(1)),
    };
    if fm.is_personalized() {
        base * n.sqrt()
    } else {
        base
    }
}

/// Representation constant `κ` entering the convergence bounds.
pub fn kappa_bound(fm: &FeatureMap) -> f64 {
    let n = fm.agents() as f64;
    let m = fm.items() as f64;
    let (lead, radius_per_v) = match fm.base() {
        BaseScheme::BundleIdentity => {
            let l = fm.bundle_count() as f64;
            (n.sqrt() + m.sqrt(), (n + 1.0) * l.sqrt())
        }
        other => {
            let r = other.degree().unwrap_or(1);
            ((1.0 + n.sqrt()) * m.powi(r as i32), (n + 1.0) * poly_scale(fm.items(), r))
        }
    };
    let radius_per_v = if fm.is_personalized() { radius_per_v * n.sqrt() } else { radius_per_v };
    lead + 2.0 * radius_per_v
}

/// Both sides of the online-subgradient regret inequality for one run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegretCheck {
    /// `Σ η̂^t (D(w^t; v^t) − D(u; v^t))`
    pub weighted_regret: f64,
    /// `(‖w¹ − u‖² + L²c² ln(eT)) / (c√T)`
    pub bound: f64,
    pub lipschitz: f64,
}

impl RegretCheck {
    pub fn holds(&self, tol: f64) -> bool {
        self.weighted_regret <= self.bound + tol
    }
}

/// Evaluates the regret inequality of a `c/√t` run against comparator `u`
/// (which must lie in the projection ball). Per-round valuations come from
/// the trace when recorded, otherwise from `fallback`.
pub fn regret_check(
    fm: &FeatureMap,
    result: &AuctionResult,
    lambda: f64,
    step_scale: f64,
    comparator: &[f64],
    fallback: Option<&ValuationProfile>,
) -> Result<RegretCheck> {
    let trace = &result.trace;
    if trace.is_empty() {
        return invalid("empty trace");
    }
    let weights = averaging_weights(trace);
    let supply_at_u = market::seller_revenue(fm, comparator)?;
    let reg_u = 0.5 * lambda * vecops::dot(comparator, comparator);
    let mut regret = 0.0;
    let mut lipschitz = 0.0f64;
    for (r, wt) in trace.iter().zip(&weights) {
        let v = r
            .valuation
            .as_ref()
            .or(fallback)
            .ok_or_else(|| Error::InvalidInput(format!("no valuation for round {}", r.t)))?;
        let (_, u_w) = market::demand_response(fm, &r.w, v)?;
        let d_w = u_w + r.revenue + 0.5 * lambda * r.w_norm * r.w_norm;
        let (_, u_u) = market::demand_response(fm, comparator, v)?;
        let d_u = u_u + supply_at_u + reg_u;
        regret += wt * (d_w - d_u);
        lipschitz = lipschitz.max(r.g_norm);
    }
    let t = trace.len() as f64;
    let c = step_scale;
    let dist2 = vecops::dot(comparator, comparator);
    let bound = (dist2 + lipschitz * lipschitz * c * c * (std::f64::consts::E * t).ln()) / (c * t.sqrt());
    Ok(RegretCheck { weighted_regret: regret, bound, lipschitz })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::ValuationProfile;

    struct Fixed(ValuationProfile, Vec<Bundle>);
    impl Bidder for Fixed {
        fn bid(&mut self, _: usize, prices: &dyn PriceOracle) -> Result<BidVector> {
            Ok(market::demand_with_oracle(&self.0, &self.1, prices)?.0)
        }
        fn realized_valuation(&self) -> Option<&ValuationProfile> {
            Some(&self.0)
        }
    }

    struct AlwaysEmpty(usize);
    impl Bidder for AlwaysEmpty {
        fn bid(&mut self, _: usize, _: &dyn PriceOracle) -> Result<BidVector> {
            Ok(BidVector::empty(self.0))
        }
    }

    struct Rogue;
    impl Bidder for Rogue {
        fn bid(&mut self, _: usize, _: &dyn PriceOracle) -> Result<BidVector> {
            Ok(BidVector(vec![Bundle::from_mask(0b100)]))
        }
    }

    fn item() -> Bundle {
        Bundle::from_mask(1)
    }

    #[test]
    fn projection_examples() {
        assert_eq!(project_l2(&[0.3, 0.4], 1.0), (vec![0.3, 0.4], 1.0));
        let (w, g) = project_l2(&[3.0, 4.0], 1.0);
        assert!((w[0] - 0.6).abs() < 1e-15 && (w[1] - 0.8).abs() < 1e-15);
        assert!((g - 0.2).abs() < 1e-15);
    }

    #[test]
    fn single_item_truthful_zero_subgradient_inside_value() {
        let fm = FeatureMap::linear(1, 1).unwrap();
        let v = ValuationProfile::from_entries(1, 1, [(0, item(), 5.0)]).unwrap();
        let cfg = AuctionConfig::new(40, 0.0, 1e6, StepRule::VOverSqrtT { scale: 5.0 })
            .with_early_stop(false);
        let res = run_auction(&fm, &cfg, &mut Fixed(v, fm.bundles().to_vec())).unwrap();
        for r in &res.trace {
            let p = r.w[0];
            if p > 0.0 && p < 5.0 {
                assert_eq!(r.bid.bundles(), r.alloc.bundles());
                assert_eq!(r.g, vec![0.0]);
            }
        }
    }

    #[test]
    fn empty_bidder_keeps_origin() {
        let fm = FeatureMap::linear(2, 2).unwrap();
        let cfg = AuctionConfig::new(10, 0.0, 10.0, StepRule::VOverSqrtT { scale: 1.0 })
            .with_early_stop(false);
        let res = run_auction(&fm, &cfg, &mut AlwaysEmpty(2)).unwrap();
        assert!(res.trace.iter().all(|r| r.alloc == AllocationVector::empty(2)));
        assert_eq!(res.final_w, vec![0.0, 0.0]);
        assert!(res.trace.iter().all(|r| r.cleared));
    }

    #[test]
    fn early_stop_at_round_one() {
        let fm = FeatureMap::linear(2, 2).unwrap();
        let cfg = AuctionConfig::new(10, 0.0, 10.0, StepRule::VOverSqrtT { scale: 1.0 });
        let res = run_auction(&fm, &cfg, &mut AlwaysEmpty(2)).unwrap();
        assert_eq!(res.termination_round, Some(1));
        assert!(res.cleared);
        assert_eq!(res.trace.len(), 1);
        assert!(!res.trace[0].step_applied);
    }

    #[test]
    fn invalid_bid_is_protocol_error() {
        let fm = FeatureMap::linear(2, 1).unwrap();
        let cfg = AuctionConfig::new(3, 0.0, 1.0, StepRule::VOverSqrtT { scale: 1.0 });
        match run_auction(&fm, &cfg, &mut Rogue) {
            Err(Error::Protocol { round: 1, .. }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn config_validation() {
        let ok = AuctionConfig::new(3, 0.0, 1.0, StepRule::VOverSqrtT { scale: 1.0 });
        assert!(ok.validate().is_ok());
        let mut c = ok.clone();
        c.radius = 0.0;
        assert!(c.validate().is_err());
        let mut c = ok.clone();
        c.rounds = 0;
        assert!(c.validate().is_err());
        let mut c = ok.clone();
        c.step = StepRule::Explicit(vec![1.0, 1.0]);
        assert!(c.validate().is_err());
        // λ > 1/V only warns
        let mut c = ok;
        c.lambda = 5.0;
        assert!(c.validate().is_ok());
    }

    #[test]
    fn reconstruct_small_cases() {
        let fm = FeatureMap::linear(1, 1).unwrap();
        let v = ValuationProfile::from_entries(1, 1, [(0, item(), 5.0)]).unwrap();
        let cfg = AuctionConfig::new(5, 0.0, 100.0, StepRule::VOverSqrtT { scale: 2.0 })
            .with_early_stop(false);
        let res = run_auction(&fm, &cfg, &mut Fixed(v, fm.bundles().to_vec())).unwrap();
        assert_eq!(reconstruct_w(&res.trace, &fm, 0.0, 1).unwrap(), vec![0.0]);
        // one-step unrolling: η¹ G^⊤(b¹ − q¹) with b¹ = {item}, q¹ = ∅ at p = 0
        assert_eq!(reconstruct_w(&res.trace, &fm, 0.0, 2).unwrap(), vec![2.0]);
        assert!(reconstruct_w(&res.trace, &fm, 0.0, 7).is_err());
    }

    #[test]
    fn radius_examples() {
        let n2m3 = FeatureMap::bundle_identity(3, 2).unwrap();
        assert!((select_radius(&n2m3, 1.0) - 3.0 * 7f64.sqrt()).abs() < 1e-12);
        let p2 = FeatureMap::polynomial(2, 4, 2).unwrap();
        assert!((select_radius(&p2, 1.0) - 48.0).abs() < 1e-12);
        let p1 = FeatureMap::linear(1, 1).unwrap();
        assert!((select_radius(&p1, 5.0) - 20.0).abs() < 1e-12);
    }

    #[test]
    fn kappa_examples() {
        let b = FeatureMap::bundle_identity(2, 2).unwrap();
        let want = 2f64.sqrt() * 2.0 + 6.0 * 3f64.sqrt();
        assert!((kappa_bound(&b) - want).abs() < 1e-12);
        assert!((kappa_bound(&FeatureMap::linear(1, 1).unwrap()) - 10.0).abs() < 1e-12);
        let p = FeatureMap::polynomial(2, 4, 3).unwrap();
        let want = (1.0 + 3f64.sqrt()) * 16.0 + 8.0 * 4.0 * 4.0;
        assert!((kappa_bound(&p) - want).abs() < 1e-12);
    }

    #[test]
    fn step_rules() {
        assert_eq!(StepRule::VOverSqrtT { scale: 2.0 }.eta(4), Some(1.0));
        let e = StepRule::Explicit(vec![0.5, 0.25]);
        assert_eq!(e.eta(2), Some(0.25));
        assert_eq!(e.eta(3), None);
        assert_eq!(e.eta(0), None);
    }
}
