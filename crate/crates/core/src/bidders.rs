//! Bidder populations: truthful, random-utility, the step-mass oscillator
//! and a GARP-enforcing wrapper around any of them.

use rand::distr::{Distribution, Open01, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::activity::{GarpTracker, History, PriceSnapshot};
use crate::auction::{Bidder, StepRule};
use crate::encodings::Bundle;
use crate::error::{Error, Result};
use crate::market::{self, BidVector, PriceOracle, ValuationProfile};

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseFamily {
    /// Zero-mean Gumbel (logit).
    Gumbel,
    /// Gaussian (probit).
    Gaussian,
    /// Uniform on `[-sigma, sigma]`.
    BoundedUniform,
}

/// Additive valuation noise per (agent, bundle) coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub family: NoiseFamily,
    pub sigma: f64,
    /// Scale of one extra draw per round added to every coordinate.
    #[serde(default)]
    pub shared_scale: f64,
}

impl NoiseSpec {
    pub fn new(family: NoiseFamily, sigma: f64) -> Self {
        NoiseSpec { family, sigma, shared_scale: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return Err(Error::InvalidConfig(format!("noise scale must be positive, got {}", self.sigma)));
        }
        if !(self.shared_scale >= 0.0) || !self.shared_scale.is_finite() {
            return Err(Error::InvalidConfig("shared noise scale must be nonnegative".into()));
        }
        Ok(())
    }

    /// Largest per-coordinate scale, counting the shared shock.
    pub fn sigma_max(&self) -> f64 {
        self.sigma + self.shared_scale
    }

    /// One zero-mean draw at the given scale.
    pub fn draw(&self, scale: f64, rng: &mut ChaCha8Rng) -> f64 {
        match self.family {
            NoiseFamily::Gumbel => {
                let u: f64 = Open01.sample(rng);
                -scale * (-u.ln()).ln() - scale * EULER_GAMMA
            }
            NoiseFamily::Gaussian => {
                let z: f64 = StandardNormal.sample(rng);
                scale * z
            }
            NoiseFamily::BoundedUniform => {
                let u: f64 = Uniform::new_inclusive(-1.0, 1.0).expect("valid range").sample(rng);
                scale * u
            }
        }
    }
}

/// Bids a best response at a fixed valuation.
#[derive(Debug, Clone)]
pub struct Truthful {
    values: ValuationProfile,
    bundles: Vec<Bundle>,
}

impl Truthful {
    pub fn new(values: ValuationProfile, bundles: &[Bundle]) -> Self {
        Truthful { values, bundles: bundles.to_vec() }
    }
}

impl Bidder for Truthful {
    fn bid(&mut self, _round: usize, prices: &dyn PriceOracle) -> Result<BidVector> {
        Ok(market::demand_with_oracle(&self.values, &self.bundles, prices)?.0)
    }

    fn realized_valuation(&self) -> Option<&ValuationProfile> {
        Some(&self.values)
    }
}

/// Draws `v^t = v̄ + ε^t` afresh each round and best-responds to it.
#[derive(Debug, Clone)]
pub struct Stochastic {
    mean: ValuationProfile,
    bundles: Vec<Bundle>,
    noise: NoiseSpec,
    rng: ChaCha8Rng,
    current: ValuationProfile,
}

impl Stochastic {
    pub fn new(mean: ValuationProfile, bundles: &[Bundle], noise: NoiseSpec, seed: u64) -> Result<Self> {
        noise.validate()?;
        Ok(Stochastic {
            current: mean.clone(),
            mean,
            bundles: bundles.to_vec(),
            noise,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn mean(&self) -> &ValuationProfile {
        &self.mean
    }

    /// Replaces the current valuation with a fresh draw and returns it.
    pub fn draw(&mut self) -> &ValuationProfile {
        self.current.clone_from(&self.mean);
        let shared = if self.noise.shared_scale > 0.0 {
            self.noise.draw(self.noise.shared_scale, &mut self.rng)
        } else {
            0.0
        };
        for i in 0..self.mean.agents() {
            for &x in &self.bundles {
                let eps = self.noise.draw(self.noise.sigma, &mut self.rng) + shared;
                self.current.shift(i, x, eps);
            }
        }
        &self.current
    }
}

impl Bidder for Stochastic {
    fn bid(&mut self, _round: usize, prices: &dyn PriceOracle) -> Result<BidVector> {
        self.draw();
        Ok(market::demand_with_oracle(&self.current, &self.bundles, prices)?.0)
    }

    fn realized_valuation(&self) -> Option<&ValuationProfile> {
        Some(&self.current)
    }
}

/// Two agents, one item, valued at 1 in even epochs and 0 in odd ones.
/// An epoch ends once the step mass of its parity overtakes the other.
#[derive(Debug, Clone)]
pub struct Oscillator {
    step: StepRule,
    epoch: usize,
    even_mass: f64,
    odd_mass: f64,
    epoch_ends: Vec<usize>,
    masses_at_ends: Vec<(f64, f64)>,
    current: ValuationProfile,
}

impl Oscillator {
    pub fn new(agents: usize, items: usize, step: StepRule) -> Result<Self> {
        if agents != 2 || items != 1 {
            return Err(Error::InvalidConfig(format!(
                "the oscillator needs 2 agents and 1 item, got {agents} and {items}"
            )));
        }
        Ok(Oscillator {
            step,
            epoch: 1,
            even_mass: 0.0,
            odd_mass: 0.0,
            epoch_ends: Vec::new(),
            masses_at_ends: Vec::new(),
            current: ValuationProfile::zeros(2, 1),
        })
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    /// Last round of each completed epoch.
    pub fn epoch_ends(&self) -> &[usize] {
        &self.epoch_ends
    }

    /// `(even, odd)` accumulated step mass at each completed epoch's end.
    pub fn masses_at_ends(&self) -> &[(f64, f64)] {
        &self.masses_at_ends
    }

    fn item_value(epoch: usize) -> f64 {
        if epoch.is_multiple_of(2) {
            1.0
        } else {
            0.0
        }
    }
}

impl Bidder for Oscillator {
    fn bid(&mut self, round: usize, prices: &dyn PriceOracle) -> Result<BidVector> {
        let item = Bundle::from_mask(1);
        let value = Self::item_value(self.epoch);
        for i in 0..2 {
            self.current.set(i, item, value)?;
        }
        let bid = market::demand_with_oracle(&self.current, &[item], prices)?.0;

        let eta = self.step.eta(round).ok_or_else(|| Error::Protocol {
            round,
            reason: "oscillator step schedule does not cover this round".into(),
        })?;
        if self.epoch.is_multiple_of(2) {
            self.even_mass += eta;
        } else {
            self.odd_mass += eta;
        }
        let done = if self.epoch.is_multiple_of(2) {
            self.even_mass > self.odd_mass
        } else {
            self.odd_mass > self.even_mass
        };
        if done {
            self.epoch_ends.push(round);
            self.masses_at_ends.push((self.even_mass, self.odd_mass));
            self.epoch += 1;
        }
        Ok(bid)
    }

    fn realized_valuation(&self) -> Option<&ValuationProfile> {
        Some(&self.current)
    }
}

/// Exact minimizer of `2E·(1−p)₊ + 2O·(−p)₊ + (E+O)·p₊`, the step-weighted
/// oscillator objective with even mass `E` and odd mass `O`.
pub fn oscillator_minimizer(even_mass: f64, odd_mass: f64) -> f64 {
    let f = |p: f64| {
        2.0 * even_mass * (1.0 - p).max(0.0)
            + 2.0 * odd_mass * (-p).max(0.0)
            + (even_mass + odd_mass) * p.max(0.0)
    };
    // piecewise linear and coercive: a breakpoint is optimal
    if f(1.0) < f(0.0) {
        1.0
    } else {
        0.0
    }
}

/// Wraps a bidder so that the full bid history never violates GARP.
/// A proposed bid that would create a violation is replaced by the best
/// response under a valuation recovered from the history so far.
#[derive(Debug, Clone)]
pub struct GarpConstrained<B> {
    inner: B,
    bundles: Vec<Bundle>,
    tracker: GarpTracker,
    repairs: usize,
}

impl<B: Bidder> GarpConstrained<B> {
    pub fn new(inner: B, agents: usize, items: usize, bundles: &[Bundle]) -> Self {
        GarpConstrained {
            inner,
            bundles: bundles.to_vec(),
            tracker: GarpTracker::new(agents, items, bundles),
            repairs: 0,
        }
    }

    pub fn repairs(&self) -> usize {
        self.repairs
    }

    pub fn tracker(&self) -> &GarpTracker {
        &self.tracker
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }
}

impl<B: Bidder> Bidder for GarpConstrained<B> {
    fn bid(&mut self, round: usize, prices: &dyn PriceOracle) -> Result<BidVector> {
        let proposed = self.inner.bid(round, prices)?;
        let snapshot = self.tracker.capture(prices)?;
        let bid = if self.tracker.accepts(round, &proposed, &snapshot)? {
            proposed
        } else {
            self.repairs += 1;
            let v = self.tracker.recover()?;
            market::demand_with_oracle(&v, &self.bundles, &snapshot)?.0
        };
        self.tracker.record(round, &bid, &snapshot)?;
        Ok(bid)
    }

    fn realized_valuation(&self) -> Option<&ValuationProfile> {
        self.inner.realized_valuation()
    }
}

/// Standalone repair step over an explicit history: keeps `proposed` when
/// the extended history stays consistent, otherwise best-responds under the
/// valuation recovered from `history`.
pub fn garp_repair(
    history: &History,
    bundles: &[Bundle],
    round: usize,
    proposed: BidVector,
    prices: &PriceSnapshot,
) -> Result<BidVector> {
    let mut extended = history.clone();
    extended.push(round, proposed.clone(), prices.clone());
    if crate::activity::check_garp(&extended)?.is_consistent() {
        return Ok(proposed);
    }
    let v = crate::activity::recover_valuation(history)?;
    Ok(market::demand_with_oracle(&v, bundles, prices)?.0)
}

/// Any of the bidder models, selected at run time.
#[derive(Debug, Clone)]
#[allow(clippy::large_enum_variant)]
pub enum BidderModel {
    Truthful(Truthful),
    Stochastic(Stochastic),
    Oscillator(Oscillator),
    Garp(Box<GarpConstrained<BidderModel>>),
}

impl Bidder for BidderModel {
    fn bid(&mut self, round: usize, prices: &dyn PriceOracle) -> Result<BidVector> {
        match self {
            BidderModel::Truthful(b) => b.bid(round, prices),
            BidderModel::Stochastic(b) => b.bid(round, prices),
            BidderModel::Oscillator(b) => b.bid(round, prices),
            BidderModel::Garp(b) => b.bid(round, prices),
        }
    }

    fn realized_valuation(&self) -> Option<&ValuationProfile> {
        match self {
            BidderModel::Truthful(b) => b.realized_valuation(),
            BidderModel::Stochastic(b) => b.realized_valuation(),
            BidderModel::Oscillator(b) => b.realized_valuation(),
            BidderModel::Garp(b) => b.realized_valuation(),
        }
    }
}
