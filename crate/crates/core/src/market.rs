//! Economic oracles: agent demand, seller supply (exact winner
//! determination), indirect utilities, the pricing objective and its
//! subgradients.

use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::encodings::{Bundle, FeatureMap};
use crate::error::{invalid, Error, Result};
use crate::vecops;

/// Default cap on the item count for exact winner determination.
pub const DEFAULT_ITEM_CAP: usize = 12;

/// Price parameter `w ∈ R^d`; bundle prices are `p = Gw`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PriceParams(pub Vec<f64>);

impl PriceParams {
    pub fn zeros(dim: usize) -> Self {
        PriceParams(vec![0.0; dim])
    }

    pub fn norm(&self) -> f64 {
        vecops::norm2(&self.0)
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for PriceParams {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for PriceParams {
    fn from(v: Vec<f64>) -> Self {
        PriceParams(v)
    }
}

/// Per-agent bundle values. Missing entries are 0 and `v_i(∅) = 0` always.
///
/// Stored as a dense table per agent indexed by bundle mask.
#[derive(Debug, Clone, PartialEq)]
pub struct ValuationProfile {
    items: usize,
    values: Vec<Vec<f64>>,
}

impl ValuationProfile {
    pub fn zeros(agents: usize, items: usize) -> Self {
        ValuationProfile { items, values: vec![vec![0.0; 1usize << items]; agents] }
    }

    /// Builds a profile from sparse `(agent, bundle, value)` entries; later
    /// entries overwrite earlier ones.
    pub fn from_entries<I>(agents: usize, items: usize, entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, Bundle, f64)>,
    {
        if items > crate::encodings::MAX_ITEMS {
            return invalid(format!("valuation over {items} items is too large"));
        }
        let mut v = Self::zeros(agents, items);
        for (agent, x, value) in entries {
            v.set(agent, x, value)?;
        }
        Ok(v)
    }

    pub fn agents(&self) -> usize {
        self.values.len()
    }

    pub fn items(&self) -> usize {
        self.items
    }

    pub fn value(&self, agent: usize, x: Bundle) -> f64 {
        self.values[agent][x.mask() as usize]
    }

    pub fn set(&mut self, agent: usize, x: Bundle, value: f64) -> Result<()> {
        if agent >= self.values.len() {
            return invalid(format!("agent {agent} out of range"));
        }
        if !x.fits(self.items) {
            return invalid(format!("bundle {x:?} does not fit {} items", self.items));
        }
        if !value.is_finite() {
            return invalid(format!("non-finite value for agent {agent}, bundle {x:?}"));
        }
        if x.is_empty() && value != 0.0 {
            return invalid("the empty bundle must have value 0");
        }
        self.values[agent][x.mask() as usize] = value;
        Ok(())
    }

    pub(crate) fn shift(&mut self, agent: usize, x: Bundle, delta: f64) {
        if !x.is_empty() {
            self.values[agent][x.mask() as usize] += delta;
        }
    }

    /// `‖v‖_∞` over the given bundle set.
    pub fn sup_norm_over(&self, bundles: &[Bundle]) -> f64 {
        self.values
            .iter()
            .flat_map(|row| bundles.iter().map(move |x| row[x.mask() as usize].abs()))
            .fold(0.0, f64::max)
    }

    /// `‖v‖_∞` over every stored bundle.
    pub fn sup_norm(&self) -> f64 {
        self.values.iter().flatten().fold(0.0, |m, x| m.max(x.abs()))
    }

    /// Non-zero entries, agent-major then mask order.
    pub fn entries(&self) -> Vec<(usize, Bundle, f64)> {
        let mut out = Vec::new();
        for (i, row) in self.values.iter().enumerate() {
            for (mask, &val) in row.iter().enumerate() {
                if val != 0.0 {
                    out.push((i, Bundle::from_mask(mask as u32), val));
                }
            }
        }
        out
    }

    pub(crate) fn check_shape(&self, fm: &FeatureMap) -> Result<()> {
        if self.agents() != fm.agents() || self.items != fm.items() {
            return invalid(format!(
                "valuation is {}x{} (agents x items), feature map is {}x{}",
                self.agents(),
                self.items,
                fm.agents(),
                fm.items()
            ));
        }
        Ok(())
    }
}

/// One bundle per agent (possibly empty); an integer point of the joint
/// consumption set.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BidVector(pub Vec<Bundle>);

/// One bundle per agent with pairwise disjoint bundles; an integer point of
/// the production set.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AllocationVector(Vec<Bundle>);

impl BidVector {
    pub fn empty(agents: usize) -> Self {
        BidVector(vec![Bundle::EMPTY; agents])
    }

    pub fn bundles(&self) -> &[Bundle] {
        &self.0
    }

    /// Checks membership in `(X ∪ {∅})^n` for the given feature map.
    pub fn validate(&self, fm: &FeatureMap) -> Result<()> {
        if self.0.len() != fm.agents() {
            return invalid(format!(
                "bid lists {} bundles for {} agents",
                self.0.len(),
                fm.agents()
            ));
        }
        for (i, &x) in self.0.iter().enumerate() {
            if !fm.admits(x) {
                return invalid(format!("agent {i} bid on {x:?}, which is not a biddable bundle"));
            }
        }
        Ok(())
    }

    /// True when the bid is also a feasible allocation.
    pub fn is_feasible_allocation(&self) -> bool {
        AllocationVector::new(self.0.clone()).is_ok()
    }
}

impl AllocationVector {
    pub fn new(bundles: Vec<Bundle>) -> Result<Self> {
        let mut used = Bundle::EMPTY;
        for x in &bundles {
            if used.intersects(*x) {
                return invalid(format!("allocation {bundles:?} assigns an item twice"));
            }
            used = used.union(*x);
        }
        Ok(AllocationVector(bundles))
    }

    pub fn empty(agents: usize) -> Self {
        AllocationVector(vec![Bundle::EMPTY; agents])
    }

    pub fn bundles(&self) -> &[Bundle] {
        &self.0
    }

    pub fn as_bid(&self) -> BidVector {
        BidVector(self.0.clone())
    }
}

/// Bundle prices quoted to bidders, one bundle at a time.
pub trait PriceOracle {
    fn price(&self, agent: usize, x: Bundle) -> Result<f64>;
}

/// Prices `G w` evaluated lazily through a feature map.
#[derive(Debug, Clone, Copy)]
pub struct Quote<'a> {
    pub fm: &'a FeatureMap,
    pub w: &'a [f64],
}

impl<'a> Quote<'a> {
    pub fn new(fm: &'a FeatureMap, w: &'a [f64]) -> Self {
        Quote { fm, w }
    }
}

impl PriceOracle for Quote<'_> {
    fn price(&self, agent: usize, x: Bundle) -> Result<f64> {
        self.fm.price_of(self.w, agent, x)
    }
}

/// Utility-maximizing bundle of one agent over `X ∪ {∅}`.
///
/// Ties go to the smallest bitmask, so the empty bundle wins any tie it is
/// part of.
pub fn best_response(
    v: &ValuationProfile,
    agent: usize,
    bundles: &[Bundle],
    prices: &dyn PriceOracle,
) -> Result<(Bundle, f64)> {
    let mut best = (Bundle::EMPTY, 0.0);
    for &x in bundles {
        let utility = v.value(agent, x) - prices.price(agent, x)?;
        if utility > best.1 || (utility == best.1 && x.mask() < best.0.mask()) {
            best = (x, utility);
        }
    }
    Ok(best)
}

/// Joint demand under arbitrary quoted prices: one best response per agent
/// and the aggregate indirect utility.
pub fn demand_with_oracle(
    v: &ValuationProfile,
    bundles: &[Bundle],
    prices: &dyn PriceOracle,
) -> Result<(BidVector, f64)> {
    let mut bid = Vec::with_capacity(v.agents());
    let mut total = 0.0;
    for i in 0..v.agents() {
        let (x, u) = best_response(v, i, bundles, prices)?;
        bid.push(x);
        total += u;
    }
    Ok((BidVector(bid), total))
}

/// Demand correspondence selection `b ∈ U(Gw; v)` and `u(Gw; v)`.
pub fn demand_response(
    fm: &FeatureMap,
    w: &[f64],
    v: &ValuationProfile,
) -> Result<(BidVector, f64)> {
    v.check_shape(fm)?;
    demand_with_oracle(v, fm.bundles(), &Quote::new(fm, w))
}

/// Aggregate indirect utility `u(Gw; v)`.
pub fn indirect_utility(fm: &FeatureMap, w: &[f64], v: &ValuationProfile) -> Result<f64> {
    Ok(demand_response(fm, w, v)?.1)
}

/// Every utility-maximizing bundle per agent, within `tol`.
pub fn demand_ties(
    fm: &FeatureMap,
    w: &[f64],
    v: &ValuationProfile,
    tol: f64,
) -> Result<Vec<Vec<Bundle>>> {
    v.check_shape(fm)?;
    let mut out = Vec::with_capacity(fm.agents());
    for i in 0..fm.agents() {
        let mut scored = vec![(Bundle::EMPTY, 0.0)];
        for &x in fm.bundles() {
            scored.push((x, v.value(i, x) - fm.price_of(w, i, x)?));
        }
        let best = scored.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max);
        let mut ties: Vec<Bundle> =
            scored.into_iter().filter(|s| s.1 >= best - tol).map(|s| s.0).collect();
        ties.sort();
        out.push(ties);
    }
    Ok(out)
}

/// Weight table `weights[i][k]` for agent `i` and bundle `bundles[k]`.
fn price_table(fm: &FeatureMap, w: &[f64]) -> Result<Vec<Vec<f64>>> {
    (0..fm.agents())
        .map(|i| fm.bundles().iter().map(|&x| fm.price_of(w, i, x)).collect())
        .collect()
}

fn value_table(v: &ValuationProfile, bundles: &[Bundle]) -> Vec<Vec<f64>> {
    (0..v.agents())
        .map(|i| bundles.iter().map(|&x| v.value(i, x)).collect())
        .collect()
}

/// Depth-first branch and bound over agents for the maximum-weight
/// assignment of disjoint bundles.
struct Packer<'a> {
    /// per agent: (bundle, weight), weight > 0, ascending mask order
    candidates: Vec<Vec<(Bundle, f64)>>,
    /// suffix sums of per-agent best weights
    agent_bound: Vec<f64>,
    /// per item: best weight-per-item ratio among bundles containing it
    item_ratio: Vec<f64>,
    all_items: Bundle,
    current: Vec<Bundle>,
    best: Vec<Bundle>,
    best_value: f64,
    _bundles: &'a [Bundle],
}

impl<'a> Packer<'a> {
    fn new(items: usize, bundles: &'a [Bundle], weights: &[Vec<f64>]) -> Self {
        let n = weights.len();
        let mut candidates = Vec::with_capacity(n);
        let mut item_ratio = vec![0.0f64; items];
        for row in weights {
            let mut c: Vec<(Bundle, f64)> = bundles
                .iter()
                .zip(row)
                .filter(|(_, &wt)| wt > 0.0)
                .map(|(&x, &wt)| (x, wt))
                .collect();
            c.sort_by_key(|(x, _)| x.mask());
            for &(x, wt) in &c {
                let ratio = wt / x.len() as f64;
                for j in x.items() {
                    item_ratio[j] = item_ratio[j].max(ratio);
                }
            }
            candidates.push(c);
        }
        let mut agent_bound = vec![0.0; n + 1];
        for i in (0..n).rev() {
            let best = candidates[i].iter().map(|c| c.1).fold(0.0, f64::max);
            agent_bound[i] = agent_bound[i + 1] + best;
        }
        Packer {
            candidates,
            agent_bound,
            item_ratio,
            all_items: Bundle::from_mask(if items >= 32 { u32::MAX } else { (1u32 << items) - 1 }),
            current: vec![Bundle::EMPTY; n],
            best: vec![Bundle::EMPTY; n],
            best_value: 0.0,
            _bundles: bundles,
        }
    }

    fn bound(&self, agent: usize, used: Bundle) -> f64 {
        let free = Bundle::from_mask(self.all_items.mask() & !used.mask());
        let by_items: f64 = free.items().map(|j| self.item_ratio[j]).sum();
        self.agent_bound[agent].min(by_items)
    }

    fn search(&mut self, agent: usize, used: Bundle, value: f64) {
        if agent == self.current.len() {
            // lexicographic DFS order: only a strictly better value replaces
            if value > self.best_value {
                self.best_value = value;
                self.best.clone_from(&self.current);
            }
            return;
        }
        let slack = 1e-12 * (1.0 + self.best_value.abs());
        if value + self.bound(agent, used) + slack <= self.best_value {
            return;
        }
        self.current[agent] = Bundle::EMPTY;
        self.search(agent + 1, used, value);
        for k in 0..self.candidates[agent].len() {
            let (x, wt) = self.candidates[agent][k];
            if x.intersects(used) {
                continue;
            }
            self.current[agent] = x;
            self.search(agent + 1, used.union(x), value + wt);
        }
        self.current[agent] = Bundle::EMPTY;
    }
}

/// Exact maximum-weight packing. Among optimal assignments, returns the
/// lexicographically smallest under agent-then-bitmask order.
pub(crate) fn max_weight_packing(
    items: usize,
    bundles: &[Bundle],
    weights: &[Vec<f64>],
    item_cap: usize,
) -> Result<(AllocationVector, f64)> {
    if items > item_cap {
        return Err(Error::Capacity { items, cap: item_cap });
    }
    let mut packer = Packer::new(items, bundles, weights);
    packer.search(0, Bundle::EMPTY, 0.0);
    let alloc = AllocationVector::new(packer.best)?;
    Ok((alloc, packer.best_value))
}

/// Supply correspondence selection `q ∈ S(Gw)` and seller revenue `s(Gw)`.
pub fn supply_response(fm: &FeatureMap, w: &[f64]) -> Result<(AllocationVector, f64)> {
    supply_response_capped(fm, w, DEFAULT_ITEM_CAP)
}

pub fn supply_response_capped(
    fm: &FeatureMap,
    w: &[f64],
    item_cap: usize,
) -> Result<(AllocationVector, f64)> {
    if fm.items() > item_cap {
        return Err(Error::Capacity { items: fm.items(), cap: item_cap });
    }
    let table = price_table(fm, w)?;
    max_weight_packing(fm.items(), fm.bundles(), &table, item_cap)
}

/// Seller's indirect utility `s(Gw)`.
pub fn seller_revenue(fm: &FeatureMap, w: &[f64]) -> Result<f64> {
    Ok(supply_response(fm, w)?.1)
}

/// Welfare-maximizing allocation of `bundles` under `v`.
pub fn efficient_allocation(
    v: &ValuationProfile,
    bundles: &[Bundle],
) -> Result<(AllocationVector, f64)> {
    efficient_allocation_capped(v, bundles, DEFAULT_ITEM_CAP)
}

pub fn efficient_allocation_capped(
    v: &ValuationProfile,
    bundles: &[Bundle],
    item_cap: usize,
) -> Result<(AllocationVector, f64)> {
    let table = value_table(v, bundles);
    max_weight_packing(v.items(), bundles, &table, item_cap)
}

/// All feasible allocations whose revenue is within `tol` of `s(Gw)`,
/// built only from bundles priced above `tol` (the seller never hands out
/// a bundle it earns nothing on). Fails with a capacity error once more
/// than `max_count` are found.
pub fn supply_ties(
    fm: &FeatureMap,
    w: &[f64],
    tol: f64,
    max_count: usize,
) -> Result<Vec<AllocationVector>> {
    let (_, best) = supply_response(fm, w)?;
    let table = price_table(fm, w)?;
    let n = fm.agents();
    let candidates: Vec<Vec<(Bundle, f64)>> = table
        .iter()
        .map(|row| {
            let mut c: Vec<(Bundle, f64)> = fm
                .bundles()
                .iter()
                .zip(row)
                .filter(|(_, &p)| p > tol)
                .map(|(&x, &p)| (x, p))
                .collect();
            c.sort_by_key(|(x, _)| x.mask());
            c
        })
        .collect();
    let mut suffix = vec![0.0; n + 1];
    for i in (0..n).rev() {
        suffix[i] = suffix[i + 1] + candidates[i].iter().map(|c| c.1).fold(0.0, f64::max);
    }
    let mut out = Vec::new();
    let mut current = vec![Bundle::EMPTY; n];
    #[allow(clippy::too_many_arguments)]
    fn walk(
        i: usize,
        used: Bundle,
        value: f64,
        floor: f64,
        cands: &[Vec<(Bundle, f64)>],
        suffix: &[f64],
        current: &mut Vec<Bundle>,
        out: &mut Vec<AllocationVector>,
        max_count: usize,
    ) -> Result<()> {
        if value + suffix[i] < floor {
            return Ok(());
        }
        if i == current.len() {
            if out.len() >= max_count {
                return Err(Error::Capacity { items: used.len(), cap: max_count });
            }
            out.push(AllocationVector(current.clone()));
            return Ok(());
        }
        current[i] = Bundle::EMPTY;
        walk(i + 1, used, value, floor, cands, suffix, current, out, max_count)?;
        for &(x, p) in &cands[i] {
            if !x.intersects(used) {
                current[i] = x;
                walk(i + 1, used.union(x), value + p, floor, cands, suffix, current, out, max_count)?;
            }
        }
        current[i] = Bundle::EMPTY;
        Ok(())
    }
    walk(0, Bundle::EMPTY, 0.0, best - tol, &candidates, &suffix, &mut current, &mut out, max_count)?;
    Ok(out)
}

/// Regularized pricing objective `u(Gw; v) + s(Gw) + (λ/2)‖w‖²`.
pub fn objective(fm: &FeatureMap, w: &[f64], v: &ValuationProfile, lambda: f64) -> Result<f64> {
    let u = indirect_utility(fm, w, v)?;
    let s = seller_revenue(fm, w)?;
    Ok(u + s + 0.5 * lambda * vecops::dot(w, w))
}

/// `G^⊤ q - G^⊤ b` in feature space.
pub fn excess_supply(fm: &FeatureMap, b: &BidVector, q: &AllocationVector) -> Result<Vec<f64>> {
    if b.0.len() != fm.agents() || q.0.len() != fm.agents() {
        return invalid("bid or allocation length differs from the agent count");
    }
    let mut g = vec![0.0; fm.dim()];
    for i in 0..fm.agents() {
        fm.accumulate(&mut g, i, q.0[i], 1.0)?;
        fm.accumulate(&mut g, i, b.0[i], -1.0)?;
    }
    Ok(g)
}

/// Subgradient `G^⊤(q - b) + λw` of the objective at `w`, given a consistent
/// bid `b` and a revenue-maximizing allocation `q`.
pub fn subgradient(
    fm: &FeatureMap,
    w: &[f64],
    b: &BidVector,
    q: &AllocationVector,
    lambda: f64,
) -> Result<Vec<f64>> {
    if w.len() != fm.dim() {
        return invalid("price parameter dimension mismatch");
    }
    let mut g = excess_supply(fm, b, q)?;
    vecops::axpy(&mut g, lambda, w);
    Ok(g)
}
