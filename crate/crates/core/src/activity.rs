//! GARP activity rule: negative-cycle detection over bid/price histories
//! and Afriat-style recovery of a rationalizing valuation.
//!
//! Rounds in which an agent bid the same bundle are merged into one node.
//! The edge `B → x` carries `min_s p^s(x) − p^s(B)` over rounds `s` with
//! bid `B`, which preserves every cycle cost of the round graph while
//! keeping the node count at the number of distinct bids.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::encodings::Bundle;
use crate::error::{invalid, Error, Result};
use crate::market::{BidVector, PriceOracle, ValuationProfile};

pub const GARP_TOL: f64 = 1e-9;

/// Prices seen by each agent in one round, sorted by bundle.
/// The empty bundle is always priced at 0.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PriceSnapshot {
    per_agent: Vec<Vec<(Bundle, f64)>>,
}

impl PriceSnapshot {
    pub fn new(mut per_agent: Vec<Vec<(Bundle, f64)>>) -> Result<Self> {
        for (i, row) in per_agent.iter_mut().enumerate() {
            row.retain(|(x, _)| !x.is_empty());
            row.sort_by_key(|(x, _)| *x);
            if row.windows(2).any(|w| w[0].0 == w[1].0) {
                return invalid(format!("agent {i} snapshot prices a bundle twice"));
            }
            if let Some((x, p)) = row.iter().find(|(_, p)| !p.is_finite()) {
                return invalid(format!("agent {i} snapshot has non-finite price {p} for {x:?}"));
            }
        }
        Ok(PriceSnapshot { per_agent })
    }

    /// Evaluates `prices` at every bundle for every agent.
    pub fn capture(prices: &dyn PriceOracle, agents: usize, bundles: &[Bundle]) -> Result<Self> {
        let mut per_agent = Vec::with_capacity(agents);
        for i in 0..agents {
            let row: Result<Vec<_>> = bundles
                .iter()
                .filter(|x| !x.is_empty())
                .map(|&x| Ok((x, prices.price(i, x)?)))
                .collect();
            per_agent.push(row?);
        }
        Self::new(per_agent)
    }

    pub fn agents(&self) -> usize {
        self.per_agent.len()
    }

    pub fn price(&self, agent: usize, x: Bundle) -> Option<f64> {
        if x.is_empty() {
            return Some(0.0);
        }
        let row = self.per_agent.get(agent)?;
        row.binary_search_by_key(&x, |e| e.0).ok().map(|k| row[k].1)
    }

    /// Priced bundles of one agent, the empty bundle first.
    pub fn entries(&self, agent: usize) -> impl Iterator<Item = (Bundle, f64)> + '_ {
        std::iter::once((Bundle::EMPTY, 0.0)).chain(self.per_agent[agent].iter().copied())
    }
}

impl PriceOracle for PriceSnapshot {
    fn price(&self, agent: usize, x: Bundle) -> Result<f64> {
        PriceSnapshot::price(self, agent, x)
            .ok_or_else(|| Error::InvalidInput(format!("snapshot has no price for agent {agent}, bundle {x:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRound {
    pub round: usize,
    pub bid: BidVector,
    pub prices: PriceSnapshot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub agents: usize,
    pub items: usize,
    pub rounds: Vec<HistoryRound>,
}

impl History {
    pub fn new(agents: usize, items: usize) -> Self {
        History { agents, items, rounds: Vec::new() }
    }

    pub fn push(&mut self, round: usize, bid: BidVector, prices: PriceSnapshot) {
        self.rounds.push(HistoryRound { round, bid, prices });
    }

    /// Round indices strictly increase, shapes match, and every snapshot
    /// prices every bundle the agent bids anywhere in the history.
    pub fn validate(&self) -> Result<()> {
        for pair in self.rounds.windows(2) {
            if pair[1].round <= pair[0].round {
                return invalid(format!(
                    "round indices must increase, got {} after {}",
                    pair[1].round, pair[0].round
                ));
            }
        }
        for r in &self.rounds {
            if r.bid.bundles().len() != self.agents || r.prices.agents() != self.agents {
                return invalid(format!("round {} does not list {} agents", r.round, self.agents));
            }
            if let Some(x) = r.bid.bundles().iter().find(|x| !x.fits(self.items)) {
                return invalid(format!("round {} bids {x:?} beyond {} items", r.round, self.items));
            }
        }
        for i in 0..self.agents {
            let mut bids: Vec<Bundle> = self.rounds.iter().map(|r| r.bid.bundles()[i]).collect();
            bids.sort();
            bids.dedup();
            for r in &self.rounds {
                if let Some(x) = bids.iter().find(|&&x| r.prices.price(i, x).is_none()) {
                    return invalid(format!(
                        "incomplete price snapshot: round {} has no price for agent {i}, bundle {x:?}",
                        r.round
                    ));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum GarpOutcome {
    Consistent,
    Violation {
        agent: usize,
        /// Round indices `t_1 → t_2 → … → t_1` of a negative cycle.
        rounds: Vec<usize>,
        /// The agent's cycle sum (strictly negative).
        agent_sum: f64,
        /// The same round cycle evaluated on joint bid vectors, when every
        /// needed price is available.
        joint_sum: Option<f64>,
    },
}

impl GarpOutcome {
    pub fn is_consistent(&self) -> bool {
        matches!(self, GarpOutcome::Consistent)
    }
}

/// Revealed-preference graph of one agent.
#[derive(Debug, Clone, Default)]
struct RevealedGraph {
    nodes: Vec<Bundle>,
    /// `rows[j][x] = (min_s p^s(x) − p^s(nodes[j]), argmin s)`
    rows: Vec<BTreeMap<Bundle, (f64, usize)>>,
}

enum CycleSearch {
    Potentials(Vec<f64>),
    Cycle(Vec<usize>),
}

impl RevealedGraph {
    fn observe(&mut self, round: usize, bid: Bundle, prices: impl Iterator<Item = (Bundle, f64)>) -> Result<()> {
        let prices: Vec<(Bundle, f64)> = prices.collect();
        let own = prices
            .iter()
            .find(|(x, _)| *x == bid)
            .map(|e| e.1)
            .ok_or_else(|| Error::InvalidInput(format!("round {round} has no price for its own bid {bid:?}")))?;
        let j = match self.nodes.iter().position(|&b| b == bid) {
            Some(j) => j,
            None => {
                self.nodes.push(bid);
                self.rows.push(BTreeMap::new());
                self.nodes.len() - 1
            }
        };
        let row = &mut self.rows[j];
        for (x, p) in prices {
            let c = p - own;
            row.entry(x)
                .and_modify(|e| {
                    if c < e.0 {
                        *e = (c, round);
                    }
                })
                .or_insert((c, round));
        }
        Ok(())
    }

    fn edge(&self, j: usize, k: usize) -> Result<(f64, usize)> {
        self.rows[j].get(&self.nodes[k]).copied().ok_or_else(|| {
            Error::InvalidInput(format!(
                "incomplete price snapshot: no price for {:?} in rounds bidding {:?}",
                self.nodes[k], self.nodes[j]
            ))
        })
    }

    /// Bellman-Ford from a zero-cost super-source.
    fn search(&self, tol: f64) -> Result<CycleSearch> {
        let k = self.nodes.len();
        let mut cost = vec![vec![0.0; k]; k];
        for (a, row) in cost.iter_mut().enumerate() {
            for (b, c) in row.iter_mut().enumerate() {
                if a != b {
                    *c = self.edge(a, b)?.0;
                }
            }
        }
        let mut dist = vec![0.0; k];
        let mut pred = vec![usize::MAX; k];
        let mut last = None;
        for _ in 0..=k {
            last = None;
            for a in 0..k {
                for b in 0..k {
                    if a != b && dist[a] + cost[a][b] < dist[b] - tol {
                        dist[b] = dist[a] + cost[a][b];
                        pred[b] = a;
                        last = Some(b);
                    }
                }
            }
            if last.is_none() {
                return Ok(CycleSearch::Potentials(dist));
            }
        }
        let mut x = last.expect("relaxation in the final pass");
        for _ in 0..k {
            x = pred[x];
        }
        let mut cycle = vec![x];
        let mut y = pred[x];
        while y != x {
            cycle.push(y);
            y = pred[y];
        }
        cycle.reverse();
        Ok(CycleSearch::Cycle(cycle))
    }

    /// Converts a node cycle into the witnessing round cycle and its cost.
    fn round_cycle(&self, nodes: &[usize]) -> Result<(Vec<usize>, f64)> {
        let mut rounds = Vec::with_capacity(nodes.len());
        let mut sum = 0.0;
        for (k, &a) in nodes.iter().enumerate() {
            let b = nodes[(k + 1) % nodes.len()];
            let (c, r) = self.edge(a, b)?;
            rounds.push(r);
            sum += c;
        }
        Ok((rounds, sum))
    }

    /// Afriat construction normalized so the empty bundle is worth 0.
    fn rationalize(&self, potentials: &[f64]) -> BTreeMap<Bundle, f64> {
        let mut v: BTreeMap<Bundle, f64> = BTreeMap::new();
        for (j, row) in self.rows.iter().enumerate() {
            for (&x, &(c, _)) in row {
                let cand = potentials[j] + c;
                v.entry(x).and_modify(|e| *e = e.min(cand)).or_insert(cand);
            }
        }
        let base = v.get(&Bundle::EMPTY).copied().unwrap_or(0.0);
        for e in v.values_mut() {
            *e -= base;
        }
        v.remove(&Bundle::EMPTY);
        v
    }
}

fn graphs_from_history(h: &History) -> Result<Vec<RevealedGraph>> {
    h.validate()?;
    let mut graphs = vec![RevealedGraph::default(); h.agents];
    for r in &h.rounds {
        for (i, g) in graphs.iter_mut().enumerate() {
            g.observe(r.round, r.bid.bundles()[i], r.prices.entries(i))?;
        }
    }
    Ok(graphs)
}

fn joint_cycle_sum(h: &History, rounds: &[usize]) -> Option<f64> {
    let by_round: BTreeMap<usize, &HistoryRound> = h.rounds.iter().map(|r| (r.round, r)).collect();
    let mut sum = 0.0;
    for (k, s) in rounds.iter().enumerate() {
        let from = by_round.get(s)?;
        let to = by_round.get(&rounds[(k + 1) % rounds.len()])?;
        for i in 0..h.agents {
            sum += from.prices.price(i, to.bid.bundles()[i])?
                - from.prices.price(i, from.bid.bundles()[i])?;
        }
    }
    Some(sum)
}

fn first_violation(graphs: &[RevealedGraph], tol: f64) -> Result<Option<(usize, Vec<usize>, f64)>> {
    for (i, g) in graphs.iter().enumerate() {
        if let CycleSearch::Cycle(nodes) = g.search(tol)? {
            let (rounds, sum) = g.round_cycle(&nodes)?;
            return Ok(Some((i, rounds, sum)));
        }
    }
    Ok(None)
}

/// Per-agent GARP check of a history.
pub fn check_garp(h: &History) -> Result<GarpOutcome> {
    check_garp_with_tol(h, GARP_TOL)
}

pub fn check_garp_with_tol(h: &History, tol: f64) -> Result<GarpOutcome> {
    let graphs = graphs_from_history(h)?;
    Ok(match first_violation(&graphs, tol)? {
        None => GarpOutcome::Consistent,
        Some((agent, rounds, agent_sum)) => {
            let joint_sum = joint_cycle_sum(h, &rounds);
            GarpOutcome::Violation { agent, rounds, agent_sum, joint_sum }
        }
    })
}

/// A valuation under which every recorded bid is a best response.
/// Bundles no snapshot prices get value 0.
pub fn recover_valuation(h: &History) -> Result<ValuationProfile> {
    let graphs = graphs_from_history(h)?;
    recover_from_graphs(&graphs, h.items, GARP_TOL)
}

fn recover_from_graphs(graphs: &[RevealedGraph], items: usize, tol: f64) -> Result<ValuationProfile> {
    let mut entries = Vec::new();
    for (i, g) in graphs.iter().enumerate() {
        let potentials = match g.search(tol)? {
            CycleSearch::Potentials(p) => p,
            CycleSearch::Cycle(_) => {
                return Err(Error::Precondition(format!(
                    "history of agent {i} violates GARP; no rationalizing valuation exists"
                )))
            }
        };
        entries.extend(g.rationalize(&potentials).into_iter().map(|(x, val)| (i, x, val)));
    }
    ValuationProfile::from_entries(graphs.len(), items, entries)
}

/// Incremental GARP state for a live auction: full price snapshots over a
/// fixed bundle set, folded into per-agent graphs as rounds arrive.
#[derive(Debug, Clone)]
pub struct GarpTracker {
    items: usize,
    bundles: Vec<Bundle>,
    graphs: Vec<RevealedGraph>,
    rounds: usize,
    tol: f64,
}

impl GarpTracker {
    pub fn new(agents: usize, items: usize, bundles: &[Bundle]) -> Self {
        GarpTracker {
            items,
            bundles: bundles.to_vec(),
            graphs: vec![RevealedGraph::default(); agents],
            rounds: 0,
            tol: GARP_TOL,
        }
    }

    pub fn rounds(&self) -> usize {
        self.rounds
    }

    pub fn capture(&self, prices: &dyn PriceOracle) -> Result<PriceSnapshot> {
        PriceSnapshot::capture(prices, self.graphs.len(), &self.bundles)
    }

    /// Would appending this round keep every agent consistent?
    pub fn accepts(&self, round: usize, bid: &BidVector, prices: &PriceSnapshot) -> Result<bool> {
        for (i, g) in self.graphs.iter().enumerate() {
            let mut g = g.clone();
            g.observe(round, bid.bundles()[i], prices.entries(i))?;
            if let CycleSearch::Cycle(_) = g.search(self.tol)? {
                return Ok(false);
            }
        }
        Ok(true)
    }

    pub fn record(&mut self, round: usize, bid: &BidVector, prices: &PriceSnapshot) -> Result<()> {
        if bid.bundles().len() != self.graphs.len() {
            return invalid("bid length differs from the tracked agent count");
        }
        for (i, g) in self.graphs.iter_mut().enumerate() {
            g.observe(round, bid.bundles()[i], prices.entries(i))?;
        }
        self.rounds += 1;
        Ok(())
    }

    pub fn check(&self) -> Result<GarpOutcome> {
        Ok(match first_violation(&self.graphs, self.tol)? {
            None => GarpOutcome::Consistent,
            Some((agent, rounds, agent_sum)) => {
                GarpOutcome::Violation { agent, rounds, agent_sum, joint_sum: None }
            }
        })
    }

    pub fn recover(&self) -> Result<ValuationProfile> {
        recover_from_graphs(&self.graphs, self.items, self.tol)
    }
}
