//! End-to-end acceptance suite. Runs every criterion, prints one
//! PASS/FAIL line each and exits non-zero if any fails.

use std::collections::BTreeMap;
use std::time::Instant;

use clockforge::activity::{check_garp, recover_valuation, GarpOutcome, History, PriceSnapshot};
use clockforge::auction::{
    self, reconstruct_w, regret_check, run_auction, AuctionConfig, AuctionResult, StepRule,
};
use clockforge::bidders::{
    oscillator_minimizer, GarpConstrained, NoiseFamily, NoiseSpec, Oscillator, Stochastic, Truthful,
};
use clockforge::encodings::{graded_subsets, Bundle, FeatureMap};
use clockforge::market::{self, BidVector, ValuationProfile};
use clockforge::vecops;
use clockforge::verify::{
    self, check_w_magnitude, duality_gap, price_distance, v_bound, ExpectedObjective, RateMetric,
    RateSetup,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    passed: bool,
    detail: String,
}

/// Runs collected for the regret and magnitude criteria.
#[derive(Default)]
struct Ledger {
    regret_checked: usize,
    regret_failures: Vec<String>,
    magnitude_checked: usize,
    magnitude_failures: Vec<String>,
}

impl Ledger {
    #[allow(clippy::too_many_arguments)]
    fn regret(
        &mut self,
        label: &str,
        fm: &FeatureMap,
        run: &AuctionResult,
        lambda: f64,
        c: f64,
        u: &[f64],
        v: Option<&ValuationProfile>,
    ) {
        self.regret_checked += 1;
        match regret_check(fm, run, lambda, c, u, v) {
            Ok(r) if r.holds(1e-9) => {}
            Ok(r) => self.regret_failures.push(format!(
                "{label}: regret {:.4} > bound {:.4}",
                r.weighted_regret, r.bound
            )),
            Err(e) => self.regret_failures.push(format!("{label}: {e}")),
        }
    }

    fn magnitude(&mut self, label: &str, fm: &FeatureMap, w: &[f64], v: f64) {
        self.magnitude_checked += 1;
        let m = check_w_magnitude(fm, w, v);
        if !m.passed {
            self.magnitude_failures.push(format!(
                "{label}: |w|inf {:.3} (bound {:.3}), |w|2 {:.3} (bound {:.3})",
                m.inf_norm, m.inf_bound, m.l2_norm, m.l2_bound
            ));
        }
    }
}

fn random_valuation(rng: &mut ChaCha8Rng, agents: usize, items: usize, bundles: &[Bundle], hi: i32) -> ValuationProfile {
    let mut entries = Vec::new();
    for i in 0..agents {
        for &x in bundles {
            entries.push((i, x, rng.random_range(0..=hi) as f64));
        }
    }
    ValuationProfile::from_entries(agents, items, entries).unwrap()
}

fn continuous_valuation(rng: &mut ChaCha8Rng, agents: usize, items: usize, bundles: &[Bundle], hi: f64) -> ValuationProfile {
    let mut entries = Vec::new();
    for i in 0..agents {
        for &x in bundles {
            entries.push((i, x, rng.random_range(0.0..hi)));
        }
    }
    ValuationProfile::from_entries(agents, items, entries).unwrap()
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(|a, b| a.total_cmp(b));
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

fn fixed_horizon(rounds: usize, lambda: f64, radius: f64, c: f64) -> AuctionConfig {
    AuctionConfig::new(rounds, lambda, radius, StepRule::VOverSqrtT { scale: c })
        .with_early_stop(false)
        .with_objective_every(0)
}

fn project(w: &[f64], r: f64) -> Vec<f64> {
    auction::project_l2(w, r).0
}

// 1
fn duality_at_desk_scale(ledger: &mut Ledger) -> Outcome {
    let (n, m, rounds) = (2, 3, 50_000);
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let fm = FeatureMap::bundle_identity(m, n).unwrap().personalize();
    let mut within = 0;
    let mut worst: f64 = 0.0;
    for k in 0..50 {
        let v = random_valuation(&mut rng, n, m, fm.bundles(), 10);
        let vb = v.sup_norm_over(fm.bundles()).max(1.0);
        let radius = auction::select_radius(&fm, vb);
        let cfg = fixed_horizon(rounds, 0.0, radius, vb);
        let mut bidder = Truthful::new(v.clone(), fm.bundles());
        let run = run_auction(&fm, &cfg, &mut bidder).unwrap();
        let gap = duality_gap(&fm, &v, 0.0, &run).unwrap();
        let rel = gap / (vb * n as f64);
        worst = worst.max(rel);
        if gap <= 0.05 * vb * n as f64 {
            within += 1;
        }
        ledger.regret(&format!("duality #{k}"), &fm, &run, 0.0, vb, &run.averaged_w, Some(&v));
        ledger.magnitude(&format!("duality #{k}"), &fm, &run.averaged_w, vb);
    }
    Outcome {
        passed: within >= 45,
        detail: format!("{within}/50 instances within 0.05*V*n (worst gap/(V*n) = {worst:.4})"),
    }
}

struct LogitSetup {
    fm: FeatureMap,
    mean: ValuationProfile,
    noise: NoiseSpec,
    v: f64,
}

fn logit_setup(sigma: f64, seed: u64) -> LogitSetup {
    let fm = FeatureMap::linear(2, 2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mean = continuous_valuation(&mut rng, 2, 2, fm.bundles(), 2.0);
    let noise = NoiseSpec::new(NoiseFamily::Gumbel, sigma);
    let v = v_bound(Some(&noise), mean.sup_norm_over(fm.bundles()), 2, fm.bundle_count());
    LogitSetup { fm, mean, noise, v }
}

fn logit_run(s: &LogitSetup, rounds: usize, lambda: f64, seed: u64) -> AuctionResult {
    let radius = auction::select_radius(&s.fm, s.v);
    let cfg = fixed_horizon(rounds, lambda, radius, s.v).with_recorded_valuations(true);
    let mut bidder = Stochastic::new(s.mean.clone(), s.fm.bundles(), s.noise, seed).unwrap();
    run_auction(&s.fm, &cfg, &mut bidder).unwrap()
}

// 2
fn convergence_trend(ledger: &mut Ledger) -> Outcome {
    let s = logit_setup(0.3, 202);
    let checkpoints = [250, 500, 1000, 2000, 4000];
    let runs: Vec<AuctionResult> = (0..20).map(|k| logit_run(&s, 4000, 0.0, 1000 + k)).collect();
    let reference = logit_run(&s, 40_000, 0.0, 99_999);
    let expected = ExpectedObjective::sample(&s.mean, s.fm.bundles(), s.noise, 2000, 7).unwrap();
    let objective = |w: &[f64]| expected.value(&s.fm, w, 0.0);
    let setup = RateSetup {
        fm: &s.fm,
        lambda: 0.0,
        v_bound: s.v,
        delta: verify::DEFAULT_DELTA,
        checkpoints: &checkpoints,
        safety: 1.0,
    };
    let report = verify::rate_report(&runs, Some(&reference.averaged_w), RateMetric::ObjectiveGap, &objective, &setup)
        .unwrap();
    let first = median(report.raw.iter().map(|r| r[0]).collect());
    let last = median(report.raw.iter().map(|r| r[checkpoints.len() - 1]).collect());
    let radius = auction::select_radius(&s.fm, s.v);
    let u = project(&reference.averaged_w, radius);
    for (k, run) in runs.iter().enumerate() {
        ledger.regret(&format!("logit seed {k}"), &s.fm, run, 0.0, s.v, &u, None);
    }
    ledger.magnitude("logit reference", &s.fm, &reference.averaged_w, s.v);
    Outcome {
        passed: last < first && report.exceeded.is_empty(),
        detail: format!(
            "median gap {first:.5} @250 -> {last:.5} @4000; fitted C = {:.3e}; {} envelope exceedances",
            report.fitted_c,
            report.exceeded.len()
        ),
    }
}

// 3
fn price_convergence(ledger: &mut Ledger) -> Outcome {
    let s = logit_setup(0.3, 303);
    let lambda = 0.05;
    let reference = logit_run(&s, 80_000, lambda, 88_888);
    let mut decreasing = 0;
    let radius = auction::select_radius(&s.fm, s.v);
    let u = project(&reference.averaged_w, radius);
    for k in 0..20 {
        let run = logit_run(&s, 8000, lambda, 3000 + k);
        let early = price_distance(&s.fm, &auction::averaged_iterate(&run.trace, 500).unwrap(), &reference.averaged_w)
            .unwrap();
        let late = price_distance(&s.fm, &run.averaged_w, &reference.averaged_w).unwrap();
        if late < early {
            decreasing += 1;
        }
        ledger.regret(&format!("price seed {k}"), &s.fm, &run, lambda, s.v, &u, None);
    }
    ledger.magnitude("price reference", &s.fm, &reference.averaged_w, s.v);
    Outcome { passed: decreasing >= 15, detail: format!("{decreasing}/20 seeds closer at T=8000 than at T=500") }
}

// 4
fn oscillator_non_convergence() -> Outcome {
    let fm = FeatureMap::linear(1, 2).unwrap();
    let step = StepRule::VOverSqrtT { scale: 1.0 };
    let cfg = AuctionConfig::new(400, 0.0, 100.0, step.clone())
        .with_early_stop(false)
        .with_recorded_valuations(true);
    let mut osc = Oscillator::new(2, 1, step).unwrap();
    let run = run_auction(&fm, &cfg, &mut osc).unwrap();
    let item = Bundle::from_mask(1);

    // step masses rebuilt from the trace, keyed by the recorded item value,
    // plus the step-weighted objective accumulated on a price grid
    let grid: Vec<f64> = (-10..=30).map(|k| k as f64 / 10.0).collect();
    let mut weighted = vec![0.0; grid.len()];
    let mut even = 0.0;
    let mut odd = 0.0;
    let mut minimizers = Vec::new();
    let mut grid_checked = 0;
    let mut grid_agrees = true;
    let ends: Vec<usize> = osc.epoch_ends().to_vec();
    let mut next_end = ends.iter().peekable();
    for r in &run.trace {
        let v = r.valuation.as_ref().unwrap();
        if v.value(0, item) == 1.0 {
            even += r.eta;
        } else {
            odd += r.eta;
        }
        for (acc, &p) in weighted.iter_mut().zip(&grid) {
            *acc += r.eta * market::objective(&fm, &[p], v, 0.0).unwrap();
        }
        if next_end.peek() == Some(&&r.t) {
            next_end.next();
            let closed = oscillator_minimizer(even, odd);
            // the grid comparison is only meaningful away from float ties
            if (even - odd).abs() > 1e-9 * (even + odd) {
                let k = (0..grid.len()).min_by(|&a, &b| weighted[a].total_cmp(&weighted[b])).unwrap();
                grid_checked += 1;
                grid_agrees &= (grid[k] - closed).abs() < 1e-12;
            }
            minimizers.push(closed);
        }
    }
    let mut best_streak = 0;
    let mut streak = 0;
    for pair in minimizers.windows(2) {
        if (pair[0] - pair[1]).abs() == 1.0 {
            streak += 1;
            best_streak = best_streak.max(streak);
        } else {
            streak = 0;
        }
    }
    Outcome {
        passed: best_streak >= 4 && grid_agrees && grid_checked > 0,
        detail: format!(
            "{} epochs, {best_streak} consecutive unit jumps of the exact minimizer, grid check {} at {grid_checked} epoch ends",
            minimizers.len(),
            if grid_agrees { "agrees" } else { "DISAGREES" }
        ),
    }
}

fn brute_force_violation(h: &History, agent: usize) -> bool {
    let t = h.rounds.len();
    let cost = |s: usize, u: usize| {
        let from = &h.rounds[s];
        from.prices.price(agent, h.rounds[u].bid.bundles()[agent]).unwrap()
            - from.prices.price(agent, from.bid.bundles()[agent]).unwrap()
    };
    fn extend(path: &mut Vec<usize>, t: usize, cost: &dyn Fn(usize, usize) -> f64, found: &mut bool) {
        let start = path[0];
        let last = *path.last().unwrap();
        if path.len() >= 2 {
            let sum: f64 = path.windows(2).map(|w| cost(w[0], w[1])).sum::<f64>() + cost(last, start);
            if sum < 0.0 {
                *found = true;
                return;
            }
        }
        for next in (start + 1)..t {
            if !path.contains(&next) {
                path.push(next);
                extend(path, t, cost, found);
                path.pop();
                if *found {
                    return;
                }
            }
        }
    }
    let mut found = false;
    for start in 0..t {
        extend(&mut vec![start], t, &cost, &mut found);
        if found {
            return true;
        }
    }
    false
}

fn cycle_sum(h: &History, agent: usize, rounds: &[usize]) -> f64 {
    let at = |r: usize| h.rounds.iter().find(|x| x.round == r).unwrap();
    (0..rounds.len())
        .map(|k| {
            let from = at(rounds[k]);
            let to = at(rounds[(k + 1) % rounds.len()]);
            from.prices.price(agent, to.bid.bundles()[agent]).unwrap()
                - from.prices.price(agent, from.bid.bundles()[agent]).unwrap()
        })
        .sum()
}

// 5
fn garp_oracle_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let mut disagreements = 0;
    let mut bad_cycles = 0;
    let mut bad_recoveries = 0;
    let mut consistent = 0;
    for k in 0..500 {
        let agents = rng.random_range(1..=2);
        let items = rng.random_range(1..=3);
        let bundles = graded_subsets(items, items);
        let rounds = rng.random_range(1..=6);
        let truthful = k % 2 == 0;
        let v = random_valuation(&mut rng, agents, items, &bundles, 10);
        let mut h = History::new(agents, items);
        for t in 0..rounds {
            let per_agent: Vec<Vec<(Bundle, f64)>> = (0..agents)
                .map(|_| bundles.iter().map(|&x| (x, rng.random_range(0..=10) as f64)).collect())
                .collect();
            let snap = PriceSnapshot::new(per_agent).unwrap();
            let bid = if truthful {
                market::demand_with_oracle(&v, &bundles, &snap).unwrap().0
            } else {
                BidVector(
                    (0..agents)
                        .map(|_| {
                            let j = rng.random_range(0..=bundles.len());
                            if j == 0 { Bundle::EMPTY } else { bundles[j - 1] }
                        })
                        .collect(),
                )
            };
            h.push(3 * t + 1, bid, snap);
        }
        let brute = (0..agents).any(|i| brute_force_violation(&h, i));
        let outcome = check_garp(&h).unwrap();
        if brute == outcome.is_consistent() || (truthful && !outcome.is_consistent()) {
            disagreements += 1;
        }
        match outcome {
            GarpOutcome::Violation { agent, rounds, agent_sum, .. } => {
                let s = cycle_sum(&h, agent, &rounds);
                if s >= 0.0 || s.is_nan() || (s - agent_sum).abs() > 1e-9 {
                    bad_cycles += 1;
                }
            }
            GarpOutcome::Consistent => {
                consistent += 1;
                let rv = recover_valuation(&h).unwrap();
                for r in &h.rounds {
                    for i in 0..agents {
                        let b = r.bid.bundles()[i];
                        let chosen = rv.value(i, b) - r.prices.price(i, b).unwrap();
                        let ok = std::iter::once(Bundle::EMPTY)
                            .chain(bundles.iter().copied())
                            .all(|x| chosen >= rv.value(i, x) - r.prices.price(i, x).unwrap() - 1e-9);
                        if !ok {
                            bad_recoveries += 1;
                        }
                    }
                }
            }
        }
    }
    Outcome {
        passed: disagreements == 0 && bad_cycles == 0 && bad_recoveries == 0,
        detail: format!(
            "500 histories ({consistent} consistent): {disagreements} disagreements, {bad_cycles} bad cycles, {bad_recoveries} unrationalized rounds"
        ),
    }
}

// 6
fn garp_restores_convergence(ledger: &mut Ledger) -> Outcome {
    let s = logit_setup(1.0, 606);
    let radius = auction::select_radius(&s.fm, s.v);
    let mut gap_down = 0;
    let mut price_down = 0;
    let mut repairs = 0;
    for k in 0..10u64 {
        let mut trends = [false; 2];
        for (slot, lambda) in [(0usize, 0.0), (1, 0.05)] {
            let inner = Stochastic::new(s.mean.clone(), s.fm.bundles(), s.noise, 6000 + k).unwrap();
            let mut bidder = GarpConstrained::new(inner, 2, 2, s.fm.bundles());
            let run = run_auction(&s.fm, &fixed_horizon(8000, lambda, radius, s.v), &mut bidder).unwrap();
            repairs += bidder.repairs();
            assert!(bidder.tracker().check().unwrap().is_consistent());
            let v_star = bidder.tracker().recover().unwrap();
            let v_sup = v_star.sup_norm_over(s.fm.bundles()).max(1e-9);
            let ref_radius = radius.max(auction::select_radius(&s.fm, v_sup));
            let mut truthful = Truthful::new(v_star.clone(), s.fm.bundles());
            let reference =
                run_auction(&s.fm, &fixed_horizon(80_000, lambda, ref_radius, v_sup), &mut truthful).unwrap();
            let early = auction::averaged_iterate(&run.trace, 500).unwrap();
            trends[slot] = if lambda == 0.0 {
                let d = |w: &[f64]| market::objective(&s.fm, w, &v_star, 0.0).unwrap();
                d(&run.averaged_w) - d(&reference.averaged_w) < d(&early) - d(&reference.averaged_w)
            } else {
                price_distance(&s.fm, &run.averaged_w, &reference.averaged_w).unwrap()
                    < price_distance(&s.fm, &early, &reference.averaged_w).unwrap()
            };
            ledger.regret(
                &format!("garp seed {k} lambda {lambda}"),
                &s.fm,
                &run,
                lambda,
                s.v,
                &project(&reference.averaged_w, radius),
                Some(&v_star),
            );
            if lambda == 0.0 {
                ledger.magnitude(&format!("garp reference {k}"), &s.fm, &reference.averaged_w, v_sup);
            }
        }
        gap_down += trends[0] as usize;
        price_down += trends[1] as usize;
    }
    Outcome {
        passed: gap_down >= 8 && price_down >= 8,
        detail: format!(
            "objective gap decreasing in {gap_down}/10 seeds, price distance in {price_down}/10 ({repairs} repaired bids)"
        ),
    }
}

// 7 (polynomial references; bundle references come from criteria 1 and 6)
fn polynomial_references(ledger: &mut Ledger) {
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    for k in 0..6 {
        let fm = FeatureMap::polynomial(2, 3, 2).unwrap();
        let fm = if k % 2 == 1 { fm.personalize() } else { fm };
        let v = random_valuation(&mut rng, 2, 3, fm.bundles(), 10);
        let vb = v.sup_norm_over(fm.bundles()).max(1.0);
        let radius = auction::select_radius(&fm, vb);
        let run = run_auction(&fm, &fixed_horizon(20_000, 0.0, radius, vb), &mut Truthful::new(v.clone(), fm.bundles()))
            .unwrap();
        ledger.magnitude(&format!("polynomial reference {k}"), &fm, &run.averaged_w, vb);
        ledger.regret(&format!("polynomial reference {k}"), &fm, &run, 0.0, vb, &run.averaged_w, Some(&v));
    }
}

fn random_feature_map(rng: &mut ChaCha8Rng) -> FeatureMap {
    let agents = rng.random_range(1..=3);
    let items = rng.random_range(1..=4);
    let fm = match rng.random_range(0..3) {
        0 => FeatureMap::linear(items, agents).unwrap(),
        1 => FeatureMap::polynomial(rng.random_range(1..=items), items, agents).unwrap(),
        _ => FeatureMap::bundle_identity(items, agents).unwrap(),
    };
    if rng.random_bool(0.5) { fm.personalize() } else { fm }
}

// 8
fn representer_identity(ledger: &mut Ledger) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let mut worst: f64 = 0.0;
    let mut projected_rounds = 0;
    for k in 0..100 {
        let fm = random_feature_map(&mut rng);
        let lambda = if k % 2 == 0 { 0.0 } else { 0.1 };
        let v = random_valuation(&mut rng, fm.agents(), fm.items(), fm.bundles(), 10);
        let radius = rng.random_range(0.5..3.0);
        let run = run_auction(&fm, &fixed_horizon(50, lambda, radius, 10.0), &mut Truthful::new(v.clone(), fm.bundles()))
            .unwrap();
        projected_rounds += run.trace.iter().filter(|r| r.gamma < 1.0).count();
        for t in 1..=51 {
            let direct: &[f64] = if t <= 50 { &run.trace[t - 1].w } else { &run.final_w };
            let rebuilt = reconstruct_w(&run.trace, &fm, lambda, t).unwrap();
            worst = worst.max(vecops::norm_inf(&vecops::sub(direct, &rebuilt)));
        }
        ledger.regret(&format!("representer run {k}"), &fm, &run, lambda, 10.0, &run.averaged_w, Some(&v));
    }
    Outcome {
        passed: worst <= 1e-9 && projected_rounds > 0,
        detail: format!("max coordinate error {worst:.2e} over 100 runs ({projected_rounds} projected rounds)"),
    }
}

// 9
fn subgradient_validity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    let mut pairs = 0;
    let mut violations = 0;
    let mut worst: f64 = 0.0;
    while pairs < 1000 {
        let fm = random_feature_map(&mut rng);
        let lambda = [0.0, 0.1, 0.5][rng.random_range(0..3)];
        let mean = random_valuation(&mut rng, fm.agents(), fm.items(), fm.bundles(), 10);
        let noise = NoiseSpec::new(NoiseFamily::Gaussian, 1.0);
        let cfg = fixed_horizon(20, lambda, 20.0, 10.0).with_recorded_valuations(true);
        let mut bidder = Stochastic::new(mean, fm.bundles(), noise, rng.random()).unwrap();
        let run = run_auction(&fm, &cfg, &mut bidder).unwrap();
        for r in &run.trace {
            let v = r.valuation.as_ref().unwrap();
            let base = market::objective(&fm, &r.w, v, lambda).unwrap();
            for _ in 0..100 {
                let w2: Vec<f64> = (0..fm.dim()).map(|_| rng.random_range(-15.0..15.0)).collect();
                let lhs = market::objective(&fm, &w2, v, lambda).unwrap();
                let rhs = base + vecops::dot(&r.g, &vecops::sub(&w2, &r.w));
                worst = worst.max(rhs - lhs);
                if lhs < rhs - 1e-9 {
                    violations += 1;
                }
            }
            pairs += 1;
        }
    }
    Outcome {
        passed: violations == 0,
        detail: format!("{pairs} pairs x 100 points: {violations} violations (largest excess {worst:.2e})"),
    }
}

// 10
fn v_bound_dominance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1010);
    let mut failures = Vec::new();
    let mut cases = 0;
    for family in [NoiseFamily::Gumbel, NoiseFamily::Gaussian, NoiseFamily::BoundedUniform] {
        for coords in [4usize, 16, 64] {
            for sigma in [0.1, 1.0] {
                let spec = NoiseSpec::new(family, sigma);
                let mean: Vec<f64> = (0..coords).map(|_| rng.random_range(0.0..1.0)).collect();
                let sup = vecops::norm_inf(&mean);
                let draws = 10_000;
                let total: f64 = (0..draws)
                    .map(|_| mean.iter().map(|m| (m + spec.draw(sigma, &mut rng)).abs()).fold(0.0, f64::max))
                    .sum();
                let empirical = total / draws as f64;
                let bound = v_bound(Some(&spec), sup, 1, coords);
                cases += 1;
                if empirical > bound {
                    failures.push(format!("{family:?} nl={coords} sigma={sigma}: {empirical:.4} > {bound:.4}"));
                }
            }
        }
    }
    Outcome {
        passed: failures.is_empty(),
        detail: if failures.is_empty() {
            format!("{cases} family/size/scale cases dominated")
        } else {
            failures.join("; ")
        },
    }
}

// 11
fn mobius_round_trip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1111);
    let mut cases = 0;
    let mut failures = 0;
    for m in 1..=4usize {
        let mut degrees = vec![1, 2, m];
        degrees.retain(|&r| r <= m);
        degrees.dedup();
        for r in degrees {
            let fm = FeatureMap::polynomial(r, m, 1).unwrap();
            for _ in 0..20 {
                let w: Vec<i64> = (0..fm.dim()).map(|_| rng.random_range(-50..=50)).collect();
                let prices: BTreeMap<Bundle, i64> = graded_subsets(m, m)
                    .into_iter()
                    .map(|x| (x, fm.price_with(&w, 0, x).unwrap()))
                    .collect();
                cases += 1;
                if fm.mobius_invert(&prices).unwrap() != w {
                    failures += 1;
                }
            }
        }
    }
    Outcome { passed: failures == 0, detail: format!("{cases} integer round-trips, {failures} mismatches") }
}

fn main() {
    let mut ledger = Ledger::default();
    let mut results: Vec<(usize, &str, Outcome, f64)> = Vec::new();
    let mut timed = |id: usize, name: &'static str, f: &mut dyn FnMut() -> Outcome| {
        let start = Instant::now();
        let out = f();
        results.push((id, name, out, start.elapsed().as_secs_f64()));
    };

    timed(1, "duality at desk scale", &mut || duality_at_desk_scale(&mut ledger));
    timed(2, "convergence trend", &mut || convergence_trend(&mut ledger));
    timed(3, "price convergence", &mut || price_convergence(&mut ledger));
    timed(4, "oscillator non-convergence", &mut oscillator_non_convergence);
    timed(5, "GARP oracle equivalence", &mut garp_oracle_equivalence);
    timed(6, "GARP restores convergence", &mut || garp_restores_convergence(&mut ledger));
    timed(8, "representer identity", &mut || representer_identity(&mut ledger));
    timed(9, "subgradient validity", &mut subgradient_validity);
    timed(10, "V-bound dominance", &mut v_bound_dominance);
    timed(11, "Mobius round-trip", &mut mobius_round_trip);
    timed(7, "magnitude bounds", &mut || {
        polynomial_references(&mut ledger);
        Outcome {
            passed: ledger.magnitude_failures.is_empty(),
            detail: format!(
                "{} reference optima checked, {} violations{}",
                ledger.magnitude_checked,
                ledger.magnitude_failures.len(),
                ledger.magnitude_failures.first().map(|f| format!(" (first: {f})")).unwrap_or_default()
            ),
        }
    });
    timed(12, "online regret inequality", &mut || Outcome {
        passed: ledger.regret_failures.is_empty(),
        detail: format!(
            "{} runs checked, {} violations{}",
            ledger.regret_checked,
            ledger.regret_failures.len(),
            ledger.regret_failures.first().map(|f| format!(" (first: {f})")).unwrap_or_default()
        ),
    });

    results.sort_by_key(|r| r.0);
    let mut all = true;
    for (id, name, out, secs) in &results {
        all &= out.passed;
        println!(
            "criterion {id:>2} {:<4} {name}: {} [{secs:.1}s]",
            if out.passed { "PASS" } else { "FAIL" },
            out.detail
        );
    }
    let passed = results.iter().filter(|r| r.2.passed).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if !all {
        std::process::exit(1);
    }
}
