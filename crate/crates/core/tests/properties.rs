use std::collections::BTreeMap;

use clockforge::activity::{check_garp, recover_valuation, History, PriceSnapshot};
use clockforge::auction::{project_l2, run_auction, AuctionConfig, StepRule};
use clockforge::bidders::Truthful;
use clockforge::encodings::{graded_subsets, Bundle, FeatureMap};
use clockforge::market::{self, AllocationVector, BidVector, ValuationProfile};
use clockforge::vecops;
use clockforge::verify::{self, DualCandidate};
use proptest::prelude::*;

/// (agents, items, scheme selector, degree selector, personalized)
fn shape() -> impl Strategy<Value = (usize, usize, u8, usize, bool)> {
    (1usize..=3, 1usize..=4, 0u8..3, 1usize..=4, any::<bool>())
}

fn build(shape: (usize, usize, u8, usize, bool)) -> FeatureMap {
    let (n, m, scheme, degree, personal) = shape;
    let fm = match scheme {
        0 => FeatureMap::linear(m, n).unwrap(),
        1 => FeatureMap::polynomial(degree.min(m), m, n).unwrap(),
        _ => FeatureMap::bundle_identity(m, n).unwrap(),
    };
    if personal {
        fm.personalize()
    } else {
        fm
    }
}

fn valuation(fm: &FeatureMap, raw: &[i32]) -> ValuationProfile {
    let mut entries = Vec::new();
    let mut k = 0;
    for i in 0..fm.agents() {
        for &x in fm.bundles() {
            entries.push((i, x, raw[k % raw.len()] as f64));
            k += 1;
        }
    }
    ValuationProfile::from_entries(fm.agents(), fm.items(), entries).unwrap()
}

fn params(fm: &FeatureMap, raw: &[f64]) -> Vec<f64> {
    (0..fm.dim()).map(|k| raw[k % raw.len()]).collect()
}

/// Every assignment of `∅ ∪ X` to agents, feasible or not.
fn all_assignments(fm: &FeatureMap) -> Vec<Vec<Bundle>> {
    let mut options = vec![Bundle::EMPTY];
    options.extend_from_slice(fm.bundles());
    let mut out = vec![vec![]];
    for _ in 0..fm.agents() {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                options.iter().map(move |&x| {
                    let mut p = prefix.clone();
                    p.push(x);
                    p
                })
            })
            .collect();
    }
    out
}

fn feasible(a: &[Bundle]) -> bool {
    AllocationVector::new(a.to_vec()).is_ok()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn empty_bundle_is_free(s in shape(), w in prop::collection::vec(-5.0f64..5.0, 1..8)) {
        let fm = build(s);
        let w = params(&fm, &w);
        for i in 0..fm.agents() {
            prop_assert_eq!(fm.price_of(&w, i, Bundle::EMPTY).unwrap(), 0.0);
        }
    }

    #[test]
    fn prices_are_linear_in_w(
        s in shape(),
        a in prop::collection::vec(-5.0f64..5.0, 1..8),
        b in prop::collection::vec(-5.0f64..5.0, 1..8),
    ) {
        let fm = build(s);
        let (a, b) = (params(&fm, &a), params(&fm, &b));
        let sum: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
        for i in 0..fm.agents() {
            for &x in fm.bundles() {
                let lhs = fm.price_of(&sum, i, x).unwrap();
                let rhs = fm.price_of(&a, i, x).unwrap() + fm.price_of(&b, i, x).unwrap();
                prop_assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + lhs.abs()));
            }
        }
    }

    #[test]
    fn row_norms_respect_the_g_norm(s in shape()) {
        let fm = build(s);
        let widest = (0..fm.agents())
            .flat_map(|i| fm.bundles().iter().map(move |&x| (i, x)))
            .map(|(i, x)| fm.encode(i, x).unwrap().norm())
            .fold(0.0, f64::max);
        prop_assert!(widest <= fm.g_norm_2inf() + 1e-12);
        if fm.base().degree().is_none_or(|r| r == 1) {
            prop_assert!((widest - fm.g_norm_2inf()).abs() < 1e-12);
        }
    }

    #[test]
    fn mobius_inverts_float_prices(m in 1usize..=4, r in 1usize..=4, w in prop::collection::vec(-3.0f64..3.0, 1..16)) {
        let fm = FeatureMap::polynomial(r.min(m), m, 1).unwrap();
        let w = params(&fm, &w);
        let prices: BTreeMap<Bundle, f64> = graded_subsets(m, m)
            .into_iter()
            .map(|x| (x, fm.price_of(&w, 0, x).unwrap()))
            .collect();
        let back = fm.mobius_invert(&prices).unwrap();
        for (a, b) in back.iter().zip(&w) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn supply_matches_exhaustive_search(s in shape(), w in prop::collection::vec(-4.0f64..6.0, 1..16)) {
        let fm = build(s);
        let w = params(&fm, &w);
        let (q, revenue) = market::supply_response(&fm, &w).unwrap();
        let best = all_assignments(&fm)
            .into_iter()
            .filter(|a| feasible(a))
            .map(|a| a.iter().enumerate().map(|(i, &x)| fm.price_of(&w, i, x).unwrap()).sum::<f64>())
            .fold(f64::NEG_INFINITY, f64::max);
        prop_assert!((revenue - best).abs() < 1e-9);
        let realized: f64 = q.bundles().iter().enumerate().map(|(i, &x)| fm.price_of(&w, i, x).unwrap()).sum();
        prop_assert!((realized - revenue).abs() < 1e-9);
    }

    #[test]
    fn demand_matches_exhaustive_search(
        s in shape(),
        w in prop::collection::vec(-2.0f64..8.0, 1..16),
        raw in prop::collection::vec(0i32..=10, 1..16),
    ) {
        let fm = build(s);
        let w = params(&fm, &w);
        let v = valuation(&fm, &raw);
        let (bid, u) = market::demand_response(&fm, &w, &v).unwrap();
        let mut total = 0.0;
        for i in 0..fm.agents() {
            let mut best = (Bundle::EMPTY, 0.0);
            for &x in fm.bundles() {
                let ux = v.value(i, x) - fm.price_of(&w, i, x).unwrap();
                if ux > best.1 || (ux == best.1 && x.mask() < best.0.mask()) {
                    best = (x, ux);
                }
            }
            prop_assert_eq!(bid.bundles()[i], best.0);
            total += best.1;
        }
        prop_assert!((u - total).abs() < 1e-9);
    }

    #[test]
    fn efficient_welfare_dominates_every_allocation(s in shape(), raw in prop::collection::vec(0i32..=10, 1..16)) {
        let fm = build(s);
        let v = valuation(&fm, &raw);
        let (_, welfare) = market::efficient_allocation(&v, fm.bundles()).unwrap();
        let best = all_assignments(&fm)
            .into_iter()
            .filter(|a| feasible(a))
            .map(|a| a.iter().enumerate().map(|(i, &x)| v.value(i, x)).sum::<f64>())
            .fold(0.0, f64::max);
        prop_assert_eq!(welfare, best);
    }

    #[test]
    fn objective_is_midpoint_convex(
        s in shape(),
        a in prop::collection::vec(-5.0f64..10.0, 1..16),
        b in prop::collection::vec(-5.0f64..10.0, 1..16),
        raw in prop::collection::vec(0i32..=10, 1..16),
        lambda in 0.0f64..1.0,
    ) {
        let fm = build(s);
        let (a, b) = (params(&fm, &a), params(&fm, &b));
        let v = valuation(&fm, &raw);
        let mid: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 0.5 * (x + y)).collect();
        let d = |w: &[f64]| market::objective(&fm, w, &v, lambda).unwrap();
        prop_assert!(d(&mid) <= 0.5 * (d(&a) + d(&b)) + 1e-9);
    }

    #[test]
    fn projection_norm_identity(w in prop::collection::vec(-100.0f64..100.0, 1..12), r in 0.01f64..50.0) {
        let (p, gamma) = project_l2(&w, r);
        let norm = vecops::norm2(&w);
        prop_assert!((vecops::norm2(&p) - norm.min(r)).abs() < 1e-12 * (1.0 + r));
        prop_assert!(gamma > 0.0 && gamma <= 1.0);
    }

    #[test]
    fn runs_stay_in_the_ball_and_are_deterministic(
        s in shape(),
        raw in prop::collection::vec(0i32..=10, 1..16),
        radius in 0.2f64..20.0,
        lambda in prop::sample::select(vec![0.0, 0.05, 0.5]),
    ) {
        let fm = build(s);
        let v = valuation(&fm, &raw);
        let cfg = AuctionConfig::new(60, lambda, radius, StepRule::VOverSqrtT { scale: 10.0 })
            .with_early_stop(false);
        let a = run_auction(&fm, &cfg, &mut Truthful::new(v.clone(), fm.bundles())).unwrap();
        let b = run_auction(&fm, &cfg, &mut Truthful::new(v, fm.bundles())).unwrap();
        prop_assert_eq!(&a, &b);
        for r in a.trace.iter().skip(1) {
            prop_assert!(r.w_norm <= radius * (1.0 + 1e-12));
        }
        let total: f64 = a.averaging_weights().iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        if lambda == 0.0 {
            for pair in a.trace.windows(2) {
                if pair[0].bid.bundles() == pair[0].alloc.bundles() {
                    prop_assert_eq!(&pair[1].w, &pair[0].w);
                }
            }
        }
    }

    #[test]
    fn truthful_histories_pass_garp_and_are_rationalized(
        n in 1usize..=2,
        m in 1usize..=3,
        raw in prop::collection::vec(0i32..=10, 1..16),
        prices in prop::collection::vec(0i32..=10, 8..64),
        rounds in 1usize..=8,
    ) {
        let bundles = graded_subsets(m, m);
        let fm = FeatureMap::bundle_identity(m, n).unwrap();
        let v = valuation(&fm, &raw);
        let mut h = History::new(n, m);
        let mut k = 0;
        for t in 0..rounds {
            let per_agent: Vec<Vec<(Bundle, f64)>> = (0..n)
                .map(|_| bundles.iter().map(|&x| { k += 1; (x, prices[k % prices.len()] as f64) }).collect())
                .collect();
            let snap = PriceSnapshot::new(per_agent).unwrap();
            let bid = market::demand_with_oracle(&v, &bundles, &snap).unwrap().0;
            h.push(t + 1, bid, snap);
        }
        prop_assert!(check_garp(&h).unwrap().is_consistent());
        let rv = recover_valuation(&h).unwrap();
        for r in &h.rounds {
            for i in 0..n {
                let b = r.bid.bundles()[i];
                let chosen = rv.value(i, b) - r.prices.price(i, b).unwrap();
                for &x in std::iter::once(&Bundle::EMPTY).chain(&bundles) {
                    prop_assert!(chosen >= rv.value(i, x) - r.prices.price(i, x).unwrap() - 1e-9);
                }
            }
        }
    }

    #[test]
    fn weak_duality_with_regularization(
        s in shape(),
        raw in prop::collection::vec(0i32..=10, 1..16),
        w in prop::collection::vec(-5.0f64..10.0, 1..16),
        picks in prop::collection::vec(0usize..1000, 4),
        lambda in 0.01f64..2.0,
    ) {
        let fm = build(s);
        let v = valuation(&fm, &raw);
        let w = params(&fm, &w);
        let assignments = all_assignments(&fm);
        let allocs: Vec<_> = assignments.iter().filter(|a| feasible(a)).collect();
        let b1 = BidVector(assignments[picks[0] % assignments.len()].clone());
        let b2 = BidVector(assignments[picks[1] % assignments.len()].clone());
        let q1 = AllocationVector::new(allocs[picks[2] % allocs.len()].clone()).unwrap();
        let q2 = AllocationVector::new(allocs[picks[3] % allocs.len()].clone()).unwrap();
        let cand = DualCandidate { bids: vec![(0.3, b1), (0.7, b2)], allocs: vec![(0.5, q1), (0.5, q2)] };
        let dual = verify::dual_value(&fm, &v, lambda, &cand).unwrap();
        let primal = verify::primal_value(&fm, &w, &v, lambda).unwrap();
        prop_assert!(dual <= primal + 1e-9);
    }

    #[test]
    fn efficient_welfare_lower_bounds_the_unregularized_primal(
        m in 1usize..=3,
        n in 1usize..=2,
        raw in prop::collection::vec(0i32..=10, 1..16),
        w in prop::collection::vec(-5.0f64..10.0, 1..16),
    ) {
        let fm = FeatureMap::bundle_identity(m, n).unwrap().personalize();
        prop_assert!(fm.has_full_row_rank());
        let v = valuation(&fm, &raw);
        let w = params(&fm, &w);
        let (_, welfare) = market::efficient_allocation(&v, fm.bundles()).unwrap();
        prop_assert!(welfare <= verify::primal_value(&fm, &w, &v, 0.0).unwrap() + 1e-9);
    }

    #[test]
    fn strong_convexity_distance(
        values in prop::collection::vec(0.0f64..10.0, 1..5),
        lambda in 0.05f64..2.0,
        offset in -5.0f64..5.0,
    ) {
        // one item, anonymous price p: D(p) = Σ(v_i − p)₊ + p₊ + λp²/2
        let n = values.len();
        let fm = FeatureMap::linear(1, n).unwrap();
        let item = Bundle::from_mask(1);
        let v = ValuationProfile::from_entries(n, 1, values.iter().enumerate().map(|(i, &x)| (i, item, x))).unwrap();
        let d = |p: f64| verify::primal_value(&fm, &[p], &v, lambda).unwrap();
        // exact minimizer: on each interval between breakpoints D is λp²/2 + ap + c
        let mut cuts: Vec<f64> = values.clone();
        cuts.push(0.0);
        cuts.sort_by(f64::total_cmp);
        let mut bounds = vec![f64::NEG_INFINITY];
        bounds.extend(&cuts);
        bounds.push(f64::INFINITY);
        let mut best = (0.0, d(0.0));
        for win in bounds.windows(2) {
            let (lo, hi) = (win[0], win[1]);
            let probe = if lo.is_finite() && hi.is_finite() { 0.5 * (lo + hi) } else if lo.is_finite() { lo + 1.0 } else { hi - 1.0 };
            let slope = -(values.iter().filter(|&&x| x > probe).count() as f64) + if probe > 0.0 { 1.0 } else { 0.0 };
            let p = (-slope / lambda).clamp(lo, hi);
            if p.is_finite() && d(p) < best.1 {
                best = (p, d(p));
            }
        }
        let w_star = best.0;
        let w = w_star + offset;
        let eps = d(w) - best.1;
        prop_assert!(eps >= -1e-12);
        prop_assert!((w - w_star).powi(2) <= 2.0 * eps / lambda + 1e-9);
    }
}
