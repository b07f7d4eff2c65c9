use aeria::auction::{
    competitive_bound, consensus_estimate, optimal_y, reserve_price, roso, run_auction, AuctionParams, Demand,
};
use aeria::demand::{analyze, Bid, DemandOutcome};
use aeria::latency::{total_latency, TransmissionMode};
use aeria::oracle::{brute_force_single_price, check_outcome, random_bid, random_instance, random_profile};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn instance(seed: u64, max_users: usize, fit: bool) -> (Vec<Demand>, f64, f64) {
    random_instance(&mut ChaCha8Rng::seed_from_u64(seed), max_users, fit)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn estimate_on_grid_and_in_range(value in 1e-6f64..1e6, y in 1.01f64..50.0, eps in 0.0f64..1.0) {
        let e = consensus_estimate(value, y, eps).unwrap();
        prop_assert!(e <= value * (1.0 + 1e-12) && e > value / y * (1.0 - 1e-12));
        let k = e.ln() / y.ln() - eps;
        prop_assert!((k - k.round()).abs() < 1e-6, "exponent {k} off grid");
    }

    #[test]
    fn estimate_is_monotone(a in 1e-3f64..1e3, b in 1e-3f64..1e3, y in 1.5f64..10.0, eps in 0.0f64..1.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(consensus_estimate(lo, y, eps).unwrap() <= consensus_estimate(hi, y, eps).unwrap());
    }

    #[test]
    fn optimal_y_meets_first_order_identity(delta in 1.001f64..50.0) {
        let y = optimal_y(delta).unwrap();
        prop_assert!(y > delta);
        prop_assert!((competitive_bound(delta, y) - 1.0 / y).abs() < 1e-8);
        for probe in [y * 0.9, y * 1.1] {
            if probe > delta {
                prop_assert!(competitive_bound(delta, probe) <= competitive_bound(delta, y) + 1e-12);
            }
        }
    }

    #[test]
    fn roso_is_feasible_and_consistent(seed: u64, fit: bool) {
        let (d, f_e, p_res) = instance(seed, 30, fit);
        let r = roso(&d, f_e, p_res);
        prop_assert!(r.admitted_volume <= f_e);
        let admitted: f64 = r.admitted.iter().map(|&i| d[i].request).sum();
        prop_assert!(admitted < f_e || r.admitted.is_empty());
        prop_assert!(r.admitted.iter().all(|&i| d[i].density() >= p_res));
        if let Some(p) = r.price() {
            prop_assert!((p * r.admitted_volume - r.upper_revenue).abs() <= 1e-9 * r.upper_revenue);
        }
    }

    #[test]
    fn roso_matches_brute_force_when_all_fit(seed: u64) {
        let (d, f_e, p_res) = instance(seed, 12, true);
        let (_, brute) = brute_force_single_price(&d, f_e, p_res, 12).unwrap();
        prop_assert_eq!(roso(&d, f_e, p_res).upper_revenue, brute);
    }

    #[test]
    fn raising_a_budget_never_lowers_upper_revenue_when_all_fit(seed: u64, pick: usize, scale in 1.0f64..3.0) {
        let (mut d, f_e, p_res) = instance(seed, 12, true);
        let before = roso(&d, f_e, p_res).upper_revenue;
        let i = pick % d.len();
        d[i].budget *= scale;
        prop_assert!(roso(&d, f_e, p_res).upper_revenue >= before * (1.0 - 1e-12));
    }

    #[test]
    fn auction_outcome_satisfies_constraints(seed: u64, fit: bool, rental in 0.0f64..5.0, gamma in 0.0f64..1.0) {
        let (d, f_e, _) = instance(seed, 25, fit);
        let params = AuctionParams::new(f_e, rental, gamma);
        let run = run_auction(&d, &params, &mut ChaCha8Rng::seed_from_u64(seed ^ 0x5eed)).unwrap();
        let o = &run.outcome;
        let v = check_outcome(o, &d, f_e, rental, gamma);
        prop_assert!(v.is_empty(), "{:?}", v);
        let paid: f64 = o.allocations.iter().map(|a| a.payment).sum();
        prop_assert!((paid - o.revenue).abs() <= 1e-9 * o.revenue.max(1.0));
        if o.traded() {
            prop_assert!(o.revenue >= params.profit_floor() * (1.0 - 1e-12));
            let served: f64 = o.winners.iter().map(|w| d.iter().find(|x| x.user_id == *w).unwrap().request).sum();
            prop_assert!((o.allocated() - served).abs() <= 1e-9 * served);
        } else {
            prop_assert_eq!(o.revenue, 0.0);
            prop_assert!(o.allocations.iter().all(|a| a.allocation == 0.0 && a.payment == 0.0));
        }
    }

    #[test]
    fn target_revenue_is_extracted_exactly(seed: u64) {
        let (d, f_e, _) = instance(seed, 25, true);
        let params = AuctionParams::new(f_e, 0.0, 0.0);
        let run = run_auction(&d, &params, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        if let (Some(c), true) = (run.centre, run.outcome.traded()) {
            prop_assert!((run.outcome.revenue - c.target).abs() <= 1e-9 * c.target);
            prop_assert!(c.target <= run.roso.upper_revenue / c.delta * (1.0 + 1e-12));
        }
    }

    #[test]
    fn reserve_scales_inversely_with_capacity(p_r in 0.0f64..10.0, gamma in 0.0f64..2.0, f_e in 1.0f64..1e13) {
        let a = reserve_price(p_r, gamma, f_e).unwrap();
        let b = reserve_price(p_r, gamma, 2.0 * f_e).unwrap();
        prop_assert!((a - 2.0 * b).abs() <= 1e-12 * a.max(1e-300));
    }

    #[test]
    fn budget_does_not_move_the_request(seed: u64, scale in 0.1f64..10.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let profile = random_profile(&mut rng);
        let (bid, link, f_e) = random_bid(&mut rng, &profile);
        let mode = TransmissionMode::Survival;
        let base = analyze(&bid, &profile, &link, f_e, mode).unwrap();
        let richer = Bid { budget: bid.budget * scale, ..bid.clone() };
        let moved = analyze(&richer, &profile, &link, f_e, mode).unwrap();
        match (base, moved) {
            (DemandOutcome::Request(a), DemandOutcome::Request(b)) => {
                prop_assert_eq!(a.partition, b.partition);
                prop_assert_eq!(a.request, b.request);
                prop_assert!((b.density - a.density * scale).abs() <= 1e-12 * b.density);
            }
            (a, b) => prop_assert_eq!(a, b),
        }
    }

    #[test]
    fn extra_allocation_only_helps_latency(seed: u64, extra in 1.0f64..10.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let profile = random_profile(&mut rng);
        let (bid, link, f_e) = random_bid(&mut rng, &profile);
        let mode = TransmissionMode::Survival;
        if let DemandOutcome::Request(r) = analyze(&bid, &profile, &link, f_e, mode).unwrap() {
            let at = total_latency(&profile, bid.sigma, r.partition, r.request, &link, mode).unwrap();
            let more = total_latency(&profile, bid.sigma, r.partition, r.request * extra, &link, mode).unwrap();
            prop_assert!(more <= at);
            prop_assert!((at - bid.latency_req).abs() <= 1e-9 * bid.latency_req);
        }
    }

    #[test]
    fn workload_splits_are_monotone(seed: u64) {
        let profile = random_profile(&mut ChaCha8Rng::seed_from_u64(seed));
        for sigma in profile.sigmas() {
            let w = profile.workload(sigma).unwrap();
            prop_assert!(w.device.windows(2).all(|p| p[1] >= p[0] - 1e-9 * p[1].abs()));
            prop_assert!(w.edge.windows(2).all(|p| p[1] <= p[0] + 1e-9 * p[0].abs()));
            prop_assert_eq!(w.edge[w.layers], 0.0);
            prop_assert!(w.forward.iter().all(|&f| (0.0..=1.0 + 1e-12).contains(&f)));
        }
    }
}
