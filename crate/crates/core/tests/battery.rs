//! Randomized cross-verification of the closed forms against the
//! brute-force user simulator.

use prio_market_core::equilibrium::{
    cp_revenue, masses_all_dual, masses_multi, masses_single, prioritization_deltas,
};
use prio_market_core::oracle::{compare_masses, random_full_assumption_scenarios, simulate_users};
use prio_market_core::{CpProfile, DelayProfile, MarketParams};

const BATTERY_SEED: u64 = 0x5eed_2026;

#[test]
fn battery_masses_match_and_adjacency_holds() {
    let scenarios = random_full_assumption_scenarios(BATTERY_SEED, 50);
    assert_eq!(scenarios.len(), 50);
    for (i, sc) in scenarios.iter().enumerate() {
        let analytic = masses_multi(&sc.params, &sc.cps, &sc.delays)
            .unwrap_or_else(|e| panic!("scenario {i}: {e}"));
        let run = simulate_users(&sc.params, &sc.cps, &sc.delays, 10_001).unwrap();
        let report = compare_masses(&analytic, &run, None).unwrap();
        assert!(
            report.pass,
            "scenario {i}: max error {} over tolerance {}",
            report.max_error, report.tolerance
        );
        assert_eq!(report.adjacency_violations, 0, "scenario {i}");
        assert!(
            (analytic.primary_total() - 1.0).abs() < 1e-12,
            "scenario {i}: primaries sum to {}",
            analytic.primary_total()
        );
    }
}

#[test]
fn battery_competitor_totals_are_invariant() {
    // Prioritizing one CP leaves every competitor's total mass untouched;
    // algebraic identity, asserted tight.
    let scenarios = random_full_assumption_scenarios(BATTERY_SEED + 1, 10);
    for sc in &scenarios {
        let defaults = DelayProfile::uniform(&sc.params);
        let mut prio = DelayProfile::uniform(&sc.params);
        let target = 1 + (sc.params.cp_count / 2);
        prio.set(target, 0.82 * sc.params.default_delay);
        let deltas = prioritization_deltas(&sc.params, &sc.cps, &defaults, &prio).unwrap();
        for (j, d) in deltas.iter().enumerate() {
            if j + 1 != target {
                assert!(d.dn.abs() <= 1e-12, "CP{} moved by {}", j + 1, d.dn);
            }
        }
    }
}

fn table2() -> (MarketParams, Vec<CpProfile>) {
    let params = MarketParams {
        base_value: 100.0,
        transport_cost: 500.0,
        residual_rate: 0.5,
        ad_attenuation: 0.5,
        traffic_rate: 5.0,
        access_fee: 33.0,
        cp_count: 6,
        default_delay: 6.0,
    };
    let cps = (1..=6).map(|j| CpProfile::new(j, 10.0, 2.27)).collect();
    (params, cps)
}

#[test]
fn oracle_revenues_reproduce_competitor_drop() {
    // Apply the revenue formula to empirical masses on both sides of a
    // prioritization and compare against the closed-form competitor loss.
    let (params, cps) = table2();
    let d_star = 4.5471;
    let pre = simulate_users(&params, &cps, &DelayProfile::uniform(&params), 100_001).unwrap();
    let mut prio = DelayProfile::uniform(&params);
    prio.set(3, d_star);
    let post = simulate_users(&params, &cps, &prio, 100_001).unwrap();

    let r_pre = cp_revenue(&params, &cps[1], pre.masses.get(2), 0.0, false);
    let r_post = cp_revenue(&params, &cps[1], post.masses.get(2), 0.0, false);
    let expected = -params.traffic_rate
        * cps[1].ad_rate
        * (1.0 - params.ad_attenuation)
        * (params.default_delay - d_star)
        / (2.0 * params.transport_cost);
    // Mass errors are O(1/N); revenues scale them by lambda * r.
    let tol = params.traffic_rate * cps[1].ad_rate * 1e-3;
    assert!(
        ((r_post - r_pre) - expected).abs() < tol,
        "empirical drop {} vs closed form {}",
        r_post - r_pre,
        expected
    );
}

#[test]
fn tiny_residual_rate_matches_single_purchase_forms() {
    // With the residual rate far below every cutoff nobody dual-purchases;
    // the simulator must land on the single-purchase masses.
    let params = MarketParams {
        base_value: 200.0,
        residual_rate: 0.02,
        ..table2().0
    };
    let cps = table2().1;
    let mut delays = DelayProfile::uniform(&params);
    delays.set(3, 5.0);
    let analytic = masses_single(&params, &cps, &delays).unwrap();
    let run = simulate_users(&params, &cps, &delays, 20_001).unwrap();
    let report = compare_masses(&analytic, &run, None).unwrap();
    assert!(report.pass, "max error {}", report.max_error);
    assert_eq!(report.adjacency_violations, 0);
}

#[test]
fn large_residual_rate_matches_all_dual_forms() {
    // High base value with a residual rate above every cutoff: every user
    // dual-purchases and totals pin to the geometry.
    let params = MarketParams {
        base_value: 200.0,
        ..table2().0
    };
    let cps = table2().1;

    // Uniform delays: the capped totals are exact.
    let uniform = DelayProfile::uniform(&params);
    let analytic = masses_all_dual(&params, &cps, &uniform).unwrap();
    let run = simulate_users(&params, &cps, &uniform, 20_001).unwrap();
    let report = compare_masses(&analytic, &run, None).unwrap();
    assert!(
        report.pass,
        "uniform delays: max error {}",
        report.max_error
    );
    assert_eq!(report.adjacency_violations, 0);

    // Asymmetric delays: the primary split still follows the closed form,
    // but a band of width (d0 - d)/2t on each flank re-points its secondary
    // subscription to the prioritized CP across segment boundaries. The
    // capped totals are off by exactly that spillover.
    let mut delays = DelayProfile::uniform(&params);
    delays.set(3, 5.0);
    let analytic = masses_all_dual(&params, &cps, &delays).unwrap();
    assert!((analytic.get(3).n - 0.4).abs() < 1e-12);
    assert!((analytic.get(3).n1 - 0.202).abs() < 1e-12);
    let run = simulate_users(&params, &cps, &delays, 20_001).unwrap();
    for j in 1..=6 {
        assert!(
            (run.masses.get(j).n1 - analytic.get(j).n1).abs() <= 1e-3,
            "CP{j} primary mass"
        );
    }
    let spill = (params.default_delay - 5.0) / params.transport_cost;
    assert!(
        (run.masses.get(3).n - analytic.get(3).n - spill).abs() <= 1e-3,
        "prioritized CP gains {} secondaries, expected the {spill} spillover",
        run.masses.get(3).n - analytic.get(3).n
    );
}
