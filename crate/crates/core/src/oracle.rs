//! Brute-force verification: simulate a fine grid of users choosing their
//! best bundle over ALL CPs (not just adjacent pairs) and compare empirical
//! masses, revenues and welfare against the closed forms.
//!
//! The grid is deterministic rather than sampled: boundary error is O(1/N),
//! runs are perfectly reproducible, and no confidence intervals are needed.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::equilibrium::{masses_multi, CpMass, MassBreakdown};
use crate::market::{
    best_bundle, validate_assumptions, Bundle, CandidateSet, CpProfile, DelayProfile, MarketError,
    MarketParams, Regime,
};
use crate::welfare::user_welfare;
use crate::Result;

/// One empirical simulation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleRun {
    pub masses: MassBreakdown,
    /// Mean realized user welfare (access fee excluded, opt-outs contribute 0).
    pub welfare: f64,
    /// Grid users whose best all-CP bundle used a CP beyond their two nearest.
    pub adjacency_violations: usize,
    pub grid: usize,
}

/// Comparison of analytic against empirical masses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    /// Per-CP worst absolute error across (n, n1, n2).
    pub per_cp_error: Vec<f64>,
    pub max_error: f64,
    pub adjacency_violations: usize,
    pub grid: usize,
    pub tolerance: f64,
    pub pass: bool,
}

const POSITION_CHUNK: usize = 8192;

struct ChunkTally {
    primary: Vec<u64>,
    secondary: Vec<u64>,
    welfare: f64,
    violations: u64,
}

/// Evaluates the best all-CP bundle at `grid` equally spaced positions; each
/// user contributes mass 1/grid to its bundle's tallies.
///
/// Requires an odd grid of at least 10001 points so the lattice is symmetric
/// around the midpoint. Tallies are integers merged in chunk order, so the
/// output is identical for any thread count.
pub fn simulate_users(
    params: &MarketParams,
    cps: &[CpProfile],
    delays: &DelayProfile,
    grid: usize,
) -> Result<OracleRun> {
    if grid < 10_001 || grid.is_multiple_of(2) {
        return Err(MarketError::InvalidParameter {
            name: "grid",
            reason: format!("oracle grid must be odd and >= 10001, got {grid}"),
        });
    }
    let m = params.cp_count;
    let h = 1.0 / (grid - 1) as f64;
    let span = (grid - 1) as u64;
    let segs = (m - 1) as u64;

    let tallies: Vec<ChunkTally> = (0..grid)
        .into_par_iter()
        .chunks(POSITION_CHUNK)
        .map(|chunk| {
            let mut tally = ChunkTally {
                primary: vec![0; m],
                secondary: vec![0; m],
                welfare: 0.0,
                violations: 0,
            };
            let mut dists = vec![0u64; m];
            for i in chunk {
                let x = i as f64 * h;
                let bundle = best_bundle(x, params, cps, delays, CandidateSet::All);
                match bundle {
                    Bundle::OptOut => {}
                    Bundle::Single(j) => tally.primary[j - 1] += 1,
                    Bundle::Dual { primary, secondary } => {
                        tally.primary[primary - 1] += 1;
                        tally.secondary[secondary - 1] += 1;
                    }
                }
                tally.welfare += user_welfare(params, cps, delays, x);

                // Exact rational distances: x = i/(grid-1), CP_j at
                // (j-1)/(m-1); on the common denominator the numerators are
                // integers, so nearest-CP ties resolve without float dust.
                let xi = i as u64 * segs;
                for (slot, dist) in dists.iter_mut().enumerate() {
                    let pj = slot as u64 * span;
                    *dist = xi.abs_diff(pj);
                }
                let mut first = u64::MAX;
                let mut second = u64::MAX;
                for &d in &dists {
                    if d < first {
                        second = first;
                        first = d;
                    } else if d < second {
                        second = d;
                    }
                }
                let beyond = |j: usize| dists[j - 1] > second;
                let violated = match bundle {
                    Bundle::OptOut => false,
                    Bundle::Single(j) => beyond(j),
                    Bundle::Dual { primary, secondary } => beyond(primary) || beyond(secondary),
                };
                if violated {
                    tally.violations += 1;
                }
            }
            tally
        })
        .collect();

    let mut primary = vec![0u64; m];
    let mut secondary = vec![0u64; m];
    let mut welfare = 0.0;
    let mut violations = 0u64;
    for t in &tallies {
        for j in 0..m {
            primary[j] += t.primary[j];
            secondary[j] += t.secondary[j];
        }
        welfare += t.welfare;
        violations += t.violations;
    }

    let scale = 1.0 / grid as f64;
    let per_cp = (0..m)
        .map(|j| CpMass {
            n: (primary[j] + secondary[j]) as f64 * scale,
            n1: primary[j] as f64 * scale,
            n2: secondary[j] as f64 * scale,
        })
        .collect();
    Ok(OracleRun {
        masses: MassBreakdown { per_cp },
        welfare: welfare * scale,
        adjacency_violations: violations as usize,
        grid,
    })
}

/// Counts grid users whose best all-CP bundle reaches past their two nearest
/// providers. Zero certifies the adjacency restriction the closed forms use.
pub fn adjacency_check(
    params: &MarketParams,
    cps: &[CpProfile],
    delays: &DelayProfile,
    grid: usize,
) -> Result<usize> {
    Ok(simulate_users(params, cps, delays, grid)?.adjacency_violations)
}

/// Compares analytic and empirical masses; default tolerance max(1e-3, 10/N)
/// (each of the <= 4 choice boundaries per segment contributes <= 1/N error).
pub fn compare_masses(
    analytic: &MassBreakdown,
    run: &OracleRun,
    tol: Option<f64>,
) -> Result<OracleReport> {
    if analytic.len() != run.masses.len() {
        return Err(MarketError::InvalidParameter {
            name: "masses",
            reason: format!(
                "analytic has {} CPs, empirical {}",
                analytic.len(),
                run.masses.len()
            ),
        });
    }
    let tolerance = tol.unwrap_or_else(|| (1e-3_f64).max(10.0 / run.grid as f64));
    let per_cp_error: Vec<f64> = analytic
        .per_cp
        .iter()
        .zip(&run.masses.per_cp)
        .map(|(a, e)| {
            (a.n - e.n)
                .abs()
                .max((a.n1 - e.n1).abs())
                .max((a.n2 - e.n2).abs())
        })
        .collect();
    let max_error = per_cp_error.iter().copied().fold(0.0, f64::max);
    Ok(OracleReport {
        pass: max_error <= tolerance,
        per_cp_error,
        max_error,
        adjacency_violations: run.adjacency_violations,
        grid: run.grid,
        tolerance,
    })
}

/// A generated scenario for the randomized verification battery.
#[derive(Debug, Clone)]
pub struct OracleScenario {
    pub params: MarketParams,
    pub cps: Vec<CpProfile>,
    pub delays: DelayProfile,
}

/// Checks that every segment keeps the four-region structure the closed
/// forms assume: nonempty single-purchase flanks and well-ordered dual cuts.
fn segment_structure_holds(
    params: &MarketParams,
    cps: &[CpProfile],
    delays: &DelayProfile,
) -> bool {
    let t = params.transport_cost;
    let theta = params.residual_rate;
    let seg = params.segment_length();
    for j in 1..params.cp_count {
        let (dl, dr) = (delays.get(j), delays.get(j + 1));
        let (sl, sr) = (cps[j - 1].subscription_fee, cps[j].subscription_fee);
        let xl = (j - 1) as f64 * seg;
        let xr = j as f64 * seg;
        let tau_l = (params.base_value - dl - sl / theta) / t;
        let tau_r = (params.base_value - dr - sr / theta) / t;
        let taup_l = (params.base_value - dl - sl) / t;
        let taup_r = (params.base_value - dr - sr) / t;
        let b1 = xr - tau_r;
        let b3 = xl + tau_l;
        let cut = xl + 0.5 * seg + (dr - dl) / (2.0 * t);
        let mid_p = 0.5 * (xl + taup_l + xr - taup_r);
        let ok = b1 > xl && b3 < xr && b1 <= cut && cut <= b3 && b1 <= mid_p && mid_p <= b3;
        if !ok {
            return false;
        }
    }
    true
}

/// Deterministically generates `count` scenarios in the fully-certified
/// regime, a random subset of CPs holding fast-lane delays.
pub fn random_full_assumption_scenarios(seed: u64, count: usize) -> Vec<OracleScenario> {
    let mut rng = StdRng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let m = rng.gen_range(3..=8usize);
        let t = rng.gen_range(300.0..700.0);
        let d0 = rng.gen_range(4.0..8.0);
        let access_fee = rng.gen_range(0.0..40.0);
        let cps: Vec<CpProfile> = (1..=m)
            .map(|j| CpProfile::new(j, rng.gen_range(5.0..18.0), rng.gen_range(1.0..4.0)))
            .collect();
        let max_s = cps.iter().map(|c| c.subscription_fee).fold(0.0, f64::max);
        let min_s = cps
            .iter()
            .map(|c| c.subscription_fee)
            .fold(f64::INFINITY, f64::min);
        let seg = t / (m as f64 - 1.0);
        let base_value = d0 + seg + access_fee + max_s + rng.gen_range(5.0..80.0);

        let lower = max_s / (base_value - d0 - 0.5 * (max_s + seg));
        let upper = min_s / (base_value - seg);
        if !(lower > 0.0 && upper > lower * 1.05) {
            continue;
        }
        let theta = lower + rng.gen_range(0.1..0.9) * (upper - lower);

        let params = MarketParams {
            base_value,
            transport_cost: t,
            residual_rate: theta,
            ad_attenuation: rng.gen_range(0.0..1.0),
            traffic_rate: rng.gen_range(1.0..8.0),
            access_fee,
            cp_count: m,
            default_delay: d0,
        };
        if validate_assumptions(&params, &cps).regime != Regime::FullAssumption1 {
            continue;
        }

        let mut delays = vec![d0; m];
        if rng.gen_bool(0.7) {
            for d in delays.iter_mut() {
                if rng.gen_bool(0.35) {
                    *d = rng.gen_range(0.8 * d0..d0);
                }
            }
        }
        let delays = DelayProfile::new(delays, d0).expect("delays within tier");
        if !segment_structure_holds(&params, &cps, &delays) {
            continue;
        }
        if masses_multi(&params, &cps, &delays).is_err() {
            continue;
        }
        out.push(OracleScenario {
            params,
            cps,
            delays,
        });
    }
    out
}
