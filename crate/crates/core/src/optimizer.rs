//! The ISP's decision layer: cost models, optimal fast-lane delay, binding
//! prioritization prices, affordability, joint programs for the
//! single-purchase and non-uniform variants, uniform-menu pricing and the
//! capacity-reallocation fixed point.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::distribution::DistributionSpec;
use crate::equilibrium::{
    cp_revenue, masses_default, masses_multi, nonuniform_mass_raw, single_total_mass_raw,
};
use crate::market::{tau_unchecked, CpProfile, DelayProfile, MarketError, MarketParams};
use crate::numeric::{damped_fixed_point, minimize_scalar};
use crate::Result;

/// Fraction of the default delay used as the lower search bound.
const EPS_FACTOR: f64 = 1e-6;
/// Coarse-grid size seeding the golden-section refinement.
const SEED_GRID: usize = 256;
/// Golden-section bracket tolerance, as a fraction of the default delay.
const GOLDEN_TOL_FACTOR: f64 = 1e-10;
/// Coordinate-descent convergence threshold on the max coordinate change.
const DESCENT_TOL: f64 = 1e-9;
const MAX_SWEEPS: usize = 200;
const RANDOM_STARTS: usize = 8;

/// ISP cost per user-traffic unit for running a fast lane at delay `d`.
///
/// The reciprocal family `c (1/d - 1/d0)` is zero at the default tier,
/// decreasing and convex, and blows up as the delay approaches zero. The enum
/// leaves room for other decreasing differentiable convex families.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum CostModel {
    Reciprocal { c: f64 },
}

impl CostModel {
    pub fn reciprocal(c: f64) -> Self {
        CostModel::Reciprocal { c }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            CostModel::Reciprocal { c } if *c > 0.0 => Ok(()),
            CostModel::Reciprocal { c } => Err(MarketError::InvalidParameter {
                name: "cost.c",
                reason: format!("must be > 0, got {c}"),
            }),
        }
    }

    /// C(d), relative to the default tier `d0`.
    pub fn cost(&self, d: f64, d0: f64) -> f64 {
        match self {
            CostModel::Reciprocal { c } => c * (1.0 / d - 1.0 / d0),
        }
    }

    /// C'(d); negative everywhere on the valid range.
    pub fn derivative(&self, d: f64) -> f64 {
        match self {
            CostModel::Reciprocal { c } => -c / (d * d),
        }
    }
}

/// A fast-lane contract offered to one CP.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrioritizationOffer {
    pub cp: usize,
    /// Offered delay; equals the default tier when no contract is viable.
    pub d_star: f64,
    /// Binding per-user per-traffic-unit price; zero at the default tier.
    pub p_star: f64,
    pub accepted: bool,
}

impl PrioritizationOffer {
    fn declined(cp: usize, d0: f64) -> Self {
        Self {
            cp,
            d_star: d0,
            p_star: 0.0,
            accepted: false,
        }
    }
}

/// Revenue weight of delay improvements: S + (1+delta) lambda r / 2.
fn revenue_weight(params: &MarketParams, cp: &CpProfile) -> f64 {
    cp.subscription_fee + 0.5 * (1.0 + params.ad_attenuation) * params.traffic_rate * cp.ad_rate
}

fn require_dual_regime(params: &MarketParams) -> Result<()> {
    if params.residual_rate <= 0.0 {
        return Err(MarketError::SinglePurchaseRegime);
    }
    Ok(())
}

/// The per-CP fast-lane objective the ISP minimizes over the delay.
fn fast_lane_objective(params: &MarketParams, cp: &CpProfile, cost: &CostModel, d: f64) -> f64 {
    let a = revenue_weight(params, cp) / params.transport_cost;
    a * d + params.traffic_rate * tau_unchecked(params, cp, d) * cost.cost(d, params.default_delay)
}

/// Optimal fast-lane delay for one CP, by bounded scalar minimization.
///
/// Searches the coarse grid over `[1e-6 d0, d0]` and refines by golden
/// section; returns the default delay when no interior point strictly beats
/// it (no viable contract).
pub fn optimal_delay(params: &MarketParams, cp: &CpProfile, cost: &CostModel) -> Result<f64> {
    require_dual_regime(params)?;
    cost.validate()?;
    let d0 = params.default_delay;
    let f = |d: f64| fast_lane_objective(params, cp, cost, d);
    let candidate = minimize_scalar(f, EPS_FACTOR * d0, d0, SEED_GRID, GOLDEN_TOL_FACTOR * d0);
    if f(candidate) < f(d0) {
        Ok(candidate)
    } else {
        Ok(d0)
    }
}

/// Closed-form optimal delay for the reciprocal cost family, clamped to the
/// default tier. Serves as an independent check on [`optimal_delay`].
pub fn reciprocal_optimal_delay(params: &MarketParams, cp: &CpProfile, c: f64) -> Result<f64> {
    require_dual_regime(params)?;
    let a = revenue_weight(params, cp) / params.transport_cost;
    let headroom = params.base_value - cp.subscription_fee / params.residual_rate;
    if headroom <= 0.0 {
        return Err(MarketError::NonpositiveThreshold {
            cp: cp.index,
            delay: 0.0,
        });
    }
    let denom = a * params.transport_cost / (params.traffic_rate * c) + 1.0 / params.default_delay;
    let root = (headroom / denom).sqrt();
    Ok(root.min(params.default_delay))
}

/// Binding prioritization price for a CP at an offered delay: the fee that
/// leaves the CP exactly indifferent to its no-contract revenue.
pub fn prioritization_price(params: &MarketParams, cp: &CpProfile, d_star: f64) -> Result<f64> {
    require_dual_regime(params)?;
    let d0 = params.default_delay;
    if d_star <= 0.0 || d_star > d0 {
        return Err(MarketError::InvalidParameter {
            name: "d_star",
            reason: format!("must lie in (0, {d0}], got {d_star}"),
        });
    }
    if d_star == d0 {
        return Ok(0.0);
    }
    let tau = tau_unchecked(params, cp, d_star);
    if tau <= 0.0 {
        return Err(MarketError::NonpositiveThreshold {
            cp: cp.index,
            delay: d_star,
        });
    }
    let a = revenue_weight(params, cp) / params.transport_cost;
    Ok(a / params.traffic_rate * (d0 - d_star) / tau)
}

/// Affordability verdict for one CP: whether the marginal cost of improving
/// the default tier is below the CP's marginal willingness to pay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Affordability {
    pub affordable: bool,
    /// Willingness-to-pay bound minus |C'(d0)|; positive means affordable.
    pub margin: f64,
}

/// Tests whether a CP can fund any fast lane at all.
pub fn affordability_check(
    params: &MarketParams,
    cp: &CpProfile,
    cost: &CostModel,
) -> Result<Affordability> {
    require_dual_regime(params)?;
    let d0 = params.default_delay;
    let slope = cost.derivative(d0).abs();
    let denom =
        params.traffic_rate * (params.base_value - d0 - cp.subscription_fee / params.residual_rate);
    if denom <= 0.0 {
        // No users at the default tier; nothing to prioritize.
        return Ok(Affordability {
            affordable: false,
            margin: f64::NEG_INFINITY,
        });
    }
    let bound = revenue_weight(params, cp) / denom;
    Ok(Affordability {
        affordable: slope < bound,
        margin: bound - slope,
    })
}

/// Total user mass of CP `j` as a function of its own delay (mid CPs serve
/// both flanks, end CPs one).
pub(crate) fn own_mass(params: &MarketParams, cp: &CpProfile, d: f64) -> f64 {
    let tau = tau_unchecked(params, cp, d);
    if cp.index == 1 || cp.index == params.cp_count {
        tau
    } else {
        2.0 * tau
    }
}

/// Per-CP fast-lane offers under CP-tailored pricing.
///
/// Every CP that benefits gets a contract; with `exclusive` set, only the
/// single most profitable contract survives (ties to the lowest index).
pub fn offers(
    params: &MarketParams,
    cps: &[CpProfile],
    cost: &CostModel,
    exclusive: bool,
) -> Result<Vec<PrioritizationOffer>> {
    let d0 = params.default_delay;
    let mut out = Vec::with_capacity(cps.len());
    for cp in cps {
        let d_star = optimal_delay(params, cp, cost)?;
        if d_star < d0 {
            let p_star = prioritization_price(params, cp, d_star)?;
            out.push(PrioritizationOffer {
                cp: cp.index,
                d_star,
                p_star,
                accepted: true,
            });
        } else {
            out.push(PrioritizationOffer::declined(cp.index, d0));
        }
    }
    if exclusive {
        let best = out
            .iter()
            .enumerate()
            .filter(|(_, o)| o.accepted)
            .map(|(i, o)| {
                let cp = &cps[i];
                let gain = params.traffic_rate
                    * own_mass(params, cp, o.d_star)
                    * (o.p_star - cost.cost(o.d_star, d0));
                (i, gain)
            })
            .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
        if let Some((keep, _)) = best {
            for (i, offer) in out.iter_mut().enumerate() {
                if i != keep {
                    *offer = PrioritizationOffer::declined(offer.cp, d0);
                }
            }
        }
    }
    Ok(out)
}

/// ISP profit gain (over the access fee) from a set of offers.
pub fn offers_profit_gain(
    params: &MarketParams,
    cps: &[CpProfile],
    offers: &[PrioritizationOffer],
    cost: &CostModel,
) -> f64 {
    offers
        .iter()
        .filter(|o| o.accepted)
        .map(|o| {
            let cp = &cps[o.cp - 1];
            params.traffic_rate
                * own_mass(params, cp, o.d_star)
                * (o.p_star - cost.cost(o.d_star, params.default_delay))
        })
        .sum()
}

/// Builds the delay profile implied by a set of offers (accepted CPs at their
/// contracted delay, everyone else at the default tier).
pub fn offers_delay_profile(params: &MarketParams, offers: &[PrioritizationOffer]) -> DelayProfile {
    let mut delays = DelayProfile::uniform(params);
    for o in offers {
        if o.accepted {
            delays.set(o.cp, o.d_star);
        }
    }
    delays
}

fn multi_starts(m: usize, d0: f64, eps: f64, seed: u64) -> Vec<Vec<f64>> {
    let mut starts = vec![vec![d0; m], vec![0.5 * d0; m]];
    let mut rng = StdRng::seed_from_u64(seed);
    for _ in 0..RANDOM_STARTS {
        starts.push((0..m).map(|_| rng.gen_range(eps..=d0)).collect());
    }
    starts
}

/// Cyclic coordinate descent maximizing `objective` over `(0, d0]^M`, with
/// multi-start to hedge non-convexity. Returns the best converged vector and
/// its objective value.
fn coordinate_ascent<F: Fn(&[f64]) -> f64>(
    m: usize,
    d0: f64,
    objective: F,
    seed: u64,
) -> (Vec<f64>, f64) {
    let eps = EPS_FACTOR * d0;
    let golden_tol = GOLDEN_TOL_FACTOR * d0;
    let mut best: Option<(Vec<f64>, f64)> = None;
    for start in multi_starts(m, d0, eps, seed) {
        let mut d = start;
        for _ in 0..MAX_SWEEPS {
            let mut max_change: f64 = 0.0;
            for j in 0..m {
                let prev = d[j];
                let f_neg = |x: f64| {
                    let mut v = d.clone();
                    v[j] = x;
                    -objective(&v)
                };
                let mut x_star = minimize_scalar(f_neg, eps, d0, SEED_GRID, golden_tol);
                // Prefer the no-contract boundary on ties so "no
                // prioritization" is exact.
                if f_neg(d0) <= f_neg(x_star) {
                    x_star = d0;
                }
                d[j] = x_star;
                max_change = max_change.max((x_star - prev).abs());
            }
            if max_change <= DESCENT_TOL {
                break;
            }
        }
        let value = objective(&d);
        let better = match &best {
            None => true,
            Some((_, bv)) => value > *bv,
        };
        if better {
            best = Some((d, value));
        }
    }
    best.expect("at least one start")
}

/// Joint single-purchase optimum: delays, binding prices, and the ISP's
/// profit gain over the access fee.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SinglePurchaseOutcome {
    pub delays: DelayProfile,
    pub prices: Vec<f64>,
    pub profit_gain: f64,
}

/// ISP profit gain in the single-purchase market at a delay vector, or None
/// when some CP's mass is nonpositive (candidate rejected).
fn single_purchase_gain(
    params: &MarketParams,
    cps: &[CpProfile],
    cost: &CostModel,
    d: &[f64],
) -> Option<f64> {
    let d0 = params.default_delay;
    let t = params.transport_cost;
    let mut total = 0.0;
    for cp in cps {
        let n = single_total_mass_raw(params, cps, d, cp.index);
        if n <= 0.0 {
            return None;
        }
        let dj = d[cp.index - 1];
        total += (d0 - dj) / t * (cp.subscription_fee + params.traffic_rate * cp.ad_rate)
            - params.traffic_rate * n * cost.cost(dj, d0);
    }
    Some(total)
}

/// Binding single-purchase price for CP `j` at a delay vector.
pub fn single_purchase_price(
    params: &MarketParams,
    cps: &[CpProfile],
    delays: &DelayProfile,
    j: usize,
) -> Result<f64> {
    let d0 = params.default_delay;
    let dj = delays.get(j);
    if dj >= d0 {
        return Ok(0.0);
    }
    let n = single_total_mass_raw(params, cps, delays.as_slice(), j);
    if n <= 0.0 {
        return Err(MarketError::NegativeMass { cp: j, value: n });
    }
    let cp = &cps[j - 1];
    Ok((cp.subscription_fee + params.traffic_rate * cp.ad_rate)
        / (params.traffic_rate * params.transport_cost)
        * (d0 - dj)
        / n)
}

/// Joint fast-lane program for the single-purchase market (zero residual
/// rate): cyclic coordinate descent with multi-start, then binding prices.
pub fn optimize_single_purchase(
    params: &MarketParams,
    cps: &[CpProfile],
    cost: &CostModel,
    seed: u64,
) -> Result<SinglePurchaseOutcome> {
    cost.validate()?;
    let m = params.cp_count;
    let objective =
        |d: &[f64]| single_purchase_gain(params, cps, cost, d).unwrap_or(f64::NEG_INFINITY);
    let (d, value) = coordinate_ascent(m, params.default_delay, objective, seed);
    if !value.is_finite() {
        return Err(MarketError::NoFeasibleCandidate(
            "every start produced a nonpositive mass".into(),
        ));
    }
    let delays = DelayProfile::new(d, params.default_delay)
        .map_err(|e| MarketError::InvalidDelayProfile(e.to_string()))?;
    let prices = (1..=m)
        .map(|j| single_purchase_price(params, cps, &delays, j))
        .collect::<Result<Vec<_>>>()?;
    Ok(SinglePurchaseOutcome {
        delays,
        prices,
        profit_gain: value,
    })
}

/// CP revenue gross of prioritization fees in the non-uniform model.
fn nonuniform_rbar(
    params: &MarketParams,
    cps: &[CpProfile],
    dist: &DistributionSpec,
    d: &[f64],
    j: usize,
) -> f64 {
    let mass = nonuniform_mass_raw(params, cps, d, dist, j);
    let cp = &cps[j - 1];
    mass.n * cp.subscription_fee
        + params.traffic_rate * cp.ad_rate * (mass.n1 + params.ad_attenuation * mass.n2)
}

/// ISP profit gain under the non-uniform model at a delay vector.
fn nonuniform_gain(
    params: &MarketParams,
    cps: &[CpProfile],
    cost: &CostModel,
    dist: &DistributionSpec,
    d: &[f64],
) -> Option<f64> {
    let d0 = params.default_delay;
    let mut total = 0.0;
    for cp in cps {
        let j = cp.index;
        let mass = nonuniform_mass_raw(params, cps, d, dist, j);
        if mass.n < 0.0 || mass.n1 < -1e-12 || mass.n2 < -1e-12 {
            return None;
        }
        let mut baseline = d.to_vec();
        baseline[j - 1] = d0;
        total += nonuniform_rbar(params, cps, dist, d, j)
            - nonuniform_rbar(params, cps, dist, &baseline, j)
            - params.traffic_rate * mass.n * cost.cost(d[j - 1], d0);
    }
    Some(total)
}

/// Joint fast-lane program under a non-uniform user distribution; prices bind
/// each CP to its unilateral no-contract revenue.
pub fn optimize_nonuniform(
    params: &MarketParams,
    cps: &[CpProfile],
    cost: &CostModel,
    dist: &DistributionSpec,
    seed: u64,
) -> Result<Vec<PrioritizationOffer>> {
    require_dual_regime(params)?;
    cost.validate()?;
    let m = params.cp_count;
    let d0 = params.default_delay;
    let objective =
        |d: &[f64]| nonuniform_gain(params, cps, cost, dist, d).unwrap_or(f64::NEG_INFINITY);
    let (d, value) = coordinate_ascent(m, d0, objective, seed);
    if !value.is_finite() {
        return Err(MarketError::NoFeasibleCandidate(
            "every start produced an invalid mass".into(),
        ));
    }
    let mut out = Vec::with_capacity(m);
    for cp in cps {
        let j = cp.index;
        let dj = d[j - 1];
        if dj >= d0 {
            out.push(PrioritizationOffer::declined(j, d0));
            continue;
        }
        let mass = nonuniform_mass_raw(params, cps, &d, dist, j);
        let mut baseline = d.clone();
        baseline[j - 1] = d0;
        let gain = nonuniform_rbar(params, cps, dist, &d, j)
            - nonuniform_rbar(params, cps, dist, &baseline, j);
        if mass.n <= 0.0 || gain <= 0.0 {
            out.push(PrioritizationOffer::declined(j, d0));
            continue;
        }
        out.push(PrioritizationOffer {
            cp: j,
            d_star: dj,
            p_star: gain / (params.traffic_rate * mass.n),
            accepted: true,
        });
    }
    Ok(out)
}

/// Outcome of the CP-independent ("uniform menu") pricing search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MenuOutcome {
    pub delay: f64,
    pub price: f64,
    /// Indices of CPs accepting the menu.
    pub accepted: Vec<usize>,
    /// ISP profit gain over the access fee.
    pub profit: f64,
}

/// Default menu search grids: 128 delays over (0, d0], 512 prices over
/// [0, 2 x largest discriminatory price].
pub fn menu_grid_defaults(
    params: &MarketParams,
    cps: &[CpProfile],
    cost: &CostModel,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let d0 = params.default_delay;
    let per_cp = offers(params, cps, cost, false)?;
    let p_top = per_cp.iter().map(|o| o.p_star).fold(0.0_f64, f64::max);
    let p_max = if p_top > 0.0 { 2.0 * p_top } else { 1.0 };
    let d_grid = (1..=128).map(|i| d0 * i as f64 / 128.0).collect();
    let p_grid = (0..512).map(|i| p_max * i as f64 / 511.0).collect();
    Ok((d_grid, p_grid))
}

/// Grid search for the single (delay, price) menu offered to every CP alike.
///
/// A CP accepts iff its revenue under the menu weakly beats its no-contract
/// revenue; ISP profit sums margins over acceptors. Ties break toward lower
/// price, then better (lower) delay.
pub fn uniform_menu_optimize(
    params: &MarketParams,
    cps: &[CpProfile],
    cost: &CostModel,
    d_grid: &[f64],
    p_grid: &[f64],
) -> Result<MenuOutcome> {
    require_dual_regime(params)?;
    cost.validate()?;
    if d_grid.is_empty() || p_grid.is_empty() {
        return Err(MarketError::EmptyGrid);
    }
    let d0 = params.default_delay;
    let defaults = masses_default(params, cps)?;
    let base_revenue: Vec<f64> = cps
        .iter()
        .map(|cp| cp_revenue(params, cp, defaults.get(cp.index), 0.0, false))
        .collect();

    let mut best: Option<MenuOutcome> = None;
    for &d in d_grid {
        if d <= 0.0 || d > d0 {
            continue;
        }
        // Unilateral menu revenue pieces for each CP at this delay: gross
        // revenue with only that CP prioritized, and its own mass (the fee
        // base). Acceptance is neighbor-independent, so this is exact.
        let mut gross = Vec::with_capacity(cps.len());
        for cp in cps {
            let mut delays = DelayProfile::uniform(params);
            delays.set(cp.index, d);
            match masses_multi(params, cps, &delays) {
                Ok(masses) => {
                    let mass = masses.get(cp.index);
                    gross.push(Some((cp_revenue(params, cp, mass, 0.0, false), mass.n)));
                }
                Err(_) => gross.push(None),
            }
        }
        let unit_cost = cost.cost(d, d0);
        for &p in p_grid {
            if p < 0.0 {
                continue;
            }
            let mut accepted = Vec::new();
            let mut margin_mass = 0.0;
            for (i, piece) in gross.iter().enumerate() {
                if let Some((rev, n)) = piece {
                    if d < d0 && rev - params.traffic_rate * n * p >= base_revenue[i] {
                        accepted.push(i + 1);
                        margin_mass += n;
                    }
                }
            }
            let profit = params.traffic_rate * margin_mass * (p - unit_cost);
            let candidate = MenuOutcome {
                delay: d,
                price: p,
                accepted,
                profit,
            };
            let better = match &best {
                None => true,
                Some(b) => {
                    candidate.profit > b.profit
                        || (candidate.profit == b.profit
                            && (candidate.price < b.price
                                || (candidate.price == b.price && candidate.delay < b.delay)))
                }
            };
            if better {
                best = Some(candidate);
            }
        }
    }
    best.ok_or(MarketError::EmptyGrid)
}

/// How freed-up capacity is spread over non-target CPs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CapacityPolicy {
    /// Split the remainder proportionally to baseline allocations.
    Proportional,
}

/// A reservation-based capacity split and the delays it induces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapacityPlan {
    /// Total capacity, fixed at the baseline calibration.
    pub total: f64,
    /// Per-CP capacity shares, summing exactly to `total`.
    pub allocations: Vec<f64>,
    /// Delays solving d_j = n_j(d_j) / phi_j per CP.
    pub delays: DelayProfile,
    /// Fixed-point residuals per CP.
    pub residuals: Vec<f64>,
    pub policy: CapacityPolicy,
}

const CAPACITY_DAMPING: f64 = 0.5;
const CAPACITY_TOL: f64 = 1e-10;
const CAPACITY_MAX_ITER: usize = 10_000;

/// Solves the reservation delay d_j = n_j(d_j)/phi_j for every CP given an
/// allocation vector.
pub fn capacity_fixed_point(
    params: &MarketParams,
    cps: &[CpProfile],
    allocations: &[f64],
) -> Result<(DelayProfile, Vec<f64>)> {
    require_dual_regime(params)?;
    let mut delays = Vec::with_capacity(cps.len());
    let mut residuals = Vec::with_capacity(cps.len());
    for cp in cps {
        let phi = allocations[cp.index - 1];
        if phi <= 0.0 {
            return Err(MarketError::CapacityInfeasible {
                cp: cp.index,
                reason: format!("nonpositive capacity share {phi}"),
            });
        }
        let g = |d: f64| own_mass(params, cp, d) / phi;
        let out = damped_fixed_point(
            g,
            params.default_delay,
            CAPACITY_DAMPING,
            CAPACITY_TOL,
            CAPACITY_MAX_ITER,
        );
        if !out.converged {
            return Err(MarketError::FixedPointDiverged {
                cp: cp.index,
                residual: out.residual,
            });
        }
        let ceiling = params.base_value - cp.subscription_fee / params.residual_rate;
        if out.value <= 0.0 || out.value >= ceiling {
            return Err(MarketError::CapacityInfeasible {
                cp: cp.index,
                reason: format!("fixed point {} outside (0, {ceiling})", out.value),
            });
        }
        delays.push(out.value);
        residuals.push(out.residual);
    }
    let profile = DelayProfile::with_throttling(delays)?;
    Ok((profile, residuals))
}

/// Reallocates existing capacity to give `target` a reserved delay of
/// `d_target`, splitting the remainder per `policy` and re-solving every
/// non-target delay.
pub fn capacity_reallocation(
    params: &MarketParams,
    cps: &[CpProfile],
    target: usize,
    d_target: f64,
    policy: CapacityPolicy,
) -> Result<CapacityPlan> {
    require_dual_regime(params)?;
    if target < 1 || target > params.cp_count {
        return Err(MarketError::IndexOutOfRange {
            index: target,
            count: params.cp_count,
        });
    }
    if d_target <= 0.0 || d_target > params.default_delay {
        return Err(MarketError::InvalidParameter {
            name: "d_target",
            reason: format!("must lie in (0, {}], got {d_target}", params.default_delay),
        });
    }
    let d0 = params.default_delay;
    let baseline = masses_default(params, cps)?;
    let base_alloc: Vec<f64> = (1..=params.cp_count)
        .map(|j| baseline.get(j).n / d0)
        .collect();
    let total: f64 = base_alloc.iter().sum();

    let target_mass = own_mass(params, &cps[target - 1], d_target);
    if target_mass <= 0.0 {
        return Err(MarketError::CapacityInfeasible {
            cp: target,
            reason: format!("no users at delay {d_target}"),
        });
    }
    let phi_target = target_mass / d_target;
    let remainder = total - phi_target;
    if remainder <= 0.0 {
        return Err(MarketError::CapacityInfeasible {
            cp: target,
            reason: format!("target share {phi_target} exhausts total capacity {total}"),
        });
    }

    let CapacityPolicy::Proportional = policy;
    let others_total: f64 = base_alloc
        .iter()
        .enumerate()
        .filter(|(i, _)| i + 1 != target)
        .map(|(_, &phi)| phi)
        .sum();
    let mut allocations: Vec<f64> = base_alloc
        .iter()
        .enumerate()
        .map(|(i, &phi)| {
            if i + 1 == target {
                phi_target
            } else {
                remainder * phi / others_total
            }
        })
        .collect();

    // Nudge the last non-target share by ulps until the index-order sum
    // reproduces the total bit-exactly.
    let last = (0..allocations.len())
        .rev()
        .find(|&i| i + 1 != target)
        .expect("at least two CPs");
    for _ in 0..64 {
        let sum: f64 = allocations.iter().sum();
        if sum == total {
            break;
        }
        allocations[last] = if sum < total {
            allocations[last].next_up()
        } else {
            allocations[last].next_down()
        };
    }

    let (mut delays, mut residuals) = capacity_fixed_point(params, cps, &allocations)?;
    // The target's share was constructed from its closed-form mass; pin the
    // delay exactly and record a zero residual.
    delays.set(target, d_target);
    residuals[target - 1] =
        (own_mass(params, &cps[target - 1], d_target) / allocations[target - 1] - d_target).abs();

    Ok(CapacityPlan {
        total,
        allocations,
        delays,
        residuals,
        policy,
    })
}
