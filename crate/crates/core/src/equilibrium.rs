//! Closed-form equilibrium user masses and revenues for every solved regime,
//! plus delta comparisons between delay profiles.

use serde::{Deserialize, Serialize};

use crate::distribution::DistributionSpec;
use crate::market::{
    secondary_threshold, validate_assumptions, validate_cps, CpProfile, DelayProfile, MarketError,
    MarketParams, Regime,
};
use crate::optimizer::CostModel;
use crate::Result;

/// Per-CP user masses: total, primary and secondary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CpMass {
    pub n: f64,
    pub n1: f64,
    pub n2: f64,
}

/// User masses for every CP, index-aligned with the CP list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MassBreakdown {
    pub per_cp: Vec<CpMass>,
}

impl MassBreakdown {
    /// Mass entry for CP `j` (1-based).
    pub fn get(&self, j: usize) -> CpMass {
        self.per_cp[j - 1]
    }

    /// Total dual-purchasing population share, sum of secondary masses.
    pub fn dual_share(&self) -> f64 {
        self.per_cp.iter().map(|m| m.n2).sum()
    }

    /// Sum of primary masses; equals 1 under full coverage.
    pub fn primary_total(&self) -> f64 {
        self.per_cp.iter().map(|m| m.n1).sum()
    }

    pub fn len(&self) -> usize {
        self.per_cp.len()
    }

    pub fn is_empty(&self) -> bool {
        self.per_cp.is_empty()
    }
}

fn guard_nonnegative(j: usize, mass: CpMass) -> Result<CpMass> {
    // Formulas can go negative far outside the assumptions; fail loudly
    // rather than clamp, since clamping silently changes revenues.
    for v in [mass.n, mass.n1, mass.n2] {
        if v < 0.0 {
            return Err(MarketError::NegativeMass { cp: j, value: v });
        }
    }
    Ok(mass)
}

fn check_inputs(params: &MarketParams, cps: &[CpProfile], delays: &DelayProfile) -> Result<()> {
    validate_cps(params, cps)?;
    if delays.len() != params.cp_count {
        return Err(MarketError::InvalidDelayProfile(format!(
            "expected {} delays, got {}",
            params.cp_count,
            delays.len()
        )));
    }
    Ok(())
}

/// Primary mass of CP `j` under the multi-purchasing equilibrium.
///
/// Mid CPs split each shared segment at the midpoint shifted by half the
/// delay gap; an end CP has a single neighbor (j+1 at the left end, j-1 at
/// the right end) and gets half the mid expression.
pub(crate) fn multi_primary_mass_raw(params: &MarketParams, d: &[f64], j: usize) -> f64 {
    let m = params.cp_count;
    let seg = params.segment_length();
    let two_t = 2.0 * params.transport_cost;
    if j == 1 {
        0.5 * (seg + (d[1] - d[0]) / params.transport_cost)
    } else if j == m {
        0.5 * (seg + (d[m - 2] - d[m - 1]) / params.transport_cost)
    } else {
        seg + (d[j] + d[j - 2] - 2.0 * d[j - 1]) / two_t
    }
}

/// Single-purchase total mass of CP `j`, no sign guard.
pub(crate) fn single_total_mass_raw(
    params: &MarketParams,
    cps: &[CpProfile],
    d: &[f64],
    j: usize,
) -> f64 {
    let m = params.cp_count;
    let t = params.transport_cost;
    let seg = params.segment_length();
    if j == 1 || j == m {
        let nb = if j == 1 { 2 } else { m - 1 };
        0.5 * (seg
            + (d[nb - 1] - d[j - 1]) / t
            + (cps[nb - 1].subscription_fee - cps[j - 1].subscription_fee) / t)
    } else {
        seg + (d[j] + d[j - 2] - 2.0 * d[j - 1]) / (2.0 * t)
            + (cps[j].subscription_fee + cps[j - 2].subscription_fee
                - 2.0 * cps[j - 1].subscription_fee)
                / (2.0 * t)
    }
}

/// Non-uniform-distribution mass of CP `j`, no sign guard.
pub(crate) fn nonuniform_mass_raw(
    params: &MarketParams,
    cps: &[CpProfile],
    d: &[f64],
    dist: &DistributionSpec,
    j: usize,
) -> CpMass {
    let m = params.cp_count;
    let seg = params.segment_length();
    let two_t = 2.0 * params.transport_cost;
    let pos = (j - 1) as f64 * seg;
    let tau = crate::market::tau_unchecked(params, &cps[j - 1], d[j - 1]);
    let n = dist.cdf(pos + tau) - dist.cdf(pos - tau);
    let right = if j < m {
        dist.cdf(pos + 0.5 * seg + (d[j] - d[j - 1]) / two_t)
    } else {
        1.0
    };
    let left = if j > 1 {
        dist.cdf(pos - 0.5 * seg + (d[j - 1] - d[j - 2]) / two_t)
    } else {
        0.0
    };
    let n1 = right - left;
    CpMass { n, n1, n2: n - n1 }
}

/// User masses under the multi-purchasing equilibrium: a mid CP serves twice
/// its secondary threshold, an end CP once.
pub fn masses_multi(
    params: &MarketParams,
    cps: &[CpProfile],
    delays: &DelayProfile,
) -> Result<MassBreakdown> {
    check_inputs(params, cps, delays)?;
    let m = params.cp_count;
    let mut per_cp = Vec::with_capacity(m);
    for j in 1..=m {
        let tau = secondary_threshold(params, &cps[j - 1], delays.get(j))?;
        let n = if j == 1 || j == m { tau } else { 2.0 * tau };
        let n1 = multi_primary_mass_raw(params, delays.as_slice(), j);
        let mass = CpMass { n, n1, n2: n - n1 };
        per_cp.push(guard_nonnegative(j, mass)?);
    }
    Ok(MassBreakdown { per_cp })
}

/// Masses in the non-prioritized regime: every CP at the default delay.
pub fn masses_default(params: &MarketParams, cps: &[CpProfile]) -> Result<MassBreakdown> {
    masses_multi(params, cps, &DelayProfile::uniform(params))
}

/// User masses when users only single-purchase (zero residual rate).
///
/// Everyone picks the nearest CP after delay and fee adjustments; all masses
/// are primary.
pub fn masses_single(
    params: &MarketParams,
    cps: &[CpProfile],
    delays: &DelayProfile,
) -> Result<MassBreakdown> {
    check_inputs(params, cps, delays)?;
    let m = params.cp_count;
    let mut per_cp = Vec::with_capacity(m);
    for j in 1..=m {
        let n = single_total_mass_raw(params, cps, delays.as_slice(), j);
        per_cp.push(guard_nonnegative(j, CpMass { n, n1: n, n2: 0.0 })?);
    }
    Ok(MassBreakdown { per_cp })
}

/// User masses when the residual rate is high enough that every user
/// dual-purchases: totals are pinned by the geometry, primaries keep the
/// multi-purchasing split.
pub fn masses_all_dual(
    params: &MarketParams,
    cps: &[CpProfile],
    delays: &DelayProfile,
) -> Result<MassBreakdown> {
    check_inputs(params, cps, delays)?;
    let report = validate_assumptions(params, cps);
    if report.regime != Regime::AllDual {
        return Err(MarketError::RegimeMismatch {
            expected: Regime::AllDual,
            actual: report.regime,
        });
    }
    let m = params.cp_count;
    let seg = params.segment_length();
    let mut per_cp = Vec::with_capacity(m);
    for j in 1..=m {
        let n = if j == 1 || j == m { seg } else { 2.0 * seg };
        let n1 = multi_primary_mass_raw(params, delays.as_slice(), j);
        per_cp.push(guard_nonnegative(j, CpMass { n, n1, n2: n - n1 })?);
    }
    Ok(MassBreakdown { per_cp })
}

/// User masses under an arbitrary piecewise-linear position distribution.
///
/// Cut points falling outside [0, 1] are clamped by the CDF itself.
pub fn masses_nonuniform(
    params: &MarketParams,
    cps: &[CpProfile],
    delays: &DelayProfile,
    dist: &DistributionSpec,
) -> Result<MassBreakdown> {
    check_inputs(params, cps, delays)?;
    if params.residual_rate <= 0.0 {
        return Err(MarketError::SinglePurchaseRegime);
    }
    let mut per_cp = Vec::with_capacity(params.cp_count);
    for j in 1..=params.cp_count {
        let mass = nonuniform_mass_raw(params, cps, delays.as_slice(), dist, j);
        per_cp.push(guard_nonnegative(j, mass)?);
    }
    Ok(MassBreakdown { per_cp })
}

/// Revenue of one CP: subscriptions, advertising (attenuated for secondary
/// users), minus prioritization fees when `z` is set.
pub fn cp_revenue(params: &MarketParams, cp: &CpProfile, mass: CpMass, price: f64, z: bool) -> f64 {
    let fee_flow = if z { mass.n * price } else { 0.0 };
    mass.n * cp.subscription_fee
        + params.traffic_rate
            * (cp.ad_rate * (mass.n1 + params.ad_attenuation * mass.n2) - fee_flow)
}

/// ISP profit: access fees plus prioritization margins over fast-lane cost.
pub fn isp_profit(
    params: &MarketParams,
    cps: &[CpProfile],
    masses: &MassBreakdown,
    prices: &[f64],
    delays: &DelayProfile,
    cost: &CostModel,
) -> f64 {
    let margin: f64 = cps
        .iter()
        .filter(|cp| cp.prioritized)
        .map(|cp| {
            let j = cp.index;
            masses.get(j).n * (prices[j - 1] - cost.cost(delays.get(j), params.default_delay))
        })
        .sum();
    params.access_fee + params.traffic_rate * margin
}

/// Per-CP changes between two delay profiles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CpDelta {
    pub dn: f64,
    pub dn1: f64,
    pub dn2: f64,
    /// Revenue change gross of prioritization fees (z = 0 on both sides).
    pub dr: f64,
}

/// Differences the multi-purchasing masses and fee-free revenues between two
/// delay profiles, one entry per CP.
pub fn prioritization_deltas(
    params: &MarketParams,
    cps: &[CpProfile],
    pre_delays: &DelayProfile,
    post_delays: &DelayProfile,
) -> Result<Vec<CpDelta>> {
    let pre = masses_multi(params, cps, pre_delays)?;
    let post = masses_multi(params, cps, post_delays)?;
    Ok(cps
        .iter()
        .map(|cp| {
            let a = pre.get(cp.index);
            let b = post.get(cp.index);
            CpDelta {
                dn: b.n - a.n,
                dn1: b.n1 - a.n1,
                dn2: b.n2 - a.n2,
                dr: cp_revenue(params, cp, b, 0.0, false) - cp_revenue(params, cp, a, 0.0, false),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::CpProfile;

    fn table2_params() -> MarketParams {
        MarketParams {
            base_value: 100.0,
            transport_cost: 500.0,
            residual_rate: 0.5,
            ad_attenuation: 0.5,
            traffic_rate: 5.0,
            access_fee: 33.0,
            cp_count: 6,
            default_delay: 6.0,
        }
    }

    fn table2_cps() -> Vec<CpProfile> {
        (1..=6).map(|j| CpProfile::new(j, 10.0, 2.27)).collect()
    }

    fn all_dual_params() -> MarketParams {
        // High base value with theta above every per-CP cutoff.
        MarketParams {
            base_value: 200.0,
            ..table2_params()
        }
    }

    #[test]
    fn table2_mid_and_end_masses() {
        let params = table2_params();
        let masses = masses_default(&params, &table2_cps()).unwrap();
        let mid = masses.get(3);
        assert!((mid.n - 0.296).abs() < 1e-12);
        assert!((mid.n1 - 0.2).abs() < 1e-12);
        assert!((mid.n2 - 0.096).abs() < 1e-12);
        let end = masses.get(1);
        assert!((end.n - 0.148).abs() < 1e-12);
        assert!((end.n1 - 0.1).abs() < 1e-12);
        assert!((end.n2 - 0.048).abs() < 1e-12);
    }

    #[test]
    fn table2_dual_share_matches_calibration() {
        let params = table2_params();
        let masses = masses_default(&params, &table2_cps()).unwrap();
        assert!((masses.dual_share() - 0.48).abs() < 1e-12);
    }

    #[test]
    fn symmetric_mid_cps_share_primary_mass() {
        let params = table2_params();
        let masses = masses_default(&params, &table2_cps()).unwrap();
        for j in 2..=5 {
            assert!((masses.get(j).n1 - 0.2).abs() < 1e-15);
        }
    }

    #[test]
    fn cheaper_cp_attracts_more_secondary_users() {
        let params = table2_params();
        let mut cps = table2_cps();
        cps[3].subscription_fee = 8.0;
        let masses = masses_default(&params, &cps).unwrap();
        let base = masses_default(&params, &table2_cps()).unwrap();
        assert!(masses.get(4).n2 > base.get(4).n2);
        assert!((masses.get(4).n1 - base.get(4).n1).abs() < 1e-15);
    }

    #[test]
    fn total_mass_depends_only_on_own_delay() {
        let params = table2_params();
        let cps = table2_cps();
        let mut delays = DelayProfile::uniform(&params);
        delays.set(3, 4.5);
        let masses = masses_multi(&params, &cps, &delays).unwrap();
        let base = masses_default(&params, &cps).unwrap();
        for j in [1usize, 2, 4, 5, 6] {
            assert!((masses.get(j).n - base.get(j).n).abs() <= 1e-12);
        }
    }

    #[test]
    fn primary_masses_partition_the_population() {
        let params = table2_params();
        let cps = table2_cps();
        let mut delays = DelayProfile::uniform(&params);
        delays.set(2, 4.7);
        delays.set(5, 5.2);
        let masses = masses_multi(&params, &cps, &delays).unwrap();
        assert!((masses.primary_total() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn negative_mass_fails_loudly() {
        let mut params = table2_params();
        params.base_value = 25.0;
        let err = masses_default(&params, &table2_cps()).unwrap_err();
        assert!(matches!(err, MarketError::NegativeMass { cp: 1, .. }));
    }

    #[test]
    fn single_purchase_symmetric_split() {
        let params = table2_params();
        let masses =
            masses_single(&params, &table2_cps(), &DelayProfile::uniform(&params)).unwrap();
        for j in 2..=5 {
            assert!((masses.get(j).n - 0.2).abs() < 1e-12);
            assert_eq!(masses.get(j).n2, 0.0);
        }
        assert!((masses.get(1).n - 0.1).abs() < 1e-12);
        assert!((masses.get(6).n - 0.1).abs() < 1e-12);
    }

    #[test]
    fn single_purchase_delay_and_fee_sensitivity() {
        let params = table2_params();
        let cps = table2_cps();
        let mut delays = DelayProfile::uniform(&params);
        delays.set(3, 5.0);
        let shifted = masses_single(&params, &cps, &delays).unwrap();
        assert!((shifted.get(2).n - (0.2 - 0.001)).abs() < 1e-12);
        assert!((shifted.get(4).n - (0.2 - 0.001)).abs() < 1e-12);
        assert!((shifted.get(3).n - 0.202).abs() < 1e-12);

        let mut pricier = table2_cps();
        pricier[2].subscription_fee += 1.0;
        let repriced = masses_single(&params, &pricier, &DelayProfile::uniform(&params)).unwrap();
        assert!((repriced.get(3).n - (0.2 - 0.002)).abs() < 1e-12);
    }

    #[test]
    fn all_dual_symmetric_masses() {
        let params = all_dual_params();
        let cps = table2_cps();
        let masses = masses_all_dual(&params, &cps, &DelayProfile::uniform(&params)).unwrap();
        assert!((masses.get(3).n - 0.4).abs() < 1e-12);
        assert!((masses.get(3).n1 - 0.2).abs() < 1e-12);
        assert!((masses.get(1).n - 0.2).abs() < 1e-12);
    }

    #[test]
    fn all_dual_prioritization_shifts_attention_only() {
        let params = all_dual_params();
        let cps = table2_cps();
        let mut delays = DelayProfile::uniform(&params);
        delays.set(3, 5.0);
        let masses = masses_all_dual(&params, &cps, &delays).unwrap();
        assert!((masses.get(3).n - 0.4).abs() < 1e-12);
        assert!((masses.get(3).n1 - 0.202).abs() < 1e-12);
    }

    #[test]
    fn all_dual_rejects_other_regimes() {
        let params = table2_params();
        let cps = table2_cps();
        let err = masses_all_dual(&params, &cps, &DelayProfile::uniform(&params)).unwrap_err();
        assert!(matches!(err, MarketError::RegimeMismatch { .. }));
    }

    #[test]
    fn nonuniform_with_uniform_cdf_reduces_to_multi() {
        let params = table2_params();
        let cps = table2_cps();
        let mut delays = DelayProfile::uniform(&params);
        delays.set(2, 4.9);
        let uniform = DistributionSpec::uniform();
        let a = masses_nonuniform(&params, &cps, &delays, &uniform).unwrap();
        let b = masses_multi(&params, &cps, &delays).unwrap();
        for j in 1..=6 {
            assert!((a.get(j).n - b.get(j).n).abs() < 1e-12);
            assert!((a.get(j).n1 - b.get(j).n1).abs() < 1e-12);
            assert!((a.get(j).n2 - b.get(j).n2).abs() < 1e-12);
        }
    }

    #[test]
    fn nonuniform_popularity_sharpens_primary_losses() {
        let params = table2_params();
        let cps = table2_cps();
        // Double density on the stretch around CP3 (position 0.4), wide
        // enough to contain the shifted primary cut points.
        let heavy =
            DistributionSpec::new(vec![(0.0, 0.0), (0.25, 0.1), (0.55, 0.7), (1.0, 1.0)]).unwrap();
        let defaults = DelayProfile::uniform(&params);
        let base_heavy = masses_nonuniform(&params, &cps, &defaults, &heavy).unwrap();
        let base_unif = masses_multi(&params, &cps, &defaults).unwrap();
        assert!(base_heavy.get(3).n1 > base_unif.get(3).n1);

        // Prioritize CP3; its competitor CP2 loses more primaries under the
        // heavier local density.
        let mut prio = DelayProfile::uniform(&params);
        prio.set(3, 4.5471);
        let post_heavy = masses_nonuniform(&params, &cps, &prio, &heavy).unwrap();
        let post_unif = masses_multi(&params, &cps, &prio).unwrap();
        let loss_heavy = base_heavy.get(2).n1 - post_heavy.get(2).n1;
        let loss_unif = base_unif.get(2).n1 - post_unif.get(2).n1;
        assert!(loss_heavy > loss_unif);
    }

    #[test]
    fn nonuniform_primaries_partition_any_cdf() {
        let params = table2_params();
        let cps = table2_cps();
        let steppy = DistributionSpec::new(vec![
            (0.0, 0.0),
            (0.1, 0.05),
            (0.1001, 0.4),
            (0.7, 0.5),
            (0.7001, 0.9),
            (1.0, 1.0),
        ])
        .unwrap();
        let masses =
            masses_nonuniform(&params, &cps, &DelayProfile::uniform(&params), &steppy).unwrap();
        assert!((masses.primary_total() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn revenue_table2_mid_cp() {
        let params = table2_params();
        let cps = table2_cps();
        let masses = masses_default(&params, &cps).unwrap();
        let r = cp_revenue(&params, &cps[2], masses.get(3), 0.0, false);
        assert!((r - 5.7748).abs() < 1e-10);
        // z = 1 with zero price changes nothing.
        let r_z = cp_revenue(&params, &cps[2], masses.get(3), 0.0, true);
        assert_eq!(r, r_z);
    }

    #[test]
    fn revenue_without_attenuation_uses_total_mass() {
        let mut params = table2_params();
        params.ad_attenuation = 1.0;
        let cps = table2_cps();
        let masses = masses_default(&params, &cps).unwrap();
        let m = masses.get(3);
        let r = cp_revenue(&params, &cps[2], m, 0.0, false);
        let expected = m.n * 10.0 + 5.0 * 2.27 * m.n;
        assert!((r - expected).abs() < 1e-12);
    }

    #[test]
    fn isp_profit_reduces_to_access_fee_without_contracts() {
        let params = table2_params();
        let cps = table2_cps();
        let masses = masses_default(&params, &cps).unwrap();
        let delays = DelayProfile::uniform(&params);
        let cost = CostModel::reciprocal(1.0);
        let pi = isp_profit(&params, &cps, &masses, &[0.0; 6], &delays, &cost);
        assert_eq!(pi, 33.0);
    }

    #[test]
    fn isp_profit_zero_margin_contracts() {
        let params = table2_params();
        let mut cps = table2_cps();
        cps[2].prioritized = true;
        let mut delays = DelayProfile::uniform(&params);
        delays.set(3, 4.5);
        let masses = masses_multi(&params, &cps, &delays).unwrap();
        let cost = CostModel::reciprocal(1.0);
        let mut prices = [0.0; 6];
        prices[2] = cost.cost(4.5, params.default_delay);
        let pi = isp_profit(&params, &cps, &masses, &prices, &delays, &cost);
        assert!((pi - 33.0).abs() < 1e-12);
    }

    #[test]
    fn mid_prioritization_delta_gains() {
        let params = table2_params();
        let cps = table2_cps();
        let pre = DelayProfile::uniform(&params);
        let mut post = DelayProfile::uniform(&params);
        post.set(3, 4.5471);
        let deltas = prioritization_deltas(&params, &cps, &pre, &post).unwrap();

        let d3 = deltas[2];
        assert!((d3.dn - 0.0058116).abs() < 1e-12);
        assert!((d3.dn1 - 0.0029058).abs() < 1e-12);
        assert!((d3.dn2 - 0.0029058).abs() < 1e-12);

        let d2 = deltas[1];
        assert!(d2.dn.abs() <= 1e-12);
        assert!((d2.dn1 + 0.0014529).abs() < 1e-12);
        assert!((d2.dr + 0.0082452075).abs() < 1e-9);
    }

    #[test]
    fn deltas_vanish_on_identical_profiles() {
        let params = table2_params();
        let cps = table2_cps();
        let delays = DelayProfile::uniform(&params);
        for d in prioritization_deltas(&params, &cps, &delays, &delays).unwrap() {
            assert_eq!(d.dn, 0.0);
            assert_eq!(d.dn1, 0.0);
            assert_eq!(d.dr, 0.0);
        }
    }
}
