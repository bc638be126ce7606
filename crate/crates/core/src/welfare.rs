//! User welfare via the closed form and via numerical integration of realized
//! bundle utilities, with delta comparisons across delay profiles.
//!
//! The access fee is excluded from welfare everywhere: it is constant under
//! full coverage, so all welfare *deltas* are invariant to the choice. The
//! closed form's absolute level may differ from the numeric level by a
//! profile-independent constant; comparisons across profiles are exact.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::market::{
    best_bundle, bundle_utility, tau_unchecked, Bundle, CandidateSet, CpProfile, DelayProfile,
    MarketError, MarketParams,
};
use crate::Result;

/// Which evaluation path produced a welfare figure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum WelfareMethod {
    Closed,
    Numeric { grid: usize },
}

/// Total and per-segment welfare.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WelfareReport {
    pub total: f64,
    /// One entry per adjacent-CP segment, summing to `total`.
    pub per_segment: Vec<f64>,
    pub method: WelfareMethod,
    /// Always false: the access fee is a pure transfer and excluded.
    pub includes_access_fee: bool,
}

/// Closed-form welfare of the segment between two adjacent CPs.
pub fn segment_welfare_closed(
    params: &MarketParams,
    left: &CpProfile,
    right: &CpProfile,
    d_left: f64,
    d_right: f64,
) -> Result<f64> {
    if params.residual_rate <= 0.0 {
        return Err(MarketError::SinglePurchaseRegime);
    }
    let theta = params.residual_rate;
    let t = params.transport_cost;
    let seg = params.segment_length();
    let tau_l = tau_unchecked(params, left, d_left);
    let tau_r = tau_unchecked(params, right, d_right);
    let gap = d_right - d_left;
    Ok((1.0 - theta)
        * (seg * (params.base_value - 0.5 * (d_left + d_right) - 0.5 * t * seg)
            + gap * gap / (4.0 * t))
        + theta * 0.5 * t * (tau_l * tau_l + tau_r * tau_r))
}

/// Closed-form welfare over all segments.
pub fn total_welfare_closed(
    params: &MarketParams,
    cps: &[CpProfile],
    delays: &DelayProfile,
) -> Result<WelfareReport> {
    let mut per_segment = Vec::with_capacity(params.segment_count());
    for j in 1..params.cp_count {
        per_segment.push(segment_welfare_closed(
            params,
            &cps[j - 1],
            &cps[j],
            delays.get(j),
            delays.get(j + 1),
        )?);
    }
    Ok(WelfareReport {
        total: per_segment.iter().sum(),
        per_segment,
        method: WelfareMethod::Closed,
        includes_access_fee: false,
    })
}

/// Realized welfare of the user at `x`: best-bundle utility gross of the
/// access fee, floored at zero by opting out.
pub(crate) fn user_welfare(
    params: &MarketParams,
    cps: &[CpProfile],
    delays: &DelayProfile,
    x: f64,
) -> f64 {
    match best_bundle(x, params, cps, delays, CandidateSet::All) {
        Bundle::OptOut => 0.0,
        b => bundle_utility(x, b, params, cps, delays) + params.access_fee,
    }
}

const INTERVAL_CHUNK: usize = 8192;

/// Numerical welfare: trapezoidal integration of realized bundle utilities
/// over `grid` equally spaced positions.
///
/// Interval contributions are accumulated per chunk in fixed order, so the
/// result is identical regardless of thread count.
pub fn total_welfare_numeric(
    params: &MarketParams,
    cps: &[CpProfile],
    delays: &DelayProfile,
    grid: usize,
) -> Result<WelfareReport> {
    if grid < 1001 {
        return Err(MarketError::InvalidParameter {
            name: "grid",
            reason: format!("numeric welfare needs at least 1001 positions, got {grid}"),
        });
    }
    let segs = params.segment_count();
    let h = 1.0 / (grid - 1) as f64;
    let intervals = grid - 1;

    let chunk_sums: Vec<Vec<f64>> = (0..intervals)
        .into_par_iter()
        .chunks(INTERVAL_CHUNK)
        .map(|chunk| {
            let mut sums = vec![0.0; segs];
            let first = chunk[0];
            let mut prev = user_welfare(params, cps, delays, first as f64 * h);
            for i in chunk {
                let next = user_welfare(params, cps, delays, (i + 1) as f64 * h);
                let mid = (i as f64 + 0.5) * h;
                let seg = ((mid * segs as f64).floor() as usize).min(segs - 1);
                sums[seg] += 0.5 * h * (prev + next);
                prev = next;
            }
            sums
        })
        .collect();

    let mut per_segment = vec![0.0; segs];
    for sums in &chunk_sums {
        for (acc, s) in per_segment.iter_mut().zip(sums) {
            *acc += s;
        }
    }
    Ok(WelfareReport {
        total: per_segment.iter().sum(),
        per_segment,
        method: WelfareMethod::Numeric { grid },
        includes_access_fee: false,
    })
}

/// Welfare change from `pre` to `post` delays, by the chosen method.
pub fn welfare_delta(
    params: &MarketParams,
    cps: &[CpProfile],
    pre: &DelayProfile,
    post: &DelayProfile,
    method: WelfareMethod,
) -> Result<f64> {
    match method {
        WelfareMethod::Closed => Ok(total_welfare_closed(params, cps, post)?.total
            - total_welfare_closed(params, cps, pre)?.total),
        WelfareMethod::Numeric { grid } => Ok(total_welfare_numeric(params, cps, post, grid)?
            .total
            - total_welfare_numeric(params, cps, pre, grid)?.total),
    }
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

    #[test]
    fn symmetric_segment_value() {
        let params = table2_params();
        let cps = table2_cps();
        let w = segment_welfare_closed(&params, &cps[1], &cps[2], 6.0, 6.0).unwrap();
        assert!((w - 9.8760).abs() < 1e-10);
    }

    #[test]
    fn equal_delays_drop_the_gap_term() {
        let params = table2_params();
        let cps = table2_cps();
        let w = segment_welfare_closed(&params, &cps[1], &cps[2], 5.0, 5.0).unwrap();
        let theta = 0.5;
        let tau = (100.0 - 5.0 - 20.0) / 500.0;
        let no_gap = (1.0 - theta) * (0.2 * (100.0 - 5.0 - 50.0)) + theta * 250.0 * 2.0 * tau * tau;
        assert!((w - no_gap).abs() < 1e-12);
    }

    #[test]
    fn welfare_decreases_in_each_delay() {
        let params = table2_params();
        let cps = table2_cps();
        let eps = 1e-4;
        for (dl, dr) in [(6.0, 6.0), (5.0, 6.0), (4.5, 5.5)] {
            let base = segment_welfare_closed(&params, &cps[1], &cps[2], dl, dr).unwrap();
            let left = segment_welfare_closed(&params, &cps[1], &cps[2], dl - eps, dr).unwrap();
            let right = segment_welfare_closed(&params, &cps[1], &cps[2], dl, dr - eps).unwrap();
            assert!(left > base);
            assert!(right > base);
        }
    }

    #[test]
    fn numeric_segments_sum_to_total() {
        let params = table2_params();
        let cps = table2_cps();
        let delays = DelayProfile::uniform(&params);
        let report = total_welfare_numeric(&params, &cps, &delays, 5001).unwrap();
        let sum: f64 = report.per_segment.iter().sum();
        assert!((sum - report.total).abs() < 1e-9);
        assert!(!report.includes_access_fee);
    }

    #[test]
    fn closed_and_numeric_deltas_agree() {
        let params = table2_params();
        let cps = table2_cps();
        let pre = DelayProfile::uniform(&params);
        let mut post = DelayProfile::uniform(&params);
        post.set(3, 4.5471);
        let n = 20001;
        let closed = welfare_delta(&params, &cps, &pre, &post, WelfareMethod::Closed).unwrap();
        let numeric = welfare_delta(
            &params,
            &cps,
            &pre,
            &post,
            WelfareMethod::Numeric { grid: n },
        )
        .unwrap();
        let tol = (1e-3_f64).max(5.0 / n as f64);
        assert!(
            (closed - numeric).abs() < tol,
            "closed {closed} vs numeric {numeric}"
        );
        assert!(closed > 0.0);
    }

    #[test]
    fn numeric_delta_is_grid_stable() {
        let params = table2_params();
        let cps = table2_cps();
        let pre = DelayProfile::uniform(&params);
        let mut post = DelayProfile::uniform(&params);
        post.set(2, 5.0);
        let d1 = welfare_delta(
            &params,
            &cps,
            &pre,
            &post,
            WelfareMethod::Numeric { grid: 10001 },
        )
        .unwrap();
        let d2 = welfare_delta(
            &params,
            &cps,
            &pre,
            &post,
            WelfareMethod::Numeric { grid: 20001 },
        )
        .unwrap();
        assert!((d1 - d2).abs() < (1e-3_f64).max(5.0 / 10001.0));
    }

    #[test]
    fn opt_out_scenario_floors_at_zero() {
        let mut params = table2_params();
        params.base_value = 30.0;
        let cps = table2_cps();
        let delays = DelayProfile::uniform(&params);
        let report = total_welfare_numeric(&params, &cps, &delays, 2001).unwrap();
        assert!(report.total >= 0.0);
    }

    #[test]
    fn identical_profiles_have_zero_delta() {
        let params = table2_params();
        let cps = table2_cps();
        let delays = DelayProfile::uniform(&params);
        let d = welfare_delta(&params, &cps, &delays, &delays, WelfareMethod::Closed).unwrap();
        assert_eq!(d, 0.0);
    }

    #[test]
    fn throttled_competitors_can_sink_welfare() {
        // One prioritized lane with everyone else throttled by 1% can still
        // lose welfare overall when the prioritized CP is small.
        let params = table2_params();
        let cps = table2_cps();
        let pre = DelayProfile::uniform(&params);
        let mut delays = vec![1.01 * 6.0; 6];
        delays[2] = 5.8; // mild fast lane for CP3
        let post = DelayProfile::with_throttling(delays).unwrap();
        let delta = welfare_delta(&params, &cps, &pre, &post, WelfareMethod::Closed).unwrap();
        assert!(delta < 0.0);
    }
}
