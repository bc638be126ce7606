//! Domain types, CP geometry, user utility/bundle-choice primitives,
//! assumption validation and regime classification.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::Result;

/// Errors surfaced by the market model and the solvers built on it.
#[derive(Debug, Error)]
pub enum MarketError {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("CP index {index} out of range 1..={count}")]
    IndexOutOfRange { index: usize, count: usize },

    #[error("residual rate is zero: secondary threshold undefined, use the single-purchase path")]
    SinglePurchaseRegime,

    #[error("negative mass {value} computed for CP {cp}")]
    NegativeMass { cp: usize, value: f64 },

    #[error("regime mismatch: operation requires {expected}, scenario classified as {actual}")]
    RegimeMismatch { expected: Regime, actual: Regime },

    #[error("invalid delay profile: {0}")]
    InvalidDelayProfile(String),

    #[error("nonpositive secondary threshold for CP {cp} at delay {delay}")]
    NonpositiveThreshold { cp: usize, delay: f64 },

    #[error("cost model undefined at delay {delay}")]
    CostUndefined { delay: f64 },

    #[error("capacity allocation infeasible for CP {cp}: {reason}")]
    CapacityInfeasible { cp: usize, reason: String },

    #[error("fixed point did not converge for CP {cp}: residual {residual}")]
    FixedPointDiverged { cp: usize, residual: f64 },

    #[error("empty search grid")]
    EmptyGrid,

    #[error("no feasible candidate: {0}")]
    NoFeasibleCandidate(String),

    #[error("distribution spec invalid: {0}")]
    InvalidDistribution(String),
}

/// Global scalar parameters of the market.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketParams {
    /// Base value users derive from consuming any content.
    pub base_value: f64,
    /// Transport/fit cost per unit of line distance.
    pub transport_cost: f64,
    /// Residual benefit rate for secondary content, in (0, 1).
    pub residual_rate: f64,
    /// Ad-revenue attenuation for secondary users, in [0, 1].
    pub ad_attenuation: f64,
    /// Mean user traffic rate.
    pub traffic_rate: f64,
    /// Flat access fee charged to users by the ISP.
    pub access_fee: f64,
    /// Number of content providers, at least 3.
    pub cp_count: usize,
    /// Default QoS/delay of the non-prioritized tier.
    pub default_delay: f64,
}

impl MarketParams {
    /// Validates every invariant; returns the first violated one.
    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, name: &'static str, reason: String| -> Result<()> {
            if ok {
                Ok(())
            } else {
                Err(MarketError::InvalidParameter { name, reason })
            }
        };
        check(
            self.base_value > 0.0,
            "base_value",
            format!("must be > 0, got {}", self.base_value),
        )?;
        check(
            self.transport_cost > 0.0,
            "transport_cost",
            format!("must be > 0, got {}", self.transport_cost),
        )?;
        check(
            self.residual_rate > 0.0 && self.residual_rate < 1.0,
            "residual_rate",
            format!("must lie in (0, 1), got {}", self.residual_rate),
        )?;
        check(
            (0.0..=1.0).contains(&self.ad_attenuation),
            "ad_attenuation",
            format!("must lie in [0, 1], got {}", self.ad_attenuation),
        )?;
        check(
            self.traffic_rate > 0.0,
            "traffic_rate",
            format!("must be > 0, got {}", self.traffic_rate),
        )?;
        check(
            self.access_fee >= 0.0,
            "access_fee",
            format!("must be >= 0, got {}", self.access_fee),
        )?;
        check(
            self.cp_count >= 3,
            "cp_count",
            format!("must be >= 3, got {}", self.cp_count),
        )?;
        check(
            self.default_delay > 0.0,
            "default_delay",
            format!("must be > 0, got {}", self.default_delay),
        )?;
        Ok(())
    }

    /// Line distance between adjacent CPs, 1/(M-1).
    pub fn segment_length(&self) -> f64 {
        1.0 / (self.cp_count as f64 - 1.0)
    }

    /// Number of adjacent-CP segments, M-1.
    pub fn segment_count(&self) -> usize {
        self.cp_count - 1
    }
}

/// Per-provider profile: subscription fee, ad rate, prioritization flag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CpProfile {
    /// 1-based index on the line; CPs form a contiguous 1..=M sequence.
    pub index: usize,
    /// Subscription fee charged to users, >= 0.
    pub subscription_fee: f64,
    /// Ad-revenue rate per unit of user traffic, >= 0.
    pub ad_rate: f64,
    /// Whether the CP currently holds a prioritization contract.
    pub prioritized: bool,
}

impl CpProfile {
    pub fn new(index: usize, subscription_fee: f64, ad_rate: f64) -> Self {
        Self {
            index,
            subscription_fee,
            ad_rate,
            prioritized: false,
        }
    }
}

/// Validates a CP list: contiguous 1..=M indices, nonnegative fees and rates.
pub fn validate_cps(params: &MarketParams, cps: &[CpProfile]) -> Result<()> {
    if cps.len() != params.cp_count {
        return Err(MarketError::InvalidParameter {
            name: "cps",
            reason: format!("expected {} CPs, got {}", params.cp_count, cps.len()),
        });
    }
    for (i, cp) in cps.iter().enumerate() {
        if cp.index != i + 1 {
            return Err(MarketError::InvalidParameter {
                name: "cps",
                reason: format!(
                    "indices must form 1..={}, slot {} has index {}",
                    cps.len(),
                    i,
                    cp.index
                ),
            });
        }
        if cp.subscription_fee < 0.0 {
            return Err(MarketError::InvalidParameter {
                name: "subscription_fee",
                reason: format!("CP {} has negative fee {}", cp.index, cp.subscription_fee),
            });
        }
        if cp.ad_rate < 0.0 {
            return Err(MarketError::InvalidParameter {
                name: "ad_rate",
                reason: format!("CP {} has negative ad rate {}", cp.index, cp.ad_rate),
            });
        }
    }
    Ok(())
}

/// The per-CP QoS/delay vector currently in force.
///
/// Delays above the default tier mean throttling; such profiles must be built
/// with [`DelayProfile::with_throttling`] so the intent is explicit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelayProfile {
    delays: Vec<f64>,
    throttled: bool,
}

impl DelayProfile {
    /// A no-throttling profile: every delay in (0, default].
    pub fn new(delays: Vec<f64>, default_delay: f64) -> Result<Self> {
        for (i, &d) in delays.iter().enumerate() {
            if d <= 0.0 {
                return Err(MarketError::InvalidDelayProfile(format!(
                    "CP {} delay {} must be > 0",
                    i + 1,
                    d
                )));
            }
            if d > default_delay {
                return Err(MarketError::InvalidDelayProfile(format!(
                    "CP {} delay {} exceeds default {} (use with_throttling to allow)",
                    i + 1,
                    d,
                    default_delay
                )));
            }
        }
        Ok(Self {
            delays,
            throttled: false,
        })
    }

    /// A profile that may throttle (delays above the default tier).
    pub fn with_throttling(delays: Vec<f64>) -> Result<Self> {
        for (i, &d) in delays.iter().enumerate() {
            if d <= 0.0 {
                return Err(MarketError::InvalidDelayProfile(format!(
                    "CP {} delay {} must be > 0",
                    i + 1,
                    d
                )));
            }
        }
        Ok(Self {
            delays,
            throttled: true,
        })
    }

    /// All CPs at the default tier.
    pub fn uniform(params: &MarketParams) -> Self {
        Self {
            delays: vec![params.default_delay; params.cp_count],
            throttled: false,
        }
    }

    /// Delay of CP `j` (1-based).
    pub fn get(&self, j: usize) -> f64 {
        self.delays[j - 1]
    }

    /// Replaces CP `j`'s delay, keeping the throttling flag consistent.
    pub fn set(&mut self, j: usize, delay: f64) {
        self.delays[j - 1] = delay;
    }

    pub fn len(&self) -> usize {
        self.delays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.delays.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.delays
    }

    pub fn is_throttled(&self) -> bool {
        self.throttled
    }
}

/// A user's consumption choice: nothing, one CP, or an ordered pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Bundle {
    /// No participation; normalized to zero utility.
    OptOut,
    /// Consume only CP `j`.
    Single(usize),
    /// Consume `primary` first, then `secondary` (primary != secondary).
    Dual { primary: usize, secondary: usize },
}

impl Bundle {
    /// The primary CP, if the user participates.
    pub fn primary(&self) -> Option<usize> {
        match self {
            Bundle::OptOut => None,
            Bundle::Single(j) => Some(*j),
            Bundle::Dual { primary, .. } => Some(*primary),
        }
    }

    /// The secondary CP, if any.
    pub fn secondary(&self) -> Option<usize> {
        match self {
            Bundle::Dual { secondary, .. } => Some(*secondary),
            _ => None,
        }
    }
}

/// Which bundles `best_bundle` enumerates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CandidateSet {
    /// Every singleton and every ordered pair over all CPs.
    All,
    /// Only the two CPs adjacent to the user's segment.
    Adjacent,
}

/// Which closed-form solution family applies to a scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    /// All conditions hold; the multi-purchasing closed forms are certified.
    FullAssumption1,
    /// Residual rate too small: no dual-purchasing, single-purchase forms apply.
    NoDual,
    /// Residual rate large enough that every user dual-purchases.
    AllDual,
    /// Coverage condition fails: some users may opt out; closed forms are
    /// best-effort and only the oracle is authoritative.
    PartialCoverage,
    /// A bound could not be interpreted, or no solved family applies.
    Degenerate,
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Regime::FullAssumption1 => "full_assumption1",
            Regime::NoDual => "no_dual",
            Regime::AllDual => "all_dual",
            Regime::PartialCoverage => "partial_coverage",
            Regime::Degenerate => "degenerate",
        };
        f.write_str(s)
    }
}

/// Outcome of validating the parameter assumptions, with signed slack per
/// condition (positive slack means satisfied).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    /// Coverage: base value high enough that every user keeps two options.
    pub part1_ok: bool,
    /// Lower bound on the residual rate (some dual-purchasing exists).
    pub part2_lower_ok: bool,
    /// Upper bound on the residual rate (some single-purchasing remains).
    pub part2_upper_ok: bool,
    pub regime: Regime,
    pub margins: BTreeMap<String, f64>,
}

/// Position of CP `j` on the unit line: (j-1)/(M-1).
pub fn cp_position(j: usize, cp_count: usize) -> Result<f64> {
    if j < 1 || j > cp_count || cp_count < 2 {
        return Err(MarketError::IndexOutOfRange {
            index: j,
            count: cp_count,
        });
    }
    Ok((j - 1) as f64 / (cp_count - 1) as f64)
}

/// Distance of a user at `x` from CP `j`.
pub fn distance(x: f64, j: usize, cp_count: usize) -> Result<f64> {
    Ok((x - cp_position(j, cp_count)?).abs())
}

/// Primary and secondary adoption thresholds for one CP at a given delay.
///
/// `primary` is the largest distance at which the CP still yields nonnegative
/// utility as a primary choice (gross of the access fee); `secondary` the
/// same for secondary consumption.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Thresholds {
    pub primary: f64,
    pub secondary: f64,
}

/// Computes both adoption thresholds: ((V - d - S)/t, (V - d - S/theta)/t).
pub fn thresholds(params: &MarketParams, cp: &CpProfile, delay: f64) -> Result<Thresholds> {
    if params.residual_rate <= 0.0 {
        return Err(MarketError::SinglePurchaseRegime);
    }
    let t = params.transport_cost;
    let primary = (params.base_value - delay - cp.subscription_fee) / t;
    let secondary = (params.base_value - delay - cp.subscription_fee / params.residual_rate) / t;
    Ok(Thresholds { primary, secondary })
}

/// Secondary threshold only; the quantity the equilibrium masses are built on.
pub fn secondary_threshold(params: &MarketParams, cp: &CpProfile, delay: f64) -> Result<f64> {
    Ok(thresholds(params, cp, delay)?.secondary)
}

/// Secondary threshold without the zero-residual-rate check; callers must
/// have validated `residual_rate > 0`.
pub(crate) fn tau_unchecked(params: &MarketParams, cp: &CpProfile, delay: f64) -> f64 {
    (params.base_value - delay - cp.subscription_fee / params.residual_rate) / params.transport_cost
}

/// Utility a user at `x` derives from consuming CP `j` as primary content,
/// before the access fee.
fn primary_utility(
    params: &MarketParams,
    cps: &[CpProfile],
    delays: &DelayProfile,
    x: f64,
    j: usize,
) -> f64 {
    let cp = &cps[j - 1];
    let m = (x - (j - 1) as f64 / (params.cp_count - 1) as f64).abs();
    params.base_value - params.transport_cost * m - delays.get(j) - cp.subscription_fee
}

/// Residual utility from consuming CP `k` as secondary content.
fn secondary_utility(
    params: &MarketParams,
    cps: &[CpProfile],
    delays: &DelayProfile,
    x: f64,
    k: usize,
) -> f64 {
    let cp = &cps[k - 1];
    let m = (x - (k - 1) as f64 / (params.cp_count - 1) as f64).abs();
    params.residual_rate * (params.base_value - params.transport_cost * m - delays.get(k))
        - cp.subscription_fee
}

/// Total utility of a user at `x` for a bundle, net of the access fee.
///
/// Opting out is normalized to zero; the access fee is charged only on
/// participation.
pub fn bundle_utility(
    x: f64,
    bundle: Bundle,
    params: &MarketParams,
    cps: &[CpProfile],
    delays: &DelayProfile,
) -> f64 {
    match bundle {
        Bundle::OptOut => 0.0,
        Bundle::Single(j) => primary_utility(params, cps, delays, x, j) - params.access_fee,
        Bundle::Dual { primary, secondary } => {
            primary_utility(params, cps, delays, x, primary)
                + secondary_utility(params, cps, delays, x, secondary)
                - params.access_fee
        }
    }
}

/// The two CPs adjacent to `x`'s segment, as (left, right) 1-based indices.
pub fn segment_cps(x: f64, cp_count: usize) -> (usize, usize) {
    let segs = cp_count - 1;
    let seg = ((x * segs as f64).floor() as usize).min(segs - 1);
    (seg + 1, seg + 2)
}

/// Utility-maximizing bundle for a user at `x`.
///
/// Ties break deterministically: lower primary index first, then Single over
/// Dual, then lower secondary index. Returns `OptOut` when the best
/// participating bundle has negative utility.
pub fn best_bundle(
    x: f64,
    params: &MarketParams,
    cps: &[CpProfile],
    delays: &DelayProfile,
    candidates: CandidateSet,
) -> Bundle {
    let m = params.cp_count;
    let indices: Vec<usize> = match candidates {
        CandidateSet::All => (1..=m).collect(),
        CandidateSet::Adjacent => {
            let (a, b) = segment_cps(x, m);
            vec![a, b]
        }
    };

    // Candidate ranking key: (primary, dual?, secondary); lower wins on ties.
    let mut best: Option<(f64, (usize, u8, usize), Bundle)> = None;
    let mut consider = |utility: f64, key: (usize, u8, usize), bundle: Bundle| {
        let better = match &best {
            None => true,
            Some((bu, bk, _)) => utility > *bu || (utility == *bu && key < *bk),
        };
        if better {
            best = Some((utility, key, bundle));
        }
    };

    for &j in &indices {
        let base = primary_utility(params, cps, delays, x, j) - params.access_fee;
        consider(base, (j, 0, 0), Bundle::Single(j));
        for &k in &indices {
            if k == j {
                continue;
            }
            let u = base + secondary_utility(params, cps, delays, x, k);
            consider(
                u,
                (j, 1, k),
                Bundle::Dual {
                    primary: j,
                    secondary: k,
                },
            );
        }
    }

    match best {
        Some((u, _, bundle)) if u >= 0.0 => bundle,
        _ => Bundle::OptOut,
    }
}

// Condition names used as keys in `AssumptionReport::margins`.
pub const COND_PART1: &str = "part1_coverage";
pub const COND_PART2_LOWER: &str = "part2_theta_lower";
pub const COND_PART2_UPPER: &str = "part2_theta_upper";
pub const COND_NO_DUAL: &str = "no_dual_cutoff";
pub const COND_ALL_DUAL: &str = "all_dual_cutoff";

/// A bound of the form num/den with the convention that a nonpositive
/// denominator with positive numerator means "+infinity"; nonpositive
/// numerator and denominator together are uninterpretable.
fn bound(num: f64, den: f64) -> Option<f64> {
    if den > 0.0 {
        Some(num / den)
    } else if num > 0.0 {
        Some(f64::INFINITY)
    } else {
        None
    }
}

/// Validates the parameter assumptions and classifies the applicable regime.
///
/// Always returns a report; solvers consume the regime. Classification
/// precedence: all conditions hold, then the small/large residual-rate
/// relaxations, then coverage failure, then degenerate.
pub fn validate_assumptions(params: &MarketParams, cps: &[CpProfile]) -> AssumptionReport {
    let v = params.base_value;
    let t = params.transport_cost;
    let theta = params.residual_rate;
    let d0 = params.default_delay;
    let seg = t * params.segment_length();
    let max_s = cps
        .iter()
        .map(|c| c.subscription_fee)
        .fold(f64::NEG_INFINITY, f64::max);
    let min_s = cps
        .iter()
        .map(|c| c.subscription_fee)
        .fold(f64::INFINITY, f64::min);

    let mut margins = BTreeMap::new();

    // Coverage: V > d0 + t/(M-1) + F + max_j S_j.
    let part1_slack = v - d0 - seg - params.access_fee - max_s;
    margins.insert(COND_PART1.to_string(), part1_slack);
    let part1_ok = part1_slack > 0.0;

    // theta lower bound: max_s / (V - d0 - (max_s + t/(M-1))/2).
    let lower = bound(max_s, v - d0 - 0.5 * (max_s + seg));
    let part2_lower_ok = match lower {
        Some(b) => {
            margins.insert(COND_PART2_LOWER.to_string(), theta - b);
            theta > b
        }
        None => {
            margins.insert(COND_PART2_LOWER.to_string(), f64::NAN);
            false
        }
    };

    // theta upper bound: min_s / (V - t/(M-1)).
    let upper = bound(min_s, v - seg);
    let part2_upper_ok = match upper {
        Some(b) => {
            margins.insert(COND_PART2_UPPER.to_string(), b - theta);
            theta < b
        }
        None => {
            margins.insert(COND_PART2_UPPER.to_string(), f64::NAN);
            false
        }
    };

    // Small-theta relaxation at the default tier: theta below
    // S_j / (V - t/(2(M-1)) - d0) for every j.
    let no_dual_cut = cps
        .iter()
        .map(|c| bound(c.subscription_fee, v - 0.5 * seg - d0))
        .try_fold(f64::INFINITY, |acc, b| b.map(|b| acc.min(b)));
    let no_dual = match no_dual_cut {
        Some(cut) => {
            margins.insert(COND_NO_DUAL.to_string(), cut - theta);
            theta < cut
        }
        None => {
            margins.insert(COND_NO_DUAL.to_string(), f64::NAN);
            false
        }
    };

    // Large-theta relaxation: theta above S_j / (V - d0 - t/(M-1)) for every j.
    let all_dual_cut = cps
        .iter()
        .map(|c| bound(c.subscription_fee, v - d0 - seg))
        .try_fold(f64::NEG_INFINITY, |acc, b| b.map(|b| acc.max(b)));
    let all_dual = match all_dual_cut {
        Some(cut) => {
            margins.insert(COND_ALL_DUAL.to_string(), theta - cut);
            theta > cut && cut.is_finite()
        }
        None => {
            margins.insert(COND_ALL_DUAL.to_string(), f64::NAN);
            false
        }
    };

    // The residual-rate relaxations still presume coverage, so part 1 gates
    // them; without it only the oracle is authoritative.
    let regime = if part1_ok && part2_lower_ok && part2_upper_ok {
        Regime::FullAssumption1
    } else if part1_ok && no_dual {
        Regime::NoDual
    } else if part1_ok && all_dual {
        Regime::AllDual
    } else if !part1_ok {
        Regime::PartialCoverage
    } else {
        // Conditions partially hold but no solved family is certified, or a
        // bound was uninterpretable.
        Regime::Degenerate
    };

    AssumptionReport {
        part1_ok,
        part2_lower_ok,
        part2_upper_ok,
        regime,
        margins,
    }
}
