//! Scenario file schema: parsing, validation, and conversion to core types.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use prio_market_core::{
    market::validate_cps, CostModel, CpProfile, DelayProfile, DistributionSpec, MarketError,
    MarketParams,
};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read scenario file: {0}")]
    Io(#[from] std::io::Error),

    #[error("scenario parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("scenario invariant violated: {0}")]
    Invariant(String),
}

impl From<MarketError> for ScenarioError {
    fn from(e: MarketError) -> Self {
        ScenarioError::Invariant(e.to_string())
    }
}

/// Global market scalars as they appear in scenario files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketSection {
    pub v: f64,
    pub t: f64,
    pub theta: f64,
    pub delta: f64,
    pub lambda: f64,
    pub f: f64,
    pub m: usize,
    pub d0: f64,
}

/// One content provider entry; index is the array position (1-based).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CpSection {
    pub s: f64,
    pub r: f64,
    #[serde(default, skip_serializing_if = "is_false")]
    pub z: bool,
}

fn is_false(b: &bool) -> bool {
    !*b
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistributionSection {
    pub knots: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    /// Parameter path: `market.<field>`, `cost.c`, `cps.<j>.s`, `cps.<j>.r`,
    /// or `cps.*.s` / `cps.*.r` for all CPs at once.
    pub path: String,
    pub range: (f64, f64),
    pub steps: usize,
}

/// Which solution family the commands should use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Multi,
    Single,
    AllDual,
    #[default]
    Auto,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Mode::Multi => "multi",
            Mode::Single => "single",
            Mode::AllDual => "all_dual",
            Mode::Auto => "auto",
        };
        f.write_str(s)
    }
}

fn default_cost() -> CostModel {
    CostModel::reciprocal(1.0)
}

/// A full scenario: market, CPs, cost model, and the optional distribution,
/// explicit delay profile, sweep spec and mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub market: MarketSection,
    pub cps: Vec<CpSection>,
    #[serde(default = "default_cost")]
    pub cost: CostModel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distribution: Option<DistributionSection>,
    /// Explicit per-CP delay profile; entries above `d0` mean throttling and
    /// require the `--allow-throttling` flag.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delays: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
    #[serde(default)]
    pub mode: Mode,
}

impl Scenario {
    pub fn params(&self) -> MarketParams {
        MarketParams {
            base_value: self.market.v,
            transport_cost: self.market.t,
            residual_rate: self.market.theta,
            ad_attenuation: self.market.delta,
            traffic_rate: self.market.lambda,
            access_fee: self.market.f,
            cp_count: self.market.m,
            default_delay: self.market.d0,
        }
    }

    pub fn cp_profiles(&self) -> Vec<CpProfile> {
        self.cps
            .iter()
            .enumerate()
            .map(|(i, c)| CpProfile {
                index: i + 1,
                subscription_fee: c.s,
                ad_rate: c.r,
                prioritized: c.z,
            })
            .collect()
    }

    pub fn distribution_spec(&self) -> Result<Option<DistributionSpec>, ScenarioError> {
        match &self.distribution {
            None => Ok(None),
            Some(d) => Ok(Some(DistributionSpec::new(d.knots.clone())?)),
        }
    }

    /// The deployed delay profile: explicit delays when given, otherwise the
    /// default tier everywhere. Throttled entries need `allow_throttling`.
    pub fn delay_profile(&self, allow_throttling: bool) -> Result<DelayProfile, ScenarioError> {
        let params = self.params();
        match &self.delays {
            None => Ok(DelayProfile::uniform(&params)),
            Some(d) => {
                if d.len() != params.cp_count {
                    return Err(ScenarioError::Invariant(format!(
                        "delays: expected {} entries, got {}",
                        params.cp_count,
                        d.len()
                    )));
                }
                if allow_throttling {
                    Ok(DelayProfile::with_throttling(d.clone())?)
                } else {
                    DelayProfile::new(d.clone(), params.default_delay).map_err(|e| {
                        ScenarioError::Invariant(format!(
                            "{e}; pass --allow-throttling to permit delays above d0"
                        ))
                    })
                }
            }
        }
    }

    /// Checks every scenario invariant; returns the first violation.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.cps.len() != self.market.m {
            return Err(ScenarioError::Invariant(format!(
                "cps: expected m = {} entries, got {}",
                self.market.m,
                self.cps.len()
            )));
        }
        let params = self.params();
        params.validate()?;
        validate_cps(&params, &self.cp_profiles())?;
        self.cost.validate()?;
        self.distribution_spec()?;
        if let Some(d) = &self.delays {
            if d.len() != self.market.m {
                return Err(ScenarioError::Invariant(format!(
                    "delays: expected {} entries, got {}",
                    self.market.m,
                    d.len()
                )));
            }
            if let Some(bad) = d.iter().find(|&&x| x <= 0.0 || x.is_nan()) {
                return Err(ScenarioError::Invariant(format!(
                    "delays: every entry must be > 0, got {bad}"
                )));
            }
        }
        if let Some(sweep) = &self.sweep {
            if sweep.steps == 0 {
                return Err(ScenarioError::Invariant(
                    "sweep.steps: must be at least 1".into(),
                ));
            }
            if !(sweep.range.0.is_finite() && sweep.range.1.is_finite()) {
                return Err(ScenarioError::Invariant(
                    "sweep.range: bounds must be finite".into(),
                ));
            }
            if sweep.range.1 < sweep.range.0 {
                return Err(ScenarioError::Invariant(format!(
                    "sweep.range: upper bound {} below lower bound {}",
                    sweep.range.1, sweep.range.0
                )));
            }
            parse_sweep_path(&sweep.path, self.market.m)?;
        }
        Ok(())
    }

    /// Serializes back to the on-disk JSON form.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }
}

/// Loads and validates a scenario file.
pub fn load_scenario(path: &Path) -> Result<Scenario, ScenarioError> {
    let text = fs::read_to_string(path)?;
    let scenario: Scenario = serde_json::from_str(&text).map_err(|e| ScenarioError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    scenario.validate()?;
    Ok(scenario)
}

/// A parsed sweep target.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SweepPath {
    MarketV,
    MarketT,
    MarketTheta,
    MarketDelta,
    MarketLambda,
    MarketF,
    MarketD0,
    CostC,
    /// 1-based CP index, or None for all CPs.
    CpSubscription(Option<usize>),
    CpAdRate(Option<usize>),
}

impl SweepPath {
    /// Short column label for the swept value.
    pub fn label(&self) -> String {
        match self {
            SweepPath::MarketV => "v".into(),
            SweepPath::MarketT => "t".into(),
            SweepPath::MarketTheta => "theta".into(),
            SweepPath::MarketDelta => "delta".into(),
            SweepPath::MarketLambda => "lambda".into(),
            SweepPath::MarketF => "f".into(),
            SweepPath::MarketD0 => "d0".into(),
            SweepPath::CostC => "c".into(),
            SweepPath::CpSubscription(Some(j)) => format!("s_{j}"),
            SweepPath::CpSubscription(None) => "s_all".into(),
            SweepPath::CpAdRate(Some(j)) => format!("r_{j}"),
            SweepPath::CpAdRate(None) => "r_all".into(),
        }
    }

    /// Applies the value to a copy of the scenario.
    pub fn apply(&self, scenario: &Scenario, value: f64) -> Scenario {
        let mut s = scenario.clone();
        match self {
            SweepPath::MarketV => s.market.v = value,
            SweepPath::MarketT => s.market.t = value,
            SweepPath::MarketTheta => s.market.theta = value,
            SweepPath::MarketDelta => s.market.delta = value,
            SweepPath::MarketLambda => s.market.lambda = value,
            SweepPath::MarketF => s.market.f = value,
            SweepPath::MarketD0 => s.market.d0 = value,
            SweepPath::CostC => s.cost = CostModel::reciprocal(value),
            SweepPath::CpSubscription(Some(j)) => s.cps[j - 1].s = value,
            SweepPath::CpSubscription(None) => s.cps.iter_mut().for_each(|c| c.s = value),
            SweepPath::CpAdRate(Some(j)) => s.cps[j - 1].r = value,
            SweepPath::CpAdRate(None) => s.cps.iter_mut().for_each(|c| c.r = value),
        }
        s
    }
}

/// Parses a sweep path like `market.v`, `cost.c`, `cps.3.s` or `cps.*.r`.
pub fn parse_sweep_path(path: &str, cp_count: usize) -> Result<SweepPath, ScenarioError> {
    let parts: Vec<&str> = path.split('.').collect();
    let err = || {
        ScenarioError::Invariant(format!(
            "sweep.path: unsupported path `{path}` (use market.<v|t|theta|delta|lambda|f|d0>, \
             cost.c, cps.<j|*>.<s|r>)"
        ))
    };
    match parts.as_slice() {
        ["market", "v"] => Ok(SweepPath::MarketV),
        ["market", "t"] => Ok(SweepPath::MarketT),
        ["market", "theta"] => Ok(SweepPath::MarketTheta),
        ["market", "delta"] => Ok(SweepPath::MarketDelta),
        ["market", "lambda"] => Ok(SweepPath::MarketLambda),
        ["market", "f"] => Ok(SweepPath::MarketF),
        ["market", "d0"] => Ok(SweepPath::MarketD0),
        ["cost", "c"] => Ok(SweepPath::CostC),
        ["cps", idx, field] => {
            let cp = if *idx == "*" {
                None
            } else {
                let j: usize = idx.parse().map_err(|_| err())?;
                if j < 1 || j > cp_count {
                    return Err(ScenarioError::Invariant(format!(
                        "sweep.path: CP index {j} out of range 1..={cp_count}"
                    )));
                }
                Some(j)
            };
            match *field {
                "s" => Ok(SweepPath::CpSubscription(cp)),
                "r" => Ok(SweepPath::CpAdRate(cp)),
                _ => Err(err()),
            }
        }
        _ => Err(err()),
    }
}

/// The grid of swept values: `steps` points from lo to hi inclusive.
pub fn sweep_values(range: (f64, f64), steps: usize) -> Vec<f64> {
    if steps == 1 {
        return vec![range.0];
    }
    (0..steps)
        .map(|i| range.0 + (range.1 - range.0) * i as f64 / (steps - 1) as f64)
        .collect()
}
