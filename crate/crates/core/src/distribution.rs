//! Piecewise-linear CDF of user positions for the non-uniform market variant.

use serde::{Deserialize, Serialize};

use crate::market::MarketError;
use crate::Result;

/// A user-position distribution given as a piecewise-linear CDF on [0, 1].
///
/// Knots are (position, cdf) pairs; the first must be (0, 0), the last (1, 1),
/// and the cdf values nondecreasing. Evaluation clamps outside the support.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionSpec {
    knots: Vec<(f64, f64)>,
}

impl DistributionSpec {
    pub fn new(knots: Vec<(f64, f64)>) -> Result<Self> {
        if knots.len() < 2 {
            return Err(MarketError::InvalidDistribution(
                "need at least two knots".into(),
            ));
        }
        let first = knots[0];
        let last = knots[knots.len() - 1];
        if first != (0.0, 0.0) {
            return Err(MarketError::InvalidDistribution(format!(
                "first knot must be (0, 0), got ({}, {})",
                first.0, first.1
            )));
        }
        if last != (1.0, 1.0) {
            return Err(MarketError::InvalidDistribution(format!(
                "last knot must be (1, 1), got ({}, {})",
                last.0, last.1
            )));
        }
        for w in knots.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(MarketError::InvalidDistribution(format!(
                    "knot positions must be strictly increasing: {} then {}",
                    w[0].0, w[1].0
                )));
            }
            if w[1].1 < w[0].1 {
                return Err(MarketError::InvalidDistribution(format!(
                    "cdf must be nondecreasing: {} then {}",
                    w[0].1, w[1].1
                )));
            }
        }
        Ok(Self { knots })
    }

    /// The uniform distribution, F(x) = x.
    pub fn uniform() -> Self {
        Self {
            knots: vec![(0.0, 0.0), (1.0, 1.0)],
        }
    }

    pub fn knots(&self) -> &[(f64, f64)] {
        &self.knots
    }

    /// Evaluates F(x); constant 0 below the support and 1 above it.
    pub fn cdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        if x >= 1.0 {
            return 1.0;
        }
        // Rightmost knot with position <= x.
        let idx = match self
            .knots
            .binary_search_by(|&(p, _)| p.partial_cmp(&x).unwrap())
        {
            Ok(i) => return self.knots[i].1,
            Err(i) => i - 1,
        };
        let (x0, f0) = self.knots[idx];
        let (x1, f1) = self.knots[idx + 1];
        f0 + (x - x0) / (x1 - x0) * (f1 - f0)
    }
}
