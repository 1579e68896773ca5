use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Distribution of the number of consumptions a customer makes in a period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DemandDist {
    /// Uniform over the integers `min..=max`.
    Uniform { min: u32, max: u32 },
    /// Finite support with (unnormalized) weights.
    Empirical { values: Vec<u32>, weights: Vec<f64> },
}

impl DemandDist {
    pub fn uniform(min: u32, max: u32) -> Result<Self> {
        if min < 1 || min > max {
            return Err(Error::Config(format!("invalid demand range [{min}, {max}]")));
        }
        Ok(DemandDist::Uniform { min, max })
    }

    pub fn empirical(values: Vec<u32>, weights: Vec<f64>) -> Result<Self> {
        if values.is_empty() || values.len() != weights.len() {
            return Err(Error::Config("empirical demand needs matching values and weights".into()));
        }
        if values.contains(&0) {
            return Err(Error::Config("demand values must be >= 1".into()));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) || weights.iter().sum::<f64>() <= 0.0 {
            return Err(Error::Config("demand weights must be non-negative with positive mass".into()));
        }
        Ok(DemandDist::Empirical { values, weights })
    }

    /// Point mass at `n`.
    pub fn constant(n: u32) -> Result<Self> {
        Self::uniform(n, n)
    }

    pub fn max(&self) -> u32 {
        match self {
            DemandDist::Uniform { max, .. } => *max,
            DemandDist::Empirical { values, weights } => values
                .iter()
                .zip(weights)
                .filter(|(_, w)| **w > 0.0)
                .map(|(v, _)| *v)
                .max()
                .unwrap_or(0),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        match self {
            DemandDist::Uniform { min, max } => rng.random_range(*min..=*max),
            DemandDist::Empirical { values, weights } => {
                let total: f64 = weights.iter().sum();
                let mut u = rng.random::<f64>() * total;
                for (v, w) in values.iter().zip(weights) {
                    if u < *w {
                        return *v;
                    }
                    u -= w;
                }
                // rounding fell off the end: last value with positive weight
                values
                    .iter()
                    .zip(weights)
                    .rev()
                    .find(|(_, w)| **w > 0.0)
                    .map(|(v, _)| *v)
                    .unwrap_or(values[0])
            }
        }
    }
}
