//! Opponent-strategy inference from one company's own logs.
//!
//! Each record `(customer, own award b1, usage bin h)` is explained by a
//! hidden opponent award `k`. Customers (or strategy groups) draw `k` from
//! a strategy distribution `theta ~ Dir(alpha)`; the bin is drawn from a
//! preference distribution `p(b1, k) ~ Dir(beta)` over `acc` bins shared by
//! the whole preference group. Both distributions are integrated out and
//! only the assignments `k` are sampled.

mod align;
mod corpus;
mod files;
mod sampler;
mod synthetic;

pub use align::{align_labels, expected_bins, predict_bin_distribution, AlignedEstimates};
pub use corpus::{Corpus, LdaRecord};
pub use files::{
    read_preference, read_theta, write_diagnostics, write_preference, write_theta, DiagnosticRow,
    PreferenceRow, ThetaRow,
};
pub use sampler::{estimate, infer, ChainTrace, Estimator, GibbsState, Inference};
pub use synthetic::{generate_synthetic, impute_demand, sample_dirichlet, Hidden, SyntheticData};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::Award;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LdaConfig {
    /// Number of usage bins.
    pub acc: usize,
    /// Number of opponent award labels.
    pub opp_arity: usize,
    pub alpha: f64,
    pub beta: f64,
    pub sweeps: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub chains: usize,
    pub seed: u64,
    /// Redraw imputed demands at the start of every sweep instead of once.
    pub reimpute_each_sweep: bool,
}

impl Default for LdaConfig {
    fn default() -> Self {
        LdaConfig {
            acc: 10,
            opp_arity: 5,
            alpha: 1.0,
            beta: 1.0,
            sweeps: 2000,
            burn_in: 1000,
            thin: 10,
            chains: 4,
            seed: 0,
            reimpute_each_sweep: false,
        }
    }
}

impl LdaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.acc < 2 {
            return Err(Error::Config(format!("acc must be >= 2, got {}", self.acc)));
        }
        if self.opp_arity < 2 {
            return Err(Error::Config(format!(
                "opp_arity must be >= 2, got {}",
                self.opp_arity
            )));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite() && self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::Config("alpha and beta must be positive".into()));
        }
        if self.burn_in >= self.sweeps {
            return Err(Error::Config(format!(
                "burn_in ({}) must be below sweeps ({})",
                self.burn_in, self.sweeps
            )));
        }
        if self.thin == 0 || self.chains == 0 {
            return Err(Error::Config("thin and chains must be >= 1".into()));
        }
        Ok(())
    }
}

/// A categorical distribution over opponent award labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyDistribution(Vec<f64>);

impl StrategyDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        validate_probs(&probs, "strategy distribution")?;
        Ok(StrategyDistribution(probs))
    }

    pub fn uniform(k: usize) -> Self {
        StrategyDistribution(vec![1.0 / k as f64; k])
    }

    pub fn point_mass(k: usize, at: usize) -> Self {
        let mut p = vec![0.0; k];
        p[at] = 1.0;
        StrategyDistribution(p)
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        sample_categorical(&self.0, rng)
    }

    pub(crate) fn from_unchecked(probs: Vec<f64>) -> Self {
        StrategyDistribution(probs)
    }
}

/// Bin distributions for every (own award, opponent label) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceMatrix {
    own_arity: usize,
    opp_arity: usize,
    acc: usize,
    probs: Vec<f64>,
}

impl PreferenceMatrix {
    /// `probs` is laid out `[b1][k][bin]`.
    pub fn new(own_arity: usize, opp_arity: usize, acc: usize, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != own_arity * opp_arity * acc {
            return Err(Error::Dimension {
                expected: own_arity * opp_arity * acc,
                got: probs.len(),
            });
        }
        for row in probs.chunks(acc) {
            validate_probs(row, "preference row")?;
        }
        Ok(PreferenceMatrix {
            own_arity,
            opp_arity,
            acc,
            probs,
        })
    }

    pub fn uniform(own_arity: usize, opp_arity: usize, acc: usize) -> Self {
        PreferenceMatrix {
            own_arity,
            opp_arity,
            acc,
            probs: vec![1.0 / acc as f64; own_arity * opp_arity * acc],
        }
    }

    /// Builds a matrix row by row from `f(b1, k) -> bin distribution`.
    pub fn from_fn(
        own_arity: usize,
        opp_arity: usize,
        acc: usize,
        mut f: impl FnMut(Award, usize) -> Vec<f64>,
    ) -> Result<Self> {
        let mut probs = Vec::with_capacity(own_arity * opp_arity * acc);
        for b1 in 0..own_arity {
            for k in 0..opp_arity {
                probs.extend(f(b1, k));
            }
        }
        Self::new(own_arity, opp_arity, acc, probs)
    }

    pub fn own_arity(&self) -> usize {
        self.own_arity
    }

    pub fn opp_arity(&self) -> usize {
        self.opp_arity
    }

    pub fn acc(&self) -> usize {
        self.acc
    }

    pub fn row(&self, b1: Award, k: usize) -> &[f64] {
        let start = (b1 * self.opp_arity + k) * self.acc;
        &self.probs[start..start + self.acc]
    }

    /// Flattened `[b1][k][bin]` probabilities.
    pub fn as_slice(&self) -> &[f64] {
        &self.probs
    }

    /// Expected usage fraction of row `(b1, k)` using bin midpoints.
    pub fn expected_usage(&self, b1: Award, k: usize) -> f64 {
        let acc = self.acc as f64;
        self.row(b1, k)
            .iter()
            .enumerate()
            .map(|(h, p)| (h as f64 + 0.5) / acc * p)
            .sum()
    }

    pub(crate) fn from_unchecked(own_arity: usize, opp_arity: usize, acc: usize, probs: Vec<f64>) -> Self {
        PreferenceMatrix {
            own_arity,
            opp_arity,
            acc,
            probs,
        }
    }
}

fn validate_probs(p: &[f64], what: &str) -> Result<()> {
    if p.is_empty() {
        return Err(Error::Data(format!("{what} is empty")));
    }
    if p.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
        return Err(Error::Data(format!("{what} has a negative or non-finite entry")));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > 1e-9 {
        return Err(Error::Data(format!("{what} sums to {s}, not 1")));
    }
    Ok(())
}

/// Draws an index with probability proportional to `weights`.
pub fn sample_categorical<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i;
        }
        u -= w;
    }
    weights.iter().rposition(|w| *w > 0.0).unwrap_or(weights.len() - 1)
}

pub(crate) fn normalize(v: &mut [f64]) {
    let s: f64 = v.iter().sum();
    if s > 0.0 {
        v.iter_mut().for_each(|x| *x /= s);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_rules() {
        assert!(LdaConfig::default().validate().is_ok());
        let bad = LdaConfig { burn_in: 2000, ..LdaConfig::default() };
        assert!(bad.validate().is_err());
        let bad = LdaConfig { alpha: 0.0, ..LdaConfig::default() };
        assert!(bad.validate().is_err());
        let bad = LdaConfig { acc: 1, ..LdaConfig::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn matrix_rows_validated() {
        assert!(PreferenceMatrix::new(1, 1, 2, vec![0.5, 0.6]).is_err());
        assert!(PreferenceMatrix::new(1, 1, 2, vec![0.5]).is_err());
        let m = PreferenceMatrix::new(1, 2, 2, vec![1.0, 0.0, 0.25, 0.75]).unwrap();
        assert_eq!(m.row(0, 1), &[0.25, 0.75]);
        assert!((m.expected_usage(0, 0) - 0.25).abs() < 1e-15);
        assert!((m.expected_usage(0, 1) - (0.25 * 0.25 + 0.75 * 0.75)).abs() < 1e-15);
    }
}
