use rand::Rng;
use rand_distr::{Distribution, Gamma};

use crate::demand::DemandDist;
use crate::error::{Error, Result};
use crate::game::{Award, ConsumptionRecord};

use super::{sample_categorical, PreferenceMatrix, StrategyDistribution};

/// Rejection-samples a demand from `dist` until it can cover `count`.
pub fn impute_demand<R: Rng + ?Sized>(count: u32, dist: &DemandDist, rng: &mut R) -> Result<u32> {
    let max = dist.max();
    if count > max {
        return Err(Error::Imputation { count, max });
    }
    loop {
        let n = dist.sample(rng);
        if n >= count {
            return Ok(n);
        }
    }
}

/// Draws from a Dirichlet distribution with the given concentrations.
pub fn sample_dirichlet<R: Rng + ?Sized>(alpha: &[f64], rng: &mut R) -> Vec<f64> {
    let mut draws: Vec<f64> = alpha
        .iter()
        .map(|&a| Gamma::new(a, 1.0).expect("positive concentration").sample(rng))
        .collect();
    let s: f64 = draws.iter().sum();
    if s > 0.0 {
        draws.iter_mut().for_each(|x| *x /= s);
    } else {
        // all gamma draws underflowed; fall back to one random vertex
        let k = rng.random_range(0..draws.len());
        draws.iter_mut().enumerate().for_each(|(i, x)| *x = (i == k) as u8 as f64);
    }
    draws
}

/// Counts `c` with `discretize(c, n, acc) == bin`, as an inclusive range.
fn counts_in_bin(bin: usize, n: u32, acc: usize) -> Option<(u32, u32)> {
    let (n64, acc64, h) = (n as u64, acc as u64, bin as u64);
    let lo = (h * n64).div_ceil(acc64);
    let hi = if bin + 1 == acc {
        n64
    } else {
        ((h + 1) * n64).div_ceil(acc64) - 1
    };
    (lo <= hi).then_some((lo as u32, hi.min(n64) as u32))
}

/// The latent variables behind one synthetic record.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Hidden {
    pub opp_award: usize,
    pub bin: usize,
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub records: Vec<ConsumptionRecord>,
    /// Aligned with `records`.
    pub hidden: Vec<Hidden>,
}

/// Samples records from the generative model: for every customer and
/// period the opponent draws its award from the customer's unit strategy,
/// the company plays `own_policy`, a demand and a usage bin are drawn, and
/// a count is chosen uniformly among those falling in that bin. A demand
/// too small to realize the bin is redrawn.
pub fn generate_synthetic<R: Rng + ?Sized>(
    theta: &[StrategyDistribution],
    unit_of: &[usize],
    pref: &PreferenceMatrix,
    demand: &DemandDist,
    mut own_policy: impl FnMut(usize, u32, &mut R) -> Award,
    periods: u32,
    rng: &mut R,
) -> Result<SyntheticData> {
    if let Some(&u) = unit_of.iter().find(|&&u| u >= theta.len()) {
        return Err(Error::Config(format!("unit {u} has no strategy distribution")));
    }
    if theta.iter().any(|t| t.len() != pref.opp_arity()) {
        return Err(Error::Config("strategy arity differs from preference matrix".into()));
    }
    let acc = pref.acc();
    let mut records = Vec::with_capacity(unit_of.len() * periods as usize);
    let mut hidden = Vec::with_capacity(records.capacity());
    for period in 1..=periods {
        for (customer, &unit) in unit_of.iter().enumerate() {
            let opp_award = theta[unit].sample(rng);
            let own_award = own_policy(customer, period, rng);
            if own_award >= pref.own_arity() {
                return Err(Error::Config(format!("own policy chose award {own_award}")));
            }
            let bin = sample_categorical(pref.row(own_award, opp_award), rng);
            let mut attempts = 0;
            let (n, count) = loop {
                let n = demand.sample(rng);
                if let Some((lo, hi)) = counts_in_bin(bin, n, acc) {
                    break (n, rng.random_range(lo..=hi));
                }
                attempts += 1;
                if attempts > 10_000 {
                    return Err(Error::Config(format!(
                        "demand distribution cannot realize usage bin {bin} of {acc}"
                    )));
                }
            };
            records.push(ConsumptionRecord {
                period,
                customer: customer as u32,
                own_award,
                count,
                demand: Some(n),
            });
            hidden.push(Hidden { opp_award, bin });
        }
    }
    Ok(SyntheticData { records, hidden })
}
