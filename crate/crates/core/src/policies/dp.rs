//! Budget-constrained award allocation over inferred distributions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::Award;
use crate::lda::{AlignedEstimates, PreferenceMatrix, StrategyDistribution};

/// Expected usage fraction for offering `own_award` to a customer whose
/// opponent plays `theta`: the strategy-weighted mean of each preference
/// row's bin-midpoint expectation.
pub fn expected_benefit(pref: &PreferenceMatrix, theta: &StrategyDistribution, own_award: Award) -> f64 {
    theta
        .probs()
        .iter()
        .enumerate()
        .map(|(l, w)| w * pref.expected_usage(own_award, l))
        .sum()
}

/// Benefit of every own award for strategy unit `unit`.
pub fn benefit_row(est: &AlignedEstimates, unit: usize) -> Result<Vec<f64>> {
    let theta = est.theta.get(unit).ok_or_else(|| {
        Error::Config(format!("no strategy estimate for unit {unit}"))
    })?;
    Ok((0..est.pref.own_arity())
        .map(|j| expected_benefit(&est.pref, theta, j))
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Allocation {
    pub awards: Vec<Award>,
    /// Sum of the chosen benefits, added in customer order.
    pub objective: f64,
    pub cost: u64,
}

/// Row of the exported decision file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DpDecision {
    pub customer_id: u64,
    pub award: Award,
    pub psi: f64,
}

/// Maximizes the summed benefit of one award per customer subject to
/// `sum cost <= budget`. Equal values prefer the cheaper award.
///
/// `psi[i][j]` is customer `i`'s benefit from award `j`; `costs[j]` is the
/// integer cost of award `j`.
pub fn dp_allocate(psi: &[Vec<f64>], costs: &[u64], budget: u64) -> Result<Allocation> {
    let num_awards = costs.len();
    if num_awards == 0 || costs[0] != 0 {
        return Err(Error::Config("award 0 must exist and cost nothing".into()));
    }
    if let Some(row) = psi.iter().find(|r| r.len() != num_awards) {
        return Err(Error::Dimension {
            expected: num_awards,
            got: row.len(),
        });
    }
    let width = budget as usize + 1;
    let m = psi.len();
    // best[k]: optimum over the customers seen so far with total cost <= k
    let mut best = vec![0.0f64; width];
    let mut next = vec![0.0f64; width];
    let mut choice = vec![0u8; m * width];
    for (i, row) in psi.iter().enumerate() {
        let picks = &mut choice[i * width..(i + 1) * width];
        for k in 0..width {
            let mut top = best[k] + row[0];
            let mut arg = 0u8;
            for (j, &c) in costs.iter().enumerate().skip(1) {
                let c = c as usize;
                if c > k {
                    continue;
                }
                let v = best[k - c] + row[j];
                if v > top {
                    top = v;
                    arg = j as u8;
                }
            }
            next[k] = top;
            picks[k] = arg;
        }
        std::mem::swap(&mut best, &mut next);
    }

    let mut awards = vec![0; m];
    let mut k = width - 1;
    for i in (0..m).rev() {
        let j = choice[i * width + k] as usize;
        awards[i] = j;
        k -= costs[j] as usize;
    }
    let objective = awards.iter().zip(psi).map(|(&j, row)| row[j]).sum();
    let cost = awards.iter().map(|&j| costs[j]).sum();
    Ok(Allocation {
        awards,
        objective,
        cost,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lda::align_labels;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn point_pref(bins: &[usize], acc: usize) -> PreferenceMatrix {
        PreferenceMatrix::from_fn(1, bins.len(), acc, |_, k| {
            let mut v = vec![0.0; acc];
            v[bins[k]] = 1.0;
            v
        })
        .unwrap()
    }

    #[test]
    fn benefit_examples() {
        let pref = point_pref(&[3, 7], 10);
        let theta = StrategyDistribution::point_mass(2, 0);
        assert!((expected_benefit(&pref, &theta, 0) - 0.35).abs() < 1e-15);

        // rows with expected usage 0.2 (bins 1, 2) and 0.8 (bins 7, 8)
        let pref = PreferenceMatrix::from_fn(1, 2, 10, |_, k| {
            let mut v = vec![0.0; 10];
            let lo = if k == 0 { 1 } else { 7 };
            v[lo] = 0.5;
            v[lo + 1] = 0.5;
            v
        })
        .unwrap();
        assert!((pref.expected_usage(0, 0) - 0.2).abs() < 1e-15);
        assert!((pref.expected_usage(0, 1) - 0.8).abs() < 1e-15);
        let b = expected_benefit(&pref, &StrategyDistribution::uniform(2), 0);
        assert!((b - 0.5).abs() < 1e-15);
    }

    #[test]
    fn benefit_matches_double_sum() {
        let mut r = ChaCha8Rng::seed_from_u64(21);
        let raw: Vec<f64> = (0..3 * 3 * 10).map(|_| r.random::<f64>()).collect();
        let probs: Vec<f64> = raw
            .chunks(10)
            .flat_map(|c| {
                let s: f64 = c.iter().sum();
                c.iter().map(move |x| x / s)
            })
            .collect();
        let pref = PreferenceMatrix::new(3, 3, 10, probs.clone()).unwrap();
        let t: Vec<f64> = (0..3).map(|_| r.random::<f64>()).collect();
        let ts: f64 = t.iter().sum();
        let theta = StrategyDistribution::new(t.iter().map(|x| x / ts).collect()).unwrap();
        for j in 0..3 {
            let mut brute = 0.0;
            for l in 0..3 {
                for h in 0..10 {
                    brute += theta.probs()[l] * probs[(j * 3 + l) * 10 + h] * (h as f64 + 0.5) / 10.0;
                }
            }
            assert!((expected_benefit(&pref, &theta, j) - brute).abs() < 1e-12);
        }
        let aligned = align_labels(&pref, &[theta]);
        assert_eq!(benefit_row(&aligned, 0).unwrap().len(), 3);
        assert!(benefit_row(&aligned, 1).is_err());
    }

    fn brute_force(psi: &[Vec<f64>], costs: &[u64], budget: u64) -> f64 {
        let m = psi.len();
        let b = costs.len();
        let mut best = f64::NEG_INFINITY;
        let mut assign = vec![0usize; m];
        loop {
            let cost: u64 = assign.iter().map(|&j| costs[j]).sum();
            if cost <= budget {
                let v: f64 = assign.iter().zip(psi).map(|(&j, row)| row[j]).sum();
                best = best.max(v);
            }
            let mut i = 0;
            loop {
                if i == m {
                    return best;
                }
                assign[i] += 1;
                if assign[i] < b {
                    break;
                }
                assign[i] = 0;
                i += 1;
            }
        }
    }

    #[test]
    fn zero_budget_and_single_customer() {
        let psi = vec![vec![0.1, 0.5, 0.9], vec![0.2, 0.3, 0.4]];
        let a = dp_allocate(&psi, &[0, 1, 2], 0).unwrap();
        assert_eq!(a.awards, vec![0, 0]);
        assert!((a.objective - 0.3).abs() < 1e-15);
        let a = dp_allocate(&psi[..1], &[0, 1, 2], 100).unwrap();
        assert_eq!(a.awards, vec![2]);
    }

    #[test]
    fn ties_prefer_cheaper() {
        let psi = vec![vec![0.5, 0.5, 0.5]];
        assert_eq!(dp_allocate(&psi, &[0, 1, 2], 5).unwrap().awards, vec![0]);
    }

    #[test]
    fn matches_exhaustive_search() {
        let mut r = ChaCha8Rng::seed_from_u64(99);
        let psi: Vec<Vec<f64>> = (0..5).map(|_| (0..3).map(|_| r.random::<f64>()).collect()).collect();
        let a = dp_allocate(&psi, &[0, 1, 2], 6).unwrap();
        assert_eq!(a.objective, brute_force(&psi, &[0, 1, 2], 6));
        assert!(a.cost <= 6);
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(dp_allocate(&[vec![0.1]], &[0, 1], 3).is_err());
        assert!(dp_allocate(&[vec![0.1, 0.2]], &[1, 2], 3).is_err());
    }
}
