use crate::error::{Error, Result};
use crate::game::Award;

use super::{PreferenceMatrix, StrategyDistribution};

/// Estimates whose opponent labels are ordered so that a higher label means
/// a lower expected usage bin for the observing company.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedEstimates {
    pub pref: PreferenceMatrix,
    pub theta: Vec<StrategyDistribution>,
    /// `permutation[new_label] = old_label`.
    pub permutation: Vec<usize>,
}

impl AlignedEstimates {
    /// Wraps estimates that are claimed to be aligned already (e.g. read
    /// back from disk), checking the claim.
    pub fn new(pref: PreferenceMatrix, theta: Vec<StrategyDistribution>) -> Result<Self> {
        if theta.iter().any(|t| t.len() != pref.opp_arity()) {
            return Err(Error::Dimension {
                expected: pref.opp_arity(),
                got: theta.iter().map(|t| t.len()).find(|&l| l != pref.opp_arity()).unwrap_or(0),
            });
        }
        let e = expected_bins(&pref);
        if e.windows(2).any(|w| w[1] > w[0] + 1e-12) {
            return Err(Error::Unaligned);
        }
        let permutation = (0..pref.opp_arity()).collect();
        Ok(AlignedEstimates {
            pref,
            theta,
            permutation,
        })
    }
}

/// Expected bin index per opponent label, averaged over own awards.
pub fn expected_bins(pref: &PreferenceMatrix) -> Vec<f64> {
    let own = pref.own_arity() as f64;
    (0..pref.opp_arity())
        .map(|k| {
            (0..pref.own_arity())
                .map(|b1| {
                    pref.row(b1, k)
                        .iter()
                        .enumerate()
                        .map(|(h, p)| h as f64 * p)
                        .sum::<f64>()
                })
                .sum::<f64>()
                / own
        })
        .collect()
}

/// Relabels opponent awards so expected bins are non-increasing in the
/// label, applying the same permutation to every strategy estimate. Ties
/// keep their original order.
pub fn align_labels(pref: &PreferenceMatrix, theta: &[StrategyDistribution]) -> AlignedEstimates {
    let e = expected_bins(pref);
    let mut permutation: Vec<usize> = (0..e.len()).collect();
    permutation.sort_by(|&a, &b| e[b].total_cmp(&e[a]));

    let (own, opp, acc) = (pref.own_arity(), pref.opp_arity(), pref.acc());
    let mut probs = Vec::with_capacity(own * opp * acc);
    for b1 in 0..own {
        for &old in &permutation {
            probs.extend_from_slice(pref.row(b1, old));
        }
    }
    let theta = theta
        .iter()
        .map(|t| StrategyDistribution::from_unchecked(permutation.iter().map(|&old| t.probs()[old]).collect()))
        .collect();
    AlignedEstimates {
        pref: PreferenceMatrix::from_unchecked(own, opp, acc, probs),
        theta,
        permutation,
    }
}

/// Bin distribution for own award `b1`, mixing the preference rows over
/// the opponent strategy.
pub fn predict_bin_distribution(pref: &PreferenceMatrix, theta: &StrategyDistribution, b1: Award) -> Vec<f64> {
    let mut out = vec![0.0; pref.acc()];
    for (k, wk) in theta.probs().iter().enumerate() {
        for (o, p) in out.iter_mut().zip(pref.row(b1, k)) {
            *o += wk * p;
        }
    }
    out
}
