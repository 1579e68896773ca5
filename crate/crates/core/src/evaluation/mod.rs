//! Prediction and distance metrics, plus the policy tournament.

mod tournament;

pub use tournament::{
    build_policy, run_tournament, Cell, CellResult, PolicyKind, TournamentConfig, TournamentReport, TournamentRow,
};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lda::{predict_bin_distribution, AlignedEstimates, LdaRecord};

/// Probabilities below this are raised to it before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NllScore {
    pub n: usize,
    pub nll: f64,
    /// Outcomes whose predicted probability hit the floor.
    pub floor_events: usize,
}

/// `-sum ln p_i` over the probabilities a model gave to the observed
/// outcomes.
pub fn negative_log_likelihood(probs: impl IntoIterator<Item = f64>) -> Result<NllScore> {
    let mut score = NllScore {
        n: 0,
        nll: 0.0,
        floor_events: 0,
    };
    for p in probs {
        score.n += 1;
        let p = if p.is_nan() || p < PROB_FLOOR {
            score.floor_events += 1;
            PROB_FLOOR
        } else {
            p
        };
        score.nll -= p.ln();
    }
    if score.n == 0 {
        return Err(Error::EmptyTestSet);
    }
    Ok(score)
}

/// Probability the mixture predictor gives each record's observed bin.
/// `unit_theta` maps a record's unit to its index in `est.theta`.
pub fn lda_outcome_probs(
    est: &AlignedEstimates,
    records: &[LdaRecord],
    unit_theta: impl Fn(usize) -> Option<usize>,
) -> Result<Vec<f64>> {
    records
        .iter()
        .map(|r| {
            let t = unit_theta(r.unit)
                .and_then(|i| est.theta.get(i))
                .ok_or_else(|| Error::Data(format!("no strategy estimate for unit {}", r.unit)))?;
            if r.own_award >= est.pref.own_arity() || r.bin >= est.pref.acc() {
                return Err(Error::InvalidRecord(format!("{r:?} outside the estimated grid")));
            }
            Ok(predict_bin_distribution(&est.pref, t, r.own_award)[r.bin])
        })
        .collect()
}

/// Earth mover's distance between two distributions on the ordered support
/// `support` (unit-spaced indices when `None`).
pub fn wasserstein1(p: &[f64], q: &[f64], support: Option<&[f64]>) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::SupportMismatch {
            left: p.len(),
            right: q.len(),
        });
    }
    if let Some(x) = support {
        if x.len() != p.len() {
            return Err(Error::SupportMismatch {
                left: p.len(),
                right: x.len(),
            });
        }
        if x.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Data("support positions must be strictly increasing".into()));
        }
    }
    let mut cp = 0.0;
    let mut cq = 0.0;
    let mut d = 0.0;
    for i in 0..p.len().saturating_sub(1) {
        cp += p[i];
        cq += q[i];
        let gap = support.map_or(1.0, |x| x[i + 1] - x[i]);
        d += (cp - cq).abs() * gap;
    }
    Ok(d)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct W1Row {
    pub group: String,
    pub lda: f64,
    pub uniform: f64,
    pub overall: f64,
}

/// Distance of each group's strategy estimate from its true distribution,
/// next to the uniform and overall-average baselines. The last row,
/// labelled `mean`, averages each column over groups.
pub fn strategy_distance_report<K: Ord + ToString>(
    estimates: &BTreeMap<K, Vec<f64>>,
    truth: &BTreeMap<K, Vec<f64>>,
) -> Result<Vec<W1Row>> {
    let groups: Vec<&K> = estimates.keys().filter(|k| truth.contains_key(k)).collect();
    if groups.is_empty() {
        return Err(Error::Data("no group has both an estimate and a true distribution".into()));
    }
    let width = truth[groups[0]].len();
    let mut overall = vec![0.0; width];
    for k in &groups {
        let t = &truth[*k];
        if t.len() != width {
            return Err(Error::SupportMismatch {
                left: width,
                right: t.len(),
            });
        }
        overall.iter_mut().zip(t).for_each(|(o, x)| *o += x / groups.len() as f64);
    }
    let uniform = vec![1.0 / width as f64; width];
    let mut rows = Vec::with_capacity(groups.len() + 1);
    for k in groups {
        let t = &truth[k];
        rows.push(W1Row {
            group: k.to_string(),
            lda: wasserstein1(&estimates[k], t, None)?,
            uniform: wasserstein1(&uniform, t, None)?,
            overall: wasserstein1(&overall, t, None)?,
        });
    }
    let n = rows.len() as f64;
    let mean = |f: fn(&W1Row) -> f64| rows.iter().map(f).sum::<f64>() / n;
    let summary = W1Row {
        group: "mean".into(),
        lda: mean(|r| r.lda),
        uniform: mean(|r| r.uniform),
        overall: mean(|r| r.overall),
    };
    rows.push(summary);
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NllRow {
    pub model: String,
    pub n: usize,
    pub nll: f64,
    pub floor_events: usize,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn nll_closed_forms() {
        assert_eq!(negative_log_likelihood([1.0, 1.0]).unwrap().nll, 0.0);
        let s = negative_log_likelihood(vec![0.5; 7]).unwrap();
        assert!((s.nll - 7.0 * std::f64::consts::LN_2).abs() < 1e-12);
        assert!(matches!(negative_log_likelihood(Vec::<f64>::new()), Err(Error::EmptyTestSet)));
        let s = negative_log_likelihood([0.0, 0.5]).unwrap();
        assert_eq!(s.floor_events, 1);
        assert!((s.nll - (-PROB_FLOOR.ln() + std::f64::consts::LN_2)).abs() < 1e-9);
    }

    #[test]
    fn w1_examples() {
        assert_eq!(wasserstein1(&[0.2, 0.3, 0.5], &[0.2, 0.3, 0.5], None).unwrap(), 0.0);
        assert_eq!(wasserstein1(&[1.0, 0.0, 0.0], &[0.0, 0.0, 1.0], None).unwrap(), 2.0);
        assert_eq!(wasserstein1(&[1.0, 0.0], &[0.0, 1.0], Some(&[0.0, 3.5])).unwrap(), 3.5);
        assert!(matches!(wasserstein1(&[1.0], &[0.5, 0.5], None), Err(Error::SupportMismatch { .. })));
    }

    #[test]
    fn report_columns() {
        let truth: BTreeMap<u32, Vec<f64>> = [(0, vec![0.6, 0.3, 0.1]), (1, vec![0.1, 0.2, 0.7])].into();
        let rows = strategy_distance_report(&truth, &truth).unwrap();
        assert_eq!(rows.len(), 3);
        assert!(rows.iter().all(|r| r.lda == 0.0));
        let u = wasserstein1(&[1.0 / 3.0; 3], &truth[&1], None).unwrap();
        assert_eq!(rows[1].uniform, u);
        assert_eq!(rows[2].group, "mean");
    }

    fn dist(n: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(0.0f64..1.0, n).prop_filter_map("zero mass", |v| {
            let s: f64 = v.iter().sum();
            (s > 1e-9).then(|| v.iter().map(|x| x / s).collect())
        })
    }

    proptest! {
        #[test]
        fn w1_is_a_metric(p in dist(4), q in dist(4), r in dist(4)) {
            let pq = wasserstein1(&p, &q, None).unwrap();
            prop_assert!((pq - wasserstein1(&q, &p, None).unwrap()).abs() < 1e-12);
            prop_assert!(wasserstein1(&p, &p, None).unwrap() < 1e-12);
            prop_assert!(pq >= 0.0);
            let pr = wasserstein1(&p, &r, None).unwrap();
            let rq = wasserstein1(&r, &q, None).unwrap();
            prop_assert!(pq <= pr + rq + 1e-12);
        }

        #[test]
        fn nll_is_additive(a in proptest::collection::vec(0.0f64..1.0, 1..20), b in proptest::collection::vec(0.0f64..1.0, 1..20)) {
            let whole = negative_log_likelihood(a.iter().chain(&b).copied()).unwrap();
            let left = negative_log_likelihood(a.iter().copied()).unwrap();
            let right = negative_log_likelihood(b.iter().copied()).unwrap();
            prop_assert!((whole.nll - left.nll - right.nll).abs() <= 1e-9 * whole.nll.max(1.0));
            prop_assert_eq!(whole.floor_events, left.floor_events + right.floor_events);
        }
    }
}
