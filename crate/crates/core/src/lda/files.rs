use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{read_csv, write_csv};

use super::{ChainTrace, PreferenceMatrix, StrategyDistribution};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreferenceRow {
    pub b1: usize,
    pub b2: usize,
    pub bin: usize,
    pub prob: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThetaRow {
    pub customer_or_group: u64,
    pub b2: usize,
    pub prob: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticRow {
    pub chain: usize,
    pub sweep: usize,
    pub log_joint: f64,
}

pub fn write_preference(path: &Path, pref: &PreferenceMatrix) -> Result<()> {
    let mut rows = Vec::with_capacity(pref.as_slice().len());
    for b1 in 0..pref.own_arity() {
        for b2 in 0..pref.opp_arity() {
            for (bin, &prob) in pref.row(b1, b2).iter().enumerate() {
                rows.push(PreferenceRow { b1, b2, bin, prob });
            }
        }
    }
    write_csv(path, &rows)
}

pub fn read_preference(path: &Path) -> Result<PreferenceMatrix> {
    let rows: Vec<PreferenceRow> = read_csv(path)?;
    if rows.is_empty() {
        return Err(Error::Data(format!("{}: no preference rows", path.display())));
    }
    let own = rows.iter().map(|r| r.b1).max().unwrap_or(0) + 1;
    let opp = rows.iter().map(|r| r.b2).max().unwrap_or(0) + 1;
    let acc = rows.iter().map(|r| r.bin).max().unwrap_or(0) + 1;
    let mut probs = vec![f64::NAN; own * opp * acc];
    for r in &rows {
        let idx = (r.b1 * opp + r.b2) * acc + r.bin;
        if !probs[idx].is_nan() {
            return Err(Error::Data(format!("duplicate preference row {r:?}")));
        }
        probs[idx] = r.prob;
    }
    if probs.iter().any(|p| p.is_nan()) {
        return Err(Error::Data(format!("{}: preference grid is incomplete", path.display())));
    }
    PreferenceMatrix::new(own, opp, acc, probs)
}

/// Writes one strategy distribution per label.
pub fn write_theta(path: &Path, labels: &[u64], theta: &[StrategyDistribution]) -> Result<()> {
    if labels.len() != theta.len() {
        return Err(Error::Dimension {
            expected: theta.len(),
            got: labels.len(),
        });
    }
    let rows: Vec<ThetaRow> = labels
        .iter()
        .zip(theta)
        .flat_map(|(&label, t)| {
            t.probs().iter().enumerate().map(move |(b2, &prob)| ThetaRow {
                customer_or_group: label,
                b2,
                prob,
            })
        })
        .collect();
    write_csv(path, &rows)
}

/// Reads strategy distributions keyed by label, in label order.
pub fn read_theta(path: &Path) -> Result<Vec<(u64, StrategyDistribution)>> {
    let rows: Vec<ThetaRow> = read_csv(path)?;
    let mut by_label: BTreeMap<u64, BTreeMap<usize, f64>> = BTreeMap::new();
    for r in rows {
        if by_label.entry(r.customer_or_group).or_default().insert(r.b2, r.prob).is_some() {
            return Err(Error::Data(format!("duplicate strategy row {r:?}")));
        }
    }
    by_label
        .into_iter()
        .map(|(label, probs)| {
            let k = probs.len();
            if probs.keys().copied().ne(0..k) {
                return Err(Error::Data(format!("strategy of {label} has gaps")));
            }
            Ok((label, StrategyDistribution::new(probs.into_values().collect())?))
        })
        .collect()
}

pub fn write_diagnostics(path: &Path, traces: &[ChainTrace]) -> Result<()> {
    let rows: Vec<DiagnosticRow> = traces
        .iter()
        .flat_map(|t| {
            t.log_joint.iter().map(move |&(sweep, log_joint)| DiagnosticRow {
                chain: t.chain,
                sweep,
                log_joint,
            })
        })
        .collect();
    write_csv(path, &rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn estimates_survive_disk() {
        let dir = tempfile::tempdir().unwrap();
        let pref = PreferenceMatrix::new(2, 2, 2, vec![0.1, 0.9, 0.3, 0.7, 1.0 / 3.0, 2.0 / 3.0, 0.5, 0.5]).unwrap();
        write_preference(&dir.path().join("p.csv"), &pref).unwrap();
        assert_eq!(read_preference(&dir.path().join("p.csv")).unwrap(), pref);

        let theta = vec![StrategyDistribution::new(vec![0.2, 0.8]).unwrap(), StrategyDistribution::uniform(2)];
        write_theta(&dir.path().join("t.csv"), &[7, 3], &theta).unwrap();
        let back = read_theta(&dir.path().join("t.csv")).unwrap();
        assert_eq!(back, vec![(3, theta[1].clone()), (7, theta[0].clone())]);
    }

    #[test]
    fn incomplete_grid_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        std::fs::write(&path, "b1,b2,bin,prob\n0,0,0,0.5\n0,0,1,0.5\n0,1,0,1.0\n").unwrap();
        assert!(read_preference(&path).is_err());
    }
}
