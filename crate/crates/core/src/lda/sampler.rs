use rand::Rng;
use rayon::prelude::*;
use statrs::function::gamma::ln_gamma;

use crate::demand::DemandDist;
use crate::error::{Error, Result};
use crate::rng;

use super::align::align_labels;
use super::{normalize, Corpus, LdaConfig, PreferenceMatrix, StrategyDistribution};

/// Assignments of opponent labels plus the four count tables they induce.
///
/// * `table_hk[b1][k][h]`: records with own award `b1`, label `k`, bin `h`
/// * `table_k[b1][k]`: row sums of `table_hk`
/// * `table_jk[j][k]`: records of unit `j` with label `k`
/// * `table_j[j]`: records of unit `j`
///
/// An assignment of `None` means the record is currently held out of the
/// tables.
#[derive(Debug, Clone, PartialEq)]
pub struct GibbsState {
    pub own_arity: usize,
    pub opp_arity: usize,
    pub acc: usize,
    pub num_units: usize,
    pub alpha: f64,
    pub beta: f64,
    pub assignments: Vec<Option<usize>>,
    pub table_hk: Vec<i64>,
    pub table_k: Vec<i64>,
    pub table_jk: Vec<i64>,
    pub table_j: Vec<i64>,
}

impl GibbsState {
    /// All records held out, all tables zero.
    pub fn empty(corpus: &Corpus, opp_arity: usize, alpha: f64, beta: f64) -> Self {
        let (own, acc, units) = (corpus.own_arity(), corpus.acc(), corpus.num_units());
        GibbsState {
            own_arity: own,
            opp_arity,
            acc,
            num_units: units,
            alpha,
            beta,
            assignments: vec![None; corpus.len()],
            table_hk: vec![0; own * opp_arity * acc],
            table_k: vec![0; own * opp_arity],
            table_jk: vec![0; units * opp_arity],
            table_j: vec![0; units],
        }
    }

    /// Assigns every record a uniformly random label.
    pub fn initialize<R: Rng + ?Sized>(
        corpus: &Corpus,
        opp_arity: usize,
        alpha: f64,
        beta: f64,
        rng: &mut R,
    ) -> Self {
        let mut state = Self::empty(corpus, opp_arity, alpha, beta);
        for i in 0..corpus.len() {
            let k = rng.random_range(0..opp_arity);
            state.insert(corpus, i, k);
        }
        state
    }

    #[inline]
    fn hk_index(&self, b1: usize, k: usize, h: usize) -> usize {
        (b1 * self.opp_arity + k) * self.acc + h
    }

    /// Takes record `i` out of the tables.
    pub fn remove(&mut self, corpus: &Corpus, i: usize) -> Result<usize> {
        let k = self.assignments[i]
            .take()
            .ok_or_else(|| Error::CorruptedState(format!("record {i} is not assigned")))?;
        let r = corpus.records()[i];
        let hk = self.hk_index(r.own_award, k, r.bin);
        self.table_hk[hk] -= 1;
        self.table_k[r.own_award * self.opp_arity + k] -= 1;
        self.table_jk[r.unit * self.opp_arity + k] -= 1;
        self.table_j[r.unit] -= 1;
        if self.table_hk[hk] < 0 || self.table_jk[r.unit * self.opp_arity + k] < 0 {
            return Err(Error::CorruptedState(format!(
                "negative count after removing record {i}"
            )));
        }
        Ok(k)
    }

    /// Puts record `i` back with label `k`.
    pub fn insert(&mut self, corpus: &Corpus, i: usize, k: usize) {
        let r = corpus.records()[i];
        let hk = self.hk_index(r.own_award, k, r.bin);
        self.table_hk[hk] += 1;
        self.table_k[r.own_award * self.opp_arity + k] += 1;
        self.table_jk[r.unit * self.opp_arity + k] += 1;
        self.table_j[r.unit] += 1;
        self.assignments[i] = Some(k);
    }

    /// Moves an assigned record whose bin changed from `old_bin` to the bin
    /// it now has in `corpus`.
    pub(crate) fn rebin(&mut self, corpus: &Corpus, i: usize, old_bin: usize) -> Result<()> {
        let k = self.assignments[i]
            .ok_or_else(|| Error::CorruptedState(format!("record {i} is not assigned")))?;
        let r = corpus.records()[i];
        let old = self.hk_index(r.own_award, k, old_bin);
        self.table_hk[old] -= 1;
        if self.table_hk[old] < 0 {
            return Err(Error::CorruptedState(format!("negative count moving record {i}")));
        }
        let new = self.hk_index(r.own_award, k, r.bin);
        self.table_hk[new] += 1;
        Ok(())
    }

    /// Unnormalized conditional weights for a held-out record, written into
    /// `out`. Returns their sum.
    fn weights_into(&self, corpus: &Corpus, i: usize, out: &mut [f64]) -> Result<f64> {
        let r = corpus.records()[i];
        let acc_beta = self.acc as f64 * self.beta;
        let row = r.own_award * self.opp_arity;
        let unit = r.unit * self.opp_arity;
        let mut total = 0.0;
        for (k, w) in out.iter_mut().enumerate() {
            let n_hk = self.table_hk[(row + k) * self.acc + r.bin];
            let n_k = self.table_k[row + k];
            let n_jk = self.table_jk[unit + k];
            if n_hk < 0 || n_k < 0 || n_jk < 0 {
                return Err(Error::CorruptedState(format!(
                    "negative count while scoring record {i}, label {k}"
                )));
            }
            // the unit's total (N_j + |B2| alpha) is the same for every k and cancels
            *w = (n_hk as f64 + self.beta) / (n_k as f64 + acc_beta) * (n_jk as f64 + self.alpha);
            total += *w;
        }
        Ok(total)
    }

    /// Normalized distribution of record `i`'s label given every other
    /// assignment. The record must already be held out.
    pub fn conditional_posterior(&self, corpus: &Corpus, i: usize) -> Result<Vec<f64>> {
        if self.assignments[i].is_some() {
            return Err(Error::CorruptedState(format!(
                "record {i} must be removed before scoring"
            )));
        }
        if self.table_j.iter().any(|&n| n < 0) {
            return Err(Error::CorruptedState("negative unit total".into()));
        }
        let mut w = vec![0.0; self.opp_arity];
        self.weights_into(corpus, i, &mut w)?;
        normalize(&mut w);
        Ok(w)
    }

    /// Visits every record once in corpus order, resampling its label.
    pub fn sweep<R: Rng + ?Sized>(&mut self, corpus: &Corpus, rng: &mut R) -> Result<()> {
        let mut w = vec![0.0; self.opp_arity];
        for i in 0..corpus.len() {
            self.remove(corpus, i)?;
            let total = self.weights_into(corpus, i, &mut w)?;
            let mut u = rng.random::<f64>() * total;
            let mut k = self.opp_arity - 1;
            for (idx, wk) in w.iter().enumerate() {
                if u < *wk {
                    k = idx;
                    break;
                }
                u -= wk;
            }
            self.insert(corpus, i, k);
        }
        Ok(())
    }

    /// Recomputes every table from the assignments and compares.
    pub fn check_consistency(&self, corpus: &Corpus) -> Result<()> {
        let mut fresh = Self::empty(corpus, self.opp_arity, self.alpha, self.beta);
        for (i, a) in self.assignments.iter().enumerate() {
            if let Some(k) = a {
                fresh.insert(corpus, i, *k);
            }
        }
        if fresh.table_hk != self.table_hk
            || fresh.table_k != self.table_k
            || fresh.table_jk != self.table_jk
            || fresh.table_j != self.table_j
        {
            return Err(Error::CorruptedState("count tables disagree with assignments".into()));
        }
        for row in 0..self.own_arity * self.opp_arity {
            let s: i64 = self.table_hk[row * self.acc..(row + 1) * self.acc].iter().sum();
            if s != self.table_k[row] {
                return Err(Error::CorruptedState(format!("bin counts of row {row} do not sum")));
            }
        }
        for j in 0..self.num_units {
            let s: i64 = self.table_jk[j * self.opp_arity..(j + 1) * self.opp_arity].iter().sum();
            if s != self.table_j[j] {
                return Err(Error::CorruptedState(format!("label counts of unit {j} do not sum")));
            }
        }
        Ok(())
    }

    /// Log of the collapsed joint probability of the bins and assignments.
    pub fn log_joint(&self) -> f64 {
        let (a, b) = (self.alpha, self.beta);
        let acc_beta = self.acc as f64 * b;
        let k_alpha = self.opp_arity as f64 * a;
        let (lg_b, lg_accb, lg_a, lg_ka) = (ln_gamma(b), ln_gamma(acc_beta), ln_gamma(a), ln_gamma(k_alpha));
        let mut lp = 0.0;
        for row in 0..self.own_arity * self.opp_arity {
            lp += lg_accb - ln_gamma(self.table_k[row] as f64 + acc_beta);
            for h in 0..self.acc {
                let n = self.table_hk[row * self.acc + h];
                if n > 0 {
                    lp += ln_gamma(n as f64 + b) - lg_b;
                }
            }
        }
        for j in 0..self.num_units {
            lp += lg_ka - ln_gamma(self.table_j[j] as f64 + k_alpha);
            for k in 0..self.opp_arity {
                let n = self.table_jk[j * self.opp_arity + k];
                if n > 0 {
                    lp += ln_gamma(n as f64 + a) - lg_a;
                }
            }
        }
        lp
    }
}

/// Running average of the smoothed ratios over retained samples.
#[derive(Debug, Clone)]
pub struct Estimator {
    own_arity: usize,
    opp_arity: usize,
    acc: usize,
    pref: Vec<f64>,
    theta: Vec<f64>,
    samples: usize,
}

impl Estimator {
    pub fn new(own_arity: usize, opp_arity: usize, acc: usize, num_units: usize) -> Self {
        Estimator {
            own_arity,
            opp_arity,
            acc,
            pref: vec![0.0; own_arity * opp_arity * acc],
            theta: vec![0.0; num_units * opp_arity],
            samples: 0,
        }
    }

    pub fn push(&mut self, s: &GibbsState) -> Result<()> {
        if s.own_arity != self.own_arity
            || s.opp_arity != self.opp_arity
            || s.acc != self.acc
            || s.num_units * s.opp_arity != self.theta.len()
        {
            return Err(Error::Estimation("sample dimensions differ".into()));
        }
        let acc_beta = s.acc as f64 * s.beta;
        for row in 0..s.own_arity * s.opp_arity {
            let denom = s.table_k[row] as f64 + acc_beta;
            for h in 0..s.acc {
                self.pref[row * s.acc + h] += (s.table_hk[row * s.acc + h] as f64 + s.beta) / denom;
            }
        }
        let k_alpha = s.opp_arity as f64 * s.alpha;
        for j in 0..s.num_units {
            let denom = s.table_j[j] as f64 + k_alpha;
            for k in 0..s.opp_arity {
                self.theta[j * s.opp_arity + k] += (s.table_jk[j * s.opp_arity + k] as f64 + s.alpha) / denom;
            }
        }
        self.samples += 1;
        Ok(())
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn finish(&self) -> Result<(PreferenceMatrix, Vec<StrategyDistribution>)> {
        if self.samples == 0 {
            return Err(Error::Estimation("no retained samples".into()));
        }
        let mut pref = self.pref.clone();
        for row in pref.chunks_mut(self.acc) {
            normalize(row);
        }
        let theta = self
            .theta
            .chunks(self.opp_arity)
            .map(|c| {
                let mut c = c.to_vec();
                normalize(&mut c);
                StrategyDistribution::from_unchecked(c)
            })
            .collect();
        Ok((
            PreferenceMatrix::from_unchecked(self.own_arity, self.opp_arity, self.acc, pref),
            theta,
        ))
    }
}

/// Posterior-mean estimates from a list of retained states.
pub fn estimate(samples: &[GibbsState]) -> Result<(PreferenceMatrix, Vec<StrategyDistribution>)> {
    let first = samples
        .first()
        .ok_or_else(|| Error::Estimation("no retained samples".into()))?;
    let mut est = Estimator::new(first.own_arity, first.opp_arity, first.acc, first.num_units);
    for s in samples {
        est.push(s)?;
    }
    est.finish()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainTrace {
    pub chain: usize,
    /// `(sweep, log joint)` pairs.
    pub log_joint: Vec<(usize, f64)>,
}

#[derive(Debug, Clone)]
pub struct Inference {
    /// Label-aligned, chain-averaged preference estimate.
    pub pref: PreferenceMatrix,
    /// Label-aligned strategy estimate per unit.
    pub theta: Vec<StrategyDistribution>,
    pub traces: Vec<ChainTrace>,
    /// Per chain, `permutation[new] = old` label mapping used for alignment.
    pub permutations: Vec<Vec<usize>>,
}

struct ChainResult {
    pref: PreferenceMatrix,
    theta: Vec<StrategyDistribution>,
    trace: ChainTrace,
    permutation: Vec<usize>,
}

fn run_chain(corpus: &Corpus, cfg: &LdaConfig, chain: usize, demand: Option<&DemandDist>) -> Result<ChainResult> {
    let mut r = rng::stream(cfg.seed, &[0x1da, chain as u64]);
    let mut state = GibbsState::initialize(corpus, cfg.opp_arity, cfg.alpha, cfg.beta, &mut r);
    let mut est = Estimator::new(corpus.own_arity(), cfg.opp_arity, corpus.acc(), corpus.num_units());
    let mut trace = ChainTrace {
        chain,
        log_joint: vec![(0, state.log_joint())],
    };
    let reimpute = demand.filter(|_| cfg.reimpute_each_sweep && corpus.records().iter().any(|r| r.imputed));
    let mut owned = reimpute.map(|_| corpus.clone());
    for sweep in 1..=cfg.sweeps {
        if let (Some(dist), Some(c)) = (reimpute, owned.as_mut()) {
            for (i, old_bin) in c.reimpute(dist, &mut r)? {
                state.rebin(c, i, old_bin)?;
            }
        }
        let corpus = owned.as_ref().unwrap_or(corpus);
        state.sweep(corpus, &mut r)?;
        if sweep % cfg.thin == 0 || sweep == cfg.sweeps {
            trace.log_joint.push((sweep, state.log_joint()));
        }
        if sweep > cfg.burn_in && (sweep - cfg.burn_in).is_multiple_of(cfg.thin) {
            est.push(&state)?;
        }
    }
    if est.samples() == 0 {
        est.push(&state)?;
    }
    let (pref, theta) = est.finish()?;
    let aligned = align_labels(&pref, &theta);
    Ok(ChainResult {
        pref: aligned.pref,
        theta: aligned.theta,
        trace,
        permutation: aligned.permutation,
    })
}

/// Runs `cfg.chains` independent chains (in parallel), aligns each chain's
/// labels, and averages the aligned estimates.
pub fn infer(corpus: &Corpus, cfg: &LdaConfig, demand: Option<&DemandDist>) -> Result<Inference> {
    cfg.validate()?;
    if corpus.acc() != cfg.acc {
        return Err(Error::Config(format!(
            "corpus uses {} bins but config has acc = {}",
            corpus.acc(),
            cfg.acc
        )));
    }
    let results: Vec<ChainResult> = (0..cfg.chains)
        .into_par_iter()
        .map(|c| run_chain(corpus, cfg, c, demand))
        .collect::<Result<_>>()?;

    let n = results.len() as f64;
    let mut pref = vec![0.0; results[0].pref.as_slice().len()];
    let mut theta = vec![vec![0.0; cfg.opp_arity]; corpus.num_units()];
    for res in &results {
        pref.iter_mut().zip(res.pref.as_slice()).for_each(|(a, b)| *a += b / n);
        for (acc_t, t) in theta.iter_mut().zip(&res.theta) {
            acc_t.iter_mut().zip(t.probs()).for_each(|(a, b)| *a += b / n);
        }
    }
    for row in pref.chunks_mut(cfg.acc) {
        normalize(row);
    }
    let theta = theta
        .into_iter()
        .map(|mut t| {
            normalize(&mut t);
            StrategyDistribution::from_unchecked(t)
        })
        .collect();
    let (traces, permutations) = results.into_iter().map(|r| (r.trace, r.permutation)).unzip();
    Ok(Inference {
        pref: PreferenceMatrix::from_unchecked(corpus.own_arity(), cfg.opp_arity, cfg.acc, pref),
        theta,
        traces,
        permutations,
    })
}
