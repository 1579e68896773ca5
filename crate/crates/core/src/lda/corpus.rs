use rand::Rng;

use crate::demand::DemandDist;
use crate::error::{Error, Result};
use crate::game::{discretize, Award, ConsumptionRecord};

use super::synthetic::impute_demand;

/// One observation as the sampler sees it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct LdaRecord {
    /// Customer or strategy group owning the strategy distribution.
    pub unit: usize,
    pub own_award: Award,
    pub bin: usize,
    pub count: u32,
    pub demand: u32,
    /// Whether `demand` was imputed rather than observed.
    pub imputed: bool,
}

/// Records of one preference group, in canonical order.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    records: Vec<LdaRecord>,
    num_units: usize,
    own_arity: usize,
    acc: usize,
}

impl Corpus {
    /// Validates ranges and sorts records so that input order never matters.
    pub fn new(mut records: Vec<LdaRecord>, num_units: usize, own_arity: usize, acc: usize) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::Data("no records to infer from".into()));
        }
        if acc < 2 {
            return Err(Error::Config(format!("acc must be >= 2, got {acc}")));
        }
        for r in &records {
            if r.unit >= num_units || r.own_award >= own_arity || r.bin >= acc {
                return Err(Error::InvalidRecord(format!(
                    "record {r:?} outside units 0..{num_units}, awards 0..{own_arity}, bins 0..{acc}"
                )));
            }
        }
        records.sort_unstable();
        Ok(Corpus {
            records,
            num_units,
            own_arity,
            acc,
        })
    }

    /// Discretizes consumption records. Records whose `unit_of` is `None` are
    /// skipped; missing demands are imputed from `demand` once.
    pub fn from_consumption<R: Rng + ?Sized>(
        records: &[ConsumptionRecord],
        mut unit_of: impl FnMut(&ConsumptionRecord) -> Option<usize>,
        num_units: usize,
        own_arity: usize,
        acc: usize,
        demand: Option<&DemandDist>,
        rng: &mut R,
    ) -> Result<Self> {
        let mut out = Vec::with_capacity(records.len());
        for rec in records {
            let Some(unit) = unit_of(rec) else { continue };
            rec.validate(own_arity)?;
            let (n, imputed) = match rec.demand {
                Some(n) => (n, false),
                None => {
                    let dist = demand.ok_or_else(|| {
                        Error::Data(format!(
                            "record for customer {} has no demand and no demand distribution was given",
                            rec.customer
                        ))
                    })?;
                    (impute_demand(rec.count, dist, rng)?, true)
                }
            };
            out.push(LdaRecord {
                unit,
                own_award: rec.own_award,
                bin: discretize(rec.count, n, acc)?,
                count: rec.count,
                demand: n,
                imputed,
            });
        }
        Corpus::new(out, num_units, own_arity, acc)
    }

    pub fn records(&self) -> &[LdaRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn num_units(&self) -> usize {
        self.num_units
    }

    pub fn own_arity(&self) -> usize {
        self.own_arity
    }

    pub fn acc(&self) -> usize {
        self.acc
    }

    /// Redraws every imputed demand; returns `(index, old_bin)` for each
    /// record whose bin changed. Record order is left untouched.
    pub(crate) fn reimpute<R: Rng + ?Sized>(
        &mut self,
        dist: &DemandDist,
        rng: &mut R,
    ) -> Result<Vec<(usize, usize)>> {
        let mut changed = Vec::new();
        for (i, r) in self.records.iter_mut().enumerate() {
            if !r.imputed {
                continue;
            }
            r.demand = impute_demand(r.count, dist, rng)?;
            let bin = discretize(r.count, r.demand, self.acc)?;
            if bin != r.bin {
                changed.push((i, r.bin));
                r.bin = bin;
            }
        }
        Ok(changed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rec(customer: u32, award: usize, count: u32, demand: Option<u32>) -> ConsumptionRecord {
        ConsumptionRecord { period: 1, customer, own_award: award, count, demand }
    }

    #[test]
    fn discretizes_and_canonicalizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let recs = vec![rec(1, 2, 5, Some(10)), rec(0, 1, 10, Some(10))];
        let c = Corpus::from_consumption(&recs, |r| Some(r.customer as usize), 2, 3, 10, None, &mut rng).unwrap();
        assert_eq!(c.records()[0].unit, 0);
        assert_eq!(c.records()[0].bin, 9);
        assert_eq!(c.records()[1].bin, 5);
        let mut rev = recs.clone();
        rev.reverse();
        let c2 = Corpus::from_consumption(&rev, |r| Some(r.customer as usize), 2, 3, 10, None, &mut rng).unwrap();
        assert_eq!(c, c2);
    }

    #[test]
    fn missing_demand_needs_distribution() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let recs = vec![rec(0, 0, 3, None)];
        assert!(Corpus::from_consumption(&recs, |_| Some(0), 1, 2, 10, None, &mut rng).is_err());
        let dist = DemandDist::uniform(1, 10).unwrap();
        let c = Corpus::from_consumption(&recs, |_| Some(0), 1, 2, 10, Some(&dist), &mut rng).unwrap();
        assert!(c.records()[0].imputed && c.records()[0].demand >= 3);
    }

    #[test]
    fn empty_corpus_rejected() {
        assert!(matches!(Corpus::new(vec![], 1, 1, 2), Err(Error::Data(_))));
    }
}
