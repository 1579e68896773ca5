//! Domain types shared by every part of the price-war game: award sets,
//! the observable consumption record, market configuration and the
//! usage discretization.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Index into an [`AwardSet`]. Index 0 is always "no award".
pub type Award = usize;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct AwardSetSpec {
    costs: Vec<f64>,
    values: Vec<f64>,
}

/// Ordered awards `0..len` with their money cost and customer value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "AwardSetSpec", into = "AwardSetSpec")]
pub struct AwardSet {
    costs: Vec<f64>,
    values: Vec<f64>,
}

impl TryFrom<AwardSetSpec> for AwardSet {
    type Error = Error;

    fn try_from(spec: AwardSetSpec) -> Result<Self> {
        AwardSet::new(spec.costs, spec.values)
    }
}

impl From<AwardSet> for AwardSetSpec {
    fn from(set: AwardSet) -> Self {
        AwardSetSpec {
            costs: set.costs,
            values: set.values,
        }
    }
}

impl AwardSet {
    pub fn new(costs: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if costs.is_empty() || costs.len() != values.len() {
            return Err(Error::Config(format!(
                "award set needs matching non-empty cost and value lists (got {} and {})",
                costs.len(),
                values.len()
            )));
        }
        if costs[0] != 0.0 || values[0] != 0.0 {
            return Err(Error::Config(
                "award 0 must have zero cost and zero value".into(),
            ));
        }
        for w in 1..costs.len() {
            if !costs[w].is_finite() || !values[w].is_finite() {
                return Err(Error::Config(format!("award {w} has a non-finite cost or value")));
            }
            if w >= 2 && (costs[w] <= costs[w - 1] || values[w] <= values[w - 1]) {
                return Err(Error::Config(format!(
                    "costs and values must be strictly increasing (award {w})"
                )));
            }
            if costs[w] < 0.0 {
                return Err(Error::Config(format!("award {w} has negative cost")));
            }
        }
        Ok(AwardSet { costs, values })
    }

    /// Awards `0..n` with `cost(x) = value(x) = x`.
    pub fn identity(n: usize) -> Self {
        let v: Vec<f64> = (0..n.max(1)).map(|x| x as f64).collect();
        AwardSet {
            costs: v.clone(),
            values: v,
        }
    }

    pub fn len(&self) -> usize {
        self.costs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.costs.is_empty()
    }

    pub fn cost_of(&self, award: Award) -> f64 {
        self.costs[award]
    }

    pub fn value_of(&self, award: Award) -> f64 {
        self.values[award]
    }

    pub fn costs(&self) -> &[f64] {
        &self.costs
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Awards whose cost fits in `budget`, in index order. Never empty.
    pub fn affordable(&self, budget: f64) -> impl Iterator<Item = Award> + '_ {
        self.costs
            .iter()
            .enumerate()
            .filter(move |(i, c)| *i == 0 || **c <= budget + 1e-9)
            .map(|(i, _)| i)
    }

    /// Costs multiplied by `scale` and rounded, for integer budget DP.
    pub fn integer_costs(&self, scale: f64) -> Vec<u64> {
        self.costs
            .iter()
            .map(|c| (c * scale).round().max(0.0) as u64)
            .collect()
    }
}

impl Default for AwardSet {
    fn default() -> Self {
        AwardSet::identity(5)
    }
}

/// One customer-period observation as seen by a single company.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsumptionRecord {
    pub period: u32,
    #[serde(rename = "customer_id")]
    pub customer: u32,
    pub own_award: Award,
    pub count: u32,
    pub demand: Option<u32>,
}

impl ConsumptionRecord {
    pub fn validate(&self, num_awards: usize) -> Result<()> {
        if self.period < 1 {
            return Err(Error::InvalidRecord(format!(
                "period must be >= 1 (customer {})",
                self.customer
            )));
        }
        if self.own_award >= num_awards {
            return Err(Error::InvalidRecord(format!(
                "award {} out of range 0..{} (customer {}, period {})",
                self.own_award, num_awards, self.customer, self.period
            )));
        }
        if let Some(n) = self.demand {
            if self.count > n {
                return Err(Error::InvalidRecord(format!(
                    "count {} exceeds demand {} (customer {}, period {})",
                    self.count, n, self.customer, self.period
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BudgetMode {
    /// One budget for the whole game, decremented across rounds.
    #[default]
    Horizon,
    /// The budget is restored at the start of every round.
    PerRound,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DemandMode {
    /// Each customer draws a fresh demand every round.
    #[default]
    Redraw,
    /// Each customer draws a demand once and keeps it.
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MarketConfig {
    pub num_customer_groups: usize,
    pub customers_per_group: usize,
    pub rounds: u32,
    pub budgets: [f64; 2],
    pub budget_mode: BudgetMode,
    pub award_sets: [AwardSet; 2],
    pub demand_min: u32,
    pub demand_max: u32,
    pub demand_mode: DemandMode,
    pub updating_rate: f64,
    pub initial_sigma: f64,
    pub seed: u64,
}

impl Default for MarketConfig {
    fn default() -> Self {
        MarketConfig {
            num_customer_groups: 10,
            customers_per_group: 1000,
            rounds: 1000,
            budgets: [20000.0, 20000.0],
            budget_mode: BudgetMode::Horizon,
            award_sets: [AwardSet::identity(5), AwardSet::identity(5)],
            demand_min: 1,
            demand_max: 100,
            demand_mode: DemandMode::Redraw,
            updating_rate: 0.5,
            initial_sigma: 0.5,
            seed: 0,
        }
    }
}

impl MarketConfig {
    pub fn num_customers(&self) -> usize {
        self.num_customer_groups * self.customers_per_group
    }

    pub fn group_of(&self, customer: usize) -> usize {
        customer / self.customers_per_group.max(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_customer_groups == 0 || self.customers_per_group == 0 {
            return Err(Error::Config("market needs at least one customer".into()));
        }
        if self.budgets.iter().any(|b| !(b.is_finite() && *b >= 0.0)) {
            return Err(Error::Config("budgets must be finite and >= 0".into()));
        }
        if !(self.updating_rate > 0.0 && self.updating_rate <= 1.0) {
            return Err(Error::Config(format!(
                "updating_rate must be in (0, 1], got {}",
                self.updating_rate
            )));
        }
        if !(self.initial_sigma > 0.0 && self.initial_sigma < 1.0) {
            return Err(Error::Config(format!(
                "initial_sigma must be in (0, 1), got {}",
                self.initial_sigma
            )));
        }
        if self.demand_min < 1 || self.demand_min > self.demand_max {
            return Err(Error::Config(format!(
                "demand range [{}, {}] is invalid",
                self.demand_min, self.demand_max
            )));
        }
        for set in &self.award_sets {
            AwardSet::new(set.costs.clone(), set.values.clone())?;
        }
        Ok(())
    }
}

/// Maps the usage fraction `count / demand` to one of `acc` bins.
///
/// `count == demand` lands in the top bin `acc - 1`.
pub fn discretize(count: u32, demand: u32, acc: usize) -> Result<usize> {
    if acc < 2 {
        return Err(Error::Config(format!("acc must be >= 2, got {acc}")));
    }
    if demand == 0 {
        return Err(Error::InvalidRecord("demand must be >= 1".into()));
    }
    if count > demand {
        return Err(Error::InvalidRecord(format!(
            "count {count} exceeds demand {demand}"
        )));
    }
    // integer floor avoids float rounding at exact bin edges
    let bin = (count as u64 * acc as u64) / demand as u64;
    Ok((bin as usize).min(acc - 1))
}

/// Pooled market shares `[company1, company2]` from company 1's captured
/// counts and the matching total demands.
pub fn market_share(captured: &[u32], demand: &[u32]) -> Result<[f64; 2]> {
    if captured.len() != demand.len() {
        return Err(Error::Dimension {
            expected: demand.len(),
            got: captured.len(),
        });
    }
    let mut own = 0u64;
    let mut total = 0u64;
    for (&c, &n) in captured.iter().zip(demand) {
        if c > n {
            return Err(Error::InvalidRecord(format!(
                "captured {c} exceeds demand {n}"
            )));
        }
        own += c as u64;
        total += n as u64;
    }
    if total == 0 {
        return Err(Error::EmptyPool);
    }
    let share = own as f64 / total as f64;
    Ok([share, (total - own) as f64 / total as f64])
}
