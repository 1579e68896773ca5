//! Ground-truth market: customers with an evolving baseline preference,
//! two award-giving companies, and the round loop that produces each
//! company's private transaction log.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::demand::DemandDist;
use crate::error::Result;
use crate::game::{market_share, Award, AwardSet, BudgetMode, ConsumptionRecord, DemandMode, MarketConfig};
use crate::rng;

/// Usage rates are clamped to `[USAGE_EPS, 1 - USAGE_EPS]` before the
/// preference update so sigma stays strictly inside (0, 1).
pub const USAGE_EPS: f64 = 1e-3;

fn logistic(d: f64) -> f64 {
    1.0 / (1.0 + (-d).exp())
}

/// Probability of choosing company 1 given value difference `d` and
/// baseline preference `sigma`: a logistic curve rescaled on each side of
/// zero so that it passes through `sigma` at `d = 0`.
pub fn sigmoid_preference(d: f64, sigma: f64) -> f64 {
    let centered = logistic(d) - 0.5;
    if d < 0.0 {
        sigma / 0.5 * centered + sigma
    } else {
        (1.0 - sigma) / 0.5 * centered + sigma
    }
}

/// Moves sigma toward the observed usage rate by `gamma`.
pub fn update_sigma(sigma: f64, usage_rate: f64, gamma: f64) -> f64 {
    (usage_rate - sigma) * gamma + sigma
}

#[derive(Debug, Clone, PartialEq)]
pub struct CustomerState {
    pub sigma: f64,
    pub group: usize,
    pub fixed_demand: Option<u32>,
}

/// Everything a company may look at when deciding this round's awards.
#[derive(Debug, Clone, Copy)]
pub struct DecisionContext<'a> {
    /// 1-based round index.
    pub round: u32,
    pub rounds: u32,
    /// 0 for company 1, 1 for company 2.
    pub company: usize,
    /// Group label of every customer, in customer order.
    pub groups: &'a [usize],
    pub num_groups: usize,
    pub awards: &'a AwardSet,
    /// Budget available for this round's decisions.
    pub budget: f64,
    pub demand_max: u32,
}

impl DecisionContext<'_> {
    pub fn num_customers(&self) -> usize {
        self.groups.len()
    }
}

/// An award-decision engine for one company.
pub trait AwardPolicy: Send {
    fn name(&self) -> String;

    /// One award per customer, in customer order. Awards that cannot be paid
    /// for when their turn comes are replaced by award 0.
    fn choose(&mut self, ctx: &DecisionContext<'_>) -> Vec<Award>;

    /// This company's own records for the round that just finished.
    fn observe(&mut self, _ctx: &DecisionContext<'_>, _records: &[ConsumptionRecord]) {}
}

#[derive(Debug, Clone)]
pub struct MarketState {
    pub config: MarketConfig,
    pub customers: Vec<CustomerState>,
    pub groups: Vec<usize>,
    /// Remaining budget per company.
    pub remaining: [f64; 2],
    /// Rounds completed so far.
    pub round: u32,
    demand: DemandDist,
}

impl MarketState {
    pub fn new(config: MarketConfig) -> Result<Self> {
        config.validate()?;
        let demand = DemandDist::uniform(config.demand_min, config.demand_max)?;
        let groups: Vec<usize> = (0..config.num_customers()).map(|j| config.group_of(j)).collect();
        let customers = groups
            .iter()
            .enumerate()
            .map(|(j, &group)| {
                let fixed_demand = match config.demand_mode {
                    DemandMode::Fixed => {
                        Some(demand.sample(&mut rng::stream(config.seed, &[1, j as u64, 0])))
                    }
                    DemandMode::Redraw => None,
                };
                CustomerState {
                    sigma: config.initial_sigma,
                    group,
                    fixed_demand,
                }
            })
            .collect();
        Ok(MarketState {
            remaining: config.budgets,
            customers,
            groups,
            round: 0,
            demand,
            config,
        })
    }

    fn context(&self, company: usize, round: u32) -> DecisionContext<'_> {
        DecisionContext {
            round,
            rounds: self.config.rounds,
            company,
            groups: &self.groups,
            num_groups: self.config.num_customer_groups,
            awards: &self.config.award_sets[company],
            budget: self.remaining[company],
            demand_max: self.config.demand_max,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundOutcome {
    pub round: u32,
    pub awards: [Vec<Award>; 2],
    pub demand: Vec<u32>,
    /// Consumptions captured by company 1; company 2 gets the rest.
    pub captured1: Vec<u32>,
    pub remaining: [f64; 2],
    /// Number of unaffordable awards replaced by 0, per company.
    pub coerced: [usize; 2],
}

impl RoundOutcome {
    pub fn captured2(&self) -> impl Iterator<Item = u32> + '_ {
        self.demand.iter().zip(&self.captured1).map(|(n, c)| n - c)
    }

    pub fn records(&self, company: usize) -> Vec<ConsumptionRecord> {
        (0..self.demand.len())
            .map(|j| {
                let n = self.demand[j];
                let c1 = self.captured1[j];
                ConsumptionRecord {
                    period: self.round,
                    customer: j as u32,
                    own_award: self.awards[company][j],
                    count: if company == 0 { c1 } else { n - c1 },
                    demand: Some(n),
                }
            })
            .collect()
    }

    pub fn share(&self) -> Result<[f64; 2]> {
        market_share(&self.captured1, &self.demand)
    }
}

/// Applies `wanted` in customer order against `budget`, replacing awards
/// that no longer fit with 0. Returns the charged awards and coercion count.
fn charge(wanted: &[Award], awards: &AwardSet, budget: &mut f64, n: usize) -> (Vec<Award>, usize) {
    let mut coerced = 0;
    let mut out = Vec::with_capacity(n);
    for j in 0..n {
        let mut a = wanted.get(j).copied().unwrap_or(0);
        if a >= awards.len() || awards.cost_of(a) > *budget + 1e-9 {
            coerced += 1;
            a = 0;
        }
        *budget = (*budget - awards.cost_of(a)).max(0.0);
        out.push(a);
    }
    (out, coerced)
}

/// Plays one round: both companies choose awards, every customer splits
/// their consumptions, and each sigma drifts toward its usage rate.
pub fn run_round(
    state: &mut MarketState,
    policy1: &mut dyn AwardPolicy,
    policy2: &mut dyn AwardPolicy,
) -> Result<RoundOutcome> {
    let round = state.round + 1;
    if state.config.budget_mode == BudgetMode::PerRound {
        state.remaining = state.config.budgets;
    }
    let m = state.customers.len();
    let wanted1 = policy1.choose(&state.context(0, round));
    let wanted2 = policy2.choose(&state.context(1, round));

    let [mut b1, mut b2] = state.remaining;
    let (awards1, coerced1) = charge(&wanted1, &state.config.award_sets[0], &mut b1, m);
    let (awards2, coerced2) = charge(&wanted2, &state.config.award_sets[1], &mut b2, m);
    state.remaining = [b1, b2];
    if coerced1 + coerced2 > 0 {
        log::debug!(
            "round {round}: coerced {coerced1} unaffordable awards of {} and {coerced2} of {} to 0",
            policy1.name(),
            policy2.name()
        );
    }

    let seed = state.config.seed;
    let gamma = state.config.updating_rate;
    let values = [&state.config.award_sets[0], &state.config.award_sets[1]];
    let demand_dist = &state.demand;
    let draws: Vec<(u32, u32)> = state
        .customers
        .par_iter_mut()
        .enumerate()
        .map(|(j, cust)| {
            let mut r = rng::stream(seed, &[2, j as u64, round as u64]);
            let n = cust.fixed_demand.unwrap_or_else(|| demand_dist.sample(&mut r));
            let d = values[0].value_of(awards1[j]) - values[1].value_of(awards2[j]);
            let p = sigmoid_preference(d, cust.sigma);
            let c: u32 = (0..n).map(|_| r.random_bool(p) as u32).sum();
            let u = (c as f64 / n as f64).clamp(USAGE_EPS, 1.0 - USAGE_EPS);
            cust.sigma = update_sigma(cust.sigma, u, gamma);
            (n, c)
        })
        .collect();
    state.round = round;

    let (demand, captured1) = draws.into_iter().unzip();
    Ok(RoundOutcome {
        round,
        awards: [awards1, awards2],
        demand,
        captured1,
        remaining: state.remaining,
        coerced: [coerced1, coerced2],
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoundShare {
    pub round: u32,
    pub share1: f64,
    pub share2: f64,
}

#[derive(Debug, Clone)]
pub struct GameResult {
    /// Per-round shares of that round's consumptions.
    pub trajectory: Vec<RoundShare>,
    /// Company-visible logs, index 0 for company 1.
    pub records: [Vec<ConsumptionRecord>; 2],
    /// Shares pooled over every consumption of the game; `None` when no
    /// round was played.
    pub final_share: Option<[f64; 2]>,
    pub coerced: [usize; 2],
}

/// Plays a full game and collects both companies' logs.
pub fn run_game(
    config: &MarketConfig,
    policy1: &mut dyn AwardPolicy,
    policy2: &mut dyn AwardPolicy,
) -> Result<GameResult> {
    run_game_with(config, policy1, policy2, true)
}

/// As [`run_game`]; `keep_records = false` skips retaining the logs, which
/// matters for long tournaments.
pub fn run_game_with(
    config: &MarketConfig,
    policy1: &mut dyn AwardPolicy,
    policy2: &mut dyn AwardPolicy,
    keep_records: bool,
) -> Result<GameResult> {
    let mut state = MarketState::new(config.clone())?;
    let mut trajectory = Vec::with_capacity(config.rounds as usize);
    let mut records: [Vec<ConsumptionRecord>; 2] = [Vec::new(), Vec::new()];
    let mut captured_total = 0u64;
    let mut demand_total = 0u64;
    let mut coerced = [0usize; 2];

    for _ in 0..config.rounds {
        let outcome = run_round(&mut state, policy1, policy2)?;
        let share = outcome.share()?;
        trajectory.push(RoundShare {
            round: outcome.round,
            share1: share[0],
            share2: share[1],
        });
        captured_total += outcome.captured1.iter().map(|&c| c as u64).sum::<u64>();
        demand_total += outcome.demand.iter().map(|&n| n as u64).sum::<u64>();
        coerced[0] += outcome.coerced[0];
        coerced[1] += outcome.coerced[1];

        let policies: [&mut dyn AwardPolicy; 2] = [&mut *policy1, &mut *policy2];
        for (company, policy) in policies.into_iter().enumerate() {
            let recs = outcome.records(company);
            policy.observe(&state.context(company, outcome.round), &recs);
            if keep_records {
                records[company].extend(recs);
            }
        }
    }
    if coerced[0] + coerced[1] > 0 {
        log::warn!(
            "{} vs {}: {} and {} awards coerced to 0 for lack of budget",
            policy1.name(),
            policy2.name(),
            coerced[0],
            coerced[1]
        );
    }
    let final_share = (demand_total > 0).then(|| {
        let s = captured_total as f64 / demand_total as f64;
        [s, (demand_total - captured_total) as f64 / demand_total as f64]
    });
    Ok(GameResult {
        trajectory,
        records,
        final_share,
        coerced,
    })
}

/// A policy that always plays the same award.
#[derive(Debug, Clone)]
pub struct ConstantPolicy(pub Award);

impl AwardPolicy for ConstantPolicy {
    fn name(&self) -> String {
        format!("Constant({})", self.0)
    }

    fn choose(&mut self, ctx: &DecisionContext<'_>) -> Vec<Award> {
        vec![self.0; ctx.num_customers()]
    }
}
