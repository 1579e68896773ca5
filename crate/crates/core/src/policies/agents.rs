//! Tournament players built from the pieces in this module: an inference
//! tracker over the company's own log, the DP allocator and the online
//! Q-learner.

use std::collections::VecDeque;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{discretize, Award, ConsumptionRecord};
use crate::lda::{infer, AlignedEstimates, Corpus, LdaConfig, PreferenceMatrix, StrategyDistribution};
use crate::rng;
use crate::simulator::{AwardPolicy, DecisionContext};

use super::dp::{benefit_row, dp_allocate, DpDecision};
use super::qlearn::{build_state, reward, History, QLearner, QLearnerConfig, StateVariant, Transition};
use super::random::RandomPolicy;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerConfig {
    /// Number of most recent rounds fed to inference.
    pub window: u32,
    /// Re-run inference after every this many rounds.
    pub refresh_interval: u32,
    pub lda: LdaConfig,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig {
            window: 10,
            refresh_interval: 1,
            lda: LdaConfig {
                sweeps: 300,
                burn_in: 200,
                thin: 10,
                chains: 2,
                ..LdaConfig::default()
            },
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 || self.refresh_interval == 0 {
            return Err(Error::Config("tracker window and refresh interval must be >= 1".into()));
        }
        self.lda.validate()
    }
}

/// Keeps a sliding window of one company's records and periodically fits
/// preference and strategy estimates per customer group, with one strategy
/// distribution per customer.
#[derive(Debug, Clone)]
pub struct LdaTracker {
    config: TrackerConfig,
    seed: u64,
    rounds: VecDeque<Vec<ConsumptionRecord>>,
    /// `(group, index within group)` per customer.
    units: Vec<(usize, usize)>,
    group_sizes: Vec<usize>,
    estimates: Option<Vec<AlignedEstimates>>,
    fallback_pref: Option<PreferenceMatrix>,
    fallback_theta: StrategyDistribution,
    refreshes: u64,
}

impl LdaTracker {
    pub fn new(config: TrackerConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let opp = config.lda.opp_arity;
        Ok(LdaTracker {
            config,
            seed,
            rounds: VecDeque::new(),
            units: Vec::new(),
            group_sizes: Vec::new(),
            estimates: None,
            fallback_pref: None,
            fallback_theta: StrategyDistribution::uniform(opp),
            refreshes: 0,
        })
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.config
    }

    /// Whether at least one inference has completed.
    pub fn is_fitted(&self) -> bool {
        self.estimates.is_some()
    }

    pub fn refreshes(&self) -> u64 {
        self.refreshes
    }

    pub fn estimates(&self) -> Option<&[AlignedEstimates]> {
        self.estimates.as_deref()
    }

    fn learn_layout(&mut self, ctx: &DecisionContext<'_>) {
        if self.units.len() == ctx.num_customers() {
            return;
        }
        self.group_sizes = vec![0; ctx.num_groups];
        self.units = ctx
            .groups
            .iter()
            .map(|&g| {
                let idx = self.group_sizes[g];
                self.group_sizes[g] += 1;
                (g, idx)
            })
            .collect();
        self.fallback_pref = Some(PreferenceMatrix::uniform(
            ctx.awards.len(),
            self.config.lda.opp_arity,
            self.config.lda.acc,
        ));
    }

    /// Preference estimate for `customer`'s group and that customer's
    /// strategy estimate. Uniform until the first fit.
    pub fn features(&self, customer: usize) -> (&PreferenceMatrix, &StrategyDistribution) {
        let (g, u) = self.units[customer];
        match &self.estimates {
            Some(est) => (&est[g].pref, &est[g].theta[u]),
            None => (
                self.fallback_pref.as_ref().expect("layout is learned before features are read"),
                &self.fallback_theta,
            ),
        }
    }

    /// Benefit of every own award for `customer`.
    pub fn benefits(&self, customer: usize) -> Result<Vec<f64>> {
        let (g, u) = self.units[customer];
        match &self.estimates {
            Some(est) => benefit_row(&est[g], u),
            None => Err(Error::Estimation("no inference has run yet".into())),
        }
    }

    pub fn prepare(&mut self, ctx: &DecisionContext<'_>) {
        self.learn_layout(ctx);
    }

    /// Adds a round of records; refits when the refresh interval elapses.
    pub fn observe(&mut self, ctx: &DecisionContext<'_>, records: &[ConsumptionRecord]) -> Result<()> {
        self.learn_layout(ctx);
        self.rounds.push_back(records.to_vec());
        while self.rounds.len() > self.config.window as usize {
            self.rounds.pop_front();
        }
        if ctx.round.is_multiple_of(self.config.refresh_interval) {
            self.refit(ctx.awards.len())?;
        }
        Ok(())
    }

    fn refit(&mut self, own_arity: usize) -> Result<()> {
        let groups = self.group_sizes.len();
        let mut by_group: Vec<Vec<ConsumptionRecord>> = vec![Vec::new(); groups];
        for rec in self.rounds.iter().flatten() {
            let (g, _) = self.units[rec.customer as usize];
            by_group[g].push(*rec);
        }
        let refresh = self.refreshes;
        let seed = self.seed;
        let units = &self.units;
        let sizes = &self.group_sizes;
        let cfg = &self.config.lda;
        let fitted: Vec<AlignedEstimates> = by_group
            .par_iter()
            .enumerate()
            .map(|(g, recs)| {
                if recs.is_empty() {
                    return Ok(AlignedEstimates {
                        pref: PreferenceMatrix::uniform(own_arity, cfg.opp_arity, cfg.acc),
                        theta: vec![StrategyDistribution::uniform(cfg.opp_arity); sizes[g]],
                        permutation: (0..cfg.opp_arity).collect(),
                    });
                }
                let mut r = rng::stream(seed, &[0x7ac, refresh, g as u64]);
                let corpus = Corpus::from_consumption(
                    recs,
                    |rec| Some(units[rec.customer as usize].1),
                    sizes[g],
                    own_arity,
                    cfg.acc,
                    None,
                    &mut r,
                )?;
                let lda = LdaConfig {
                    seed: rng::derive_seed(seed, &[0x7ad, refresh, g as u64]),
                    ..cfg.clone()
                };
                let fit = infer(&corpus, &lda, None)?;
                Ok(AlignedEstimates {
                    pref: fit.pref,
                    theta: fit.theta,
                    permutation: (0..cfg.opp_arity).collect(),
                })
            })
            .collect::<Result<_>>()?;
        self.estimates = Some(fitted);
        self.refreshes += 1;
        Ok(())
    }
}

/// Plays random awards until the tracker has a fit, then solves the
/// budgeted allocation over the inferred benefits every round.
#[derive(Debug, Clone)]
pub struct DpPolicy {
    tracker: LdaTracker,
    warmup: RandomPolicy,
    /// Multiplier turning award costs and the budget into integers.
    cost_scale: f64,
    last: Vec<DpDecision>,
}

impl DpPolicy {
    pub fn new(tracker: TrackerConfig, seed: u64) -> Result<Self> {
        Ok(DpPolicy {
            tracker: LdaTracker::new(tracker, rng::derive_seed(seed, &[0xd9, 0]))?,
            warmup: RandomPolicy::new(rng::derive_seed(seed, &[0xd9, 1])),
            cost_scale: 1.0,
            last: Vec::new(),
        })
    }

    pub fn with_cost_scale(mut self, scale: f64) -> Self {
        self.cost_scale = scale;
        self
    }

    pub fn tracker(&self) -> &LdaTracker {
        &self.tracker
    }

    /// Decisions of the most recent DP round (empty during warm-up).
    pub fn last_decisions(&self) -> &[DpDecision] {
        &self.last
    }
}

impl AwardPolicy for DpPolicy {
    fn name(&self) -> String {
        "DP".into()
    }

    fn choose(&mut self, ctx: &DecisionContext<'_>) -> Vec<Award> {
        self.tracker.prepare(ctx);
        if !self.tracker.is_fitted() {
            self.last.clear();
            return self.warmup.choose(ctx);
        }
        let psi: Vec<Vec<f64>> = (0..ctx.num_customers())
            .map(|j| self.tracker.benefits(j).expect("tracker is fitted"))
            .collect();
        let costs = ctx.awards.integer_costs(self.cost_scale);
        let budget = (ctx.budget * self.cost_scale + 1e-9).floor().max(0.0) as u64;
        match dp_allocate(&psi, &costs, budget) {
            Ok(alloc) => {
                self.last = alloc
                    .awards
                    .iter()
                    .enumerate()
                    .map(|(j, &a)| DpDecision {
                        customer_id: j as u64,
                        award: a,
                        psi: psi[j][a],
                    })
                    .collect();
                alloc.awards
            }
            Err(e) => {
                log::warn!("DP allocation failed ({e}); awarding nothing this round");
                vec![0; ctx.num_customers()]
            }
        }
    }

    fn observe(&mut self, ctx: &DecisionContext<'_>, records: &[ConsumptionRecord]) {
        if let Err(e) = self.tracker.observe(ctx, records) {
            log::warn!("DP inference failed: {e}");
        }
    }
}

/// Online Q-learning player. Each customer-round is one transition; the
/// state is the customer's recent (award, bin) history plus whichever
/// inferred features the variant asks for.
#[derive(Debug, Clone)]
pub struct DqnPolicy {
    variant: StateVariant,
    learner: Option<QLearner>,
    config: QLearnerConfig,
    tracker: Option<LdaTracker>,
    acc: usize,
    opp_arity: usize,
    seed: u64,
    histories: Vec<History>,
    pending: Vec<Vec<f64>>,
    losses: Vec<f64>,
}

impl DqnPolicy {
    /// `tracker` is required for variants that use inferred features and
    /// ignored otherwise. Without a tracker, `acc` comes from `bins`.
    pub fn new(
        variant: StateVariant,
        config: QLearnerConfig,
        tracker: Option<TrackerConfig>,
        bins: usize,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        let needs = variant.uses_pref() || variant.uses_strategy();
        let tracker = match (needs, tracker) {
            (true, Some(t)) => Some(LdaTracker::new(t, rng::derive_seed(seed, &[0xd4, 0]))?),
            (true, None) => {
                return Err(Error::MissingFeature {
                    variant: variant.name(),
                    missing: "inference tracker",
                })
            }
            (false, _) => None,
        };
        let (acc, opp_arity) = match &tracker {
            Some(t) => (t.config().lda.acc, t.config().lda.opp_arity),
            None => (bins, 0),
        };
        if acc < 2 {
            return Err(Error::Config(format!("acc must be >= 2, got {acc}")));
        }
        Ok(DqnPolicy {
            variant,
            learner: None,
            config,
            tracker,
            acc,
            opp_arity,
            seed,
            histories: Vec::new(),
            pending: Vec::new(),
            losses: Vec::new(),
        })
    }

    pub fn variant(&self) -> StateVariant {
        self.variant
    }

    pub fn learner(&self) -> Option<&QLearner> {
        self.learner.as_ref()
    }

    /// Mean training loss of every round so far.
    pub fn losses(&self) -> &[f64] {
        &self.losses
    }

    fn ensure_learner(&mut self, ctx: &DecisionContext<'_>) -> Result<()> {
        if self.learner.is_some() {
            return Ok(());
        }
        let own = ctx.awards.len();
        let dim = self
            .variant
            .state_len(self.config.history_window, own, self.opp_arity, self.acc);
        self.learner = Some(QLearner::new(self.config.clone(), dim, own, rng::derive_seed(self.seed, &[0xd4, 1]))?);
        self.histories = vec![History::new(self.config.history_window); ctx.num_customers()];
        Ok(())
    }

    fn state(&self, customer: usize, own_arity: usize) -> Result<Vec<f64>> {
        let (pref, theta) = match &self.tracker {
            Some(t) => {
                let (p, s) = t.features(customer);
                (Some(p), Some(s))
            }
            None => (None, None),
        };
        build_state(self.variant, &self.histories[customer], own_arity, self.acc, pref, theta)
    }

    fn states(&self, own_arity: usize, m: usize) -> Result<Vec<Vec<f64>>> {
        (0..m).map(|j| self.state(j, own_arity)).collect()
    }

    fn try_choose(&mut self, ctx: &DecisionContext<'_>) -> Result<Vec<Award>> {
        self.ensure_learner(ctx)?;
        if let Some(t) = self.tracker.as_mut() {
            t.prepare(ctx);
        }
        let m = ctx.num_customers();
        let states = self.states(ctx.awards.len(), m)?;
        let dim = states.first().map_or(0, Vec::len);
        let flat: Vec<f64> = states.iter().flatten().copied().collect();
        let x = Array2::from_shape_vec((m, dim), flat).map_err(|e| Error::Config(e.to_string()))?;
        let eps = self.config.epsilon(u64::from(ctx.round.saturating_sub(1)), u64::from(ctx.rounds));
        let learner = self.learner.as_mut().expect("learner initialized");
        let actions = learner.act(x.view(), eps)?;
        self.pending = states;
        Ok(actions)
    }

    fn try_observe(&mut self, ctx: &DecisionContext<'_>, records: &[ConsumptionRecord]) -> Result<()> {
        if self.pending.len() != records.len() {
            return Err(Error::Dimension {
                expected: self.pending.len(),
                got: records.len(),
            });
        }
        let own = ctx.awards.len();
        for rec in records {
            let j = rec.customer as usize;
            let n = rec.demand.unwrap_or(ctx.demand_max).max(rec.count).max(1);
            self.histories[j].push(rec.own_award, discretize(rec.count, n, self.acc)?);
        }
        let scale = self.config.reward_scale;
        let xi = self.config.reward_weight;
        let mut transitions = Vec::with_capacity(records.len());
        for rec in records {
            let j = rec.customer as usize;
            transitions.push(Transition {
                state: std::mem::take(&mut self.pending[j]),
                action: rec.own_award,
                reward: scale * reward(rec.count, rec.own_award, ctx.awards, xi),
                next_state: self.state(j, own)?,
            });
        }
        let learner = self.learner.as_mut().expect("learner initialized");
        for t in &transitions {
            learner.remember(t)?;
        }
        let mut total = 0.0;
        let mut steps = 0;
        for _ in 0..self.config.updates_per_round {
            if let Some(l) = learner.train_step() {
                total += l;
                steps += 1;
            }
        }
        if steps > 0 {
            self.losses.push(total / steps as f64);
        }
        if let Some(t) = self.tracker.as_mut() {
            t.observe(ctx, records)?;
        }
        Ok(())
    }
}

impl AwardPolicy for DqnPolicy {
    fn name(&self) -> String {
        self.variant.name().into()
    }

    fn choose(&mut self, ctx: &DecisionContext<'_>) -> Vec<Award> {
        match self.try_choose(ctx) {
            Ok(a) => a,
            Err(e) => {
                log::warn!("{} could not act ({e}); awarding nothing", self.name());
                self.pending.clear();
                vec![0; ctx.num_customers()]
            }
        }
    }

    fn observe(&mut self, ctx: &DecisionContext<'_>, records: &[ConsumptionRecord]) {
        if self.pending.is_empty() {
            return;
        }
        if let Err(e) = self.try_observe(ctx, records) {
            log::warn!("{} skipped a training round: {e}", self.name());
        }
    }
}
