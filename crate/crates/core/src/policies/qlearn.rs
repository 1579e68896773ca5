//! Value-based learner: replay buffer, epsilon-greedy action selection and
//! the one-step Q target `reward + discount * max_a' Q(s', a')`.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{Award, AwardSet};
use crate::lda::{PreferenceMatrix, StrategyDistribution};
use crate::rng;

use super::mlp::{Mlp, Optimizer, OptimizerKind};

/// `count - xi * cost(award)`.
pub fn reward(count: u32, award: Award, awards: &AwardSet, xi: f64) -> f64 {
    count as f64 - xi * awards.cost_of(award)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QLearnerConfig {
    pub learning_rate: f64,
    /// Discount applied to the next state's best value.
    pub discount: f64,
    pub replay_capacity: usize,
    pub batch_size: usize,
    pub hidden_width: usize,
    /// Weight of the award cost in the reward.
    pub reward_weight: f64,
    /// Multiplier applied to rewards before they are stored.
    pub reward_scale: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Fraction of the training horizon over which epsilon decays linearly.
    pub epsilon_decay_fraction: f64,
    /// Gradient steps taken after each observed round.
    pub updates_per_round: usize,
    /// Number of past (award, bin) tuples in the state.
    pub history_window: usize,
    pub optimizer: OptimizerKind,
    pub max_grad_norm: Option<f64>,
    /// Copy the online network into a frozen target every this many
    /// updates. `None` bootstraps from the online network itself.
    pub target_sync: Option<u64>,
}

impl Default for QLearnerConfig {
    fn default() -> Self {
        QLearnerConfig {
            learning_rate: 0.01,
            discount: 0.9,
            replay_capacity: 200_000,
            batch_size: 64,
            hidden_width: 512,
            reward_weight: 0.5,
            reward_scale: 1.0,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_decay_fraction: 0.2,
            updates_per_round: 8,
            history_window: 10,
            optimizer: OptimizerKind::Adam,
            max_grad_norm: Some(10.0),
            target_sync: None,
        }
    }
}

impl QLearnerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.discount) {
            return Err(Error::Config(format!("discount must be in [0, 1), got {}", self.discount)));
        }
        if self.batch_size == 0 || self.replay_capacity <= self.batch_size {
            return Err(Error::Config(format!(
                "replay capacity ({}) must exceed batch size ({})",
                self.replay_capacity, self.batch_size
            )));
        }
        if !(self.learning_rate > 0.0) || self.hidden_width == 0 {
            return Err(Error::Config("learning rate and hidden width must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.epsilon_start) || !(0.0..=1.0).contains(&self.epsilon_end) {
            return Err(Error::Config("epsilon bounds must lie in [0, 1]".into()));
        }
        if self.target_sync == Some(0) {
            return Err(Error::Config("target_sync must be >= 1".into()));
        }
        Ok(())
    }

    /// Linear decay from `epsilon_start` to `epsilon_end` over the first
    /// `epsilon_decay_fraction` of `total_steps`.
    pub fn epsilon(&self, step: u64, total_steps: u64) -> f64 {
        let decay = (self.epsilon_decay_fraction * total_steps as f64).max(1.0);
        let t = (step as f64 / decay).min(1.0);
        self.epsilon_start + (self.epsilon_end - self.epsilon_start) * t
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub next_state: Vec<f64>,
}

/// Fixed-capacity ring of transitions, states kept in single precision.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    dim: usize,
    capacity: usize,
    states: Vec<f32>,
    next_states: Vec<f32>,
    actions: Vec<usize>,
    rewards: Vec<f64>,
    head: usize,
    len: usize,
}

impl ReplayBuffer {
    pub fn new(dim: usize, capacity: usize) -> Self {
        ReplayBuffer {
            dim,
            capacity,
            states: Vec::new(),
            next_states: Vec::new(),
            actions: Vec::new(),
            rewards: Vec::new(),
            head: 0,
            len: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn push(&mut self, t: &Transition) {
        let to_f32 = |v: &[f64]| v.iter().map(|&x| x as f32).collect::<Vec<_>>();
        if self.len < self.capacity {
            self.states.extend(to_f32(&t.state));
            self.next_states.extend(to_f32(&t.next_state));
            self.actions.push(t.action);
            self.rewards.push(t.reward);
            self.len += 1;
        } else {
            let at = self.head;
            let range = at * self.dim..(at + 1) * self.dim;
            self.states[range.clone()].copy_from_slice(&to_f32(&t.state));
            self.next_states[range].copy_from_slice(&to_f32(&t.next_state));
            self.actions[at] = t.action;
            self.rewards[at] = t.reward;
        }
        self.head = (self.head + 1) % self.capacity;
    }

    fn gather(&self, idx: &[usize]) -> (Array2<f64>, Vec<usize>, Vec<f64>, Array2<f64>) {
        let d = self.dim;
        let s = Array2::from_shape_fn((idx.len(), d), |(b, c)| self.states[idx[b] * d + c] as f64);
        let ns = Array2::from_shape_fn((idx.len(), d), |(b, c)| self.next_states[idx[b] * d + c] as f64);
        let a = idx.iter().map(|&i| self.actions[i]).collect();
        let r = idx.iter().map(|&i| self.rewards[i]).collect();
        (s, a, r, ns)
    }
}

fn argmax(row: impl Iterator<Item = f64>) -> usize {
    let mut best = f64::NEG_INFINITY;
    let mut arg = 0;
    for (i, v) in row.enumerate() {
        if v > best {
            best = v;
            arg = i;
        }
    }
    arg
}

#[derive(Debug, Clone)]
pub struct QLearner {
    config: QLearnerConfig,
    net: Mlp,
    target: Option<Mlp>,
    optimizer: Optimizer,
    buffer: ReplayBuffer,
    updates: u64,
    rng: ChaCha8Rng,
}

impl QLearner {
    pub fn new(config: QLearnerConfig, input_dim: usize, num_actions: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut init = rng::stream(seed, &[0x9e7, 0]);
        let net = Mlp::new(input_dim, config.hidden_width, num_actions, &mut init);
        let target = config.target_sync.map(|_| net.clone());
        Ok(QLearner {
            optimizer: Optimizer::new(config.optimizer, config.learning_rate, config.max_grad_norm),
            buffer: ReplayBuffer::new(input_dim, config.replay_capacity),
            rng: rng::stream(seed, &[0x9e7, 1]),
            updates: 0,
            target,
            net,
            config,
        })
    }

    pub fn config(&self) -> &QLearnerConfig {
        &self.config
    }

    pub fn input_dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn num_actions(&self) -> usize {
        self.net.output_dim()
    }

    pub fn network(&self) -> &Mlp {
        &self.net
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    fn check_dim(&self, got: usize) -> Result<()> {
        if got != self.input_dim() {
            return Err(Error::Dimension {
                expected: self.input_dim(),
                got,
            });
        }
        Ok(())
    }

    pub fn q_values(&self, states: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_dim(states.ncols())?;
        Ok(self.net.forward(states))
    }

    pub fn greedy(&self, state: &[f64]) -> Result<usize> {
        let x = ArrayView2::from_shape((1, state.len()), state).map_err(|e| Error::Config(e.to_string()))?;
        let q = self.q_values(x)?;
        Ok(argmax(q.row(0).iter().copied()))
    }

    /// Epsilon-greedy action per row: uniform over all actions with
    /// probability `epsilon`, otherwise the greedy one (lowest index on ties).
    pub fn act(&mut self, states: ArrayView2<'_, f64>, epsilon: f64) -> Result<Vec<usize>> {
        let q = self.q_values(states)?;
        let n = self.num_actions();
        Ok(q.rows()
            .into_iter()
            .map(|row| {
                if self.rng.random::<f64>() < epsilon {
                    self.rng.random_range(0..n)
                } else {
                    argmax(row.iter().copied())
                }
            })
            .collect())
    }

    pub fn remember(&mut self, t: &Transition) -> Result<()> {
        self.check_dim(t.state.len())?;
        self.check_dim(t.next_state.len())?;
        if t.action >= self.num_actions() {
            return Err(Error::Config(format!("action {} out of range", t.action)));
        }
        self.buffer.push(t);
        Ok(())
    }

    /// One gradient step on a batch drawn with replacement from the buffer.
    /// Returns the batch loss, or `None` when the buffer is empty.
    pub fn train_step(&mut self) -> Option<f64> {
        if self.buffer.is_empty() {
            return None;
        }
        let idx: Vec<usize> = (0..self.config.batch_size)
            .map(|_| self.rng.random_range(0..self.buffer.len()))
            .collect();
        let (s, a, r, ns) = self.buffer.gather(&idx);
        let bootstrap = self.target.as_ref().unwrap_or(&self.net).forward(ns.view());
        let targets: Vec<f64> = r
            .iter()
            .zip(bootstrap.rows())
            .map(|(r, q)| r + self.config.discount * q.iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .collect();
        let (loss, grads) = self.net.loss_and_grad(s.view(), &a, &targets);
        self.optimizer.step(&mut self.net, grads);
        self.updates += 1;
        if let (Some(every), Some(target)) = (self.config.target_sync, self.target.as_mut()) {
            if self.updates.is_multiple_of(every) {
                *target = self.net.clone();
            }
        }
        Some(loss)
    }

    /// Stores `t` and takes one training step.
    pub fn q_update(&mut self, t: &Transition) -> Result<Option<f64>> {
        self.remember(t)?;
        Ok(self.train_step())
    }

    /// Text checkpoint: a `key = value` header followed by one parameter per
    /// line in `w1, b1, w2, b2` row-major order.
    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let c = &self.config;
        let mut out = String::new();
        let _ = writeln!(out, "# pricewar q-network checkpoint v1");
        let _ = writeln!(out, "input = {}", self.input_dim());
        let _ = writeln!(out, "hidden = {}", self.net.hidden_dim());
        let _ = writeln!(out, "output = {}", self.num_actions());
        let _ = writeln!(out, "learning_rate = {}", c.learning_rate);
        let _ = writeln!(out, "discount = {}", c.discount);
        let _ = writeln!(out, "reward_weight = {}", c.reward_weight);
        let _ = writeln!(out, "reward_scale = {}", c.reward_scale);
        let _ = writeln!(out, "history_window = {}", c.history_window);
        let _ = writeln!(out, "updates = {}", self.updates);
        let params = self.net.parameters();
        let _ = writeln!(out, "params = {}", params.len());
        for p in params {
            let _ = writeln!(out, "{p:e}");
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    /// Restores network weights saved by [`save_checkpoint`](Self::save_checkpoint)
    /// into a learner built from `config` with the header's dimensions.
    pub fn load_checkpoint(path: &Path, config: QLearnerConfig, seed: u64) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut lines = text.lines().filter(|l| !l.starts_with('#'));
        let mut header = std::collections::HashMap::new();
        for line in lines.by_ref() {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Checkpoint(format!("malformed header line {line:?}")))?;
            let (k, v) = (k.trim().to_string(), v.trim().to_string());
            let done = k == "params";
            header.insert(k, v);
            if done {
                break;
            }
        }
        let get = |k: &str| -> Result<usize> {
            header
                .get(k)
                .and_then(|v| usize::from_str(v).ok())
                .ok_or_else(|| Error::Checkpoint(format!("missing or invalid {k}")))
        };
        let (input, hidden, output, count) = (get("input")?, get("hidden")?, get("output")?, get("params")?);
        let params: Vec<f64> = lines
            .map(|l| l.trim().parse::<f64>().map_err(|e| Error::Checkpoint(format!("{l:?}: {e}"))))
            .collect::<Result<_>>()?;
        if params.len() != count {
            return Err(Error::Checkpoint(format!("expected {count} parameters, found {}", params.len())));
        }
        let config = QLearnerConfig {
            hidden_width: hidden,
            ..config
        };
        let mut learner = QLearner::new(config, input, output, seed)?;
        learner.net.set_parameters(&params)?;
        if let Some(t) = learner.target.as_mut() {
            *t = learner.net.clone();
        }
        learner.updates = header.get("updates").and_then(|v| v.parse().ok()).unwrap_or(0);
        Ok(learner)
    }
}

/// Which inferred features a learner's state carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StateVariant {
    #[serde(rename = "DQN")]
    Dqn,
    #[serde(rename = "DQN+P")]
    DqnP,
    #[serde(rename = "DQN+S")]
    DqnS,
    #[serde(rename = "DQN+LDA")]
    DqnLda,
}

impl StateVariant {
    pub fn name(self) -> &'static str {
        match self {
            StateVariant::Dqn => "DQN",
            StateVariant::DqnP => "DQN+P",
            StateVariant::DqnS => "DQN+S",
            StateVariant::DqnLda => "DQN+LDA",
        }
    }

    pub fn uses_pref(self) -> bool {
        matches!(self, StateVariant::DqnP | StateVariant::DqnLda)
    }

    pub fn uses_strategy(self) -> bool {
        matches!(self, StateVariant::DqnS | StateVariant::DqnLda)
    }

    /// State length for the given dimensions.
    pub fn state_len(self, window: usize, own_arity: usize, opp_arity: usize, acc: usize) -> usize {
        let mut n = 2 * window;
        if self.uses_pref() {
            n += own_arity * opp_arity * acc;
        }
        if self.uses_strategy() {
            n += opp_arity;
        }
        n
    }
}

/// Last `window` (own award, usage bin) observations of one customer.
#[derive(Debug, Clone, PartialEq)]
pub struct History {
    window: usize,
    entries: VecDeque<(Award, usize)>,
}

impl History {
    pub fn new(window: usize) -> Self {
        History {
            window,
            entries: VecDeque::with_capacity(window),
        }
    }

    pub fn push(&mut self, award: Award, bin: usize) {
        if self.window == 0 {
            return;
        }
        if self.entries.len() == self.window {
            self.entries.pop_front();
        }
        self.entries.push_back((award, bin));
    }

    pub fn window(&self) -> usize {
        self.window
    }

    /// Oldest first.
    pub fn entries(&self) -> impl Iterator<Item = &(Award, usize)> {
        self.entries.iter()
    }
}

/// Builds a learner state: the history block (most recent tuple first,
/// award scaled by the largest award index and bin by `acc - 1`, missing
/// tuples zero), then the flattened preference matrix if the variant uses
/// it, then the strategy distribution if the variant uses it.
pub fn build_state(
    variant: StateVariant,
    history: &History,
    own_arity: usize,
    acc: usize,
    pref: Option<&PreferenceMatrix>,
    theta: Option<&StrategyDistribution>,
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(2 * history.window());
    let award_scale = (own_arity.max(2) - 1) as f64;
    let bin_scale = (acc.max(2) - 1) as f64;
    for &(a, h) in history.entries.iter().rev() {
        out.push(a as f64 / award_scale);
        out.push(h as f64 / bin_scale);
    }
    out.resize(2 * history.window(), 0.0);
    if variant.uses_pref() {
        let p = pref.ok_or(Error::MissingFeature {
            variant: variant.name(),
            missing: "preference estimates",
        })?;
        out.extend_from_slice(p.as_slice());
    }
    if variant.uses_strategy() {
        let t = theta.ok_or(Error::MissingFeature {
            variant: variant.name(),
            missing: "strategy estimates",
        })?;
        out.extend_from_slice(t.probs());
    }
    Ok(out)
}
