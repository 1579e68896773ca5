use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{BudgetMode, MarketConfig};
use crate::io::write_csv;
use crate::policies::{DpPolicy, DqnPolicy, QLearnerConfig, RandomPolicy, StateVariant, TrackerConfig};
use crate::rng;
use crate::simulator::{run_game_with, AwardPolicy, RoundShare};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum PolicyKind {
    Random,
    Dp,
    Dqn(StateVariant),
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PolicyKind::Random => f.write_str("Random"),
            PolicyKind::Dp => f.write_str("DP"),
            PolicyKind::Dqn(v) => f.write_str(v.name()),
        }
    }
}

impl FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim() {
            "Random" => PolicyKind::Random,
            "DP" => PolicyKind::Dp,
            "DQN" => PolicyKind::Dqn(StateVariant::Dqn),
            "DQN+P" => PolicyKind::Dqn(StateVariant::DqnP),
            "DQN+S" => PolicyKind::Dqn(StateVariant::DqnS),
            "DQN+LDA" => PolicyKind::Dqn(StateVariant::DqnLda),
            other => {
                return Err(Error::Config(format!(
                    "unknown policy {other:?}; expected Random, DP, DQN, DQN+P, DQN+S or DQN+LDA"
                )))
            }
        })
    }
}

impl TryFrom<String> for PolicyKind {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<PolicyKind> for String {
    fn from(p: PolicyKind) -> String {
        p.to_string()
    }
}

/// Company 1's policy against company 2's.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cell(pub PolicyKind, pub PolicyKind);

impl Cell {
    pub fn file_stem(&self) -> String {
        format!("{}-vs-{}", self.0, self.1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TournamentConfig {
    pub market: MarketConfig,
    pub cells: Vec<Cell>,
    pub seeds: Vec<u64>,
    pub tracker: TrackerConfig,
    pub qlearn: QLearnerConfig,
    /// Multiplier turning award costs into integers for the DP.
    pub dp_cost_scale: f64,
}

impl Default for TournamentConfig {
    /// Ten groups of 100 customers, 200 rounds, each company spending up to
    /// 2000 per round.
    fn default() -> Self {
        TournamentConfig {
            market: MarketConfig {
                num_customer_groups: 10,
                customers_per_group: 100,
                rounds: 200,
                budgets: [2000.0, 2000.0],
                budget_mode: BudgetMode::PerRound,
                ..MarketConfig::default()
            },
            cells: vec![
                Cell(PolicyKind::Dp, PolicyKind::Random),
                Cell(PolicyKind::Dqn(StateVariant::DqnLda), PolicyKind::Dqn(StateVariant::Dqn)),
                Cell(PolicyKind::Random, PolicyKind::Random),
            ],
            seeds: (0..10).collect(),
            tracker: TrackerConfig {
                refresh_interval: 10,
                ..TrackerConfig::default()
            },
            qlearn: QLearnerConfig {
                replay_capacity: 20_000,
                reward_scale: 0.01,
                ..QLearnerConfig::default()
            },
            dp_cost_scale: 1.0,
        }
    }
}

impl TournamentConfig {
    pub fn validate(&self) -> Result<()> {
        self.market.validate()?;
        if self.cells.is_empty() {
            return Err(Error::Config("the tournament needs at least one cell".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("the tournament needs at least one seed".into()));
        }
        for (i, c) in self.cells.iter().enumerate() {
            if self.cells[..i].contains(c) {
                return Err(Error::Config(format!("cell {} listed twice", c.file_stem())));
            }
        }
        if !(self.dp_cost_scale > 0.0 && self.dp_cost_scale.is_finite()) {
            return Err(Error::Config("dp_cost_scale must be positive".into()));
        }
        self.tracker.validate()?;
        self.qlearn.validate()
    }

    fn build(&self, kind: PolicyKind, seed: u64) -> Result<Box<dyn AwardPolicy>> {
        build_policy(kind, &self.tracker, &self.qlearn, self.dp_cost_scale, seed)
    }
}

/// Instantiates a tournament player.
pub fn build_policy(
    kind: PolicyKind,
    tracker: &TrackerConfig,
    qlearn: &QLearnerConfig,
    dp_cost_scale: f64,
    seed: u64,
) -> Result<Box<dyn AwardPolicy>> {
    Ok(match kind {
        PolicyKind::Random => Box::new(RandomPolicy::new(seed)),
        PolicyKind::Dp => Box::new(DpPolicy::new(tracker.clone(), seed)?.with_cost_scale(dp_cost_scale)),
        PolicyKind::Dqn(v) => Box::new(DqnPolicy::new(v, qlearn.clone(), Some(tracker.clone()), tracker.lda.acc, seed)?),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub cell: Cell,
    /// Company 1's pooled final share per seed, in seed order.
    pub shares: Vec<f64>,
    pub trajectories: Vec<Vec<RoundShare>>,
}

impl CellResult {
    pub fn mean(&self) -> f64 {
        self.shares.iter().sum::<f64>() / self.shares.len() as f64
    }

    /// Standard error of the mean over seeds.
    pub fn stderr(&self) -> f64 {
        let n = self.shares.len();
        if n < 2 {
            return 0.0;
        }
        let m = self.mean();
        let var = self.shares.iter().map(|s| (s - m).powi(2)).sum::<f64>() / (n - 1) as f64;
        (var / n as f64).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TournamentRow {
    pub row: String,
    pub col: String,
    pub mean_share: f64,
    pub stderr: f64,
    pub seeds: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TournamentReport {
    pub seeds: Vec<u64>,
    pub cells: Vec<CellResult>,
}

impl TournamentReport {
    pub fn rows(&self) -> Vec<TournamentRow> {
        self.cells
            .iter()
            .map(|c| TournamentRow {
                row: c.cell.0.to_string(),
                col: c.cell.1.to_string(),
                mean_share: c.mean(),
                stderr: c.stderr(),
                seeds: c.shares.len(),
            })
            .collect()
    }

    /// `tournament.csv` plus `trajectory_<cell>_<seed>.csv` per game.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        write_csv(&dir.join("tournament.csv"), &self.rows())?;
        for c in &self.cells {
            for (seed, traj) in self.seeds.iter().zip(&c.trajectories) {
                write_csv(&dir.join(format!("trajectory_{}_{seed}.csv", c.cell.file_stem())), traj)?;
            }
        }
        Ok(())
    }
}

fn play(cfg: &TournamentConfig, cell_idx: usize, cell: Cell, seed: u64) -> Result<(f64, Vec<RoundShare>)> {
    let market = MarketConfig {
        seed,
        ..cfg.market.clone()
    };
    let mut p1 = cfg.build(cell.0, rng::derive_seed(seed, &[0x70, cell_idx as u64, 0]))?;
    let mut p2 = cfg.build(cell.1, rng::derive_seed(seed, &[0x70, cell_idx as u64, 1]))?;
    let result = run_game_with(&market, p1.as_mut(), p2.as_mut(), false)?;
    let share = result
        .final_share
        .ok_or_else(|| Error::Config("tournament games need at least one round".into()))?;
    log::info!("{} seed {seed}: {:.4}", cell.file_stem(), share[0]);
    Ok((share[0], result.trajectory))
}

/// Plays every cell once per seed (games run in parallel) and averages
/// company 1's final share per cell. The market seed of each game is the
/// listed seed, so every cell sees the same customers and demands.
pub fn run_tournament(cfg: &TournamentConfig) -> Result<TournamentReport> {
    cfg.validate()?;
    let jobs: Vec<(usize, u64)> = (0..cfg.cells.len())
        .flat_map(|c| cfg.seeds.iter().map(move |&s| (c, s)))
        .collect();
    let games: Vec<(f64, Vec<RoundShare>)> = jobs
        .par_iter()
        .map(|&(c, s)| play(cfg, c, cfg.cells[c], s))
        .collect::<Result<_>>()?;
    let mut games = games.into_iter();
    let cells = cfg
        .cells
        .iter()
        .map(|&cell| {
            let (shares, trajectories) = games.by_ref().take(cfg.seeds.len()).unzip();
            CellResult {
                cell,
                shares,
                trajectories,
            }
        })
        .collect();
    Ok(TournamentReport {
        seeds: cfg.seeds.clone(),
        cells,
    })
}
