//! Award-decision engines: uniform random, budgeted dynamic programming
//! over inferred preferences, and deep Q-learning with optional inferred
//! features.

pub mod agents;
pub mod dp;
pub mod mlp;
pub mod qlearn;
pub mod random;

pub use agents::{DpPolicy, DqnPolicy, LdaTracker, TrackerConfig};
pub use dp::{benefit_row, dp_allocate, expected_benefit, Allocation, DpDecision};
pub use mlp::{Mlp, Optimizer, OptimizerKind};
pub use qlearn::{build_state, reward, History, QLearner, QLearnerConfig, ReplayBuffer, StateVariant, Transition};
pub use random::{random_choose, RandomPolicy};
