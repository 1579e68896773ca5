//! Desk-scale laboratory for the two-company Internet price-war game.
//!
//! * [`game`] holds the shared domain types and the record schema.
//! * [`simulator`] is the ground-truth market environment.
//! * [`lda`] infers opponent strategies and customer preferences from one
//!   company's own logs with a collapsed Gibbs sampler.
//! * [`policies`] turns those inferences into award decisions.
//! * [`pipeline`] prepares real coupon logs for inference.
//! * [`evaluation`] scores predictions and runs policy tournaments.

pub mod demand;
pub mod error;
pub mod evaluation;
pub mod game;
pub mod io;
pub mod lda;
pub mod pipeline;
pub mod policies;
pub mod rng;
pub mod simulator;

pub use error::{Error, ErrorKind, Result};
