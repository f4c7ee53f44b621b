//! Strategic customers in a join-the-shortest-queue system.
//!
//! Dedicated customers arrive at each of `N` queues and decide whether to
//! join; smart customers always join a shortest queue. The crate computes
//! the mean-field stationary law, the symmetric equilibrium and social
//! optimum joining probabilities, certifies convergence of the mean-field
//! dynamics with a Lyapunov function, and simulates the finite system.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod csvio;
pub mod error;
pub mod game;
pub mod meanfield;
pub mod model;
pub mod par;
pub mod sim;
pub mod stats;
pub mod sweep;

pub use error::{Error, Result};
pub use game::{Branch, StrategyResult};
pub use model::{ModelParams, Strategy};
pub use par::Execution;
