//! Online learning in episodic loop-free constrained MDPs whose reward and
//! constraint-cost distributions drift adversarially between episodes.
//!
//! The crate provides:
//!
//! - [`cmdp`]: layered CMDP instances, policies, occupancy measures, and the
//!   bandit-feedback episode protocol.
//! - [`adversary`]: per-episode mean sequences and the corruption functionals
//!   that quantify their non-stationarity.
//! - [`confidence`]: visit counters, empirical estimators, and
//!   corruption-enlarged confidence bounds.
//! - [`simplex`] / [`occupancy_lp`]: a self-contained deterministic LP solver
//!   and the occupancy-polytope programs built on top of it (offline optimum,
//!   optimistic confidence-bound program, feasibility margin, positive
//!   Lagrangian).
//! - [`ns_sops`]: the optimistic learner for a known corruption budget.
//! - [`lag_ftrl`]: the master procedure for unknown corruption — log-barrier
//!   FTRL over a bank of corruption guesses, with stabilized sub-instances
//!   and optimistic importance-weighted Lagrangian losses.
//! - [`evaluation`]: ground-truth baselines, cumulative regret, and positive
//!   constraint violation.
//! - [`harness`]: config-driven experiment runner behind the `cmdp-harness`
//!   CLI.

pub mod adversary;
pub mod cmdp;
pub mod confidence;
pub mod evaluation;
pub mod harness;
pub mod lag_ftrl;
pub mod ns_sops;
pub mod occupancy_lp;
pub mod rng;
pub mod simplex;
#[doc(hidden)]
pub mod test_support;
