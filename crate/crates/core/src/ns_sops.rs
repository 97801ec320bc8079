//! The known-corruption optimistic learner.
//!
//! Each episode: fold the bandit feedback into the confidence state, rebuild
//! the transition confidence set and the enlarged reward/cost bounds, and
//! re-solve the optimistic program. Its solution (or, when the program is
//! infeasible, the deterministic structural fallback point) induces the next
//! policy. The first policy is uniform.
//!
//! The corruption guess is a plain input: running with an under- or
//! over-estimate is allowed and is exactly what the unknown-corruption
//! master does with its bank of guesses.

use std::sync::Arc;

use thiserror::Error;

use crate::cmdp::{
    occupancy_from_transition_policy, policy_from_occupancy, EpisodeFeedback, OccupancyMeasure,
    Policy, Topology,
};
use crate::confidence::{ConfidenceError, ConfidenceParams, ConfidenceState};
use crate::occupancy_lp::{
    solve_opt_cb, structural_feasible_point, LpError, LpStatus, PolytopeSpec,
};

#[derive(Debug, Error)]
pub enum NsSopsError {
    #[error(transparent)]
    Confidence(#[from] ConfidenceError),
    #[error(transparent)]
    Lp(#[from] LpError),
    #[error("optimistic program reported an unbounded direction")]
    Unbounded,
    #[error("thresholds have {got} entries, confidence state expects {want}")]
    Dimension { got: usize, want: usize },
}

#[derive(Debug, Clone, Copy)]
pub struct NsSopsConfig {
    /// Corruption guess plugged into the enlarged bounds.
    pub corruption_guess: f64,
    pub delta: f64,
    /// Episode horizon; with doubling enabled this is the initial epoch
    /// guess and the `C/T` term keeps using it.
    pub episodes: usize,
    /// Doubling trick: when a run outlives the current epoch horizon the
    /// log arguments switch to the doubled horizon. Counters are never
    /// reset. With the true horizon known this never fires.
    pub doubling: bool,
    pub lp_tol: f64,
}

impl NsSopsConfig {
    pub fn new(corruption_guess: f64, delta: f64, episodes: usize) -> Self {
        Self {
            corruption_guess,
            delta,
            episodes,
            doubling: false,
            lp_tol: crate::occupancy_lp::DEFAULT_TOL,
        }
    }

    pub fn with_doubling(mut self, on: bool) -> Self {
        self.doubling = on;
        self
    }
}

/// Learner state across episodes.
#[derive(Debug, Clone)]
pub struct NsSops {
    topo: Arc<Topology>,
    alpha: Vec<f64>,
    config: NsSopsConfig,
    conf: ConfidenceState,
    current_policy: Policy,
    current_qhat: OccupancyMeasure,
    last_lp_feasible: bool,
    episodes_observed: usize,
    epoch_horizon: usize,
    horizon_resets: usize,
}

impl NsSops {
    pub fn new(
        topo: Arc<Topology>,
        alpha: Vec<f64>,
        config: NsSopsConfig,
    ) -> Result<Self, NsSopsError> {
        let conf = ConfidenceState::new(
            topo.clone(),
            ConfidenceParams {
                corruption_guess: config.corruption_guess,
                delta: config.delta,
                episodes: config.episodes,
                num_constraints: alpha.len(),
            },
        )?;
        let current_policy = Policy::uniform(&topo);
        // before any data the estimated costs are zero, so any fixed valid
        // occupancy works here; take the uniform-policy/uniform-transition one
        let uniform_tr = uniform_transition(&topo);
        let current_qhat =
            occupancy_from_transition_policy(&topo, &uniform_tr, &current_policy);
        let epoch_horizon = config.episodes.max(1);
        Ok(Self {
            topo,
            alpha,
            config,
            conf,
            current_policy,
            current_qhat,
            last_lp_feasible: true,
            episodes_observed: 0,
            epoch_horizon,
            horizon_resets: 1,
        })
    }

    pub fn topo(&self) -> &Topology {
        &self.topo
    }

    /// Policy for the next episode.
    pub fn act(&self) -> &Policy {
        &self.current_policy
    }

    /// Occupancy measure behind the current policy (the optimistic solution
    /// or the structural fallback).
    pub fn current_qhat(&self) -> &OccupancyMeasure {
        &self.current_qhat
    }

    pub fn last_lp_feasible(&self) -> bool {
        self.last_lp_feasible
    }

    pub fn episodes_observed(&self) -> usize {
        self.episodes_observed
    }

    pub fn confidence(&self) -> &ConfidenceState {
        &self.conf
    }

    /// Current doubling-epoch horizon feeding the log arguments.
    pub fn epoch_horizon(&self) -> usize {
        self.epoch_horizon
    }

    /// Number of horizon values set so far, counting the initial one.
    pub fn horizon_resets(&self) -> usize {
        self.horizon_resets
    }

    /// Estimated positive violation of the current solution under the
    /// current empirical costs: `sum_i [Ghat^T qhat - alpha]_i^+`.
    pub fn estimated_violation(&self) -> f64 {
        let m = self.alpha.len();
        let q2 = self.current_qhat.q2(&self.topo);
        let mut total = 0.0;
        for (i, &a) in self.alpha.iter().enumerate() {
            let mut cost = 0.0;
            for (pair, qv) in q2.iter().enumerate() {
                cost += qv * self.conf.g_hat(pair, i);
            }
            total += (cost - a).max(0.0);
        }
        let _ = m;
        total
    }

    /// Folds one episode of feedback and re-solves the optimistic program.
    pub fn observe(&mut self, fb: &EpisodeFeedback) -> Result<(), NsSopsError> {
        if fb.num_constraints != self.alpha.len() {
            return Err(NsSopsError::Dimension {
                got: fb.num_constraints,
                want: self.alpha.len(),
            });
        }
        self.conf.update(fb);
        self.episodes_observed += 1;
        if self.config.doubling {
            while self.episodes_observed >= 2 * self.epoch_horizon {
                self.epoch_horizon *= 2;
                self.horizon_resets += 1;
            }
            self.conf.set_log_horizon(self.epoch_horizon);
        }

        let tb = self.conf.transition_bounds();
        let r_bar = self.conf.optimistic_rewards();
        let g_under = self.conf.pessimistic_costs();
        let sol = solve_opt_cb(
            &self.topo,
            &tb.p_bar,
            &tb.eps,
            &r_bar,
            &g_under,
            &self.alpha,
            self.config.lp_tol,
        )?;
        match sol.status {
            LpStatus::Optimal => {
                self.current_qhat = sol.q.expect("optimal solution carries q");
                self.last_lp_feasible = true;
            }
            LpStatus::Infeasible { .. } => {
                let poly = PolytopeSpec::Confidence {
                    topo: &self.topo,
                    p_bar: &tb.p_bar,
                    eps: &tb.eps,
                };
                self.current_qhat = structural_feasible_point(&poly, self.config.lp_tol)?;
                self.last_lp_feasible = false;
            }
            LpStatus::UnboundedGuard => return Err(NsSopsError::Unbounded),
        }
        self.current_policy = policy_from_occupancy(&self.topo, &self.current_qhat);
        Ok(())
    }
}

/// Uniform next-layer transition for every pair.
fn uniform_transition(topo: &Topology) -> Vec<f64> {
    let mut tr = vec![0.0; topo.num_triples()];
    for (k, off, a, _) in topo.pairs() {
        let width = topo.layer_size(k + 1) as f64;
        for t in topo.triple_block(k, off, a) {
            tr[t] = 1.0 / width;
        }
    }
    tr
}
