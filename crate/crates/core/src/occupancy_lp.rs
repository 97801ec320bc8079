//! Linear programs over occupancy polytopes.
//!
//! Two polytope modes share one assembly path:
//!
//! - *exact*: the set of valid occupancy measures of a known transition
//!   function, written in pair-marginal variables (mass + flow rows);
//! - *confidence*: the set of occupancy measures compatible with an
//!   empirical transition function and per-triple confidence radii, written
//!   in triple variables with bracket rows
//!   `q(x,a,x') ∈ [lb, ub] · Σ_y q(x,a,y)` where the brackets are clipped to
//!   `[0, 1]`.
//!
//! On top of these sit the offline optimum, its optimistic confidence-bound
//! variant, the feasibility margin `rho`, and the positive-Lagrangian
//! maximization used by the duality checks.

use thiserror::Error;

use crate::cmdp::{LoopFreeCmdp, OccupancyMeasure, Topology};
use crate::simplex::{LinearProgram, Relation, SimplexError, Solution, Status};

/// Default primal residual tolerance.
pub const DEFAULT_TOL: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum LpError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error(transparent)]
    Solver(#[from] SimplexError),
    #[error("structural polytope unexpectedly empty (phase 1 mass {0})")]
    EmptyPolytope(f64),
}

/// Feasible region for the occupancy programs.
#[derive(Clone, Copy)]
pub enum PolytopeSpec<'a> {
    /// Valid occupancies of the true transition function.
    Exact { cmdp: &'a LoopFreeCmdp },
    /// Occupancies compatible with the transition confidence set:
    /// `p_bar` and `eps` are triple-indexed.
    Confidence {
        topo: &'a Topology,
        p_bar: &'a [f64],
        eps: &'a [f64],
    },
}

impl<'a> PolytopeSpec<'a> {
    pub fn topo(&self) -> &'a Topology {
        match self {
            PolytopeSpec::Exact { cmdp } => cmdp.topo(),
            PolytopeSpec::Confidence { topo, .. } => topo,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LpStatus {
    Optimal,
    /// Legal outcome: the caller decides how to fall back.
    Infeasible { phase1_objective: f64 },
    UnboundedGuard,
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub status: LpStatus,
    pub q: Option<OccupancyMeasure>,
    pub objective: f64,
    /// Multipliers of the `m` cost rows, when the program has them.
    pub duals: Option<Vec<f64>>,
    pub max_residual: f64,
}

impl LpSolution {
    pub fn is_optimal(&self) -> bool {
        matches!(self.status, LpStatus::Optimal)
    }
}

/// Mass and flow rows for the triple-variable (confidence) formulation.
fn structural_rows_q3(lp: &mut LinearProgram, topo: &Topology) {
    for k in 0..topo.horizon() {
        let mut coeffs = Vec::new();
        for off in 0..topo.layer_size(k) {
            for a in 0..topo.num_actions() {
                for t in topo.triple_block(k, off, a) {
                    coeffs.push((t, 1.0));
                }
            }
        }
        lp.add_row(coeffs, Relation::Eq, 1.0).unwrap();
    }
    for k in 1..topo.horizon() {
        for off in 0..topo.layer_size(k) {
            let mut coeffs = Vec::new();
            for a in 0..topo.num_actions() {
                for t in topo.triple_block(k, off, a) {
                    coeffs.push((t, 1.0));
                }
            }
            for prev_off in 0..topo.layer_size(k - 1) {
                for a in 0..topo.num_actions() {
                    coeffs.push((topo.triple(k - 1, prev_off, a, off), -1.0));
                }
            }
            lp.add_row(coeffs, Relation::Eq, 0.0).unwrap();
        }
    }
}

/// Bracket rows tying each triple to its `(x, a)` block total. Lower
/// brackets at zero are implied by nonnegativity and skipped.
fn bracket_rows(lp: &mut LinearProgram, topo: &Topology, p_bar: &[f64], eps: &[f64]) {
    for (k, off, a, _) in topo.pairs() {
        let block = topo.triple_block(k, off, a);
        for t in block.clone() {
            let ub = (p_bar[t] + eps[t]).min(1.0);
            let lb = (p_bar[t] - eps[t]).max(0.0);
            let mut up = Vec::with_capacity(block.len());
            for y in block.clone() {
                let c = if y == t { 1.0 - ub } else { -ub };
                if c != 0.0 {
                    up.push((y, c));
                }
            }
            lp.add_row(up, Relation::Le, 0.0).unwrap();
            if lb > 0.0 {
                let mut low = Vec::with_capacity(block.len());
                for y in block.clone() {
                    let c = if y == t { 1.0 - lb } else { -lb };
                    if c != 0.0 {
                        low.push((y, c));
                    }
                }
                lp.add_row(low, Relation::Ge, 0.0).unwrap();
            }
        }
    }
}

/// Mass and flow rows for the pair-variable (exact) formulation.
fn structural_rows_q2(lp: &mut LinearProgram, cmdp: &LoopFreeCmdp) {
    let topo = cmdp.topo();
    for k in 0..topo.horizon() {
        let coeffs: Vec<(usize, f64)> = (0..topo.layer_size(k))
            .flat_map(|off| {
                let x = topo.state_id(k, off);
                (0..topo.num_actions()).map(move |a| (x * topo.num_actions() + a, 1.0))
            })
            .collect();
        lp.add_row(coeffs, Relation::Eq, 1.0).unwrap();
    }
    for k in 1..topo.horizon() {
        for off in 0..topo.layer_size(k) {
            let x = topo.state_id(k, off);
            let mut coeffs: Vec<(usize, f64)> = (0..topo.num_actions())
                .map(|a| (topo.pair(x, a), 1.0))
                .collect();
            for prev_off in 0..topo.layer_size(k - 1) {
                let xp = topo.state_id(k - 1, prev_off);
                for a in 0..topo.num_actions() {
                    let p = cmdp.prob(topo.triple(k - 1, prev_off, a, off));
                    if p != 0.0 {
                        coeffs.push((topo.pair(xp, a), -p));
                    }
                }
            }
            lp.add_row(coeffs, Relation::Eq, 0.0).unwrap();
        }
    }
}

fn check_dims(
    topo: &Topology,
    r: Option<&[f64]>,
    g: &[f64],
    alpha: &[f64],
) -> Result<usize, LpError> {
    let m = alpha.len();
    if let Some(r) = r {
        if r.len() != topo.num_pairs() {
            return Err(LpError::Dimension(format!(
                "reward vector has {} entries, need {}",
                r.len(),
                topo.num_pairs()
            )));
        }
    }
    if g.len() != topo.num_pairs() * m {
        return Err(LpError::Dimension(format!(
            "cost matrix has {} entries, need {} x {}",
            g.len(),
            topo.num_pairs(),
            m
        )));
    }
    Ok(m)
}

/// Number of occupancy variables in each mode.
fn occ_vars(poly: &PolytopeSpec) -> usize {
    match poly {
        PolytopeSpec::Exact { cmdp } => cmdp.topo().num_pairs(),
        PolytopeSpec::Confidence { topo, .. } => topo.num_triples(),
    }
}

/// Structural rows for either mode on a program with `extra` trailing vars.
fn structural_rows(lp: &mut LinearProgram, poly: &PolytopeSpec) {
    match poly {
        PolytopeSpec::Exact { cmdp } => structural_rows_q2(lp, cmdp),
        PolytopeSpec::Confidence { topo, p_bar, eps } => {
            structural_rows_q3(lp, topo);
            bracket_rows(lp, topo, p_bar, eps);
        }
    }
}

/// Sets the occupancy-space objective `r^T q` in the mode's variables.
fn reward_objective(lp: &mut LinearProgram, poly: &PolytopeSpec, r: &[f64]) {
    let topo = poly.topo();
    match poly {
        PolytopeSpec::Exact { .. } => {
            for (pair, &c) in r.iter().enumerate() {
                lp.set_objective(pair, c);
            }
        }
        PolytopeSpec::Confidence { .. } => {
            for (k, off, a, pair) in topo.pairs() {
                if r[pair] != 0.0 {
                    for t in topo.triple_block(k, off, a) {
                        lp.set_objective(t, r[pair]);
                    }
                }
            }
        }
    }
}

/// Sparse coefficients of `G_i^T q` in the mode's variables.
fn cost_coeffs(poly: &PolytopeSpec, g: &[f64], m: usize, i: usize) -> Vec<(usize, f64)> {
    let topo = poly.topo();
    let mut coeffs = Vec::new();
    match poly {
        PolytopeSpec::Exact { .. } => {
            for pair in 0..topo.num_pairs() {
                let c = g[pair * m + i];
                if c != 0.0 {
                    coeffs.push((pair, c));
                }
            }
        }
        PolytopeSpec::Confidence { .. } => {
            for (k, off, a, pair) in topo.pairs() {
                let c = g[pair * m + i];
                if c != 0.0 {
                    for t in topo.triple_block(k, off, a) {
                        coeffs.push((t, c));
                    }
                }
            }
        }
    }
    coeffs
}

fn occupancy_from_x(poly: &PolytopeSpec, x: &[f64]) -> OccupancyMeasure {
    let topo = poly.topo();
    match poly {
        PolytopeSpec::Exact { cmdp } => {
            let mut q3 = vec![0.0; topo.num_triples()];
            for (k, off, a, pair) in topo.pairs() {
                let mass = x[pair];
                if mass != 0.0 {
                    for (off_next, t) in topo.triple_block(k, off, a).enumerate() {
                        q3[t] = mass * cmdp.prob(topo.triple(k, off, a, off_next));
                    }
                }
            }
            OccupancyMeasure::from_raw(topo, q3).unwrap()
        }
        PolytopeSpec::Confidence { .. } => {
            OccupancyMeasure::from_raw(topo, x[..topo.num_triples()].to_vec()).unwrap()
        }
    }
}

fn finish(poly: &PolytopeSpec, sol: Solution, cost_rows: &[usize]) -> LpSolution {
    match sol.status {
        Status::Optimal => LpSolution {
            q: Some(occupancy_from_x(poly, &sol.x)),
            objective: sol.objective,
            duals: if cost_rows.is_empty() {
                None
            } else {
                Some(cost_rows.iter().map(|&r| sol.duals[r]).collect())
            },
            max_residual: sol.max_residual,
            status: LpStatus::Optimal,
        },
        Status::Infeasible { phase1_objective } => LpSolution {
            status: LpStatus::Infeasible { phase1_objective },
            q: None,
            objective: f64::NEG_INFINITY,
            duals: None,
            max_residual: f64::INFINITY,
        },
        Status::Unbounded => LpSolution {
            status: LpStatus::UnboundedGuard,
            q: None,
            objective: f64::INFINITY,
            duals: None,
            max_residual: f64::INFINITY,
        },
    }
}

/// Offline optimum: `max r^T q` over the polytope subject to
/// `G^T q <= alpha`. Infeasibility is a legal status, not an error.
pub fn solve_opt(
    poly: &PolytopeSpec,
    r: &[f64],
    g: &[f64],
    alpha: &[f64],
    tol: f64,
) -> Result<LpSolution, LpError> {
    let m = check_dims(poly.topo(), Some(r), g, alpha)?;
    let mut lp = LinearProgram::new(occ_vars(poly));
    structural_rows(&mut lp, poly);
    let mut cost_rows = Vec::with_capacity(m);
    for i in 0..m {
        cost_rows.push(
            lp.add_row(cost_coeffs(poly, g, m, i), Relation::Le, alpha[i])
                .unwrap(),
        );
    }
    reward_objective(&mut lp, poly, r);
    Ok(finish(poly, lp.solve(tol)?, &cost_rows))
}

/// The optimistic program: [`solve_opt`] over the confidence polytope with
/// upper-bounded rewards and lower-bounded costs.
pub fn solve_opt_cb(
    topo: &Topology,
    p_bar: &[f64],
    eps: &[f64],
    r_bar: &[f64],
    g_under: &[f64],
    alpha: &[f64],
    tol: f64,
) -> Result<LpSolution, LpError> {
    let poly = PolytopeSpec::Confidence { topo, p_bar, eps };
    solve_opt(&poly, r_bar, g_under, alpha, tol)
}

/// Feasibility margin of the constraint system: the largest `s` such that
/// some occupancy satisfies `G^T q <= alpha - s` componentwise. Negative
/// when no occupancy satisfies the constraints.
pub fn feasibility_rho(
    cmdp: &LoopFreeCmdp,
    g: &[f64],
    alpha: &[f64],
    tol: f64,
) -> Result<f64, LpError> {
    let topo = cmdp.topo();
    let m = check_dims(topo, None, g, alpha)?;
    let poly = PolytopeSpec::Exact { cmdp };
    let n = topo.num_pairs();
    // s is free: s = s_pos - s_neg
    let (s_pos, s_neg) = (n, n + 1);
    let mut lp = LinearProgram::new(n + 2);
    structural_rows(&mut lp, &poly);
    for i in 0..m {
        let mut coeffs = cost_coeffs(&poly, g, m, i);
        coeffs.push((s_pos, 1.0));
        coeffs.push((s_neg, -1.0));
        lp.add_row(coeffs, Relation::Le, alpha[i]).unwrap();
    }
    lp.set_objective(s_pos, 1.0);
    lp.set_objective(s_neg, -1.0);
    let sol = lp.solve(tol)?;
    match sol.status {
        Status::Optimal => Ok(sol.objective),
        s => Err(LpError::Solver(SimplexError::Numerical(format!(
            "feasibility program should always be solvable, got {s:?}"
        )))),
    }
}

/// Value of the positive Lagrangian `L(beta, q)` at a given occupancy.
pub fn positive_lagrangian_value(
    topo: &Topology,
    q: &OccupancyMeasure,
    r: &[f64],
    g: &[f64],
    alpha: &[f64],
    beta: f64,
) -> f64 {
    let reward = crate::cmdp::expected_reward(topo, q, r);
    let costs = crate::cmdp::expected_costs(topo, q, g, alpha.len());
    let penalty: f64 = costs
        .iter()
        .zip(alpha)
        .map(|(c, a)| (c - a).max(0.0))
        .sum();
    reward - beta * penalty
}

/// Maximizes the positive Lagrangian
/// `r^T q - beta * sum_i [G_i^T q - alpha_i]^+` over the polytope, with one
/// epigraph slack per constraint standing in for the positive part.
pub fn solve_positive_lagrangian(
    poly: &PolytopeSpec,
    r: &[f64],
    g: &[f64],
    alpha: &[f64],
    beta: f64,
    tol: f64,
) -> Result<LpSolution, LpError> {
    let m = check_dims(poly.topo(), Some(r), g, alpha)?;
    let n_occ = occ_vars(poly);
    let mut lp = LinearProgram::new(n_occ + m);
    structural_rows(&mut lp, poly);
    reward_objective(&mut lp, poly, r);
    for i in 0..m {
        let mut coeffs = cost_coeffs(poly, g, m, i);
        coeffs.push((n_occ + i, -1.0));
        lp.add_row(coeffs, Relation::Le, alpha[i]).unwrap();
        lp.set_objective(n_occ + i, -beta);
    }
    Ok(finish(poly, lp.solve(tol)?, &[]))
}

/// Deterministic feasible point of the structural polytope (no cost rows):
/// the phase-1 vertex found under a zero objective. This is the fallback
/// occupancy when the optimistic program is infeasible.
pub fn structural_feasible_point(
    poly: &PolytopeSpec,
    tol: f64,
) -> Result<OccupancyMeasure, LpError> {
    let mut lp = LinearProgram::new(occ_vars(poly));
    structural_rows(&mut lp, poly);
    let sol = lp.solve(tol)?;
    match sol.status {
        Status::Optimal => Ok(occupancy_from_x(poly, &sol.x)),
        Status::Infeasible { phase1_objective } => Err(LpError::EmptyPolytope(phase1_objective)),
        Status::Unbounded => unreachable!("zero objective cannot be unbounded"),
    }
}

/// LP interchange dump of the offline-optimum program, for external checks.
pub fn dump_opt_lp(poly: &PolytopeSpec, r: &[f64], g: &[f64], alpha: &[f64]) -> String {
    let m = alpha.len();
    let mut lp = LinearProgram::new(occ_vars(poly));
    structural_rows(&mut lp, poly);
    for i in 0..m {
        lp.add_row(cost_coeffs(poly, g, m, i), Relation::Le, alpha[i])
            .unwrap();
    }
    reward_objective(&mut lp, poly, r);
    lp.to_lp_text()
}
