//! Self-contained dense-tableau primal simplex.
//!
//! Two-phase method with Bland's pivoting rule: entering variable is the
//! lowest-index column with an improving reduced cost, leaving row is the
//! ratio-test winner with the lowest-index basic variable among ties. Bland's
//! rule cannot cycle, and both rules are index-based, so repeated calls on
//! the same data visit the same vertices — solutions are bit-identical.
//!
//! Problems are stated as `max c^T x` subject to sparse `<=` / `=` / `>=`
//! rows and `x >= 0`. The occupancy polytopes solved in this crate are
//! subsets of `[0, 1]^n`, so unboundedness means a modelling bug; it is
//! reported as a distinct status instead of panicking.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimplexError {
    #[error("coefficient index {index} out of range for {num_vars} variables")]
    BadIndex { index: usize, num_vars: usize },
    #[error("numerical failure: {0}")]
    Numerical(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Eq,
    Ge,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Status {
    Optimal,
    /// Phase 1 terminated with artificial mass left over; the reported value
    /// is that mass (a certificate of infeasibility when above tolerance).
    Infeasible { phase1_objective: f64 },
    /// Ratio test found no blocking row. Cannot happen on a bounded feasible
    /// region; kept as a guard instead of a panic.
    Unbounded,
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub status: Status,
    pub x: Vec<f64>,
    pub objective: f64,
    /// One multiplier per constraint row (signs per the max convention:
    /// duals of binding `<=` rows are nonnegative).
    pub duals: Vec<f64>,
    pub max_residual: f64,
}

#[derive(Debug, Clone)]
struct Row {
    coeffs: Vec<(usize, f64)>,
    relation: Relation,
    rhs: f64,
}

/// A linear program in `max c^T x, x >= 0` form with sparse rows.
#[derive(Debug, Clone)]
pub struct LinearProgram {
    num_vars: usize,
    objective: Vec<f64>,
    rows: Vec<Row>,
}

impl LinearProgram {
    pub fn new(num_vars: usize) -> Self {
        Self {
            num_vars,
            objective: vec![0.0; num_vars],
            rows: Vec::new(),
        }
    }

    pub fn num_vars(&self) -> usize {
        self.num_vars
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn set_objective(&mut self, var: usize, coeff: f64) {
        self.objective[var] = coeff;
    }

    pub fn objective(&self) -> &[f64] {
        &self.objective
    }

    pub fn add_row(
        &mut self,
        coeffs: Vec<(usize, f64)>,
        relation: Relation,
        rhs: f64,
    ) -> Result<usize, SimplexError> {
        for &(i, _) in &coeffs {
            if i >= self.num_vars {
                return Err(SimplexError::BadIndex {
                    index: i,
                    num_vars: self.num_vars,
                });
            }
        }
        self.rows.push(Row {
            coeffs,
            relation,
            rhs,
        });
        Ok(self.rows.len() - 1)
    }

    /// Writes the program in LP interchange text (maximize / subject to /
    /// bounds) for cross-checking with external solvers.
    pub fn to_lp_text(&self) -> String {
        use std::fmt::Write;
        let mut s = String::from("Maximize\n obj:");
        for (i, &c) in self.objective.iter().enumerate() {
            if c != 0.0 {
                write!(s, " {} {} x{}", if c < 0.0 { "-" } else { "+" }, c.abs(), i).unwrap();
            }
        }
        s.push_str("\nSubject To\n");
        for (r, row) in self.rows.iter().enumerate() {
            write!(s, " c{r}:").unwrap();
            for &(i, c) in &row.coeffs {
                write!(s, " {} {} x{}", if c < 0.0 { "-" } else { "+" }, c.abs(), i).unwrap();
            }
            let rel = match row.relation {
                Relation::Le => "<=",
                Relation::Eq => "=",
                Relation::Ge => ">=",
            };
            writeln!(s, " {rel} {}", row.rhs).unwrap();
        }
        s.push_str("Bounds\n");
        for i in 0..self.num_vars {
            writeln!(s, " 0 <= x{i}").unwrap();
        }
        s.push_str("End\n");
        s
    }

    /// Solves to primal residual `tol`. Deterministic: same input, same
    /// output, including on degenerate ties.
    pub fn solve(&self, tol: f64) -> Result<Solution, SimplexError> {
        Tableau::assemble(self).solve(self, tol)
    }
}

const PIVOT_TOL: f64 = 1e-10;
const COST_TOL: f64 = 1e-11;

struct Tableau {
    /// Row-major `(rows) x (width)`; last column is the rhs.
    data: Vec<f64>,
    rows: usize,
    width: usize,
    /// Structural + slack column count; artificials live past this bound and
    /// may never enter in phase 2.
    real_cols: usize,
    cols: usize,
    basis: Vec<usize>,
    /// Column recording each original constraint's dual multiplier and its
    /// sign (slack/surplus/artificial column, +1 or -1).
    dual_col: Vec<(usize, f64)>,
}

impl Tableau {
    fn assemble(lp: &LinearProgram) -> Self {
        let n = lp.num_vars;
        let m = lp.rows.len();

        // after sign normalization every rhs is >= 0
        let mut flipped: Vec<bool> = Vec::with_capacity(m);
        let mut relation: Vec<Relation> = Vec::with_capacity(m);
        for row in &lp.rows {
            let flip = row.rhs < 0.0;
            flipped.push(flip);
            relation.push(match (row.relation, flip) {
                (Relation::Le, false) | (Relation::Ge, true) => Relation::Le,
                (Relation::Ge, false) | (Relation::Le, true) => Relation::Ge,
                (Relation::Eq, _) => Relation::Eq,
            });
        }

        let num_slack = relation
            .iter()
            .filter(|r| matches!(r, Relation::Le | Relation::Ge))
            .count();
        let num_art = relation
            .iter()
            .filter(|r| matches!(r, Relation::Eq | Relation::Ge))
            .count();
        let real_cols = n + num_slack;
        let cols = real_cols + num_art;
        let width = cols + 1;

        let mut data = vec![0.0; m * width];
        let mut basis = vec![usize::MAX; m];
        let mut dual_col = vec![(0usize, 0.0f64); m];
        let mut slack_at = n;
        let mut art_at = real_cols;
        for (r, row) in lp.rows.iter().enumerate() {
            let sign = if flipped[r] { -1.0 } else { 1.0 };
            let base = r * width;
            for &(i, c) in &row.coeffs {
                data[base + i] += sign * c;
            }
            data[base + cols] = sign * row.rhs;
            // dual recovery: the reduced cost of the unit column of row r
            // (slack for <=, artificial for >= and =) equals the row's
            // multiplier up to the flip sign
            match relation[r] {
                Relation::Le => {
                    data[base + slack_at] = 1.0;
                    basis[r] = slack_at;
                    dual_col[r] = (slack_at, sign);
                    slack_at += 1;
                }
                Relation::Ge => {
                    data[base + slack_at] = -1.0;
                    data[base + art_at] = 1.0;
                    basis[r] = art_at;
                    dual_col[r] = (art_at, sign);
                    slack_at += 1;
                    art_at += 1;
                }
                Relation::Eq => {
                    data[base + art_at] = 1.0;
                    basis[r] = art_at;
                    dual_col[r] = (art_at, sign);
                    art_at += 1;
                }
            }
        }

        Tableau {
            data,
            rows: m,
            width,
            real_cols,
            cols,
            basis,
            dual_col,
        }
    }

    #[inline]
    fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.width + c]
    }

    fn pivot(&mut self, pr: usize, pc: usize) {
        let width = self.width;
        let pivot = self.data[pr * width + pc];
        let inv = 1.0 / pivot;
        let (before, rest) = self.data.split_at_mut(pr * width);
        let (prow, after) = rest.split_at_mut(width);
        for v in prow.iter_mut() {
            *v *= inv;
        }
        let eliminate = |row: &mut [f64]| {
            let f = row[pc];
            if f != 0.0 {
                for (v, p) in row.iter_mut().zip(prow.iter()) {
                    *v -= f * *p;
                }
                row[pc] = 0.0;
            }
        };
        for chunk in before.chunks_exact_mut(width) {
            eliminate(chunk);
        }
        for chunk in after.chunks_exact_mut(width) {
            eliminate(chunk);
        }
        self.basis[pr] = pc;
    }

    /// Runs simplex iterations on the current tableau for the reduced-cost
    /// row `z` (minimization; entering needs `z < -COST_TOL`). Returns false
    /// if an entering column had no blocking row.
    fn iterate(&mut self, z: &mut [f64], max_col: usize) -> bool {
        loop {
            // Bland: lowest-index improving column
            let mut entering = None;
            for (c, &zc) in z.iter().enumerate().take(max_col) {
                if zc < -COST_TOL {
                    entering = Some(c);
                    break;
                }
            }
            let Some(pc) = entering else {
                return true;
            };
            // ratio test; Bland tie-break on the basic variable index
            let mut best: Option<(f64, usize, usize)> = None; // (ratio, basis var, row)
            for r in 0..self.rows {
                let a = self.at(r, pc);
                if a > PIVOT_TOL {
                    let ratio = self.at(r, self.cols) / a;
                    match best {
                        None => best = Some((ratio, self.basis[r], r)),
                        Some((br, bv, _)) => {
                            if ratio < br - PIVOT_TOL
                                || ((ratio - br).abs() <= PIVOT_TOL && self.basis[r] < bv)
                            {
                                best = Some((ratio, self.basis[r], r));
                            }
                        }
                    }
                }
            }
            let Some((_, _, pr)) = best else {
                return false;
            };
            // update the cost row alongside the tableau
            let factor = z[pc];
            self.pivot(pr, pc);
            if factor != 0.0 {
                let base = pr * self.width;
                for (c, zc) in z.iter_mut().enumerate().take(self.cols) {
                    *zc -= factor * self.data[base + c];
                }
                z[pc] = 0.0;
            }
        }
    }

    /// Reduced costs for cost vector `c` (length `cols`) under the current
    /// basis, assuming basic columns are unit columns (true after pivoting).
    fn reduced_costs(&self, cost: &[f64]) -> Vec<f64> {
        let mut z = cost.to_vec();
        for r in 0..self.rows {
            let cb = cost[self.basis[r]];
            if cb != 0.0 {
                let base = r * self.width;
                for (c, zc) in z.iter_mut().enumerate().take(self.cols) {
                    *zc -= cb * self.data[base + c];
                }
            }
        }
        z
    }

    fn drop_row(&mut self, r: usize) {
        let start = r * self.width;
        self.data.drain(start..start + self.width);
        self.basis.remove(r);
        self.rows -= 1;
    }

    fn solve(mut self, lp: &LinearProgram, tol: f64) -> Result<Solution, SimplexError> {
        // ---- phase 1: minimize artificial mass
        let has_artificials = self.cols > self.real_cols;
        if has_artificials {
            let mut cost = vec![0.0; self.cols];
            for c in self.real_cols..self.cols {
                cost[c] = 1.0;
            }
            let mut z = self.reduced_costs(&cost);
            if !self.iterate(&mut z, self.cols) {
                return Err(SimplexError::Numerical(
                    "phase 1 reported an unbounded direction".into(),
                ));
            }
            let phase1 = basic_artificial_mass(&self);
            if phase1 > tol {
                return Ok(Solution {
                    status: Status::Infeasible {
                        phase1_objective: phase1,
                    },
                    x: vec![0.0; lp.num_vars],
                    objective: f64::NEG_INFINITY,
                    duals: vec![0.0; lp.rows.len()],
                    max_residual: f64::INFINITY,
                });
            }
            // drive artificials out of the basis; fully zero rows are
            // redundant constraints and get dropped
            let mut r = 0;
            while r < self.rows {
                if self.basis[r] >= self.real_cols {
                    let mut pivot_col = None;
                    for c in 0..self.real_cols {
                        if self.at(r, c).abs() > PIVOT_TOL {
                            pivot_col = Some(c);
                            break;
                        }
                    }
                    match pivot_col {
                        Some(pc) => {
                            self.pivot(r, pc);
                            r += 1;
                        }
                        None => {
                            self.drop_row(r);
                        }
                    }
                } else {
                    r += 1;
                }
            }
        }

        // ---- phase 2: maximize the real objective (minimize its negation)
        let mut cost = vec![0.0; self.cols];
        for (i, &c) in lp.objective.iter().enumerate() {
            cost[i] = -c;
        }
        let mut z = self.reduced_costs(&cost);
        // artificials may not re-enter
        if !self.iterate(&mut z, self.real_cols) {
            return Ok(Solution {
                status: Status::Unbounded,
                x: vec![0.0; lp.num_vars],
                objective: f64::INFINITY,
                duals: vec![0.0; lp.rows.len()],
                max_residual: f64::INFINITY,
            });
        }

        let mut x = vec![0.0; lp.num_vars];
        for r in 0..self.rows {
            if self.basis[r] < lp.num_vars {
                x[self.basis[r]] = self.at(r, self.cols);
            }
        }
        // degenerate bases can leave tiny negative values
        for v in &mut x {
            if *v < 0.0 && *v > -tol {
                *v = 0.0;
            }
        }

        let mut duals = vec![0.0; lp.rows.len()];
        for (r, &(col, sign)) in self.dual_col.iter().enumerate() {
            // z holds c - y^T A (phase-2 min convention, c = -objective);
            // slack/artificial columns carry +-y_i
            duals[r] = sign * z[col];
        }

        let mut max_residual = 0.0f64;
        for row in &lp.rows {
            let lhs: f64 = row.coeffs.iter().map(|&(i, c)| c * x[i]).sum();
            let viol = match row.relation {
                Relation::Le => lhs - row.rhs,
                Relation::Ge => row.rhs - lhs,
                Relation::Eq => (lhs - row.rhs).abs(),
            };
            max_residual = max_residual.max(viol);
        }
        if max_residual > tol {
            return Err(SimplexError::Numerical(format!(
                "primal residual {max_residual:.3e} above tolerance {tol:.1e}"
            )));
        }

        let objective = lp
            .objective
            .iter()
            .zip(&x)
            .map(|(c, v)| c * v)
            .sum::<f64>();
        Ok(Solution {
            status: Status::Optimal,
            x,
            objective,
            duals,
            max_residual,
        })
    }
}

/// Artificial mass still basic after phase 1 (its objective value).
fn basic_artificial_mass(t: &Tableau) -> f64 {
    let mut total = 0.0;
    for r in 0..t.rows {
        if t.basis[r] >= t.real_cols {
            total += t.at(r, t.cols).max(0.0);
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_variable_cap() {
        let mut lp = LinearProgram::new(1);
        lp.set_objective(0, 1.0);
        lp.add_row(vec![(0, 1.0)], Relation::Le, 0.5).unwrap();
        let sol = lp.solve(1e-8).unwrap();
        assert_eq!(sol.status, Status::Optimal);
        assert!((sol.objective - 0.5).abs() < 1e-12);
        assert!((sol.x[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn textbook_max_with_duals() {
        // max 3x + 5y st x <= 4, 2y <= 12, 3x + 2y <= 18 -> (2, 6), 36
        let mut lp = LinearProgram::new(2);
        lp.set_objective(0, 3.0);
        lp.set_objective(1, 5.0);
        lp.add_row(vec![(0, 1.0)], Relation::Le, 4.0).unwrap();
        lp.add_row(vec![(1, 2.0)], Relation::Le, 12.0).unwrap();
        lp.add_row(vec![(0, 3.0), (1, 2.0)], Relation::Le, 18.0).unwrap();
        let sol = lp.solve(1e-8).unwrap();
        assert_eq!(sol.status, Status::Optimal);
        assert!((sol.objective - 36.0).abs() < 1e-9);
        assert!((sol.x[0] - 2.0).abs() < 1e-9);
        assert!((sol.x[1] - 6.0).abs() < 1e-9);
        // known duals: (0, 1.5, 1)
        assert!((sol.duals[0] - 0.0).abs() < 1e-9);
        assert!((sol.duals[1] - 1.5).abs() < 1e-9);
        assert!((sol.duals[2] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn equality_and_ge_rows() {
        // max x + y st x + y = 1, x >= 0.3 -> objective 1
        let mut lp = LinearProgram::new(2);
        lp.set_objective(0, 1.0);
        lp.set_objective(1, 1.0);
        lp.add_row(vec![(0, 1.0), (1, 1.0)], Relation::Eq, 1.0).unwrap();
        lp.add_row(vec![(0, 1.0)], Relation::Ge, 0.3).unwrap();
        let sol = lp.solve(1e-8).unwrap();
        assert_eq!(sol.status, Status::Optimal);
        assert!((sol.objective - 1.0).abs() < 1e-9);
        assert!(sol.x[0] >= 0.3 - 1e-9);
    }

    #[test]
    fn infeasible_reports_phase1_mass() {
        // x <= 1 and x >= 2
        let mut lp = LinearProgram::new(1);
        lp.set_objective(0, 1.0);
        lp.add_row(vec![(0, 1.0)], Relation::Le, 1.0).unwrap();
        lp.add_row(vec![(0, 1.0)], Relation::Ge, 2.0).unwrap();
        let sol = lp.solve(1e-8).unwrap();
        match sol.status {
            Status::Infeasible { phase1_objective } => {
                assert!((phase1_objective - 1.0).abs() < 1e-9)
            }
            s => panic!("expected infeasible, got {s:?}"),
        }
    }

    #[test]
    fn unbounded_is_guarded() {
        let mut lp = LinearProgram::new(2);
        lp.set_objective(0, 1.0);
        lp.add_row(vec![(1, 1.0)], Relation::Le, 1.0).unwrap();
        let sol = lp.solve(1e-8).unwrap();
        assert_eq!(sol.status, Status::Unbounded);
    }

    #[test]
    fn redundant_equalities_are_tolerated() {
        // x + y = 1 twice plus a scaled copy
        let mut lp = LinearProgram::new(2);
        lp.set_objective(0, 2.0);
        lp.set_objective(1, 1.0);
        lp.add_row(vec![(0, 1.0), (1, 1.0)], Relation::Eq, 1.0).unwrap();
        lp.add_row(vec![(0, 1.0), (1, 1.0)], Relation::Eq, 1.0).unwrap();
        lp.add_row(vec![(0, 2.0), (1, 2.0)], Relation::Eq, 2.0).unwrap();
        let sol = lp.solve(1e-8).unwrap();
        assert_eq!(sol.status, Status::Optimal);
        assert!((sol.objective - 2.0).abs() < 1e-9);
    }

    #[test]
    fn degenerate_ties_are_repeat_call_identical() {
        // several rows intersect at the optimum
        let mut lp = LinearProgram::new(3);
        lp.set_objective(0, 1.0);
        lp.set_objective(1, 1.0);
        lp.set_objective(2, 1.0);
        lp.add_row(vec![(0, 1.0), (1, 1.0)], Relation::Le, 1.0).unwrap();
        lp.add_row(vec![(1, 1.0), (2, 1.0)], Relation::Le, 1.0).unwrap();
        lp.add_row(vec![(0, 1.0), (2, 1.0)], Relation::Le, 1.0).unwrap();
        lp.add_row(vec![(0, 1.0), (1, 1.0), (2, 1.0)], Relation::Le, 1.5)
            .unwrap();
        let a = lp.solve(1e-8).unwrap();
        let b = lp.solve(1e-8).unwrap();
        assert_eq!(a.x, b.x);
        assert_eq!(a.objective, b.objective);
        assert!((a.objective - 1.5).abs() < 1e-9);
    }

    #[test]
    fn negative_rhs_rows_are_normalized() {
        // -x <= -0.25  <=>  x >= 0.25
        let mut lp = LinearProgram::new(1);
        lp.set_objective(0, -1.0); // minimize x
        lp.add_row(vec![(0, -1.0)], Relation::Le, -0.25).unwrap();
        let sol = lp.solve(1e-8).unwrap();
        assert_eq!(sol.status, Status::Optimal);
        assert!((sol.x[0] - 0.25).abs() < 1e-9);
    }

    #[test]
    fn lp_text_dump_mentions_all_rows() {
        let mut lp = LinearProgram::new(2);
        lp.set_objective(0, 1.0);
        lp.add_row(vec![(0, 1.0), (1, -2.0)], Relation::Le, 1.0).unwrap();
        lp.add_row(vec![(1, 1.0)], Relation::Eq, 0.5).unwrap();
        let text = lp.to_lp_text();
        assert!(text.contains("Maximize"));
        assert!(text.contains("c0:"));
        assert!(text.contains("c1:"));
        assert!(text.contains("End"));
    }
}
