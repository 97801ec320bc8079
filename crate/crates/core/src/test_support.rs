//! Support code for the test suites: random instance generators and slow
//! independent oracles that the fast paths are checked against. Not part of
//! the public API surface.

use rand::Rng;

use crate::cmdp::{
    expected_costs, expected_reward, occupancy_from_policy, LoopFreeCmdp, OccupancyMeasure,
    Policy, Topology,
};
use crate::rng::{stream, Stream};

/// A random layered CMDP with strictly positive transition probabilities.
pub fn random_layered_cmdp(
    seed: u64,
    layers: &[usize],
    actions: usize,
    thresholds: Vec<f64>,
) -> LoopFreeCmdp {
    let topo = Topology::new(layers, actions).unwrap();
    let mut rng = stream(seed, Stream::Generator);
    let mut tr = vec![0.0; topo.num_triples()];
    for (k, off, a, _) in topo.pairs() {
        let block = topo.triple_block(k, off, a);
        let n = block.len();
        let mut w: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() + 0.05).collect();
        let s: f64 = w.iter().sum();
        for v in &mut w {
            *v /= s;
        }
        let partial: f64 = w[..n - 1].iter().sum();
        w[n - 1] = 1.0 - partial;
        for (i, t) in block.enumerate() {
            tr[t] = w[i];
        }
    }
    LoopFreeCmdp::new(layers, actions, tr, thresholds).unwrap()
}

/// A random stochastic policy bounded away from determinism.
pub fn random_policy(seed: u64, topo: &Topology) -> Policy {
    let mut rng = stream(seed, Stream::Learner);
    let actions = topo.num_actions();
    let mut probs = vec![0.0; topo.num_pairs()];
    for x in 0..topo.num_states() - 1 {
        let mut w: Vec<f64> = (0..actions).map(|_| rng.gen::<f64>() + 0.02).collect();
        let s: f64 = w.iter().sum();
        for v in &mut w {
            *v /= s;
        }
        let partial: f64 = w[..actions - 1].iter().sum();
        w[actions - 1] = 1.0 - partial;
        probs[x * actions..(x + 1) * actions].copy_from_slice(&w);
    }
    Policy::new(topo, probs).unwrap()
}

/// The canonical two-action fixture: one binding constraint at the root.
/// Returns `(cmdp, rewards, costs)`; thresholds on the instance are 0.5, the
/// optimum is 0.5 and the feasibility margin is 0.5.
pub fn two_action_instance() -> (LoopFreeCmdp, Vec<f64>, Vec<f64>) {
    let cmdp = LoopFreeCmdp::new(&[1, 1, 1], 2, vec![1.0; 4], vec![0.5]).unwrap();
    let r = vec![1.0, 0.0, 0.0, 0.0];
    let g = vec![1.0, 0.0, 0.0, 0.0];
    (cmdp, r, g)
}

/// All deterministic policies of a topology (action per non-terminal state).
pub fn enumerate_det_policies(topo: &Topology) -> Vec<Policy> {
    let states = topo.num_states() - 1;
    let actions = topo.num_actions();
    let total = actions.checked_pow(states as u32).expect("policy space too large");
    let mut out = Vec::with_capacity(total);
    for code in 0..total {
        let mut probs = vec![0.0; topo.num_pairs()];
        let mut c = code;
        for x in 0..states {
            let a = c % actions;
            c /= actions;
            probs[x * actions + a] = 1.0;
        }
        out.push(Policy::new(topo, probs).unwrap());
    }
    out
}

/// Exhaustive oracle for `max r^T q` over valid occupancies subject to
/// `G^T q <= alpha`, for `m <= 2`.
///
/// The vertex set of the occupancy polytope is the set of deterministic
/// policies; the constrained optimum is attained at a feasible vertex, on a
/// segment between two vertices with one constraint tight, or (m = 2) at a
/// combination of three vertices with both constraints tight. All candidate
/// points are feasible by construction, so the maximum over them equals the
/// optimum. Returns `None` when no candidate exists (infeasible program).
pub fn oracle_constrained_max(
    cmdp: &LoopFreeCmdp,
    r: &[f64],
    g: &[f64],
    alpha: &[f64],
) -> Option<f64> {
    let topo = cmdp.topo();
    let m = alpha.len();
    assert!(m <= 2, "oracle supports at most two constraints");
    let tol = 1e-9;

    let vertices: Vec<OccupancyMeasure> = enumerate_det_policies(topo)
        .iter()
        .map(|pi| occupancy_from_policy(cmdp, pi))
        .collect();
    let rewards: Vec<f64> = vertices
        .iter()
        .map(|q| expected_reward(topo, q, r))
        .collect();
    let costs: Vec<Vec<f64>> = vertices
        .iter()
        .map(|q| expected_costs(topo, q, g, m))
        .collect();

    let feasible = |c: &[f64]| c.iter().zip(alpha).all(|(v, a)| *v <= a + tol);
    let mut best: Option<f64> = None;
    let mut push = |v: f64| {
        best = Some(match best {
            None => v,
            Some(b) => b.max(v),
        })
    };

    for (i, c) in costs.iter().enumerate() {
        if feasible(c) {
            push(rewards[i]);
        }
    }

    // segments with one constraint tight
    for i in 0..vertices.len() {
        for j in (i + 1)..vertices.len() {
            for ci in 0..m {
                let (a, b) = (costs[i][ci], costs[j][ci]);
                if (a - b).abs() < tol {
                    continue;
                }
                let theta = (alpha[ci] - b) / (a - b);
                if !(0.0..=1.0).contains(&theta) {
                    continue;
                }
                let cost_mix: Vec<f64> = (0..m)
                    .map(|cj| theta * costs[i][cj] + (1.0 - theta) * costs[j][cj])
                    .collect();
                if feasible(&cost_mix) {
                    push(theta * rewards[i] + (1.0 - theta) * rewards[j]);
                }
            }
        }
    }

    // triples with both constraints tight (m = 2 only)
    if m == 2 {
        for i in 0..vertices.len() {
            for j in (i + 1)..vertices.len() {
                for k in (j + 1)..vertices.len() {
                    // solve mu_i + mu_j + mu_k = 1, costs both tight
                    let a = [
                        [1.0, 1.0, 1.0],
                        [costs[i][0], costs[j][0], costs[k][0]],
                        [costs[i][1], costs[j][1], costs[k][1]],
                    ];
                    let b = [1.0, alpha[0], alpha[1]];
                    if let Some(mu) = solve3(a, b) {
                        if mu.iter().all(|&v| v >= -tol) {
                            push(mu[0] * rewards[i] + mu[1] * rewards[j] + mu[2] * rewards[k]);
                        }
                    }
                }
            }
        }
    }

    best
}

/// 3x3 linear solve by Gaussian elimination with partial pivoting.
fn solve3(mut a: [[f64; 3]; 3], mut b: [f64; 3]) -> Option<[f64; 3]> {
    for col in 0..3 {
        let mut piv = col;
        for row in col + 1..3 {
            if a[row][col].abs() > a[piv][col].abs() {
                piv = row;
            }
        }
        if a[piv][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..3 {
            let f = a[row][col] / a[col][col];
            for c2 in col..3 {
                a[row][c2] -= f * a[col][c2];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; 3];
    for row in (0..3).rev() {
        let mut acc = b[row];
        for c2 in row + 1..3 {
            acc -= a[row][c2] * x[c2];
        }
        x[row] = acc / a[row][row];
    }
    Some(x)
}

/// L1 distance from a pair-marginal occupancy to the set of optimal
/// solutions of the constrained program (degenerate optima make the
/// distance to any single optimal vertex meaningless).
pub fn l1_distance_to_optimal_set(
    cmdp: &LoopFreeCmdp,
    r: &[f64],
    g: &[f64],
    alpha: &[f64],
    q2_hat: &[f64],
) -> f64 {
    use crate::occupancy_lp::{solve_opt, PolytopeSpec, DEFAULT_TOL};
    use crate::simplex::{LinearProgram, Relation};

    let topo = cmdp.topo();
    let poly = PolytopeSpec::Exact { cmdp };
    let opt = solve_opt(&poly, r, g, alpha, DEFAULT_TOL).unwrap();
    assert!(opt.is_optimal(), "distance needs a feasible program");

    let n = topo.num_pairs();
    let m = alpha.len();
    // vars: q (pairs) then d (pairs); minimize sum d with d >= |q - q2_hat|
    let mut lp = LinearProgram::new(2 * n);
    for k in 0..topo.horizon() {
        let coeffs: Vec<(usize, f64)> = (0..topo.layer_size(k))
            .flat_map(|off| {
                let x = topo.state_id(k, off);
                (0..topo.num_actions()).map(move |a| (topo.pair(x, a), 1.0))
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
    for i in 0..m {
        let coeffs: Vec<(usize, f64)> = (0..n)
            .filter(|p| g[p * m + i] != 0.0)
            .map(|p| (p, g[p * m + i]))
            .collect();
        lp.add_row(coeffs, Relation::Le, alpha[i]).unwrap();
    }
    // stay on the optimal face
    let coeffs: Vec<(usize, f64)> = (0..n).filter(|p| r[*p] != 0.0).map(|p| (p, r[p])).collect();
    lp.add_row(coeffs, Relation::Ge, opt.objective - 1e-7).unwrap();
    for p in 0..n {
        lp.add_row(vec![(p, 1.0), (n + p, -1.0)], Relation::Le, q2_hat[p])
            .unwrap();
        lp.add_row(vec![(p, -1.0), (n + p, -1.0)], Relation::Le, -q2_hat[p])
            .unwrap();
        lp.set_objective(n + p, -1.0);
    }
    let sol = lp.solve(DEFAULT_TOL).unwrap();
    -sol.objective
}

/// Least-squares slope of `log(max(y, 1))` against `log(t)` for
/// `t in [lo, hi]` (1-based episode indices into `y`).
pub fn loglog_slope(y: &[f64], lo: usize, hi: usize) -> f64 {
    let mut n = 0.0;
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for t in lo..=hi.min(y.len()) {
        let x = (t as f64).ln();
        let v = y[t - 1].max(1.0).ln();
        n += 1.0;
        sx += x;
        sy += v;
        sxx += x * x;
        sxy += x * v;
    }
    (n * sxy - sx * sy) / (n * sxx - sx * sx)
}
