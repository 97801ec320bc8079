//! Loop-free episodic CMDP instances and the objects living on them.
//!
//! States are partitioned into layers `X_0 .. X_L` with `|X_0| = |X_L| = 1`;
//! transitions only move one layer forward. An episode is `L` steps: the
//! state-action pairs of layers `0 .. L-1` carry rewards and costs, the
//! terminal state carries nothing.
//!
//! [`OccupancyMeasure`] is the probability vector over layer-adjacent
//! `(x, a, x')` triples induced by a transition function and a policy; it is
//! the decision variable of every linear program in this crate and encodes a
//! policy via the induced-policy map.

use std::fmt;
use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use thiserror::Error;

/// Default tolerance for structural validation of occupancy measures.
pub const STRUCTURAL_TOL: f64 = 1e-9;

/// Tolerance for distribution rows (transition functions, policies).
pub const ROW_SUM_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum CmdpError {
    #[error("layer structure invalid: {0}")]
    LayerStructure(String),
    #[error("transition row ({state}, {action}) sums to {sum}, expected 1")]
    RowSum { state: usize, action: usize, sum: f64 },
    #[error("transition entry out of range or not layer-adjacent: {0}")]
    Structural(String),
    #[error("threshold {index} = {value} outside [0, {horizon}]")]
    Threshold { index: usize, value: f64, horizon: usize },
    #[error("policy row for state {state} sums to {sum}, expected 1")]
    PolicyRow { state: usize, sum: f64 },
    #[error("negative entry at {0}")]
    Negative(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Layer structure and index arithmetic shared by everything that lives on
/// one CMDP shape. Learners hold a [`Topology`] (plus thresholds), never the
/// true transition function.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    layer_sizes: Vec<usize>,
    layer_offsets: Vec<usize>,
    triple_offsets: Vec<usize>,
    num_actions: usize,
    num_states: usize,
    num_pairs: usize,
    num_triples: usize,
}

impl Topology {
    pub fn new(layer_sizes: &[usize], num_actions: usize) -> Result<Self, CmdpError> {
        if layer_sizes.len() < 2 {
            return Err(CmdpError::LayerStructure(
                "need at least layers X_0 and X_1".into(),
            ));
        }
        if layer_sizes[0] != 1 || *layer_sizes.last().unwrap() != 1 {
            return Err(CmdpError::LayerStructure(
                "first and last layers must be singletons".into(),
            ));
        }
        if layer_sizes.iter().any(|&s| s == 0) {
            return Err(CmdpError::LayerStructure("empty layer".into()));
        }
        if num_actions == 0 {
            return Err(CmdpError::LayerStructure("need at least one action".into()));
        }
        let mut layer_offsets = Vec::with_capacity(layer_sizes.len() + 1);
        let mut acc = 0usize;
        for &s in layer_sizes {
            layer_offsets.push(acc);
            acc += s;
        }
        layer_offsets.push(acc);
        let num_states = acc;
        let horizon = layer_sizes.len() - 1;
        let mut triple_offsets = Vec::with_capacity(horizon + 1);
        let mut tacc = 0usize;
        for k in 0..horizon {
            triple_offsets.push(tacc);
            tacc += layer_sizes[k] * num_actions * layer_sizes[k + 1];
        }
        triple_offsets.push(tacc);
        let num_pairs = (num_states - 1) * num_actions;
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            layer_offsets,
            triple_offsets,
            num_actions,
            num_states,
            num_pairs,
            num_triples: tacc,
        })
    }

    /// Horizon `L`: number of reward-bearing steps per episode.
    pub fn horizon(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn layer_size(&self, k: usize) -> usize {
        self.layer_sizes[k]
    }

    /// Global id of the `off`-th state of layer `k`.
    pub fn state_id(&self, k: usize, off: usize) -> usize {
        debug_assert!(off < self.layer_sizes[k]);
        self.layer_offsets[k] + off
    }

    /// Layer containing global state `x`.
    pub fn layer_of(&self, x: usize) -> usize {
        debug_assert!(x < self.num_states);
        match self.layer_offsets.binary_search(&x) {
            Ok(k) if k < self.layer_sizes.len() => k,
            Ok(k) => k - 1,
            Err(k) => k - 1,
        }
    }

    /// Number of `(x, a)` pairs over non-terminal states.
    pub fn num_pairs(&self) -> usize {
        self.num_pairs
    }

    /// Pair id for a non-terminal global state and an action.
    pub fn pair(&self, x: usize, a: usize) -> usize {
        debug_assert!(x < self.num_states - 1 && a < self.num_actions);
        x * self.num_actions + a
    }

    pub fn num_triples(&self) -> usize {
        self.num_triples
    }

    /// Flat index of the triple `(x, a, x')` with `x` the `off`-th state of
    /// layer `k` and `x'` the `off'`-th state of layer `k+1`.
    pub fn triple(&self, k: usize, off: usize, a: usize, off_next: usize) -> usize {
        debug_assert!(k < self.horizon());
        debug_assert!(off < self.layer_sizes[k]);
        debug_assert!(a < self.num_actions);
        debug_assert!(off_next < self.layer_sizes[k + 1]);
        self.triple_offsets[k]
            + (off * self.num_actions + a) * self.layer_sizes[k + 1]
            + off_next
    }

    /// Range of triple indices sharing the `(k, off, a)` prefix.
    pub fn triple_block(&self, k: usize, off: usize, a: usize) -> std::ops::Range<usize> {
        let start = self.triple(k, off, a, 0);
        start..start + self.layer_sizes[k + 1]
    }

    /// Iterates `(k, off, a, pair_id)` over all non-terminal pairs.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize, usize, usize)> + '_ {
        (0..self.horizon()).flat_map(move |k| {
            (0..self.layer_sizes[k]).flat_map(move |off| {
                (0..self.num_actions).map(move |a| {
                    let pair = self.pair(self.state_id(k, off), a);
                    (k, off, a, pair)
                })
            })
        })
    }
}

/// A loop-free episodic CMDP: topology plus the ground-truth transition
/// function and the constraint thresholds. Reward and cost *means* belong to
/// the adversary, not the instance.
#[derive(Debug, Clone)]
pub struct LoopFreeCmdp {
    topo: Arc<Topology>,
    /// Transition probabilities, one entry per triple.
    transition: Vec<f64>,
    num_constraints: usize,
    thresholds: Vec<f64>,
}

impl LoopFreeCmdp {
    pub fn new(
        layer_sizes: &[usize],
        num_actions: usize,
        transition: Vec<f64>,
        thresholds: Vec<f64>,
    ) -> Result<Self, CmdpError> {
        let topo = Topology::new(layer_sizes, num_actions)?;
        if transition.len() != topo.num_triples() {
            return Err(CmdpError::Dimension(format!(
                "transition has {} entries, topology needs {}",
                transition.len(),
                topo.num_triples()
            )));
        }
        for (i, &p) in transition.iter().enumerate() {
            if !(0.0..=1.0).contains(&p) {
                return Err(CmdpError::Structural(format!(
                    "transition entry {i} = {p} outside [0,1]"
                )));
            }
        }
        for k in 0..topo.horizon() {
            for off in 0..topo.layer_size(k) {
                for a in 0..num_actions {
                    let sum: f64 = transition[topo.triple_block(k, off, a)].iter().sum();
                    if (sum - 1.0).abs() > ROW_SUM_TOL {
                        return Err(CmdpError::RowSum {
                            state: topo.state_id(k, off),
                            action: a,
                            sum,
                        });
                    }
                }
            }
        }
        if thresholds.is_empty() {
            return Err(CmdpError::Dimension("need at least one constraint".into()));
        }
        let horizon = topo.horizon();
        for (i, &alpha) in thresholds.iter().enumerate() {
            if !(0.0..=horizon as f64).contains(&alpha) {
                return Err(CmdpError::Threshold {
                    index: i,
                    value: alpha,
                    horizon,
                });
            }
        }
        Ok(Self {
            topo: Arc::new(topo),
            transition,
            num_constraints: thresholds.len(),
            thresholds,
        })
    }

    pub fn topology(&self) -> Arc<Topology> {
        Arc::clone(&self.topo)
    }

    pub fn topo(&self) -> &Topology {
        &self.topo
    }

    pub fn horizon(&self) -> usize {
        self.topo.horizon()
    }

    pub fn num_actions(&self) -> usize {
        self.topo.num_actions()
    }

    pub fn num_constraints(&self) -> usize {
        self.num_constraints
    }

    pub fn thresholds(&self) -> &[f64] {
        &self.thresholds
    }

    /// `P(x'|x, a)` by triple index.
    pub fn prob(&self, triple: usize) -> f64 {
        self.transition[triple]
    }

    pub fn transition(&self) -> &[f64] {
        &self.transition
    }

    /// Converts a generic horizon-`L` MDP into a loop-free one by duplicating
    /// the state space once per layer. Middle layers hold every original
    /// state; the last step collapses into an artificial terminal state.
    pub fn from_general(
        num_states: usize,
        num_actions: usize,
        transition: &dyn Fn(usize, usize, usize) -> f64,
        horizon: usize,
        initial_state: usize,
        thresholds: Vec<f64>,
    ) -> Result<Self, CmdpError> {
        if horizon < 1 || initial_state >= num_states {
            return Err(CmdpError::LayerStructure("bad horizon or initial state".into()));
        }
        let mut layers = vec![1usize];
        for _ in 1..horizon {
            layers.push(num_states);
        }
        layers.push(1);
        let topo = Topology::new(&layers, num_actions)?;
        let mut tr = vec![0.0; topo.num_triples()];
        for k in 0..horizon {
            for off in 0..layers[k] {
                let orig = if k == 0 { initial_state } else { off };
                for a in 0..num_actions {
                    if k + 1 == horizon {
                        // collapse into the terminal state
                        tr[topo.triple(k, off, a, 0)] = 1.0;
                    } else {
                        for off_next in 0..layers[k + 1] {
                            tr[topo.triple(k, off, a, off_next)] = transition(orig, a, off_next);
                        }
                    }
                }
            }
        }
        Self::new(&layers, num_actions, tr, thresholds)
    }
}

/// A stochastic Markov policy: a distribution over actions per non-terminal
/// state.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    probs: Vec<f64>,
}

impl Policy {
    pub fn new(topo: &Topology, probs: Vec<f64>) -> Result<Self, CmdpError> {
        if probs.len() != topo.num_pairs() {
            return Err(CmdpError::Dimension(format!(
                "policy has {} entries, topology needs {}",
                probs.len(),
                topo.num_pairs()
            )));
        }
        for (i, &p) in probs.iter().enumerate() {
            if p < 0.0 {
                return Err(CmdpError::Negative(format!("policy entry {i} = {p}")));
            }
        }
        let actions = topo.num_actions();
        for x in 0..topo.num_states() - 1 {
            let sum: f64 = probs[x * actions..(x + 1) * actions].iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(CmdpError::PolicyRow { state: x, sum });
            }
        }
        Ok(Self { probs })
    }

    pub fn uniform(topo: &Topology) -> Self {
        let p = 1.0 / topo.num_actions() as f64;
        Self {
            probs: vec![p; topo.num_pairs()],
        }
    }

    pub fn prob(&self, pair: usize) -> f64 {
        self.probs[pair]
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Samples an action for global state `x`.
    pub fn sample_action<R: Rng>(&self, topo: &Topology, x: usize, rng: &mut R) -> usize {
        let actions = topo.num_actions();
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for a in 0..actions {
            acc += self.probs[x * actions + a];
            if u < acc {
                return a;
            }
        }
        actions - 1
    }
}

/// Which family of occupancy constraints a residual belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstraintFamily {
    LayerMass,
    FlowConservation,
    Nonnegativity,
}

impl fmt::Display for ConstraintFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConstraintFamily::LayerMass => write!(f, "layer-mass"),
            ConstraintFamily::FlowConservation => write!(f, "flow-conservation"),
            ConstraintFamily::Nonnegativity => write!(f, "nonnegativity"),
        }
    }
}

/// Outcome of structural validation of an occupancy measure: the worst
/// residual per family and the single worst offender overall.
#[derive(Debug, Clone)]
pub struct ValidationReport {
    pub ok: bool,
    pub tol: f64,
    pub worst_family: ConstraintFamily,
    pub worst_residual: f64,
    pub worst_location: String,
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.ok {
            write!(f, "valid (worst residual {:.3e})", self.worst_residual)
        } else {
            write!(
                f,
                "invalid: {} residual {:.3e} at {}",
                self.worst_family, self.worst_residual, self.worst_location
            )
        }
    }
}

/// Occupancy measure over layer-adjacent `(x, a, x')` triples.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyMeasure {
    q3: Vec<f64>,
}

impl OccupancyMeasure {
    pub fn from_raw(topo: &Topology, q3: Vec<f64>) -> Result<Self, CmdpError> {
        if q3.len() != topo.num_triples() {
            return Err(CmdpError::Dimension(format!(
                "occupancy has {} entries, topology needs {}",
                q3.len(),
                topo.num_triples()
            )));
        }
        Ok(Self { q3 })
    }

    /// Builds an occupancy from sparse `(k, x, a, x', value)` entries with
    /// global state ids; rejects triples that are not layer-adjacent.
    pub fn from_entries(
        topo: &Topology,
        entries: &[(usize, usize, usize, usize, f64)],
    ) -> Result<Self, CmdpError> {
        let mut q3 = vec![0.0; topo.num_triples()];
        for &(k, x, a, xp, v) in entries {
            if k >= topo.horizon() {
                return Err(CmdpError::Structural(format!("layer {k} out of range")));
            }
            if a >= topo.num_actions() {
                return Err(CmdpError::Structural(format!("action {a} out of range")));
            }
            if x >= topo.num_states() || topo.layer_of(x) != k {
                return Err(CmdpError::Structural(format!(
                    "state {x} is not in layer {k}"
                )));
            }
            if xp >= topo.num_states() || topo.layer_of(xp) != k + 1 {
                return Err(CmdpError::Structural(format!(
                    "state {xp} is not in layer {} (triple not layer-adjacent)",
                    k + 1
                )));
            }
            let off = x - topo.state_id(k, 0);
            let off_next = xp - topo.state_id(k + 1, 0);
            q3[topo.triple(k, off, a, off_next)] = v;
        }
        Ok(Self { q3 })
    }

    pub fn raw(&self) -> &[f64] {
        &self.q3
    }

    pub fn value(&self, triple: usize) -> f64 {
        self.q3[triple]
    }

    /// Marginal over pairs: `q(x, a) = sum_{x'} q(x, a, x')`.
    pub fn q2(&self, topo: &Topology) -> Vec<f64> {
        let mut out = vec![0.0; topo.num_pairs()];
        for (k, off, a, pair) in topo.pairs() {
            out[pair] = self.q3[topo.triple_block(k, off, a)].iter().sum();
        }
        out
    }

    /// Marginal over states: `q(x) = sum_a q(x, a)`.
    pub fn q1(&self, topo: &Topology) -> Vec<f64> {
        let q2 = self.q2(topo);
        let actions = topo.num_actions();
        (0..topo.num_states() - 1)
            .map(|x| q2[x * actions..(x + 1) * actions].iter().sum())
            .collect()
    }

    /// Checks the three occupancy conditions (unit mass per layer, flow
    /// conservation at internal states, nonnegativity) within `tol`.
    /// A negative entry is reported ahead of the mass/flow damage it causes.
    pub fn validate(&self, topo: &Topology, tol: f64) -> ValidationReport {
        let mut neg = (0.0f64, String::from("-"));
        for (i, &v) in self.q3.iter().enumerate() {
            if v < 0.0 && -v > neg.0 {
                neg = (-v, format!("triple {i}"));
            }
        }
        if neg.0 > tol {
            return ValidationReport {
                ok: false,
                tol,
                worst_family: ConstraintFamily::Nonnegativity,
                worst_residual: neg.0,
                worst_location: neg.1,
            };
        }

        let mut worst = (ConstraintFamily::Nonnegativity, neg.0, neg.1);
        let mut consider = |family, residual: f64, location: String| {
            if residual > worst.1 {
                worst = (family, residual, location);
            }
        };
        for k in 0..topo.horizon() {
            let mut mass = 0.0;
            for off in 0..topo.layer_size(k) {
                for a in 0..topo.num_actions() {
                    mass += self.q3[topo.triple_block(k, off, a)]
                        .iter()
                        .sum::<f64>();
                }
            }
            consider(
                ConstraintFamily::LayerMass,
                (mass - 1.0).abs(),
                format!("layer {k}"),
            );
        }
        for k in 1..topo.horizon() {
            for off in 0..topo.layer_size(k) {
                let mut out = 0.0;
                for a in 0..topo.num_actions() {
                    out += self.q3[topo.triple_block(k, off, a)].iter().sum::<f64>();
                }
                let mut inflow = 0.0;
                for prev_off in 0..topo.layer_size(k - 1) {
                    for a in 0..topo.num_actions() {
                        inflow += self.q3[topo.triple(k - 1, prev_off, a, off)];
                    }
                }
                consider(
                    ConstraintFamily::FlowConservation,
                    (out - inflow).abs(),
                    format!("state {}", topo.state_id(k, off)),
                );
            }
        }
        ValidationReport {
            ok: worst.1 <= tol,
            tol,
            worst_family: worst.0,
            worst_residual: worst.1,
            worst_location: worst.2,
        }
    }
}

/// Occupancy induced by a transition function and a policy, by forward
/// dynamic programming over the layers.
pub fn occupancy_from_policy(cmdp: &LoopFreeCmdp, policy: &Policy) -> OccupancyMeasure {
    occupancy_from_transition_policy(cmdp.topo(), &cmdp.transition, policy)
}

/// Same as [`occupancy_from_policy`] for an explicit transition vector
/// (triple-indexed). Used for roundtrips through induced transitions.
pub fn occupancy_from_transition_policy(
    topo: &Topology,
    transition: &[f64],
    policy: &Policy,
) -> OccupancyMeasure {
    let mut q3 = vec![0.0; topo.num_triples()];
    let mut reach = vec![0.0; topo.num_states()];
    reach[0] = 1.0;
    for k in 0..topo.horizon() {
        for off in 0..topo.layer_size(k) {
            let x = topo.state_id(k, off);
            if reach[x] == 0.0 {
                continue;
            }
            for a in 0..topo.num_actions() {
                let mass = reach[x] * policy.prob(topo.pair(x, a));
                if mass == 0.0 {
                    continue;
                }
                let block = topo.triple_block(k, off, a);
                for (off_next, t) in block.enumerate() {
                    let v = mass * transition[t];
                    q3[t] = v;
                    reach[topo.state_id(k + 1, off_next)] += v;
                }
            }
        }
    }
    OccupancyMeasure { q3 }
}

/// Policy induced by an occupancy measure; states with zero mass fall back
/// to the uniform action distribution.
pub fn policy_from_occupancy(topo: &Topology, q: &OccupancyMeasure) -> Policy {
    let q2 = q.q2(topo);
    let actions = topo.num_actions();
    let uniform = 1.0 / actions as f64;
    let mut probs = vec![0.0; topo.num_pairs()];
    for x in 0..topo.num_states() - 1 {
        let mass: f64 = q2[x * actions..(x + 1) * actions].iter().sum();
        for a in 0..actions {
            probs[x * actions + a] = if mass > 0.0 {
                q2[x * actions + a] / mass
            } else {
                uniform
            };
        }
    }
    Policy { probs }
}

/// Transition function induced by an occupancy measure; pairs with zero mass
/// fall back to the uniform distribution over the next layer.
pub fn transition_from_occupancy(topo: &Topology, q: &OccupancyMeasure) -> Vec<f64> {
    let mut tr = vec![0.0; topo.num_triples()];
    for (k, off, a, _) in topo.pairs() {
        let block = topo.triple_block(k, off, a);
        let mass: f64 = q.q3[block.clone()].iter().sum();
        let next = topo.layer_size(k + 1);
        for (off_next, t) in block.enumerate() {
            tr[t] = if mass > 0.0 {
                q.q3[topo.triple(k, off, a, off_next)] / mass
            } else {
                1.0 / next as f64
            };
        }
    }
    tr
}

/// Bandit feedback from one episode: the visited path and the reward/cost
/// samples observed along it.
#[derive(Debug, Clone)]
pub struct EpisodeFeedback {
    /// `(global state, action)` per layer `0 .. L-1`.
    pub path: Vec<(usize, usize)>,
    /// Observed reward sample per step.
    pub rewards: Vec<f64>,
    /// Observed cost samples, `L x m`, step-major.
    pub costs: Vec<f64>,
    pub num_constraints: usize,
}

impl EpisodeFeedback {
    pub fn cost(&self, step: usize, constraint: usize) -> f64 {
        self.costs[step * self.num_constraints + constraint]
    }
}

/// Plays one episode. `reward_draw(pair, rng)` and `cost_draw(pair, i, rng)`
/// sample this episode's reward/cost realizations for a visited pair. Draw
/// order per step is fixed (action, reward, costs, next state) so a given
/// rng stream always yields the same feedback.
pub fn sample_episode<R: Rng>(
    cmdp: &LoopFreeCmdp,
    policy: &Policy,
    reward_draw: &mut dyn FnMut(usize, &mut R) -> f64,
    cost_draw: &mut dyn FnMut(usize, usize, &mut R) -> f64,
    rng: &mut R,
) -> EpisodeFeedback {
    let topo = cmdp.topo();
    let horizon = topo.horizon();
    let m = cmdp.num_constraints();
    let mut path = Vec::with_capacity(horizon);
    let mut rewards = Vec::with_capacity(horizon);
    let mut costs = Vec::with_capacity(horizon * m);
    let mut off = 0usize;
    for k in 0..horizon {
        let x = topo.state_id(k, off);
        let a = policy.sample_action(topo, x, rng);
        let pair = topo.pair(x, a);
        path.push((x, a));
        rewards.push(reward_draw(pair, rng));
        for i in 0..m {
            costs.push(cost_draw(pair, i, rng));
        }
        let u: f64 = rng.gen();
        let block = topo.triple_block(k, off, a);
        let mut acc = 0.0;
        let mut next = topo.layer_size(k + 1) - 1;
        for (off_next, t) in block.enumerate() {
            acc += cmdp.transition[t];
            if u < acc {
                next = off_next;
                break;
            }
        }
        off = next;
    }
    EpisodeFeedback {
        path,
        rewards,
        costs,
        num_constraints: m,
    }
}

/// `r^T q` through the pair marginal.
pub fn expected_reward(topo: &Topology, q: &OccupancyMeasure, r: &[f64]) -> f64 {
    q.q2(topo).iter().zip(r).map(|(a, b)| a * b).sum()
}

/// `G^T q` per constraint; `g` is pair-major with stride `m`.
pub fn expected_costs(topo: &Topology, q: &OccupancyMeasure, g: &[f64], m: usize) -> Vec<f64> {
    let q2 = q.q2(topo);
    let mut out = vec![0.0; m];
    for (pair, qv) in q2.iter().enumerate() {
        for i in 0..m {
            out[i] += qv * g[pair * m + i];
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Instance file format
// ---------------------------------------------------------------------------
//
// Plain-text key-value format:
//
//   layers 1 2 2 1
//   actions 2
//   alpha 0.5 0.7
//   t <layer> <state> <action> <next_state> <prob>   (one row per triple; states are global ids)
//
// Lines starting with '#' are comments. Rows violating layer adjacency are
// rejected.

impl LoopFreeCmdp {
    pub fn parse(text: &str) -> Result<Self, CmdpError> {
        let mut layers: Option<Vec<usize>> = None;
        let mut actions: Option<usize> = None;
        let mut alpha: Option<Vec<f64>> = None;
        let mut rows: Vec<(usize, usize, usize, usize, f64, usize)> = Vec::new();

        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut it = line.split_whitespace();
            let key = it.next().unwrap();
            let err = |message: String| CmdpError::Parse {
                line: lineno + 1,
                message,
            };
            match key {
                "layers" => {
                    let v: Result<Vec<usize>, _> = it.map(|s| s.parse()).collect();
                    layers = Some(v.map_err(|e| err(format!("bad layer size: {e}")))?);
                }
                "actions" => {
                    actions = Some(
                        it.next()
                            .ok_or_else(|| err("missing action count".into()))?
                            .parse()
                            .map_err(|e| err(format!("bad action count: {e}")))?,
                    );
                }
                "alpha" => {
                    let v: Result<Vec<f64>, _> = it.map(|s| s.parse()).collect();
                    alpha = Some(v.map_err(|e| err(format!("bad threshold: {e}")))?);
                }
                "t" => {
                    let mut next_num = |name: &str| -> Result<f64, CmdpError> {
                        it.next()
                            .ok_or_else(|| CmdpError::Parse {
                                line: lineno + 1,
                                message: format!("missing {name}"),
                            })?
                            .parse()
                            .map_err(|e| CmdpError::Parse {
                                line: lineno + 1,
                                message: format!("bad {name}: {e}"),
                            })
                    };
                    let k = next_num("layer")? as usize;
                    let x = next_num("state")? as usize;
                    let a = next_num("action")? as usize;
                    let xp = next_num("next state")? as usize;
                    let p = next_num("probability")?;
                    rows.push((k, x, a, xp, p, lineno + 1));
                }
                other => return Err(err(format!("unknown key '{other}'"))),
            }
        }

        let layers = layers.ok_or(CmdpError::Parse {
            line: 0,
            message: "missing 'layers'".into(),
        })?;
        let actions = actions.ok_or(CmdpError::Parse {
            line: 0,
            message: "missing 'actions'".into(),
        })?;
        let alpha = alpha.ok_or(CmdpError::Parse {
            line: 0,
            message: "missing 'alpha'".into(),
        })?;

        let topo = Topology::new(&layers, actions)?;
        let mut transition = vec![0.0; topo.num_triples()];
        for (k, x, a, xp, p, line) in rows {
            if k >= topo.horizon()
                || x >= topo.num_states()
                || xp >= topo.num_states()
                || a >= actions
                || topo.layer_of(x) != k
                || topo.layer_of(xp) != k + 1
            {
                return Err(CmdpError::Parse {
                    line,
                    message: format!(
                        "transition row ({k}, {x}, {a}, {xp}) violates layer adjacency"
                    ),
                });
            }
            let off = x - topo.state_id(k, 0);
            let off_next = xp - topo.state_id(k + 1, 0);
            transition[topo.triple(k, off, a, off_next)] = p;
        }
        Self::new(&layers, actions, transition, alpha)
    }

    pub fn load(path: &Path) -> Result<Self, CmdpError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        use std::fmt::Write;
        let topo = self.topo();
        let mut out = String::new();
        let sizes: Vec<String> = topo.layer_sizes().iter().map(|s| s.to_string()).collect();
        writeln!(out, "layers {}", sizes.join(" ")).unwrap();
        writeln!(out, "actions {}", topo.num_actions()).unwrap();
        let alphas: Vec<String> = self.thresholds.iter().map(|a| a.to_string()).collect();
        writeln!(out, "alpha {}", alphas.join(" ")).unwrap();
        for k in 0..topo.horizon() {
            for off in 0..topo.layer_size(k) {
                for a in 0..topo.num_actions() {
                    for off_next in 0..topo.layer_size(k + 1) {
                        let p = self.transition[topo.triple(k, off, a, off_next)];
                        if p != 0.0 {
                            writeln!(
                                out,
                                "t {} {} {} {} {}",
                                k,
                                topo.state_id(k, off),
                                a,
                                topo.state_id(k + 1, off_next),
                                p
                            )
                            .unwrap();
                        }
                    }
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};
    use rand::Rng;

    /// Single-action chain: layers [1, 1, 1], the only triple per layer has
    /// probability 1.
    pub fn chain() -> LoopFreeCmdp {
        LoopFreeCmdp::new(&[1, 1, 1], 1, vec![1.0, 1.0], vec![1.0]).unwrap()
    }

    /// Two actions at the root, deterministic transitions, L = 2.
    pub fn two_action() -> LoopFreeCmdp {
        LoopFreeCmdp::new(&[1, 1, 1], 2, vec![1.0, 1.0, 1.0, 1.0], vec![0.5]).unwrap()
    }

    fn random_cmdp(seed: u64, layers: &[usize], actions: usize) -> LoopFreeCmdp {
        let topo = Topology::new(layers, actions).unwrap();
        let mut rng = stream(seed, Stream::Generator);
        let mut tr = vec![0.0; topo.num_triples()];
        for (k, off, a, _) in topo.pairs() {
            let block = topo.triple_block(k, off, a);
            let n = block.len();
            let mut weights: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() + 0.05).collect();
            let sum: f64 = weights.iter().sum();
            for w in &mut weights {
                *w /= sum;
            }
            // re-normalize exactly: push rounding into the last entry
            let partial: f64 = weights[..n - 1].iter().sum();
            weights[n - 1] = 1.0 - partial;
            for (i, t) in block.enumerate() {
                tr[t] = weights[i];
            }
        }
        LoopFreeCmdp::new(layers, actions, tr, vec![1.0]).unwrap()
    }

    fn random_policy(seed: u64, topo: &Topology) -> Policy {
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

    #[test]
    fn uniform_policy_occupancy_is_valid() {
        for seed in 0..5 {
            let cmdp = random_cmdp(seed, &[1, 3, 2, 1], 2);
            let q = occupancy_from_policy(&cmdp, &Policy::uniform(cmdp.topo()));
            let rep = q.validate(cmdp.topo(), STRUCTURAL_TOL);
            assert!(rep.ok, "{rep}");
        }
    }

    #[test]
    fn negated_entry_flags_nonnegativity() {
        let cmdp = random_cmdp(1, &[1, 2, 1], 2);
        let q = occupancy_from_policy(&cmdp, &Policy::uniform(cmdp.topo()));
        let mut bad = q.raw().to_vec();
        bad[1] = -bad[1];
        let q = OccupancyMeasure::from_raw(cmdp.topo(), bad).unwrap();
        let rep = q.validate(cmdp.topo(), 1e-9);
        assert!(!rep.ok);
        assert_eq!(rep.worst_family, ConstraintFamily::Nonnegativity);
    }

    #[test]
    fn scaled_occupancy_flags_layer_mass() {
        let cmdp = random_cmdp(2, &[1, 2, 1], 2);
        let q = occupancy_from_policy(&cmdp, &Policy::uniform(cmdp.topo()));
        let half: Vec<f64> = q.raw().iter().map(|v| 0.5 * v).collect();
        let q = OccupancyMeasure::from_raw(cmdp.topo(), half).unwrap();
        let rep = q.validate(cmdp.topo(), 1e-9);
        assert!(!rep.ok);
        assert_eq!(rep.worst_family, ConstraintFamily::LayerMass);
        assert!((rep.worst_residual - 0.5).abs() < 1e-12);
    }

    #[test]
    fn chain_occupancy_is_transition_row() {
        let cmdp = chain();
        let q = occupancy_from_policy(&cmdp, &Policy::uniform(cmdp.topo()));
        assert_eq!(q.raw(), &[1.0, 1.0]);
        assert_eq!(q.q1(cmdp.topo())[0], 1.0);
    }

    #[test]
    fn deterministic_policy_gives_indicator_occupancy() {
        let cmdp = two_action();
        let topo = cmdp.topo();
        let pi = Policy::new(topo, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let q = occupancy_from_policy(&cmdp, &pi);
        assert_eq!(q.value(topo.triple(0, 0, 0, 0)), 1.0);
        assert_eq!(q.value(topo.triple(0, 0, 1, 0)), 0.0);
        assert_eq!(q.value(topo.triple(1, 0, 1, 0)), 1.0);
    }

    #[test]
    fn split_root_occupancy() {
        let cmdp = two_action();
        let q = occupancy_from_policy(&cmdp, &Policy::uniform(cmdp.topo()));
        let q2 = q.q2(cmdp.topo());
        assert!((q2[0] - 0.5).abs() < 1e-15);
        assert!((q2[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn roundtrip_reproduces_occupancy() {
        for seed in 0..20 {
            let cmdp = random_cmdp(seed, &[1, 3, 4, 2, 1], 3);
            let topo = cmdp.topo();
            let pi = random_policy(seed + 100, topo);
            let q = occupancy_from_policy(&cmdp, &pi);
            let pi_back = policy_from_occupancy(topo, &q);
            let tr_back = transition_from_occupancy(topo, &q);
            let q_back = occupancy_from_transition_policy(topo, &tr_back, &pi_back);
            for (a, b) in q.raw().iter().zip(q_back.raw()) {
                assert!((a - b).abs() < 1e-9, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn zero_mass_state_falls_back_to_uniform() {
        let cmdp = LoopFreeCmdp::new(
            &[1, 2, 1],
            2,
            // root: both actions go to the first middle state
            vec![1.0, 0.0, 1.0, 0.0, 1.0, 1.0, 1.0, 1.0],
            vec![1.0],
        )
        .unwrap();
        let topo = cmdp.topo();
        let q = occupancy_from_policy(&cmdp, &Policy::uniform(topo));
        let pi = policy_from_occupancy(topo, &q);
        // second middle state (global id 2) is unreachable
        assert_eq!(pi.prob(topo.pair(2, 0)), 0.5);
        assert_eq!(pi.prob(topo.pair(2, 1)), 0.5);
    }

    #[test]
    fn deterministic_path_occupancy_gives_deterministic_policy() {
        let cmdp = two_action();
        let topo = cmdp.topo();
        let pi = Policy::new(topo, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let q = occupancy_from_policy(&cmdp, &pi);
        let back = policy_from_occupancy(topo, &q);
        assert_eq!(back.prob(0), 0.0);
        assert_eq!(back.prob(1), 1.0);
    }

    #[test]
    fn pair_mass_sums_to_horizon() {
        let cmdp = random_cmdp(9, &[1, 4, 3, 1], 2);
        let q = occupancy_from_policy(&cmdp, &random_policy(3, cmdp.topo()));
        let total: f64 = q.q2(cmdp.topo()).iter().sum();
        assert!((total - cmdp.horizon() as f64).abs() < 1e-12);
    }

    #[test]
    fn expected_reward_constant_vectors() {
        let cmdp = random_cmdp(4, &[1, 3, 1], 2);
        let q = occupancy_from_policy(&cmdp, &Policy::uniform(cmdp.topo()));
        let ones = vec![1.0; cmdp.topo().num_pairs()];
        let zeros = vec![0.0; cmdp.topo().num_pairs()];
        assert!((expected_reward(cmdp.topo(), &q, &ones) - cmdp.horizon() as f64).abs() < 1e-12);
        assert_eq!(expected_reward(cmdp.topo(), &q, &zeros), 0.0);
    }

    #[test]
    fn expected_reward_matches_triple_sum() {
        let cmdp = random_cmdp(5, &[1, 3, 2, 1], 2);
        let topo = cmdp.topo();
        let q = occupancy_from_policy(&cmdp, &random_policy(8, topo));
        let mut rng = stream(11, Stream::Generator);
        let r: Vec<f64> = (0..topo.num_pairs()).map(|_| rng.gen()).collect();
        // oracle: direct summation over every triple
        let mut direct = 0.0;
        for (k, off, a, pair) in topo.pairs() {
            for t in topo.triple_block(k, off, a) {
                direct += q.value(t) * r[pair];
            }
        }
        assert!((expected_reward(topo, &q, &r) - direct).abs() < 1e-12);
    }

    #[test]
    fn episode_sampling_is_seed_deterministic() {
        let cmdp = random_cmdp(6, &[1, 3, 2, 1], 2);
        let pi = random_policy(2, cmdp.topo());
        let sample = |seed| {
            let mut rng = stream(seed, Stream::Environment);
            sample_episode(
                &cmdp,
                &pi,
                &mut |pair, r: &mut rand_chacha::ChaCha20Rng| {
                    if r.gen::<f64>() < 0.3 + 0.01 * pair as f64 {
                        1.0
                    } else {
                        0.0
                    }
                },
                &mut |_, _, r: &mut rand_chacha::ChaCha20Rng| {
                    if r.gen::<f64>() < 0.5 {
                        1.0
                    } else {
                        0.0
                    }
                },
                &mut rng,
            )
        };
        let a = sample(42);
        let b = sample(42);
        assert_eq!(a.path, b.path);
        assert_eq!(a.rewards, b.rewards);
        assert_eq!(a.costs, b.costs);
        let c = sample(43);
        assert!(a.path != c.path || a.rewards != c.rewards || a.costs != c.costs);
    }

    #[test]
    fn deterministic_everything_returns_means() {
        let cmdp = chain();
        let pi = Policy::uniform(cmdp.topo());
        let mut rng = stream(1, Stream::Environment);
        let fb = sample_episode(
            &cmdp,
            &pi,
            &mut |pair, _: &mut rand_chacha::ChaCha20Rng| 0.25 + pair as f64,
            &mut |_, i, _: &mut rand_chacha::ChaCha20Rng| 0.5 + i as f64,
            &mut rng,
        );
        assert_eq!(fb.path, vec![(0, 0), (1, 0)]);
        assert_eq!(fb.rewards, vec![0.25, 1.25]);
        assert_eq!(fb.cost(0, 0), 0.5);
    }

    #[test]
    fn visit_frequency_matches_occupancy() {
        let cmdp = random_cmdp(7, &[1, 2, 1], 2);
        let topo = cmdp.topo();
        let pi = random_policy(5, topo);
        let q2 = occupancy_from_policy(&cmdp, &pi).q2(topo);
        let runs = 100_000usize;
        let mut counts = vec![0usize; topo.num_pairs()];
        let mut rng = stream(123, Stream::Environment);
        for _ in 0..runs {
            let fb = sample_episode(
                &cmdp,
                &pi,
                &mut |_, _: &mut rand_chacha::ChaCha20Rng| 0.0,
                &mut |_, _, _: &mut rand_chacha::ChaCha20Rng| 0.0,
                &mut rng,
            );
            for &(x, a) in &fb.path {
                counts[topo.pair(x, a)] += 1;
            }
        }
        for pair in 0..topo.num_pairs() {
            let freq = counts[pair] as f64 / runs as f64;
            let se = (q2[pair] * (1.0 - q2[pair]) / runs as f64).sqrt();
            assert!(
                (freq - q2[pair]).abs() <= 3.0 * se.max(1e-4),
                "pair {pair}: {freq} vs {} (se {se})",
                q2[pair]
            );
        }
    }

    #[test]
    fn file_roundtrip_and_rejections() {
        let cmdp = random_cmdp(8, &[1, 2, 2, 1], 2);
        let text = cmdp.to_text();
        let back = LoopFreeCmdp::parse(&text).unwrap();
        assert_eq!(back.transition(), cmdp.transition());
        assert_eq!(back.thresholds(), cmdp.thresholds());

        // row violating layer adjacency: state 3 is in layer 2, not layer 1
        let bad = "layers 1 2 2 1\nactions 1\nalpha 0.5\nt 0 0 0 3 1.0\n";
        assert!(matches!(
            LoopFreeCmdp::parse(bad),
            Err(CmdpError::Parse { .. })
        ));

        // row sum broken
        let bad = "layers 1 1 1\nactions 1\nalpha 0.5\nt 0 0 0 1 0.9\nt 1 1 0 2 1.0\n";
        assert!(matches!(
            LoopFreeCmdp::parse(bad),
            Err(CmdpError::RowSum { state: 0, .. })
        ));

        // threshold out of range
        let bad = "layers 1 1 1\nactions 1\nalpha 7.5\nt 0 0 0 1 1.0\nt 1 1 0 2 1.0\n";
        assert!(matches!(
            LoopFreeCmdp::parse(bad),
            Err(CmdpError::Threshold { .. })
        ));
    }

    #[test]
    fn from_entries_rejects_non_adjacent() {
        let topo = Topology::new(&[1, 2, 1], 2).unwrap();
        let err = OccupancyMeasure::from_entries(&topo, &[(0, 0, 0, 3, 0.5)]).unwrap_err();
        assert!(matches!(err, CmdpError::Structural(_)));
    }

    #[test]
    fn general_mdp_duplication_is_loop_free() {
        // 2-state generic MDP with a self loop; duplication removes the loop.
        let p = |x: usize, a: usize, xp: usize| -> f64 {
            match (x, a, xp) {
                (0, 0, 0) => 0.5,
                (0, 0, 1) => 0.5,
                (0, 1, 1) => 1.0,
                (1, _, 1) => 1.0,
                _ => 0.0,
            }
        };
        let cmdp = LoopFreeCmdp::from_general(2, 2, &p, 3, 0, vec![1.0]).unwrap();
        assert_eq!(cmdp.topo().layer_sizes(), &[1, 2, 2, 1]);
        let q = occupancy_from_policy(&cmdp, &Policy::uniform(cmdp.topo()));
        assert!(q.validate(cmdp.topo(), STRUCTURAL_TOL).ok);
    }
}
