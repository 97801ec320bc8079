//! Adversarial reward/cost sequences and their corruption.
//!
//! A [`DistributionSequence`] fixes, for every episode, the mean reward of
//! every pair and the mean cost of every pair under every constraint, plus a
//! sampling law producing the realized observations. The corruption
//! functionals measure how non-stationary a sequence is: the summed L1
//! distance of the per-episode means to the best single anchor (rewards),
//! and the summed worst-constraint L1 distance to the best anchor matrix
//! (costs). The total corruption is the larger of the two.
//!
//! Corruption is always measured on the generated means themselves — the
//! ground truth of the harness — never estimated from samples.

use rand::Rng;
use thiserror::Error;

use crate::cmdp::Topology;

#[derive(Debug, Error)]
pub enum AdversaryError {
    #[error("corruption target {target} infeasible: at most {max} achievable for this base and horizon")]
    InfeasibleTarget { target: f64, max: f64 },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("{0}")]
    Parameter(String),
}

/// How realized observations are drawn from the per-episode means.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplingLaw {
    /// Observations are Bernoulli with the stated mean: maximal variance
    /// within `[0, 1]`, the stress case for the concentration bounds.
    Bernoulli,
    /// Observations equal the mean exactly. Debugging aid.
    Deterministic,
}

/// Per-episode reward and cost means over a fixed pair space.
#[derive(Debug, Clone)]
pub struct DistributionSequence {
    num_episodes: usize,
    num_pairs: usize,
    num_constraints: usize,
    /// `T x pairs`, episode-major.
    reward_means: Vec<f64>,
    /// `T x pairs x m`, episode-major then pair-major.
    cost_means: Vec<f64>,
    law: SamplingLaw,
}

impl DistributionSequence {
    pub fn from_means(
        num_pairs: usize,
        num_constraints: usize,
        reward_means: Vec<f64>,
        cost_means: Vec<f64>,
        law: SamplingLaw,
    ) -> Result<Self, AdversaryError> {
        if num_pairs == 0 || reward_means.len() % num_pairs != 0 {
            return Err(AdversaryError::Dimension(
                "reward means not a multiple of the pair count".into(),
            ));
        }
        let t = reward_means.len() / num_pairs;
        if cost_means.len() != t * num_pairs * num_constraints {
            return Err(AdversaryError::Dimension(format!(
                "cost means have {} entries, need {}",
                cost_means.len(),
                t * num_pairs * num_constraints
            )));
        }
        if reward_means
            .iter()
            .chain(cost_means.iter())
            .any(|v| !(0.0..=1.0).contains(v))
        {
            return Err(AdversaryError::Parameter("means must lie in [0,1]".into()));
        }
        Ok(Self {
            num_episodes: t,
            num_pairs,
            num_constraints,
            reward_means,
            cost_means,
            law,
        })
    }

    pub fn num_episodes(&self) -> usize {
        self.num_episodes
    }

    pub fn num_pairs(&self) -> usize {
        self.num_pairs
    }

    pub fn num_constraints(&self) -> usize {
        self.num_constraints
    }

    pub fn law(&self) -> SamplingLaw {
        self.law
    }

    /// Mean reward of `pair` at 0-based episode `t`.
    pub fn reward_mean(&self, t: usize, pair: usize) -> f64 {
        self.reward_means[t * self.num_pairs + pair]
    }

    /// Mean cost of `pair` under constraint `i` at episode `t`.
    pub fn cost_mean(&self, t: usize, pair: usize, i: usize) -> f64 {
        self.cost_means[(t * self.num_pairs + pair) * self.num_constraints + i]
    }

    /// Episode-slice of the reward means.
    pub fn reward_means_at(&self, t: usize) -> &[f64] {
        &self.reward_means[t * self.num_pairs..(t + 1) * self.num_pairs]
    }

    /// Episode-slice of the cost means (pair-major with stride `m`).
    pub fn cost_means_at(&self, t: usize) -> &[f64] {
        let w = self.num_pairs * self.num_constraints;
        &self.cost_means[t * w..(t + 1) * w]
    }

    /// Episode-average reward means.
    pub fn avg_rewards(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.num_pairs];
        for t in 0..self.num_episodes {
            for (o, v) in out.iter_mut().zip(self.reward_means_at(t)) {
                *o += v;
            }
        }
        for o in &mut out {
            *o /= self.num_episodes as f64;
        }
        out
    }

    /// Episode-average cost means, pair-major with stride `m`.
    pub fn avg_costs(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.num_pairs * self.num_constraints];
        for t in 0..self.num_episodes {
            for (o, v) in out.iter_mut().zip(self.cost_means_at(t)) {
                *o += v;
            }
        }
        for o in &mut out {
            *o /= self.num_episodes as f64;
        }
        out
    }

    pub fn draw_reward<R: Rng>(&self, t: usize, pair: usize, rng: &mut R) -> f64 {
        let mean = self.reward_mean(t, pair);
        match self.law {
            SamplingLaw::Bernoulli => {
                if rng.gen::<f64>() < mean {
                    1.0
                } else {
                    0.0
                }
            }
            SamplingLaw::Deterministic => mean,
        }
    }

    pub fn draw_cost<R: Rng>(&self, t: usize, pair: usize, i: usize, rng: &mut R) -> f64 {
        let mean = self.cost_mean(t, pair, i);
        match self.law {
            SamplingLaw::Bernoulli => {
                if rng.gen::<f64>() < mean {
                    1.0
                } else {
                    0.0
                }
            }
            SamplingLaw::Deterministic => mean,
        }
    }

    /// CSV dump of the full mean tensor for audits: one row per episode.
    pub fn dump_means_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        write!(w, "episode")?;
        for p in 0..self.num_pairs {
            write!(w, ",r{p}")?;
        }
        for p in 0..self.num_pairs {
            for i in 0..self.num_constraints {
                write!(w, ",g{p}_{i}")?;
            }
        }
        writeln!(w)?;
        for t in 0..self.num_episodes {
            write!(w, "{}", t + 1)?;
            for p in 0..self.num_pairs {
                write!(w, ",{}", self.reward_mean(t, p))?;
            }
            for p in 0..self.num_pairs {
                for i in 0..self.num_constraints {
                    write!(w, ",{}", self.cost_mean(t, p, i))?;
                }
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Measured corruption of a sequence, with the attaining anchors.
#[derive(Debug, Clone)]
pub struct CorruptionReport {
    pub c_r: f64,
    pub c_g: f64,
    pub c_total: f64,
    /// Anchor reward vector attaining the reward corruption.
    pub anchor_r: Vec<f64>,
    /// Anchor cost matrix (pair-major, stride `m`) attaining the cost
    /// corruption (up to solver accuracy for `m >= 2`).
    pub anchor_g: Vec<f64>,
    pub avg_r: Vec<f64>,
    pub avg_g: Vec<f64>,
}

/// Median of a non-empty slice (lower middle for even length — every point
/// between the middles attains the same L1 cost, this one is deterministic).
fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    values[(values.len() - 1) / 2]
}

/// Reward corruption: the L1 objective splits per component, and each
/// component is minimized by the median of its per-episode means.
pub fn corruption_rewards(seq: &DistributionSequence) -> (f64, Vec<f64>) {
    let t_count = seq.num_episodes;
    if t_count == 0 {
        return (0.0, vec![0.0; seq.num_pairs]);
    }
    let mut anchor = vec![0.0; seq.num_pairs];
    let mut total = 0.0;
    let mut column = vec![0.0; t_count];
    for pair in 0..seq.num_pairs {
        for (t, c) in column.iter_mut().enumerate() {
            *c = seq.reward_mean(t, pair);
        }
        let med = median(&mut column);
        anchor[pair] = med;
        total += column.iter().map(|v| (v - med).abs()).sum::<f64>();
    }
    (total, anchor)
}

/// Objective of the cost-corruption program at anchor `g` (pair-major).
pub(crate) fn cost_objective(seq: &DistributionSequence, g: &[f64]) -> f64 {
    let m = seq.num_constraints;
    let mut total = 0.0;
    for t in 0..seq.num_episodes {
        let slice = seq.cost_means_at(t);
        let mut worst = 0.0f64;
        for i in 0..m {
            let mut dist = 0.0;
            for pair in 0..seq.num_pairs {
                dist += (slice[pair * m + i] - g[pair * m + i]).abs();
            }
            worst = worst.max(dist);
        }
        total += worst;
    }
    total
}

/// Cost corruption. For a single constraint the worst-constraint coupling
/// disappears and the per-component median is exact. For `m >= 2` the
/// convex piecewise-linear objective is minimized by projected subgradient
/// descent (normalized direction, step `1/sqrt(k)`, best-iterate tracking)
/// warm-started from the per-constraint medians.
pub fn corruption_costs(seq: &DistributionSequence) -> (f64, Vec<f64>) {
    let t_count = seq.num_episodes;
    let m = seq.num_constraints;
    let width = seq.num_pairs * m;
    if t_count == 0 {
        return (0.0, vec![0.0; width]);
    }

    // per-constraint medians: exact for m = 1 and the warm start otherwise
    let mut anchor = vec![0.0; width];
    let mut column = vec![0.0; t_count];
    for pair in 0..seq.num_pairs {
        for i in 0..m {
            for (t, c) in column.iter_mut().enumerate() {
                *c = seq.cost_mean(t, pair, i);
            }
            anchor[pair * m + i] = median(&mut column);
        }
    }
    if m == 1 {
        return (cost_objective(seq, &anchor), anchor);
    }

    let mut best = anchor.clone();
    let mut best_val = cost_objective(seq, &anchor);
    let mut g = anchor;
    let mut grad = vec![0.0; width];
    const ITERS: usize = 10_000;
    for k in 1..=ITERS {
        grad.iter_mut().for_each(|v| *v = 0.0);
        for t in 0..t_count {
            let slice = seq.cost_means_at(t);
            // argmax constraint, lowest index on ties
            let mut arg = 0;
            let mut worst = f64::NEG_INFINITY;
            for i in 0..m {
                let mut dist = 0.0;
                for pair in 0..seq.num_pairs {
                    dist += (slice[pair * m + i] - g[pair * m + i]).abs();
                }
                if dist > worst {
                    worst = dist;
                    arg = i;
                }
            }
            for pair in 0..seq.num_pairs {
                let idx = pair * m + arg;
                let diff = slice[idx] - g[idx];
                grad[idx] -= diff.signum();
            }
        }
        let norm: f64 = grad.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < 1e-14 {
            break;
        }
        let step = 1.0 / (k as f64).sqrt();
        for (gv, dv) in g.iter_mut().zip(&grad) {
            *gv = (*gv - step * dv / norm).clamp(0.0, 1.0);
        }
        let val = cost_objective(seq, &g);
        if val < best_val {
            best_val = val;
            best.copy_from_slice(&g);
        }
    }
    (best_val, best)
}

/// Full corruption report of a sequence.
pub fn corruption_report(seq: &DistributionSequence) -> CorruptionReport {
    let (c_r, anchor_r) = corruption_rewards(seq);
    let (c_g, anchor_g) = corruption_costs(seq);
    CorruptionReport {
        c_r,
        c_g,
        c_total: c_r.max(c_g),
        anchor_r,
        anchor_g,
        avg_r: seq.avg_rewards(),
        avg_g: seq.avg_costs(),
    }
}

/// Non-stationarity patterns the harness can generate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AdversaryKind {
    /// Means never change; zero corruption.
    Stationary,
    /// Block-alternating means: `period` episodes high, `period` low, with
    /// the given peak-to-peak amplitude around the base (re-centered to fit
    /// `[0, 1]`).
    Alternating { period: usize, amplitude: f64 },
    /// Perturbs a spread subset of episodes so the measured total corruption
    /// lands within 5% of `c_target`.
    Budgeted { c_target: f64 },
    /// Flips every entry between its extremes every episode; corruption
    /// grows linearly in the horizon.
    FullyAdversarial,
}

/// Base means a generated sequence oscillates around.
#[derive(Debug, Clone)]
pub struct BaseMeans {
    /// Per-pair reward means.
    pub rewards: Vec<f64>,
    /// Per-pair-per-constraint cost means (pair-major, stride `m`).
    pub costs: Vec<f64>,
}

impl BaseMeans {
    pub fn check(&self, topo: &Topology, m: usize) -> Result<(), AdversaryError> {
        if self.rewards.len() != topo.num_pairs() {
            return Err(AdversaryError::Dimension(format!(
                "base rewards have {} entries, need {}",
                self.rewards.len(),
                topo.num_pairs()
            )));
        }
        if self.costs.len() != topo.num_pairs() * m {
            return Err(AdversaryError::Dimension(format!(
                "base costs have {} entries, need {}",
                self.costs.len(),
                topo.num_pairs() * m
            )));
        }
        if self
            .rewards
            .iter()
            .chain(self.costs.iter())
            .any(|v| !(0.0..=1.0).contains(v))
        {
            return Err(AdversaryError::Parameter(
                "base means must lie in [0,1]".into(),
            ));
        }
        Ok(())
    }
}

/// Generates a `T`-episode sequence of the requested kind around the base.
pub fn make_sequence(
    kind: AdversaryKind,
    base: &BaseMeans,
    topo: &Topology,
    num_constraints: usize,
    t_horizon: usize,
    law: SamplingLaw,
) -> Result<DistributionSequence, AdversaryError> {
    base.check(topo, num_constraints)?;
    if t_horizon == 0 {
        return Err(AdversaryError::Parameter("need at least one episode".into()));
    }
    let pairs = topo.num_pairs();
    let m = num_constraints;
    let mut rewards = Vec::with_capacity(t_horizon * pairs);
    let mut costs = Vec::with_capacity(t_horizon * pairs * m);

    match kind {
        AdversaryKind::Stationary => {
            for _ in 0..t_horizon {
                rewards.extend_from_slice(&base.rewards);
                costs.extend_from_slice(&base.costs);
            }
        }
        AdversaryKind::Alternating { period, amplitude } => {
            if period == 0 {
                return Err(AdversaryError::Parameter("period must be positive".into()));
            }
            if !(0.0..=1.0).contains(&amplitude) {
                return Err(AdversaryError::Parameter(
                    "amplitude must lie in [0,1]".into(),
                ));
            }
            let half = amplitude / 2.0;
            let center = |b: f64| b.clamp(half, 1.0 - half);
            for t in 0..t_horizon {
                let sign = if (t / period) % 2 == 0 { 1.0 } else { -1.0 };
                for &b in &base.rewards {
                    rewards.push(center(b) + sign * half);
                }
                for &b in &base.costs {
                    costs.push(center(b) + sign * half);
                }
            }
        }
        AdversaryKind::Budgeted { c_target } => {
            if c_target < 0.0 {
                return Err(AdversaryError::Parameter(
                    "target must be nonnegative".into(),
                ));
            }
            // one-sided perturbation toward the farther interval end; the
            // anchor stays at the base while fewer than half the episodes
            // are touched, so the measured corruption is exactly
            // n_c * scale * unit
            let depth_r: Vec<f64> = base.rewards.iter().map(|b| headroom(*b)).collect();
            let depth_g: Vec<f64> = base.costs.iter().map(|b| headroom(*b)).collect();
            let h_r: f64 = depth_r.iter().sum();
            let h_g = (0..m)
                .map(|i| (0..pairs).map(|p| depth_g[p * m + i]).sum::<f64>())
                .fold(0.0f64, f64::max);
            let unit = h_r.max(h_g);
            let max_corrupt = t_horizon.saturating_sub(1) / 2;
            let max_total = max_corrupt as f64 * unit;
            if c_target > max_total {
                return Err(AdversaryError::InfeasibleTarget {
                    target: c_target,
                    max: max_total,
                });
            }
            let (n_c, scale) = if c_target == 0.0 {
                (0usize, 0.0)
            } else {
                let n = ((c_target / unit).ceil() as usize).clamp(1, max_corrupt.max(1));
                (n, c_target / (n as f64 * unit))
            };
            for t in 0..t_horizon {
                // Bresenham spread of exactly n_c corrupted episodes
                let corrupted = (t + 1) * n_c / t_horizon > t * n_c / t_horizon;
                if corrupted {
                    for (b, d) in base.rewards.iter().zip(&depth_r) {
                        rewards.push(b + scale * d * direction(*b));
                    }
                    for (b, d) in base.costs.iter().zip(&depth_g) {
                        costs.push(b + scale * d * direction(*b));
                    }
                } else {
                    rewards.extend_from_slice(&base.rewards);
                    costs.extend_from_slice(&base.costs);
                }
            }
        }
        AdversaryKind::FullyAdversarial => {
            for t in 0..t_horizon {
                let sign = if t % 2 == 0 { 1.0 } else { -1.0 };
                for &b in &base.rewards {
                    rewards.push(b + sign * b.min(1.0 - b));
                }
                for &b in &base.costs {
                    costs.push(b + sign * b.min(1.0 - b));
                }
            }
        }
    }

    DistributionSequence::from_means(pairs, m, rewards, costs, law)
}

/// Largest one-sided move available from `b` inside `[0, 1]`.
fn headroom(b: f64) -> f64 {
    b.max(1.0 - b)
}

/// Direction of that move.
fn direction(b: f64) -> f64 {
    if 1.0 - b >= b {
        1.0
    } else {
        -1.0
    }
}
