//! The learner's belief state: visit counters, empirical means, and
//! corruption-enlarged confidence bounds.
//!
//! Reward and cost bounds share one formula,
//! `min{1, sqrt(ln_term / (2 max{N,1})) + C/max{N,1} + C/T}`, differing only
//! in the log argument (the cost side carries the constraint count). The
//! first term is the usual Hoeffding radius, the second absorbs
//! non-stationarity against visited pairs, the third bounds the gap between
//! the episode-average means and their non-corrupted anchors. Unvisited
//! pairs sit at the cap of 1, which is what drives exploration.
//!
//! Transition uncertainty is a per-triple radius around the empirical
//! transition function; the induced occupancy polytope lives in
//! [`crate::occupancy_lp`].

use std::sync::Arc;

use thiserror::Error;

use crate::cmdp::{EpisodeFeedback, Topology};

#[derive(Debug, Error)]
pub enum ConfidenceError {
    #[error("delta must lie in (0,1), got {0}")]
    BadDelta(f64),
    #[error("episode horizon must be at least 1")]
    BadHorizon,
    #[error("corruption guess must be nonnegative, got {0}")]
    BadCorruption(f64),
}

/// Fixed parameters of the confidence bounds.
#[derive(Debug, Clone, Copy)]
pub struct ConfidenceParams {
    /// Corruption guess plugged into the enlarged bounds. May over- or
    /// under-estimate the truth.
    pub corruption_guess: f64,
    pub delta: f64,
    /// Configured number of episodes `T`; the `C/T` term always uses this.
    pub episodes: usize,
    pub num_constraints: usize,
}

/// Empirical transition function and per-triple confidence radii.
#[derive(Debug, Clone)]
pub struct TransitionConfidence {
    pub p_bar: Vec<f64>,
    pub eps: Vec<f64>,
}

impl TransitionConfidence {
    /// Whether a transition function lies inside the confidence set.
    pub fn contains(&self, transition: &[f64]) -> bool {
        self.p_bar
            .iter()
            .zip(&self.eps)
            .zip(transition)
            .all(|((pb, e), p)| (pb - p).abs() <= *e)
    }
}

/// Counters, empirical means, and bound evaluation for one learner instance.
#[derive(Debug, Clone)]
pub struct ConfidenceState {
    topo: Arc<Topology>,
    params: ConfidenceParams,
    /// Visits per pair, episodes 1..t.
    n: Vec<u64>,
    /// Visits per triple.
    m3: Vec<u64>,
    r_sum: Vec<f64>,
    g_sum: Vec<f64>,
    episode: usize,
    /// Horizon used inside the log arguments; the doubling wrapper raises it
    /// when a run outlives its current epoch.
    log_horizon: usize,
}

impl ConfidenceState {
    pub fn new(topo: Arc<Topology>, params: ConfidenceParams) -> Result<Self, ConfidenceError> {
        if !(params.delta > 0.0 && params.delta < 1.0) {
            return Err(ConfidenceError::BadDelta(params.delta));
        }
        if params.episodes == 0 {
            return Err(ConfidenceError::BadHorizon);
        }
        if params.corruption_guess < 0.0 {
            return Err(ConfidenceError::BadCorruption(params.corruption_guess));
        }
        let pairs = topo.num_pairs();
        let triples = topo.num_triples();
        let m = params.num_constraints;
        Ok(Self {
            topo,
            params,
            n: vec![0; pairs],
            m3: vec![0; triples],
            r_sum: vec![0.0; pairs],
            g_sum: vec![0.0; pairs * m],
            episode: 0,
            log_horizon: params.episodes,
        })
    }

    pub fn params(&self) -> &ConfidenceParams {
        &self.params
    }

    pub fn episode(&self) -> usize {
        self.episode
    }

    pub fn visits(&self, pair: usize) -> u64 {
        self.n[pair]
    }

    pub fn log_horizon(&self) -> usize {
        self.log_horizon
    }

    /// Raises the horizon used by the log arguments (doubling epochs).
    /// Counters and sums are untouched.
    pub fn set_log_horizon(&mut self, horizon: usize) {
        self.log_horizon = horizon.max(1);
    }

    /// Folds one episode of bandit feedback into counters and sums.
    pub fn update(&mut self, fb: &EpisodeFeedback) {
        let m = self.params.num_constraints;
        debug_assert_eq!(fb.num_constraints, m);
        self.episode += 1;
        for (k, (&(x, a), &r)) in fb.path.iter().zip(&fb.rewards).enumerate() {
            let pair = self.topo.pair(x, a);
            self.n[pair] += 1;
            self.r_sum[pair] += r;
            for i in 0..m {
                self.g_sum[pair * m + i] += fb.cost(k, i);
            }
            if k + 1 < fb.path.len() {
                let (next, _) = fb.path[k + 1];
                let layer = self.topo.layer_of(x);
                let off = x - self.topo.state_id(layer, 0);
                let off_next = next - self.topo.state_id(layer + 1, 0);
                self.m3[self.topo.triple(layer, off, a, off_next)] += 1;
            } else {
                // last step always lands in the terminal state
                let layer = self.topo.layer_of(x);
                let off = x - self.topo.state_id(layer, 0);
                self.m3[self.topo.triple(layer, off, a, 0)] += 1;
            }
        }
    }

    pub fn r_hat(&self, pair: usize) -> f64 {
        self.r_sum[pair] / (self.n[pair].max(1) as f64)
    }

    pub fn g_hat(&self, pair: usize, i: usize) -> f64 {
        self.g_sum[pair * self.params.num_constraints + i] / (self.n[pair].max(1) as f64)
    }

    /// Shared enlarged-bound formula; `ln_term` is the only difference
    /// between the reward and cost sides.
    fn bound(&self, pair: usize, ln_term: f64) -> f64 {
        let n = self.n[pair].max(1) as f64;
        let c = self.params.corruption_guess;
        let t = self.params.episodes as f64;
        ((ln_term / (2.0 * n)).sqrt() + c / n + c / t).min(1.0)
    }

    fn state_action_count(&self) -> f64 {
        (self.topo.num_states() * self.topo.num_actions()) as f64
    }

    /// Reward confidence radius.
    pub fn phi(&self, pair: usize) -> f64 {
        let h = self.log_horizon as f64;
        self.bound(pair, (2.0 * h * self.state_action_count() / self.params.delta).ln())
    }

    /// Cost confidence radius: same shape with the constraint count inside
    /// the log.
    pub fn xi(&self, pair: usize) -> f64 {
        let h = self.log_horizon as f64;
        let m = self.params.num_constraints as f64;
        self.bound(
            pair,
            (2.0 * m * h * self.state_action_count() / self.params.delta).ln(),
        )
    }

    /// Upper confidence rewards `r_hat + phi`, entrywise (may exceed 1; the
    /// optimistic program wants that).
    pub fn optimistic_rewards(&self) -> Vec<f64> {
        (0..self.topo.num_pairs())
            .map(|p| self.r_hat(p) + self.phi(p))
            .collect()
    }

    /// Lower confidence costs `g_hat - xi`, pair-major with stride `m`
    /// (may go negative).
    pub fn pessimistic_costs(&self) -> Vec<f64> {
        let m = self.params.num_constraints;
        let mut out = vec![0.0; self.topo.num_pairs() * m];
        for pair in 0..self.topo.num_pairs() {
            let xi = self.xi(pair);
            for i in 0..m {
                out[pair * m + i] = self.g_hat(pair, i) - xi;
            }
        }
        out
    }

    /// Empirical transition function with per-triple radii.
    pub fn transition_bounds(&self) -> TransitionConfidence {
        let topo = &self.topo;
        let h = self.log_horizon as f64;
        let ln_term = (h * self.state_action_count() / self.params.delta).ln();
        let mut p_bar = vec![0.0; topo.num_triples()];
        let mut eps = vec![0.0; topo.num_triples()];
        for (k, off, a, pair) in topo.pairs() {
            let n = self.n[pair];
            let denom_p = n.max(1) as f64;
            let denom_e = n.saturating_sub(1).max(1) as f64;
            for t in topo.triple_block(k, off, a) {
                let pb = self.m3[t] as f64 / denom_p;
                p_bar[t] = pb;
                eps[t] = 2.0 * (pb * ln_term / denom_e).sqrt() + 14.0 * ln_term / (3.0 * denom_e);
            }
        }
        TransitionConfidence { p_bar, eps }
    }

    /// CSV dump of per-pair counters, estimates, and radii.
    pub fn dump_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        let m = self.params.num_constraints;
        write!(w, "pair,n,r_hat,phi")?;
        for i in 0..m {
            write!(w, ",g_hat_{i}")?;
        }
        writeln!(w, ",xi")?;
        for pair in 0..self.topo.num_pairs() {
            write!(
                w,
                "{pair},{},{},{}",
                self.n[pair],
                self.r_hat(pair),
                self.phi(pair)
            )?;
            for i in 0..m {
                write!(w, ",{}", self.g_hat(pair, i))?;
            }
            writeln!(w, ",{}", self.xi(pair))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cmdp::{sample_episode, LoopFreeCmdp, Policy};
    use crate::rng::{stream, Stream};

    fn params(c: f64, delta: f64, t: usize, m: usize) -> ConfidenceParams {
        ConfidenceParams {
            corruption_guess: c,
            delta,
            episodes: t,
            num_constraints: m,
        }
    }

    fn feedback(path: Vec<(usize, usize)>, rewards: Vec<f64>, costs: Vec<f64>, m: usize) -> EpisodeFeedback {
        EpisodeFeedback {
            path,
            rewards,
            costs,
            num_constraints: m,
        }
    }

    /// Shape with |X| = 3, |A| = 2 so the frozen numeric examples apply.
    fn small_topo() -> Arc<Topology> {
        Arc::new(Topology::new(&[1, 1, 1], 2).unwrap())
    }

    #[test]
    fn running_mean_is_exact() {
        let topo = small_topo();
        let mut conf = ConfidenceState::new(topo, params(0.0, 0.1, 100, 1)).unwrap();
        conf.update(&feedback(vec![(0, 0), (1, 0)], vec![0.0, 0.3], vec![1.0, 0.0], 1));
        conf.update(&feedback(vec![(0, 0), (1, 1)], vec![1.0, 0.5], vec![0.0, 1.0], 1));
        assert_eq!(conf.r_hat(0), 0.5);
        assert_eq!(conf.g_hat(0, 0), 0.5);
        assert_eq!(conf.visits(0), 2);
        // unvisited pair keeps the max{N,1} convention
        assert_eq!(conf.r_hat(1), 0.0);
        assert_eq!(conf.visits(1), 0);
    }

    #[test]
    fn unvisited_pairs_are_fully_optimistic() {
        let topo = small_topo();
        let conf = ConfidenceState::new(topo, params(0.0, 0.1, 1000, 2)).unwrap();
        assert_eq!(conf.phi(0), 1.0);
        assert_eq!(conf.xi(0), 1.0);
        assert_eq!(conf.optimistic_rewards()[0], 1.0);
        assert_eq!(conf.pessimistic_costs()[0], -1.0);
    }

    #[test]
    fn phi_matches_frozen_values() {
        let topo = small_topo();
        let mut conf = ConfidenceState::new(topo.clone(), params(0.0, 0.05, 100, 1)).unwrap();
        // drive pair 0 to exactly 200 visits
        for _ in 0..200 {
            conf.update(&feedback(vec![(0, 0)], vec![0.5], vec![0.5], 1));
        }
        assert!((conf.phi(0) - 0.15879081451181365).abs() < 1e-12);
        let mut conf = ConfidenceState::new(topo, params(10.0, 0.05, 100, 1)).unwrap();
        for _ in 0..200 {
            conf.update(&feedback(vec![(0, 0)], vec![0.5], vec![0.5], 1));
        }
        assert!((conf.phi(0) - 0.30879081451181367).abs() < 1e-12);
    }

    #[test]
    fn max_corruption_caps_both_bounds() {
        let topo = small_topo();
        let mut conf = ConfidenceState::new(topo, params(100.0, 0.1, 100, 1)).unwrap();
        for _ in 0..50 {
            conf.update(&feedback(vec![(0, 0)], vec![1.0], vec![1.0], 1));
        }
        assert_eq!(conf.phi(0), 1.0);
        assert_eq!(conf.xi(0), 1.0);
        assert!((conf.optimistic_rewards()[0] - 2.0).abs() < 1e-12);
        assert!((conf.pessimistic_costs()[0] - 0.0).abs() < 1e-12);
    }

    #[test]
    fn bounds_monotone_in_visits_and_corruption() {
        let topo = small_topo();
        let mut conf = ConfidenceState::new(topo.clone(), params(2.0, 0.1, 1000, 2)).unwrap();
        let mut last = f64::INFINITY;
        for _ in 0..50 {
            conf.update(&feedback(vec![(0, 0)], vec![0.5], vec![0.5, 0.5], 2));
            let phi = conf.phi(0);
            assert!(phi <= last + 1e-15);
            assert!((0.0..=1.0).contains(&phi));
            last = phi;
        }
        // same visit count, larger corruption guess
        let mut bigger = ConfidenceState::new(topo, params(5.0, 0.1, 1000, 2)).unwrap();
        for _ in 0..50 {
            bigger.update(&feedback(vec![(0, 0)], vec![0.5], vec![0.5, 0.5], 2));
        }
        assert!(bigger.phi(0) >= last);
        // xi uses the m-inflated log argument, so it dominates phi
        assert!(bigger.xi(0) >= bigger.phi(0));
    }

    #[test]
    fn transition_bounds_at_zero_and_many_visits() {
        let topo = small_topo();
        let mut conf = ConfidenceState::new(topo, params(0.0, 0.05, 100, 1)).unwrap();
        let tb = conf.transition_bounds();
        assert_eq!(tb.p_bar[0], 0.0);
        assert!((tb.eps[0] - 43.832422334260634).abs() < 1e-9);
        for _ in 0..1000 {
            conf.update(&feedback(vec![(0, 0), (1, 0)], vec![0.5, 0.5], vec![0.5, 0.5], 1));
        }
        let tb = conf.transition_bounds();
        assert_eq!(tb.p_bar[0], 1.0);
        assert!((tb.eps[0] - 0.2378047802209563).abs() < 1e-12);
    }

    #[test]
    fn counters_tie_out_with_triples() {
        let cmdp = crate::test_support::random_layered_cmdp(3, &[1, 2, 2, 1], 2, vec![1.0]);
        let topo = cmdp.topology();
        let pi = Policy::uniform(&topo);
        let mut conf = ConfidenceState::new(topo.clone(), params(0.0, 0.1, 500, 1)).unwrap();
        let mut rng = stream(9, Stream::Environment);
        for _ in 0..500 {
            let fb = sample_episode(
                &cmdp,
                &pi,
                &mut |_, _: &mut rand_chacha::ChaCha20Rng| 0.5,
                &mut |_, _, _: &mut rand_chacha::ChaCha20Rng| 0.5,
                &mut rng,
            );
            conf.update(&fb);
        }
        for (k, off, a, pair) in topo.pairs() {
            let total: u64 = topo
                .triple_block(k, off, a)
                .map(|t| conf.m3[t])
                .sum();
            assert_eq!(total, conf.visits(pair));
        }
    }

    #[test]
    fn rederiving_means_from_the_log_is_bit_exact() {
        let cmdp = crate::test_support::random_layered_cmdp(5, &[1, 2, 1], 2, vec![1.0]);
        let topo = cmdp.topology();
        let pi = Policy::uniform(&topo);
        let mut conf = ConfidenceState::new(topo.clone(), params(0.0, 0.1, 200, 1)).unwrap();
        let mut rng = stream(11, Stream::Environment);
        let mut log = Vec::new();
        for _ in 0..200 {
            let fb = sample_episode(
                &cmdp,
                &pi,
                &mut |p, r: &mut rand_chacha::ChaCha20Rng| {
                    if rand::Rng::gen::<f64>(r) < 0.2 + 0.05 * p as f64 {
                        1.0
                    } else {
                        0.0
                    }
                },
                &mut |_, _, r: &mut rand_chacha::ChaCha20Rng| {
                    if rand::Rng::gen::<f64>(r) < 0.5 {
                        1.0
                    } else {
                        0.0
                    }
                },
                &mut rng,
            );
            conf.update(&fb);
            log.push(fb);
        }
        for pair in 0..topo.num_pairs() {
            let mut sum = 0.0;
            let mut count = 0u64;
            for fb in &log {
                for (&(x, a), &r) in fb.path.iter().zip(&fb.rewards) {
                    if topo.pair(x, a) == pair {
                        sum += r;
                        count += 1;
                    }
                }
            }
            let expect = sum / count.max(1) as f64;
            assert_eq!(expect.to_bits(), conf.r_hat(pair).to_bits());
        }
    }

    #[test]
    fn coverage_over_seeded_stationary_runs() {
        // scaled-down version of the acceptance criterion
        let cmdp = crate::test_support::random_layered_cmdp(7, &[1, 2, 1], 2, vec![1.0]);
        let topo = cmdp.topology();
        let pi = Policy::uniform(&topo);
        let t_horizon = 300;
        let runs = 40;
        let r_mean = vec![0.3, 0.6, 0.4, 0.8, 0.5, 0.2];
        let g_mean = vec![0.5, 0.1, 0.7, 0.3, 0.6, 0.4];
        let mut covered = 0;
        for seed in 0..runs {
            let mut conf = ConfidenceState::new(
                topo.clone(),
                params(0.0, 0.1, t_horizon, 1),
            )
            .unwrap();
            let mut rng = stream(1000 + seed, Stream::Environment);
            let mut ok = true;
            for _ in 0..t_horizon {
                let fb = sample_episode(
                    &cmdp,
                    &pi,
                    &mut |p, r: &mut rand_chacha::ChaCha20Rng| {
                        if rand::Rng::gen::<f64>(r) < r_mean[p] {
                            1.0
                        } else {
                            0.0
                        }
                    },
                    &mut |p, _, r: &mut rand_chacha::ChaCha20Rng| {
                        if rand::Rng::gen::<f64>(r) < g_mean[p] {
                            1.0
                        } else {
                            0.0
                        }
                    },
                    &mut rng,
                );
                conf.update(&fb);
                if !conf.transition_bounds().contains(cmdp.transition()) {
                    ok = false;
                    break;
                }
                for pair in 0..topo.num_pairs() {
                    if (conf.r_hat(pair) - r_mean[pair]).abs() > conf.phi(pair)
                        || (conf.g_hat(pair, 0) - g_mean[pair]).abs() > conf.xi(pair)
                    {
                        ok = false;
                        break;
                    }
                }
                if !ok {
                    break;
                }
            }
            if ok {
                covered += 1;
            }
        }
        assert!(
            covered as f64 >= 0.85 * runs as f64,
            "covered only {covered}/{runs}"
        );
    }

    #[test]
    fn delta_out_of_range_is_rejected() {
        let topo = small_topo();
        assert!(matches!(
            ConfidenceState::new(topo.clone(), params(0.0, 0.0, 10, 1)),
            Err(ConfidenceError::BadDelta(_))
        ));
        assert!(matches!(
            ConfidenceState::new(topo, params(0.0, 1.5, 10, 1)),
            Err(ConfidenceError::BadDelta(_))
        ));
    }

    #[test]
    fn raising_log_horizon_raises_bounds() {
        let topo = small_topo();
        let mut conf = ConfidenceState::new(topo, params(1.0, 0.1, 64, 1)).unwrap();
        for _ in 0..10 {
            conf.update(&feedback(vec![(0, 0)], vec![0.5], vec![0.5], 1));
        }
        conf.set_log_horizon(64);
        let before = conf.phi(0);
        conf.set_log_horizon(128);
        assert!(conf.phi(0) >= before);
    }

    #[test]
    fn csv_dump_shape() {
        let topo = small_topo();
        let conf = ConfidenceState::new(topo, params(0.0, 0.1, 10, 2)).unwrap();
        let mut buf = Vec::new();
        conf.dump_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("pair,n,r_hat,phi,g_hat_0,g_hat_1,xi"));
        assert_eq!(text.lines().count(), 1 + 4);
    }
}
