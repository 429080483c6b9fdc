//! The active-debiasing loop and its two baselines.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dist::solve_param_for_percentile;
use crate::error::{Error, Result};
use crate::metrics::exploration_error;
use crate::policy::{next_epsilon, EpsilonSchedule, FairnessRule, ScheduleKind, ThresholdPolicy};
use crate::population::{Label, Population};
use crate::rng::{stream, RunRng, DECISION_STREAM, UPDATE_STREAM};
use crate::trajectory::{
    AgentArrival, Decision, DecisionRecord, ExploreAction, GroupSnapshot, LabelSnapshot, ObservedLabel, Trajectory,
    TrajectoryPoint,
};

/// Fewest usable points for a label's estimate to move in an update.
pub const MIN_UPDATE_POINTS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateStrategy {
    /// Re-anchor each label to the median of its batch inside the truncation window.
    #[default]
    MirroredWindow,
    /// Percentile of the batch after thinning points above the threshold to the exploration rate.
    RateBalanced,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum AlgorithmVariant {
    ActiveDebiasing { strategy: UpdateStrategy },
    ExploitationOnly,
    PureExploration,
}

impl Default for AlgorithmVariant {
    fn default() -> Self {
        AlgorithmVariant::ActiveDebiasing {
            strategy: UpdateStrategy::MirroredWindow,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub variant: AlgorithmVariant,
    pub fairness: FairnessRule,
    pub schedule: EpsilonSchedule,
    /// Every (group, label) batch must hold this many points before an update.
    pub batch_min: usize,
    /// Weight of the new parameter when blending with the old one.
    pub smoothing: f64,
    pub explore_action: ExploreAction,
    /// Probability that an unqualified agent passes an intermediate offer.
    pub gamma: f64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            variant: AlgorithmVariant::default(),
            fairness: FairnessRule::None,
            schedule: EpsilonSchedule::adaptive(EpsilonSchedule::DEFAULT_EPS0, 2.0, 1000),
            batch_min: 50,
            smoothing: 1.0,
            explore_action: ExploreAction::Uniform,
            gamma: 0.0,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        self.fairness.validate()?;
        self.schedule.validate()?;
        if self.batch_min == 0 {
            return Err(Error::config("run.batch_min", "must be at least 1"));
        }
        if !(self.smoothing > 0.0 && self.smoothing <= 1.0) {
            return Err(Error::config("run.smoothing", "must lie in (0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::config("run.gamma", "must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// A batched observation: feature and arrival index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchEntry {
    pub x: f64,
    pub t: u64,
}

/// Linear-interpolation percentile at `p` in `[0, 1]` of `values` (sorted in place).
pub fn empirical_percentile(values: &mut [f64], p: f64) -> f64 {
    assert!(!values.is_empty(), "percentile of an empty sample");
    values.sort_by(f64::total_cmp);
    let h = (values.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(values.len() - 1);
    values[lo] + (h - lo as f64) * (values[hi] - values[lo])
}

#[derive(Debug, Clone)]
struct AdaptiveWindow {
    arrivals: u64,
    err_obs: u64,
    err_exp: f64,
}

pub struct EngineState {
    pub config: EngineConfig,
    pub est: Population,
    pub policy: ThresholdPolicy,
    /// `batches[g][y]`: admitted points with believed label `y` awaiting an update.
    pub batches: Vec<[Vec<BatchEntry>; 2]>,
    /// Arrivals processed.
    pub t: u64,
    /// Labeled samples observed so far.
    pub observed: u64,
    /// Points admitted below the threshold this round, by group and believed label.
    explored: Vec<[u64; 2]>,
    adaptive: AdaptiveWindow,
    pending_epsilon: f64,
    /// Per-group expected false-positive rate under the current estimate and policy.
    expected_fp: Vec<f64>,
    decision_rng: RunRng,
    update_rng: RunRng,
    /// When set, arrival indices of every point an update consumed.
    pub update_inputs: Option<Vec<u64>>,
}

impl EngineState {
    pub fn new(config: EngineConfig, est: Population, seed: u64) -> Result<Self> {
        config.validate()?;
        est.validate()?;
        let epsilon = config.schedule.eps0;
        let policy = ThresholdPolicy::compute(&est, config.fairness, epsilon)?;
        let n = est.len();
        let mut state = Self {
            config,
            est,
            policy,
            batches: vec![[Vec::new(), Vec::new()]; n],
            t: 0,
            observed: 0,
            explored: vec![[0; 2]; n],
            adaptive: AdaptiveWindow {
                arrivals: 0,
                err_obs: 0,
                err_exp: 0.0,
            },
            pending_epsilon: epsilon,
            expected_fp: Vec::new(),
            decision_rng: stream(seed, DECISION_STREAM),
            update_rng: stream(seed, UPDATE_STREAM),
            update_inputs: None,
        };
        state.refresh_expected_fp();
        Ok(state)
    }

    pub fn epsilon(&self) -> f64 {
        self.policy.epsilon
    }

    fn refresh_expected_fp(&mut self) {
        self.expected_fp = self
            .est
            .groups
            .iter()
            .zip(&self.policy.groups)
            .map(|(g, p)| g.alpha[0] * (1.0 - g.dists[0].cdf(p.theta)))
            .collect();
    }

    /// Decide on one arrival under the current policy.
    ///
    /// Every call consumes exactly two uniforms from the decision stream, so runs
    /// that share a seed also share exploration and noise coins.
    pub fn decide(&mut self, a: &AgentArrival) -> DecisionRecord {
        let u_explore: f64 = self.decision_rng.random();
        let u_noise: f64 = self.decision_rng.random();
        let gp = &self.policy.groups[a.group];
        let eps = self.policy.epsilon;
        let explore = u_explore < eps;
        let decision = if a.x >= gp.theta {
            Decision::AdmitExploit
        } else {
            let eligible = match self.config.variant {
                AlgorithmVariant::ActiveDebiasing { .. } => a.x >= gp.lb,
                AlgorithmVariant::PureExploration => true,
                AlgorithmVariant::ExploitationOnly => false,
            };
            if eligible && explore {
                Decision::AdmitExplore {
                    action: self.config.explore_action,
                }
            } else {
                Decision::Reject
            }
        };
        let observed = match decision {
            Decision::Reject => ObservedLabel::Censored,
            Decision::AdmitExplore {
                action: ExploreAction::Intermediate,
            } if a.label == 0 && u_noise < self.config.gamma => ObservedLabel::Noisy(1),
            _ => ObservedLabel::Exact(a.label),
        };
        DecisionRecord {
            arrival: *a,
            decision,
            observed,
            theta: gp.theta,
        }
    }

    /// Fold a decision into the batches and schedule counters.
    pub fn accumulate(&mut self, rec: &DecisionRecord) {
        let g = rec.arrival.group;
        self.t = self.t.max(rec.arrival.t + 1);
        if let Some(y) = rec.observed.believed() {
            self.batches[g][y].push(BatchEntry {
                x: rec.arrival.x,
                t: rec.arrival.t,
            });
            self.observed += 1;
            if matches!(rec.decision, Decision::AdmitExplore { .. }) {
                self.explored[g][y] += 1;
            }
            if y == 0 && rec.decision == Decision::AdmitExploit {
                self.adaptive.err_obs += 1;
            }
        }
        self.adaptive.err_exp += self.expected_fp[g];
        self.adaptive.arrivals += 1;
        if let ScheduleKind::Adaptive { window, .. } = self.config.schedule.kind {
            if self.adaptive.arrivals >= window {
                self.pending_epsilon =
                    next_epsilon(&self.config.schedule, self.observed, self.adaptive.err_obs, self.adaptive.err_exp);
                self.adaptive = AdaptiveWindow {
                    arrivals: 0,
                    err_obs: 0,
                    err_exp: 0.0,
                };
            }
        }
    }

    pub fn ready_to_update(&self) -> bool {
        self.batches
            .iter()
            .flat_map(|b| b.iter())
            .all(|b| b.len() >= self.config.batch_min)
    }

    fn set_reference(&mut self, g: usize, y: Label, target: f64) -> Result<()> {
        let d = &self.est.groups[g].dists[y];
        let fresh = solve_param_for_percentile(d.kind(), d.tau(), target)?;
        let eta = self.config.smoothing;
        let psi = (1.0 - eta) * d.psi() + eta * fresh;
        self.est.groups[g].dists[y] = d.with_psi(psi)?;
        Ok(())
    }

    fn trace(&mut self, used: impl IntoIterator<Item = u64>) {
        if let Some(v) = self.update_inputs.as_mut() {
            v.extend(used);
        }
    }

    /// Median of the label's batch inside its window.
    fn window_median(&mut self, g: usize, y: Label) -> Option<f64> {
        let w = self.policy.groups[g].windows[y];
        let inside: Vec<BatchEntry> = self.batches[g][y].iter().copied().filter(|e| w.contains(e.x)).collect();
        if inside.len() < MIN_UPDATE_POINTS {
            return None;
        }
        self.trace(inside.iter().map(|e| e.t));
        let mut xs: Vec<f64> = inside.iter().map(|e| e.x).collect();
        Some(empirical_percentile(&mut xs, 0.5))
    }

    /// `tau`-percentile of the label's batch after keeping each point at or above
    /// the threshold with probability epsilon.
    fn balanced_percentile(&mut self, g: usize, y: Label) -> Option<f64> {
        let theta = self.policy.groups[g].theta;
        let eps = self.policy.epsilon;
        let mut kept = Vec::with_capacity(self.batches[g][y].len());
        for e in &self.batches[g][y] {
            let u: f64 = self.update_rng.random();
            if e.x < theta || u < eps {
                kept.push(*e);
            }
        }
        if kept.len() < MIN_UPDATE_POINTS {
            return None;
        }
        self.trace(kept.iter().map(|e| e.t));
        let tau = self.est.groups[g].dists[y].tau();
        let mut xs: Vec<f64> = kept.iter().map(|e| e.x).collect();
        Some(empirical_percentile(&mut xs, tau / 100.0))
    }

    fn plain_percentile(&mut self, g: usize, y: Label) -> Option<f64> {
        if self.batches[g][y].len() < MIN_UPDATE_POINTS {
            return None;
        }
        let ts: Vec<u64> = self.batches[g][y].iter().map(|e| e.t).collect();
        self.trace(ts);
        let tau = self.est.groups[g].dists[y].tau();
        let mut xs: Vec<f64> = self.batches[g][y].iter().map(|e| e.x).collect();
        Some(empirical_percentile(&mut xs, tau / 100.0))
    }

    /// Re-estimate every (group, label) from the current batches and clear them.
    /// Labels without enough usable points keep their estimate.
    pub fn update(&mut self) -> Result<()> {
        for g in 0..self.est.len() {
            for y in 0..2 {
                let target = match self.config.variant {
                    AlgorithmVariant::ActiveDebiasing {
                        strategy: UpdateStrategy::MirroredWindow,
                    } => self.window_median(g, y),
                    AlgorithmVariant::ActiveDebiasing {
                        strategy: UpdateStrategy::RateBalanced,
                    } => self.balanced_percentile(g, y),
                    AlgorithmVariant::PureExploration => self.balanced_percentile(g, y),
                    AlgorithmVariant::ExploitationOnly => self.plain_percentile(g, y),
                };
                if let Some(m) = target {
                    if self.est.groups[g].dists[y].kind().in_support(m) {
                        self.set_reference(g, y, m)?;
                    }
                }
            }
        }
        for b in &mut self.batches {
            b[0].clear();
            b[1].clear();
        }
        for e in &mut self.explored {
            *e = [0; 2];
        }
        Ok(())
    }

    /// Start a new round: exploration probability, thresholds and bounds.
    pub fn refresh_policy(&mut self) -> Result<()> {
        let eps = match self.config.schedule.kind {
            ScheduleKind::FixedDecay { .. } => next_epsilon(&self.config.schedule, self.observed, 0, 0.0),
            ScheduleKind::Adaptive { .. } => self.pending_epsilon,
        };
        self.policy = ThresholdPolicy::compute(&self.est, self.config.fairness, eps)?;
        self.refresh_expected_fp();
        Ok(())
    }

    /// Snapshot of the estimates and the policy in force, with the exploration
    /// error of the round described by `round` (estimates, policy, explored counts).
    fn snapshot(&self, round: Option<(&Population, &ThresholdPolicy, &[[u64; 2]])>, batch_n: &[[usize; 2]]) -> TrajectoryPoint {
        let groups = self
            .est
            .groups
            .iter()
            .enumerate()
            .map(|(g, gm)| {
                let p = &self.policy.groups[g];
                let label = |y: Label| LabelSnapshot {
                    omega_hat: gm.dists[y].omega(),
                    psi: gm.dists[y].psi(),
                    batch_n: batch_n[g][y],
                };
                let exploration = round
                    .and_then(|(est, pol, counts)| {
                        let gp = &pol.groups[g];
                        exploration_error(&est.groups[g], gp.theta, gp.lb, pol.epsilon, counts[g][0], counts[g][1]).ok()
                    })
                    .unwrap_or(0.0);
                GroupSnapshot {
                    theta: p.theta,
                    lb: p.lb,
                    ub: p.ub,
                    clamped: p.clamped,
                    labels: [label(0), label(1)],
                    exploration_error: exploration,
                }
            })
            .collect();
        TrajectoryPoint {
            t: self.t,
            epsilon: self.policy.epsilon,
            groups,
        }
    }

    pub fn initial_point(&self) -> TrajectoryPoint {
        self.snapshot(None, &vec![[0, 0]; self.est.len()])
    }

    /// Close the current round: update estimates, start the next round, and
    /// return the resulting trajectory point.
    pub fn end_round(&mut self) -> Result<TrajectoryPoint> {
        let batch_n: Vec<[usize; 2]> = self.batches.iter().map(|b| [b[0].len(), b[1].len()]).collect();
        let round_est = self.est.clone();
        let round_policy = self.policy.clone();
        let explored = self.explored.clone();
        self.update()?;
        self.refresh_policy()?;
        Ok(self.snapshot(Some((&round_est, &round_policy, &explored)), &batch_n))
    }
}

/// Run the loop over `arrivals`, updating whenever every batch is full.
pub fn run(
    config: &EngineConfig,
    init: &Population,
    arrivals: impl IntoIterator<Item = AgentArrival>,
    seed: u64,
) -> Result<Trajectory> {
    let mut state = EngineState::new(config.clone(), init.clone(), seed)?;
    run_with_state(&mut state, arrivals)
}

pub fn run_with_state(state: &mut EngineState, arrivals: impl IntoIterator<Item = AgentArrival>) -> Result<Trajectory> {
    let mut traj = Trajectory {
        points: vec![state.initial_point()],
        records: Vec::new(),
    };
    for a in arrivals {
        if a.group >= state.est.len() {
            return Err(Error::DimensionMismatch {
                expected: state.est.len(),
                got: a.group + 1,
            });
        }
        let rec = state.decide(&a);
        state.accumulate(&rec);
        traj.records.push(rec);
        if state.ready_to_update() {
            traj.points.push(state.end_round()?);
        }
    }
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::synth_stream;
    use crate::dist::{DistEstimate, FamilyKind};
    use crate::population::GroupModel;
    use crate::special::std_normal_quantile;

    fn gauss(mean: f64, tau: f64) -> DistEstimate {
        DistEstimate::new(FamilyKind::GaussianLocation { sigma: 1.0 }, mean, tau).unwrap()
    }

    fn single(m0: f64, m1: f64, tau0: f64, tau1: f64) -> Population {
        Population::new(vec![GroupModel::new("a", 1.0, gauss(m0, tau0), gauss(m1, tau1), 0.5).unwrap()]).unwrap()
    }

    fn arrival(t: u64, x: f64, label: Label) -> AgentArrival {
        AgentArrival { t, group: 0, label, x }
    }

    fn state_with(variant: AlgorithmVariant, eps: f64, est: Population) -> EngineState {
        let cfg = EngineConfig {
            variant,
            schedule: EpsilonSchedule::constant(eps),
            ..EngineConfig::default()
        };
        EngineState::new(cfg, est, 1).unwrap()
    }

    #[test]
    fn percentile_examples() {
        assert_eq!(empirical_percentile(&mut [9.0, 5.0, 7.0, 6.0, 8.0], 0.5), 7.0);
        assert_eq!(empirical_percentile(&mut [8.0, 9.0, 10.0], 0.5), 9.0);
        assert!((empirical_percentile(&mut [1.0, 2.0, 3.0, 4.0], 0.6) - 2.8).abs() < 1e-12);
    }

    #[test]
    fn decide_examples() {
        let active = AlgorithmVariant::ActiveDebiasing {
            strategy: UpdateStrategy::MirroredWindow,
        };
        for v in [active, AlgorithmVariant::ExploitationOnly, AlgorithmVariant::PureExploration] {
            let mut s = state_with(v, 1.0, single(7.0, 10.0, 50.0, 50.0));
            assert_eq!(s.decide(&arrival(0, 9.0, 0)).decision, Decision::AdmitExploit);
        }
        let mut s = state_with(active, 1.0, single(7.0, 10.0, 50.0, 50.0));
        // theta = 8.5, lb = 5.5
        let r = s.decide(&arrival(0, 6.0, 0));
        assert!(matches!(r.decision, Decision::AdmitExplore { .. }));
        assert_eq!(r.observed, ObservedLabel::Exact(0));
        for t in 0..1000 {
            let r = s.decide(&arrival(t, 5.0, 1));
            assert_eq!(r.decision, Decision::Reject);
            assert_eq!(r.observed, ObservedLabel::Censored);
        }
        let mut s = state_with(AlgorithmVariant::PureExploration, 1.0, single(7.0, 10.0, 50.0, 50.0));
        assert!(s.decide(&arrival(0, 2.0, 0)).decision.admitted());
        let mut s = state_with(AlgorithmVariant::ExploitationOnly, 1.0, single(7.0, 10.0, 50.0, 50.0));
        assert_eq!(s.decide(&arrival(0, 8.0, 0)).decision, Decision::Reject);
    }

    #[test]
    fn intermediate_noise_rates() {
        let mut s = state_with(AlgorithmVariant::default(), 1.0, single(7.0, 10.0, 50.0, 50.0));
        s.config.explore_action = ExploreAction::Intermediate;
        s.config.gamma = 0.3;
        let n = 20_000;
        let mut noisy = 0;
        for t in 0..n {
            match s.decide(&arrival(t, 7.0, 0)).observed {
                ObservedLabel::Noisy(1) => noisy += 1,
                ObservedLabel::Exact(0) => {}
                other => panic!("unexpected {other:?}"),
            }
            assert_eq!(s.decide(&arrival(t, 7.0, 1)).observed, ObservedLabel::Exact(1));
        }
        let rate = noisy as f64 / n as f64;
        assert!((rate - 0.3).abs() < 4.0 * (0.3f64 * 0.7 / n as f64).sqrt(), "{rate}");
    }

    #[test]
    fn accumulate_examples() {
        let mut s = state_with(AlgorithmVariant::default(), 1.0, single(7.0, 10.0, 50.0, 50.0));
        let rec = |decision, observed, x| DecisionRecord {
            arrival: arrival(0, x, 0),
            decision,
            observed,
            theta: 8.5,
        };
        s.accumulate(&rec(Decision::Reject, ObservedLabel::Censored, 3.0));
        assert!(s.batches[0].iter().all(|b| b.is_empty()));
        s.accumulate(&rec(
            Decision::AdmitExplore {
                action: ExploreAction::Intermediate,
            },
            ObservedLabel::Noisy(1),
            7.0,
        ));
        assert_eq!(s.batches[0][1].len(), 1);
        s.accumulate(&rec(Decision::AdmitExploit, ObservedLabel::Exact(0), 9.0));
        assert_eq!(s.batches[0][0].len(), 1);
    }

    #[test]
    fn readiness_uses_smallest_batch() {
        let two = Population::new(vec![
            GroupModel::new("a", 1.0, gauss(7.0, 50.0), gauss(10.0, 50.0), 0.5).unwrap(),
            GroupModel::new("b", 1.0, gauss(7.0, 50.0), gauss(10.0, 50.0), 0.5).unwrap(),
        ])
        .unwrap();
        let mut s = state_with(AlgorithmVariant::default(), 1.0, two);
        let e = BatchEntry { x: 0.0, t: 0 };
        let fill = |s: &mut EngineState, counts: [usize; 4]| {
            for (i, c) in counts.iter().enumerate() {
                s.batches[i / 2][i % 2] = vec![e; *c];
            }
        };
        fill(&mut s, [50, 50, 50, 49]);
        assert!(!s.ready_to_update());
        fill(&mut s, [50, 50, 50, 50]);
        assert!(s.ready_to_update());
        s.config.batch_min = 1;
        fill(&mut s, [1, 1, 1, 1]);
        assert!(s.ready_to_update());
        fill(&mut s, [1, 0, 1, 1]);
        assert!(!s.ready_to_update());
    }

    fn load(s: &mut EngineState, y: Label, xs: &[f64]) {
        s.batches[0][y] = xs.iter().enumerate().map(|(i, &x)| BatchEntry { x, t: i as u64 }).collect();
    }

    #[test]
    fn mirrored_update_examples() {
        let mut s = state_with(AlgorithmVariant::default(), 1.0, single(7.0, 10.0, 50.0, 50.0));
        load(&mut s, 0, &[6.2, 6.8, 7.4, 9.0, 2.0]);
        s.update().unwrap();
        assert!((s.est.omega(0, 0) - 6.8).abs() < 1e-12);
        assert!((s.est.groups[0].dists[0].psi() - 6.8).abs() < 1e-12);

        let mut s = state_with(AlgorithmVariant::default(), 1.0, single(7.0, 10.0, 50.0, 50.0));
        load(&mut s, 0, &[6.2, 6.8]);
        s.update().unwrap();
        assert_eq!(s.est.omega(0, 0), 7.0);

        // tau = 60: psi = m - z_0.6
        let mut s = state_with(AlgorithmVariant::default(), 1.0, single(7.0, 10.0, 60.0, 50.0));
        let w = s.policy.groups[0].windows[0];
        assert!(w.contains(6.5) && w.contains(7.0));
        load(&mut s, 0, &[6.5, 6.8, 7.0]);
        s.update().unwrap();
        let psi = s.est.groups[0].dists[0].psi();
        assert!((psi - (6.8 - std_normal_quantile(0.6))).abs() < 1e-12);
        assert!((psi - 6.5467).abs() < 1e-4);
    }

    #[test]
    fn smoothing_blends_parameters() {
        let mut s = state_with(AlgorithmVariant::default(), 1.0, single(7.0, 10.0, 50.0, 50.0));
        s.config.smoothing = 0.25;
        load(&mut s, 0, &[6.2, 6.6, 7.4]);
        s.update().unwrap();
        assert!((s.est.omega(0, 0) - (0.75 * 7.0 + 0.25 * 6.6)).abs() < 1e-12);
    }

    #[test]
    fn rate_balanced_examples() {
        let rb = AlgorithmVariant::ActiveDebiasing {
            strategy: UpdateStrategy::RateBalanced,
        };
        let mut s = state_with(rb, 1.0, single(7.0, 10.0, 50.0, 50.0));
        load(&mut s, 0, &[5.0, 6.0, 7.0, 8.0, 9.0]);
        s.update().unwrap();
        assert!((s.est.omega(0, 0) - 7.0).abs() < 1e-12);
    }

    #[test]
    fn rate_balanced_matches_replay_oracle() {
        use crate::rng::stream;
        use rand::Rng;
        let rb = AlgorithmVariant::ActiveDebiasing {
            strategy: UpdateStrategy::RateBalanced,
        };
        // theta = 7 with lb = 6 under tau = 50 estimates N(6.5, 1) / N(7.5, 1)
        let est = single(6.5, 7.5, 50.0, 50.0);
        let mut s = state_with(rb, 0.5, est);
        assert!((s.policy.groups[0].theta - 7.0).abs() < 1e-7, "{}", s.policy.groups[0].theta);
        assert!((s.policy.groups[0].lb - 6.0).abs() < 1e-7, "{}", s.policy.groups[0].lb);
        let truth = gauss(7.0, 50.0);
        let mut rng = stream(99, 0);
        let mut xs = Vec::new();
        while xs.len() < 1000 {
            let x = truth.sample(&mut rng);
            let explored = x < 7.0 && x >= 6.0 && rng.random::<f64>() < 0.5;
            if x >= 7.0 || explored {
                xs.push(x);
            }
        }
        load(&mut s, 0, &xs);
        let mut replay = stream(1, UPDATE_STREAM);
        let mut kept: Vec<f64> = xs.iter().copied().filter(|&x| replay.random::<f64>() < 0.5 || x < 7.0).collect();
        let oracle = empirical_percentile(&mut kept, 0.5);
        s.update().unwrap();
        assert!((s.est.omega(0, 0) - oracle).abs() <= 0.15);
        assert!((s.est.omega(0, 0) - oracle).abs() < 1e-12);
    }

    #[test]
    fn exploitation_only_examples() {
        let mut s = state_with(AlgorithmVariant::ExploitationOnly, 1.0, single(7.0, 10.0, 50.0, 50.0));
        load(&mut s, 1, &[8.0, 9.0, 10.0]);
        s.update().unwrap();
        assert!((s.est.omega(0, 1) - 9.0).abs() < 1e-12);
        assert_eq!(s.est.omega(0, 0), 7.0);

        // upper half of N(7, 1): median 7 + z_0.75
        let mut s = state_with(AlgorithmVariant::ExploitationOnly, 1.0, single(7.0, 10.0, 50.0, 50.0));
        let q = |i: usize| 7.0 + std_normal_quantile(0.5 + 0.5 * (i as f64 + 0.5) / 20_001.0);
        let xs: Vec<f64> = (0..20_001).map(q).collect();
        load(&mut s, 0, &xs);
        s.update().unwrap();
        assert!((s.est.omega(0, 0) - (7.0 + 0.674_489_750_196_081_7)).abs() < 1e-3);
    }

    #[test]
    fn zero_arrivals_yield_initial_point() {
        let est = single(8.0, 11.0, 60.0, 50.0);
        let traj = run(&EngineConfig::default(), &est, std::iter::empty(), 3).unwrap();
        assert_eq!(traj.points.len(), 1);
        assert_eq!(traj.points[0].t, 0);
        assert!(traj.records.is_empty());
    }

    fn synthetic_run(variant: AlgorithmVariant, seed: u64, n: usize) -> (EngineState, Trajectory) {
        let truth = single(7.0, 10.0, 60.0, 50.0);
        let est = single(8.0 - 0.253_347_103_135_799_7, 11.0, 60.0, 50.0);
        let cfg = EngineConfig {
            variant,
            ..EngineConfig::default()
        };
        let mut s = EngineState::new(cfg, est, seed).unwrap();
        s.update_inputs = Some(Vec::new());
        let traj = run_with_state(&mut s, synth_stream(&truth, n, seed)).unwrap();
        (s, traj)
    }

    #[test]
    fn runs_are_deterministic() {
        let (_, a) = synthetic_run(AlgorithmVariant::default(), 5, 5000);
        let (_, b) = synthetic_run(AlgorithmVariant::default(), 5, 5000);
        assert_eq!(a, b);
        assert!(a.points.len() > 1);
    }

    #[test]
    fn rejected_labels_never_reach_updates() {
        for v in [AlgorithmVariant::default(), AlgorithmVariant::PureExploration, AlgorithmVariant::ExploitationOnly] {
            let (s, traj) = synthetic_run(v, 11, 20_000);
            let used = s.update_inputs.unwrap();
            assert!(!used.is_empty());
            for t in used {
                assert!(traj.records[t as usize].decision.admitted());
            }
        }
    }

    #[test]
    fn exploration_respects_lower_bound() {
        let (_, traj) = synthetic_run(AlgorithmVariant::default(), 12, 10_000);
        let mut below = 0;
        for (i, _) in traj.points.iter().enumerate().skip(1) {
            let lb = traj.points[i - 1].groups[0].lb;
            below += traj.round_records(i).iter().filter(|r| r.decision.admitted() && r.arrival.x < lb).count();
        }
        assert_eq!(below, 0);
        let (_, traj) = synthetic_run(AlgorithmVariant::PureExploration, 12, 10_000);
        let mut below = 0;
        for (i, _) in traj.points.iter().enumerate().skip(1) {
            let lb = traj.points[i - 1].groups[0].lb;
            below += traj.round_records(i).iter().filter(|r| r.decision.admitted() && r.arrival.x < lb).count();
        }
        assert!(below > 0);
    }

    /// Mean and standard error of the label-0 displacement after one update from `start`.
    fn single_round_drift(variant: AlgorithmVariant, start: f64, reps: u64) -> (f64, f64) {
        use crate::rng::stream;
        let truth = gauss(7.0, 50.0);
        let mut diffs = Vec::new();
        for rep in 0..reps {
            let est = single(start, 10.0, 50.0, 50.0);
            let mut s = state_with(variant, 0.5, est);
            let theta = s.policy.groups[0].theta;
            let lb = s.policy.groups[0].lb;
            let mut rng = stream(1000 + rep, 0);
            let mut xs = Vec::new();
            while xs.len() < 200 {
                let x = truth.sample(&mut rng);
                let admitted = match variant {
                    AlgorithmVariant::ExploitationOnly => x >= theta,
                    _ => x >= theta || (x >= lb && rng.random::<f64>() < 0.5),
                };
                if admitted {
                    xs.push(x);
                }
            }
            load(&mut s, 0, &xs);
            s.update().unwrap();
            diffs.push(s.est.omega(0, 0) - start);
        }
        let n = diffs.len() as f64;
        let mean = diffs.iter().sum::<f64>() / n;
        let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (mean, (var / n).sqrt())
    }

    #[test]
    fn window_update_drifts_toward_truth() {
        let v = AlgorithmVariant::default();
        let (mean, se) = single_round_drift(v, 6.5, 2000);
        assert!(mean - 2.326 * se > 0.0, "underestimate drift {mean} ± {se}");
        let (mean, se) = single_round_drift(v, 7.5, 2000);
        assert!(mean + 2.326 * se < 0.0, "overestimate drift {mean} ± {se}");
        let (mean, se) = single_round_drift(v, 7.0, 2000);
        assert!(mean.abs() <= 3.0 * se, "fixed point drift {mean} ± {se}");
    }

    #[test]
    fn exploitation_only_drifts_upward_from_truth() {
        let (mean, se) = single_round_drift(AlgorithmVariant::ExploitationOnly, 7.0, 2000);
        assert!(mean - 2.326 * se > 0.0, "{mean} ± {se}");
    }
}
