//! Two-stage exploration problem: explore at stage 1 with a uniform (exact) or
//! intermediate (noisy, cheaper) action or not at all, then exploit at stage 2.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::synth_stream;
use crate::engine::{AlgorithmVariant, EngineConfig, EngineState, UpdateStrategy};
use crate::error::{Error, Result};
use crate::policy::{optimal_threshold, EpsilonSchedule, GroupPolicy};
use crate::population::{GroupModel, Population};
use crate::rng::derive_seed;
use crate::trajectory::{Decision, ExploreAction, ObservedLabel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExplorationAction {
    NoExplore,
    Uniform,
    Intermediate,
}

impl ExplorationAction {
    pub const ALL: [ExplorationAction; 3] = [Self::Intermediate, Self::Uniform, Self::NoExplore];

    pub fn name(&self) -> &'static str {
        match self {
            Self::NoExplore => "no_explore",
            Self::Uniform => "uniform",
            Self::Intermediate => "intermediate",
        }
    }
}

/// Loss levels and sizes of the two-stage problem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MdpCostParams {
    /// Cost of turning away a qualified agent (`l1h`), or of offering one only the intermediate action (`l1l`).
    pub l1h: f64,
    pub l1l: f64,
    /// Cost of fully admitting an unqualified agent (`l2h`), or of one failing the intermediate action (`l2l`).
    pub l2h: f64,
    pub l2l: f64,
    /// Probability that an unqualified agent passes the intermediate action.
    pub gamma: f64,
    pub n1: usize,
    pub n2: usize,
    /// Exploration probability at stage 1.
    pub eps: f64,
}

impl MdpCostParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.l1l < self.l1h) {
            return Err(Error::config("mdp.l1l", "must be below mdp.l1h"));
        }
        if !(self.l2l < self.l2h) {
            return Err(Error::config("mdp.l2l", "must be below mdp.l2h"));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::config("mdp.gamma", "must lie in [0, 1]"));
        }
        if self.n1 == 0 || self.n2 == 0 {
            return Err(Error::config("mdp.n1", "stage sizes must be positive"));
        }
        if !(0.0..=1.0).contains(&self.eps) {
            return Err(Error::config("mdp.eps", "must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Expected misclassification cost of `n` arrivals at threshold `theta`.
pub fn expected_miss_cost(theta: f64, truth: &GroupModel, costs: &MdpCostParams, n: usize) -> f64 {
    n as f64
        * (costs.l1h * truth.alpha[1] * truth.dists[1].cdf(theta)
            + costs.l2h * truth.alpha[0] * (1.0 - truth.dists[0].cdf(theta)))
}

/// Expected change in cost from exploring `[lb, theta)` with `action` over `n` arrivals.
pub fn expected_exp_cost(
    action: ExplorationAction,
    theta: f64,
    lb: f64,
    costs: &MdpCostParams,
    truth: &GroupModel,
    n: usize,
) -> Result<f64> {
    if lb > theta {
        return Err(Error::Ordering(format!("lower bound {lb} above threshold {theta}")));
    }
    let mass = |y: usize| truth.dists[y].cdf(theta) - truth.dists[y].cdf(lb);
    let scale = n as f64 * costs.eps;
    let (qualified, unqualified) = match action {
        ExplorationAction::NoExplore => return Ok(0.0),
        ExplorationAction::Uniform => (-costs.l1h, costs.l2h),
        ExplorationAction::Intermediate => (-costs.l1h + costs.l1l, costs.l2l * (1.0 - costs.gamma)),
    };
    Ok(scale * (qualified * truth.alpha[1] * mass(1) + unqualified * truth.alpha[0] * mass(0)))
}

/// Sufficient condition under which the intermediate action costs less in expectation.
pub fn theorem5_condition(costs: &MdpCostParams, alpha0: f64, alpha1: f64) -> bool {
    let lhs = (1.0 - costs.n2 as f64 / costs.n1 as f64) * (costs.l2h * alpha0 - costs.l1h * alpha1);
    lhs >= costs.l2l * (1.0 - costs.gamma) * alpha0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageOutcome {
    pub action: ExplorationAction,
    pub exp_cost: f64,
    pub miss_cost_1: f64,
    pub miss_cost_2: f64,
    pub theta_2: f64,
    pub abs_gap: f64,
}

impl StageOutcome {
    pub fn total(&self) -> f64 {
        self.exp_cost + self.miss_cost_1 + self.miss_cost_2
    }
}

fn single(g: &GroupModel) -> Result<Population> {
    Population::new(vec![g.clone()])
}

/// Stage-1 policy for `init`, as used by [`simulate_two_stage`].
pub fn stage_one_policy(init: &GroupModel) -> Result<GroupPolicy> {
    Ok(GroupPolicy::build(init, optimal_threshold(init)?))
}

/// One replication. Stage 1 explores with `action` for `n1` arrivals and updates
/// the estimate once; stage 2 exploits the refitted threshold for `n2` arrivals.
///
/// Stage-1 miss cost charges every arrival as if nobody below the threshold
/// were admitted; the exploration cost then corrects for each explored agent.
pub fn simulate_two_stage(
    action: ExplorationAction,
    init: &GroupModel,
    truth: &GroupModel,
    costs: &MdpCostParams,
    update: UpdateStrategy,
    seed: u64,
) -> Result<StageOutcome> {
    costs.validate()?;
    let cfg = EngineConfig {
        variant: AlgorithmVariant::ActiveDebiasing { strategy: update },
        schedule: EpsilonSchedule::constant(1.0),
        batch_min: 1,
        explore_action: match action {
            ExplorationAction::Intermediate => ExploreAction::Intermediate,
            _ => ExploreAction::Uniform,
        },
        gamma: costs.gamma,
        ..EngineConfig::default()
    };
    let mut state = EngineState::new(cfg, single(init)?, seed)?;
    state.policy.epsilon = match action {
        ExplorationAction::NoExplore => 0.0,
        _ => costs.eps,
    };
    let theta_1 = state.policy.groups[0].theta;
    let truth_pop = single(truth)?;

    let (mut exp_cost, mut miss_cost_1) = (0.0, 0.0);
    for a in synth_stream(&truth_pop, costs.n1, seed) {
        let rec = state.decide(&a);
        state.accumulate(&rec);
        match (a.label, a.x >= theta_1) {
            (1, false) => miss_cost_1 += costs.l1h,
            (0, true) => miss_cost_1 += costs.l2h,
            _ => {}
        }
        if let Decision::AdmitExplore { action: kind } = rec.decision {
            exp_cost += match (kind, a.label, rec.observed) {
                (ExploreAction::Uniform, 1, _) => -costs.l1h,
                (ExploreAction::Uniform, _, _) => costs.l2h,
                (ExploreAction::Intermediate, 1, _) => -costs.l1h + costs.l1l,
                (ExploreAction::Intermediate, _, ObservedLabel::Exact(0)) => costs.l2l,
                (ExploreAction::Intermediate, _, _) => 0.0,
            };
        }
    }
    state.update()?;
    let theta_2 = optimal_threshold(&state.est.groups[0])?;

    let mut miss_cost_2 = 0.0;
    for a in synth_stream(&truth_pop, costs.n2, derive_seed(seed, 1)) {
        match (a.label, a.x >= theta_2) {
            (1, false) => miss_cost_2 += costs.l1h,
            (0, true) => miss_cost_2 += costs.l2h,
            _ => {}
        }
    }
    let theta_star = optimal_threshold(truth)?;
    Ok(StageOutcome {
        action,
        exp_cost,
        miss_cost_1,
        miss_cost_2,
        theta_2,
        abs_gap: (theta_star - theta_2).abs(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSe {
    pub mean: f64,
    pub se: f64,
}

impl MeanSe {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = if values.len() > 1 {
            values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Self {
            mean,
            se: (var / n).sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionSummary {
    pub action: ExplorationAction,
    pub exp_cost: MeanSe,
    pub miss_cost_1: MeanSe,
    pub miss_cost_2: MeanSe,
    pub total: MeanSe,
    pub abs_gap: MeanSe,
    /// Paired difference against the intermediate action (`this - intermediate`).
    pub total_diff_vs_intermediate: MeanSe,
    pub abs_gap_diff_vs_intermediate: MeanSe,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdpReport {
    pub replications: usize,
    pub actions: Vec<ActionSummary>,
    pub theorem5_condition: bool,
    /// Uniform exploration lands closer to the optimal threshold than intermediate.
    pub thm4_ordering: bool,
    /// Intermediate costs no more than uniform; only evaluated when the condition holds.
    pub thm5_ordering: Option<bool>,
}

impl MdpReport {
    pub fn action(&self, a: ExplorationAction) -> &ActionSummary {
        self.actions.iter().find(|s| s.action == a).expect("every action is summarized")
    }
}

/// Replicate every action under common random numbers: replication `r` uses
/// seed `derive_seed(master_seed, r)` for all actions.
pub fn compare_actions(
    init: &GroupModel,
    truth: &GroupModel,
    costs: &MdpCostParams,
    update: UpdateStrategy,
    replications: usize,
    master_seed: u64,
) -> Result<MdpReport> {
    if replications < 1 {
        return Err(Error::config("replications", "must be at least 1"));
    }
    costs.validate()?;
    let outcomes: Vec<[StageOutcome; 3]> = (0..replications)
        .into_par_iter()
        .map(|r| {
            let seed = derive_seed(master_seed, r as u64);
            let run = |a| simulate_two_stage(a, init, truth, costs, update, seed);
            Ok([
                run(ExplorationAction::ALL[0])?,
                run(ExplorationAction::ALL[1])?,
                run(ExplorationAction::ALL[2])?,
            ])
        })
        .collect::<Result<_>>()?;
    let column = |i: usize, f: &dyn Fn(&StageOutcome) -> f64| MeanSe::of(&outcomes.iter().map(|o| f(&o[i])).collect::<Vec<_>>());
    let actions: Vec<ActionSummary> = ExplorationAction::ALL
        .iter()
        .enumerate()
        .map(|(i, &action)| ActionSummary {
            action,
            exp_cost: column(i, &|o| o.exp_cost),
            miss_cost_1: column(i, &|o| o.miss_cost_1),
            miss_cost_2: column(i, &|o| o.miss_cost_2),
            total: column(i, &|o| o.total()),
            abs_gap: column(i, &|o| o.abs_gap),
            total_diff_vs_intermediate: MeanSe::of(&outcomes.iter().map(|o| o[i].total() - o[0].total()).collect::<Vec<_>>()),
            abs_gap_diff_vs_intermediate: MeanSe::of(&outcomes.iter().map(|o| o[i].abs_gap - o[0].abs_gap).collect::<Vec<_>>()),
        })
        .collect();
    let condition = theorem5_condition(costs, truth.alpha[0], truth.alpha[1]);
    let uni = &actions[1];
    let inter = &actions[0];
    Ok(MdpReport {
        replications,
        theorem5_condition: condition,
        thm4_ordering: uni.abs_gap.mean <= inter.abs_gap.mean,
        thm5_ordering: condition.then_some(inter.total.mean <= uni.total.mean),
        actions,
    })
}
