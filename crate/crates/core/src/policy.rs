//! Threshold selection, exploration bounds and exploration-probability schedules.

use serde::{Deserialize, Serialize};

use crate::dist::DistEstimate;
use crate::error::{Error, Result};
use crate::population::{GroupModel, Population};
use crate::special::golden_min;

const GRID_POINTS: usize = 2001;
const REFINE_TOL: f64 = 1e-8;
/// Quantile levels used when a bound leaves the unit interval.
const CLAMP_LOW: f64 = 1e-4;
const CLAMP_HIGH: f64 = 1.0 - 1e-4;
/// Range of the common true-positive rate searched under equality of opportunity.
const TPR_RANGE: (f64, f64) = (5e-4, 1.0 - 5e-4);
/// Tail mass left outside the threshold search range; small enough that
/// boundary optima (reject or admit almost everyone) are reachable.
const RANGE_TAIL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum FairnessRule {
    #[default]
    None,
    /// One threshold shared by every group.
    SameDecisionRule,
    /// True-positive rates may differ across groups by at most `slack`.
    EqualOpportunity { slack: f64 },
}

impl FairnessRule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            FairnessRule::EqualOpportunity { slack } if !(slack >= 0.0 && slack.is_finite()) => {
                Err(Error::config("fairness.slack", "must be a nonnegative number"))
            }
            _ => Ok(()),
        }
    }
}

/// Expected misclassification rate of `group` at threshold `theta`.
pub fn misclassification(group: &GroupModel, theta: f64) -> f64 {
    group.alpha[1] * group.dists[1].cdf(theta) + group.alpha[0] * (1.0 - group.dists[0].cdf(theta))
}

fn check_nondegenerate(group: &GroupModel) -> Result<()> {
    if group.alpha[1] <= 0.0 || group.alpha[1] >= 1.0 {
        return Err(Error::Degenerate(format!(
            "group {}: label fraction alpha1 = {} leaves no interior optimum",
            group.name, group.alpha[1]
        )));
    }
    Ok(())
}

fn feature_range<'a>(dists: impl IntoIterator<Item = &'a DistEstimate>) -> Result<(f64, f64)> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for d in dists {
        lo = lo.min(d.quantile(RANGE_TAIL)?);
        hi = hi.max(d.quantile(1.0 - RANGE_TAIL)?);
    }
    Ok((lo, hi))
}

/// Dense grid followed by golden-section refinement around the best grid point.
/// Ties on the grid go to the smallest argument.
fn grid_then_refine(lo: f64, hi: f64, f: impl Fn(f64) -> f64) -> (f64, f64) {
    let step = (hi - lo) / (GRID_POINTS - 1) as f64;
    let at = |i: usize| if i == GRID_POINTS - 1 { hi } else { lo + step * i as f64 };
    let mut best = (0, f(lo));
    for i in 1..GRID_POINTS {
        let v = f(at(i));
        if v < best.1 {
            best = (i, v);
        }
    }
    let a = at(best.0.saturating_sub(1));
    let b = at((best.0 + 1).min(GRID_POINTS - 1));
    let (x, fx) = golden_min(a, b, REFINE_TOL * (1.0 + a.abs().max(b.abs())) * 1e-2, &f);
    if fx < best.1 {
        (x, fx)
    } else {
        (at(best.0), best.1)
    }
}

/// Loss-minimizing threshold of one group with no fairness constraint.
pub fn optimal_threshold(group: &GroupModel) -> Result<f64> {
    check_nondegenerate(group)?;
    let (lo, hi) = feature_range(group.dists.iter())?;
    Ok(grid_then_refine(lo, hi, |t| misclassification(group, t)).0)
}

/// Threshold of each group at common true-positive rate `q`.
fn theta_at_tpr(group: &GroupModel, q: f64) -> f64 {
    group.dists[1].quantile(1.0 - q).expect("tpr inside (0, 1)")
}

fn tpr_objective(group: &GroupModel, q: f64) -> f64 {
    if q <= 0.0 || q >= 1.0 {
        return f64::INFINITY;
    }
    misclassification(group, theta_at_tpr(group, q))
}

/// Thresholds for every group under `rule`, in group order.
pub fn optimal_thresholds_fair(pop: &Population, rule: FairnessRule) -> Result<Vec<f64>> {
    rule.validate()?;
    for g in &pop.groups {
        check_nondegenerate(g)?;
    }
    match rule {
        FairnessRule::None => pop.groups.iter().map(optimal_threshold).collect(),
        FairnessRule::SameDecisionRule => {
            let (lo, hi) = feature_range(pop.groups.iter().flat_map(|g| g.dists.iter()))?;
            let total = |t: f64| pop.groups.iter().map(|g| misclassification(g, t)).sum::<f64>();
            let theta = grid_then_refine(lo, hi, total).0;
            Ok(vec![theta; pop.len()])
        }
        FairnessRule::EqualOpportunity { slack } => {
            let (q_lo, q_hi) = TPR_RANGE;
            let shared = |q: f64| pop.groups.iter().map(|g| tpr_objective(g, q)).sum::<f64>();
            let (q, mut best) = grid_then_refine(q_lo, q_hi, shared);
            let mut qs = vec![q; pop.len()];
            if slack > 0.0 {
                if pop.len() != 2 {
                    return Err(Error::config("fairness.slack", "a positive slack needs exactly two groups"));
                }
                let (ga, gb) = (&pop.groups[0], &pop.groups[1]);
                let free_a = grid_then_refine(q_lo, q_hi, |q| tpr_objective(ga, q));
                let free_b = grid_then_refine(q_lo, q_hi, |q| tpr_objective(gb, q));
                if (free_a.0 - free_b.0).abs() <= slack {
                    if free_a.1 + free_b.1 < best {
                        qs = vec![free_a.0, free_b.0];
                    }
                } else {
                    // The slack binds: q_b = q_a + d with |d| = slack.
                    for d in [slack, -slack] {
                        let f = |q: f64| tpr_objective(ga, q) + tpr_objective(gb, q + d);
                        let lo = q_lo.max(q_lo - d);
                        let hi = q_hi.min(q_hi - d);
                        if lo >= hi {
                            continue;
                        }
                        let (qa, v) = grid_then_refine(lo, hi, f);
                        if v < best {
                            best = v;
                            qs = vec![qa, qa + d];
                        }
                    }
                }
            }
            Ok(pop.groups.iter().zip(&qs).map(|(g, &q)| theta_at_tpr(g, q)).collect())
        }
    }
}

/// True-positive rate of `group` at `theta` under its label-1 distribution.
pub fn true_positive_rate(group: &GroupModel, theta: f64) -> f64 {
    1.0 - group.dists[1].cdf(theta)
}

/// A bound value and whether it had to be clamped.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bound {
    pub value: f64,
    pub clamped: bool,
}

/// Reflection of `theta` about the reference point in CDF space:
/// `F^-1(2 F(omega) - F(theta))`, clamped to the `CLAMP_*` quantiles.
fn mirror(est: &DistEstimate, theta: f64) -> Bound {
    let arg = 2.0 * est.cdf(est.omega()) - est.cdf(theta);
    let (p, clamped) = if arg <= 0.0 {
        (CLAMP_LOW, true)
    } else if arg >= 1.0 {
        (CLAMP_HIGH, true)
    } else {
        (arg, false)
    };
    Bound {
        value: est.quantile(p).expect("level inside (0, 1)"),
        clamped,
    }
}

/// Exploration lower bound: the reference point of `est0` is the median of
/// `est0` truncated to `(lb, theta)`.
pub fn lower_bound(est0: &DistEstimate, theta: f64) -> Bound {
    mirror(est0, theta)
}

/// Upper update bound: the reference point of `est1` is the median of `est1`
/// truncated to `(theta, ub)`. Requires `theta <= omega1`.
pub fn upper_bound(est1: &DistEstimate, theta: f64) -> Result<Bound> {
    if theta > est1.omega() {
        return Err(Error::Ordering(format!(
            "threshold {theta} exceeds the label-1 reference point {}",
            est1.omega()
        )));
    }
    Ok(mirror(est1, theta))
}

/// Open interval of features used to re-estimate one label.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub lo: f64,
    pub hi: f64,
}

impl Window {
    pub fn contains(&self, x: f64) -> bool {
        x > self.lo && x < self.hi
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupPolicy {
    pub theta: f64,
    /// Exploration floor: agents in `[lb, theta)` may be admitted with probability epsilon.
    pub lb: f64,
    pub ub: f64,
    /// Update windows per label.
    pub windows: [Window; 2],
    /// Set when a bound was clamped or a reference point sat on the wrong side of `theta`.
    pub clamped: bool,
}

impl GroupPolicy {
    /// Thresholds and bounds for one group given its current estimate and threshold.
    ///
    /// The regular case is `omega0 <= theta <= omega1`: label 0 is re-estimated
    /// in `(lb, theta)` and label 1 in `(theta, ub)`. When a reference point is on
    /// the other side of `theta`, that label's window is mirrored to the other
    /// side and the policy is flagged.
    pub fn build(est: &GroupModel, theta: f64) -> Self {
        let (d0, d1) = (&est.dists[0], &est.dists[1]);
        let mut clamped = false;

        let (lb, window0) = if theta >= d0.omega() {
            let b = lower_bound(d0, theta);
            clamped |= b.clamped;
            let lb = b.value.min(theta);
            (lb, Window { lo: lb, hi: theta })
        } else {
            let b = mirror(d0, theta);
            clamped = true;
            (theta, Window { lo: theta, hi: b.value.max(theta) })
        };

        let (ub, window1) = match upper_bound(d1, theta) {
            Ok(b) => {
                clamped |= b.clamped;
                let ub = b.value.max(theta);
                (ub, Window { lo: theta, hi: ub })
            }
            Err(_) => {
                let b = mirror(d1, theta);
                clamped = true;
                (theta, Window { lo: b.value.max(lb).min(theta), hi: theta })
            }
        };

        Self {
            theta,
            lb,
            ub,
            windows: [window0, window1],
            clamped,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdPolicy {
    pub groups: Vec<GroupPolicy>,
    pub epsilon: f64,
}

impl ThresholdPolicy {
    pub fn compute(est: &Population, rule: FairnessRule, epsilon: f64) -> Result<Self> {
        let thetas = optimal_thresholds_fair(est, rule)?;
        let groups = est.groups.iter().zip(thetas).map(|(g, t)| GroupPolicy::build(g, t)).collect();
        Ok(Self { groups, epsilon })
    }

    pub fn thetas(&self) -> Vec<f64> {
        self.groups.iter().map(|g| g.theta).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "schedule", rename_all = "snake_case")]
pub enum ScheduleKind {
    /// Subtract `step` after every `every` observed samples.
    FixedDecay { step: f64, every: u64 },
    /// Proportional to the relative gap between observed and expected errors
    /// above the threshold, re-evaluated every `window` arrivals.
    Adaptive { gain: f64, window: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsilonSchedule {
    pub kind: ScheduleKind,
    pub eps0: f64,
    pub eps_min: f64,
    pub eps_max: f64,
}

impl EpsilonSchedule {
    pub const DEFAULT_EPS0: f64 = 0.5;
    pub const DEFAULT_EPS_MIN: f64 = 0.01;

    pub fn fixed_decay(eps0: f64, step: f64, every: u64) -> Self {
        Self {
            kind: ScheduleKind::FixedDecay { step, every },
            eps0,
            eps_min: Self::DEFAULT_EPS_MIN,
            eps_max: 1.0,
        }
    }

    pub fn adaptive(eps0: f64, gain: f64, window: u64) -> Self {
        Self {
            kind: ScheduleKind::Adaptive { gain, window },
            eps0,
            eps_min: Self::DEFAULT_EPS_MIN,
            eps_max: 1.0,
        }
    }

    /// A constant exploration probability.
    pub fn constant(eps: f64) -> Self {
        Self {
            kind: ScheduleKind::FixedDecay { step: 0.0, every: 1 },
            eps0: eps,
            eps_min: eps,
            eps_max: eps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps_min > 0.0 && self.eps_min <= self.eps0 && self.eps0 <= self.eps_max && self.eps_max <= 1.0) {
            return Err(Error::config(
                "epsilon",
                format!(
                    "need 0 < eps_min <= eps0 <= eps_max <= 1, got {} / {} / {}",
                    self.eps_min, self.eps0, self.eps_max
                ),
            ));
        }
        match self.kind {
            ScheduleKind::FixedDecay { step, every } => {
                if !(step >= 0.0 && step.is_finite()) {
                    return Err(Error::config("epsilon.step", "must be nonnegative"));
                }
                if every == 0 {
                    return Err(Error::config("epsilon.every", "must be positive"));
                }
            }
            ScheduleKind::Adaptive { gain, window } => {
                if !(gain > 0.0 && gain.is_finite()) {
                    return Err(Error::config("epsilon.gain", "must be positive"));
                }
                if window == 0 {
                    return Err(Error::config("epsilon.window", "must be positive"));
                }
            }
        }
        Ok(())
    }
}

/// Exploration probability after `observed` samples, given `err_obs`
/// observed and `err_exp` expected misclassifications over the adaptive window.
pub fn next_epsilon(schedule: &EpsilonSchedule, observed: u64, err_obs: u64, err_exp: f64) -> f64 {
    let raw = match schedule.kind {
        ScheduleKind::FixedDecay { step, every } => schedule.eps0 - step * (observed / every) as f64,
        ScheduleKind::Adaptive { gain, .. } => gain * (err_obs as f64 - err_exp).abs() / err_exp.max(1.0),
    };
    raw.clamp(schedule.eps_min, schedule.eps_max)
}
