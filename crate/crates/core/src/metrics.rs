//! Accuracy, fairness gap, estimate bias, regret against an oracle, and the net
//! exploration error of a round.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{optimal_thresholds_fair, FairnessRule};
use crate::population::{GroupModel, Population};
use crate::trajectory::DecisionRecord;

/// Loss-minimizing thresholds of the true population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleRef {
    pub theta_star: Vec<f64>,
}

impl OracleRef {
    pub fn compute(truth: &Population, rule: FairnessRule) -> Result<Self> {
        Ok(Self {
            theta_star: optimal_thresholds_fair(truth, rule)?,
        })
    }

    pub fn admits(&self, rec: &DecisionRecord) -> bool {
        rec.arrival.x >= self.theta_star[rec.arrival.group]
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn add(&mut self, admitted: bool, label: usize) {
        match (admitted, label) {
            (true, 1) => self.tp += 1,
            (true, _) => self.fp += 1,
            (false, 1) => self.fn_ += 1,
            (false, _) => self.tn += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn errors(&self) -> u64 {
        self.fp + self.fn_
    }
}

/// Counts of the rule `x >= theta_ref[group]` against true labels.
pub fn score_decisions(records: &[DecisionRecord], theta_ref: &[f64]) -> ConfusionCounts {
    let mut c = ConfusionCounts::default();
    for r in records {
        c.add(r.arrival.x >= theta_ref[r.arrival.group], r.arrival.label);
    }
    c
}

/// Counts of the decisions actually taken, exploration included.
pub fn realized_confusion(records: &[DecisionRecord]) -> ConfusionCounts {
    let mut c = ConfusionCounts::default();
    for r in records {
        c.add(r.decision.admitted(), r.arrival.label);
    }
    c
}

fn is_error(admitted: bool, label: usize) -> bool {
    admitted != (label == 1)
}

/// Cumulative excess errors weighted by `exp(beta * |x - deciding threshold|)`.
pub fn weighted_regret(records: &[DecisionRecord], oracle: &OracleRef, beta: f64) -> Vec<f64> {
    let mut acc = 0.0;
    records
        .iter()
        .map(|r| {
            let y = r.arrival.label;
            let x = r.arrival.x;
            if is_error(r.decision.admitted(), y) {
                acc += (beta * (x - r.theta).abs()).exp();
            }
            if is_error(oracle.admits(r), y) {
                acc -= (beta * (x - oracle.theta_star[r.arrival.group]).abs()).exp();
            }
            acc
        })
        .collect()
}

/// Cumulative `(FP + FN)` of the algorithm minus that of the oracle, per arrival.
pub fn regret(records: &[DecisionRecord], oracle: &OracleRef) -> Vec<f64> {
    weighted_regret(records, oracle, 0.0)
}

/// Net exploration error of one group in one round: expected unqualified minus
/// qualified agents admitted below the threshold, given the counts `n0`, `n1`
/// of explored agents by label.
pub fn exploration_error(group: &GroupModel, theta: f64, lb: f64, epsilon: f64, n0: u64, n1: u64) -> Result<f64> {
    let share = |y: usize| -> Result<f64> {
        let d = &group.dists[y];
        let at = d.cdf(theta);
        if at <= 0.0 {
            return Err(Error::Domain(format!("label-{y} CDF vanishes at the threshold {theta}")));
        }
        Ok((at - d.cdf(lb)) / at)
    };
    Ok(share(0)? * epsilon * n0 as f64 - share(1)? * epsilon * n1 as f64)
}

/// Largest difference in true-positive rate across groups of the rule
/// `x >= thresholds[group]`. `None` when some group has no qualified agents.
pub fn eo_gap(records: &[DecisionRecord], thresholds: &[f64]) -> Option<f64> {
    let mut pos = vec![(0u64, 0u64); thresholds.len()];
    for r in records.iter().filter(|r| r.arrival.label == 1) {
        let e = &mut pos[r.arrival.group];
        e.1 += 1;
        if r.arrival.x >= thresholds[r.arrival.group] {
            e.0 += 1;
        }
    }
    if pos.iter().any(|p| p.1 == 0) {
        return None;
    }
    let rates: Vec<f64> = pos.iter().map(|&(hit, n)| hit as f64 / n as f64).collect();
    let hi = rates.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lo = rates.iter().cloned().fold(f64::INFINITY, f64::min);
    Some(hi - lo)
}

/// Equality-of-opportunity gap of the decisions actually taken.
pub fn realized_eo_gap(records: &[DecisionRecord], groups: usize) -> Option<f64> {
    let mut pos = vec![(0u64, 0u64); groups];
    for r in records.iter().filter(|r| r.arrival.label == 1) {
        let e = &mut pos[r.arrival.group];
        e.1 += 1;
        e.0 += r.decision.admitted() as u64;
    }
    if pos.iter().any(|p| p.1 == 0) {
        return None;
    }
    let rates: Vec<f64> = pos.iter().map(|&(hit, n)| hit as f64 / n as f64).collect();
    let hi = rates.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lo = rates.iter().cloned().fold(f64::INFINITY, f64::min);
    Some(hi - lo)
}

/// Fraction of correct decisions. `None` for an empty slice.
pub fn accuracy(records: &[DecisionRecord]) -> Option<f64> {
    if records.is_empty() {
        return None;
    }
    let c = realized_confusion(records);
    Some((c.tp + c.tn) as f64 / c.total() as f64)
}

/// `|omega_hat - omega|` per group and label.
pub fn bias_error(est: &Population, truth: &Population) -> Vec<[f64; 2]> {
    est.groups
        .iter()
        .zip(&truth.groups)
        .map(|(e, t)| [0, 1].map(|y| (e.dists[y].omega() - t.dists[y].omega()).abs()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::{DistEstimate, FamilyKind};
    use crate::special::std_normal_cdf;
    use crate::trajectory::{AgentArrival, Decision, ExploreAction, ObservedLabel};

    fn rec(group: usize, x: f64, label: usize, decision: Decision, theta: f64) -> DecisionRecord {
        DecisionRecord {
            arrival: AgentArrival { t: 0, group, label, x },
            decision,
            observed: if decision.admitted() {
                ObservedLabel::Exact(label)
            } else {
                ObservedLabel::Censored
            },
            theta,
        }
    }

    fn gauss(mean: f64) -> DistEstimate {
        DistEstimate::new(FamilyKind::GaussianLocation { sigma: 1.0 }, mean, 50.0).unwrap()
    }

    #[test]
    fn score_examples() {
        assert_eq!(score_decisions(&[], &[0.0]), ConfusionCounts::default());
        let c = score_decisions(&[rec(0, 9.0, 0, Decision::Reject, 8.0)], &[8.0]);
        assert_eq!(c.fp, 1);
        let c = score_decisions(&[rec(0, 7.0, 1, Decision::Reject, 8.0)], &[8.0]);
        assert_eq!(c.fn_, 1);
        assert_eq!(c.total(), 1);
    }

    #[test]
    fn regret_examples() {
        let oracle = OracleRef { theta_star: vec![8.0] };
        let xs = [6.0, 7.5, 8.2, 9.0, 10.0];
        let matched: Vec<_> = xs
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let d = if x >= 8.0 { Decision::AdmitExploit } else { Decision::Reject };
                rec(0, x, i % 2, d, 8.0)
            })
            .collect();
        assert!(regret(&matched, &oracle).iter().all(|&r| r == 0.0));
        let explore = rec(
            0,
            7.0,
            0,
            Decision::AdmitExplore {
                action: ExploreAction::Uniform,
            },
            8.0,
        );
        assert_eq!(regret(&[explore], &oracle), vec![1.0]);
        let fp = rec(0, 9.0, 0, Decision::AdmitExploit, 8.0);
        let w = weighted_regret(&[fp], &OracleRef { theta_star: vec![100.0] }, 1.0);
        assert!((w[0] - std::f64::consts::E).abs() < 1e-12);
    }

    #[test]
    fn exploration_error_examples() {
        let g = GroupModel::new("a", 1.0, gauss(7.0), gauss(10.0), 0.5).unwrap();
        assert_eq!(exploration_error(&g, 8.0, 8.0, 0.3, 100, 40).unwrap(), 0.0);
        let v = exploration_error(&g, 8.0, -1e9, 0.3, 100, 40).unwrap();
        assert!((v - 0.3 * 60.0).abs() < 1e-9);
        let s0 = (std_normal_cdf(1.0) - std_normal_cdf(-1.0)) / std_normal_cdf(1.0);
        let s1 = (std_normal_cdf(-2.0) - std_normal_cdf(-4.0)) / std_normal_cdf(-2.0);
        let oracle = s0 * 0.3 * 100.0 - s1 * 0.3 * 40.0;
        let v = exploration_error(&g, 8.0, 6.0, 0.3, 100, 40).unwrap();
        assert!((v - oracle).abs() < 1e-12, "{v} vs {oracle}");
        // linear in epsilon and each count
        let d = exploration_error(&g, 8.0, 6.0, 0.6, 200, 80).unwrap();
        assert!((d - 4.0 * v).abs() < 1e-9);
        let far = GroupModel::new("a", 1.0, gauss(7.0), gauss(1e3), 0.5).unwrap();
        assert!(exploration_error(&far, -1e3, -1e4, 0.3, 1, 1).is_err());
    }

    #[test]
    fn eo_gap_examples() {
        let mut rs = Vec::new();
        for g in 0..2 {
            for x in [8.0, 9.0, 10.0, 11.0] {
                rs.push(rec(g, x, 1, Decision::Reject, 9.5));
            }
        }
        assert_eq!(eo_gap(&rs, &[9.5, 9.5]), Some(0.0));
        assert_eq!(eo_gap(&rs, &[f64::INFINITY, f64::NEG_INFINITY]), Some(1.0));
        // group 0: 2 of 4 pass 9.5; group 1: 3 of 4 pass 8.5
        assert_eq!(eo_gap(&rs, &[9.5, 8.5]), Some(0.25));
        assert_eq!(eo_gap(&rs[..4], &[9.5, 9.5]), None);
    }

    #[test]
    fn bias_error_examples() {
        let truth = Population::new(vec![GroupModel::new("a", 1.0, gauss(7.0), gauss(10.0), 0.5).unwrap()]).unwrap();
        assert_eq!(bias_error(&truth, &truth), vec![[0.0, 0.0]]);
        let est = Population::new(vec![GroupModel::new("a", 1.0, gauss(8.0), gauss(11.0), 0.5).unwrap()]).unwrap();
        assert_eq!(bias_error(&est, &truth), vec![[1.0, 1.0]]);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn records() -> impl Strategy<Value = Vec<DecisionRecord>> {
            proptest::collection::vec((0usize..2, -3.0..3.0f64, 0usize..2, 0u8..3, -1.0..1.0f64), 0..200).prop_map(|v| {
                v.into_iter()
                    .map(|(g, x, y, d, th)| {
                        let decision = match d {
                            0 => Decision::Reject,
                            1 => Decision::AdmitExploit,
                            _ => Decision::AdmitExplore {
                                action: ExploreAction::Uniform,
                            },
                        };
                        rec(g, x, y, decision, th)
                    })
                    .collect()
            })
        }

        proptest! {
            #[test]
            fn unit_weights_reproduce_regret(rs in records(), a in -1.0..1.0f64, b in -1.0..1.0f64) {
                let oracle = OracleRef { theta_star: vec![a, b] };
                prop_assert_eq!(weighted_regret(&rs, &oracle, 0.0), regret(&rs, &oracle));
            }

            #[test]
            fn oracle_matching_decisions_have_zero_regret(rs in records(), a in -1.0..1.0f64, b in -1.0..1.0f64) {
                let oracle = OracleRef { theta_star: vec![a, b] };
                let matched: Vec<_> = rs.iter().map(|r| {
                    let mut r = *r;
                    r.theta = oracle.theta_star[r.arrival.group];
                    r.decision = if oracle.admits(&r) { Decision::AdmitExploit } else { Decision::Reject };
                    r
                }).collect();
                prop_assert!(regret(&matched, &oracle).iter().all(|&v| v == 0.0));
                prop_assert!(weighted_regret(&matched, &oracle, 1.3).iter().all(|&v| v == 0.0));
            }
        }
    }
}
