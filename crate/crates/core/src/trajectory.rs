//! Per-agent decision records and per-round snapshots of a run.

use serde::{Deserialize, Serialize};

use crate::population::Label;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentArrival {
    pub t: u64,
    pub group: usize,
    pub label: Label,
    pub x: f64,
}

/// How an agent below the threshold is admitted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExploreAction {
    /// Full admission; the true label is revealed.
    #[default]
    Uniform,
    /// A cheaper offer; unqualified agents are reported qualified with probability gamma.
    Intermediate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "decision", rename_all = "snake_case")]
pub enum Decision {
    AdmitExploit,
    AdmitExplore { action: ExploreAction },
    Reject,
}

impl Decision {
    pub fn admitted(&self) -> bool {
        !matches!(self, Decision::Reject)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "observed", content = "label", rename_all = "snake_case")]
pub enum ObservedLabel {
    Censored,
    Exact(Label),
    /// Label as reported by a noisy intermediate outcome.
    Noisy(Label),
}

impl ObservedLabel {
    /// The label the decision maker believes, if any.
    pub fn believed(&self) -> Option<Label> {
        match *self {
            ObservedLabel::Censored => None,
            ObservedLabel::Exact(y) | ObservedLabel::Noisy(y) => Some(y),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub arrival: AgentArrival,
    pub decision: Decision,
    pub observed: ObservedLabel,
    /// Group threshold in force when the decision was made.
    pub theta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelSnapshot {
    pub omega_hat: f64,
    pub psi: f64,
    /// Batch size consumed by the update that produced this snapshot.
    pub batch_n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSnapshot {
    pub theta: f64,
    pub lb: f64,
    pub ub: f64,
    pub clamped: bool,
    pub labels: [LabelSnapshot; 2],
    /// Net exploration error of the round that just ended; 0 for the initial point.
    pub exploration_error: f64,
}

/// State after an update: new estimates and the policy for the next round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    /// Arrivals processed so far.
    pub t: u64,
    pub epsilon: f64,
    pub groups: Vec<GroupSnapshot>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub points: Vec<TrajectoryPoint>,
    pub records: Vec<DecisionRecord>,
}

impl Trajectory {
    pub fn last(&self) -> &TrajectoryPoint {
        self.points.last().expect("a trajectory always holds its initial point")
    }

    /// Records of the round ending at point `i` (empty for the initial point).
    pub fn round_records(&self, i: usize) -> &[DecisionRecord] {
        if i == 0 {
            return &[];
        }
        let lo = self.points[i - 1].t as usize;
        let hi = self.points[i].t as usize;
        &self.records[lo..hi.min(self.records.len())]
    }

    /// Estimated reference point of `(group, label)` after the last update at or before `t`.
    pub fn omega_at(&self, t: u64, group: usize, label: Label) -> f64 {
        let idx = self.points.partition_point(|p| p.t <= t).max(1) - 1;
        self.points[idx].groups[group].labels[label].omega_hat
    }
}
