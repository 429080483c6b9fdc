//! Per-(group, label) feature distributions and label fractions.
//!
//! The same structure holds the true population a simulation samples from
//! and the decision maker's (possibly biased) estimate of it.

use serde::{Deserialize, Serialize};

use crate::dist::DistEstimate;
use crate::error::{Error, Result};

/// Index of a label: `0` unqualified, `1` qualified.
pub type Label = usize;

/// One group's label-conditional feature distributions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupModel {
    pub name: String,
    /// Relative arrival weight of the group.
    pub weight: f64,
    /// `dists[y]` is the feature distribution of label `y`.
    pub dists: [DistEstimate; 2],
    /// `alpha[y]` is the fraction of the group with label `y`.
    pub alpha: [f64; 2],
}

impl GroupModel {
    pub fn new(name: impl Into<String>, weight: f64, dist0: DistEstimate, dist1: DistEstimate, alpha1: f64) -> Result<Self> {
        let g = Self {
            name: name.into(),
            weight,
            dists: [dist0, dist1],
            alpha: [1.0 - alpha1, alpha1],
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.weight.is_finite() && self.weight > 0.0) {
            return Err(Error::config(format!("group.{}.weight", self.name), "must be positive"));
        }
        if !self.alpha.iter().all(|a| (0.0..=1.0).contains(a)) || (self.alpha[0] + self.alpha[1] - 1.0).abs() > 1e-12 {
            return Err(Error::config(format!("group.{}.alpha1", self.name), "label fractions must lie in [0, 1] and sum to 1"));
        }
        Ok(())
    }

    pub fn dist(&self, label: Label) -> &DistEstimate {
        &self.dists[label]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Population {
    pub groups: Vec<GroupModel>,
}

/// The decision maker's estimate has the same shape as the truth.
pub type PopulationEstimate = Population;

impl Population {
    pub fn new(groups: Vec<GroupModel>) -> Result<Self> {
        let p = Self { groups };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.groups.is_empty() {
            return Err(Error::config("group", "at least one group is required"));
        }
        for g in &self.groups {
            g.validate()?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    /// Arrival probabilities of each group.
    pub fn group_probabilities(&self) -> Vec<f64> {
        let total: f64 = self.groups.iter().map(|g| g.weight).sum();
        self.groups.iter().map(|g| g.weight / total).collect()
    }

    pub fn omega(&self, group: usize, label: Label) -> f64 {
        self.groups[group].dists[label].omega()
    }
}
