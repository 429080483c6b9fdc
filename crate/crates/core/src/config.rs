//! TOML experiment configuration.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dataio::ScoreMapping;
use crate::dist::{DistEstimate, FamilyKind};
use crate::engine::{AlgorithmVariant, EngineConfig, UpdateStrategy};
use crate::error::{Error, Result};
use crate::mdp::MdpCostParams;
use crate::policy::{EpsilonSchedule, FairnessRule, ScheduleKind};
use crate::population::{GroupModel, Population};
use crate::trajectory::ExploreAction;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariantName {
    #[default]
    Active,
    ExploitationOnly,
    PureExploration,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    #[serde(default)]
    pub variant: VariantName,
    #[serde(default)]
    pub strategy: UpdateStrategy,
    pub horizon: usize,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_batch_min")]
    pub batch_min: usize,
    #[serde(default = "one")]
    pub smoothing: f64,
    #[serde(default = "one")]
    pub weighted_regret_beta: f64,
    #[serde(default)]
    pub explore_action: ExploreAction,
    #[serde(default)]
    pub gamma: f64,
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}
fn default_batch_min() -> usize {
    50
}
fn one() -> f64 {
    1.0
}
fn fifty() -> f64 {
    50.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleName {
    #[default]
    None,
    SameDecisionRule,
    EqualOpportunity,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FairnessSection {
    #[serde(default)]
    pub rule: RuleName,
    #[serde(default)]
    pub slack: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TauSection {
    #[serde(default = "fifty")]
    pub label0: f64,
    #[serde(default = "fifty")]
    pub label1: f64,
}

impl Default for TauSection {
    fn default() -> Self {
        Self { label0: 50.0, label1: 50.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleName {
    #[default]
    Adaptive,
    FixedDecay,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EpsilonSection {
    pub schedule: ScheduleName,
    pub eps0: f64,
    pub eps_min: f64,
    pub eps_max: f64,
    pub step: f64,
    pub every: u64,
    pub gain: f64,
    pub window: u64,
}

impl Default for EpsilonSection {
    fn default() -> Self {
        Self {
            schedule: ScheduleName::Adaptive,
            eps0: EpsilonSchedule::DEFAULT_EPS0,
            eps_min: EpsilonSchedule::DEFAULT_EPS_MIN,
            eps_max: 1.0,
            step: 0.1,
            every: 10_000,
            gain: 2.0,
            window: 1000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyName {
    Gaussian,
    Beta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelSection {
    pub family: FamilyName,
    /// Gaussian standard deviation or Beta `beta`.
    pub fixed: f64,
    pub psi_true: f64,
    pub psi_init: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupSection {
    #[serde(default = "one")]
    pub weight: f64,
    pub alpha1: f64,
    /// Label fraction assumed by the decision maker; defaults to `alpha1`.
    pub alpha1_est: Option<f64>,
    pub label0: LabelSection,
    pub label1: LabelSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MdpSection {
    pub l1h: f64,
    pub l1l: f64,
    pub l2h: f64,
    pub l2l: f64,
    pub gamma: f64,
    pub n1: usize,
    pub n2: usize,
    #[serde(default = "one")]
    pub eps: f64,
    #[serde(default = "rate_balanced")]
    pub update: UpdateStrategy,
}

fn rate_balanced() -> UpdateStrategy {
    UpdateStrategy::RateBalanced
}

impl MdpSection {
    pub fn costs(&self) -> MdpCostParams {
        MdpCostParams {
            l1h: self.l1h,
            l1l: self.l1l,
            l2h: self.l2h,
            l2l: self.l2l,
            gamma: self.gamma,
            n1: self.n1,
            n2: self.n2,
            eps: self.eps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub run: RunSection,
    #[serde(default)]
    pub fairness: FairnessSection,
    #[serde(default)]
    pub tau: TauSection,
    #[serde(default)]
    pub epsilon: EpsilonSection,
    /// Groups in name order.
    pub group: BTreeMap<String, GroupSection>,
    pub mdp: Option<MdpSection>,
    /// Provenance of fitted parameters; not used by the runner.
    pub fit: Option<FitSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitSection {
    pub features: Vec<String>,
    pub train_rows: usize,
    pub total_rows: usize,
    pub mapping: ScoreMapping,
}

/// Parameters a sweep may vary.
pub const SWEEPABLE: [&str; 8] = ["tau0", "tau1", "batch_min", "smoothing", "eps0", "gain", "slack", "gamma"];

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| {
            let key = e.span().map(|s| text[s].to_string()).unwrap_or_default();
            Error::config(key, e.message().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.engine_config()?.validate()?;
        self.populations()?;
        if self.run.seeds.is_empty() {
            return Err(Error::config("run.seeds", "at least one seed is required"));
        }
        if !(self.run.weighted_regret_beta >= 0.0) {
            return Err(Error::config("run.weighted_regret_beta", "must be nonnegative"));
        }
        if let Some(m) = &self.mdp {
            m.costs().validate()?;
        }
        Ok(())
    }

    pub fn fairness_rule(&self) -> FairnessRule {
        match self.fairness.rule {
            RuleName::None => FairnessRule::None,
            RuleName::SameDecisionRule => FairnessRule::SameDecisionRule,
            RuleName::EqualOpportunity => FairnessRule::EqualOpportunity {
                slack: self.fairness.slack,
            },
        }
    }

    pub fn schedule(&self) -> EpsilonSchedule {
        let e = &self.epsilon;
        let kind = match e.schedule {
            ScheduleName::Adaptive => ScheduleKind::Adaptive {
                gain: e.gain,
                window: e.window,
            },
            ScheduleName::FixedDecay => ScheduleKind::FixedDecay {
                step: e.step,
                every: e.every,
            },
        };
        EpsilonSchedule {
            kind,
            eps0: e.eps0,
            eps_min: e.eps_min,
            eps_max: e.eps_max,
        }
    }

    pub fn engine_config(&self) -> Result<EngineConfig> {
        let variant = match self.run.variant {
            VariantName::Active => AlgorithmVariant::ActiveDebiasing {
                strategy: self.run.strategy,
            },
            VariantName::ExploitationOnly => AlgorithmVariant::ExploitationOnly,
            VariantName::PureExploration => AlgorithmVariant::PureExploration,
        };
        let cfg = EngineConfig {
            variant,
            fairness: self.fairness_rule(),
            schedule: self.schedule(),
            batch_min: self.run.batch_min,
            smoothing: self.run.smoothing,
            explore_action: self.run.explore_action,
            gamma: self.run.gamma,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// True population and the decision maker's initial estimate.
    pub fn populations(&self) -> Result<(Population, Population)> {
        if self.group.is_empty() {
            return Err(Error::config("group", "at least one group is required"));
        }
        let taus = [self.tau.label0, self.tau.label1];
        let mut truth = Vec::new();
        let mut init = Vec::new();
        for (name, g) in &self.group {
            let mut dists = Vec::new();
            for (y, l) in [&g.label0, &g.label1].into_iter().enumerate() {
                let key = |field: &str| format!("group.{name}.label{y}.{field}");
                let kind = match l.family {
                    FamilyName::Gaussian => FamilyKind::GaussianLocation { sigma: l.fixed },
                    FamilyName::Beta => FamilyKind::BetaAlpha { beta: l.fixed },
                };
                let make = |psi: f64, field: &str| {
                    DistEstimate::new(kind, psi, taus[y]).map_err(|e| Error::config(key(field), e.to_string()))
                };
                dists.push((make(l.psi_true, "psi_true")?, make(l.psi_init, "psi_init")?));
            }
            let [(t0, i0), (t1, i1)]: [_; 2] = dists.try_into().expect("two labels");
            truth.push(GroupModel::new(name.clone(), g.weight, t0, t1, g.alpha1)?);
            init.push(GroupModel::new(name.clone(), g.weight, i0, i1, g.alpha1_est.unwrap_or(g.alpha1))?);
        }
        Ok((Population::new(truth)?, Population::new(init)?))
    }

    /// Copy with one sweepable parameter replaced.
    pub fn with_param(&self, param: &str, value: f64) -> Result<Self> {
        let mut c = self.clone();
        let count = |v: f64| -> Result<usize> {
            if v >= 0.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(Error::config(param, format!("expected a whole number, got {value}")))
            }
        };
        match param {
            "tau0" => c.tau.label0 = value,
            "tau1" => c.tau.label1 = value,
            "batch_min" => c.run.batch_min = count(value)?,
            "smoothing" => c.run.smoothing = value,
            "eps0" => c.epsilon.eps0 = value,
            "gain" => c.epsilon.gain = value,
            "slack" => c.fairness.slack = value,
            "gamma" => c.run.gamma = value,
            _ => {
                return Err(Error::config(
                    param,
                    format!("not a sweepable parameter; choose one of {}", SWEEPABLE.join(", ")),
                ))
            }
        }
        c.validate()?;
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const SAMPLE: &str = r#"
[run]
variant = "active"
strategy = "mirrored_window"
horizon = 1000
seeds = [1, 2]

[tau]
label0 = 60
label1 = 50

[epsilon]
schedule = "adaptive"
gain = 2.0

[group.a]
alpha1 = 0.5

[group.a.label0]
family = "gaussian"
fixed = 1.0
psi_true = 7.0
psi_init = 8.0

[group.a.label1]
family = "gaussian"
fixed = 1.0
psi_true = 10.0
psi_init = 11.0
"#;

    #[test]
    fn parses_and_builds() {
        let c = ExperimentConfig::from_toml(SAMPLE).unwrap();
        let (truth, init) = c.populations().unwrap();
        assert_eq!(truth.groups[0].dists[0].psi(), 7.0);
        assert_eq!(init.groups[0].dists[1].psi(), 11.0);
        assert_eq!(init.groups[0].dists[0].tau(), 60.0);
        assert_eq!(c.run.batch_min, 50);
        let back = ExperimentConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = SAMPLE.replace("horizon = 1000", "horizon = 1000\nhorizn = 5");
        let err = ExperimentConfig::from_toml(&text).unwrap_err();
        assert!(matches!(err, Error::Config { .. }));
        assert!(err.to_string().contains("horizn"), "{err}");
    }

    #[test]
    fn invalid_values_name_their_key() {
        let text = SAMPLE.replace("psi_init = 8.0", "psi_init = 8.0\n").replace("fixed = 1.0\npsi_true = 7.0", "fixed = -1.0\npsi_true = 7.0");
        let err = ExperimentConfig::from_toml(&text).unwrap_err();
        assert!(err.to_string().contains("group.a.label0"), "{err}");
        let text = SAMPLE.replace("alpha1 = 0.5", "alpha1 = 1.5");
        assert!(ExperimentConfig::from_toml(&text).unwrap_err().to_string().contains("alpha1"));
    }

    #[test]
    fn sweep_parameters() {
        let c = ExperimentConfig::from_toml(SAMPLE).unwrap();
        assert_eq!(c.with_param("tau0", 55.0).unwrap().tau.label0, 55.0);
        assert_eq!(c.with_param("batch_min", 20.0).unwrap().run.batch_min, 20);
        assert!(c.with_param("batch_min", 2.5).is_err());
        assert!(matches!(c.with_param("nope", 1.0), Err(Error::Config { .. })));
    }
}
