//! Synthetic arrivals, CSV ingestion, logistic score reduction and
//! single-parameter distribution fitting.

use std::collections::BTreeSet;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dist::{DistEstimate, FamilyKind};
use crate::error::{Error, Result};
use crate::population::{Label, Population};
use crate::rng::{stream, ARRIVAL_STREAM};
use crate::special::{golden_min, ln_beta};
use crate::trajectory::AgentArrival;

/// `n` arrivals from `truth`: group by weight, label by fraction, feature from the
/// matching distribution.
pub fn synth_stream(truth: &Population, n: usize, seed: u64) -> Vec<AgentArrival> {
    let mut rng = stream(seed, ARRIVAL_STREAM);
    let probs = truth.group_probabilities();
    (0..n as u64)
        .map(|t| {
            let u: f64 = rng.random();
            let mut group = probs.len() - 1;
            let mut acc = 0.0;
            for (g, p) in probs.iter().enumerate() {
                acc += p;
                if u < acc {
                    group = g;
                    break;
                }
            }
            let gm = &truth.groups[group];
            let label: Label = (rng.random::<f64>() < gm.alpha[1]) as Label;
            let x = gm.dists[label].sample(&mut rng);
            AgentArrival { t, group, label, x }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawRecord {
    pub features: Vec<f64>,
    pub group: usize,
    pub label: Label,
}

/// Column selection for [`load_records`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Schema {
    /// Numeric feature columns.
    pub features: Vec<String>,
    /// Categorical columns, one-hot encoded after the numeric ones.
    pub categorical: Vec<String>,
    pub group: String,
    pub label: String,
    /// Label value counted as qualified; otherwise labels must be `0`/`1`.
    pub positive_label: Option<String>,
    pub delimiter: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub records: Vec<RawRecord>,
    /// Names of the encoded feature columns.
    pub feature_names: Vec<String>,
    /// Group tags in order of first appearance; `RawRecord::group` indexes this.
    pub groups: Vec<String>,
    /// Rows dropped because a cell failed to parse.
    pub skipped: usize,
}

pub fn load_records(path: impl AsRef<Path>, schema: &Schema) -> Result<Dataset> {
    let delimiter = if schema.delimiter == 0 { b',' } else { schema.delimiter };
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_path(path)?;
    let headers = reader.headers()?.clone();
    if headers.is_empty() {
        return Err(Error::EmptyInput("file has no header row".into()));
    }
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("missing column `{name}`")))
    };
    let num_idx = schema.features.iter().map(|c| column(c)).collect::<Result<Vec<_>>>()?;
    let cat_idx = schema.categorical.iter().map(|c| column(c)).collect::<Result<Vec<_>>>()?;
    let group_idx = column(&schema.group)?;
    let label_idx = column(&schema.label)?;

    let rows = reader.records().collect::<std::result::Result<Vec<_>, _>>()?;
    if rows.is_empty() {
        return Err(Error::EmptyInput("file has no data rows".into()));
    }

    let levels: Vec<Vec<String>> = cat_idx
        .iter()
        .map(|&i| {
            rows.iter()
                .filter_map(|r| r.get(i))
                .filter(|s| !s.is_empty())
                .map(str::to_owned)
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect()
        })
        .collect();
    let mut feature_names = schema.features.clone();
    for (name, lv) in schema.categorical.iter().zip(&levels) {
        feature_names.extend(lv.iter().map(|l| format!("{name}={l}")));
    }

    let mut groups: Vec<String> = Vec::new();
    let mut records = Vec::with_capacity(rows.len());
    let mut skipped = 0;
    'rows: for row in &rows {
        let mut features = Vec::with_capacity(feature_names.len());
        for &i in &num_idx {
            match row.get(i).and_then(|s| s.parse::<f64>().ok()).filter(|v| v.is_finite()) {
                Some(v) => features.push(v),
                None => {
                    skipped += 1;
                    continue 'rows;
                }
            }
        }
        for (&i, lv) in cat_idx.iter().zip(&levels) {
            let Some(cell) = row.get(i).filter(|s| !s.is_empty()) else {
                skipped += 1;
                continue 'rows;
            };
            features.extend(lv.iter().map(|l| (l == cell) as u8 as f64));
        }
        let label = match (row.get(label_idx), &schema.positive_label) {
            (Some(cell), Some(pos)) if !cell.is_empty() => (cell == pos) as Label,
            (Some("0"), None) | (Some("0.0"), None) => 0,
            (Some("1"), None) | (Some("1.0"), None) => 1,
            _ => {
                skipped += 1;
                continue 'rows;
            }
        };
        let Some(tag) = row.get(group_idx).filter(|s| !s.is_empty()) else {
            skipped += 1;
            continue 'rows;
        };
        let group = match groups.iter().position(|g| g == tag) {
            Some(g) => g,
            None => {
                groups.push(tag.to_owned());
                groups.len() - 1
            }
        };
        records.push(RawRecord { features, group, label });
    }
    Ok(Dataset {
        records,
        feature_names,
        groups,
        skipped,
    })
}

/// Linear score over standardized features, optionally squashed into (0, 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreMapping {
    pub weights: Vec<f64>,
    pub intercept: f64,
    /// Column means and standard deviations used to standardize inputs.
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
    pub squash: bool,
}

const SCORE_CLAMP: f64 = 1e-9;

fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

impl ScoreMapping {
    fn linear(&self, features: &[f64]) -> f64 {
        self.intercept
            + features
                .iter()
                .zip(&self.means)
                .zip(&self.scales)
                .zip(&self.weights)
                .map(|(((x, m), s), w)| w * (x - m) / s)
                .sum::<f64>()
    }

    pub fn score(&self, features: &[f64]) -> Result<f64> {
        if features.len() != self.weights.len() {
            return Err(Error::DimensionMismatch {
                expected: self.weights.len(),
                got: features.len(),
            });
        }
        let z = self.linear(features);
        Ok(if self.squash {
            logistic(z).clamp(SCORE_CLAMP, 1.0 - SCORE_CLAMP)
        } else {
            z
        })
    }
}

/// Mean logistic loss of `mapping` on `records`.
pub fn logistic_loss(mapping: &ScoreMapping, records: &[RawRecord]) -> f64 {
    let n = records.len() as f64;
    records
        .iter()
        .map(|r| {
            let z = mapping.linear(&r.features);
            // log(1 + e^z) - y z, computed stably
            let softplus = if z > 0.0 { z + (-z).exp().ln_1p() } else { z.exp().ln_1p() };
            softplus - r.label as f64 * z
        })
        .sum::<f64>()
        / n
}

/// Full-batch gradient descent on the logistic loss from zero weights.
pub fn fit_score_mapping(records: &[RawRecord], iterations: usize, learning_rate: f64) -> Result<ScoreMapping> {
    fit_score_mapping_traced(records, iterations, learning_rate, |_, _| ())
}

/// As [`fit_score_mapping`], calling `observe(iteration, mapping)` before each step.
pub fn fit_score_mapping_traced(
    records: &[RawRecord],
    iterations: usize,
    learning_rate: f64,
    mut observe: impl FnMut(usize, &ScoreMapping),
) -> Result<ScoreMapping> {
    if records.len() < 2 {
        return Err(Error::EmptyInput("need at least two records".into()));
    }
    let positives = records.iter().filter(|r| r.label == 1).count();
    if positives == 0 || positives == records.len() {
        return Err(Error::Degenerate("training data holds a single class".into()));
    }
    let dim = records[0].features.len();
    if let Some(r) = records.iter().find(|r| r.features.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: r.features.len(),
        });
    }
    let n = records.len() as f64;
    let means: Vec<f64> = (0..dim).map(|j| records.iter().map(|r| r.features[j]).sum::<f64>() / n).collect();
    let scales: Vec<f64> = (0..dim)
        .map(|j| {
            let var = records.iter().map(|r| (r.features[j] - means[j]).powi(2)).sum::<f64>() / n;
            if var > 0.0 {
                var.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    let standardized: Vec<Vec<f64>> = records
        .iter()
        .map(|r| (0..dim).map(|j| (r.features[j] - means[j]) / scales[j]).collect())
        .collect();
    let mut m = ScoreMapping {
        weights: vec![0.0; dim],
        intercept: 0.0,
        means,
        scales,
        squash: true,
    };
    for it in 0..iterations {
        observe(it, &m);
        let mut grad_w = vec![0.0; dim];
        let mut grad_b = 0.0;
        for (z, r) in standardized.iter().zip(records) {
            let p = logistic(m.intercept + z.iter().zip(&m.weights).map(|(a, w)| a * w).sum::<f64>());
            let err = p - r.label as f64;
            grad_b += err;
            for (g, a) in grad_w.iter_mut().zip(z) {
                *g += err * a;
            }
        }
        m.intercept -= learning_rate * grad_b / n;
        for (w, g) in m.weights.iter_mut().zip(&grad_w) {
            *w -= learning_rate * g / n;
        }
    }
    observe(iterations, &m);
    Ok(m)
}

/// Maximum-likelihood estimate of the free parameter with the fixed one held.
pub fn fit_distribution(samples: &[f64], kind: FamilyKind, tau: f64) -> Result<DistEstimate> {
    kind.validate()?;
    if samples.len() < 10 {
        return Err(Error::EmptyInput(format!("need at least 10 samples, got {}", samples.len())));
    }
    if let Some(x) = samples.iter().find(|&&x| !kind.in_support(x)) {
        return Err(Error::Domain(format!("sample {x} outside the family support")));
    }
    let n = samples.len() as f64;
    let psi = match kind {
        FamilyKind::GaussianLocation { .. } => samples.iter().sum::<f64>() / n,
        FamilyKind::BetaAlpha { beta } => {
            let sum_ln = samples.iter().map(|x| x.ln()).sum::<f64>();
            let sum_ln1m = samples.iter().map(|x| (-x).ln_1p()).sum::<f64>();
            let neg_ll = |ln_a: f64| {
                let a = ln_a.exp();
                -((a - 1.0) * sum_ln + (beta - 1.0) * sum_ln1m - n * ln_beta(a, beta))
            };
            golden_min(1e-3f64.ln(), 1e3f64.ln(), 1e-12, neg_ll).0.exp()
        }
    };
    DistEstimate::new(kind, psi, tau)
}

/// Method-of-moments Beta shape parameters `(alpha, beta)`.
pub fn beta_moments(samples: &[f64]) -> Result<(f64, f64)> {
    if samples.len() < 2 {
        return Err(Error::EmptyInput("need at least two samples".into()));
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let common = mean * (1.0 - mean) / var - 1.0;
    if !(common > 0.0 && mean > 0.0 && mean < 1.0) {
        return Err(Error::Numeric("sample variance too large for a Beta fit".into()));
    }
    Ok((mean * common, (1.0 - mean) * common))
}
