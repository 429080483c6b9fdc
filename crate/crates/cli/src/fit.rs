//! The `fit` subcommand: score mapping plus per-(group, label) distribution fits.

use std::collections::BTreeMap;
use std::path::PathBuf;

use clap::{Args, ValueEnum};
use debias_core::config::{FamilyName, FitSection, GroupSection, LabelSection, TauSection};
use debias_core::dataio::{fit_distribution, fit_score_mapping, load_records, Schema};
use debias_core::{Error, FamilyKind, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Family {
    Gaussian,
    Beta,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    #[arg(long)]
    csv: PathBuf,
    /// Comma-separated numeric feature columns.
    #[arg(long, value_delimiter = ',')]
    features: Vec<String>,
    /// Comma-separated categorical columns, one-hot encoded.
    #[arg(long, value_delimiter = ',')]
    categorical: Vec<String>,
    #[arg(long)]
    group: String,
    #[arg(long)]
    label: String,
    /// Label value counted as qualified when labels are not 0/1.
    #[arg(long)]
    positive_label: Option<String>,
    #[arg(long, default_value_t = ',')]
    delimiter: char,
    #[arg(long, value_enum, default_value_t = Family::Beta)]
    family: Family,
    /// Fixed `beta` of the Beta family.
    #[arg(long)]
    beta: Option<f64>,
    /// Fixed standard deviation of the Gaussian family; estimated per cell when absent.
    #[arg(long)]
    sigma: Option<f64>,
    /// Reference percentile for label 0.
    #[arg(long, default_value_t = 50.0)]
    tau: f64,
    /// Reference percentile for label 1.
    #[arg(long, default_value_t = 50.0)]
    tau1: f64,
    /// Fraction of rows used for the mapping and the initial estimates.
    #[arg(long, default_value_t = 0.025)]
    train_frac: f64,
    #[arg(long, default_value_t = 500)]
    iterations: usize,
    #[arg(long, default_value_t = 0.1)]
    learning_rate: f64,
    /// Seed of the train/held-out shuffle.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Serialize)]
struct Fragment {
    tau: TauSection,
    group: BTreeMap<String, GroupSection>,
    fit: FitSection,
}

fn std_dev(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

pub fn run(args: &FitArgs) -> Result<String> {
    if !(args.train_frac > 0.0 && args.train_frac <= 1.0) {
        return Err(Error::config("train-frac", "must lie in (0, 1]"));
    }
    if !args.delimiter.is_ascii() {
        return Err(Error::config("delimiter", "must be a single ASCII character"));
    }
    let schema = Schema {
        features: args.features.clone(),
        categorical: args.categorical.clone(),
        group: args.group.clone(),
        label: args.label.clone(),
        positive_label: args.positive_label.clone(),
        delimiter: args.delimiter as u8,
    };
    let data = load_records(&args.csv, &schema)?;
    let n = data.records.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(args.seed));
    let n_train = ((n as f64 * args.train_frac).ceil() as usize).clamp(1, n);
    let train: Vec<_> = order[..n_train].iter().map(|&i| data.records[i].clone()).collect();

    let mapping = fit_score_mapping(&train, args.iterations, args.learning_rate)?;
    let mapping = debias_core::dataio::ScoreMapping {
        squash: matches!(args.family, Family::Beta),
        ..mapping
    };
    let (family, fixed) = match args.family {
        Family::Beta => {
            let beta = args.beta.ok_or_else(|| Error::config("beta", "required for the beta family"))?;
            (FamilyName::Beta, Some(beta))
        }
        Family::Gaussian => (FamilyName::Gaussian, args.sigma),
    };
    let taus = [args.tau, args.tau1];

    // scores[group][label] over all rows and over the training rows
    let g_count = data.groups.len();
    let mut all = vec![[Vec::new(), Vec::new()]; g_count];
    let mut init = vec![[Vec::new(), Vec::new()]; g_count];
    for (k, &i) in order.iter().enumerate() {
        let r = &data.records[i];
        let s = mapping.score(&r.features)?;
        let y = r.label;
        all[r.group][y].push(s);
        if k < n_train {
            init[r.group][y].push(s);
        }
    }

    let mut groups = BTreeMap::new();
    for (g, name) in data.groups.iter().enumerate() {
        let mut labels = Vec::new();
        for y in 0..2 {
            let fixed = fixed.unwrap_or_else(|| std_dev(&all[g][y]));
            let kind = match family {
                FamilyName::Gaussian => FamilyKind::GaussianLocation { sigma: fixed },
                FamilyName::Beta => FamilyKind::BetaAlpha { beta: fixed },
            };
            let cell = |samples: &[f64], which: &str| {
                fit_distribution(samples, kind, taus[y]).map_err(|e| match e {
                    Error::Io(_) => e,
                    e => Error::config(format!("group.{name}.label{y}.{which}"), e.to_string()),
                })
            };
            labels.push(LabelSection {
                family,
                fixed,
                psi_true: cell(&all[g][y], "psi_true")?.psi(),
                psi_init: cell(&init[g][y], "psi_init")?.psi(),
            });
        }
        let size = (all[g][0].len() + all[g][1].len()) as f64;
        let train_size = (init[g][0].len() + init[g][1].len()) as f64;
        let [label0, label1]: [LabelSection; 2] = labels.try_into().expect("two labels");
        groups.insert(
            name.clone(),
            GroupSection {
                weight: size / n as f64,
                alpha1: all[g][1].len() as f64 / size,
                alpha1_est: (train_size > 0.0).then(|| init[g][1].len() as f64 / train_size),
                label0,
                label1,
            },
        );
    }
    let fragment = Fragment {
        tau: TauSection {
            label0: taus[0],
            label1: taus[1],
        },
        group: groups,
        fit: FitSection {
            features: data.feature_names,
            train_rows: n_train,
            total_rows: n,
            mapping,
        },
    };
    toml::to_string(&fragment).map_err(|e| Error::Numeric(e.to_string()))
}
