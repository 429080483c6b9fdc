use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use debias_core::config::ExperimentConfig;
use debias_core::experiment::{self, Experiment};
use debias_core::{Error, Result};

mod fit;

#[derive(Parser)]
#[command(name = "debias-lab", version, about = "Run debiasing experiments and write CSV results")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every configured seed and write trajectory.csv and summary.csv.
    Simulate {
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Replace the configured seed list with this single seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Compare exploration actions in the two-stage model; writes mdp_report.csv.
    Mdp {
        config: PathBuf,
        #[arg(long, default_value_t = 200)]
        replications: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rerun the configuration for each value of one parameter.
    Sweep {
        config: PathBuf,
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long, allow_hyphen_values = true)]
        values: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a score mapping and per-label distributions from a CSV; prints a config fragment.
    Fit(fit::FitArgs),
}

fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    ExperimentConfig::from_toml(&text)
}

fn parse_values(values: &str) -> Result<Vec<f64>> {
    let parsed = values
        .split(',')
        .map(str::trim)
        .filter(|v| !v.is_empty())
        .map(|v| {
            v.parse::<f64>()
                .map_err(|_| Error::config("values", format!("`{v}` is not a number")))
        })
        .collect::<Result<Vec<_>>>()?;
    if parsed.is_empty() {
        return Err(Error::config("values", "at least one value is required"));
    }
    Ok(parsed)
}

fn simulate(config: &Path, out: &Path, seed: Option<u64>) -> Result<()> {
    let mut cfg = load_config(config)?;
    if let Some(s) = seed {
        cfg.run.seeds = vec![s];
    }
    let exp = Experiment::from_config(&cfg)?;
    let runs = experiment::simulate(&exp)?;
    experiment::write_simulation(out, &exp, &runs)
}

fn mdp(config: &Path, replications: usize, out: &Path) -> Result<()> {
    let report = experiment::mdp_report(&load_config(config)?, replications)?;
    std::fs::create_dir_all(out)?;
    experiment::write_mdp_report(std::fs::File::create(out.join("mdp_report.csv"))?, &report)
}

fn sweep(config: &Path, param: &str, values: &str, out: &Path) -> Result<()> {
    let cfg = load_config(config)?;
    let values = parse_values(values)?;
    let configs = values
        .iter()
        .map(|&v| Ok((v, cfg.with_param(param, v)?)))
        .collect::<Result<Vec<_>>>()?;
    std::fs::create_dir_all(out)?;
    let mut settings = Vec::new();
    for (value, c) in configs {
        let exp = Experiment::from_config(&c)?;
        let runs = experiment::simulate(&exp)?;
        let file = std::fs::File::create(out.join(format!("trajectory_{param}_{value}.csv")))?;
        experiment::write_trajectory(file, &exp, &runs)?;
        settings.push((param.to_string(), value, runs));
    }
    experiment::write_fp_fn(std::fs::File::create(out.join("fp_fn.csv"))?, &settings)
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io(_) => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate { config, out, seed } => simulate(&config, &out, seed),
        Command::Mdp {
            config,
            replications,
            out,
        } => mdp(&config, replications, &out),
        Command::Sweep {
            config,
            param,
            values,
            out,
        } => sweep(&config, &param, &values, &out),
        Command::Fit(args) => fit::run(&args).map(|fragment| print!("{fragment}")),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn values_parse() {
        assert_eq!(parse_values("50, 55,60").unwrap(), vec![50.0, 55.0, 60.0]);
        assert!(matches!(parse_values(""), Err(Error::Config { .. })));
        assert!(matches!(parse_values(",,"), Err(Error::Config { .. })));
        assert!(matches!(parse_values("5,x"), Err(Error::Config { .. })));
    }

    #[test]
    fn io_errors_exit_three() {
        assert_eq!(exit_code(&Error::Io("x".into())), 3);
        assert_eq!(exit_code(&Error::Schema("x".into())), 2);
        assert_eq!(exit_code(&Error::config("k", "m")), 2);
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
