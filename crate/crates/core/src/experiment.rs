//! Replicated runs of a configuration and their CSV outputs.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;

use crate::config::ExperimentConfig;
use crate::dataio::synth_stream;
use crate::engine::{run, EngineConfig};
use crate::error::{Error, Result};
use crate::mdp::{compare_actions, MdpReport, MeanSe};
use crate::metrics::{accuracy, bias_error, realized_eo_gap, regret, weighted_regret, ConfusionCounts, OracleRef};
use crate::population::Population;
use crate::rng::derive_seed;
use crate::trajectory::Trajectory;

/// Environment variable capping worker threads.
pub const THREADS_ENV: &str = "DEBIAS_LAB_THREADS";

pub const TRAJECTORY_HEADER: [&str; 20] = [
    "run_id",
    "seed",
    "t",
    "group",
    "label",
    "omega_hat",
    "psi",
    "omega_true",
    "theta",
    "lb",
    "ub",
    "epsilon",
    "batch_n",
    "clamped",
    "accuracy_window",
    "eo_gap",
    "regret_cum",
    "wregret_cum",
    "bias_err",
    "exploration_error",
];

pub const SUMMARY_HEADER: [&str; 10] = [
    "run_id",
    "seed",
    "group",
    "label",
    "final_omega_hat",
    "omega_true",
    "final_bias_err",
    "regret_total",
    "wregret_total",
    "arrivals",
];

pub const FP_FN_HEADER: [&str; 7] = ["param", "value", "run_id", "seed", "t", "fp_cum", "fn_cum"];

pub const MDP_HEADER: [&str; 17] = [
    "action",
    "replications",
    "exp_cost_mean",
    "exp_cost_se",
    "miss_cost_1_mean",
    "miss_cost_1_se",
    "miss_cost_2_mean",
    "miss_cost_2_se",
    "total_mean",
    "total_se",
    "abs_gap_mean",
    "abs_gap_se",
    "total_diff_vs_intermediate_mean",
    "total_diff_vs_intermediate_se",
    "theorem5_condition",
    "thm4_ordering",
    "thm5_ordering",
];

/// Everything needed to replicate a configuration.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub engine: EngineConfig,
    pub truth: Population,
    pub init: Population,
    pub oracle: OracleRef,
    pub horizon: usize,
    pub seeds: Vec<u64>,
    pub beta: f64,
}

impl Experiment {
    pub fn from_config(cfg: &ExperimentConfig) -> Result<Self> {
        let engine = cfg.engine_config()?;
        let (truth, init) = cfg.populations()?;
        let oracle = OracleRef::compute(&truth, engine.fairness)?;
        Ok(Self {
            engine,
            truth,
            init,
            oracle,
            horizon: cfg.run.horizon,
            seeds: cfg.run.seeds.clone(),
            beta: cfg.run.weighted_regret_beta,
        })
    }
}

/// One finished run with the metric series derived from its records.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub run_id: usize,
    pub seed: u64,
    pub trajectory: Trajectory,
    pub regret: Vec<f64>,
    pub wregret: Vec<f64>,
}

impl RunOutput {
    fn at(series: &[f64], t: u64) -> f64 {
        if t == 0 {
            0.0
        } else {
            series[t as usize - 1]
        }
    }

    pub fn regret_at(&self, t: u64) -> f64 {
        Self::at(&self.regret, t)
    }

    pub fn wregret_at(&self, t: u64) -> f64 {
        Self::at(&self.wregret, t)
    }

    pub fn regret_total(&self) -> f64 {
        self.regret.last().copied().unwrap_or(0.0)
    }

    pub fn wregret_total(&self) -> f64 {
        self.wregret.last().copied().unwrap_or(0.0)
    }

    /// Cumulative realized confusion counts after the first `t` arrivals.
    pub fn confusion_at(&self, t: u64) -> ConfusionCounts {
        let mut c = ConfusionCounts::default();
        for r in &self.trajectory.records[..t as usize] {
            c.add(r.decision.admitted(), r.arrival.label);
        }
        c
    }
}

/// Seed of the engine streams for the run at `index` with configured seed `seed`.
pub fn run_seed(seed: u64, index: usize) -> u64 {
    derive_seed(seed, index as u64)
}

pub fn run_single(exp: &Experiment, run_id: usize, seed: u64) -> Result<RunOutput> {
    let s = run_seed(seed, run_id);
    let arrivals = synth_stream(&exp.truth, exp.horizon, s);
    let trajectory = run(&exp.engine, &exp.init, arrivals, s)?;
    let regret = regret(&trajectory.records, &exp.oracle);
    let wregret = weighted_regret(&trajectory.records, &exp.oracle, exp.beta);
    Ok(RunOutput {
        run_id,
        seed,
        trajectory,
        regret,
        wregret,
    })
}

/// Worker count from [`THREADS_ENV`], if set to a positive integer.
pub fn thread_cap() -> Option<usize> {
    std::env::var(THREADS_ENV).ok()?.trim().parse().ok().filter(|&n| n > 0)
}

/// Run `f` on a pool of `threads` workers, or rayon's default when `None`.
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| Error::Io(e.to_string()))?;
    Ok(pool.install(f))
}

/// Run `f` on a pool honoring [`THREADS_ENV`].
pub fn with_pool<T: Send>(f: impl FnOnce() -> T + Send) -> Result<T> {
    with_threads(thread_cap(), f)
}

/// All configured seeds on `threads` workers, in seed-list order.
pub fn simulate_on(exp: &Experiment, threads: Option<usize>) -> Result<Vec<RunOutput>> {
    with_threads(threads, || {
        exp.seeds
            .par_iter()
            .enumerate()
            .map(|(i, &seed)| run_single(exp, i, seed))
            .collect::<Result<Vec<_>>>()
    })?
}

/// All configured seeds, in seed-list order.
pub fn simulate(exp: &Experiment) -> Result<Vec<RunOutput>> {
    simulate_on(exp, thread_cap())
}

fn fmt(v: f64) -> String {
    format!("{v}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt).unwrap_or_else(|| "NaN".into())
}

fn writer<W: Write>(out: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out)
}

pub fn write_trajectory<W: Write>(out: W, exp: &Experiment, runs: &[RunOutput]) -> Result<()> {
    let mut w = writer(out);
    w.write_record(TRAJECTORY_HEADER)?;
    for r in runs {
        let traj = &r.trajectory;
        for (i, p) in traj.points.iter().enumerate() {
            let round = traj.round_records(i);
            let acc = fmt_opt(accuracy(round));
            let eo = fmt_opt(realized_eo_gap(round, exp.truth.len()));
            for (g, gs) in p.groups.iter().enumerate() {
                for y in 0..2 {
                    let ls = &gs.labels[y];
                    let truth = exp.truth.groups[g].dists[y].omega();
                    w.write_record([
                        r.run_id.to_string(),
                        r.seed.to_string(),
                        p.t.to_string(),
                        exp.truth.groups[g].name.clone(),
                        y.to_string(),
                        fmt(ls.omega_hat),
                        fmt(ls.psi),
                        fmt(truth),
                        fmt(gs.theta),
                        fmt(gs.lb),
                        fmt(gs.ub),
                        fmt(p.epsilon),
                        ls.batch_n.to_string(),
                        (gs.clamped as u8).to_string(),
                        acc.clone(),
                        eo.clone(),
                        fmt(r.regret_at(p.t)),
                        fmt(r.wregret_at(p.t)),
                        fmt((ls.omega_hat - truth).abs()),
                        fmt(gs.exploration_error),
                    ])?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_summary<W: Write>(out: W, exp: &Experiment, runs: &[RunOutput]) -> Result<()> {
    let mut w = writer(out);
    w.write_record(SUMMARY_HEADER)?;
    for r in runs {
        let last = r.trajectory.last();
        for (g, gs) in last.groups.iter().enumerate() {
            for y in 0..2 {
                let est = gs.labels[y].omega_hat;
                let truth = exp.truth.groups[g].dists[y].omega();
                w.write_record([
                    r.run_id.to_string(),
                    r.seed.to_string(),
                    exp.truth.groups[g].name.clone(),
                    y.to_string(),
                    fmt(est),
                    fmt(truth),
                    fmt((est - truth).abs()),
                    fmt(r.regret_total()),
                    fmt(r.wregret_total()),
                    r.trajectory.records.len().to_string(),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Cumulative realized FP/FN at every trajectory point, tagged with a sweep setting.
pub fn write_fp_fn<W: Write>(out: W, settings: &[(String, f64, Vec<RunOutput>)]) -> Result<()> {
    let mut w = writer(out);
    w.write_record(FP_FN_HEADER)?;
    for (param, value, runs) in settings {
        for r in runs {
            for p in &r.trajectory.points {
                let c = r.confusion_at(p.t);
                w.write_record([
                    param.clone(),
                    fmt(*value),
                    r.run_id.to_string(),
                    r.seed.to_string(),
                    p.t.to_string(),
                    c.fp.to_string(),
                    c.fn_.to_string(),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_mdp_report<W: Write>(out: W, report: &MdpReport) -> Result<()> {
    let mut w = writer(out);
    w.write_record(MDP_HEADER)?;
    let pair = |m: &MeanSe| [fmt(m.mean), fmt(m.se)];
    for a in &report.actions {
        let mut row = vec![a.action.name().to_string(), report.replications.to_string()];
        for m in [&a.exp_cost, &a.miss_cost_1, &a.miss_cost_2, &a.total, &a.abs_gap, &a.total_diff_vs_intermediate] {
            row.extend(pair(m));
        }
        row.push(report.theorem5_condition.to_string());
        row.push(report.thm4_ordering.to_string());
        row.push(report.thm5_ordering.map(|b| b.to_string()).unwrap_or_else(|| "NA".into()));
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Compare exploration actions for the single group of `cfg` under its `[mdp]`
/// section, seeded by the first configured seed.
pub fn mdp_report(cfg: &ExperimentConfig, replications: usize) -> Result<MdpReport> {
    let section = cfg
        .mdp
        .as_ref()
        .ok_or_else(|| Error::config("mdp", "section is required for the two-stage comparison"))?;
    if cfg.group.len() != 1 {
        return Err(Error::config("group", "the two-stage comparison takes exactly one group"));
    }
    let (truth, init) = cfg.populations()?;
    let costs = section.costs();
    with_pool(|| {
        compare_actions(
            &init.groups[0],
            &truth.groups[0],
            &costs,
            section.update,
            replications,
            cfg.run.seeds[0],
        )
    })?
}

/// Write `simulate` outputs into `dir`.
pub fn write_simulation(dir: &Path, exp: &Experiment, runs: &[RunOutput]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_trajectory(std::fs::File::create(dir.join("trajectory.csv"))?, exp, runs)?;
    write_summary(std::fs::File::create(dir.join("summary.csv"))?, exp, runs)?;
    Ok(())
}

/// Final bias errors per run, `[run][group][label]`.
pub fn final_bias(exp: &Experiment, runs: &[RunOutput]) -> Vec<Vec<[f64; 2]>> {
    runs.iter()
        .map(|r| {
            let mut est = exp.init.clone();
            for (g, gs) in r.trajectory.last().groups.iter().enumerate() {
                for y in 0..2 {
                    est.groups[g].dists[y] = est.groups[g].dists[y].with_psi(gs.labels[y].psi).expect("valid psi");
                }
            }
            bias_error(&est, &exp.truth)
        })
        .collect()
}
