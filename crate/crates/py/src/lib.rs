//! Python bindings: distributions, threshold policies, experiment runs, the
//! two-stage comparison and the two-parameter extension.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use debias_core::config::ExperimentConfig;
use debias_core::experiment::{self, Experiment, RunOutput};
use debias_core::policy::{self, optimal_thresholds_fair};
use debias_core::twoparam::{self, TwoParamConfig};
use debias_core::{dataio, Error, FairnessRule, FamilyKind};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io(m) => PyIOError::new_err(m),
        e => PyValueError::new_err(e.to_string()),
    }
}

fn family(name: &str, fixed: f64) -> PyResult<FamilyKind> {
    match name {
        "gaussian" => Ok(FamilyKind::GaussianLocation { sigma: fixed }),
        "beta" => Ok(FamilyKind::BetaAlpha { beta: fixed }),
        other => Err(PyValueError::new_err(format!("unknown family `{other}`; use gaussian or beta"))),
    }
}

fn rule(name: &str, slack: f64) -> PyResult<FairnessRule> {
    match name {
        "none" => Ok(FairnessRule::None),
        "same_decision_rule" => Ok(FairnessRule::SameDecisionRule),
        "equal_opportunity" => Ok(FairnessRule::EqualOpportunity { slack }),
        other => Err(PyValueError::new_err(format!("unknown fairness rule `{other}`"))),
    }
}

/// One-parameter feature distribution with its reference percentile.
#[pyclass(name = "DistEstimate", module = "debias", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyDist(debias_core::DistEstimate);

#[pymethods]
impl PyDist {
    #[new]
    #[pyo3(signature = (family_name, fixed, psi, tau = 50.0))]
    fn new(family_name: &str, fixed: f64, psi: f64, tau: f64) -> PyResult<Self> {
        debias_core::DistEstimate::new(family(family_name, fixed)?, psi, tau)
            .map(Self)
            .map_err(to_py)
    }

    /// Distribution whose `tau`-th percentile equals `omega`.
    #[staticmethod]
    fn from_reference(family_name: &str, fixed: f64, tau: f64, omega: f64) -> PyResult<Self> {
        debias_core::DistEstimate::from_reference(family(family_name, fixed)?, tau, omega)
            .map(Self)
            .map_err(to_py)
    }

    #[getter]
    fn psi(&self) -> f64 {
        self.0.psi()
    }

    #[getter]
    fn tau(&self) -> f64 {
        self.0.tau()
    }

    #[getter]
    fn omega(&self) -> f64 {
        self.0.omega()
    }

    #[getter]
    fn fixed(&self) -> f64 {
        self.0.kind().fixed_param()
    }

    fn pdf(&self, x: f64) -> f64 {
        self.0.pdf(x)
    }

    fn cdf(&self, x: f64) -> f64 {
        self.0.cdf(x)
    }

    fn quantile(&self, p: f64) -> PyResult<f64> {
        self.0.quantile(p).map_err(to_py)
    }

    #[pyo3(signature = (n, seed = 0))]
    fn sample(&self, n: usize, seed: u64) -> Vec<f64> {
        self.0.sample_batch(n, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    fn __repr__(&self) -> String {
        format!("DistEstimate(psi={}, tau={}, omega={})", self.0.psi(), self.0.tau(), self.0.omega())
    }
}

/// Label-0 and label-1 distributions of one group plus its label fraction.
#[pyclass(name = "GroupModel", module = "debias", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyGroup(debias_core::GroupModel);

#[pymethods]
impl PyGroup {
    #[new]
    #[pyo3(signature = (name, dist0, dist1, alpha1, weight = 1.0))]
    fn new(name: &str, dist0: PyRef<'_, PyDist>, dist1: PyRef<'_, PyDist>, alpha1: f64, weight: f64) -> PyResult<Self> {
        debias_core::GroupModel::new(name, weight, dist0.0.clone(), dist1.0.clone(), alpha1)
            .map(Self)
            .map_err(to_py)
    }

    #[getter]
    fn name(&self) -> &str {
        &self.0.name
    }

    #[getter]
    fn alpha1(&self) -> f64 {
        self.0.alpha[1]
    }

    fn dist(&self, label: usize) -> PyResult<PyDist> {
        self.0
            .dists
            .get(label)
            .cloned()
            .map(PyDist)
            .ok_or_else(|| PyValueError::new_err("label must be 0 or 1"))
    }

    fn misclassification(&self, theta: f64) -> f64 {
        policy::misclassification(&self.0, theta)
    }

    fn optimal_threshold(&self) -> PyResult<f64> {
        policy::optimal_threshold(&self.0).map_err(to_py)
    }

    /// `(theta, lb, ub, clamped)` of the exploration policy at `theta`.
    fn policy_at(&self, theta: f64) -> (f64, f64, f64, bool) {
        let p = policy::GroupPolicy::build(&self.0, theta);
        (p.theta, p.lb, p.ub, p.clamped)
    }
}

/// Loss-minimizing thresholds of `groups` under a fairness rule.
#[pyfunction]
#[pyo3(signature = (groups, rule_name = "none", slack = 0.0))]
fn optimal_thresholds(groups: Vec<PyRef<'_, PyGroup>>, rule_name: &str, slack: f64) -> PyResult<Vec<f64>> {
    let pop = debias_core::Population::new(groups.iter().map(|g| g.0.clone()).collect()).map_err(to_py)?;
    optimal_thresholds_fair(&pop, rule(rule_name, slack)?).map_err(to_py)
}

/// Mirror of `theta` below the reference point, with its clamped flag.
#[pyfunction]
fn lower_bound(dist: PyRef<'_, PyDist>, theta: f64) -> (f64, bool) {
    let b = policy::lower_bound(&dist.0, theta);
    (b.value, b.clamped)
}

/// Mirror of `theta` above the reference point, with its clamped flag.
#[pyfunction]
fn upper_bound(dist: PyRef<'_, PyDist>, theta: f64) -> PyResult<(f64, bool)> {
    let b = policy::upper_bound(&dist.0, theta).map_err(to_py)?;
    Ok((b.value, b.clamped))
}

/// Maximum-likelihood fit of the free parameter.
#[pyfunction]
#[pyo3(signature = (samples, family_name, fixed, tau = 50.0))]
fn fit_distribution(samples: Vec<f64>, family_name: &str, fixed: f64, tau: f64) -> PyResult<PyDist> {
    dataio::fit_distribution(&samples, family(family_name, fixed)?, tau)
        .map(PyDist)
        .map_err(to_py)
}

/// Parsed and validated experiment configuration.
#[pyclass(name = "Config", module = "debias", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyConfig(ExperimentConfig);

#[pymethods]
impl PyConfig {
    #[new]
    fn new(text: &str) -> PyResult<Self> {
        ExperimentConfig::from_toml(text).map(Self).map_err(to_py)
    }

    #[staticmethod]
    fn from_file(path: PathBuf) -> PyResult<Self> {
        let text = std::fs::read_to_string(&path).map_err(|e| PyIOError::new_err(format!("{}: {e}", path.display())))?;
        Self::new(&text)
    }

    fn to_toml(&self) -> String {
        self.0.to_toml()
    }

    /// Copy with one sweepable parameter replaced.
    fn with_param(&self, name: &str, value: f64) -> PyResult<Self> {
        self.0.with_param(name, value).map(Self).map_err(to_py)
    }

    fn with_seeds(&self, seeds: Vec<u64>) -> PyResult<Self> {
        let mut c = self.0.clone();
        c.run.seeds = seeds;
        c.validate().map_err(to_py)?;
        Ok(Self(c))
    }

    fn with_horizon(&self, horizon: usize) -> Self {
        let mut c = self.0.clone();
        c.run.horizon = horizon;
        Self(c)
    }

    #[getter]
    fn seeds(&self) -> Vec<u64> {
        self.0.run.seeds.clone()
    }

    #[getter]
    fn horizon(&self) -> usize {
        self.0.run.horizon
    }

    #[getter]
    fn groups(&self) -> Vec<String> {
        self.0.group.keys().cloned().collect()
    }
}

/// One seed's trajectory and regret series.
#[pyclass(name = "Run", module = "debias", frozen, skip_from_py_object)]
struct PyRun(RunOutput);

#[pymethods]
impl PyRun {
    #[getter]
    fn run_id(&self) -> usize {
        self.0.run_id
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.0.seed
    }

    /// Arrival count at each update round, starting with 0.
    #[getter]
    fn t(&self) -> Vec<u64> {
        self.0.trajectory.points.iter().map(|p| p.t).collect()
    }

    #[getter]
    fn epsilon(&self) -> Vec<f64> {
        self.0.trajectory.points.iter().map(|p| p.epsilon).collect()
    }

    fn omega_hat(&self, group: usize, label: usize) -> PyResult<Vec<f64>> {
        self.series(group, |g| g.labels.get(label).map(|l| l.omega_hat))
    }

    fn theta(&self, group: usize) -> PyResult<Vec<f64>> {
        self.series(group, |g| Some(g.theta))
    }

    fn lower_bound(&self, group: usize) -> PyResult<Vec<f64>> {
        self.series(group, |g| Some(g.lb))
    }

    /// Cumulative regret after each arrival.
    #[getter]
    fn regret(&self) -> Vec<f64> {
        self.0.regret.clone()
    }

    #[getter]
    fn weighted_regret(&self) -> Vec<f64> {
        self.0.wregret.clone()
    }

    /// Cumulative realized `(fp, fn)` after the first `t` arrivals.
    fn confusion_at(&self, t: u64) -> PyResult<(u64, u64)> {
        if t as usize > self.0.trajectory.records.len() {
            return Err(PyValueError::new_err("t exceeds the horizon"));
        }
        let c = self.0.confusion_at(t);
        Ok((c.fp, c.fn_))
    }
}

impl PyRun {
    fn series(
        &self,
        group: usize,
        pick: impl Fn(&debias_core::trajectory::GroupSnapshot) -> Option<f64>,
    ) -> PyResult<Vec<f64>> {
        self.0
            .trajectory
            .points
            .iter()
            .map(|p| p.groups.get(group).and_then(&pick))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| PyValueError::new_err("group or label out of range"))
    }
}

/// Every configured seed of one configuration.
#[pyclass(name = "Simulation", module = "debias", frozen, skip_from_py_object)]
struct PySimulation {
    exp: Experiment,
    runs: Vec<RunOutput>,
}

#[pymethods]
impl PySimulation {
    #[getter]
    fn runs(&self) -> Vec<PyRun> {
        self.runs.iter().cloned().map(PyRun).collect()
    }

    fn trajectory_csv(&self) -> PyResult<String> {
        let mut out = Vec::new();
        experiment::write_trajectory(&mut out, &self.exp, &self.runs).map_err(to_py)?;
        Ok(String::from_utf8(out).expect("csv output is ASCII"))
    }

    fn summary_csv(&self) -> PyResult<String> {
        let mut out = Vec::new();
        experiment::write_summary(&mut out, &self.exp, &self.runs).map_err(to_py)?;
        Ok(String::from_utf8(out).expect("csv output is ASCII"))
    }

    /// Write trajectory.csv and summary.csv into `out_dir`.
    fn write(&self, out_dir: PathBuf) -> PyResult<()> {
        experiment::write_simulation(&out_dir, &self.exp, &self.runs).map_err(to_py)
    }
}

/// Run every seed of `config`; `threads` caps the worker pool.
#[pyfunction]
#[pyo3(signature = (config, threads = None))]
fn simulate(py: Python<'_>, config: PyRef<'_, PyConfig>, threads: Option<usize>) -> PyResult<PySimulation> {
    let cfg = config.0.clone();
    py.detach(move || {
        let exp = Experiment::from_config(&cfg)?;
        let runs = experiment::simulate_on(&exp, threads.or_else(experiment::thread_cap))?;
        Ok(PySimulation { exp, runs })
    })
    .map_err(to_py)
}

/// Intermediate vs uniform vs no exploration in the two-stage model.
#[pyfunction]
#[pyo3(signature = (config, replications = 200))]
fn compare_actions<'py>(py: Python<'py>, config: PyRef<'_, PyConfig>, replications: usize) -> PyResult<Bound<'py, PyDict>> {
    let cfg = config.0.clone();
    let report = py.detach(move || experiment::mdp_report(&cfg, replications)).map_err(to_py)?;
    let out = PyDict::new(py);
    out.set_item("replications", report.replications)?;
    out.set_item("theorem5_condition", report.theorem5_condition)?;
    out.set_item("thm4_ordering", report.thm4_ordering)?;
    out.set_item("thm5_ordering", report.thm5_ordering)?;
    let actions = PyDict::new(py);
    for a in &report.actions {
        let d = PyDict::new(py);
        for (key, m) in [
            ("exp_cost", &a.exp_cost),
            ("miss_cost_1", &a.miss_cost_1),
            ("miss_cost_2", &a.miss_cost_2),
            ("total", &a.total),
            ("abs_gap", &a.abs_gap),
            ("total_diff_vs_intermediate", &a.total_diff_vs_intermediate),
            ("abs_gap_diff_vs_intermediate", &a.abs_gap_diff_vs_intermediate),
        ] {
            d.set_item(key, (m.mean, m.se))?;
        }
        actions.set_item(a.action.name(), d)?;
    }
    out.set_item("actions", actions)?;
    Ok(out)
}

/// Variance of a Gaussian with spread `sigma` truncated to `mean ± half`.
#[pyfunction]
fn truncated_variance(sigma: f64, half: f64) -> f64 {
    twoparam::truncated_variance(sigma, half)
}

/// Spread of the Gaussian centered at `mu` whose truncation to `(a, b)` has variance `s2`.
#[pyfunction]
fn untruncate_variance(s2: f64, a: f64, b: f64, mu: f64) -> PyResult<f64> {
    twoparam::untruncate_variance(s2, a, b, mu).map_err(to_py)
}

/// Two-parameter Gaussian debiasing run; returns per-update series.
#[pyfunction]
#[pyo3(signature = (seed = 0, horizon = None, batch_min = None, epsilon = None))]
fn two_param<'py>(
    py: Python<'py>,
    seed: u64,
    horizon: Option<usize>,
    batch_min: Option<usize>,
    epsilon: Option<f64>,
) -> PyResult<Bound<'py, PyDict>> {
    let mut cfg = TwoParamConfig::default();
    cfg.horizon = horizon.unwrap_or(cfg.horizon);
    cfg.batch_min = batch_min.unwrap_or(cfg.batch_min);
    cfg.epsilon = epsilon.unwrap_or(cfg.epsilon);
    let points = py.detach(|| twoparam::run_two_param(&cfg, seed)).map_err(to_py)?;
    let out = PyDict::new(py);
    out.set_item("t", points.iter().map(|p| p.t).collect::<Vec<_>>())?;
    out.set_item("theta", points.iter().map(|p| p.theta).collect::<Vec<_>>())?;
    for y in 0..2 {
        out.set_item(format!("mu{y}"), points.iter().map(|p| p.estimates[y].mu).collect::<Vec<_>>())?;
        out.set_item(format!("sigma{y}"), points.iter().map(|p| p.estimates[y].sigma).collect::<Vec<_>>())?;
    }
    Ok(out)
}

#[pymodule]
fn debias(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDist>()?;
    m.add_class::<PyGroup>()?;
    m.add_class::<PyConfig>()?;
    m.add_class::<PyRun>()?;
    m.add_class::<PySimulation>()?;
    m.add_function(wrap_pyfunction!(optimal_thresholds, m)?)?;
    m.add_function(wrap_pyfunction!(lower_bound, m)?)?;
    m.add_function(wrap_pyfunction!(upper_bound, m)?)?;
    m.add_function(wrap_pyfunction!(fit_distribution, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(compare_actions, m)?)?;
    m.add_function(wrap_pyfunction!(truncated_variance, m)?)?;
    m.add_function(wrap_pyfunction!(untruncate_variance, m)?)?;
    m.add_function(wrap_pyfunction!(two_param, m)?)?;
    Ok(())
}
