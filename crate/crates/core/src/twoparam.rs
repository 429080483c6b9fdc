//! Debiasing a Gaussian with unknown mean and variance from symmetric truncation
//! windows, using running moments and inversion of the truncated variance.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::dataio::synth_stream;
use crate::dist::{DistEstimate, FamilyKind};
use crate::error::{Error, Result};
use crate::policy::{optimal_threshold, Window};
use crate::population::{GroupModel, Population};
use crate::rng::{stream, DECISION_STREAM};
use crate::special::{std_normal_cdf, std_normal_pdf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceMode {
    /// Welford's update; equals the two-pass sample variance.
    #[default]
    Exact,
    /// `s2 <- (N-1)/N s2 + (x^2 - mean^2)/N` with the pre-update mean.
    Literal,
}

/// Running mean and sample variance of the points seen in one window.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TruncatedMoments {
    pub n: u64,
    pub mean: f64,
    pub s2: f64,
    pub mode: VarianceMode,
}

impl TruncatedMoments {
    pub fn new(mode: VarianceMode) -> Self {
        Self {
            mode,
            ..Self::default()
        }
    }

    /// Fold `x` into the mean and count.
    pub fn incr_mean(&mut self, x: f64) {
        self.mean += (x - self.mean) / (self.n as f64 + 1.0);
        self.n += 1;
    }

    /// Fold `x` into the variance. Call before [`Self::incr_mean`] for the same
    /// point; needs at least one point already absorbed.
    pub fn incr_var(&mut self, x: f64) {
        debug_assert!(self.n >= 1);
        let n = self.n as f64;
        self.s2 = match self.mode {
            VarianceMode::Exact => {
                let next_mean = self.mean + (x - self.mean) / (n + 1.0);
                ((n - 1.0) * self.s2 + (x - self.mean) * (x - next_mean)) / n
            }
            VarianceMode::Literal => (n - 1.0) / n * self.s2 + (x * x - self.mean * self.mean) / n,
        };
    }

    pub fn push(&mut self, x: f64) {
        if self.n >= 1 {
            self.incr_var(x);
        }
        self.incr_mean(x);
    }

    /// Sample second moment about `center` rather than about the running mean.
    pub fn s2_about(&self, center: f64) -> f64 {
        if self.n < 2 {
            return 0.0;
        }
        let n = self.n as f64;
        self.s2 + n / (n - 1.0) * (self.mean - center).powi(2)
    }
}

/// Variance of `N(mu, sigma^2)` truncated to `(mu - half, mu + half)`.
pub fn truncated_variance(sigma: f64, half: f64) -> f64 {
    let k = half / sigma;
    if k < 0.5 {
        // ratio of the even moments of exp(-k^2 u^2 / 2) on (-1, 1), summed as series
        let c = 0.5 * k * k;
        let (mut num, mut den, mut term) = (0.0, 0.0, 1.0);
        for j in 0..40 {
            num += term / (2 * j + 3) as f64;
            den += term / (2 * j + 1) as f64;
            term *= -c / (j + 1) as f64;
        }
        half * half * num / den
    } else {
        let mass = 2.0 * std_normal_cdf(k) - 1.0;
        sigma * sigma * (1.0 - 2.0 * k * std_normal_pdf(k) / mass)
    }
}

/// Standard deviation of the untruncated Gaussian whose truncation to the
/// symmetric window `(a, b)` around `mu` has variance `s2`.
pub fn untruncate_variance(s2: f64, a: f64, b: f64, mu: f64) -> Result<f64> {
    let scale = 1.0 + a.abs().max(b.abs());
    if !(a < mu && mu < b) || ((b - mu) - (mu - a)).abs() > 1e-9 * scale {
        return Err(Error::Domain(format!("window ({a}, {b}) is not symmetric about {mu}")));
    }
    if !(s2 > 0.0 && s2.is_finite()) {
        return Err(Error::Domain(format!("truncated variance must be positive, got {s2}")));
    }
    let half = 0.5 * (b - a);
    // the uniform distribution on the window is the large-sigma limit
    let limit = half * half / 3.0;
    if s2 >= limit {
        return Err(Error::Infeasible { s2, limit });
    }
    let (mut lo, mut hi) = (1e-6f64.ln(), 1e6f64.ln());
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if truncated_variance(mid.exp(), half) < s2 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok((0.5 * (lo + hi)).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianParams {
    pub mu: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoParamConfig {
    /// True label-0 and label-1 distributions.
    pub truth: [GaussianParams; 2],
    pub init: [GaussianParams; 2],
    pub alpha1: f64,
    pub horizon: usize,
    pub epsilon: f64,
    /// In-window points needed for each label before an update.
    pub batch_min: usize,
    pub mode: VarianceMode,
}

impl Default for TwoParamConfig {
    fn default() -> Self {
        Self {
            truth: [GaussianParams { mu: 7.0, sigma: 1.0 }, GaussianParams { mu: 10.0, sigma: 1.0 }],
            init: [GaussianParams { mu: 5.0, sigma: 1.3 }, GaussianParams { mu: 13.0, sigma: 1.3 }],
            alpha1: 0.5,
            horizon: 100_000,
            epsilon: 0.5,
            batch_min: 200,
            mode: VarianceMode::Exact,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoParamPoint {
    pub t: u64,
    pub theta: f64,
    pub estimates: [GaussianParams; 2],
    pub windows: [Window; 2],
    /// Set for a label whose window variance exceeded what any Gaussian can produce.
    pub infeasible: [bool; 2],
}

/// Window of label `y` mirrored about its mean through the threshold.
fn window_about(mu: f64, theta: f64) -> Window {
    let half = (theta - mu).abs().max(1e-9);
    Window {
        lo: mu - half,
        hi: mu + half,
    }
}

fn estimate_population(est: &[GaussianParams; 2], alpha1: f64) -> Result<Population> {
    let d = |p: GaussianParams| DistEstimate::new(FamilyKind::GaussianLocation { sigma: p.sigma }, p.mu, 50.0);
    Population::new(vec![GroupModel::new("g", 1.0, d(est[0])?, d(est[1])?, alpha1)?])
}

pub fn run_two_param(cfg: &TwoParamConfig, seed: u64) -> Result<Vec<TwoParamPoint>> {
    if !(cfg.epsilon > 0.0 && cfg.epsilon <= 1.0) {
        return Err(Error::config("twoparam.epsilon", "must lie in (0, 1]"));
    }
    if cfg.batch_min < 2 {
        return Err(Error::config("twoparam.batch_min", "must be at least 2"));
    }
    let truth = estimate_population(&cfg.truth, cfg.alpha1)?;
    let mut est = cfg.init;
    let mut rng = stream(seed, DECISION_STREAM);

    let plan = |est: &[GaussianParams; 2]| -> Result<(f64, [Window; 2])> {
        let theta = optimal_threshold(&estimate_population(est, cfg.alpha1)?.groups[0])?;
        Ok((theta, [window_about(est[0].mu, theta), window_about(est[1].mu, theta)]))
    };
    let (mut theta, mut windows) = plan(&est)?;
    let mut moments = [TruncatedMoments::new(cfg.mode); 2];
    let mut points = vec![TwoParamPoint {
        t: 0,
        theta,
        estimates: est,
        windows,
        infeasible: [false; 2],
    }];

    for a in synth_stream(&truth, cfg.horizon, seed) {
        let explore_floor = windows[0].lo.min(windows[1].lo);
        let u: f64 = rng.random();
        let admitted = a.x >= theta || (a.x >= explore_floor && u < cfg.epsilon);
        if !admitted || !windows[a.label].contains(a.x) {
            continue;
        }
        moments[a.label].push(a.x);
        if moments.iter().any(|m| (m.n as usize) < cfg.batch_min) {
            continue;
        }
        let mut infeasible = [false; 2];
        for y in 0..2 {
            let w = windows[y];
            let center = 0.5 * (w.lo + w.hi);
            let s2 = moments[y].s2_about(center);
            let sigma = match untruncate_variance(s2, w.lo, w.hi, center) {
                Ok(s) => s,
                Err(Error::Infeasible { .. }) => {
                    infeasible[y] = true;
                    s2.sqrt()
                }
                Err(e) => return Err(e),
            };
            est[y] = GaussianParams {
                mu: moments[y].mean,
                sigma: sigma.max(1e-6),
            };
        }
        (theta, windows) = plan(&est)?;
        moments = [TruncatedMoments::new(cfg.mode); 2];
        points.push(TwoParamPoint {
            t: a.t + 1,
            theta,
            estimates: est,
            windows,
            infeasible,
        });
    }
    Ok(points)
}
