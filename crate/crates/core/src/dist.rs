//! Single-free-parameter distribution families.
//!
//! Each family has exactly one free parameter `psi` (the Gaussian mean, or
//! the Beta `alpha` with `beta` held fixed). A [`DistEstimate`] also carries
//! a percentile level `tau` and caches the reference point `omega`, the
//! `tau`-th percentile of the distribution. Updating an estimate means
//! re-anchoring `psi` so that its reference point lands on an observed value.

use rand::distr::Open01;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::{beta_reg, bisect_increasing, ln_beta, std_normal_cdf, std_normal_pdf, std_normal_quantile};

/// Bracket searched for the Beta `alpha` parameter before geometric expansion.
const ALPHA_BRACKET: (f64, f64) = (1e-4, 1e4);
const MAX_DOUBLINGS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum FamilyKind {
    /// Normal with known standard deviation; the mean is free.
    GaussianLocation { sigma: f64 },
    /// Beta on (0, 1) with known `beta`; `alpha` is free.
    BetaAlpha { beta: f64 },
}

impl FamilyKind {
    pub fn validate(&self) -> Result<()> {
        let (name, v) = match *self {
            FamilyKind::GaussianLocation { sigma } => ("sigma", sigma),
            FamilyKind::BetaAlpha { beta } => ("beta", beta),
        };
        if v.is_finite() && v > 0.0 {
            Ok(())
        } else {
            Err(Error::Domain(format!("{name} must be positive and finite, got {v}")))
        }
    }

    /// The fixed (known) parameter of the family.
    pub fn fixed_param(&self) -> f64 {
        match *self {
            FamilyKind::GaussianLocation { sigma } => sigma,
            FamilyKind::BetaAlpha { beta } => beta,
        }
    }

    pub fn in_support(&self, x: f64) -> bool {
        match self {
            FamilyKind::GaussianLocation { .. } => x.is_finite(),
            FamilyKind::BetaAlpha { .. } => x > 0.0 && x < 1.0,
        }
    }

    fn psi_valid(&self, psi: f64) -> bool {
        match self {
            FamilyKind::GaussianLocation { .. } => psi.is_finite(),
            FamilyKind::BetaAlpha { .. } => psi.is_finite() && psi > 0.0,
        }
    }

    fn cdf(&self, psi: f64, x: f64) -> f64 {
        match *self {
            FamilyKind::GaussianLocation { sigma } => std_normal_cdf((x - psi) / sigma),
            FamilyKind::BetaAlpha { beta } => beta_reg(psi, beta, x).clamp(0.0, 1.0),
        }
    }

    fn quantile(&self, psi: f64, p: f64) -> f64 {
        match *self {
            FamilyKind::GaussianLocation { sigma } => psi + sigma * std_normal_quantile(p),
            FamilyKind::BetaAlpha { beta } => {
                bisect_increasing(0.0, 1.0, 0.0, |x| beta_reg(psi, beta, x) - p)
            }
        }
    }
}

/// A distribution estimate with its cached reference percentile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistEstimate {
    kind: FamilyKind,
    psi: f64,
    tau: f64,
    omega: f64,
}

impl DistEstimate {
    /// Build an estimate from its free parameter. `tau` is a percentile in (0, 100).
    pub fn new(kind: FamilyKind, psi: f64, tau: f64) -> Result<Self> {
        kind.validate()?;
        if !(tau > 0.0 && tau < 100.0) {
            return Err(Error::Domain(format!("tau must lie in (0, 100), got {tau}")));
        }
        if !kind.psi_valid(psi) {
            return Err(Error::Domain(format!("invalid free parameter {psi} for {kind:?}")));
        }
        let omega = kind.quantile(psi, tau / 100.0);
        Ok(Self { kind, psi, tau, omega })
    }

    /// Build an estimate whose `tau`-th percentile equals `omega`.
    pub fn from_reference(kind: FamilyKind, tau: f64, omega: f64) -> Result<Self> {
        let psi = solve_param_for_percentile(kind, tau, omega)?;
        Self::new(kind, psi, tau)
    }

    pub fn with_psi(&self, psi: f64) -> Result<Self> {
        Self::new(self.kind, psi, self.tau)
    }

    pub fn with_tau(&self, tau: f64) -> Result<Self> {
        Self::new(self.kind, self.psi, tau)
    }

    pub fn kind(&self) -> FamilyKind {
        self.kind
    }

    pub fn psi(&self) -> f64 {
        self.psi
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// The cached `tau`-th percentile.
    pub fn omega(&self) -> f64 {
        self.omega
    }

    pub fn pdf(&self, x: f64) -> f64 {
        match self.kind {
            FamilyKind::GaussianLocation { sigma } => std_normal_pdf((x - self.psi) / sigma) / sigma,
            FamilyKind::BetaAlpha { beta } => {
                if x <= 0.0 || x >= 1.0 {
                    return 0.0;
                }
                let a = self.psi;
                ((a - 1.0) * x.ln() + (beta - 1.0) * (-x).ln_1p() - ln_beta(a, beta)).exp()
            }
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        self.kind.cdf(self.psi, x)
    }

    pub fn quantile(&self, p: f64) -> Result<f64> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::Domain(format!("quantile level must lie in (0, 1), got {p}")));
        }
        Ok(self.kind.quantile(self.psi, p))
    }

    /// Quantile of the distribution truncated to `(a, b)`.
    pub fn truncated_quantile(&self, a: f64, b: f64, p: f64) -> Result<f64> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::Domain(format!("quantile level must lie in (0, 1), got {p}")));
        }
        if !(a < b) {
            return Err(Error::Domain(format!("empty window ({a}, {b})")));
        }
        let (fa, fb) = (self.cdf(a), self.cdf(b));
        let mass = fb - fa;
        if mass <= 1e-12 {
            return Err(Error::Domain(format!("window ({a}, {b}) carries no probability mass")));
        }
        let (lo, hi) = match self.kind {
            FamilyKind::BetaAlpha { .. } => (a.max(0.0), b.min(1.0)),
            FamilyKind::GaussianLocation { .. } => (a, b),
        };
        Ok(bisect_increasing(lo, hi, 0.0, |x| (self.cdf(x) - fa) / mass - p))
    }

    /// `n` draws by inverse-transform sampling.
    pub fn sample_batch<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<f64> {
        (0..n).map(|_| self.sample(rng)).collect()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.sample(Open01);
        self.kind.quantile(self.psi, u)
    }
}

/// Free parameter whose `tau`-th percentile equals `target`.
pub fn solve_param_for_percentile(kind: FamilyKind, tau: f64, target: f64) -> Result<f64> {
    kind.validate()?;
    if !(tau > 0.0 && tau < 100.0) {
        return Err(Error::Domain(format!("tau must lie in (0, 100), got {tau}")));
    }
    if !kind.in_support(target) {
        return Err(Error::Domain(format!("target {target} outside the support of {kind:?}")));
    }
    let p = tau / 100.0;
    match kind {
        FamilyKind::GaussianLocation { sigma } => Ok(target - sigma * std_normal_quantile(p)),
        FamilyKind::BetaAlpha { beta } => {
            // The percentile increases with alpha, so cdf(target) decreases with it.
            let excess = |ln_a: f64| p - beta_reg(ln_a.exp(), beta, target);
            let (mut lo, mut hi) = (ALPHA_BRACKET.0.ln(), ALPHA_BRACKET.1.ln());
            let mut doublings = 0;
            while excess(lo) > 0.0 {
                lo -= (hi - lo).max(1.0);
                doublings += 1;
                if doublings > MAX_DOUBLINGS || lo.exp() == 0.0 {
                    return Err(Error::Numeric(format!("cannot bracket alpha for target {target}")));
                }
            }
            while excess(hi) < 0.0 {
                hi += (hi - lo).max(1.0);
                doublings += 1;
                if doublings > MAX_DOUBLINGS || !hi.exp().is_finite() {
                    return Err(Error::Numeric(format!("cannot bracket alpha for target {target}")));
                }
            }
            Ok(bisect_increasing(lo, hi, 0.0, excess).exp())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn gauss(psi: f64) -> DistEstimate {
        DistEstimate::new(FamilyKind::GaussianLocation { sigma: 1.0 }, psi, 50.0).unwrap()
    }

    fn beta(alpha: f64, b: f64, tau: f64) -> DistEstimate {
        DistEstimate::new(FamilyKind::BetaAlpha { beta: b }, alpha, tau).unwrap()
    }

    /// Composite Simpson rule, used as an independent check on the erf path.
    fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            s += w * f(a + i as f64 * h);
        }
        s * h / 3.0
    }

    #[test]
    fn pdf_examples() {
        assert!((gauss(0.0).pdf(0.0) - 1.0 / (2.0 * std::f64::consts::PI).sqrt()).abs() < 1e-15);
        assert!((beta(1.0, 1.0, 50.0).pdf(0.3) - 1.0).abs() < 1e-12);
        let oracle = (-0.5f64).exp() / (2.0 * std::f64::consts::PI).sqrt();
        assert!((gauss(7.0).pdf(8.0) - oracle).abs() < 1e-14);
        assert!((gauss(7.0).pdf(8.0) - 0.2420).abs() < 1e-4);
        assert_eq!(beta(2.0, 3.0, 50.0).pdf(1.5), 0.0);
        assert_eq!(beta(2.0, 3.0, 50.0).pdf(-0.1), 0.0);
    }

    #[test]
    fn cdf_examples_against_quadrature() {
        let d = gauss(7.0);
        assert!((d.cdf(7.0) - 0.5).abs() < 1e-15);
        assert!((beta(1.0, 1.0, 50.0).cdf(0.3) - 0.3).abs() < 1e-14);
        let quad = simpson(|x| d.pdf(x), -33.0, 8.0, 200_000);
        assert!((d.cdf(8.0) - quad).abs() < 1e-10);
        assert!((d.cdf(8.0) - 0.84134).abs() < 1e-5);
        // Beta cdf against quadrature of its density
        let b = beta(1.94, 3.32, 50.0);
        let quad = simpson(|x| b.pdf(x), 0.0, 0.4, 200_000);
        assert!((b.cdf(0.4) - quad).abs() < 1e-8);
    }

    #[test]
    fn quantile_examples() {
        assert!((gauss(7.0).quantile(0.5).unwrap() - 7.0).abs() < 1e-12);
        assert!((beta(1.0, 1.0, 50.0).quantile(0.25).unwrap() - 0.25).abs() < 1e-12);
        let x = gauss(7.0).quantile(0.841_344_746_068_542_9).unwrap();
        assert!((x - 8.0).abs() < 1e-9);
        assert!(gauss(7.0).quantile(0.0).is_err());
        assert!(gauss(7.0).quantile(1.0).is_err());
        assert!(gauss(7.0).quantile(f64::NAN).is_err());
    }

    #[test]
    fn omega_is_cached_percentile() {
        let d = DistEstimate::new(FamilyKind::GaussianLocation { sigma: 1.0 }, 7.0, 60.0).unwrap();
        assert!((d.omega() - d.quantile(0.6).unwrap()).abs() < 1e-10);
        let b = beta(1.19, 6.10, 60.0);
        assert!((b.omega() - b.quantile(0.6).unwrap()).abs() < 1e-10);
        let b2 = b.with_psi(1.5).unwrap();
        assert!((b2.omega() - b2.quantile(0.6).unwrap()).abs() < 1e-10);
    }

    #[test]
    fn solve_param_examples() {
        let g = FamilyKind::GaussianLocation { sigma: 1.0 };
        assert!((solve_param_for_percentile(g, 50.0, 6.8).unwrap() - 6.8).abs() < 1e-12);
        // 84.134th percentile of N(7, 1) is 8
        let psi = solve_param_for_percentile(g, 84.134_474_606_854_3, 8.0).unwrap();
        assert!((psi - 7.0).abs() < 1e-9);
        let b = FamilyKind::BetaAlpha { beta: 1.0 };
        assert!((solve_param_for_percentile(b, 50.0, 0.5).unwrap() - 1.0).abs() < 1e-9);
        assert!(solve_param_for_percentile(b, 50.0, 1.2).is_err());
        assert!(solve_param_for_percentile(b, 50.0, 0.0).is_err());
    }

    #[test]
    fn solve_param_roundtrips_beta() {
        for &alpha in &[0.3, 1.01, 1.94, 2.83, 40.0] {
            for &tau in &[10.0, 50.0, 60.0, 90.0] {
                let d = beta(alpha, 3.32, tau);
                let back = solve_param_for_percentile(d.kind(), tau, d.omega()).unwrap();
                assert!((back - alpha).abs() / alpha < 1e-8, "alpha {alpha} tau {tau} -> {back}");
            }
        }
    }

    #[test]
    fn truncated_quantile_examples() {
        let v = gauss(0.0).truncated_quantile(-1.0, 1.0, 0.5).unwrap();
        assert!(v.abs() < 1e-12);
        let v = beta(1.0, 1.0, 50.0).truncated_quantile(0.2, 0.6, 0.5).unwrap();
        assert!((v - 0.4).abs() < 1e-12);
        assert!(gauss(0.0).truncated_quantile(1.0, -1.0, 0.5).is_err());
        assert!(gauss(0.0).truncated_quantile(40.0, 41.0, 0.5).is_err());
    }

    #[test]
    fn truncated_quantile_matches_rejection_sampling() {
        let d = gauss(7.0);
        let x = d.truncated_quantile(6.0, 8.0, 0.25).unwrap();
        let lhs = (d.cdf(x) - d.cdf(6.0)) / (d.cdf(8.0) - d.cdf(6.0));
        assert!((lhs - 0.25).abs() < 1e-9);

        // Box-Muller draws, independent of the inverse-CDF path.
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut kept = Vec::new();
        while kept.len() < 200_000 {
            let u1: f64 = rng.sample(Open01);
            let u2: f64 = rng.random();
            let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
            let v = 7.0 + z;
            if v > 6.0 && v < 8.0 {
                kept.push(v);
            }
        }
        kept.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mc = kept[kept.len() / 4];
        assert!((mc - x).abs() < 0.01, "mc {mc} vs {x}");
    }

    #[test]
    fn sample_batch_contract() {
        let d = gauss(7.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(d.sample_batch(0, &mut rng).is_empty());
        let xs = d.sample_batch(100_000, &mut rng);
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        assert!((mean - 7.0).abs() < 0.02);
        let a = d.sample_batch(50, &mut ChaCha8Rng::seed_from_u64(5));
        let b = d.sample_batch(50, &mut ChaCha8Rng::seed_from_u64(5));
        assert_eq!(a, b);
    }

    fn ks_statistic(d: &DistEstimate, mut xs: Vec<f64>) -> f64 {
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = xs.len() as f64;
        xs.iter()
            .enumerate()
            .map(|(i, &x)| {
                let f = d.cdf(x);
                (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn samples_pass_kolmogorov_smirnov() {
        // 0.1% critical value for large n: 1.9495 / sqrt(n)
        let crit = 1.9495 / (10_000f64).sqrt();
        for (seed, d) in [(3u64, gauss(7.0)), (4, beta(1.94, 3.32, 50.0)), (5, beta(1.19, 6.10, 60.0))] {
            let xs = d.sample_batch(10_000, &mut ChaCha8Rng::seed_from_u64(seed));
            let ks = ks_statistic(&d, xs);
            assert!(ks < crit, "ks {ks} >= {crit} for {d:?}");
        }
    }

    #[test]
    fn invalid_construction() {
        assert!(DistEstimate::new(FamilyKind::GaussianLocation { sigma: 0.0 }, 0.0, 50.0).is_err());
        assert!(DistEstimate::new(FamilyKind::BetaAlpha { beta: -1.0 }, 1.0, 50.0).is_err());
        assert!(DistEstimate::new(FamilyKind::BetaAlpha { beta: 1.0 }, 0.0, 50.0).is_err());
        assert!(DistEstimate::new(FamilyKind::GaussianLocation { sigma: 1.0 }, 0.0, 100.0).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn family() -> impl Strategy<Value = DistEstimate> {
            prop_oneof![
                (-50.0..50.0f64, 0.1..5.0f64).prop_map(|(m, s)| {
                    DistEstimate::new(FamilyKind::GaussianLocation { sigma: s }, m, 50.0).unwrap()
                }),
                (0.2..20.0f64, 0.2..20.0f64)
                    .prop_map(|(a, b)| DistEstimate::new(FamilyKind::BetaAlpha { beta: b }, a, 50.0).unwrap()),
            ]
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn cdf_quantile_roundtrip(d in family()) {
                for &p in &[0.01, 0.1, 0.5, 0.9, 0.99] {
                    let x = d.quantile(p).unwrap();
                    prop_assert!((d.cdf(x) - p).abs() <= 1e-9);
                }
            }

            #[test]
            fn quantile_strictly_increasing(d in family()) {
                let ps = [0.001, 0.01, 0.1, 0.3, 0.5, 0.7, 0.9, 0.99, 0.999];
                let qs: Vec<f64> = ps.iter().map(|&p| d.quantile(p).unwrap()).collect();
                prop_assert!(qs.windows(2).all(|w| w[0] < w[1]));
                prop_assert!(d.pdf(qs[4]) >= 0.0);
            }

            #[test]
            fn percentile_increasing_in_psi(tau in 1.0..99.0f64, base in 0.3..10.0f64, step in 0.01..2.0f64) {
                for kind in [FamilyKind::GaussianLocation { sigma: 1.3 }, FamilyKind::BetaAlpha { beta: 3.0 }] {
                    let lo = DistEstimate::new(kind, base, tau).unwrap();
                    let hi = DistEstimate::new(kind, base + step, tau).unwrap();
                    prop_assert!(lo.omega() < hi.omega());
                }
            }

            #[test]
            fn solve_inverts_percentile(tau in 1.0..99.0f64, psi in 0.2..15.0f64) {
                for kind in [FamilyKind::GaussianLocation { sigma: 0.7 }, FamilyKind::BetaAlpha { beta: 2.5 }] {
                    let d = DistEstimate::new(kind, psi, tau).unwrap();
                    if !kind.in_support(d.omega()) { continue; }
                    let back = solve_param_for_percentile(kind, tau, d.omega()).unwrap();
                    prop_assert!((back - psi).abs() <= 1e-8 * psi.max(1.0), "{back} vs {psi}");
                }
            }
        }
    }
}
