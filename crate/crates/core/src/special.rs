//! Special functions: normal CDF from `libm`, inverses and incomplete beta from `statrs`.

use statrs::function::{beta, erf};
use std::f64::consts::{FRAC_1_SQRT_2, SQRT_2};

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Standard normal density.
pub fn std_normal_pdf(z: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * z * z).exp()
}

/// Standard normal CDF, accurate in both tails.
pub fn std_normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z * FRAC_1_SQRT_2)
}

/// Standard normal quantile. `p` must lie in (0, 1).
pub fn std_normal_quantile(p: f64) -> f64 {
    let z = -SQRT_2 * erf::erfc_inv(2.0 * p);
    // one Newton step against the CDF above keeps the pair mutually consistent
    let d = std_normal_pdf(z);
    if d > 1e-300 {
        z - (std_normal_cdf(z) - p) / d
    } else {
        z
    }
}

/// Regularized incomplete beta I_x(a, b).
pub fn beta_reg(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else if x >= 1.0 {
        1.0
    } else {
        beta::beta_reg(a, b, x)
    }
}

pub fn ln_beta(a: f64, b: f64) -> f64 {
    beta::ln_beta(a, b)
}

/// Bisection for the root of a nondecreasing function on `[lo, hi]`.
///
/// Runs until the bracket stops shrinking in floating point or its width
/// drops below `tol`.
pub(crate) fn bisect_increasing(mut lo: f64, mut hi: f64, tol: f64, f: impl Fn(f64) -> f64) -> f64 {
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi || hi - lo <= tol {
            break;
        }
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Golden-section search for the minimum of a unimodal function on `[a, b]`.
pub(crate) fn golden_min(mut a: f64, mut b: f64, tol: f64, f: impl Fn(f64) -> f64) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a).abs() > tol {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
        if c >= d {
            break;
        }
    }
    if fc <= fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normal_reference_values() {
        assert!((std_normal_pdf(0.0) - 0.398_942_280_401_432_7).abs() < 1e-15);
        assert!((std_normal_cdf(0.0) - 0.5).abs() < 1e-15);
        assert!((std_normal_cdf(1.0) - 0.841_344_746_068_542_9).abs() < 1e-14);
        assert!((std_normal_quantile(0.975) - 1.959_963_984_540_054).abs() < 1e-12);
        // lower tail keeps relative precision
        let p = std_normal_cdf(-30.0);
        assert!(p > 0.0 && p < 1e-190);
    }

    #[test]
    fn beta_reg_uniform_and_symmetry() {
        assert!((beta_reg(1.0, 1.0, 0.3) - 0.3).abs() < 1e-14);
        let x = 0.27;
        let lhs = beta_reg(2.5, 4.0, x);
        let rhs = 1.0 - beta_reg(4.0, 2.5, 1.0 - x);
        assert!((lhs - rhs).abs() < 1e-13);
    }

    #[test]
    fn golden_finds_parabola_vertex() {
        let (x, fx) = golden_min(-3.0, 5.0, 1e-10, |x| (x - 1.25) * (x - 1.25) + 2.0);
        // flatness near the vertex limits attainable accuracy to about sqrt(machine eps)
        assert!((x - 1.25).abs() < 1e-7);
        assert!((fx - 2.0).abs() < 1e-15);
    }

    #[test]
    fn bisection_finds_cube_root() {
        let r = bisect_increasing(0.0, 3.0, 0.0, |x| x * x * x - 2.0);
        assert!((r - 2f64.cbrt()).abs() < 1e-14);
    }
}
