//! Scalar distribution helpers: standard normal intervals and the χ² quantile.

use statrs::function::erf::erfc;
use statrs::function::gamma::{gamma_lr, ln_gamma};
use std::f64::consts::SQRT_2;

/// Upper tail Q(x) = 1 − Φ(x).
pub fn normal_sf(x: f64) -> f64 {
    0.5 * erfc(x / SQRT_2)
}

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

/// Φ(b) − Φ(a) for a standard normal, evaluated on the tail that avoids cancellation.
pub fn normal_interval(a: f64, b: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    let p = if a >= 0.0 {
        normal_sf(a) - normal_sf(b)
    } else if b <= 0.0 {
        normal_cdf(b) - normal_cdf(a)
    } else {
        1.0 - normal_cdf(a) - normal_sf(b)
    };
    p.clamp(0.0, 1.0)
}

pub fn chi2_cdf(x: f64, dof: usize) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x.is_infinite() {
        return 1.0;
    }
    gamma_lr(dof as f64 / 2.0, x / 2.0)
}

fn chi2_pdf(x: f64, dof: usize) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let k = dof as f64 / 2.0;
    ((k - 1.0) * x.ln() - x / 2.0 - k * 2f64.ln() - ln_gamma(k)).exp()
}

/// Quantile of the χ² distribution with `dof` degrees of freedom.
///
/// Bracketing bisection followed by safeguarded Newton refinement.
pub fn chi2_inv(p: f64, dof: usize) -> f64 {
    assert!(dof > 0, "chi2_inv needs dof > 0");
    if p <= 0.0 {
        return 0.0;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let mut lo = 0.0;
    let mut hi = dof as f64 + 10.0;
    while chi2_cdf(hi, dof) < p {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if chi2_cdf(mid, dof) < p {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-6 * hi.max(1.0) {
            break;
        }
    }
    let mut x = 0.5 * (lo + hi);
    for _ in 0..50 {
        let f = chi2_cdf(x, dof) - p;
        let d = chi2_pdf(x, dof);
        if d <= 0.0 {
            break;
        }
        let mut next = x - f / d;
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if f < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        if (next - x).abs() <= 1e-15 * x.max(1.0) {
            x = next;
            break;
        }
        x = next;
    }
    x
}
