//! Softplus and the gamma-family special functions used by the evidential
//! loss.
//!
//! Digamma, trigamma and log-gamma all shift the argument above
//! [`ASYMPTOTIC_FROM`] with the standard recurrences and then evaluate the
//! Bernoulli-number asymptotic series.

use crate::error::{Error, Result};

const ASYMPTOTIC_FROM: f64 = 10.0;
const HALF_LN_TWO_PI: f64 = 0.918_938_533_204_672_7;

/// B_{2k} / (2k) for k = 1..=7.
const DIGAMMA_SERIES: [f64; 7] = [
    1.0 / 12.0,
    -1.0 / 120.0,
    1.0 / 252.0,
    -1.0 / 240.0,
    1.0 / 132.0,
    -691.0 / 32760.0,
    1.0 / 12.0,
];

/// B_{2k} for k = 1..=7.
const BERNOULLI: [f64; 7] = [
    1.0 / 6.0,
    -1.0 / 30.0,
    1.0 / 42.0,
    -1.0 / 30.0,
    5.0 / 66.0,
    -691.0 / 2730.0,
    7.0 / 6.0,
];

/// B_{2k} / (2k (2k - 1)) for k = 1..=7.
const STIRLING_SERIES: [f64; 7] = [
    1.0 / 12.0,
    -1.0 / 360.0,
    1.0 / 1260.0,
    -1.0 / 1680.0,
    1.0 / 1188.0,
    -691.0 / 360_360.0,
    1.0 / 156.0,
];

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Derivative of softplus, the logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn check_domain(name: &str, x: f64) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("{name} requires a finite x > 0, got {x}")))
    }
}

pub fn digamma(x: f64) -> Result<f64> {
    check_domain("digamma", x)?;
    Ok(digamma_unchecked(x))
}

pub fn trigamma(x: f64) -> Result<f64> {
    check_domain("trigamma", x)?;
    Ok(trigamma_unchecked(x))
}

pub fn log_gamma(x: f64) -> Result<f64> {
    check_domain("log_gamma", x)?;
    Ok(log_gamma_unchecked(x))
}

pub(crate) fn digamma_unchecked(mut x: f64) -> f64 {
    let mut shift = 0.0;
    while x < ASYMPTOTIC_FROM {
        shift -= 1.0 / x;
        x += 1.0;
    }
    let inv2 = 1.0 / (x * x);
    let mut pow = inv2;
    let mut series = 0.0;
    for c in DIGAMMA_SERIES {
        series += c * pow;
        pow *= inv2;
    }
    shift + x.ln() - 0.5 / x - series
}

pub(crate) fn trigamma_unchecked(mut x: f64) -> f64 {
    let mut shift = 0.0;
    while x < ASYMPTOTIC_FROM {
        shift += 1.0 / (x * x);
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    let mut pow = inv2 * inv;
    let mut series = 0.0;
    for b in BERNOULLI {
        series += b * pow;
        pow *= inv2;
    }
    shift + inv + 0.5 * inv2 + series
}

pub(crate) fn log_gamma_unchecked(mut x: f64) -> f64 {
    // Exact zeros of ln Γ on the positive axis.
    if x == 1.0 || x == 2.0 {
        return 0.0;
    }
    let mut product = 1.0;
    while x < ASYMPTOTIC_FROM {
        product *= x;
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    let mut pow = inv;
    let mut series = 0.0;
    for c in STIRLING_SERIES {
        series += c * pow;
        pow *= inv2;
    }
    (x - 0.5) * x.ln() - x + HALF_LN_TWO_PI + series - product.ln()
}
