//! Finite sums over rising products, `Σ_{l=0}^{y-1} f(z + l)`.
//!
//! These appear in every count likelihood and working weight here. The loop
//! form is exact and used as the reference; the fast form switches to
//! log-gamma / digamma differences once `y` exceeds [`LOOP_LIMIT`].

use serde::{Deserialize, Serialize};
use statrs::function::gamma::{digamma, ln_gamma};

/// Counts at or below this are always summed term by term.
pub const LOOP_LIMIT: u64 = 48;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SumMethod {
    /// Direct term-by-term loop.
    Loop,
    /// Loop for small counts, gamma-function differences for large ones.
    #[default]
    Fast,
}

/// `Σ_{l<y} ln(z + l)`.
pub fn sum_log_rising(z: f64, y: u64, method: SumMethod) -> f64 {
    if y == 0 {
        return 0.0;
    }
    match method {
        SumMethod::Fast if y > LOOP_LIMIT => ln_gamma(z + y as f64) - ln_gamma(z),
        _ => (0..y).map(|l| (z + l as f64).ln()).sum(),
    }
}

/// `Σ_{l<y} 1 / (z + l)`.
pub fn sum_recip_rising(z: f64, y: u64, method: SumMethod) -> f64 {
    if y == 0 {
        return 0.0;
    }
    match method {
        SumMethod::Fast if y > LOOP_LIMIT => digamma(z + y as f64) - digamma(z),
        _ => (0..y).map(|l| 1.0 / (z + l as f64)).sum(),
    }
}

/// `Σ_{l<y} z / (z + l)`.
pub fn sum_ratio_rising(z: f64, y: u64, method: SumMethod) -> f64 {
    z * sum_recip_rising(z, y, method)
}

/// `ln(y+! / Π y_d!)`.
pub fn ln_multinomial_coef(counts: impl IntoIterator<Item = u64>) -> f64 {
    let mut total = 0u64;
    let mut acc = 0.0;
    for c in counts {
        total += c;
        acc -= ln_factorial(c);
    }
    acc + ln_factorial(total)
}

pub fn ln_factorial(k: u64) -> f64 {
    if k < 2 {
        0.0
    } else {
        ln_gamma(k as f64 + 1.0)
    }
}
