//! Standard normal helpers used by the closed-form risk oracles.

use libm::erfc;

pub fn cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

pub fn pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Expected ramp loss `clamp((1 - z) / 2, 0, 1)` for `z ~ N(mean, sd^2)`.
///
/// `sd == 0` degenerates to the loss at `mean`.
pub fn expected_ramp(mean: f64, sd: f64) -> f64 {
    if sd <= 0.0 {
        return ((1.0 - mean) / 2.0).clamp(0.0, 1.0);
    }
    let lo = (-1.0 - mean) / sd;
    let hi = (1.0 - mean) / sd;
    let mass_below = cdf(lo);
    let mass_mid = cdf(hi) - cdf(lo);
    // E[(1 - Z) 1{-1 < Z < 1}] = (1 - mean) P(mid) - sd (pdf(lo) - pdf(hi))
    let mid = (1.0 - mean) * mass_mid - sd * (pdf(lo) - pdf(hi));
    (mass_below + 0.5 * mid).clamp(0.0, 1.0)
}
