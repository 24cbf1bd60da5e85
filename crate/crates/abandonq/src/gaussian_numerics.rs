//! Standard-normal primitives: density, tail, quantile, Mills-ratio bracket
//! and Gaussian/Hermite L^p norms.

use serde::{Deserialize, Serialize};
use libm::erfc;
use libm::lgamma as ln_gamma;

use crate::error::{invalid, Result};

pub const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;
pub const SQRT_2PI: f64 = 2.506_628_274_631_000_7;

/// Rational bounds on the Mills ratio sqrt(2 pi) e^{a^2/2} ccdf(a).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MillsBracket {
    pub lower: f64,
    pub upper: f64,
    pub at: f64,
}

pub fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x - LN_SQRT_2PI).exp()
}

pub fn ln_std_normal_pdf(x: f64) -> f64 {
    -0.5 * x * x - LN_SQRT_2PI
}

/// P(Z > x).
pub fn std_normal_ccdf(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    0.5 * erfc(x / std::f64::consts::SQRT_2)
}

/// P(Z <= x).
pub fn std_normal_cdf(x: f64) -> f64 {
    std_normal_ccdf(-x)
}

/// ln P(Z > x), finite far beyond the underflow point of the tail itself.
pub fn ln_std_normal_ccdf(x: f64) -> f64 {
    if x < 30.0 {
        return std_normal_ccdf(x).ln();
    }
    if x.is_infinite() {
        return f64::NEG_INFINITY;
    }
    // asymptotic Mills series, error below the last term kept
    let r = 1.0 / (x * x);
    let series = 1.0 - r * (1.0 - 3.0 * r * (1.0 - 5.0 * r * (1.0 - 7.0 * r * (1.0 - 9.0 * r))));
    -0.5 * x * x - x.ln() - LN_SQRT_2PI + series.ln()
}

// Acklam's rational approximation, used only as a seed.
fn quantile_seed(u: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    let p_low = 0.02425;
    if u < p_low {
        let q = (-2.0 * u.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if u <= 1.0 - p_low {
        let q = u - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - u).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    }
}

/// Phi^{-1}(u) for u in (0,1), refined by Halley steps on the tail function.
pub fn std_normal_quantile(u: f64) -> Result<f64> {
    if !(u > 0.0 && u < 1.0) {
        return invalid(format!("quantile argument {u} outside (0,1)"));
    }
    if u > 0.5 {
        return Ok(-lower_quantile(1.0 - u));
    }
    Ok(lower_quantile(u))
}

// u <= 1/2: solve ccdf(-x) = u, where the tail is computed without cancellation.
fn lower_quantile(u: f64) -> f64 {
    let mut x = quantile_seed(u);
    for _ in 0..4 {
        let e = std_normal_ccdf(-x) - u;
        let t = e / std_normal_pdf(x);
        if !t.is_finite() {
            break;
        }
        x -= t / (1.0 + 0.5 * x * t);
    }
    x
}

/// The z with ln P(Z > z) = ln_s. Works when the tail itself underflows.
pub fn upper_quantile_ln(ln_s: f64) -> f64 {
    if ln_s >= 0.0 {
        return f64::NEG_INFINITY;
    }
    if ln_s == f64::NEG_INFINITY {
        return f64::INFINITY;
    }
    if ln_s > -700.0 {
        let s = ln_s.exp();
        if s < 1.0 {
            return -std_normal_quantile(s).unwrap_or(f64::NAN);
        }
    }
    let mut z = (-2.0 * ln_s).sqrt();
    for _ in 0..60 {
        let f = ln_std_normal_ccdf(z) - ln_s;
        let slope = -(ln_std_normal_pdf(z) - ln_std_normal_ccdf(z)).exp();
        let step = f / slope;
        z -= step;
        if step.abs() <= 1e-15 * z.abs().max(1.0) {
            break;
        }
    }
    z
}

/// 105/(91+110a) <= sqrt(2 pi) e^{a^2/2} ccdf(a) <= 44/(35+28a).
pub fn mills_bracket(a: f64) -> Result<MillsBracket> {
    if !(a >= 0.0) {
        return invalid(format!("Mills bracket needs a >= 0, got {a}"));
    }
    Ok(MillsBracket {
        lower: 105.0 / (91.0 + 110.0 * a),
        upper: 44.0 / (35.0 + 28.0 * a),
        at: a,
    })
}

/// ln E|Z|^p = (p/2) ln 2 + ln Gamma((p+1)/2) - ln sqrt(pi).
pub fn ln_gaussian_abs_moment(p: f64) -> f64 {
    0.5 * p * std::f64::consts::LN_2 + ln_gamma(0.5 * (p + 1.0)) - 0.5 * std::f64::consts::PI.ln()
}

/// ||Z||_{L^p}.
pub fn gaussian_lp_norm(p: f64) -> Result<f64> {
    if !(p >= 1.0) {
        return invalid(format!("L^p norm needs p >= 1, got {p}"));
    }
    Ok((ln_gaussian_abs_moment(p) / p).exp())
}

/// Upper bound sqrt(p)^k sqrt(k!) on ||h_k(Z)||_{L^p}.
pub fn hermite_lp_bound(k: u32, p: f64) -> f64 {
    ln_hermite_lp_bound(k, p).exp()
}

pub fn ln_hermite_lp_bound(k: u32, p: f64) -> f64 {
    let k = k as f64;
    0.5 * k * p.ln() + 0.5 * ln_gamma(k + 1.0)
}
