//! Numerical Wasserstein-p certificate from the generator comparison:
//! W_p <= g_0 + g_1 ||a_1 + T||_p + g_2 ||a_2 - 1||_p + sum_{k>=3} g_k ||a_k||_p,
//! with the g_k weights evaluated by quadrature and the series truncated at
//! kmax with a certified remainder.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::gaussian_numerics::{gaussian_lp_norm, ln_hermite_lp_bound};
use crate::jsq_engine::JointPmf;
use crate::model_core::QueueParams;
use crate::report::{BoundReport, Regime};
use crate::ssq_exact::{log_sum_exp, LatticePmf};
use libm::lgamma as ln_gamma;

pub const DEFAULT_KMAX: usize = 25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GCoefficients {
    pub t0: f64,
    pub p: f64,
    /// g_0 ..= g_kmax.
    pub g: Vec<f64>,
    /// Bound on sum_{k>kmax} g_k (u/p)^{k/2}/k!, u = 1 - e^{-2 t0}: the
    /// remainder per unit of B/gamma at the default t0, where gamma/lambda = u/p.
    pub tail_bound: f64,
}

/// Default t0 = -(1/2) ln(1 - p gamma/lambda); needs p gamma/lambda < 1.
pub fn default_t0(p: f64, gamma: f64, lambda: f64) -> Result<f64> {
    let r = p * gamma / lambda;
    if !(r < 1.0 && r > 0.0) {
        return invalid(format!("default t0 needs 0 < p gamma/lambda < 1, got {r}; supply t0"));
    }
    Ok(-0.5 * (-r).ln_1p())
}

const GL8: [(f64, f64); 8] = [
    (-0.960_289_856_497_536_2, 0.101_228_536_290_376_26),
    (-0.796_666_477_413_626_7, 0.222_381_034_453_374_47),
    (-0.525_532_409_916_329, 0.313_706_645_877_887_3),
    (-0.183_434_642_495_649_8, 0.362_683_783_378_362),
    (0.183_434_642_495_649_8, 0.362_683_783_378_362),
    (0.525_532_409_916_329, 0.313_706_645_877_887_3),
    (0.796_666_477_413_626_7, 0.222_381_034_453_374_47),
    (0.960_289_856_497_536_2, 0.101_228_536_290_376_26),
];

fn gl(f: &impl Fn(f64) -> f64, lo: f64, hi: f64, m: usize) -> f64 {
    let h = (hi - lo) / m as f64;
    let mut s = 0.0;
    for j in 0..m {
        let c = lo + (j as f64 + 0.5) * h;
        for &(x, w) in GL8.iter() {
            s += w * f(c + 0.5 * h * x);
        }
    }
    0.5 * h * s
}

/// int_0^Y y^{k-1} (1 + y^2)^{-3/2} dy, the x = e^{-t} integral after the
/// substitution y = x/sqrt(1 - x^2). Doubles panels until stable to 1e-13.
fn shape_integral(k: usize, ymax: f64) -> f64 {
    let f = |y: f64| {
        if y <= 0.0 {
            return if k == 1 { 1.0 } else { 0.0 };
        }
        ((k as f64 - 1.0) * y.ln() - 1.5 * (y * y).ln_1p()).exp()
    };
    let mut m = (ymax / 0.5).ceil().max(1.0) as usize;
    let mut prev = gl(&f, 0.0, ymax, m);
    for _ in 0..12 {
        m *= 2;
        let cur = gl(&f, 0.0, ymax, m);
        if (cur - prev).abs() <= 1e-13 * cur.abs() {
            return cur;
        }
        prev = cur;
    }
    prev
}

/// ln of the per-term bound
/// (e^{t0} e^{-k t0}/k) u^{-(k-1)/2} ||h_{k-1}||_p s^k / k!, s = sqrt(gamma/lambda).
fn ln_term_envelope(k: usize, t0: f64, p: f64, s: f64) -> f64 {
    let kf = k as f64;
    let u = -(-2.0 * t0).exp_m1();
    t0 - kf * t0 - kf.ln() - 0.5 * (kf - 1.0) * u.ln() + ln_hermite_lp_bound(k as u32 - 1, p) + kf * s.ln()
        - ln_gamma(kf + 1.0)
}

/// Remainder bound sum_{k>kmax} of the envelope terms (geometric majorant).
fn ln_tail(kmax: usize, t0: f64, p: f64, s: f64) -> f64 {
    let u = -(-2.0 * t0).exp_m1();
    let r = (-t0).exp() * s * (p / u).sqrt();
    let q = r / ((kmax + 2) as f64).sqrt();
    if q >= 1.0 {
        return f64::INFINITY;
    }
    ln_term_envelope(kmax + 1, t0, p, s) - (-q).ln_1p()
}

pub fn g_coefficients(t0: f64, p: f64, kmax: usize) -> Result<GCoefficients> {
    if !(t0 > 0.0 && t0.is_finite()) {
        return invalid(format!("t0 must be > 0, got {t0}"));
    }
    if !(p > 1.0) {
        return invalid(format!("p must be > 1, got {p}"));
    }
    if kmax < 3 {
        return invalid(format!("kmax must be >= 3, got {kmax}"));
    }
    let zp = gaussian_lp_norm(p)?;
    let x0 = (-t0).exp();
    let u = -(-2.0 * t0).exp_m1();
    let ymax = x0 / u.sqrt();
    let mut g = Vec::with_capacity(kmax + 1);
    g.push(t0.exp() * zp * x0.acos());
    g.push(1.0);
    g.push(t0.exp() * zp * (1.0 - u.sqrt()));
    for k in 3..=kmax {
        let h = ln_hermite_lp_bound(k as u32 - 1, p).exp();
        g.push(t0.exp() * shape_integral(k, ymax) * h);
    }
    let s = (u / p).sqrt();
    Ok(GCoefficients { t0, p, g, tail_bound: ln_tail(kmax, t0, p, s).exp() })
}

/// Which chain the coefficient refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KmModel {
    Ssq,
    /// Total queue length of JSQ, evaluated on the joint state.
    JsqSum,
}

/// a_k(x) = (1/(k! gamma)) (gamma/lambda)^{k/2} (lambda + (-1)^k D(x)) with
/// D(x) = sum_i (mu_i 1{x_i >= 1} + gamma x_i).
pub fn km_coefficients(params: &QueueParams, model: KmModel, k: u32, state: &[i64]) -> Result<f64> {
    if k < 1 {
        return invalid("k must be >= 1");
    }
    match model {
        KmModel::Ssq if state.len() != 1 || params.n() != 1 => {
            return invalid("single-server coefficient needs n = 1 and a scalar state")
        }
        KmModel::JsqSum if state.len() != params.n() => {
            return invalid(format!("state has {} coordinates, model has n = {}", state.len(), params.n()))
        }
        _ => {}
    }
    if state.iter().any(|x| *x < 0) {
        return invalid("negative state");
    }
    let d = departure_rate(params, state);
    let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
    let kf = k as f64;
    let ln_pref = -ln_gamma(kf + 1.0) - params.gamma.ln() + 0.5 * kf * (params.gamma / params.lambda).ln();
    Ok(ln_pref.exp() * (params.lambda + sign * d))
}

fn departure_rate(params: &QueueParams, state: &[i64]) -> f64 {
    state
        .iter()
        .zip(&params.mus)
        .map(|(x, m)| if *x >= 1 { m + params.gamma * *x as f64 } else { 0.0 })
        .sum()
}

/// T(x) = sqrt(gamma/lambda) (sum x - (lambda - mu)/gamma).
pub fn stein_statistic(params: &QueueParams, state: &[i64]) -> f64 {
    params.diffusion_scale() * (state.iter().sum::<i64>() as f64 - params.fluid_center())
}

/// The law the certificate is evaluated under.
#[derive(Debug, Clone, Copy)]
pub enum CertLaw<'a> {
    Ssq(&'a LatticePmf),
    JsqSum(&'a JointPmf),
}

// (ln prob, state) pairs for exact summation
fn states(law: CertLaw<'_>) -> Vec<(f64, Vec<i64>)> {
    match law {
        CertLaw::Ssq(pmf) => pmf.log_probs.iter().enumerate().map(|(i, l)| (*l, vec![i as i64])).collect(),
        CertLaw::JsqSum(j) => j.iter().map(|(x, l)| (l, x)).collect(),
    }
}

fn lp_norm(st: &[(f64, Vec<i64>)], p: f64, f: impl Fn(&[i64]) -> f64) -> f64 {
    let ln = log_sum_exp(st.iter().map(|(l, x)| {
        let v = f(x).abs();
        if v == 0.0 {
            f64::NEG_INFINITY
        } else {
            l + p * v.ln()
        }
    }));
    (ln / p).exp()
}

/// Assemble the certificate W_p upper bound under the given law.
///
/// `t0 = None` takes the default choice. The report's `upper` is the
/// truncated series plus the certified remainder; each term sits in `aux`.
pub fn certificate_bound(
    params: &QueueParams,
    p: f64,
    t0: Option<f64>,
    kmax: usize,
    law: CertLaw<'_>,
) -> Result<BoundReport> {
    let model = match law {
        CertLaw::Ssq(_) => KmModel::Ssq,
        CertLaw::JsqSum(_) => KmModel::JsqSum,
    };
    if model == KmModel::Ssq && params.n() != 1 {
        return invalid("single-server law needs n = 1");
    }
    let t0 = match t0 {
        Some(t) => t,
        None => default_t0(p, params.gamma, params.lambda)?,
    };
    let gc = g_coefficients(t0, p, kmax)?;
    let st = states(law);
    let (lambda, gamma) = (params.lambda, params.gamma);
    let mut r = BoundReport::new("stein_certificate", Regime::Global);
    r.aux("t0", t0).aux("g0", gc.g[0]);
    let mut total = gc.g[0];

    let first = lp_norm(&st, p, |x| {
        km_coefficients(params, model, 1, x).expect("checked") + stein_statistic(params, x)
    });
    let second = lp_norm(&st, p, |x| km_coefficients(params, model, 2, x).expect("checked") - 1.0);
    total += gc.g[1] * first + gc.g[2] * second;
    r.aux("norm_first_order", first).aux("norm_second_order", second);
    r.aux("term_1", gc.g[1] * first).aux("term_2", gc.g[2] * second);
    for k in 3..=kmax {
        let nk = lp_norm(&st, p, |x| km_coefficients(params, model, k as u32, x).expect("checked"));
        let term = gc.g[k] * nk;
        total += term;
        r.aux(&format!("term_{k}"), term);
    }
    // |a_k| <= (gamma/lambda)^{k/2}/(k! gamma) (lambda + D), so the remainder
    // scales with B = lambda + ||D||_p
    let b = lambda + lp_norm(&st, p, |x| departure_rate(params, x));
    let s = (gamma / lambda).sqrt();
    let tail = (b / gamma).ln() + ln_tail(kmax, t0, p, s);
    let tail = tail.exp();
    r.upper = total + tail;
    r.lower = 0.0;
    r.aux("series_truncated", total).aux("tail_bound", tail).aux("kmax", kmax as f64);
    let trunc = match law {
        CertLaw::Ssq(pmf) => pmf.truncation_tail,
        CertLaw::JsqSum(j) => j.leak,
    };
    r.aux("law_truncation", trunc);
    r.require("remainder_finite", tail, tail.is_finite());
    Ok(r)
}
