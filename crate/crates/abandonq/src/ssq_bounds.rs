//! Explicit single-server bounds with every constant evaluated: empty-queue
//! sandwich, L^p and MGF envelopes, Wasserstein-p regimes and the four
//! deviation regimes of the tail.

use std::collections::BTreeMap;
use std::f64::consts::{E, PI, SQRT_2};

use serde::{Deserialize, Serialize};
use libm::lgamma as ln_gamma;

use crate::error::{invalid, Result};
use crate::gaussian_numerics::{std_normal_ccdf, SQRT_2PI};
use crate::model_core::{overload_holds, QueueParams};
use crate::report::{BoundReport, Regime};

/// Every named constant of the single-server bounds for one parameter set.
///
/// `d5` and `dp1` overflow f64 for all realistic inputs; their logarithms
/// `ln_d5`, `ln_dp1` are authoritative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstantTable {
    pub c: f64,
    pub alpha: f64,
    pub epsilon: f64,
    pub c_prime: f64,
    pub d_prime: f64,
    pub a_env: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
    pub c5: f64,
    pub cp1: f64,
    pub cp2: f64,
    pub cp3: f64,
    pub cp4: f64,
    pub cp5: f64,
    pub cp6: f64,
    pub cp7: f64,
    /// Exponent 1 + alpha/epsilon in D1.
    pub a_prime: f64,
    pub d1: f64,
    pub d2: f64,
    pub d3: f64,
    pub d4: f64,
    pub d5: f64,
    pub ln_d5: f64,
    pub dp1: f64,
    pub ln_dp1: f64,
    pub dp4: f64,
    pub c_quantile: f64,
    pub d_tail_2_l: f64,
    pub d_tail_2_u: f64,
    pub d_tail_3_l: f64,
    pub d_tail_3_u: f64,
    pub d_tail_4_l: f64,
    pub ln_d_tail_4_l: f64,
    pub gamma0: f64,
}

fn xi(p: &QueueParams) -> f64 {
    0.5 - p.alpha - p.epsilon
}

impl ConstantTable {
    pub fn entries(&self) -> BTreeMap<String, f64> {
        let v = serde_json::to_value(self).expect("table serializes");
        v.as_object()
            .expect("object")
            .iter()
            .map(|(k, x)| (k.clone(), x.as_f64().unwrap_or(f64::INFINITY)))
            .collect()
    }

    /// gamma_a: the extra smallness needed for the fixed-deviation regime.
    /// Terms carrying a factor alpha vanish at alpha = 0 and are skipped there.
    pub fn gamma_a(&self, a: f64) -> f64 {
        let al = self.alpha;
        let x = 0.5 - al - self.epsilon;
        let mut g = self.gamma0;
        if al > 0.0 {
            g = g.min((2.0 * al).powf(1.0 / (1.0 - 2.0 * al)) * a.powf(-1.0 / (1.0 - 2.0 * al - self.epsilon)));
            g = g.min((al * a / (E * self.d1)).powf(1.0 / (0.5 - al)));
        }
        g = g.min((1.0 / (E * self.d1 * a)).powi(2));
        g = g.min(x.powf(1.0 / x));
        g.min(4.0 / a.powi(6))
    }
}

/// The individual terms whose minimum is gamma0, by name.
pub fn gamma0_terms(params: &QueueParams) -> Vec<(&'static str, f64)> {
    let t = raw_constants(params);
    gamma0_terms_from(params, t.d1, t.a_env)
}

fn gamma0_terms_from(params: &QueueParams, d1: f64, a_env: f64) -> Vec<(&'static str, f64)> {
    let (lambda, mu) = (params.lambda, params.mu());
    let x = xi(params);
    let e4 = (4.0 * SQRT_2).exp();
    vec![
        ("gamma0_term_fluid", e4 * lambda / 25.0),
        ("gamma0_term_service", mu * mu / (4.0 * e4 * lambda)),
        ("gamma0_term_mu", mu),
        ("gamma0_term_d1_inverse", (1.0 / (2.0 * E * d1)).powf(-1.0 / x)),
        ("gamma0_term_d1_square", (2.0 * E * d1).powf(-2.0 / x)),
        ("gamma0_term_d1_linear", 1.0 / (2.0 * SQRT_2 * E * d1)),
        ("gamma0_term_envelope", lambda / (a_env * a_env)),
    ]
}

fn raw_constants(params: &QueueParams) -> ConstantTable {
    let (lambda, mu, c) = (params.lambda, params.mu(), params.c);
    let sl = lambda.sqrt();
    let s2pi = SQRT_2PI;
    let c_prime = lambda / mu * E.max((1.0 + c) * (2.0 + c) / (c * c + c - 1.0));
    let d_prime = mu.sqrt() / (2.0 * mu.sqrt() + (2.0 * PI * E * E * lambda).sqrt());
    let a_env = 1.0 + SQRT_2 * c_prime;
    let c1 = 2.0 * E * (2.0 * PI * lambda).sqrt() * (2.0 + c_prime * c_prime / 4.0);
    let c2 = 2.0 * E * s2pi;
    let c3 = 2.0 + 2.0 * a_env;
    let ln_c4 = (58.0f64 / 69.0).ln() - 9.0 * (15.0 + a_env);
    let c4 = ln_c4.exp();
    let c5 = (120.0 + 8.0 * a_env) * lambda;
    let e2 = E * E;
    let cp1 = SQRT_2 * (1.0 + 2.0 * E * PI.sqrt() + 8.0 * SQRT_2 * e2 + 2.0 * e2) * (mu / sl) * c_prime.max(1.0);
    let k = (E + 8.0 * e2 + SQRT_2 * e2) * s2pi / sl;
    let cp2 = SQRT_2 * ((4.0 * E * s2pi + 2.0 * e2) / sl + k * (c1 + 2.0 * E * PI.sqrt() * lambda));
    let cp3 = SQRT_2 * k * c2;
    let cp4 = c1 + 2.0 * E * s2pi;
    let cp5 = (6.0 + 2.0 * c_prime) / sl + 2.0 * E * s2pi;
    let cp6 = 4.0 * E * s2pi;
    let lam_gap = lambda - lambda.ln() - 1.0;
    let c_quantile = SQRT_2 / (2.0 * c_prime * (2.0 * SQRT_2).exp() * sl) / lam_gap.sqrt();
    let cp7 = c_quantile * (d_prime / mu.sqrt()).min(1.0);
    let a_prime = 1.0 + params.alpha / params.epsilon;
    let ln_poly = a_prime * (2.0 * lambda / (c * c)).ln() + ln_gamma(a_prime + 1.0);
    let d1 = 2.0 * cp1 * ln_poly.exp() + cp2 + cp3;
    let d2 = cp4 + cp2;
    let d3 = cp5 + cp6;
    let ln_d5 = (4096.0 * lambda).ln() - 4.0 * ln_c4 + 4.0 * c5 * lambda;
    let d4 = 0.5 * c4 / sl * (-c5 * (-ln_d5).exp()).exp();
    let ln_dp1_core = d1.ln() + 1.0 + 2.0 * E * d1 - s2pi.ln();
    let ln_dp1 = ln_dp1_core + (-ln_dp1_core).exp().ln_1p();
    let ln_d_tail_4_l = 2.0 * E * d3 * sl;
    let mut t = ConstantTable {
        c,
        alpha: params.alpha,
        epsilon: params.epsilon,
        c_prime,
        d_prime,
        a_env,
        c1,
        c2,
        c3,
        c4,
        c5,
        cp1,
        cp2,
        cp3,
        cp4,
        cp5,
        cp6,
        cp7,
        a_prime,
        d1,
        d2,
        d3,
        d4,
        d5: ln_d5.exp(),
        ln_d5,
        dp1: ln_dp1.exp(),
        ln_dp1,
        dp4: d4,
        c_quantile,
        d_tail_2_l: 2.0 * E * d1,
        d_tail_2_u: 1f64.min(1.0 / (2.0 * E * d1)),
        d_tail_3_l: SQRT_2 * E * d2,
        d_tail_3_u: SQRT_2 * E * d2,
        d_tail_4_l: ln_d_tail_4_l.exp(),
        ln_d_tail_4_l,
        gamma0: 0.0,
    };
    t.gamma0 = gamma0_terms_from(params, t.d1, t.a_env)
        .into_iter()
        .map(|(_, v)| v)
        .fold(f64::INFINITY, f64::min);
    t
}

/// Evaluate every constant for `params` (pooled service rate when n > 1).
pub fn constants_table(params: &QueueParams) -> Result<ConstantTable> {
    if xi(params) <= 0.0 {
        return invalid("1/2 - alpha - epsilon must be positive");
    }
    Ok(raw_constants(params))
}

fn overload_pre(r: &mut BoundReport, params: &QueueParams) {
    let mu = params.mu();
    r.require("overload", params.lambda / mu - 1.0 - params.c * (params.gamma / mu).powf(params.alpha), overload_holds(params));
}

/// Bracket on P(q = 0).
pub fn p0_bounds(params: &QueueParams) -> Result<BoundReport> {
    let t = constants_table(params)?;
    let (lambda, mu, gamma) = (params.lambda, params.mu(), params.gamma);
    let mut r = BoundReport::new("p0", Regime::Global);
    overload_pre(&mut r, params);
    r.require("mu_positive", mu, mu > 0.0);
    let rho = lambda / mu;
    let expo = (rho - 1.0 - rho.ln()) / (gamma / mu);
    let base = 0.5 * (gamma / mu).ln() - expo;
    r.lower = t.d_prime * base.exp();
    r.upper = t.c_prime * base.exp();
    r.aux("exponent", expo)
        .aux("ln_lower", t.d_prime.ln() + base)
        .aux("ln_upper", t.c_prime.ln() + base);
    r.constant("c_prime", t.c_prime).constant("d_prime", t.d_prime);
    Ok(r)
}

/// Bracket on ||q - (lambda - mu)/gamma||_{L^p}.
pub fn lp_norm_bounds(params: &QueueParams, p: f64) -> Result<BoundReport> {
    if !(p >= 1.0) {
        return invalid(format!("p must be >= 1, got {p}"));
    }
    let t = constants_table(params)?;
    let (lambda, gamma) = (params.lambda, params.gamma);
    let mut r = BoundReport::new("lp_norm", Regime::Global);
    overload_pre(&mut r, params);
    let lg = (gamma * p / lambda).ln_1p();
    let sub_gauss = t.c1 * (p / gamma).sqrt() + t.c2 * p;
    let sub_poisson = t.c3 * p / lg;
    r.upper = sub_gauss.min(sub_poisson);
    r.lower = t.c4 * (-t.c5 / (gamma * p)).exp() * p / lg;
    r.aux("upper_subgaussian", sub_gauss)
        .aux("upper_subpoisson", sub_poisson)
        .aux("ln_lower", t.c4.ln() - t.c5 / (gamma * p) + p.ln() - lg.ln());
    for (k, v) in [("c1", t.c1), ("c2", t.c2), ("c3", t.c3), ("c4", t.c4), ("c5", t.c5)] {
        r.constant(k, v);
    }
    Ok(r)
}

/// Log-scale bracket on E exp(theta q^), q^ = q - (lambda - mu)/gamma.
pub fn mgf_envelope(params: &QueueParams, theta: f64) -> Result<BoundReport> {
    if !(theta >= 0.0) {
        return invalid(format!("theta must be >= 0, got {theta}"));
    }
    let t = constants_table(params)?;
    let mut r = BoundReport::new("mgf_log", Regime::Global);
    overload_pre(&mut r, params);
    let base = params.lambda / params.gamma * (theta.exp_m1() - theta);
    r.lower = base;
    r.upper = base + t.a_env.ln();
    r.aux("log_scale", 1.0);
    r.constant("a_env", t.a_env);
    Ok(r)
}

/// Which Wasserstein-p regime governs order p at this gamma.
pub fn wp_regime(params: &QueueParams, t: &ConstantTable, p: f64) -> Regime {
    let g = params.gamma;
    let r1_end = g.powf(-(1.0 - 2.0 * params.alpha - 2.0 * params.epsilon));
    let r2_start = g.powf(-(1.0 - 2.0 * params.alpha));
    let r3_start = t.d4 / g;
    if p <= r1_end {
        Regime::WpRegime1
    } else if p > r2_start && p < r3_start {
        Regime::WpRegime2
    } else {
        Regime::WpRegime3
    }
}

/// Piecewise bounds on W_p(q~, Z).
pub fn wp_bounds(params: &QueueParams, p: f64) -> Result<BoundReport> {
    if !(p > 1.0) {
        return invalid(format!("p must be > 1, got {p}"));
    }
    let t = constants_table(params)?;
    let (lambda, mu, g) = (params.lambda, params.mu(), params.gamma);
    let regime = wp_regime(params, &t, p);
    let mut r = BoundReport::new("wp", regime);
    overload_pre(&mut r, params);
    r.require("gamma_le_gamma0", t.gamma0, g <= t.gamma0);
    let r1_end = g.powf(-(1.0 - 2.0 * params.alpha - 2.0 * params.epsilon));
    let r2_start = g.powf(-(1.0 - 2.0 * params.alpha));
    let r3_start = t.d4 / g;
    let lg = (g * p / lambda).ln_1p();
    let u1 = t.d1 * p * g.sqrt();
    let u2 = t.d2 * p.sqrt();
    let u3 = t.d3 * p * g.sqrt() / lg;
    r.upper = match regime {
        Regime::WpRegime1 => u1,
        Regime::WpRegime2 => u2,
        _ => u3,
    };
    let in_range = match regime {
        Regime::WpRegime1 => true,
        Regime::WpRegime2 => true,
        _ => p >= r3_start,
    };
    r.require("p_in_regime_range", p, in_range);
    // D5/gamma is astronomically large, so compare in logs.
    let ln_p_gamma = (p * g).ln();
    let rho = lambda / mu;
    if ln_p_gamma < t.ln_d5 {
        r.lower = t.cp7 * g * (-(rho - rho.ln() - 1.0) / (p * g / mu)).exp();
    } else {
        r.lower = t.dp4 * p * g.sqrt() / lg;
    }
    r.aux("regime1_upper", u1)
        .aux("regime2_upper", u2)
        .aux("regime3_upper", u3)
        .aux("regime1_end", r1_end)
        .aux("regime2_start", r2_start)
        .aux("regime3_start", r3_start)
        .aux("ln_lower_switch", t.ln_d5 - g.ln());
    for (k, v) in [("d1", t.d1), ("d2", t.d2), ("d3", t.d3), ("d4", t.d4), ("cp7", t.cp7), ("gamma0", t.gamma0)] {
        r.constant(k, v);
    }
    r.constant("ln_d5", t.ln_d5);
    Ok(r)
}

/// Regime tag by the deviation exponent delta = ln a / ln(1/gamma).
pub fn tail_regime(params: &QueueParams, a: f64) -> Regime {
    let g = params.gamma;
    if a <= 1.0 || g >= 1.0 {
        return Regime::ConstantDev;
    }
    let delta = a.ln() / (1.0 / g).ln();
    if delta < 0.5 - params.alpha {
        Regime::NearConstant
    } else if delta <= 0.5 {
        Regime::Moderate
    } else {
        Regime::Large
    }
}

/// Quantities of the exponential-tilt (change of measure) lower bound for a
/// window Delta around the target a' = a sqrt(lambda/gamma).
struct Tilt {
    ln_bound: f64,
    chebyshev: f64,
    theta: f64,
}

fn tilt(a_raw: f64, b: f64, a_env: f64, delta: f64) -> Tilt {
    let x = (a_raw + delta / 2.0) / b;
    let theta = x.ln_1p();
    let ln_a2 = -(a_raw + delta + b) * theta + a_raw + delta / 2.0;
    let gap = delta / 2.0 - a_env;
    let chebyshev = if gap > 0.0 { 1.0 - (b + a_raw + delta / 2.0) / (gap * gap) } else { f64::NEG_INFINITY };
    Tilt { ln_bound: chebyshev.max(0.0).ln() + ln_a2, chebyshev, theta }
}

/// Tilt lower bound with the window optimized numerically (same certificate,
/// Chebyshev factor used as computed rather than floored at 2/3).
pub fn tail_lower_optimized(params: &QueueParams, a: f64) -> Result<f64> {
    let t = constants_table(params)?;
    let b = params.lambda / params.gamma;
    let a_raw = a * b.sqrt();
    let lo = (2.0 * t.a_env).max(1e-9);
    let hi = lo + 64.0 * (a_raw + b).sqrt() + 64.0;
    let mut best = f64::NEG_INFINITY;
    let steps = 400;
    for i in 0..=steps {
        let d = lo * (hi / lo).powf(i as f64 / steps as f64);
        best = best.max(tilt(a_raw, b, t.a_env, d).ln_bound);
    }
    Ok(best)
}

/// Four-regime tail bounds for P(q~ > a).
///
/// Two routes are evaluated at every a: the Wasserstein route (Gaussian
/// bands and the regime upper bounds, which need gamma <= gamma0) and the
/// transform route (MGF Chernoff upper, exponential-tilt lower). `upper` and
/// `lower` combine the branches whose own conditions hold; every branch is
/// kept in `aux`.
pub fn tail_bounds(params: &QueueParams, a: f64) -> Result<BoundReport> {
    if !(a > 0.0) {
        return invalid(format!("deviation must be > 0, got {a}"));
    }
    let t = constants_table(params)?;
    let (lambda, g) = (params.lambda, params.gamma);
    let regime = tail_regime(params, a);
    let mut r = BoundReport::new("tail", regime);
    overload_pre(&mut r, params);
    let overload = overload_holds(params);

    let b = lambda / g;
    let a_raw = a * b.sqrt();
    let sg = g.sqrt();
    let l1 = (1.0 / sg).ln();
    let phic = std_normal_ccdf(a);
    let gauss = (-0.5 * a * a).exp();

    // Wasserstein route.
    let wfac = l1 + 0.5 * a * a;
    let err_a = (t.ln_dp1 + sg.ln() - 0.5 * a * a).exp() * wfac;
    let h = t.d1 * sg * wfac / a;
    let err_b = E * t.d1 / SQRT_2PI * sg * wfac * (-0.5 * a * a * (1.0 - h)).exp() + sg * gauss;
    let up_c = phic
        + E / (2.0 * PI.sqrt()) * a * (-0.5 * a * a * (1.0 - 0.5f64.sqrt()).powi(2)).exp()
        + (-a * a / (2.0 * E * E * t.d2)).exp();
    let up_d = phic
        + E / (2.0 * SQRT_2PI) * a * (-a * a / 8.0).exp()
        + (-(lambda.sqrt() / (2.0 * E * t.d3)) * (a / sg) * (a * sg).ln_1p()).exp();
    let gamma_ok = g <= t.gamma0;
    let ga = t.gamma_a(a);
    let in_a = gamma_ok && g <= ga;
    let b_hi = t.d_tail_2_u * g.powf(-(0.5 - params.alpha - params.epsilon));
    let in_b = gamma_ok && a >= t.d_tail_2_l && a <= b_hi;
    let c_lo = t.d_tail_3_l / g.powf(0.5 - params.alpha);
    let c_hi = t.d_tail_3_u / sg;
    let in_c = gamma_ok && a >= c_lo && a <= c_hi;
    let in_d = gamma_ok && (a * sg).ln() >= t.ln_d_tail_4_l;

    // Transform route.
    let x = a_raw / b;
    let ln_up_poisson = t.a_env.ln() + a_raw - (b + a_raw) * x.ln_1p();
    let ln_up_taylor = t.a_env.ln() - a_raw * a_raw / (2.0 * b) + a_raw.powi(3) / (2.0 * b * b);
    let delta = 8.0 * (a_raw + b).sqrt();
    let tl = tilt(a_raw, b, t.a_env, delta);
    let ln_lower_tilt = (2.0f64 / 3.0).ln() - (a_raw + delta + b) * tl.theta + a_raw + delta / 2.0;
    let xw = (a_raw + delta / 2.0) / b;
    let ln_lower_printed = (2.0f64 / 3.0).ln() - 0.5 * a * a + delta * xw.ln_1p() + delta * delta / (8.0 * b)
        - (a_raw + delta / 2.0).powi(3) / (3.0 * b * b);
    let transform_upper_ok = overload && params.mu() > 0.0;
    let transform_lower_ok = overload && tl.chebyshev >= 2.0 / 3.0;

    let mut uppers: Vec<(f64, bool)> = vec![
        (phic + err_a, in_a),
        (phic + err_b, in_b),
        (up_c, in_c),
        (up_d, in_d),
        (ln_up_poisson.exp(), transform_upper_ok),
        (ln_up_taylor.exp(), transform_upper_ok),
    ];
    let lowers: Vec<(f64, bool)> =
        vec![(phic - err_a, in_a), (phic - err_b, in_b), (ln_lower_tilt.exp(), transform_lower_ok)];
    let any_upper = uppers.iter().any(|(_, ok)| *ok);
    let any_lower = lowers.iter().any(|(_, ok)| *ok);
    if !any_upper {
        for u in uppers.iter_mut() {
            u.1 = true;
        }
    }
    r.upper = uppers.iter().filter(|(_, ok)| *ok).map(|(v, _)| *v).fold(f64::INFINITY, f64::min);
    r.lower = lowers
        .iter()
        .filter(|(_, ok)| *ok || !any_lower)
        .map(|(v, _)| *v)
        .fold(f64::NEG_INFINITY, f64::max);
    r.require("some_upper_branch_valid", uppers.len() as f64, any_upper);
    r.require("some_lower_branch_valid", lowers.len() as f64, any_lower);

    r.aux("gaussian_ccdf", phic)
        .aux("err_constant_regime", err_a)
        .aux("err_near_constant_regime", err_b)
        .aux("upper_subgaussian_wasserstein", up_c)
        .aux("upper_large_wasserstein", up_d)
        .aux("upper_transform_poisson", ln_up_poisson.exp())
        .aux("ln_upper_transform_poisson", ln_up_poisson)
        .aux("upper_transform_taylor", ln_up_taylor.exp())
        .aux("lower_transform", ln_lower_tilt.exp())
        .aux("ln_lower_transform", ln_lower_tilt)
        .aux("lower_printed_form", ln_lower_printed.exp())
        .aux("chebyshev_factor", tl.chebyshev)
        .aux("delta", delta)
        .aux("theta_star", tl.theta)
        .aux("a_raw", a_raw)
        .aux("gamma_a", ga)
        .aux("valid_constant_regime", in_a as u8 as f64)
        .aux("valid_near_constant_regime", in_b as u8 as f64)
        .aux("valid_subgaussian_regime", in_c as u8 as f64)
        .aux("valid_large_regime", in_d as u8 as f64)
        .aux("valid_transform_upper", transform_upper_ok as u8 as f64)
        .aux("valid_transform_lower", transform_lower_ok as u8 as f64)
        .aux("gamma_le_lambda_over_a_sq", (g <= lambda / (t.a_env * t.a_env)) as u8 as f64)
        .aux("gamma_le_mu", (g <= params.mu()) as u8 as f64)
        .aux("near_constant_hi", b_hi)
        .aux("subgaussian_lo", c_lo)
        .aux("subgaussian_hi", c_hi)
        .aux("ln_large_lo", t.ln_d_tail_4_l - sg.ln());
    // (rho, p) selectors of the concentration argument, for each regime
    r.aux("p_select_constant", 0.5 * a * a + l1)
        .aux("p_select_subgaussian", a * a / (2.0 * E * E * t.d2 * t.d2))
        .aux("p_select_large", lambda.sqrt() / (2.0 * E * t.d3) * (a / sg) * (a * sg).ln_1p());
    for (k, v) in [("a_env", t.a_env), ("d1", t.d1), ("d2", t.d2), ("d3", t.d3), ("gamma0", t.gamma0)] {
        r.constant(k, v);
    }
    r.constant("ln_dp1", t.ln_dp1);
    Ok(r)
}
