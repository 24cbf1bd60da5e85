//! Explicit JSQ bounds: state space collapse, zero mass, moments of the
//! centered total, Wasserstein-p of the normalized total, and the tail
//! bounds along a test direction.

use std::collections::BTreeMap;
use std::f64::consts::{E, SQRT_2};

use serde::{Deserialize, Serialize};
use libm::lgamma as ln_gamma;

use crate::error::{invalid, Result};
use crate::gaussian_numerics::{std_normal_ccdf, SQRT_2PI};
use crate::model_core::{overload_holds, QueueParams};
use crate::report::{BoundReport, Regime};
use crate::ssq_bounds::{constants_table, ConstantTable};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JsqConstantTable {
    pub n: usize,
    pub c: f64,
    pub alpha: f64,
    pub epsilon: f64,
    /// lambda/sqrt(n(n-1)); infinite when n = 1.
    pub zeta: f64,
    pub ssc_e1: f64,
    pub ssc_e2: f64,
    pub ssc_e: f64,
    pub a_n: f64,
    pub cp_n: f64,
    pub cpp: f64,
    pub a1: f64,
    pub ap1: f64,
    pub a2: f64,
    pub ap2: f64,
    pub app2: f64,
    /// Exponent 1 + (1 + 2 alpha)/(2 epsilon).
    pub a_exp: f64,
    pub e_wp: f64,
    pub c_ot: f64,
    pub b1: f64,
    pub b2: f64,
    pub iota: f64,
    pub c_sub: f64,
    pub g_orth: f64,
    pub e_tail_2_u: f64,
    /// gamma1 without the direction-dependent term.
    pub gamma1_base: f64,
    /// Single-server constants at the pooled service rate.
    pub ssq: ConstantTable,
}

fn xi(p: &QueueParams) -> f64 {
    0.5 - p.alpha - p.epsilon
}

impl JsqConstantTable {
    pub fn entries(&self) -> BTreeMap<String, f64> {
        let mut v = serde_json::to_value(self).expect("table serializes");
        v.as_object_mut().expect("object").remove("ssq");
        v.as_object()
            .expect("object")
            .iter()
            .map(|(k, x)| (k.clone(), x.as_f64().unwrap_or(f64::INFINITY)))
            .collect()
    }

    // min{s^2, (1/2)(s^4/(e B1))^{1/3}}
    fn s_core(&self, s: f64) -> f64 {
        (s * s).min(0.5 * (s.powi(4) / (E * self.b1)).cbrt())
    }

    /// gamma1 for direction sum s = <phi, 1>; the direction term only enters
    /// when s != 0.
    pub fn gamma1(&self, s: f64) -> f64 {
        if s == 0.0 {
            return self.gamma1_base;
        }
        let x = 0.5 - self.alpha - self.epsilon;
        self.gamma1_base.min(self.s_core(s).powf(1.0 / (1.0f64 / 6.0).min(x / 2.0)))
    }

    pub fn gamma2(&self, s: f64) -> f64 {
        if s == 0.0 {
            return self.gamma1(s);
        }
        self.gamma1(s).min(self.s_core(s).powf(2.0 / self.iota))
    }

    pub fn gamma_a(&self, s: f64, a: f64) -> f64 {
        let b1 = self.b1;
        let e2 = E * E;
        [
            self.gamma2(s),
            s.powi(8) / (e2 * b1 * b1 * a.powi(6)),
            (s * s / (a * a)).powf(1.0 / self.iota),
            (a / (64.0 * E * b1)).powi(4),
            4.0 * s.powi(12) / (e2 * b1 * b1 * a.powi(10)),
            s.powi(8) / (2f64.powi(20) * e2 * e2 * b1.powi(4) * a.powi(4)),
        ]
        .into_iter()
        .fold(f64::INFINITY, f64::min)
    }

    /// E_Tail,1,u = min{2 s^2, (s^4/(e B1))^{1/3}}.
    pub fn e_tail_1_u(&self, s: f64) -> f64 {
        (2.0 * s * s).min((s.powi(4) / (E * self.b1)).cbrt())
    }
}

/// Every JSQ constant. At n = 1 there is no orthogonal component: zeta is
/// infinite and the collapse constants are 0.
pub fn jsq_constants(params: &QueueParams) -> Result<JsqConstantTable> {
    let ssq = constants_table(&params.pooled())?;
    let n = params.n();
    let nf = n as f64;
    let (lambda, mu, c) = (params.lambda, params.mu(), params.c);
    let sl = lambda.sqrt();
    let s2pi = SQRT_2PI;
    let x = xi(params);
    let a_env = ssq.a_env;

    let (zeta, ssc_e1, ssc_e2) = if n == 1 {
        (f64::INFINITY, 0.0, 0.0)
    } else {
        let zeta = lambda / (nf * (nf - 1.0)).sqrt();
        let drift = (2.0 * lambda - mu / nf).exp();
        let inner = lambda + mu + 2.0 * s2pi / E * a_env * drift * nf;
        let e1 = 18.0 / zeta * inner;
        let e2 = 4.0 * nf * 1f64.max(1.0 / zeta)
            * (zeta * inner + 6.0 * ((lambda + mu).powi(2) + 4.0 * s2pi / E * a_env * drift * nf * nf));
        (zeta, e1, e2)
    };
    let ssc_e = ssc_e1.max(ssc_e2);

    let k_exp = 1.0 / (0.5 - params.alpha);
    let a_n = (1.0 + nf * mu * (ln_gamma(k_exp + 1.0) - k_exp * (c / (2.0 * nf * lambda)).ln()).exp()) / nf;
    let cp_n = (a_n + 1.0 / nf) * (2.0 * ((nf.exp() / nf) - 1.0 - 1.0 / nf) * lambda).sqrt() * 2.0 * E * s2pi;
    let cpp = 2.0 * E * s2pi;
    let e2c = E * E;
    let k = (E + 8.0 * e2c + SQRT_2 * e2c) * s2pi / sl;
    let a1 = SQRT_2 * (k * (cpp + cp_n * lambda / SQRT_2) + (4.0 * E * s2pi + 2.0 * e2c) / sl);
    let ap1 = SQRT_2 * (1.0 + 2.0 * E * std::f64::consts::PI.sqrt() + 8.0 * SQRT_2 * e2c + 2.0 * e2c) * mu / sl;
    let a2 = cpp * lambda / SQRT_2 + 4.0 * E * s2pi / sl;
    let ap2 = cp_n;
    let app2 = nf * (a_n + 1.0 / nf) + 1.0 / (2.0 * lambda).sqrt();
    let a_exp = 1.0 + (1.0 + 2.0 * params.alpha) / (2.0 * params.epsilon);
    let poly = (a_exp * (2.0 * nf * lambda / (c * c)).ln() + ln_gamma(a_exp + 1.0)).exp();
    let e_wp = a1 + ap1 * poly + a2 + ap2;
    let b1 = a1 + ap1 * poly + ssc_e / sl;
    let b2 = a2 + ssc_e / sl;
    let iota = (1.0f64 / 3.0).min(x);
    let h = 1.0 / (2.0 * E * b2);
    let c_sub = h.sqrt().min(h * h);
    let (g_orth, e_tail_2_u) = if ssc_e > 0.0 {
        (2.0 * lambda.powf(0.25) / (E * (nf * ssc_e).sqrt()), e2c * nf * ssc_e.sqrt() / sl)
    } else {
        (f64::INFINITY, 0.0)
    };
    let e4 = (4.0 * SQRT_2).exp();
    let gamma1_base = [
        (-1.0f64).exp(),
        mu,
        (lambda / c * (lambda / mu).ln()).powi(2),
        e4 * lambda / 25.0,
        mu * mu / (100.0 * e4 * lambda),
        (x / 2.0).powf(2.0 / x),
        1.0 / (2f64.powi(16) * e2c * e2c * b1.powi(4)),
    ]
    .into_iter()
    .fold(f64::INFINITY, f64::min);

    Ok(JsqConstantTable {
        n,
        c,
        alpha: params.alpha,
        epsilon: params.epsilon,
        zeta,
        ssc_e1,
        ssc_e2,
        ssc_e,
        a_n,
        cp_n,
        cpp,
        a1,
        ap1,
        a2,
        ap2,
        app2,
        a_exp,
        e_wp,
        c_ot: ssq.c_quantile,
        b1,
        b2,
        iota,
        c_sub,
        g_orth,
        e_tail_2_u,
        gamma1_base,
        ssq,
    })
}

fn overload_pre(r: &mut BoundReport, params: &QueueParams) {
    let mu = params.mu();
    r.require("overload", params.lambda / mu - 1.0 - params.c * (params.gamma / mu).powf(params.alpha), overload_holds(params));
}

/// ||q_perp||_{L^p} <= max{E1 p^2, E2 p}.
pub fn ssc_bound(params: &QueueParams, p: f64) -> Result<BoundReport> {
    if !(p >= 1.0) {
        return invalid(format!("p must be >= 1, got {p}"));
    }
    let t = jsq_constants(params)?;
    let mut r = BoundReport::new("ssc", Regime::Global);
    overload_pre(&mut r, params);
    r.lower = 0.0;
    r.upper = (t.ssc_e1 * p * p).max(t.ssc_e2 * p);
    r.aux("quadratic_branch", t.ssc_e1 * p * p).aux("linear_branch", t.ssc_e2 * p);
    r.constant("ssc_e1", t.ssc_e1).constant("ssc_e2", t.ssc_e2).constant("ssc_e", t.ssc_e);
    Ok(r)
}

/// Zero-mass statements: (sum_i P(q_i = 0) upper, P(sum q = 0) bracket).
pub fn zero_mass_bounds(params: &QueueParams) -> Result<(BoundReport, BoundReport)> {
    let t = jsq_constants(params)?;
    let (lambda, mu, g, c) = (params.lambda, params.mu(), params.gamma, params.c);
    let nf = params.n() as f64;

    let mut each = BoundReport::new("sum_zero_mass", Regime::Global);
    overload_pre(&mut each, params);
    let cond = g.sqrt() * c / lambda;
    each.require("theta_range", cond, mu == 0.0 || cond <= (lambda / mu).ln());
    each.lower = 0.0;
    each.upper = (-c * (lambda - mu) / (2.0 * nf * lambda * g.sqrt())).exp();
    each.aux("log_slope_in_inv_sqrt_gamma", -c * (lambda - mu) / (2.0 * nf * lambda));

    let mut total = BoundReport::new("total_empty", Regime::Global);
    overload_pre(&mut total, params);
    total.lower = (-lambda / g).exp();
    if mu > 0.0 {
        let rho = lambda / mu;
        let expo = (rho - 1.0 - rho.ln()) * mu / g;
        total.upper = t.ssq.c_prime * (g / mu).sqrt() * (-expo).exp();
        total.aux("exponent", expo);
    } else {
        // no service: the total is Poisson(lambda/gamma)
        total.upper = total.lower;
        total.aux("mu_zero_exact", 1.0);
    }
    total.constant("c_prime", t.ssq.c_prime);
    Ok((each, total))
}

/// Bracket on ||sum_i q_i - (lambda - mu)/gamma||_{L^p}.
pub fn qsum_moment_bounds(params: &QueueParams, p: f64) -> Result<BoundReport> {
    if !(p >= 1.0) {
        return invalid(format!("p must be >= 1, got {p}"));
    }
    let t = jsq_constants(params)?;
    let (lambda, g) = (params.lambda, params.gamma);
    let nf = params.n() as f64;
    let mut r = BoundReport::new("qsum_moment", Regime::Global);
    overload_pre(&mut r, params);
    let gauss = t.cpp * p.sqrt() / g.sqrt() + t.cp_n * p;
    let poisson = nf * (t.a_n + 1.0 / nf) * p / (nf * g * p / lambda).ln_1p();
    r.upper = gauss.max(poisson);
    let a = t.ssq.a_env;
    r.lower = t.ssq.c4 * (-8.0 * (15.0 + a) * lambda / (g * p)).exp() * p / (p * g / lambda).ln_1p();
    r.aux("upper_subgaussian", gauss).aux("upper_subpoisson", poisson);
    r.constant("cpp", t.cpp).constant("cp_n", t.cp_n).constant("a_n", t.a_n).constant("c4", t.ssq.c4);
    Ok(r)
}

/// Piecewise bounds on W_p(q~_sum, Z).
pub fn wp_jsq_bounds(params: &QueueParams, p: f64) -> Result<BoundReport> {
    if !(p > 1.0) {
        return invalid(format!("p must be > 1, got {p}"));
    }
    let t = jsq_constants(params)?;
    let (lambda, g) = (params.lambda, params.gamma);
    let nf = params.n() as f64;
    let r1_end = g.powf(-xi(params));
    let regime = if p <= r1_end {
        Regime::WpRegime1
    } else if p < 1.0 / g {
        Regime::WpRegime2
    } else {
        Regime::WpRegime3
    };
    let mut r = BoundReport::new("wp_jsq", regime);
    overload_pre(&mut r, params);
    r.require("gamma_le_gamma1", t.gamma1_base, g <= t.gamma1_base);
    let u1 = t.e_wp * p * g.sqrt();
    let u2 = t.e_wp * p.sqrt();
    let u3 = t.e_wp * p * g.sqrt() / (nf * g * p / lambda).ln_1p();
    r.upper = match regime {
        Regime::WpRegime1 => u1,
        Regime::WpRegime2 => u2,
        _ => u3,
    };
    if (p * g).ln() <= t.ssq.ln_d5 {
        r.lower = t.c_ot * g.sqrt() * (-lambda / (p * g)).exp();
    } else {
        r.lower = t.ssq.dp4 * p * g.sqrt() / (g * p / lambda).ln_1p();
    }
    r.aux("regime1_upper", u1)
        .aux("regime2_upper", u2)
        .aux("regime3_upper", u3)
        .aux("regime1_end", r1_end)
        .aux("regime2_start", g.powf(-(0.5 - params.alpha)))
        .aux("regime3_start", 1.0 / g);
    r.constant("e_wp", t.e_wp).constant("c_ot", t.c_ot).constant("dp4", t.ssq.dp4);
    Ok(r)
}

fn check_phi(phi: &[f64], n: usize) -> Result<f64> {
    if phi.len() != n {
        return invalid(format!("direction has {} coordinates, model has n = {n}", phi.len()));
    }
    let norm = phi.iter().map(|v| v * v).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > 1e-12 {
        return invalid(format!("direction must have unit norm, got {norm}"));
    }
    let s: f64 = phi.iter().sum();
    // treat round-off as orthogonal
    Ok(if s.abs() < 1e-12 { 0.0 } else { s })
}

/// Tail bounds for P(<q~, phi> > a), deviation given directly.
pub fn jsq_tail_bounds(params: &QueueParams, phi: &[f64], a: f64) -> Result<BoundReport> {
    if !(a > 0.0) {
        return invalid(format!("deviation must be > 0, got {a}"));
    }
    let s = check_phi(phi, params.n())?;
    let t = jsq_constants(params)?;
    let (lambda, mu, g) = (params.lambda, params.mu(), params.gamma);
    let nf = params.n() as f64;
    let sg = g.sqrt();
    let l1 = (1.0 / sg).ln();
    let delta = if g < 1.0 { a.ln() / (1.0 / g).ln() } else { 0.0 };
    let delta_c = (0.25 - params.alpha / 2.0).min(1.0 / 6.0);

    if s == 0.0 {
        let mut r = BoundReport::new("jsq_tail", Regime::Orthogonal);
        overload_pre(&mut r, params);
        r.require("gamma_le_gamma2", t.gamma2(0.0), g <= t.gamma2(0.0));
        r.require("a_ge_tail_threshold", t.e_tail_2_u * sg, a >= t.e_tail_2_u * sg);
        r.upper = (-t.g_orth * a.sqrt() / g.powf(0.25)).exp();
        r.lower = 0.0;
        r.aux("no_known_bound", 1.0).aux("delta", delta);
        r.constant("g_orth", t.g_orth).constant("e_tail_2_u", t.e_tail_2_u);
        return Ok(r);
    }

    let sa = s.abs();
    let x = a * a / (2.0 * s * s);
    let phic = std_normal_ccdf(a / sa);
    let band = sg * ((x + l1).powi(2) + SQRT_2PI) / (SQRT_2PI * sa);
    let err_a = E.powi(3) * t.b1 * band * (-x).exp();
    let bracket = 1.0 - E * t.b1 * (a.powi(4) * sg / (2.0 * s.powi(4)) + 2.0 * sg * l1 * l1 / a);
    let err_b = E * t.b1 * band * (-x * bracket).exp();
    let up_c = phic + E / (2.0 * SQRT_2PI) * a * (-a * a / 8.0).exp()
        + (-t.c_sub * a.powf((1.0 / (4.0 * delta) + 0.5).min(2.0))).exp();

    let g2 = t.gamma2(s);
    let gamma_ok = g <= g2;
    let ga = t.gamma_a(s, a);
    let in_a = gamma_ok && g <= ga;
    let b_hi = t.e_tail_1_u(s) * g.powf(-t.iota / 2.0);
    let in_b = gamma_ok && a >= 2.0 && a <= b_hi && bracket > 0.0;
    let in_c = gamma_ok && delta >= delta_c;

    let regime = if delta >= delta_c {
        Regime::Large
    } else if a >= 2.0 && a <= b_hi {
        Regime::Moderate
    } else {
        Regime::ConstantDev
    };
    let mut r = BoundReport::new("jsq_tail", regime);
    overload_pre(&mut r, params);

    let mut uppers = vec![(phic + err_a, in_a), (phic + err_b, in_b), (up_c, in_c)];
    let lowers = [(phic - err_a, in_a), (phic - err_b, in_b)];

    // sub-Poisson refinement for nonnegative directions
    let refine_lo = E * E * nf * lambda.sqrt() / sg;
    if phi.iter().all(|v| *v >= 0.0) {
        let xr = a * lambda.sqrt() / (s * 2.0 * nf * sg) + (lambda - mu) / (nf * g);
        let yr = a * sg / (s * nf * lambda.sqrt()) + (lambda - mu) / (nf * (lambda * g).sqrt());
        let refined = (-xr * yr.ln()).exp();
        let ok = g <= t.gamma1(s) && a >= refine_lo;
        uppers.push((refined, ok));
        r.aux("upper_refinement", refined).aux("valid_refinement", ok as u8 as f64);
    }
    let any_upper = uppers.iter().any(|u| u.1);
    let any_lower = lowers.iter().any(|l| l.1);
    r.upper = uppers
        .iter()
        .filter(|u| u.1 || !any_upper)
        .map(|u| u.0)
        .fold(f64::INFINITY, f64::min);
    r.lower = if any_lower {
        lowers.iter().filter(|l| l.1).map(|l| l.0).fold(f64::NEG_INFINITY, f64::max)
    } else {
        0.0
    };
    r.require("some_upper_branch_valid", uppers.len() as f64, any_upper);
    if !any_lower {
        r.aux("no_known_bound", (in_c && !in_a && !in_b) as u8 as f64);
    }
    r.aux("gaussian_ccdf", phic)
        .aux("direction_sum", s)
        .aux("delta", delta)
        .aux("err_constant_regime", err_a)
        .aux("err_moderate_regime", err_b)
        .aux("moderate_bracket", bracket)
        .aux("upper_subweibull", up_c)
        .aux("gamma2", g2)
        .aux("gamma_a", ga)
        .aux("moderate_hi", b_hi)
        .aux("refinement_lo", refine_lo)
        .aux("valid_constant_regime", in_a as u8 as f64)
        .aux("valid_moderate_regime", in_b as u8 as f64)
        .aux("valid_subweibull_regime", in_c as u8 as f64);
    r.constant("b1", t.b1).constant("b2", t.b2).constant("c_sub", t.c_sub).constant("iota", t.iota);
    Ok(r)
}

/// Same bounds with the deviation given by its exponent: a = gamma^{-delta}.
pub fn jsq_tail_bounds_delta(params: &QueueParams, phi: &[f64], delta: f64) -> Result<BoundReport> {
    if !(delta >= 0.0) {
        return invalid(format!("delta must be >= 0, got {delta}"));
    }
    jsq_tail_bounds(params, phi, params.gamma.powf(-delta))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_examples() {
        let p = QueueParams::jsq(2.0, vec![0.5, 0.5], 0.01).unwrap();
        let t = jsq_constants(&p).unwrap();
        assert!((t.zeta - 2f64.sqrt()).abs() < 1e-14);
        assert_eq!(t.ssc_e, t.ssc_e1.max(t.ssc_e2));
        let p = QueueParams::new(2.0, vec![0.5, 0.5], 0.01, 1.0, 0.0, Some(0.1)).unwrap();
        assert!((jsq_constants(&p).unwrap().iota - 1.0 / 3.0).abs() < 1e-15);
        for (k, v) in jsq_constants(&p).unwrap().entries() {
            if k != "alpha" {
                assert!(v.is_finite() && v > 0.0, "{k} = {v}");
            }
        }
    }

    #[test]
    fn ssc_shapes() {
        let p = QueueParams::jsq(2.0, vec![0.5, 0.5], 0.1).unwrap();
        let t = jsq_constants(&p).unwrap();
        assert_eq!(ssc_bound(&p, 1.0).unwrap().upper, t.ssc_e1.max(t.ssc_e2));
        let r = ssc_bound(&p, 4.0).unwrap().upper / ssc_bound(&p, 2.0).unwrap().upper;
        assert!(r <= 4.0 + 1e-12);
    }

    #[test]
    fn zero_mass_slope() {
        let p = QueueParams::jsq(2.0, vec![0.5, 0.5], 0.04).unwrap();
        let q = p.with_gamma(0.01).unwrap();
        let (a, _) = zero_mass_bounds(&p).unwrap();
        let (b, _) = zero_mass_bounds(&q).unwrap();
        let slope = (b.upper.ln() - a.upper.ln()) / (10.0 - 5.0);
        assert!((slope - a.aux["log_slope_in_inv_sqrt_gamma"]).abs() < 1e-12);
    }
}
