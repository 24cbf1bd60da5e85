//! Wasserstein-p distances on the line through the quantile coupling, and the
//! tail sandwich that turns a W_p bound into a tail bound.

use std::f64::consts::E;
use std::sync::OnceLock;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::gaussian_numerics::{
    ln_gaussian_abs_moment, ln_std_normal_ccdf, std_normal_ccdf, std_normal_pdf, upper_quantile_ln, LN_SQRT_2PI,
};
use crate::ssq_exact::{log_sum_exp, LatticePmf};

/// A Wasserstein-p distance with its numerical error budget.
///
/// `quad_error` and `endpoint_tail` are expressed in the units of `value`
/// (they bound how far `value` can move), `pth_power` is W_p^p itself.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WpResult {
    pub value: f64,
    pub p: f64,
    pub quad_error: f64,
    pub endpoint_tail: f64,
    pub pth_power: f64,
}

const GL_N: usize = 16;
const PANEL: f64 = 0.5;
const CHUNK: usize = 4096;

fn legendre(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

/// Nodes and weights of the 16-point Gauss-Legendre rule on [-1, 1].
fn gauss_legendre() -> &'static [(f64, f64); GL_N] {
    static RULE: OnceLock<[(f64, f64); GL_N]> = OnceLock::new();
    RULE.get_or_init(|| {
        let mut r = [(0.0, 0.0); GL_N];
        for i in 0..GL_N {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (GL_N as f64 + 0.5)).cos();
            for _ in 0..100 {
                let (p, dp) = legendre(GL_N, x);
                let dx = p / dp;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, dp) = legendre(GL_N, x);
            r[i] = (x, 2.0 / ((1.0 - x * x) * dp * dp));
        }
        r
    })
}

fn gl_panels(f: &impl Fn(f64) -> f64, lo: f64, hi: f64, m: usize) -> f64 {
    let rule = gauss_legendre();
    let h = (hi - lo) / m as f64;
    let mut s = 0.0;
    for j in 0..m {
        let a = lo + j as f64 * h;
        let (c, r) = (a + 0.5 * h, 0.5 * h);
        for &(x, w) in rule.iter() {
            s += w * f(c + r * x);
        }
    }
    s * 0.5 * h
}

// Composite rule at m and 2m panels; returns (fine value, |fine - coarse|).
fn integrate(f: impl Fn(f64) -> f64, lo: f64, hi: f64) -> (f64, f64) {
    if hi <= lo {
        return (0.0, 0.0);
    }
    let m = ((hi - lo) / PANEL).ceil().max(1.0) as usize;
    let coarse = gl_panels(&f, lo, hi, m);
    let fine = gl_panels(&f, lo, hi, 2 * m);
    (fine, (fine - coarse).abs())
}

// integral over [lo, hi] of |x - z|^p phi(z), split at the kink z = x
fn atom_integral(x: f64, p: f64, lo: f64, hi: f64) -> (f64, f64) {
    let f = |z: f64| {
        let d = (x - z).abs();
        if d == 0.0 {
            0.0
        } else {
            (p * d.ln() - 0.5 * z * z - LN_SQRT_2PI).exp()
        }
    };
    if x > lo && x < hi {
        let (a, ea) = integrate(f, lo, x);
        let (b, eb) = integrate(f, x, hi);
        (a + b, ea + eb)
    } else {
        integrate(f, lo, hi)
    }
}

/// ln of a bound on the integral over |z| > l of 2^{p-1}(m^p + |z|^p) phi(z).
fn ln_endpoint_bound(l: f64, m: f64, p: f64) -> f64 {
    let ln_tail = ln_std_normal_ccdf(l);
    // upper incomplete moment: int_l^inf z^p phi <= l^{p-1} phi(l) / (1 - (p-1)/l^2) for l^2 > p - 1
    let ln_moment = if l * l > 2.0 * (p - 1.0).max(0.0) {
        (p - 1.0) * l.ln() - 0.5 * l * l - LN_SQRT_2PI - (1.0 - (p - 1.0).max(0.0) / (l * l)).ln()
    } else {
        0.5 * (ln_gaussian_abs_moment(2.0 * p) + ln_tail)
    };
    let ln_m = if m > 0.0 { p * m.ln() + ln_tail } else { f64::NEG_INFINITY };
    std::f64::consts::LN_2 + (p - 1.0) * std::f64::consts::LN_2 + log_sum_exp([ln_m, ln_moment])
}

fn sorted_law(atoms: &[f64], log_probs: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    if atoms.len() != log_probs.len() || atoms.is_empty() {
        return invalid("atoms and probabilities must be nonempty and of equal length");
    }
    let mut idx: Vec<usize> = (0..atoms.len()).filter(|&i| log_probs[i] > f64::NEG_INFINITY).collect();
    if idx.is_empty() {
        return invalid("law has no mass");
    }
    if idx.iter().any(|&i| !atoms[i].is_finite() || log_probs[i].is_nan()) {
        return invalid("atoms must be finite");
    }
    idx.sort_by(|&i, &j| atoms[i].total_cmp(&atoms[j]));
    let ln_z = log_sum_exp(idx.iter().map(|&i| log_probs[i]));
    Ok((idx.iter().map(|&i| atoms[i]).collect(), idx.iter().map(|&i| log_probs[i] - ln_z).collect()))
}

fn finish(pth: f64, quad: f64, tail: f64, p: f64) -> WpResult {
    let value = pth.max(0.0).powf(1.0 / p);
    let grow = |e: f64| (pth + e).max(0.0).powf(1.0 / p) - value;
    WpResult { value, p, quad_error: grow(quad), endpoint_tail: grow(tail), pth_power: pth }
}

/// W_p between a discrete law (atoms with log-probabilities, any order) and
/// N(0, sigma^2).
pub fn wp_atoms_vs_gaussian(atoms: &[f64], log_probs: &[f64], p: f64, sigma: f64) -> Result<WpResult> {
    if !(p >= 1.0) || !p.is_finite() {
        return invalid(format!("W_p needs p >= 1, got {p}"));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return invalid(format!("sigma must be > 0, got {sigma}"));
    }
    let (xs, lp) = sorted_law(atoms, log_probs)?;
    let xs: Vec<f64> = xs.iter().map(|x| x / sigma).collect();
    let k = xs.len();
    // breakpoints z_j = Phi^{-1}(P(X <= x_j)), from whichever side is small
    let mut ln_cdf = vec![0.0; k];
    let mut acc = f64::NEG_INFINITY;
    for j in 0..k {
        acc = log_sum_exp([acc, lp[j]]);
        ln_cdf[j] = acc.min(0.0);
    }
    let mut ln_sf = vec![f64::NEG_INFINITY; k];
    let mut acc = f64::NEG_INFINITY;
    for j in (0..k).rev() {
        ln_sf[j] = acc.min(0.0);
        acc = log_sum_exp([acc, lp[j]]);
    }
    let brk: Vec<f64> = (0..k)
        .map(|j| {
            if j == k - 1 {
                f64::INFINITY
            } else if ln_cdf[j] < -std::f64::consts::LN_2 {
                -upper_quantile_ln(ln_cdf[j])
            } else {
                upper_quantile_ln(ln_sf[j])
            }
        })
        .collect();
    let m = xs[0].abs().max(xs[k - 1].abs());
    let mut l = 8.0;
    while l < 38.0 && ln_endpoint_bound(l, m, p) > -46.0 {
        l += 1.0;
    }
    let tail = ln_endpoint_bound(l, m, p).exp();

    let parts: Vec<(f64, f64)> = (0..k)
        .collect::<Vec<_>>()
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut s = (0.0, 0.0);
            for &j in chunk {
                let lo = if j == 0 { f64::NEG_INFINITY } else { brk[j - 1] }.max(-l);
                let hi = brk[j].min(l);
                if hi > lo {
                    let (v, e) = atom_integral(xs[j], p, lo, hi);
                    s.0 += v;
                    s.1 += e;
                }
            }
            s
        })
        .collect();
    let (pth, quad) = parts.iter().fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
    let scale = sigma.powf(p);
    let mut r = finish(pth * scale, quad * scale + 1e-15 * pth * scale, tail * scale, p);
    r.p = p;
    Ok(r)
}

/// W_p between the normalized lattice law of `pmf` and N(0, 1).
pub fn wp_lattice_vs_gaussian(pmf: &LatticePmf, p: f64) -> Result<WpResult> {
    let atoms: Vec<f64> = (0..pmf.len()).map(|i| pmf.normalized(i)).collect();
    wp_atoms_vs_gaussian(&atoms, &pmf.log_probs, p, 1.0)
}

/// W_p between two discrete laws, summed exactly over the merged quantile
/// staircases.
pub fn wp_atoms_vs_atoms(a: (&[f64], &[f64]), b: (&[f64], &[f64]), p: f64) -> Result<WpResult> {
    if !(p >= 1.0) || !p.is_finite() {
        return invalid(format!("W_p needs p >= 1, got {p}"));
    }
    let (xa, la) = sorted_law(a.0, a.1)?;
    let (xb, lb) = sorted_law(b.0, b.1)?;
    let pa: Vec<f64> = la.iter().map(|l| l.exp()).collect();
    let pb: Vec<f64> = lb.iter().map(|l| l.exp()).collect();
    let (mut i, mut j) = (0, 0);
    let (mut ra, mut rb) = (pa[0], pb[0]);
    let mut s = 0.0;
    loop {
        let du = ra.min(rb);
        s += du * (xa[i] - xb[j]).abs().powf(p);
        ra -= du;
        rb -= du;
        if ra <= 0.0 {
            i += 1;
            if i == xa.len() {
                break;
            }
            ra = pa[i];
        }
        if rb <= 0.0 {
            j += 1;
            if j == xb.len() {
                break;
            }
            rb = pb[j];
        }
    }
    // leftover mass from rounding sits on the last atoms
    let left = ra.max(0.0) * (i < xa.len()) as u8 as f64 + rb.max(0.0) * (j < xb.len()) as u8 as f64;
    let far = (xa[xa.len() - 1] - xb[0]).abs().max((xb[xb.len() - 1] - xa[0]).abs());
    let round = left * far.powf(p) + 1e-15 * s;
    Ok(finish(s, round, 0.0, p))
}

/// W_p between the normalized laws of two lattice pmfs.
pub fn wp_lattice_vs_lattice(a: &LatticePmf, b: &LatticePmf, p: f64) -> Result<WpResult> {
    let xa: Vec<f64> = (0..a.len()).map(|i| a.normalized(i)).collect();
    let xb: Vec<f64> = (0..b.len()).map(|i| b.normalized(i)).collect();
    wp_atoms_vs_atoms((&xa, &a.log_probs), (&xb, &b.log_probs), p)
}

/// Right-hand side (1 - rho) a phi(rho a) + [(1 - rho) a]^{-p} wp^p, which
/// bounds |P(X > a) - P(Z > a)| and |P(X < -a) - P(Z < -a)| when
/// wp >= W_p(X, Z).
pub fn tail_sandwich(a: f64, rho: f64, p: f64, wp: f64) -> Result<f64> {
    if !(a > 0.0) {
        return invalid(format!("a must be > 0, got {a}"));
    }
    if !(rho >= 0.0 && rho < 1.0) {
        return invalid(format!("rho must lie in [0, 1), got {rho}"));
    }
    if !(p >= 1.0) || !(wp >= 0.0) {
        return invalid("need p >= 1 and wp >= 0");
    }
    let gap = (1.0 - rho) * a;
    let markov = if wp == 0.0 { 0.0 } else { (p * (wp / gap).ln()).exp() };
    Ok(gap * std_normal_pdf(rho * a) + markov)
}

/// The same statement for a target N(0, sigma^2): returns the bound on
/// |P(X > a) - Phi^c(a/sigma)| given wp >= W_p(X, sigma Z).
pub fn tail_sandwich_scaled(a: f64, rho: f64, p: f64, wp: f64, sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return invalid(format!("sigma must be > 0, got {sigma}"));
    }
    tail_sandwich(a / sigma, rho, p, wp / sigma)
}

/// (lower, upper) on P(X > a) from the sandwich, clamped to [0, 1].
pub fn tail_interval(a: f64, rho: f64, p: f64, wp: f64) -> Result<(f64, f64)> {
    let r = tail_sandwich(a, rho, p, wp)?;
    let c = std_normal_ccdf(a);
    Ok(((c - r).max(0.0), (c + r).min(1.0)))
}

/// rho = 1 - e wp / a, which makes the Markov term exactly e^{-p}.
/// Returns None when e wp >= a (no admissible rho of that form).
pub fn select_rho(a: f64, wp: f64) -> Option<f64> {
    let r = 1.0 - E * wp / a;
    (r >= 0.0 && r < 1.0).then_some(r)
}

/// p = a^2/2 + ln(1/sqrt(gamma)), the choice for fixed deviations.
pub fn select_p_constant(a: f64, gamma: f64) -> f64 {
    0.5 * a * a + (1.0 / gamma.sqrt()).ln()
}

/// p = a^2/(2 e^2 d2^2), the sub-Gaussian choice.
pub fn select_p_subgaussian(a: f64, d2: f64) -> f64 {
    a * a / (2.0 * E * E * d2 * d2)
}

/// p = sqrt(lambda)/(2 e d3) (a/sqrt(gamma)) log(1 + a sqrt(gamma)), the large-deviation choice.
pub fn select_p_large(a: f64, gamma: f64, lambda: f64, d3: f64) -> f64 {
    let sg = gamma.sqrt();
    lambda.sqrt() / (2.0 * E * d3) * (a / sg) * (a * sg).ln_1p()
}
