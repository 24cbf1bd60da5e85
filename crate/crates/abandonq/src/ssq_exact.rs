//! Exact stationary analysis of the M/M/1+M birth-death chain, in log-space.

use serde::{Deserialize, Serialize};
use libm::lgamma as ln_gamma;

use crate::error::{invalid, Result};
use crate::model_core::QueueParams;

/// A pmf on {0, ..., K} with the affine map x -> (x - offset) * scale that
/// produces the normalized variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatticePmf {
    pub log_probs: Vec<f64>,
    pub offset: f64,
    pub scale: f64,
    /// Upper bound on the true mass beyond the last retained state.
    pub truncation_tail: f64,
}

/// A probability with its additive truncation uncertainty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailProb {
    pub value: f64,
    pub ln_value: f64,
    pub uncertainty: f64,
}

pub const DEFAULT_TOL: f64 = 1e-12;

pub(crate) fn log_sum_exp(xs: impl IntoIterator<Item = f64> + Clone) -> f64 {
    let m = xs.clone().into_iter().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY || m == f64::INFINITY {
        return m;
    }
    let s: f64 = xs.into_iter().map(|x| (x - m).exp()).sum();
    m + s.ln()
}

/// ln of an upper bound on P(Poisson(b) > k), valid for k + 2 > b.
pub fn ln_poisson_tail_bound(b: f64, k: u64) -> f64 {
    let j = (k + 1) as f64;
    let ln_term = -b + j * b.ln() - ln_gamma(j + 1.0);
    let ratio = b / (j + 1.0);
    if ratio >= 1.0 {
        return 0.0;
    }
    (ln_term - (1.0 - ratio).ln()).min(0.0)
}

fn truncation_level(b: f64, tol: f64, k_min: u64) -> (u64, f64) {
    let ln_tol = tol.ln();
    let step = (0.25 * b.sqrt()).ceil().max(1.0) as u64;
    let mut k = (b.ceil() as u64 + 1).max(k_min);
    loop {
        let t = ln_poisson_tail_bound(b, k);
        if t <= ln_tol {
            return (k, t.exp());
        }
        k += step;
    }
}

impl LatticePmf {
    pub fn from_log_probs(log_probs: Vec<f64>, offset: f64, scale: f64, truncation_tail: f64) -> Self {
        LatticePmf { log_probs, offset, scale, truncation_tail }
    }

    pub fn point_mass(at: usize, offset: f64, scale: f64) -> Self {
        let mut log_probs = vec![f64::NEG_INFINITY; at + 1];
        log_probs[at] = 0.0;
        LatticePmf { log_probs, offset, scale, truncation_tail: 0.0 }
    }

    pub fn len(&self) -> usize {
        self.log_probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_probs.is_empty()
    }

    pub fn prob(&self, i: usize) -> f64 {
        self.log_probs.get(i).map_or(0.0, |l| l.exp())
    }

    /// Normalized coordinate of lattice point i.
    pub fn normalized(&self, i: usize) -> f64 {
        (i as f64 - self.offset) * self.scale
    }

    pub fn mean(&self) -> f64 {
        self.log_probs.iter().enumerate().map(|(i, l)| i as f64 * l.exp()).sum()
    }

    pub fn total_mass(&self) -> f64 {
        log_sum_exp(self.log_probs.iter().copied()).exp()
    }
}

/// Stationary law via pi_i = lambda/(mu + gamma i) pi_{i-1}, truncated where
/// the dominating Poisson(lambda/gamma) tail drops below `tol`.
pub fn stationary_pmf(params: &QueueParams, tol: f64) -> Result<LatticePmf> {
    stationary_pmf_with_support(params, tol, 0)
}

/// As `stationary_pmf`, retaining at least the states 0..=k_min.
pub fn stationary_pmf_with_support(params: &QueueParams, tol: f64, k_min: u64) -> Result<LatticePmf> {
    if !(tol > 0.0 && tol <= 1e-3) {
        return invalid(format!("tol must lie in (0, 1e-3], got {tol}"));
    }
    if params.n() != 1 {
        return invalid(format!("single-server solve needs n = 1, got n = {}", params.n()));
    }
    let (lambda, mu, gamma) = (params.lambda, params.mus[0], params.gamma);
    let (k, tail) = truncation_level(lambda / gamma, tol, k_min);
    let ln_lambda = lambda.ln();
    let mut lw = Vec::with_capacity(k as usize + 1);
    lw.push(0.0);
    for i in 1..=k {
        let prev = lw[i as usize - 1];
        lw.push(prev + ln_lambda - (mu + gamma * i as f64).ln());
    }
    let ln_z = log_sum_exp(lw.iter().copied());
    for x in lw.iter_mut() {
        *x -= ln_z;
    }
    Ok(LatticePmf {
        log_probs: lw,
        offset: params.fluid_center(),
        scale: params.diffusion_scale(),
        truncation_tail: tail,
    })
}

/// First index whose (normalized, if asked) value exceeds a.
fn first_above(pmf: &LatticePmf, a: f64, normalized: bool) -> usize {
    let value = |i: usize| if normalized { pmf.normalized(i) } else { i as f64 };
    let t = if normalized { pmf.offset + a / pmf.scale } else { a };
    let len = pmf.len();
    let mut i = if t < 0.0 { 0 } else { (t.floor() + 1.0).min(len as f64) as usize };
    while i > 0 && value(i - 1) > a {
        i -= 1;
    }
    while i < len && value(i) <= a {
        i += 1;
    }
    i
}

/// P(q~ > a) if `normalized`, else P(q > a), by exact summation.
pub fn tail_prob(pmf: &LatticePmf, a: f64, normalized: bool) -> TailProb {
    let i0 = first_above(pmf, a, normalized);
    let ln_value = log_sum_exp(pmf.log_probs[i0..].iter().copied());
    TailProb { value: ln_value.exp(), ln_value, uncertainty: pmf.truncation_tail }
}

/// P(q~ < -a) (or P(q < a) raw), for the lower-tail statements.
pub fn lower_tail_prob(pmf: &LatticePmf, a: f64, normalized: bool) -> TailProb {
    let value = |i: usize| if normalized { pmf.normalized(i) } else { i as f64 };
    let cut = if normalized { -a } else { a };
    let ln_value = log_sum_exp(
        pmf.log_probs.iter().enumerate().filter(|(i, _)| value(*i) < cut).map(|(_, l)| *l),
    );
    TailProb { value: ln_value.exp(), ln_value, uncertainty: pmf.truncation_tail }
}

/// ||q - center||_{L^p} in raw units.
pub fn moment_lp(pmf: &LatticePmf, center: f64, p: f64) -> Result<f64> {
    if !(p >= 1.0) {
        return invalid(format!("moment order must be >= 1, got {p}"));
    }
    Ok((ln_abs_moment(pmf, center, p) / p).exp())
}

/// ln E|q - center|^p.
pub fn ln_abs_moment(pmf: &LatticePmf, center: f64, p: f64) -> f64 {
    log_sum_exp(pmf.log_probs.iter().enumerate().map(|(i, l)| {
        let d = (i as f64 - center).abs();
        if d == 0.0 {
            f64::NEG_INFINITY
        } else {
            l + p * d.ln()
        }
    }))
}

/// ln E exp(theta (q - center)).
pub fn mgf(pmf: &LatticePmf, theta: f64, center: f64) -> f64 {
    log_sum_exp(pmf.log_probs.iter().enumerate().map(|(i, l)| l + theta * (i as f64 - center)))
}

pub fn prob_empty(pmf: &LatticePmf) -> f64 {
    pmf.log_probs[0].exp()
}

/// ln of the unnormalized weight prod_{j=1..i} lambda/(mu + gamma j).
fn ln_weight(params: &QueueParams, i: f64) -> f64 {
    let (b, m) = (params.lambda / params.gamma, params.mus[0] / params.gamma);
    i * b.ln() - (ln_gamma(m + i + 1.0) - ln_gamma(m + 1.0))
}

// Sum weights from `start` in direction `dir` (+1 or -1), as a log value,
// until the terms are negligible against the running sum.
fn ln_sum_run(params: &QueueParams, start: u64, dir: i64) -> f64 {
    let (lambda, mu, gamma) = (params.lambda, params.mus[0], params.gamma);
    let mut lw = ln_weight(params, start as f64);
    let first = lw;
    let mut acc = 1.0f64; // sum relative to exp(first)
    let mut i = start as i64;
    loop {
        let next = i + dir;
        if next < 0 {
            break;
        }
        lw += if dir > 0 {
            lambda.ln() - (mu + gamma * next as f64).ln()
        } else {
            (mu + gamma * i as f64).ln() - lambda.ln()
        };
        let rel = (lw - first).exp();
        acc += rel;
        i = next;
        if rel < 1e-18 * acc {
            // the ratio is monotone past the mode, so the remainder is geometric
            let r = if dir > 0 {
                lambda / (mu + gamma * (i + 1) as f64)
            } else {
                (mu + gamma * i as f64) / lambda
            };
            if r < 1.0 {
                acc += rel * r / (1.0 - r);
                break;
            }
        }
    }
    first + acc.ln()
}

/// ln P(q > t) for the single-server chain, without materializing the pmf.
///
/// Works at abandonment rates where the support runs into the billions.
pub fn ln_tail_closed_form(params: &QueueParams, t: f64) -> Result<f64> {
    if params.n() != 1 {
        return invalid("closed-form tail needs n = 1");
    }
    let mode = params.fluid_center().floor().max(0.0) as u64;
    let ln_z = {
        let up = ln_sum_run(params, mode, 1);
        if mode == 0 {
            up
        } else {
            let down = ln_sum_run(params, mode - 1, -1);
            log_sum_exp([up, down])
        }
    };
    if t < 0.0 {
        return Ok(0.0);
    }
    let first = t.floor() as u64 + 1;
    if first > mode {
        Ok(ln_sum_run(params, first, 1) - ln_z)
    } else {
        let below = ln_sum_run(params, first - 1, -1) - ln_z;
        Ok((-below.exp()).ln_1p())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn e() -> f64 {
        std::f64::consts::E
    }

    #[test]
    fn closed_forms_lambda2_mu1_gamma1() {
        let p = QueueParams::ssq(2.0, 1.0, 1.0).unwrap();
        let pmf = stationary_pmf(&p, 1e-12).unwrap();
        assert!((prob_empty(&pmf) - 2.0 / (e() * e() - 1.0)).abs() < 1e-12);
        let coth1 = 1.0 / 1f64.tanh();
        assert!((pmf.mean() - coth1).abs() < 1e-11);
    }

    #[test]
    fn mu_zero_is_poisson() {
        let p = QueueParams::ssq(1.0, 0.0, 1.0).unwrap();
        let pmf = stationary_pmf(&p, 1e-300).unwrap();
        assert!((prob_empty(&pmf) - (-1f64).exp()).abs() < 1e-13);
        let t = tail_prob(&pmf, 0.0, false);
        assert!((t.value - (1.0 - (-1f64).exp())).abs() < 1e-12);
        assert!((moment_lp(&pmf, 1.0, 2.0).unwrap() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn tail_below_support_is_whole_mass() {
        let p = QueueParams::ssq(2.0, 1.0, 0.1).unwrap();
        let pmf = stationary_pmf(&p, 1e-12).unwrap();
        let t = tail_prob(&pmf, -pmf.offset * pmf.scale - 1.0, true);
        assert!(t.value <= 1.0 + 1e-15 && t.value >= 1.0 - t.uncertainty - 1e-15);
    }

    #[test]
    fn point_mass_moment_is_zero() {
        let pm = LatticePmf::point_mass(3, 0.0, 1.0);
        assert_eq!(moment_lp(&pm, 3.0, 5.0).unwrap(), 0.0);
    }

    #[test]
    fn mgf_examples() {
        let p = QueueParams::ssq(2.0, 1.0, 0.1).unwrap();
        let pmf = stationary_pmf(&p, 1e-12).unwrap();
        assert!(mgf(&pmf, 0.0, 3.0).abs() < 1e-14);
        let p = QueueParams::ssq(3.0, 0.0, 0.5).unwrap();
        let pmf = stationary_pmf(&p, 1e-300).unwrap();
        let b = 6.0;
        for th in [0.1, 0.5, 1.0] {
            let want = b * (f64::exp(th) - 1.0 - th);
            assert!((mgf(&pmf, th, b) - want).abs() < 1e-10);
        }
    }

    #[test]
    fn closed_form_tail_matches_array() {
        let p = QueueParams::ssq(2.0, 1.0, 0.01).unwrap();
        let pmf = stationary_pmf(&p, 1e-300).unwrap();
        for t in [0.0, 50.0, 99.5, 100.0, 114.2, 150.0, 400.0] {
            let a = tail_prob(&pmf, t, false).ln_value;
            let b = ln_tail_closed_form(&p, t).unwrap();
            assert!((a - b).abs() < 1e-9 * a.abs().max(1.0), "t={t}: {a} vs {b}");
        }
    }

    #[test]
    fn errors() {
        let p = QueueParams::ssq(2.0, 1.0, 0.1).unwrap();
        assert!(stationary_pmf(&p, 0.0).is_err());
        assert!(stationary_pmf(&p, 0.1).is_err());
        let pmf = stationary_pmf(&p, 1e-12).unwrap();
        assert!(moment_lp(&pmf, 0.0, 0.5).is_err());
    }
}
