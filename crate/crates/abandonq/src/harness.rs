//! Parameter sweeps that put every bound next to its numerical truth,
//! phase-diagram data for the tail exponents, and CSV/JSON emission.

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{invalid, Error, Result};
use crate::gaussian_numerics::{ln_std_normal_ccdf, std_normal_ccdf};
use crate::jsq_bounds::{jsq_tail_bounds, qsum_moment_bounds, ssc_bound, wp_jsq_bounds, zero_mass_bounds};
use crate::jsq_engine::{
    exact_estimand, exact_stationary_small, projected_tail, simulate_stationary, Estimand, JointPmf,
};
use crate::model_core::QueueParams;
use crate::report::BoundReport;
use crate::ssq_bounds::{lp_norm_bounds, mgf_envelope, p0_bounds, tail_bounds, wp_bounds};
use crate::ssq_exact::{
    ln_tail_closed_form, lower_tail_prob, mgf, moment_lp, prob_empty, stationary_pmf, tail_prob, LatticePmf,
    DEFAULT_TOL,
};
use crate::stein_certificate::{certificate_bound, CertLaw, DEFAULT_KMAX};
use crate::wasserstein_metrics::wp_lattice_vs_gaussian;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Model {
    Ssq,
    Jsq,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Estimator {
    #[default]
    Exact,
    /// Batch-means simulation; one row per seed. An empty seed list uses the
    /// sweep seed.
    Simulate {
        horizon: f64,
        burn_in: f64,
        #[serde(default)]
        seeds: Vec<u64>,
    },
}

/// Report kinds a sweep can emit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportKind {
    P0,
    LpNorm,
    MgfLog,
    Wp,
    Tail,
    Certificate,
    Ssc,
    SumZeroMass,
    TotalEmpty,
    QsumMoment,
    WpJsq,
    JsqTail,
}

impl ReportKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ReportKind::P0 => "p0",
            ReportKind::LpNorm => "lp_norm",
            ReportKind::MgfLog => "mgf_log",
            ReportKind::Wp => "wp",
            ReportKind::Tail => "tail",
            ReportKind::Certificate => "certificate",
            ReportKind::Ssc => "ssc",
            ReportKind::SumZeroMass => "sum_zero_mass",
            ReportKind::TotalEmpty => "total_empty",
            ReportKind::QsumMoment => "qsum_moment",
            ReportKind::WpJsq => "wp_jsq",
            ReportKind::JsqTail => "jsq_tail",
        }
    }

    fn model(&self) -> Option<Model> {
        match self {
            ReportKind::P0 | ReportKind::LpNorm | ReportKind::MgfLog | ReportKind::Wp | ReportKind::Tail => {
                Some(Model::Ssq)
            }
            ReportKind::Certificate => None,
            _ => Some(Model::Jsq),
        }
    }

    fn uses_p(&self) -> bool {
        matches!(
            self,
            ReportKind::LpNorm
                | ReportKind::Wp
                | ReportKind::Certificate
                | ReportKind::Ssc
                | ReportKind::QsumMoment
                | ReportKind::WpJsq
        )
    }

    fn uses_a(&self) -> bool {
        matches!(self, ReportKind::Tail | ReportKind::JsqTail)
    }
}

fn default_d() -> Vec<f64> {
    vec![1.0]
}

fn default_cap() -> usize {
    60
}

fn default_tol() -> f64 {
    DEFAULT_TOL
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub model: Model,
    /// Template; its gamma is replaced by each grid value.
    pub params: QueueParams,
    pub gamma_grid: Vec<f64>,
    #[serde(default)]
    pub a_grid: Option<Vec<f64>>,
    /// Deviations a = D gamma^-delta for every (delta, D) pair.
    #[serde(default)]
    pub delta_grid: Option<Vec<f64>>,
    #[serde(default = "default_d")]
    pub d_grid: Vec<f64>,
    #[serde(default)]
    pub p_grid: Option<Vec<f64>>,
    #[serde(default)]
    pub theta_grid: Option<Vec<f64>>,
    #[serde(default)]
    pub phi: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub estimator: Estimator,
    pub outputs: Vec<ReportKind>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub format: Format,
    /// Per-queue truncation of the exact JSQ solve.
    #[serde(default = "default_cap")]
    pub cap: usize,
    /// Mass allowed beyond the truncation of the exact single-server pmf.
    #[serde(default = "default_tol")]
    pub tol: f64,
}

fn nonempty(name: &str, g: &Option<Vec<f64>>) -> Result<()> {
    match g {
        Some(v) if v.is_empty() => invalid(format!("{name} is empty")),
        Some(v) if v.iter().any(|x| !x.is_finite()) => invalid(format!("{name} has a non-finite entry")),
        _ => Ok(()),
    }
}

impl SweepConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let c: SweepConfig = serde_json::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.gamma_grid.is_empty() {
            return invalid("gamma_grid is empty");
        }
        if self.outputs.is_empty() {
            return invalid("outputs is empty");
        }
        nonempty("a_grid", &self.a_grid)?;
        nonempty("delta_grid", &self.delta_grid)?;
        nonempty("p_grid", &self.p_grid)?;
        nonempty("theta_grid", &self.theta_grid)?;
        if self.d_grid.is_empty() {
            return invalid("d_grid is empty");
        }
        for g in &self.gamma_grid {
            self.params.with_gamma(*g)?;
        }
        let n = self.params.n();
        if self.model == Model::Ssq && n != 1 {
            return invalid(format!("model ssq needs one service rate, got {n}"));
        }
        if self.estimator == Estimator::Exact && n > 3 {
            return invalid(format!("exact estimator supports n <= 3, got n = {n}"));
        }
        if let Estimator::Simulate { horizon, burn_in, .. } = &self.estimator {
            if !(*burn_in > 0.0 && horizon > burn_in && horizon.is_finite()) {
                return invalid("simulate needs horizon > burn_in > 0");
            }
        }
        for k in &self.outputs {
            if let Some(m) = k.model() {
                if m != self.model {
                    return invalid(format!("report {} does not belong to model {:?}", k.as_str(), self.model));
                }
            }
            if k.uses_p() && self.p_grid.is_none() {
                return invalid(format!("report {} needs p_grid", k.as_str()));
            }
            if k.uses_a() && self.a_grid.is_none() && self.delta_grid.is_none() {
                return invalid(format!("report {} needs a_grid or delta_grid", k.as_str()));
            }
            if *k == ReportKind::MgfLog && self.theta_grid.is_none() {
                return invalid("report mgf_log needs theta_grid");
            }
            if *k == ReportKind::JsqTail {
                match &self.phi {
                    Some(v) if !v.is_empty() => {
                        for phi in v {
                            let norm = phi.iter().map(|x| x * x).sum::<f64>().sqrt();
                            if phi.len() != n || (norm - 1.0).abs() > 1e-12 {
                                return invalid(format!("phi {phi:?} must be a unit vector of length {n}"));
                            }
                        }
                    }
                    _ => return invalid("report jsq_tail needs a nonempty phi list"),
                }
            }
        }
        Ok(())
    }
}

// Floats that may be infinite travel as strings in JSON.
fn ser_f64<S: Serializer>(x: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if x.is_finite() {
        s.serialize_f64(*x)
    } else {
        s.serialize_str(&x.to_string())
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum NumOrText {
    Num(f64),
    Text(String),
}

fn de_f64<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    match NumOrText::deserialize(d)? {
        NumOrText::Num(x) => Ok(x),
        NumOrText::Text(t) => t.parse().map_err(serde::de::Error::custom),
    }
}

fn ser_opt<S: Serializer>(x: &Option<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    match x {
        Some(v) => ser_f64(v, s),
        None => s.serialize_none(),
    }
}

fn de_opt<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Option<f64>, D::Error> {
    Ok(match Option::<NumOrText>::deserialize(d)? {
        None => None,
        Some(NumOrText::Num(x)) => Some(x),
        Some(NumOrText::Text(t)) => Some(t.parse().map_err(serde::de::Error::custom)?),
    })
}

/// Header order of the emitted tables.
pub trait Columns {
    fn header() -> &'static [&'static str];
}

/// One (grid point, report kind) line of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub index: usize,
    pub model: String,
    pub kind: String,
    pub n: usize,
    pub gamma: f64,
    pub a: Option<f64>,
    pub delta: Option<f64>,
    pub d: Option<f64>,
    pub p: Option<f64>,
    pub theta: Option<f64>,
    /// Direction coordinates joined by ';'.
    pub phi: Option<String>,
    pub seed: Option<u64>,
    #[serde(serialize_with = "ser_opt", deserialize_with = "de_opt")]
    pub truth: Option<f64>,
    #[serde(serialize_with = "ser_opt", deserialize_with = "de_opt")]
    pub truth_ci: Option<f64>,
    #[serde(serialize_with = "ser_f64", deserialize_with = "de_f64")]
    pub lower: f64,
    #[serde(serialize_with = "ser_f64", deserialize_with = "de_f64")]
    pub upper: f64,
    pub regime: String,
    pub valid: bool,
    /// Truth inside [lower, upper] (within the simulation interval when
    /// simulating); empty when there is no truth.
    pub contains: Option<bool>,
    /// Auxiliary report values as a JSON object.
    pub aux: String,
}

impl Columns for Row {
    fn header() -> &'static [&'static str] {
        &[
            "index", "model", "kind", "n", "gamma", "a", "delta", "d", "p", "theta", "phi", "seed", "truth",
            "truth_ci", "lower", "upper", "regime", "valid", "contains", "aux",
        ]
    }
}

#[derive(Debug, Clone, Default)]
struct Point {
    kind: Option<ReportKind>,
    a: Option<f64>,
    delta: Option<f64>,
    d: Option<f64>,
    p: Option<f64>,
    theta: Option<f64>,
    phi: Option<Vec<f64>>,
}

fn a_points(cfg: &SweepConfig, gamma: f64) -> Vec<(f64, Option<f64>, Option<f64>)> {
    let mut out: Vec<_> = cfg.a_grid.iter().flatten().map(|a| (*a, None, None)).collect();
    for delta in cfg.delta_grid.iter().flatten() {
        for d in &cfg.d_grid {
            out.push((d * gamma.powf(-delta), Some(*delta), Some(*d)));
        }
    }
    out
}

fn points(cfg: &SweepConfig, gamma: f64) -> Vec<Point> {
    let mut out = Vec::new();
    for k in &cfg.outputs {
        let base = Point { kind: Some(*k), ..Default::default() };
        match k {
            _ if k.uses_p() => {
                for p in cfg.p_grid.iter().flatten() {
                    out.push(Point { p: Some(*p), ..base.clone() });
                }
            }
            ReportKind::MgfLog => {
                for t in cfg.theta_grid.iter().flatten() {
                    out.push(Point { theta: Some(*t), ..base.clone() });
                }
            }
            ReportKind::Tail => {
                for (a, delta, d) in a_points(cfg, gamma) {
                    out.push(Point { a: Some(a), delta, d, ..base.clone() });
                }
            }
            ReportKind::JsqTail => {
                for phi in cfg.phi.iter().flatten() {
                    for (a, delta, d) in a_points(cfg, gamma) {
                        out.push(Point { a: Some(a), delta, d, phi: Some(phi.clone()), ..base.clone() });
                    }
                }
            }
            _ => out.push(base),
        }
    }
    out
}

enum Law {
    Ssq(LatticePmf),
    Jsq(JointPmf, LatticePmf),
}

fn solve(cfg: &SweepConfig, params: &QueueParams) -> Result<Law> {
    if params.n() == 1 {
        // one server: JSQ is the single-server chain
        Ok(Law::Ssq(stationary_pmf(params, cfg.tol)?))
    } else {
        let j = exact_stationary_small(params, cfg.cap)?;
        let s = j.sum_marginal(params);
        Ok(Law::Jsq(j, s))
    }
}

fn bound_for(params: &QueueParams, pt: &Point, law: Option<&Law>) -> Result<BoundReport> {
    let p = pt.p.unwrap_or(f64::NAN);
    Ok(match pt.kind.expect("kind set") {
        ReportKind::P0 => p0_bounds(params)?,
        ReportKind::LpNorm => lp_norm_bounds(params, p)?,
        ReportKind::MgfLog => mgf_envelope(params, pt.theta.unwrap_or(f64::NAN))?,
        ReportKind::Wp => wp_bounds(params, p)?,
        ReportKind::Tail => tail_bounds(params, pt.a.unwrap_or(f64::NAN))?,
        ReportKind::Certificate => match law {
            Some(Law::Ssq(pmf)) => certificate_bound(params, p, None, DEFAULT_KMAX, CertLaw::Ssq(pmf))?,
            Some(Law::Jsq(j, _)) => certificate_bound(params, p, None, DEFAULT_KMAX, CertLaw::JsqSum(j))?,
            None => return invalid("certificate needs the exact estimator"),
        },
        ReportKind::Ssc => ssc_bound(params, p)?,
        ReportKind::SumZeroMass => zero_mass_bounds(params)?.0,
        ReportKind::TotalEmpty => zero_mass_bounds(params)?.1,
        ReportKind::QsumMoment => qsum_moment_bounds(params, p)?,
        ReportKind::WpJsq => wp_jsq_bounds(params, p)?,
        ReportKind::JsqTail => {
            jsq_tail_bounds(params, pt.phi.as_deref().unwrap_or(&[]), pt.a.unwrap_or(f64::NAN))?
        }
    })
}

// Exact truth; the second value is a numerical error bar if there is one.
fn exact_truth(params: &QueueParams, pt: &Point, law: &Law) -> Result<(f64, Option<f64>)> {
    let p = pt.p.unwrap_or(f64::NAN);
    let center = params.fluid_center();
    let wp = |pmf: &LatticePmf| wp_lattice_vs_gaussian(pmf, p).map(|w| (w.value, Some(w.quad_error + w.endpoint_tail)));
    use ReportKind as K;
    match (pt.kind.expect("kind set"), law) {
        (K::P0 | K::SumZeroMass | K::TotalEmpty, Law::Ssq(pmf)) => Ok((prob_empty(pmf), None)),
        (K::LpNorm | K::QsumMoment, Law::Ssq(pmf)) => Ok((moment_lp(pmf, center, p)?, None)),
        (K::MgfLog, Law::Ssq(pmf)) => Ok((mgf(pmf, pt.theta.unwrap_or(f64::NAN), center), None)),
        (K::Wp | K::Certificate | K::WpJsq, Law::Ssq(pmf)) => wp(pmf),
        (K::Tail, Law::Ssq(pmf)) => Ok((tail_prob(pmf, pt.a.unwrap_or(f64::NAN), true).value, None)),
        (K::Ssc, Law::Ssq(_)) => Ok((0.0, None)),
        (K::JsqTail, Law::Ssq(pmf)) => {
            let a = pt.a.unwrap_or(f64::NAN);
            let up = pt.phi.as_ref().map(|v| v[0] > 0.0).unwrap_or(true);
            Ok((if up { tail_prob(pmf, a, true).value } else { lower_tail_prob(pmf, a, true).value }, None))
        }
        (K::Certificate | K::WpJsq, Law::Jsq(_, sum)) => wp(sum),
        (K::JsqTail, Law::Jsq(j, _)) => {
            Ok((projected_tail(params, j, pt.phi.as_deref().unwrap_or(&[]), pt.a.unwrap_or(f64::NAN))?, None))
        }
        (k, Law::Jsq(j, _)) => match estimand_for(k, pt) {
            Some((e, root)) => {
                let v = exact_estimand(params, j, &e)?;
                Ok((if root { v.powf(1.0 / p) } else { v }, None))
            }
            None => invalid(format!("report {} has no JSQ truth", k.as_str())),
        },
    }
}

// The simulation estimand behind a report kind; `true` when the report is
// on the L^p scale and the estimate needs a p-th root.
fn estimand_for(k: ReportKind, pt: &Point) -> Option<(Estimand, bool)> {
    let p = pt.p.unwrap_or(f64::NAN);
    match k {
        ReportKind::P0 | ReportKind::TotalEmpty => Some((Estimand::TotalEmpty, false)),
        ReportKind::SumZeroMass => Some((Estimand::SumZeroMass, false)),
        ReportKind::LpNorm | ReportKind::QsumMoment => Some((Estimand::QhatSumMoment { p }, true)),
        ReportKind::Ssc => Some((Estimand::PerpMoment { p }, true)),
        ReportKind::Tail => Some((Estimand::TailProj { phi: vec![1.0], a: pt.a? }, false)),
        ReportKind::JsqTail => Some((Estimand::TailProj { phi: pt.phi.clone()?, a: pt.a? }, false)),
        _ => None,
    }
}

fn describe(gamma: f64, pt: &Point) -> String {
    let mut s = format!("gamma={gamma}, kind={}", pt.kind.map(|k| k.as_str()).unwrap_or("?"));
    for (name, v) in [("a", pt.a), ("p", pt.p), ("theta", pt.theta)] {
        if let Some(v) = v {
            s.push_str(&format!(", {name}={v}"));
        }
    }
    if let Some(phi) = &pt.phi {
        s.push_str(&format!(", phi={phi:?}"));
    }
    s
}

fn at(gamma: f64, pt: &Point) -> impl Fn(Error) -> Error + '_ {
    move |e| Error::AtPoint { point: describe(gamma, pt), source: Box::new(e) }
}

fn make_row(
    cfg: &SweepConfig,
    gamma: f64,
    pt: &Point,
    r: &BoundReport,
    truth: Option<(f64, Option<f64>)>,
    seed: Option<u64>,
) -> Row {
    let contains = truth.map(|(t, err)| {
        let slack = err.unwrap_or(0.0) + 1e-9 * t.abs() + 1e-14;
        r.contains(t, slack)
    });
    let aux: BTreeMap<&str, f64> = r.aux.iter().map(|(k, v)| (k.as_str(), *v)).collect();
    Row {
        index: 0,
        model: match cfg.model {
            Model::Ssq => "ssq".into(),
            Model::Jsq => "jsq".into(),
        },
        kind: pt.kind.expect("kind set").as_str().into(),
        n: cfg.params.n(),
        gamma,
        a: pt.a,
        delta: pt.delta,
        d: pt.d,
        p: pt.p,
        theta: pt.theta,
        phi: pt.phi.as_ref().map(|v| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";")),
        seed,
        truth: truth.map(|t| t.0),
        truth_ci: truth.and_then(|t| if seed.is_some() { t.1 } else { None }),
        lower: r.lower,
        upper: r.upper,
        regime: r.regime.as_str().into(),
        valid: r.valid,
        contains,
        aux: serde_json::to_string(&aux).expect("map serializes"),
    }
}

// splitmix64 step, so each gamma gets its own seed
fn derive_seed(seed: u64, k: u64) -> u64 {
    let mut z = seed.wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(k + 1));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn gamma_rows(cfg: &SweepConfig, gi: usize, gamma: f64) -> Result<Vec<Row>> {
    let params = cfg.params.with_gamma(gamma)?;
    let pts = points(cfg, gamma);
    let mut rows = Vec::new();
    match &cfg.estimator {
        Estimator::Exact => {
            let law = solve(cfg, &params).map_err(|e| Error::AtPoint {
                point: format!("gamma={gamma}, exact solve"),
                source: Box::new(e),
            })?;
            for pt in &pts {
                let r = bound_for(&params, pt, Some(&law)).map_err(at(gamma, pt))?;
                let t = exact_truth(&params, pt, &law).map_err(at(gamma, pt))?;
                rows.push(make_row(cfg, gamma, pt, &r, Some(t), None));
            }
        }
        Estimator::Simulate { horizon, burn_in, seeds } => {
            let seeds = if seeds.is_empty() { vec![cfg.seed] } else { seeds.clone() };
            let wanted: Vec<_> = pts.iter().filter_map(|pt| estimand_for(pt.kind?, pt).map(|e| e.0)).collect();
            for s in seeds {
                let seed = derive_seed(s, gi as u64);
                let est = simulate_stationary(&params, *horizon, *burn_in, seed, &wanted).map_err(|e| Error::AtPoint {
                    point: format!("gamma={gamma}, simulation seed {s}"),
                    source: Box::new(e),
                })?;
                for pt in &pts {
                    if pt.kind == Some(ReportKind::Certificate) {
                        continue;
                    }
                    let r = bound_for(&params, pt, None).map_err(at(gamma, pt))?;
                    let t = estimand_for(pt.kind.expect("kind set"), pt).map(|(e, root)| {
                        let x = &est[&e.name()];
                        if root {
                            // the root is monotone, so the interval maps through it
                            let p = pt.p.unwrap_or(1.0);
                            let v = x.value.powf(1.0 / p);
                            let hi = (x.value + x.ci_halfwidth).powf(1.0 / p);
                            (v, Some(hi - v))
                        } else {
                            (x.value, Some(x.ci_halfwidth))
                        }
                    });
                    rows.push(make_row(cfg, gamma, pt, &r, t, Some(s)));
                }
            }
        }
    }
    Ok(rows)
}

/// Evaluate every (grid point, report kind). Gamma values are processed in
/// parallel; rows come back in grid order.
pub fn run_sweep(cfg: &SweepConfig) -> Result<Vec<Row>> {
    cfg.validate()?;
    let parts: Vec<Result<Vec<Row>>> =
        cfg.gamma_grid.par_iter().enumerate().map(|(gi, g)| gamma_rows(cfg, gi, *g)).collect();
    let mut rows = Vec::new();
    for part in parts {
        rows.extend(part?);
    }
    for (i, r) in rows.iter_mut().enumerate() {
        r.index = i;
    }
    Ok(rows)
}

/// One (delta, D, gamma) point of the tail phase diagram.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseRow {
    pub delta: f64,
    pub d: f64,
    pub gamma: f64,
    pub a: f64,
    /// `gaussian_ratio` (delta = 0), `subgaussian` (a^2/2) or `poisson`.
    pub normalization: String,
    #[serde(serialize_with = "ser_f64", deserialize_with = "de_f64")]
    pub ln_tail: f64,
    /// P/Phi^c(a) under `gaussian_ratio`, else -ln P over the normalization.
    #[serde(serialize_with = "ser_f64", deserialize_with = "de_f64")]
    pub empirical_exponent: f64,
    /// Same statistic computed from the lower bound on P.
    #[serde(serialize_with = "ser_f64", deserialize_with = "de_f64")]
    pub bound_exponent_upper: f64,
    /// Same statistic computed from the upper bound on P.
    #[serde(serialize_with = "ser_f64", deserialize_with = "de_f64")]
    pub bound_exponent_lower: f64,
    pub bound_valid: bool,
}

impl Columns for PhaseRow {
    fn header() -> &'static [&'static str] {
        &[
            "delta",
            "d",
            "gamma",
            "a",
            "normalization",
            "ln_tail",
            "empirical_exponent",
            "bound_exponent_upper",
            "bound_exponent_lower",
            "bound_valid",
        ]
    }
}

fn ln_bound(r: &BoundReport, upper: bool) -> f64 {
    let (v, key) = if upper { (r.upper, "ln_upper_transform_poisson") } else { (r.lower, "ln_lower_transform") };
    if v > 0.0 {
        v.ln()
    } else {
        // underflow: use the log-scale companion of the transform branch
        r.aux.get(key).copied().filter(|l| v == 0.0 && l.is_finite()).unwrap_or(f64::NEG_INFINITY)
    }
}

/// Tail exponents on a (delta, D, gamma) grid, normalized per regime so each
/// statistic tends to 1 as gamma shrinks. Single-server model, exact tails.
pub fn phase_diagram(cfg: &SweepConfig) -> Result<Vec<PhaseRow>> {
    if cfg.model != Model::Ssq || cfg.estimator != Estimator::Exact {
        return invalid("phase diagram needs model ssq and the exact estimator");
    }
    let deltas = match &cfg.delta_grid {
        Some(v) if !v.is_empty() => v.clone(),
        _ => return invalid("phase diagram needs a nonempty delta_grid"),
    };
    if cfg.gamma_grid.is_empty() || cfg.d_grid.is_empty() {
        return invalid("phase diagram needs nonempty gamma_grid and d_grid");
    }
    let mut grid = Vec::new();
    for delta in &deltas {
        if !(*delta >= 0.0) {
            return invalid(format!("delta must be >= 0, got {delta}"));
        }
        for d in &cfg.d_grid {
            if !(*d > 0.0) {
                return invalid(format!("D must be > 0, got {d}"));
            }
            for g in &cfg.gamma_grid {
                grid.push((*delta, *d, *g));
            }
        }
    }
    let lambda = cfg.params.lambda;
    grid.par_iter()
        .map(|&(delta, d, gamma)| {
            let params = cfg.params.with_gamma(gamma)?;
            let a = d * gamma.powf(-delta);
            let ctx = |e| Error::AtPoint { point: format!("delta={delta}, D={d}, gamma={gamma}"), source: Box::new(e) };
            let t = params.fluid_center() + a / params.diffusion_scale();
            let ln_p = ln_tail_closed_form(&params, t).map_err(ctx)?;
            let r = tail_bounds(&params, a).map_err(ctx)?;
            let (lo, hi) = (ln_bound(&r, false), ln_bound(&r, true));
            let (name, stat): (&str, Box<dyn Fn(f64) -> f64>) = if delta == 0.0 {
                let lc = ln_std_normal_ccdf(a);
                ("gaussian_ratio", Box::new(move |l: f64| (l - lc).exp()))
            } else if delta < 0.5 {
                ("subgaussian", Box::new(move |l: f64| -l / (a * a / 2.0)))
            } else {
                let x = a * (lambda / gamma).sqrt();
                let norm = x * (a * (gamma / lambda).sqrt()).ln_1p();
                ("poisson", Box::new(move |l: f64| -l / norm))
            };
            // for the ratio statistic a larger P means a larger value
            let (b_up, b_lo) = if delta == 0.0 { (stat(hi), stat(lo)) } else { (stat(lo), stat(hi)) };
            Ok(PhaseRow {
                delta,
                d,
                gamma,
                a,
                normalization: name.into(),
                ln_tail: ln_p,
                empirical_exponent: stat(ln_p),
                bound_exponent_upper: b_up,
                bound_exponent_lower: b_lo,
                bound_valid: r.valid,
            })
        })
        .collect()
}

/// Write rows as CSV (fixed header, shortest round-trip floats) or as a JSON
/// array. An empty row set gives a header-only CSV.
pub fn emit<T: Serialize + Columns>(rows: &[T], format: Format, out: &mut dyn Write) -> Result<()> {
    match format {
        Format::Csv => {
            let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
            w.write_record(T::header())?;
            for r in rows {
                w.serialize(r)?;
            }
            w.flush()?;
        }
        Format::Json => {
            serde_json::to_writer_pretty(&mut *out, rows)?;
            out.write_all(b"\n")?;
        }
    }
    Ok(())
}

/// Sanity value for the delta = 0 column at one gamma: P(q~ > a)/Phi^c(a).
pub fn gaussian_ratio(params: &QueueParams, a: f64) -> Result<f64> {
    let t = params.fluid_center() + a / params.diffusion_scale();
    Ok(ln_tail_closed_form(params, t)?.exp() / std_normal_ccdf(a))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ssq_cfg() -> SweepConfig {
        SweepConfig::from_json(
            r#"{"model":"ssq","params":{"lambda":2,"mus":1,"gamma":0.1},
                "gamma_grid":[0.2,0.1,0.05],"outputs":["p0"]}"#,
        )
        .unwrap()
    }

    #[test]
    fn p0_sweep_rows() {
        let rows = run_sweep(&ssq_cfg()).unwrap();
        assert_eq!(rows.len(), 3);
        assert!(rows.iter().all(|r| r.contains == Some(true)));
        assert_eq!(rows.iter().map(|r| r.index).collect::<Vec<_>>(), vec![0, 1, 2]);
    }

    #[test]
    fn rejects_empty_grid() {
        let e = SweepConfig::from_json(
            r#"{"model":"ssq","params":{"lambda":2,"mus":1,"gamma":0.1},
                "gamma_grid":[0.1],"a_grid":[],"outputs":["tail"]}"#,
        );
        assert!(e.unwrap_err().is_validation());
    }

    #[test]
    fn header_only_csv() {
        let mut buf = Vec::new();
        emit::<Row>(&[], Format::Csv, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 1);
    }
}
