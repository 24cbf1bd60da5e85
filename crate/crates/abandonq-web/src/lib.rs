//! Browser bindings: three single-server operations returning JSON strings.
//!
//! The plain functions do the work and are tested natively; the
//! `#[wasm_bindgen]` wrappers only turn errors into JS exceptions.

use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

use abandonq::ssq_bounds::{p0_bounds, tail_bounds, wp_bounds};
use abandonq::ssq_exact::{prob_empty, stationary_pmf, tail_prob, DEFAULT_TOL};
use abandonq::wasserstein_metrics::wp_lattice_vs_gaussian;
use abandonq::{BoundReport, QueueParams};

// The page keeps the support below this so a click stays interactive.
const MAX_SUPPORT: f64 = 5e6;

fn params(lambda: f64, mu: f64, gamma: f64, c: f64, alpha: f64) -> Result<QueueParams, String> {
    let p = QueueParams::new(lambda, vec![mu], gamma, c, alpha, None).map_err(|e| e.to_string())?;
    if lambda / gamma > MAX_SUPPORT {
        return Err(format!("lambda/gamma = {} is too large for the page", lambda / gamma));
    }
    Ok(p)
}

fn bound_json(r: &BoundReport) -> Value {
    json!({
        "lower": finite(r.lower),
        "upper": finite(r.upper),
        "regime": r.regime.as_str(),
        "valid": r.valid,
        "failed": r.preconditions.iter().filter(|(_, p)| !p.ok).map(|(k, _)| k.clone()).collect::<Vec<_>>(),
    })
}

// JSON has no infinities; send them as strings
fn finite(x: f64) -> Value {
    if x.is_finite() {
        json!(x)
    } else {
        json!(x.to_string())
    }
}

pub fn p0_sandwich_value(lambda: f64, mu: f64, gamma: f64, c: f64, alpha: f64) -> Result<Value, String> {
    let p = params(lambda, mu, gamma, c, alpha)?;
    let pmf = stationary_pmf(&p, DEFAULT_TOL).map_err(|e| e.to_string())?;
    let r = p0_bounds(&p).map_err(|e| e.to_string())?;
    Ok(json!({ "exact": prob_empty(&pmf), "bound": bound_json(&r) }))
}

pub fn tail_report_value(lambda: f64, mu: f64, gamma: f64, c: f64, alpha: f64, a: f64) -> Result<Value, String> {
    let p = params(lambda, mu, gamma, c, alpha)?;
    let pmf = stationary_pmf(&p, DEFAULT_TOL).map_err(|e| e.to_string())?;
    let r = tail_bounds(&p, a).map_err(|e| e.to_string())?;
    let t = tail_prob(&pmf, a, true);
    Ok(json!({
        "exact": t.value,
        "ln_exact": finite(t.ln_value),
        "gaussian": finite(r.aux.get("gaussian_ccdf").copied().unwrap_or(f64::NAN)),
        "bound": bound_json(&r),
    }))
}

pub fn wp_value(lambda: f64, mu: f64, gamma: f64, c: f64, alpha: f64, p: f64) -> Result<Value, String> {
    let q = params(lambda, mu, gamma, c, alpha)?;
    let pmf = stationary_pmf(&q, DEFAULT_TOL).map_err(|e| e.to_string())?;
    let w = wp_lattice_vs_gaussian(&pmf, p).map_err(|e| e.to_string())?;
    let r = wp_bounds(&q, p).map_err(|e| e.to_string())?;
    Ok(json!({
        "value": w.value,
        "error": w.quad_error + w.endpoint_tail,
        "over_sqrt_gamma": w.value / gamma.sqrt(),
        "bound": bound_json(&r),
    }))
}

fn out(v: Result<Value, String>) -> Result<String, JsValue> {
    v.map(|v| v.to_string()).map_err(|e| JsValue::from_str(&e))
}

/// Exact P(q = 0) with its closed-form bracket.
#[wasm_bindgen]
pub fn p0_sandwich(lambda: f64, mu: f64, gamma: f64, c: f64, alpha: f64) -> Result<String, JsValue> {
    out(p0_sandwich_value(lambda, mu, gamma, c, alpha))
}

/// Exact P(q~ > a) with the tail bound report.
#[wasm_bindgen]
pub fn tail_report(lambda: f64, mu: f64, gamma: f64, c: f64, alpha: f64, a: f64) -> Result<String, JsValue> {
    out(tail_report_value(lambda, mu, gamma, c, alpha, a))
}

/// Numeric W_p(q~, Z) with the piecewise bounds.
#[wasm_bindgen]
pub fn wp_distance(lambda: f64, mu: f64, gamma: f64, c: f64, alpha: f64, p: f64) -> Result<String, JsValue> {
    out(wp_value(lambda, mu, gamma, c, alpha, p))
}
