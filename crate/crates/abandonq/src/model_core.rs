//! Queue parameters, the heavy-overload check, and the transition rates of
//! the single-server and JSQ chains.

use std::collections::BTreeMap;

use serde::{Deserialize, Deserializer, Serialize};

use crate::error::{invalid, Result};

/// Rates and regime constants shared by both models.
///
/// `mus` holds the per-server service rates; the single-server chain is the
/// case `mus.len() == 1`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueueParams {
    pub lambda: f64,
    pub mus: Vec<f64>,
    pub gamma: f64,
    #[serde(rename = "C")]
    pub c: f64,
    pub alpha: f64,
    pub epsilon: f64,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum MusField {
    Scalar(f64),
    Vector(Vec<f64>),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawParams {
    lambda: f64,
    mus: MusField,
    gamma: f64,
    #[serde(rename = "C", default = "default_c")]
    c: f64,
    #[serde(default)]
    alpha: f64,
    #[serde(default)]
    epsilon: Option<f64>,
}

fn default_c() -> f64 {
    1.0
}

impl<'de> Deserialize<'de> for QueueParams {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = RawParams::deserialize(d)?;
        let mus = match raw.mus {
            MusField::Scalar(m) => vec![m],
            MusField::Vector(v) => v,
        };
        QueueParams::new(raw.lambda, mus, raw.gamma, raw.c, raw.alpha, raw.epsilon)
            .map_err(serde::de::Error::custom)
    }
}

pub fn default_epsilon(alpha: f64) -> f64 {
    0.1 * (0.5 - alpha)
}

impl QueueParams {
    pub fn new(
        lambda: f64,
        mus: Vec<f64>,
        gamma: f64,
        c: f64,
        alpha: f64,
        epsilon: Option<f64>,
    ) -> Result<Self> {
        let epsilon = epsilon.unwrap_or_else(|| default_epsilon(alpha));
        let p = QueueParams { lambda, mus, gamma, c, alpha, epsilon };
        p.check()?;
        Ok(p)
    }

    /// Single-server parameters with C = 1, alpha = 0 and the default epsilon.
    pub fn ssq(lambda: f64, mu: f64, gamma: f64) -> Result<Self> {
        Self::new(lambda, vec![mu], gamma, 1.0, 0.0, None)
    }

    pub fn jsq(lambda: f64, mus: Vec<f64>, gamma: f64) -> Result<Self> {
        Self::new(lambda, mus, gamma, 1.0, 0.0, None)
    }

    pub fn with_regime(mut self, c: f64, alpha: f64, epsilon: Option<f64>) -> Result<Self> {
        self.c = c;
        self.alpha = alpha;
        self.epsilon = epsilon.unwrap_or_else(|| default_epsilon(alpha));
        self.check()?;
        Ok(self)
    }

    pub fn with_gamma(&self, gamma: f64) -> Result<Self> {
        let mut p = self.clone();
        p.gamma = gamma;
        p.check()?;
        Ok(p)
    }

    fn check(&self) -> Result<()> {
        let finite_pos = |x: f64| x.is_finite() && x > 0.0;
        if !finite_pos(self.lambda) {
            return invalid(format!("lambda must be finite and > 0, got {}", self.lambda));
        }
        if !finite_pos(self.gamma) {
            return invalid(format!("gamma must be finite and > 0, got {}", self.gamma));
        }
        if self.mus.is_empty() {
            return invalid("at least one service rate is required");
        }
        if let Some(m) = self.mus.iter().find(|m| !(m.is_finite() && **m >= 0.0)) {
            return invalid(format!("service rates must be finite and >= 0, got {m}"));
        }
        if !(self.c.is_finite() && self.c >= 1.0) {
            return invalid(format!("C must be >= 1, got {}", self.c));
        }
        if !(self.alpha >= 0.0 && self.alpha < 0.5) {
            return invalid(format!("alpha must lie in [0, 1/2), got {}", self.alpha));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 0.5 - self.alpha) {
            return invalid(format!(
                "epsilon must lie in (0, 1/2 - alpha) = (0, {}), got {}",
                0.5 - self.alpha,
                self.epsilon
            ));
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.mus.len()
    }

    /// Total service rate.
    pub fn mu(&self) -> f64 {
        self.mus.iter().sum()
    }

    /// Pooled single-server parameters with the same lambda, gamma and regime.
    pub fn pooled(&self) -> QueueParams {
        QueueParams { mus: vec![self.mu()], ..self.clone() }
    }

    /// Centering (lambda - mu)/gamma of the total queue length.
    pub fn fluid_center(&self) -> f64 {
        (self.lambda - self.mu()) / self.gamma
    }

    /// Scale sqrt(gamma/lambda) of the normalized single-server queue.
    pub fn diffusion_scale(&self) -> f64 {
        (self.gamma / self.lambda).sqrt()
    }
}

/// Outcome of the heavy-overload and small-gamma checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeCheck {
    pub overload_ok: bool,
    pub gamma0: f64,
    pub gamma_ok: bool,
    pub details: BTreeMap<String, f64>,
}

/// lambda/mu - 1 >= C (gamma/mu)^alpha.
pub fn overload_holds(p: &QueueParams) -> bool {
    let mu = p.mu();
    if mu == 0.0 {
        return true;
    }
    p.lambda / mu - 1.0 >= p.c * (p.gamma / mu).powf(p.alpha)
}

/// Diagnostic only: never blocks downstream evaluation.
pub fn validate_regime(params: &QueueParams) -> RegimeCheck {
    let mu = params.mu();
    let mut details = BTreeMap::new();
    details.insert("overload_lhs".to_string(), params.lambda / mu - 1.0);
    details.insert("overload_rhs".to_string(), params.c * (params.gamma / mu).powf(params.alpha));
    let terms = crate::ssq_bounds::gamma0_terms(params);
    let mut gamma0 = f64::INFINITY;
    for (name, v) in terms {
        gamma0 = gamma0.min(v);
        details.insert(name.to_string(), v);
    }
    RegimeCheck {
        overload_ok: overload_holds(params),
        gamma0,
        gamma_ok: params.gamma <= gamma0,
        details,
    }
}

/// One outgoing transition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateEntry<S> {
    pub target: S,
    pub rate: f64,
}

/// Birth lambda, death (mu + gamma i) 1{i >= 1}.
pub fn ssq_rates(params: &QueueParams, state: i64) -> Result<Vec<RateEntry<i64>>> {
    if state < 0 {
        return invalid(format!("negative state {state}"));
    }
    if params.n() != 1 {
        return invalid(format!("single-server rates need n = 1, got n = {}", params.n()));
    }
    let mut out = vec![RateEntry { target: state + 1, rate: params.lambda }];
    if state >= 1 {
        let rate = params.mus[0] + params.gamma * state as f64;
        if rate > 0.0 {
            out.push(RateEntry { target: state - 1, rate });
        }
    }
    Ok(out)
}

/// Index of the lexicographically first shortest queue.
pub fn jsq_route(state: &[i64]) -> usize {
    let mut best = 0;
    for (i, &x) in state.iter().enumerate() {
        if x < state[best] {
            best = i;
        }
    }
    best
}

/// Arrival to the first shortest queue; each nonempty queue i departs at
/// mu_i + gamma x_i.
pub fn jsq_rates(params: &QueueParams, state: &[i64]) -> Result<Vec<RateEntry<Vec<i64>>>> {
    if state.len() != params.n() {
        return invalid(format!("state has {} coordinates, model has n = {}", state.len(), params.n()));
    }
    if let Some(x) = state.iter().find(|x| **x < 0) {
        return invalid(format!("negative coordinate {x}"));
    }
    let mut out = Vec::with_capacity(state.len() + 1);
    let mut up = state.to_vec();
    up[jsq_route(state)] += 1;
    out.push(RateEntry { target: up, rate: params.lambda });
    for (i, &x) in state.iter().enumerate() {
        if x == 0 {
            continue;
        }
        let rate = params.mus[i] + params.gamma * x as f64;
        if rate > 0.0 {
            let mut down = state.to_vec();
            down[i] -= 1;
            out.push(RateEntry { target: down, rate });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overload_examples() {
        let p = QueueParams::ssq(2.0, 1.0, 0.01).unwrap();
        assert!(validate_regime(&p).overload_ok);
        let p = QueueParams::ssq(1.05, 1.0, 0.01).unwrap();
        assert!(!validate_regime(&p).overload_ok);
        let p = QueueParams::new(2.0, vec![1.0], 1e-4, 1.5, 0.25, None).unwrap();
        let r = validate_regime(&p);
        assert!(r.overload_ok);
        assert!((r.details["overload_rhs"] - 0.15).abs() < 1e-12);
        assert!(r.gamma0 > 0.0);
    }

    #[test]
    fn ssq_rate_examples() {
        let p = QueueParams::ssq(2.0, 1.0, 1.0).unwrap();
        let r = ssq_rates(&p, 0).unwrap();
        assert_eq!(r, vec![RateEntry { target: 1, rate: 2.0 }]);
        let r = ssq_rates(&p, 3).unwrap();
        assert_eq!(r, vec![RateEntry { target: 4, rate: 2.0 }, RateEntry { target: 2, rate: 4.0 }]);
        let p = QueueParams::ssq(1.0, 0.0, 0.5).unwrap();
        let r = ssq_rates(&p, 1).unwrap();
        assert_eq!(r, vec![RateEntry { target: 2, rate: 1.0 }, RateEntry { target: 0, rate: 0.5 }]);
        assert!(ssq_rates(&p, -1).is_err());
    }

    #[test]
    fn jsq_rate_examples() {
        let p = QueueParams::jsq(2.0, vec![0.5, 0.5], 1.0).unwrap();
        let r = jsq_rates(&p, &[0, 0]).unwrap();
        assert_eq!(r, vec![RateEntry { target: vec![1, 0], rate: 2.0 }]);
        let r = jsq_rates(&p, &[2, 1]).unwrap();
        assert_eq!(
            r,
            vec![
                RateEntry { target: vec![2, 2], rate: 2.0 },
                RateEntry { target: vec![1, 1], rate: 2.5 },
                RateEntry { target: vec![2, 0], rate: 1.5 },
            ]
        );
        let p3 = QueueParams::jsq(2.0, vec![0.5, 0.5, 0.5], 1.0).unwrap();
        assert_eq!(jsq_rates(&p3, &[1, 1, 1]).unwrap()[0].target, vec![2, 1, 1]);
        assert!(jsq_rates(&p, &[1]).is_err());
        assert!(jsq_rates(&p, &[1, -1]).is_err());
    }

    #[test]
    fn params_from_json() {
        let p: QueueParams =
            serde_json::from_str(r#"{"lambda":2,"mus":1,"gamma":0.1,"C":1.5,"alpha":0.25}"#).unwrap();
        assert_eq!(p.mus, vec![1.0]);
        assert!((p.epsilon - 0.025).abs() < 1e-15);
        let p: QueueParams =
            serde_json::from_str(r#"{"lambda":2,"mus":[0.5,0.5],"gamma":0.1,"C":1,"alpha":0,"epsilon":0.1}"#)
                .unwrap();
        assert_eq!(p.n(), 2);
        assert!(serde_json::from_str::<QueueParams>(r#"{"lambda":-1,"mus":1,"gamma":0.1}"#).is_err());
        assert!(serde_json::from_str::<QueueParams>(r#"{"lambda":2,"mus":1,"gamma":0.1,"epsilon":0.6}"#).is_err());
    }
}
