//! The common record every bound evaluation returns.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Regime {
    /// Statement that holds for every admissible argument.
    Global,
    ConstantDev,
    NearConstant,
    Moderate,
    Large,
    /// JSQ direction orthogonal to the all-ones vector.
    Orthogonal,
    WpRegime1,
    WpRegime2,
    WpRegime3,
}

impl Regime {
    pub fn as_str(&self) -> &'static str {
        match self {
            Regime::Global => "global",
            Regime::ConstantDev => "constant_dev",
            Regime::NearConstant => "near_constant",
            Regime::Moderate => "moderate",
            Regime::Large => "large",
            Regime::Orthogonal => "orthogonal",
            Regime::WpRegime1 => "wp_regime1",
            Regime::WpRegime2 => "wp_regime2",
            Regime::WpRegime3 => "wp_regime3",
        }
    }
}

/// A named condition, the number it was decided on, and the verdict.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Precondition {
    pub value: f64,
    pub ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub kind: String,
    /// May be -inf (no lower bound).
    pub lower: f64,
    /// May be +inf (no upper bound).
    pub upper: f64,
    pub regime: Regime,
    pub valid: bool,
    pub preconditions: BTreeMap<String, Precondition>,
    pub constants_used: BTreeMap<String, f64>,
    pub aux: BTreeMap<String, f64>,
}

impl BoundReport {
    pub fn new(kind: &str, regime: Regime) -> Self {
        BoundReport {
            kind: kind.to_string(),
            lower: f64::NEG_INFINITY,
            upper: f64::INFINITY,
            regime,
            valid: true,
            preconditions: BTreeMap::new(),
            constants_used: BTreeMap::new(),
            aux: BTreeMap::new(),
        }
    }

    /// Record a condition; `valid` becomes the conjunction of all recorded ones.
    pub fn require(&mut self, name: &str, value: f64, ok: bool) -> &mut Self {
        self.preconditions.insert(name.to_string(), Precondition { value, ok });
        self.valid = self.valid && ok;
        self
    }

    pub fn constant(&mut self, name: &str, value: f64) -> &mut Self {
        self.constants_used.insert(name.to_string(), value);
        self
    }

    pub fn aux(&mut self, name: &str, value: f64) -> &mut Self {
        self.aux.insert(name.to_string(), value);
        self
    }

    /// Whether `truth` lies inside [lower, upper] up to `tol` of slack.
    pub fn contains(&self, truth: f64, tol: f64) -> bool {
        truth >= self.lower - tol && truth <= self.upper + tol
    }

    /// Bounds clamped into [0, 1] for display of probability statements;
    /// the raw values stay in `lower`/`upper`.
    pub fn clamped_probability(&self) -> (f64, f64) {
        (self.lower.clamp(0.0, 1.0), self.upper.clamp(0.0, 1.0))
    }
}
