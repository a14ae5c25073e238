//! Absolute-plus-relative tolerance policy shared by all checks.

use serde::{Deserialize, Serialize};

/// Default absolute floor.
pub const TAU_ABS: f64 = 1e-9;
/// Default relative factor.
pub const TAU_REL: f64 = 1e-6;

/// A check passes when `|residual| <= abs + rel * scale`, with both terms
/// multiplied by the global `factor` (the CLI `--tolerance-scale`).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tolerance {
    pub abs: f64,
    pub rel: f64,
    pub factor: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Tolerance { abs: TAU_ABS, rel: TAU_REL, factor: 1.0 }
    }
}

impl Tolerance {
    pub fn with_rel(rel: f64) -> Self {
        Tolerance { rel, ..Default::default() }
    }

    pub fn scaled(self, factor: f64) -> Self {
        Tolerance { factor: self.factor * factor, ..self }
    }

    /// Allowed deviation for terms of magnitude `scale`.
    pub fn bound(&self, scale: f64) -> f64 {
        self.factor * (self.abs + self.rel * scale.abs())
    }

    pub fn accepts(&self, residual: f64, scale: f64) -> bool {
        residual.is_finite() && residual.abs() <= self.bound(scale)
    }
}

/// Largest magnitude among a set of compared terms.
pub fn scale_of(terms: &[f64]) -> f64 {
    terms.iter().fold(0.0f64, |m, t| m.max(t.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bound_grows_with_scale_and_factor() {
        let t = Tolerance::default();
        assert!(t.accepts(5e-10, 0.0));
        assert!(!t.accepts(2e-9, 0.0));
        assert!(t.accepts(5e-7, 1.0));
        assert!(t.scaled(10.0).accepts(5e-6, 1.0));
    }
}
