//! Per-attribute similarity functions. Every comparator maps a value pair to
//! a score in `[0, 1]`, where 1 means "indistinguishable to the attacker".

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::AttributeKind;

#[derive(Debug, Error, PartialEq)]
pub enum ComparatorError {
    #[error("gauss scale must be positive and finite, got {0}")]
    InvalidScale(f64),
    #[error("gauss offset must be non-negative and finite, got {0}")]
    InvalidOffset(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "comparator", rename_all = "snake_case", deny_unknown_fields)]
pub enum Comparator {
    Gauss { offset: f64, scale: f64 },
    Levenshtein,
    Exact,
}

impl Comparator {
    pub fn gauss(offset: f64, scale: f64) -> Result<Self, ComparatorError> {
        let c = Comparator::Gauss { offset, scale };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), ComparatorError> {
        if let Comparator::Gauss { offset, scale } = *self {
            if !(scale.is_finite() && scale > 0.0) {
                return Err(ComparatorError::InvalidScale(scale));
            }
            if !(offset.is_finite() && offset >= 0.0) {
                return Err(ComparatorError::InvalidOffset(offset));
            }
        }
        Ok(())
    }

    /// Attribute kind this comparator reads.
    pub fn kind(&self) -> AttributeKind {
        match self {
            Comparator::Gauss { .. } => AttributeKind::Numerical,
            Comparator::Levenshtein | Comparator::Exact => AttributeKind::Categorical,
        }
    }

    /// Threshold used when the configuration does not set one.
    pub fn default_threshold(&self) -> f64 {
        match self {
            Comparator::Gauss { .. } => 0.5,
            Comparator::Levenshtein | Comparator::Exact => 1.0,
        }
    }

    /// Numeric comparison. Categorical comparators never see numbers; callers
    /// check [`Comparator::kind`] first.
    pub fn compare_numbers(&self, x: f64, y: f64) -> f64 {
        match *self {
            Comparator::Gauss { offset, scale } => gauss_similarity(x, y, offset, scale),
            Comparator::Levenshtein | Comparator::Exact => exact_number(x, y),
        }
    }

    pub fn compare_strings(&self, a: &str, b: &str) -> f64 {
        match self {
            Comparator::Levenshtein => levenshtein_similarity(a, b),
            Comparator::Exact => exact_similarity(a, b),
            // strings never reach a gauss comparator after validation
            Comparator::Gauss { .. } => exact_similarity(a, b),
        }
    }
}

fn exact_number(x: f64, y: f64) -> f64 {
    if x == y {
        1.0
    } else {
        0.0
    }
}

/// Gaussian kernel with a flat top: with `d = max(0, |x - y| - offset)` the
/// score is `2^-(d / scale)^2`. Distances within `offset` score exactly 1 and
/// anything beyond scores strictly below 1; a distance of `offset + scale`
/// scores 0.5.
pub fn gauss_similarity(x: f64, y: f64, offset: f64, scale: f64) -> f64 {
    let excess = (x - y).abs() - offset;
    if excess <= 0.0 {
        return 1.0;
    }
    let r = excess / scale;
    // tiny excesses would otherwise round up to exactly 1
    (-(r * r)).exp2().min(ONE_MINUS_ULP)
}

const ONE_MINUS_ULP: f64 = 1.0 - f64::EPSILON / 2.0;

/// `1 - lev(a, b) / max(|a|, |b|)` with lengths counted in characters and
/// unit edit costs. Two empty strings are identical.
pub fn levenshtein_similarity(a: &str, b: &str) -> f64 {
    if a == b {
        return 1.0;
    }
    let longest = a.chars().count().max(b.chars().count());
    let distance = strsim::levenshtein(a, b);
    1.0 - distance as f64 / longest as f64
}

pub fn exact_similarity(a: &str, b: &str) -> f64 {
    if a.as_bytes() == b.as_bytes() {
        1.0
    } else {
        0.0
    }
}
