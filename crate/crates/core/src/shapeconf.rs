//! Shape-count confidence and the match/remove gate.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::detection::{Detection, Vocabulary};
use crate::error::{Error, Result};
use crate::knowledge::{Shape, ShapeKnowledge, ShapeRow};
use crate::scalar::Scalar;

/// Detected shape counts for one detection. Absent shapes count as zero.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ShapeCounts(pub BTreeMap<Shape, u32>);

impl ShapeCounts {
    pub fn get(&self, shape: Shape) -> u32 {
        self.0.get(&shape).copied().unwrap_or(0)
    }
}

impl<const N: usize> From<[(Shape, u32); N]> for ShapeCounts {
    fn from(items: [(Shape, u32); N]) -> Self {
        Self(items.into_iter().collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShapeGateConfig<T> {
    shape_alpha: T,
    boost_percent: T,
}

impl<T: Scalar> ShapeGateConfig<T> {
    pub fn new(shape_alpha: T, boost_percent: T) -> Result<Self> {
        if !(shape_alpha > T::zero()) {
            return Err(Error::Config(format!("shape alpha {shape_alpha} must be positive")));
        }
        if !(boost_percent >= T::zero()) {
            return Err(Error::Config(format!("shape boost {boost_percent} is negative")));
        }
        Ok(Self {
            shape_alpha,
            boost_percent,
        })
    }

    pub fn shape_alpha(&self) -> T {
        self.shape_alpha
    }

    pub fn boost_percent(&self) -> T {
        self.boost_percent
    }
}

/// Sum over constrained shapes of `((s - k) / max(k, 1))^2`, where `k` is `s`
/// itself when in range and otherwise the nearer range bound.
pub fn relative_error_sum<T: Scalar>(s: &ShapeCounts, k: &ShapeRow) -> T {
    k.iter().fold(T::zero(), |acc, (shape, range)| {
        let detected = s.get(*shape);
        let expected = range.nearest(detected);
        let diff = T::from_u32(detected).unwrap() - T::from_u32(expected).unwrap();
        let denom = T::from_u32(expected.max(1)).unwrap();
        let rel = diff / denom;
        acc + rel * rel
    })
}

/// `1 - 1 / (1 + exp(-alpha * error))`, in `(0, 0.5]`. Evaluated as
/// `1 / (1 + exp(alpha * error))`, which stays positive for large errors.
pub fn confidence_from_error<T: Scalar>(error_sum: T, shape_alpha: T) -> T {
    T::one() / (T::one() + (shape_alpha * error_sum).exp())
}

pub fn shape_confidence<T: Scalar>(s: &ShapeCounts, k: &ShapeRow, shape_alpha: T) -> T {
    confidence_from_error(relative_error_sum(s, k), shape_alpha)
}

#[derive(Debug, Clone, PartialEq)]
pub enum GateOutcome<T> {
    Keep(Detection<T>),
    Remove,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GateDecision<T> {
    pub confidence: T,
    pub error_sum: T,
    pub outcome: GateOutcome<T>,
}

/// Keeps and boosts detections whose counts all fall inside the expected
/// ranges; removes the rest.
pub fn apply_shape_gate<T: Scalar>(
    d: &Detection<T>,
    s: &ShapeCounts,
    sk: &ShapeKnowledge,
    vocab: &Vocabulary,
    cfg: &ShapeGateConfig<T>,
) -> Result<GateDecision<T>> {
    let class = vocab.name(d.label);
    let row = sk.row(class).ok_or_else(|| Error::UnknownClass {
        name: class.to_string(),
        context: "shape knowledge".into(),
    })?;
    let error_sum: T = relative_error_sum(s, row);
    let confidence = confidence_from_error(error_sum, cfg.shape_alpha);
    let outcome = if error_sum == T::zero() {
        let mut kept = d.clone();
        kept.scale_own_logit(T::one() + cfg.boost_percent / T::lit(100.0))?;
        GateOutcome::Keep(kept)
    } else {
        GateOutcome::Remove
    };
    Ok(GateDecision {
        confidence,
        error_sum,
        outcome,
    })
}
