//! Detections, per-image detection sets and the class vocabulary.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::scalar::Scalar;

/// Index of an object class in the [`Vocabulary`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClassId(pub usize);

impl fmt::Display for ClassId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

/// Bidirectional mapping between class names and [`ClassId`]s.
///
/// Name lookup ignores ASCII case, so `"Car"` and `"car"` resolve to the
/// same class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    names: Vec<String>,
    index: BTreeMap<String, ClassId>,
}

impl Vocabulary {
    pub fn new<I, S>(names: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut vocab = Self {
            names: Vec::new(),
            index: BTreeMap::new(),
        };
        for name in names {
            let name = name.into();
            let key = name.to_ascii_lowercase();
            if name.is_empty() {
                return Err(Error::Config("empty class name in vocabulary".into()));
            }
            if vocab.index.contains_key(&key) {
                return Err(Error::Config(format!("duplicate class '{name}' in vocabulary")));
            }
            vocab.index.insert(key, ClassId(vocab.names.len()));
            vocab.names.push(name);
        }
        if vocab.names.is_empty() {
            return Err(Error::Config("vocabulary is empty".into()));
        }
        Ok(vocab)
    }

    /// The six vehicle classes used by the bundled knowledge fixtures.
    pub fn default_vehicles() -> Self {
        Self::new(["bicycle", "motorcycle", "car", "bus", "truck", "boat"])
            .expect("static vocabulary is valid")
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ClassId> {
        self.index.get(&name.to_ascii_lowercase()).copied()
    }

    pub fn require(&self, name: &str, context: &str) -> Result<ClassId> {
        self.id(name).ok_or_else(|| Error::UnknownClass {
            name: name.to_string(),
            context: context.to_string(),
        })
    }

    pub fn name(&self, id: ClassId) -> &str {
        &self.names[id.0]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection<T> {
    /// Provenance id, stable across every refinement layer.
    pub id: u64,
    pub bbox: BBox<T>,
    pub label: ClassId,
    pub score: T,
    pub logits: Option<Vec<T>>,
}

impl<T: Scalar> Detection<T> {
    pub fn new(id: u64, bbox: BBox<T>, label: ClassId, score: T) -> Self {
        Self {
            id,
            bbox,
            label,
            score,
            logits: None,
        }
    }

    pub fn with_logits(mut self, logits: Vec<T>) -> Self {
        self.logits = Some(logits);
        self
    }

    pub fn own_logit(&self) -> Option<T> {
        self.logits.as_ref().and_then(|l| l.get(self.label.0).copied())
    }

    /// Multiplies the own-class logit by `factor` and re-derives the score.
    ///
    /// Detections carrying only a score have the factor applied to the score
    /// itself, clamped to `[0, 1]`.
    pub fn scale_own_logit(&mut self, factor: T) -> Result<()> {
        match self.logits.as_mut() {
            Some(logits) => {
                let slot = logits.get_mut(self.label.0).ok_or(Error::MissingLogits {
                    id: self.id,
                    class: self.label.0,
                })?;
                *slot = *slot * factor;
                self.score = slot.sigmoid().clamp_unit();
            }
            None => self.score = (self.score * factor).clamp_unit(),
        }
        Ok(())
    }

    /// Multiplies every logit by `factor` and re-derives the score.
    pub fn scale_all_logits(&mut self, factor: T) -> Result<()> {
        match self.logits.as_mut() {
            Some(logits) => {
                if logits.len() <= self.label.0 {
                    return Err(Error::MissingLogits {
                        id: self.id,
                        class: self.label.0,
                    });
                }
                logits.iter_mut().for_each(|v| *v = *v * factor);
                self.score = logits[self.label.0].sigmoid().clamp_unit();
            }
            None => self.score = (self.score * factor).clamp_unit(),
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionSet<T> {
    pub image_id: String,
    pub detections: Vec<Detection<T>>,
}

impl<T: Scalar> DetectionSet<T> {
    pub fn new(image_id: impl Into<String>, detections: Vec<Detection<T>>) -> Self {
        Self {
            image_id: image_id.into(),
            detections,
        }
    }

    pub fn len(&self) -> usize {
        self.detections.len()
    }

    pub fn is_empty(&self) -> bool {
        self.detections.is_empty()
    }

    /// Drops the listed indices, keeping the relative order of survivors.
    pub fn without_indices(&self, drop: &std::collections::BTreeSet<usize>) -> Self {
        let detections = self
            .detections
            .iter()
            .enumerate()
            .filter(|(i, _)| !drop.contains(i))
            .map(|(_, d)| d.clone())
            .collect();
        Self {
            image_id: self.image_id.clone(),
            detections,
        }
    }

    pub fn has_class(&self, class: ClassId) -> bool {
        self.detections.iter().any(|d| d.label == class)
    }
}
