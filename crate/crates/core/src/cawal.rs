//! Context-aware weight adjustment.
//!
//! When the share of context labels in an image's scene map exceeds the
//! threshold, every logit of every detection in the bound class set is
//! multiplied by `1 + adjust_percent / 100`. Negative logits are scaled by
//! the same factor, which moves them further below zero.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::detection::{ClassId, DetectionSet};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub type SceneLabelId = u32;

/// Scene labels for one image: `legend` names each id, `labels` holds one
/// list per scene row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneLabelMap {
    pub image_id: String,
    pub legend: BTreeMap<SceneLabelId, String>,
    #[serde(rename = "grid")]
    pub labels: Vec<Vec<SceneLabelId>>,
}

impl SceneLabelMap {
    pub fn new(
        image_id: impl Into<String>,
        legend: BTreeMap<SceneLabelId, String>,
        labels: Vec<Vec<SceneLabelId>>,
    ) -> Result<Self> {
        let map = Self {
            image_id: image_id.into(),
            legend,
            labels,
        };
        map.validate()?;
        Ok(map)
    }

    pub fn validate(&self) -> Result<()> {
        for (r, row) in self.labels.iter().enumerate() {
            for (c, id) in row.iter().enumerate() {
                if !self.legend.contains_key(id) {
                    return Err(Error::schema(
                        format!("scene '{}' grid[{r}][{c}]", self.image_id),
                        format!("label id {id} missing from legend"),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn total_labels(&self) -> usize {
        self.labels.iter().map(Vec::len).sum()
    }
}

/// One context rule: a set of scene labels and the classes they favour.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextBinding<T> {
    context_labels: BTreeSet<String>,
    boosted_classes: BTreeSet<ClassId>,
    adjust_percent: T,
    threshold: T,
    attenuated_classes: BTreeSet<ClassId>,
    attenuate_percent: T,
}

impl<T: Scalar> ContextBinding<T> {
    pub fn new(
        context_labels: BTreeSet<String>,
        boosted_classes: BTreeSet<ClassId>,
        adjust_percent: T,
        threshold: T,
    ) -> Result<Self> {
        if boosted_classes.is_empty() {
            return Err(Error::Config("context binding boosts no classes".into()));
        }
        if context_labels.is_empty() {
            return Err(Error::Config("context binding has no scene labels".into()));
        }
        if !threshold.in_unit_interval() {
            return Err(Error::Config(format!("context threshold {threshold} outside [0, 1]")));
        }
        if !(adjust_percent >= T::zero()) {
            return Err(Error::Config(format!("adjust percent {adjust_percent} is negative")));
        }
        Ok(Self {
            context_labels,
            boosted_classes,
            adjust_percent,
            threshold,
            attenuated_classes: BTreeSet::new(),
            attenuate_percent: T::zero(),
        })
    }

    /// Extension: also scale the logits of classes that contradict the
    /// context by `1 - percent / 100`. Off unless configured.
    pub fn with_attenuation(mut self, classes: BTreeSet<ClassId>, percent: T) -> Result<Self> {
        if !(percent >= T::zero() && percent <= T::lit(100.0)) {
            return Err(Error::Config(format!("attenuation percent {percent} outside [0, 100]")));
        }
        if let Some(c) = classes.intersection(&self.boosted_classes).next() {
            return Err(Error::Config(format!("class {c} is both boosted and attenuated")));
        }
        self.attenuated_classes = classes;
        self.attenuate_percent = percent;
        Ok(self)
    }

    pub fn context_labels(&self) -> &BTreeSet<String> {
        &self.context_labels
    }

    pub fn boosted_classes(&self) -> &BTreeSet<ClassId> {
        &self.boosted_classes
    }

    pub fn threshold(&self) -> T {
        self.threshold
    }

    /// `1 + adjust_percent / 100`.
    pub fn boost_factor(&self) -> T {
        T::one() + self.adjust_percent / T::lit(100.0)
    }
}

/// Share of labels in `p` whose legend name is in `context_labels`.
pub fn context_fraction<T: Scalar>(p: &SceneLabelMap, context_labels: &BTreeSet<String>) -> Result<T> {
    let total = p.total_labels();
    if total == 0 {
        return Err(Error::EmptySceneMap {
            image_id: p.image_id.clone(),
        });
    }
    let hits = p
        .labels
        .iter()
        .flatten()
        .filter(|id| p.legend.get(id).is_some_and(|name| context_labels.contains(name)))
        .count();
    Ok(T::from_count(hits) / T::from_count(total))
}

/// Applies one binding. Below or at the threshold the input is returned
/// unchanged.
pub fn apply_cawal<T: Scalar>(
    ds: &DetectionSet<T>,
    p: &SceneLabelMap,
    binding: &ContextBinding<T>,
) -> Result<DetectionSet<T>> {
    let fraction: T = context_fraction(p, &binding.context_labels)?;
    if !(fraction > binding.threshold) {
        return Ok(ds.clone());
    }
    let boost = binding.boost_factor();
    let attenuate = T::one() - binding.attenuate_percent / T::lit(100.0);
    let mut out = ds.clone();
    for d in &mut out.detections {
        if binding.boosted_classes.contains(&d.label) {
            d.scale_all_logits(boost)?;
        } else if binding.attenuated_classes.contains(&d.label) {
            d.scale_all_logits(attenuate)?;
        }
    }
    Ok(out)
}

/// Applies each binding in turn; every binding sees the same scene map.
pub fn apply_bindings<T: Scalar>(
    ds: &DetectionSet<T>,
    p: &SceneLabelMap,
    bindings: &[ContextBinding<T>],
) -> Result<DetectionSet<T>> {
    bindings
        .iter()
        .try_fold(ds.clone(), |acc, b| apply_cawal(&acc, p, b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detection::Detection;
    use crate::geometry::BBox;

    const BOAT: ClassId = ClassId(5);
    const CAR: ClassId = ClassId(2);

    fn legend() -> BTreeMap<SceneLabelId, String> {
        BTreeMap::from([(0, "water".to_string()), (1, "land".to_string())])
    }

    fn water() -> BTreeSet<String> {
        BTreeSet::from(["water".to_string()])
    }

    /// A 10-cell map with `water` water cells.
    fn map_with(water_cells: usize) -> SceneLabelMap {
        let mut cells = vec![0; water_cells];
        cells.resize(10, 1);
        SceneLabelMap::new("img", legend(), vec![cells[..5].to_vec(), cells[5..].to_vec()]).unwrap()
    }

    fn dets() -> DetectionSet<f64> {
        DetectionSet::new(
            "img",
            vec![
                Detection::new(0, BBox::new(0., 0., 4., 4.), BOAT, 0.7)
                    .with_logits(vec![-1.0, -2.0, -0.5, -3.0, -1.5, 1.2]),
                Detection::new(1, BBox::new(5., 5., 9., 9.), CAR, 0.8)
                    .with_logits(vec![-1.0, -2.0, 2.0, -3.0, -1.5, -0.2]),
            ],
        )
    }

    fn binding(threshold: f64) -> ContextBinding<f64> {
        ContextBinding::new(water(), BTreeSet::from([BOAT]), 10.0, threshold).unwrap()
    }

    #[test]
    fn fraction_examples() {
        let p = SceneLabelMap::new("i", legend(), vec![vec![0, 0, 1], vec![0, 1, 1]]).unwrap();
        assert_eq!(context_fraction::<f64>(&p, &water()).unwrap(), 0.5);
        let none = BTreeSet::from(["road".to_string()]);
        assert_eq!(context_fraction::<f64>(&p, &none).unwrap(), 0.0);
        let all = BTreeSet::from(["water".to_string(), "land".to_string()]);
        assert_eq!(context_fraction::<f64>(&p, &all).unwrap(), 1.0);
    }

    #[test]
    fn empty_map_is_an_error() {
        let p = SceneLabelMap::new("i", legend(), vec![vec![], vec![]]).unwrap();
        assert!(matches!(context_fraction::<f64>(&p, &water()), Err(Error::EmptySceneMap { .. })));
    }

    #[test]
    fn legend_must_cover_grid() {
        assert!(SceneLabelMap::new("i", legend(), vec![vec![0, 7]]).is_err());
    }

    #[test]
    fn boost_above_threshold() {
        let out = apply_cawal(&dets(), &map_with(4), &binding(0.3)).unwrap();
        let boat = &out.detections[0];
        let expect: Vec<f64> = dets().detections[0].logits.clone().unwrap().iter().map(|v| v * 1.1).collect();
        assert_eq!(boat.logits.as_ref().unwrap(), &expect);
        assert_eq!(boat.score, (1.2f64 * 1.1).sigmoid());
        assert_eq!(out.detections[1], dets().detections[1]);
    }

    #[test]
    fn boundary_is_strict() {
        let input = dets();
        assert_eq!(apply_cawal(&input, &map_with(3), &binding(0.3)).unwrap(), input);
    }

    #[test]
    fn binding_requires_boosted_classes() {
        assert!(ContextBinding::<f64>::new(water(), BTreeSet::new(), 10.0, 0.3).is_err());
        assert!(ContextBinding::<f64>::new(water(), BTreeSet::from([BOAT]), 10.0, 1.3).is_err());
    }

    #[test]
    fn missing_own_logit_is_reported() {
        let ds = DetectionSet::new(
            "img",
            vec![Detection::new(3, BBox::new(0., 0., 4., 4.), BOAT, 0.7).with_logits(vec![0.1])],
        );
        assert!(matches!(
            apply_cawal(&ds, &map_with(8), &binding(0.3)),
            Err(Error::MissingLogits { id: 3, .. })
        ));
    }

    #[test]
    fn score_only_detections_scale_the_score() {
        let ds = DetectionSet::new("img", vec![Detection::new(0, BBox::new(0., 0., 4., 4.), BOAT, 0.5)]);
        let out = apply_cawal(&ds, &map_with(8), &binding(0.3)).unwrap();
        assert_eq!(out.detections[0].score, 0.5 * 1.1);
    }

    #[test]
    fn attenuation_scales_contradicting_classes() {
        let b = binding(0.3).with_attenuation(BTreeSet::from([CAR]), 50.0).unwrap();
        let out = apply_cawal(&dets(), &map_with(8), &b).unwrap();
        assert_eq!(out.detections[1].own_logit(), Some(1.0));
        assert!(binding(0.3).with_attenuation(BTreeSet::from([BOAT]), 50.0).is_err());
    }

    #[test]
    fn bindings_apply_independently() {
        let land = ContextBinding::new(
            BTreeSet::from(["land".to_string()]),
            BTreeSet::from([CAR]),
            20.0,
            0.3,
        )
        .unwrap();
        // 4 water / 6 land: both bindings fire.
        let out = apply_bindings(&dets(), &map_with(4), &[binding(0.3), land]).unwrap();
        assert_eq!(out.detections[0].own_logit(), Some(1.2 * 1.1));
        assert_eq!(out.detections[1].own_logit(), Some(2.0 * 1.2));
    }
}
