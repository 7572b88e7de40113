//! Detection evaluation: matching, mAP, average IoU, false positives, box
//! reduction and confidence changes.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::Serialize;

use crate::detection::{ClassId, DetectionSet, Vocabulary};
use crate::error::{Error, Result};
use crate::geometry::{iou, BBox};
use crate::scalar::Scalar;

/// IoU threshold for mAP and false-positive counting.
pub const MATCH_IOU: f64 = 0.5;
/// Thresholds reported for average IoU.
pub const AVG_IOU_THRESHOLDS: [f64; 3] = [0.5, 0.75, 0.9];
pub const RECALL_POINTS: usize = 101;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundTruth<T> {
    pub bbox: BBox<T>,
    pub label: ClassId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthSet<T> {
    pub image_id: String,
    pub annotations: Vec<GroundTruth<T>>,
}

impl<T: Scalar> GroundTruthSet<T> {
    pub fn new(image_id: impl Into<String>, annotations: Vec<GroundTruth<T>>) -> Self {
        Self {
            image_id: image_id.into(),
            annotations,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchedPair<T> {
    pub pred: usize,
    pub gt: usize,
    pub iou: T,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Matching<T> {
    pub pairs: Vec<MatchedPair<T>>,
    pub unmatched_preds: Vec<usize>,
    pub unmatched_gts: Vec<usize>,
}

/// Prediction indices by descending score, ties by lower index.
fn score_order<T: Scalar>(preds: &DetectionSet<T>) -> Vec<usize> {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| {
        preds.detections[b]
            .score
            .partial_cmp(&preds.detections[a].score)
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    order
}

/// Greedy class-aware matching in descending score order. Each prediction
/// takes the unmatched same-class ground truth with the highest IoU, if
/// that IoU reaches `iou_thresh`.
pub fn match_detections<T: Scalar>(
    preds: &DetectionSet<T>,
    gts: &GroundTruthSet<T>,
    iou_thresh: T,
) -> Matching<T> {
    let mut taken = vec![false; gts.annotations.len()];
    let mut matched_pred = vec![false; preds.len()];
    let mut pairs = Vec::new();
    for p in score_order(preds) {
        let d = &preds.detections[p];
        let mut best: Option<(usize, T)> = None;
        for (g, gt) in gts.annotations.iter().enumerate() {
            if taken[g] || gt.label != d.label {
                continue;
            }
            let v = iou(&d.bbox, &gt.bbox).unwrap_or(T::zero());
            if v >= iou_thresh && best.map_or(true, |(_, b)| v > b) {
                best = Some((g, v));
            }
        }
        if let Some((g, v)) = best {
            taken[g] = true;
            matched_pred[p] = true;
            pairs.push(MatchedPair { pred: p, gt: g, iou: v });
        }
    }
    Matching {
        pairs,
        unmatched_preds: (0..preds.len()).filter(|&i| !matched_pred[i]).collect(),
        unmatched_gts: (0..gts.annotations.len()).filter(|&i| !taken[i]).collect(),
    }
}

/// Pairs prediction and ground-truth sets by image id, sorted by id.
fn align<'a, T: Scalar>(
    preds: &'a [DetectionSet<T>],
    gts: &'a [GroundTruthSet<T>],
) -> Vec<(Option<&'a DetectionSet<T>>, Option<&'a GroundTruthSet<T>>)> {
    let mut map: BTreeMap<&str, (Option<&DetectionSet<T>>, Option<&GroundTruthSet<T>>)> = BTreeMap::new();
    for p in preds {
        map.entry(p.image_id.as_str()).or_default().0 = Some(p);
    }
    for g in gts {
        map.entry(g.image_id.as_str()).or_default().1 = Some(g);
    }
    map.into_values().collect()
}

fn empty_gt<T: Scalar>(image_id: &str) -> GroundTruthSet<T> {
    GroundTruthSet::new(image_id, Vec::new())
}

/// IoUs of all pairs matched at any positive overlap.
pub fn matched_ious<T: Scalar>(preds: &[DetectionSet<T>], gts: &[GroundTruthSet<T>]) -> Vec<T> {
    let mut out = Vec::new();
    for (p, g) in align(preds, gts) {
        let Some(p) = p else { continue };
        let empty;
        let g = match g {
            Some(g) => g,
            None => {
                empty = empty_gt(&p.image_id);
                &empty
            }
        };
        out.extend(match_detections(p, g, T::epsilon()).pairs.iter().map(|m| m.iou));
    }
    out
}

/// Mean of the IoUs that reach `t`; zero when none do.
pub fn mean_iou_at<T: Scalar>(ious: &[T], t: T) -> T {
    let kept: Vec<T> = ious.iter().copied().filter(|v| *v >= t).collect();
    if kept.is_empty() {
        return T::zero();
    }
    kept.iter().fold(T::zero(), |a, v| a + *v) / T::from_count(kept.len())
}

pub fn average_iou_at<T: Scalar>(preds: &[DetectionSet<T>], gts: &[GroundTruthSet<T>], t: T) -> T {
    mean_iou_at(&matched_ious(preds, gts), t)
}

/// One scored prediction of a class, flagged true or false positive.
#[derive(Debug, Clone, Copy)]
struct Scored<T> {
    score: T,
    image: usize,
    pred: usize,
    tp: bool,
}

/// Average precision from a ranked list, using 101-point interpolation.
fn interpolated_ap<T: Scalar>(mut ranked: Vec<Scored<T>>, n_gt: usize) -> T {
    if n_gt == 0 || ranked.is_empty() {
        return T::zero();
    }
    ranked.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap_or(Ordering::Equal)
            .then(a.image.cmp(&b.image))
            .then(a.pred.cmp(&b.pred))
    });
    let total = T::from_count(n_gt);
    let mut tp = 0usize;
    let mut recall = Vec::with_capacity(ranked.len());
    let mut precision = Vec::with_capacity(ranked.len());
    for (k, s) in ranked.iter().enumerate() {
        if s.tp {
            tp += 1;
        }
        recall.push(T::from_count(tp) / total);
        precision.push(T::from_count(tp) / T::from_count(k + 1));
    }
    for i in (0..precision.len().saturating_sub(1)).rev() {
        if precision[i + 1] > precision[i] {
            precision[i] = precision[i + 1];
        }
    }
    let mut sum = T::zero();
    for k in 0..RECALL_POINTS {
        let r = T::from_count(k) / T::lit(100.0);
        let i = recall.partition_point(|&v| v < r);
        if i < precision.len() {
            sum = sum + precision[i];
        }
    }
    sum / T::from_count(RECALL_POINTS)
}

/// Per-class AP at IoU 0.5 for every class with ground truth.
pub fn average_precision_per_class<T: Scalar>(
    preds: &[DetectionSet<T>],
    gts: &[GroundTruthSet<T>],
) -> BTreeMap<ClassId, T> {
    let mut ranked: BTreeMap<ClassId, Vec<Scored<T>>> = BTreeMap::new();
    let mut n_gt: BTreeMap<ClassId, usize> = BTreeMap::new();
    for (image, (p, g)) in align(preds, gts).into_iter().enumerate() {
        if let Some(g) = g {
            for a in &g.annotations {
                *n_gt.entry(a.label).or_default() += 1;
            }
        }
        let Some(p) = p else { continue };
        let empty;
        let g = match g {
            Some(g) => g,
            None => {
                empty = empty_gt(&p.image_id);
                &empty
            }
        };
        let m = match_detections(p, g, T::lit(MATCH_IOU));
        let tp: BTreeSet<usize> = m.pairs.iter().map(|x| x.pred).collect();
        for (i, d) in p.detections.iter().enumerate() {
            ranked.entry(d.label).or_default().push(Scored {
                score: d.score,
                image,
                pred: i,
                tp: tp.contains(&i),
            });
        }
    }
    n_gt.into_iter()
        .map(|(class, n)| (class, interpolated_ap(ranked.remove(&class).unwrap_or_default(), n)))
        .collect()
}

/// Unweighted mean of per-class AP; zero without ground truth.
pub fn mean_average_precision<T: Scalar>(preds: &[DetectionSet<T>], gts: &[GroundTruthSet<T>]) -> T {
    let per_class = average_precision_per_class(preds, gts);
    if per_class.is_empty() {
        return T::zero();
    }
    per_class.values().fold(T::zero(), |a, v| a + *v) / T::from_count(per_class.len())
}

/// Named partition of the class vocabulary (e.g. water and land vehicles).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassGroups {
    groups: BTreeMap<String, BTreeSet<ClassId>>,
    by_class: BTreeMap<ClassId, String>,
}

impl ClassGroups {
    pub fn new(groups: BTreeMap<String, BTreeSet<ClassId>>, vocab: &Vocabulary) -> Result<Self> {
        let mut by_class = BTreeMap::new();
        for (name, members) in &groups {
            for c in members {
                if c.0 >= vocab.len() {
                    return Err(Error::Config(format!("group '{name}' names unknown class {c}")));
                }
                if let Some(prev) = by_class.insert(*c, name.clone()) {
                    return Err(Error::Config(format!(
                        "class '{}' is in both '{prev}' and '{name}'",
                        vocab.name(*c)
                    )));
                }
            }
        }
        if let Some(missing) = (0..vocab.len()).map(ClassId).find(|c| !by_class.contains_key(c)) {
            return Err(Error::Config(format!("class '{}' belongs to no group", vocab.name(missing))));
        }
        Ok(Self { groups, by_class })
    }

    /// Water: boat. Land: everything else.
    pub fn water_land(vocab: &Vocabulary) -> Result<Self> {
        let mut water = BTreeSet::new();
        let mut land = BTreeSet::new();
        for (i, name) in vocab.names().iter().enumerate() {
            if name.eq_ignore_ascii_case("boat") {
                water.insert(ClassId(i));
            } else {
                land.insert(ClassId(i));
            }
        }
        Self::new(BTreeMap::from([("land".to_string(), land), ("water".to_string(), water)]), vocab)
    }

    pub fn group_of(&self, class: ClassId) -> &str {
        &self.by_class[&class]
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.groups.keys().map(String::as_str)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct FpTally {
    pub predictions: usize,
    pub matched: usize,
    pub false_positives: usize,
}

/// False positives (predictions without a same-class match at IoU 0.5),
/// tallied by class group. Predictions scoring below `score_threshold` are
/// dropped before matching.
pub fn count_false_positives<T: Scalar>(
    preds: &[DetectionSet<T>],
    gts: &[GroundTruthSet<T>],
    groups: &ClassGroups,
    score_threshold: T,
) -> BTreeMap<String, FpTally> {
    let mut out: BTreeMap<String, FpTally> = groups.names().map(|g| (g.to_string(), FpTally::default())).collect();
    for (p, g) in align(preds, gts) {
        let Some(p) = p else { continue };
        let visible = DetectionSet::new(
            p.image_id.clone(),
            p.detections.iter().filter(|d| d.score >= score_threshold).cloned().collect(),
        );
        let empty;
        let g = match g {
            Some(g) => g,
            None => {
                empty = empty_gt(&p.image_id);
                &empty
            }
        };
        let m = match_detections(&visible, g, T::lit(MATCH_IOU));
        for pair in &m.pairs {
            let t = out.get_mut(groups.group_of(visible.detections[pair.pred].label)).unwrap();
            t.predictions += 1;
            t.matched += 1;
        }
        for &i in &m.unmatched_preds {
            let t = out.get_mut(groups.group_of(visible.detections[i].label)).unwrap();
            t.predictions += 1;
            t.false_positives += 1;
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConfidenceChanges {
    pub total_baseline: usize,
    pub increased: usize,
    /// Lower score after refinement, including removed detections.
    pub decreased: usize,
    pub removed: usize,
    pub unchanged: usize,
    /// Percentages over `total_baseline`.
    pub pct_increased: f64,
    pub pct_decreased: f64,
}

fn percent(part: usize, whole: usize) -> f64 {
    if whole == 0 {
        0.0
    } else {
        100.0 * part as f64 / whole as f64
    }
}

/// Pairs detections by provenance id and counts score movements.
pub fn confidence_change_report<T: Scalar>(
    before: &[DetectionSet<T>],
    after: &[DetectionSet<T>],
) -> Result<ConfidenceChanges> {
    let mut baseline: BTreeMap<(&str, u64), T> = BTreeMap::new();
    for ds in before {
        for d in &ds.detections {
            if baseline.insert((ds.image_id.as_str(), d.id), d.score).is_some() {
                return Err(Error::ProvenanceMismatch(format!(
                    "id {} appears twice in baseline image '{}'",
                    d.id, ds.image_id
                )));
            }
        }
    }
    let (mut increased, mut decreased, mut unchanged) = (0, 0, 0);
    let mut seen = BTreeSet::new();
    for ds in after {
        for d in &ds.detections {
            let key = (ds.image_id.as_str(), d.id);
            let Some(&old) = baseline.get(&key) else {
                return Err(Error::ProvenanceMismatch(format!(
                    "refined id {} in image '{}' has no baseline detection",
                    d.id, ds.image_id
                )));
            };
            if !seen.insert(key) {
                return Err(Error::ProvenanceMismatch(format!(
                    "refined id {} appears twice in image '{}'",
                    d.id, ds.image_id
                )));
            }
            match d.score.partial_cmp(&old) {
                Some(Ordering::Greater) => increased += 1,
                Some(Ordering::Less) => decreased += 1,
                _ => unchanged += 1,
            }
        }
    }
    let total = baseline.len();
    let removed = total - seen.len();
    let decreased = decreased + removed;
    Ok(ConfidenceChanges {
        total_baseline: total,
        increased,
        decreased,
        removed,
        unchanged,
        pct_increased: percent(increased, total),
        pct_decreased: percent(decreased, total),
    })
}

/// A published box-reduction figure, kept so reports can show it beside the
/// value recomputed from the same counts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReferenceReduction {
    pub dataset: &'static str,
    pub baseline: usize,
    pub refined: usize,
    pub printed_percent: f64,
}

pub const REFERENCE_REDUCTIONS: [ReferenceReduction; 3] = [
    ReferenceReduction {
        dataset: "CDD",
        baseline: 598,
        refined: 451,
        printed_percent: 37.88,
    },
    ReferenceReduction {
        dataset: "MEVD",
        baseline: 909,
        refined: 726,
        printed_percent: 34.21,
    },
    ReferenceReduction {
        dataset: "DVD",
        baseline: 6192,
        refined: 5548,
        printed_percent: 10.56,
    },
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoxReduction {
    pub baseline: usize,
    pub refined: usize,
    /// `100 * (baseline - refined) / baseline`.
    pub reduction_percent: f64,
    /// Published figure for the same counts, when one exists.
    pub reference: Option<ReferenceReduction>,
}

pub fn box_reduction_report(baseline: usize, refined: usize) -> Result<BoxReduction> {
    if baseline == 0 || refined > baseline {
        return Err(Error::InvalidCounts(format!(
            "baseline {baseline}, refined {refined}: need baseline > 0 and refined <= baseline"
        )));
    }
    Ok(BoxReduction {
        baseline,
        refined,
        reduction_percent: percent(baseline - refined, baseline),
        reference: REFERENCE_REDUCTIONS
            .iter()
            .find(|r| r.baseline == baseline && r.refined == refined)
            .copied(),
    })
}

impl BoxReduction {
    pub fn render(&self) -> String {
        let mut s = format!(
            "boxes: baseline {} refined {} reduction {:.2}% (computed as (baseline - refined) / baseline)",
            self.baseline, self.refined, self.reduction_percent
        );
        if let Some(r) = self.reference {
            let _ = write!(
                s,
                "\n  published figure for {} with these counts: {:.2}% (differs by {:+.2} points)",
                r.dataset,
                r.printed_percent,
                r.printed_percent - self.reduction_percent
            );
        }
        s
    }
}

/// Accuracy figures for one detection collection.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport<T> {
    pub map: T,
    pub ap_per_class: BTreeMap<String, T>,
    pub avg_iou_at: BTreeMap<String, T>,
    pub fp_per_group: BTreeMap<String, FpTally>,
    pub boxes: usize,
}

pub fn evaluate<T: Scalar>(
    preds: &[DetectionSet<T>],
    gts: &[GroundTruthSet<T>],
    vocab: &Vocabulary,
    groups: &ClassGroups,
    fp_score_threshold: T,
) -> EvalReport<T> {
    let ious = matched_ious(preds, gts);
    EvalReport {
        map: mean_average_precision(preds, gts),
        ap_per_class: average_precision_per_class(preds, gts)
            .into_iter()
            .map(|(c, ap)| (vocab.name(c).to_string(), ap))
            .collect(),
        avg_iou_at: AVG_IOU_THRESHOLDS
            .iter()
            .map(|&t| (format!("{t}"), mean_iou_at(&ious, T::lit(t))))
            .collect(),
        fp_per_group: count_false_positives(preds, gts, groups, fp_score_threshold),
        boxes: preds.iter().map(DetectionSet::len).sum(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FpChange {
    pub baseline: usize,
    pub refined: usize,
    pub reduction: i64,
    pub reduction_percent: f64,
}

/// Baseline against refined output, laid out like the usual comparison
/// tables: accuracy, box reduction, false positives, confidence changes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalComparison<T> {
    pub baseline: EvalReport<T>,
    pub refined: EvalReport<T>,
    pub box_counts: Option<BoxReduction>,
    pub fp_change: BTreeMap<String, FpChange>,
    pub confidence_changes: ConfidenceChanges,
}

pub fn compare<T: Scalar>(
    baseline: &[DetectionSet<T>],
    refined: &[DetectionSet<T>],
    gts: &[GroundTruthSet<T>],
    vocab: &Vocabulary,
    groups: &ClassGroups,
    fp_score_threshold: T,
) -> Result<EvalComparison<T>> {
    let b = evaluate(baseline, gts, vocab, groups, fp_score_threshold);
    let r = evaluate(refined, gts, vocab, groups, fp_score_threshold);
    let box_counts = if b.boxes == 0 {
        None
    } else {
        Some(box_reduction_report(b.boxes, r.boxes)?)
    };
    let fp_change = b
        .fp_per_group
        .iter()
        .map(|(g, before)| {
            let after = r.fp_per_group[g].false_positives;
            let reduction = before.false_positives as i64 - after as i64;
            let pct = if before.false_positives == 0 {
                0.0
            } else {
                100.0 * reduction as f64 / before.false_positives as f64
            };
            (
                g.clone(),
                FpChange {
                    baseline: before.false_positives,
                    refined: after,
                    reduction,
                    reduction_percent: pct,
                },
            )
        })
        .collect();
    Ok(EvalComparison {
        confidence_changes: confidence_change_report(baseline, refined)?,
        baseline: b,
        refined: r,
        box_counts,
        fp_change,
    })
}

impl<T: Scalar> EvalComparison<T> {
    /// Plain-text tables.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "Accuracy");
        let _ = writeln!(s, "  {:<16} {:>10} {:>10}", "metric", "baseline", "refined");
        let _ = writeln!(s, "  {:<16} {:>10.4} {:>10.4}", "mAP", self.baseline.map.as_f64(), self.refined.map.as_f64());
        for (t, v) in &self.baseline.avg_iou_at {
            let r = self.refined.avg_iou_at[t];
            let _ = writeln!(s, "  {:<16} {:>10.4} {:>10.4}", format!("Avg IoU @ {t}"), v.as_f64(), r.as_f64());
        }
        let _ = writeln!(s);
        let _ = writeln!(s, "Bounding boxes");
        match &self.box_counts {
            Some(b) => {
                for line in b.render().lines() {
                    let _ = writeln!(s, "  {line}");
                }
            }
            None => {
                let _ = writeln!(s, "  no baseline boxes");
            }
        }
        let _ = writeln!(s);
        let _ = writeln!(s, "False positives");
        let _ = writeln!(s, "  {:<10} {:>10} {:>10} {:>10}", "group", "baseline", "refined", "reduction");
        for (g, c) in &self.fp_change {
            let _ = writeln!(
                s,
                "  {:<10} {:>10} {:>10} {:>9.2}%",
                g, c.baseline, c.refined, c.reduction_percent
            );
        }
        let _ = writeln!(s);
        let c = &self.confidence_changes;
        let _ = writeln!(s, "Confidence changes (of {} baseline detections)", c.total_baseline);
        let _ = writeln!(s, "  increased {:>6} ({:.2}%)", c.increased, c.pct_increased);
        let _ = writeln!(s, "  decreased {:>6} ({:.2}%, {} removed)", c.decreased, c.pct_decreased, c.removed);
        s
    }
}
