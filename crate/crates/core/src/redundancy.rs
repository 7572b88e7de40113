//! Same-class redundancy elimination.
//!
//! Two rules are available: plain containment, and containment-or-overlap
//! against a redundancy factor `rf`. Both are evaluated in two phases: every
//! redundant index is collected against the original set, then all of them
//! are removed at once.
//!
//! When two boxes are redundant with respect to each other, exactly one of
//! them is flagged. The kept box is the one with the larger area, then the
//! higher score, then the lower index. Preferring the larger box makes the
//! survivor set monotone in `rf`: for boxes of different area, whenever the
//! rule fires in either direction it fires for the smaller box.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use crate::detection::{ClassId, DetectionSet};
use crate::error::{Error, Result};
use crate::geometry::{area, is_contained, overlap_fraction, BBox};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RedundancyRule<T> {
    /// Flag boxes fully contained in another same-class box.
    Containment,
    /// Flag boxes contained in, or covered at least `rf` by, another
    /// same-class box.
    Overlap(T),
}

impl<T: Scalar> RedundancyRule<T> {
    fn check_rf(&self) -> Result<()> {
        match self {
            RedundancyRule::Overlap(rf) if !rf.in_unit_interval() => Err(Error::Config(format!(
                "redundancy factor {rf} outside [0, 1]"
            ))),
            _ => Ok(()),
        }
    }

    /// Whether box `i` is redundant with respect to box `j`.
    fn fires(&self, bi: &BBox<T>, bj: &BBox<T>) -> Result<bool> {
        if is_contained(bi, bj) {
            return Ok(true);
        }
        match self {
            RedundancyRule::Containment => Ok(false),
            RedundancyRule::Overlap(rf) => Ok(overlap_fraction(bi, bj)? >= *rf),
        }
    }
}

/// Ordering of two mutually redundant detections; `Greater` means `a` is kept.
pub(crate) fn keep_order<T: Scalar>(ds: &DetectionSet<T>, a: usize, b: usize) -> Ordering {
    let (da, db) = (&ds.detections[a], &ds.detections[b]);
    area(&da.bbox)
        .partial_cmp(&area(&db.bbox))
        .unwrap_or(Ordering::Equal)
        .then(da.score.partial_cmp(&db.score).unwrap_or(Ordering::Equal))
        .then(b.cmp(&a))
}

fn ensure_positive_areas<T: Scalar>(ds: &DetectionSet<T>) -> Result<()> {
    match ds.detections.iter().position(|d| area(&d.bbox) <= T::zero()) {
        Some(index) => Err(Error::ZeroAreaBox { index }),
        None => Ok(()),
    }
}

/// Indices flagged by `rule`, evaluated against the original set.
pub fn find_redundant<T: Scalar>(
    ds: &DetectionSet<T>,
    rule: RedundancyRule<T>,
) -> Result<BTreeSet<usize>> {
    rule.check_rf()?;
    if matches!(rule, RedundancyRule::Overlap(_)) {
        ensure_positive_areas(ds)?;
    }

    let mut by_class: BTreeMap<ClassId, Vec<usize>> = BTreeMap::new();
    for (i, d) in ds.detections.iter().enumerate() {
        by_class.entry(d.label).or_default().push(i);
    }

    // With rf <= 0 every same-class pair is redundant, including disjoint
    // ones, so the x-sweep below cannot prune.
    let exhaustive = matches!(rule, RedundancyRule::Overlap(rf) if rf <= T::zero());

    let mut flagged = BTreeSet::new();
    for members in by_class.values() {
        let mut order = members.clone();
        order.sort_by(|&a, &b| {
            let (xa, xb) = (ds.detections[a].bbox.x1(), ds.detections[b].bbox.x1());
            xa.partial_cmp(&xb).unwrap_or(Ordering::Equal).then(a.cmp(&b))
        });
        for (pos, &a) in order.iter().enumerate() {
            let ba = &ds.detections[a].bbox;
            for &b in &order[pos + 1..] {
                let bb = &ds.detections[b].bbox;
                if !exhaustive && bb.x1() > ba.x2() {
                    break;
                }
                let a_by_b = rule.fires(ba, bb)?;
                let b_by_a = rule.fires(bb, ba)?;
                match (a_by_b, b_by_a) {
                    (true, false) => {
                        flagged.insert(a);
                    }
                    (false, true) => {
                        flagged.insert(b);
                    }
                    (true, true) => {
                        let loser = if keep_order(ds, a, b) == Ordering::Greater { b } else { a };
                        flagged.insert(loser);
                    }
                    (false, false) => {}
                }
            }
        }
    }
    Ok(flagged)
}

pub fn find_contained_redundant<T: Scalar>(ds: &DetectionSet<T>) -> BTreeSet<usize> {
    find_redundant(ds, RedundancyRule::Containment).expect("containment rule cannot fail")
}

pub fn find_overlap_redundant<T: Scalar>(ds: &DetectionSet<T>, rf: T) -> Result<BTreeSet<usize>> {
    find_redundant(ds, RedundancyRule::Overlap(rf))
}

pub fn apply_rule<T: Scalar>(ds: &DetectionSet<T>, rule: RedundancyRule<T>) -> Result<DetectionSet<T>> {
    let flagged = find_redundant(ds, rule)?;
    Ok(ds.without_indices(&flagged))
}

/// Removes every box flagged by the containment-or-overlap rule.
pub fn apply_redundancy_filter<T: Scalar>(ds: &DetectionSet<T>, rf: T) -> Result<DetectionSet<T>> {
    apply_rule(ds, RedundancyRule::Overlap(rf))
}
