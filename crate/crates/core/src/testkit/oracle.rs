//! Brute-force reference implementations. They favour directness over
//! speed and share no code with the production paths beyond data types.

use std::collections::{BTreeMap, BTreeSet};

use crate::detection::{ClassId, DetectionSet};
use crate::evalmetrics::GroundTruthSet;
use crate::geometry::BBox;

fn corners(b: &BBox<f64>) -> [f64; 4] {
    b.to_array()
}

fn box_area(b: [f64; 4]) -> f64 {
    (b[2] - b[0]) * (b[3] - b[1])
}

fn inter(a: [f64; 4], b: [f64; 4]) -> f64 {
    let w = a[2].min(b[2]) - a[0].max(b[0]);
    let h = a[3].min(b[3]) - a[1].max(b[1]);
    if w > 0.0 && h > 0.0 {
        w * h
    } else {
        0.0
    }
}

fn inside(a: [f64; 4], b: [f64; 4]) -> bool {
    (0..2).all(|k| a[k] >= b[k]) && (2..4).all(|k| a[k] <= b[k])
}

/// Indices surviving redundancy elimination, by checking every ordered
/// pair against the original set. `overlap_rf: None` checks containment
/// only. Mutually redundant pairs keep the larger box, then the higher
/// score, then the earlier one.
pub fn oracle_redundancy(ds: &DetectionSet<f64>, overlap_rf: Option<f64>) -> BTreeSet<usize> {
    let dets = &ds.detections;
    let fires = |i: usize, j: usize| {
        let (a, b) = (corners(&dets[i].bbox), corners(&dets[j].bbox));
        inside(a, b) || overlap_rf.is_some_and(|rf| inter(a, b) / box_area(a) >= rf)
    };
    let beats = |j: usize, i: usize| {
        let (aj, ai) = (box_area(corners(&dets[j].bbox)), box_area(corners(&dets[i].bbox)));
        if aj != ai {
            return aj > ai;
        }
        if dets[j].score != dets[i].score {
            return dets[j].score > dets[i].score;
        }
        j < i
    };
    let mut survivors = BTreeSet::new();
    'candidate: for i in 0..dets.len() {
        for j in 0..dets.len() {
            if i != j && dets[i].label == dets[j].label && fires(i, j) && (!fires(j, i) || beats(j, i)) {
                continue 'candidate;
            }
        }
        survivors.insert(i);
    }
    survivors
}

/// Overlap fraction of integer boxes by counting the unit cells of `a` that
/// also lie in `b`.
pub fn oracle_overlap_raster(a: [i64; 4], b: [i64; 4]) -> f64 {
    let mut in_a = 0u64;
    let mut in_both = 0u64;
    for x in a[0]..a[2] {
        for y in a[1]..a[3] {
            in_a += 1;
            if x >= b[0] && x < b[2] && y >= b[1] && y < b[3] {
                in_both += 1;
            }
        }
    }
    in_both as f64 / in_a as f64
}

fn oracle_iou(a: [f64; 4], b: [f64; 4]) -> f64 {
    let i = inter(a, b);
    let union = box_area(a) + box_area(b) - i;
    if union > 0.0 {
        i / union
    } else {
        0.0
    }
}

/// Mean AP at `iou_thresh` with 101-point interpolation, computed per class
/// by enumerating every ranked prefix for every recall point.
pub fn oracle_ap(preds: &[DetectionSet<f64>], gts: &[GroundTruthSet<f64>], iou_thresh: f64) -> f64 {
    let mut images: BTreeSet<&str> = preds.iter().map(|p| p.image_id.as_str()).collect();
    images.extend(gts.iter().map(|g| g.image_id.as_str()));

    let mut gt_count: BTreeMap<ClassId, usize> = BTreeMap::new();
    // (score, image rank, prediction index, true positive)
    let mut ranked: BTreeMap<ClassId, Vec<(f64, usize, usize, bool)>> = BTreeMap::new();

    for (rank, id) in images.iter().enumerate() {
        let p = preds.iter().find(|p| p.image_id == *id);
        let g = gts.iter().find(|g| g.image_id == *id);
        let classes: BTreeSet<ClassId> = p
            .into_iter()
            .flat_map(|p| p.detections.iter().map(|d| d.label))
            .chain(g.into_iter().flat_map(|g| g.annotations.iter().map(|a| a.label)))
            .collect();
        for class in classes {
            let truths: Vec<[f64; 4]> = g
                .map(|g| g.annotations.iter().filter(|a| a.label == class).map(|a| corners(&a.bbox)).collect())
                .unwrap_or_default();
            *gt_count.entry(class).or_default() += truths.len();
            let mut mine: Vec<(usize, f64, [f64; 4])> = p
                .map(|p| {
                    p.detections
                        .iter()
                        .enumerate()
                        .filter(|(_, d)| d.label == class)
                        .map(|(i, d)| (i, d.score, corners(&d.bbox)))
                        .collect()
                })
                .unwrap_or_default();
            mine.sort_by(|x, y| y.1.partial_cmp(&x.1).unwrap().then(x.0.cmp(&y.0)));
            let mut used = vec![false; truths.len()];
            for (i, score, b) in mine {
                let mut pick: Option<(usize, f64)> = None;
                for (t, tb) in truths.iter().enumerate() {
                    if used[t] {
                        continue;
                    }
                    let v = oracle_iou(b, *tb);
                    if v >= iou_thresh && pick.map_or(true, |(_, best)| v > best) {
                        pick = Some((t, v));
                    }
                }
                if let Some((t, _)) = pick {
                    used[t] = true;
                }
                ranked.entry(class).or_default().push((score, rank, i, pick.is_some()));
            }
        }
    }

    let mut aps = Vec::new();
    for (class, n) in gt_count {
        if n == 0 {
            continue;
        }
        let mut list = ranked.remove(&class).unwrap_or_default();
        list.sort_by(|x, y| y.0.partial_cmp(&x.0).unwrap().then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
        let mut total = 0.0;
        for k in 0..101 {
            let r = k as f64 / 100.0;
            let mut best = 0.0f64;
            for len in 1..=list.len() {
                let tp = list[..len].iter().filter(|e| e.3).count();
                let recall = tp as f64 / n as f64;
                let precision = tp as f64 / len as f64;
                if recall >= r && precision > best {
                    best = precision;
                }
            }
            total += best;
        }
        aps.push(total / 101.0);
    }
    if aps.is_empty() {
        0.0
    } else {
        aps.iter().sum::<f64>() / aps.len() as f64
    }
}
