use std::collections::{BTreeMap, BTreeSet};

use pgrules_core::cawal::{apply_cawal, ContextBinding, SceneLabelMap};
use pgrules_core::detection::{Detection, DetectionSet};
use pgrules_core::evalmetrics::{box_reduction_report, mean_average_precision};
use pgrules_core::geometry::{area, iou, is_contained, overlap_fraction, BBox};
use pgrules_core::hwad::{blend_weight, posterior_update, RuleStats};
use pgrules_core::redundancy::{apply_redundancy_filter, find_contained_redundant, find_overlap_redundant};
use pgrules_core::shapeconf::confidence_from_error;
use pgrules_core::testkit::{oracle_ap, oracle_redundancy, random_ap_instance, random_detection_set};
use pgrules_core::{ClassId, Scalar};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn arb_box() -> impl Strategy<Value = BBox<f64>> {
    (0i32..100, 0i32..100, 1i32..50, 1i32..50)
        .prop_map(|(x, y, w, h)| BBox::new(x as f64, y as f64, (x + w) as f64, (y + h) as f64))
}

fn random_set(seed: u64, max: usize) -> DetectionSet<f64> {
    random_detection_set(&mut ChaCha8Rng::seed_from_u64(seed), max, 2)
}

fn survivor_ids(ds: &DetectionSet<f64>) -> BTreeSet<u64> {
    ds.detections.iter().map(|d| d.id).collect()
}

proptest! {
    #[test]
    fn overlap_fraction_is_a_fraction(a in arb_box(), b in arb_box()) {
        let f = overlap_fraction(&a, &b).unwrap();
        prop_assert!((0.0..=1.0).contains(&f));
        if is_contained(&a, &b) {
            prop_assert_eq!(f, 1.0);
        }
    }

    #[test]
    fn iou_is_symmetric_and_below_both_fractions(a in arb_box(), b in arb_box()) {
        let v = iou(&a, &b).unwrap();
        prop_assert_eq!(v, iou(&b, &a).unwrap());
        prop_assert!(v <= overlap_fraction(&a, &b).unwrap() + 1e-12);
        prop_assert!(v <= overlap_fraction(&b, &a).unwrap() + 1e-12);
    }

    #[test]
    fn f32_and_f64_overlap_agree(a in arb_box(), b in arb_box()) {
        let to32 = |b: &BBox<f64>| BBox::from_array(b.to_array().map(|v| v as f32));
        let wide = overlap_fraction(&a, &b).unwrap();
        let narrow = overlap_fraction(&to32(&a), &to32(&b)).unwrap();
        prop_assert!((wide - narrow as f64).abs() < 1e-6);
    }

    #[test]
    fn redundancy_matches_oracle(seed in any::<u64>(), rf in 0.0f64..=1.0) {
        let ds = random_set(seed, 30);
        let all: BTreeSet<usize> = (0..ds.len()).collect();
        let contained = find_contained_redundant(&ds);
        prop_assert_eq!(all.difference(&contained).copied().collect::<BTreeSet<_>>(), oracle_redundancy(&ds, None));
        let flagged = find_overlap_redundant(&ds, rf).unwrap();
        prop_assert_eq!(all.difference(&flagged).copied().collect::<BTreeSet<_>>(), oracle_redundancy(&ds, Some(rf)));
    }

    #[test]
    fn redundancy_is_idempotent(seed in any::<u64>(), rf in 0.0f64..=1.0) {
        let once = apply_redundancy_filter(&random_set(seed, 30), rf).unwrap();
        let twice = apply_redundancy_filter(&once, rf).unwrap();
        prop_assert_eq!(once, twice);
    }

    #[test]
    fn no_surviving_pair_is_redundant(seed in any::<u64>(), rf in 0.01f64..=1.0) {
        let out = apply_redundancy_filter(&random_set(seed, 30), rf).unwrap();
        for (i, a) in out.detections.iter().enumerate() {
            for (j, b) in out.detections.iter().enumerate() {
                if i == j || a.label != b.label {
                    continue;
                }
                prop_assert!(!is_contained(&a.bbox, &b.bbox));
                prop_assert!(overlap_fraction(&a.bbox, &b.bbox).unwrap() < rf);
            }
        }
    }

    #[test]
    fn raising_rf_never_removes_more(seed in any::<u64>(), r1 in 0.0f64..=1.0, r2 in 0.0f64..=1.0) {
        let (lo, hi) = if r1 <= r2 { (r1, r2) } else { (r2, r1) };
        let ds = random_set(seed, 30);
        let strict = survivor_ids(&apply_redundancy_filter(&ds, lo).unwrap());
        let lenient = survivor_ids(&apply_redundancy_filter(&ds, hi).unwrap());
        prop_assert!(strict.is_subset(&lenient));
    }

    #[test]
    fn redundancy_only_removes(seed in any::<u64>()) {
        let ds = random_set(seed, 30);
        let out = apply_redundancy_filter(&ds, 0.6).unwrap();
        prop_assert!(survivor_ids(&out).is_subset(&survivor_ids(&ds)));
        for d in &out.detections {
            prop_assert_eq!(Some(d), ds.detections.iter().find(|o| o.id == d.id));
        }
    }

    #[test]
    fn cawal_keeps_scores_in_range_and_respects_threshold(
        hits in 0usize..=20,
        logits in prop::collection::vec(-8.0f64..8.0, 3),
        percent in 0.0f64..200.0,
    ) {
        let legend = BTreeMap::from([(0, "water".to_string()), (1, "land".to_string())]);
        let grid = vec![(0..20).map(|k| if k < hits { 0 } else { 1 }).collect()];
        let map = SceneLabelMap::new("a", legend, grid).unwrap();
        let binding = ContextBinding::new(
            BTreeSet::from(["water".to_string()]),
            BTreeSet::from([ClassId(0)]),
            percent,
            0.3,
        )
        .unwrap();
        let d = Detection::new(0, BBox::new(0., 0., 1., 1.), ClassId(0), logits[0].sigmoid()).with_logits(logits.clone());
        let other = Detection::new(1, BBox::new(0., 0., 1., 1.), ClassId(1), logits[1].sigmoid()).with_logits(logits);
        let ds = DetectionSet::new("a", vec![d, other]);
        let out = apply_cawal(&ds, &map, &binding).unwrap();
        for det in &out.detections {
            prop_assert!((0.0..=1.0).contains(&det.score));
        }
        prop_assert_eq!(&out.detections[1], &ds.detections[1]);
        if hits * 10 <= 3 * 20 {
            prop_assert_eq!(out, ds);
        }
    }

    #[test]
    fn posterior_and_blend_stay_in_unit_interval(
        sat in 0usize..50,
        not_sat in 0usize..50,
        prior in 0.0f64..=1.0,
        initial in 0.0f64..=1.0,
        alpha in 0.0f64..=1.0,
    ) {
        let stats = RuleStats { c_obj: sat + not_sat, c_sat: sat, c_not_sat: not_sat };
        if let Ok(u) = posterior_update(stats, prior) {
            prop_assert!((0.0..=1.0).contains(&u.posterior));
            prop_assert!((u.likelihood_sat + u.likelihood_not - 1.0).abs() < 1e-12);
            let w = blend_weight(initial, u.posterior, alpha);
            let (lo, hi) = (initial.min(u.posterior), initial.max(u.posterior));
            prop_assert!(w >= lo - 1e-12 && w <= hi + 1e-12);
        }
    }

    #[test]
    fn shape_confidence_is_decreasing_in_error(e1 in 0.0f64..100.0, e2 in 0.0f64..100.0, alpha in 0.1f64..5.0) {
        let (c1, c2) = (confidence_from_error(e1, alpha), confidence_from_error(e2, alpha));
        prop_assert!(c1 > 0.0 && c1 <= 0.5);
        if e1 < e2 {
            prop_assert!(c1 >= c2);
        }
    }

    #[test]
    fn map_is_bounded_and_matches_oracle(seed in any::<u64>()) {
        let (preds, gts) = random_ap_instance(&mut ChaCha8Rng::seed_from_u64(seed));
        let m = mean_average_precision(&preds, &gts);
        prop_assert!((0.0..=1.0).contains(&m));
        prop_assert!((m - oracle_ap(&preds, &gts, 0.5)).abs() <= 1e-12);
    }

    #[test]
    fn box_reduction_is_a_percentage(baseline in 1usize..10_000, frac in 0.0f64..=1.0) {
        let refined = (baseline as f64 * frac) as usize;
        let r = box_reduction_report(baseline, refined).unwrap();
        prop_assert!((0.0..=100.0).contains(&r.reduction_percent));
    }

    #[test]
    fn area_is_positive(b in arb_box()) {
        prop_assert!(area(&b) > 0.0);
    }
}
