//! Acceptance gate: one PASS/FAIL line per criterion, nonzero exit on any
//! failure.

use std::collections::BTreeSet;
use std::fs;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use pgrules_core::cawal::{apply_cawal, ContextBinding, SceneLabelMap};
use pgrules_core::detection::{Detection, DetectionSet};
use pgrules_core::evalmetrics::{box_reduction_report, mean_average_precision};
use pgrules_core::geometry::{overlap_fraction, BBox};
use pgrules_core::hwad::{blend_weight, posterior_update, run_hwad_update_cycle, RuleStats};
use pgrules_core::knowledge::graph::{Relation, SizeRule};
use pgrules_core::knowledge::{parse_knowledge_graph, persist_knowledge_graph, KnowledgeGraph};
use pgrules_core::pipeline::io::detections_to_json;
use pgrules_core::pipeline::run::{KNOWLEDGE_FILE, REFINED_FILE, REPORT_JSON_FILE, REPORT_TEXT_FILE};
use pgrules_core::pipeline::{run_pipeline, Layer, PipelineConfig};
use pgrules_core::redundancy::apply_redundancy_filter;
use pgrules_core::shapeconf::confidence_from_error;
use pgrules_core::testkit::gen::CONFIG_FILE;
use pgrules_core::testkit::{
    gen_scenario, oracle_ap, oracle_overlap_raster, oracle_redundancy, random_ap_instance, random_detection_set,
    write_scenario, ScenarioSpec,
};
use pgrules_core::{ClassId, Scalar, Vocabulary};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

type Outcome = Result<String, String>;

fn check(ok: bool, what: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(what())
    }
}

fn within(start: Instant, budget: Duration) -> Result<(), String> {
    let spent = start.elapsed();
    check(spent < budget, || format!("took {spent:?}, budget {budget:?}"))
}

fn redundancy_matches_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for case in 0..1000 {
        let ds = random_detection_set(&mut rng, 50, 3);
        let kept: BTreeSet<u64> = apply_redundancy_filter(&ds, 0.6)
            .map_err(|e| e.to_string())?
            .detections
            .iter()
            .map(|d| d.id)
            .collect();
        let expected: BTreeSet<u64> = oracle_redundancy(&ds, Some(0.6)).into_iter().map(|i| ds.detections[i].id).collect();
        check(kept == expected, || format!("set {case}: kept {kept:?}, oracle {expected:?}"))?;
    }
    within(start, Duration::from_secs(5))?;
    Ok(format!("1000 sets in {:?}", start.elapsed()))
}

fn overlap_matches_raster() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for case in 0..500 {
        let mut int_box = || {
            let (x, y) = (rng.gen_range(0..40i64), rng.gen_range(0..40i64));
            [x, y, x + rng.gen_range(1..25), y + rng.gen_range(1..25)]
        };
        let (a, b) = (int_box(), int_box());
        let as_box = |c: [i64; 4]| BBox::from_array(c.map(|v| v as f64));
        let got = overlap_fraction(&as_box(a), &as_box(b)).map_err(|e| e.to_string())?;
        let diff = (got - oracle_overlap_raster(a, b)).abs();
        worst = worst.max(diff);
        check(diff <= 1e-9, || format!("pair {case} {a:?} {b:?}: off by {diff}"))?;
    }
    Ok(format!("500 pairs, max deviation {worst:e}"))
}

fn hwad_hand_values() -> Outcome {
    let stats = RuleStats { c_obj: 4, c_sat: 3, c_not_sat: 1 };
    let posterior = posterior_update(stats, 0.8f64).map_err(|e| e.to_string())?.posterior;
    check((posterior - 0.923077).abs() <= 1e-6, || format!("posterior {posterior}"))?;
    let blended = blend_weight(0.8, posterior, 0.5);
    check((blended - 0.861538).abs() <= 1e-6, || format!("blend {blended}"))?;
    check(blend_weight(0.8, posterior, 0.0) == 0.8, || "alpha 0 moved the weight".into())?;
    check(blend_weight(0.8, posterior, 1.0) == posterior, || "alpha 1 is not the posterior".into())?;
    Ok(format!("posterior {posterior:.6}, blend {blended:.6}"))
}

fn shape_confidence_curve() -> Outcome {
    let zero = confidence_from_error(0.0f64, 1.0);
    check(zero == 0.5, || format!("zero error gives {zero}"))?;
    let one = confidence_from_error(1.0f64, 1.0);
    check((one - 0.268941).abs() <= 1e-6, || format!("(1, 1) gives {one}"))?;
    let sweep: Vec<f64> = (0..100).map(|k| confidence_from_error(k as f64 * 0.5, 1.0)).collect();
    check(sweep.iter().all(|c| *c > 0.0 && *c <= 0.5), || "value outside (0, 0.5]".into())?;
    check(sweep.windows(2).all(|w| w[1] < w[0]), || "sweep not strictly decreasing".into())?;
    Ok(format!("c(0)={zero}, c(1)={one:.6}, sweep of 100 decreasing"))
}

fn cawal_threshold_boundary() -> Outcome {
    const BOAT: ClassId = ClassId(5);
    let vocab = Vocabulary::default_vehicles();
    let scene = |water: usize| {
        let mut cells: Vec<u32> = (0..100).map(|k| if k < water { 0 } else { 1 }).collect();
        cells.shuffle(&mut ChaCha8Rng::seed_from_u64(5));
        let legend = [(0, "water".to_string()), (1, "land".to_string())].into();
        SceneLabelMap::new("a", legend, cells.chunks(10).map(<[u32]>::to_vec).collect()).unwrap()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let dets: Vec<Detection<f64>> = (0..12u64)
        .map(|id| {
            let label = ClassId(id as usize % 6);
            let logits: Vec<f64> = (0..6).map(|_| rng.gen_range(-4.0..4.0)).collect();
            Detection::new(id, BBox::new(0., 0., 10., 10.), label, logits[label.0].sigmoid()).with_logits(logits)
        })
        .collect();
    let ds = DetectionSet::new("a", dets);
    let binding = ContextBinding::new(["water".to_string()].into(), [BOAT].into(), 10.0, 0.30).unwrap();

    let at = apply_cawal(&ds, &scene(30), &binding).map_err(|e| e.to_string())?;
    let same = detections_to_json(&[at], &vocab) == detections_to_json(&[ds.clone()], &vocab);
    check(same, || "output at 0.30 differs from input".into())?;

    let above = apply_cawal(&ds, &scene(31), &binding).map_err(|e| e.to_string())?;
    for (before, after) in ds.detections.iter().zip(&above.detections) {
        let (lb, la) = (before.logits.as_ref().unwrap(), after.logits.as_ref().unwrap());
        if before.label == BOAT {
            let scaled = lb.iter().zip(la).all(|(b, a)| *a == *b * 1.1);
            check(scaled, || format!("boat {} not scaled by 1.1", before.id))?;
            check(after.score == la[BOAT.0].sigmoid(), || format!("boat {} score stale", before.id))?;
        } else {
            check(before == after, || format!("non-boosted detection {} changed", before.id))?;
        }
    }
    Ok("0.30 identical, 0.31 scales boat logits by 1.1 only".into())
}

fn scenario_recovered() -> Outcome {
    let start = Instant::now();
    let dir = TempDir::new().map_err(|e| e.to_string())?;
    let scenario = gen_scenario(&ScenarioSpec::default());
    write_scenario(dir.path(), &scenario).map_err(|e| e.to_string())?;
    let cfg = PipelineConfig::load(&dir.path().join(CONFIG_FILE)).map_err(|e| e.to_string())?;
    let out = run_pipeline(&cfg, &dir.path().join("out")).map_err(|e| e.to_string())?;
    let m = &scenario.manifest;
    let removed: usize = out
        .report
        .stages
        .iter()
        .filter(|s| matches!(s.layer, Layer::Containment | Layer::Overlap))
        .map(|s| s.removed)
        .sum();
    check(removed == m.redundant_total, || format!("removed {removed}, planted {}", m.redundant_total))?;
    let eval = out.report.evaluation.ok_or("no evaluation in report")?;
    let mut summary = Vec::new();
    for (group, change) in &eval.fp_change {
        let (b, r) = (m.expected_fp_baseline[group], m.expected_fp_refined[group]);
        check(change.baseline == b && change.refined == r, || {
            format!("{group}: FP {}->{}, manifest {b}->{r}", change.baseline, change.refined)
        })?;
        summary.push(format!("{group} {b}->{r}"));
    }
    within(start, Duration::from_secs(30))?;
    Ok(format!("removed {removed}, FP {}", summary.join(", ")))
}

fn map_matches_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for case in 0..50 {
        let (preds, gts) = random_ap_instance(&mut rng);
        let (got, want) = (mean_average_precision(&preds, &gts), oracle_ap(&preds, &gts, 0.5));
        check((got - want).abs() <= 1e-12, || format!("instance {case}: mAP {got}, oracle {want}"))?;
    }
    Ok("50 instances".into())
}

fn knowledge_round_trip() -> Outcome {
    let vocab = Vocabulary::default_vehicles();
    let names: Vec<String> = vocab.names().to_vec();
    let dir = TempDir::new().map_err(|e| e.to_string())?;
    let path = dir.path().join("kg.json");
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for cycle in 0..100 {
        // Rules follow one random size order so the graph stays acyclic.
        let mut rank: Vec<usize> = (0..names.len()).collect();
        rank.shuffle(&mut rng);
        let mut rules = Vec::new();
        for s in 0..names.len() {
            for o in 0..names.len() {
                if s != o && rng.gen_bool(0.3) {
                    let weight = rng.gen_range(0.01..0.99);
                    rules.push(SizeRule {
                        subject: names[s].clone(),
                        relation: if rank[s] < rank[o] { Relation::IsSmallerThan } else { Relation::IsBiggerThan },
                        object: names[o].clone(),
                        weight,
                        initial_llm_weight: weight,
                    });
                }
            }
        }
        let kg = KnowledgeGraph::new(names.clone(), rules).map_err(|e| e.to_string())?;
        let parsed: KnowledgeGraph<f64> = parse_knowledge_graph(&kg.to_json_string()).map_err(|e| e.to_string())?;
        let dataset: Vec<DetectionSet<f64>> = (0..4).map(|_| random_detection_set(&mut rng, 12, names.len())).collect();
        let alpha = rng.gen_range(0.0..=1.0);
        let (updated, _) = run_hwad_update_cycle(&parsed, &vocab, &dataset, alpha).map_err(|e| e.to_string())?;
        persist_knowledge_graph(&updated, &path).map_err(|e| e.to_string())?;
        let text = fs::read_to_string(&path).map_err(|e| e.to_string())?;
        let back: KnowledgeGraph<f64> = parse_knowledge_graph(&text).map_err(|e| e.to_string())?;
        check(back == updated, || format!("cycle {cycle}: reload differs"))?;
        for (before, after) in kg.rules().iter().zip(back.rules()) {
            check(after.weight.in_unit_interval(), || format!("cycle {cycle}: weight {}", after.weight))?;
            check(after.initial_llm_weight == before.initial_llm_weight, || {
                format!("cycle {cycle}: initial weight moved")
            })?;
        }
    }
    Ok("100 cycles".into())
}

fn runs_are_deterministic() -> Outcome {
    let dir = TempDir::new().map_err(|e| e.to_string())?;
    let spec = ScenarioSpec { images: 24, ..Default::default() };
    write_scenario(dir.path(), &gen_scenario(&spec)).map_err(|e| e.to_string())?;
    let mut cfg = PipelineConfig::load(&dir.path().join(CONFIG_FILE)).map_err(|e| e.to_string())?;
    cfg.layers.push(Layer::ShapeGate);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    run_pipeline(&cfg, &a).map_err(|e| e.to_string())?;
    run_pipeline(&cfg, &b).map_err(|e| e.to_string())?;
    for name in [REFINED_FILE, REPORT_JSON_FILE, REPORT_TEXT_FILE, KNOWLEDGE_FILE] {
        let same = fs::read(a.join(name)).map_err(|e| e.to_string())? == fs::read(b.join(name)).map_err(|e| e.to_string())?;
        check(same, || format!("{name} differs between runs"))?;
    }
    Ok("4 output files identical".into())
}

fn reduction_discrepancy_shown() -> Outcome {
    let text = box_reduction_report(598, 451).map_err(|e| e.to_string())?.render();
    check(text.contains("24.58%") && text.contains("37.88%"), || format!("render was: {text}"))?;
    Ok("24.58% computed beside 37.88% published".into())
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("redundancy equals oracle", redundancy_matches_oracle),
        ("overlap fraction equals raster oracle", overlap_matches_raster),
        ("hwad hand values", hwad_hand_values),
        ("shape confidence curve", shape_confidence_curve),
        ("cawal threshold boundary", cawal_threshold_boundary),
        ("scenario redundancy and FP counts", scenario_recovered),
        ("mAP equals oracle", map_matches_oracle),
        ("knowledge round trip", knowledge_round_trip),
        ("byte-identical runs", runs_are_deterministic),
        ("box reduction discrepancy", reduction_discrepancy_shown),
    ];
    let mut failed = 0;
    for (n, (name, run)) in criteria.iter().enumerate() {
        match run() {
            Ok(detail) => println!("PASS {:>2} {name}: {detail}", n + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {why}", n + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
