//! Seeded synthetic data.
//!
//! A scenario is a set of images laid out on a 4 x 3 cell grid, one object
//! per cell, with class sizes that never overlap between classes (bicycle <
//! motorcycle < car < truck < bus, boats large). Around the true detections
//! it plants three kinds of false positive whose fate is known in advance:
//! boxes nested inside a true detection, shifted copies overlapping one,
//! and low-scoring boxes of a class that does not fit the scene. The
//! [`Manifest`] records what was planted.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cawal::SceneLabelMap;
use crate::detection::{ClassId, Detection, DetectionSet, Vocabulary};
use crate::error::Result;
use crate::evalmetrics::{GroundTruth, GroundTruthSet};
use crate::geometry::BBox;
use crate::knowledge::graph::write_atomic;
use crate::knowledge::{parse_shape_knowledge, ShapeKnowledge};
use crate::pipeline::config::{BindingSection, InputPaths, PipelineConfig};
use crate::pipeline::io::{self, ShapeCountsEntry, ShapeCountsImage};
use crate::scalar::Scalar;
use crate::shapeconf::ShapeCounts;

const IMAGE_W: f64 = 640.0;
const IMAGE_H: f64 = 480.0;
const CELL_COLS: usize = 4;
const CELL_ROWS: usize = 3;
const MARGIN: f64 = 12.0;
const JITTER: f64 = 1.5;
const CONTEXT_THRESHOLD: f64 = 0.30;

/// Score threshold the scenario config uses for false-positive counts.
pub const SCENARIO_FP_THRESHOLD: f64 = 0.55;

#[derive(Debug, Clone, Copy)]
pub struct ClassProfile {
    pub class: &'static str,
    pub width: (f64, f64),
    pub height: (f64, f64),
    pub water: bool,
}

pub const CLASS_PROFILES: [ClassProfile; 6] = [
    ClassProfile { class: "bicycle", width: (18.0, 26.0), height: (18.0, 26.0), water: false },
    ClassProfile { class: "motorcycle", width: (28.0, 36.0), height: (28.0, 36.0), water: false },
    ClassProfile { class: "car", width: (40.0, 55.0), height: (40.0, 55.0), water: false },
    ClassProfile { class: "bus", width: (90.0, 110.0), height: (60.0, 80.0), water: false },
    ClassProfile { class: "truck", width: (70.0, 85.0), height: (60.0, 75.0), water: false },
    ClassProfile { class: "boat", width: (60.0, 100.0), height: (40.0, 70.0), water: true },
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioSpec {
    pub seed: u64,
    pub images: usize,
    /// Inclusive range of true objects per image, at most 8.
    pub objects_per_image: (usize, usize),
    /// Chance that an image gets a box nested inside one of its objects.
    pub nesting_probability: f64,
    /// Chance that an image gets a shifted copy overlapping one object.
    pub overlap_probability: f64,
    /// Chance that an image gets a box of a class foreign to its scene.
    pub context_fp_probability: f64,
    pub water_scene_probability: f64,
    /// Share of scene cells carrying the scene's own context labels.
    pub context_mix: f64,
    /// Scene map side length in cells.
    pub grid: usize,
    /// Chance that a land object gets a shape-count entry.
    pub shape_count_probability: f64,
    /// Chance that a shape-count entry falls outside the expected ranges.
    pub shape_mismatch_probability: f64,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self {
            seed: 7,
            images: 40,
            objects_per_image: (2, 5),
            nesting_probability: 0.5,
            overlap_probability: 0.5,
            context_fp_probability: 0.5,
            water_scene_probability: 0.3,
            context_mix: 0.8,
            grid: 10,
            shape_count_probability: 0.5,
            shape_mismatch_probability: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PlantedRef {
    pub image_id: String,
    pub id: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageManifest {
    pub image_id: String,
    pub scene: String,
    pub water_fraction: f64,
    pub land_fraction: f64,
    pub objects: usize,
    pub nested: usize,
    pub overlapping: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub context_fp: Option<String>,
}

/// What a scenario contains. Expected false-positive counts assume
/// [`scenario_config`] and [`SCENARIO_FP_THRESHOLD`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub spec: ScenarioSpec,
    pub ground_truth_boxes: usize,
    pub detections: usize,
    pub planted_nested: usize,
    pub planted_overlapping: usize,
    /// Boxes the two redundancy stages must remove.
    pub redundant_total: usize,
    pub context_fps: BTreeMap<String, usize>,
    pub expected_fp_baseline: BTreeMap<String, usize>,
    pub expected_fp_refined: BTreeMap<String, usize>,
    pub shape_entries: usize,
    pub shape_mismatches: Vec<PlantedRef>,
    pub per_image: Vec<ImageManifest>,
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub vocab: Vocabulary,
    pub detections: Vec<DetectionSet<f64>>,
    pub ground_truth: Vec<GroundTruthSet<f64>>,
    pub scenes: Vec<SceneLabelMap>,
    pub shape_counts: Vec<ShapeCountsImage>,
    pub manifest: Manifest,
}

fn round2(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

fn rounded(b: [f64; 4]) -> BBox<f64> {
    BBox::new(round2(b[0]), round2(b[1]), round2(b[2]), round2(b[3]))
}

/// Logits with `own_logit` at `class` and small negatives elsewhere; the
/// score is the sigmoid of the own logit.
fn scored(rng: &mut ChaCha8Rng, id: u64, bbox: BBox<f64>, class: ClassId, own_logit: f64, n: usize) -> Detection<f64> {
    let logits: Vec<f64> = (0..n)
        .map(|k| if k == class.0 { own_logit } else { round2(rng.gen_range(-3.0..-1.0)) })
        .collect();
    Detection::new(id, bbox, class, own_logit.sigmoid()).with_logits(logits)
}

fn place(rng: &mut ChaCha8Rng, cell: usize, p: &ClassProfile) -> [f64; 4] {
    let (cw, ch) = (IMAGE_W / CELL_COLS as f64, IMAGE_H / CELL_ROWS as f64);
    let (cx, cy) = ((cell % CELL_COLS) as f64 * cw, (cell / CELL_COLS) as f64 * ch);
    let w = rng.gen_range(p.width.0..=p.width.1);
    let h = rng.gen_range(p.height.0..=p.height.1);
    // Room for jitter and for a shifted copy reaching 1.1 widths.
    let x_span = cw - 2.0 * MARGIN - 1.1 * w - JITTER;
    let y_span = ch - 2.0 * MARGIN - h - JITTER;
    let x = cx + MARGIN + JITTER + rng.gen_range(0.0..=x_span.max(0.0));
    let y = cy + MARGIN + JITTER + rng.gen_range(0.0..=y_span.max(0.0));
    [x, y, x + w, y + h]
}

fn jittered(rng: &mut ChaCha8Rng, b: [f64; 4]) -> [f64; 4] {
    b.map(|v| v + rng.gen_range(-JITTER..=JITTER))
}

fn scene_map(rng: &mut ChaCha8Rng, image_id: &str, water_scene: bool, mix: f64, side: usize) -> SceneLabelMap {
    const WATER: u32 = 0;
    const LAND: u32 = 1;
    const ROAD: u32 = 2;
    let total = side * side;
    let own = ((mix * total as f64).round() as usize).min(total);
    let mut cells: Vec<u32> = Vec::with_capacity(total);
    for k in 0..total {
        let in_context = k < own;
        cells.push(match (water_scene, in_context) {
            (true, true) | (false, false) => WATER,
            _ if rng.gen_bool(0.3) => ROAD,
            _ => LAND,
        });
    }
    cells.shuffle(rng);
    let legend = BTreeMap::from([(WATER, "water".to_string()), (LAND, "land".to_string()), (ROAD, "road".to_string())]);
    let grid = cells.chunks(side).map(<[u32]>::to_vec).collect();
    SceneLabelMap::new(image_id, legend, grid).expect("legend covers grid")
}

fn shape_counts_for(
    rng: &mut ChaCha8Rng,
    class: &str,
    sk: &ShapeKnowledge,
    mismatch: bool,
) -> Option<ShapeCounts> {
    let row = sk.row(class)?;
    let mut counts = BTreeMap::new();
    for (shape, range) in row {
        counts.insert(*shape, rng.gen_range(range.lo..=range.hi));
    }
    if mismatch {
        let shapes: Vec<_> = row.keys().copied().collect();
        let s = *shapes.choose(rng)?;
        counts.insert(s, row[&s].hi + rng.gen_range(1..=2));
    }
    Some(ShapeCounts(counts))
}

/// Builds a scenario. The same spec always yields the same scenario.
pub fn gen_scenario(spec: &ScenarioSpec) -> Scenario {
    let vocab = Vocabulary::default_vehicles();
    let n = vocab.len();
    let sk = parse_shape_knowledge(include_str!("../../fixtures/shape-counts-v1.json")).expect("bundled table");
    let profile = |c: ClassId| CLASS_PROFILES.iter().find(|p| p.class == vocab.name(c)).expect("profile");
    let land: Vec<ClassId> = CLASS_PROFILES.iter().filter(|p| !p.water).map(|p| vocab.id(p.class).unwrap()).collect();
    let boat = vocab.id("boat").unwrap();
    let group = |c: ClassId| if profile(c).water { "water" } else { "land" };

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (lo, hi) = spec.objects_per_image;
    let (lo, hi) = (lo.clamp(1, 8), hi.clamp(1, 8).max(lo.clamp(1, 8)));

    let mut next_id = 0u64;
    let mut detections = Vec::new();
    let mut ground_truth = Vec::new();
    let mut scenes = Vec::new();
    let mut shape_counts = Vec::new();
    let mut per_image = Vec::new();
    let mut context_fps: BTreeMap<String, usize> = ["land", "water"].map(|g| (g.to_string(), 0)).into();
    let mut expected_fp_baseline = context_fps.clone();
    let mut expected_fp_refined = context_fps.clone();
    let (mut planted_nested, mut planted_overlapping, mut shape_entries) = (0, 0, 0);
    let mut shape_mismatches = Vec::new();

    for img in 0..spec.images {
        let image_id = format!("img_{img:04}");
        let water_scene = rng.gen_bool(spec.water_scene_probability.clamp(0.0, 1.0));
        let mut cells: Vec<usize> = (0..CELL_COLS * CELL_ROWS).collect();
        cells.shuffle(&mut rng);
        let count = rng.gen_range(lo..=hi);

        // (detection, shape counts entry)
        let mut dets: Vec<(Detection<f64>, Option<ShapeCounts>, bool)> = Vec::new();
        let mut gts = Vec::new();
        let mut objects: Vec<[f64; 4]> = Vec::new();
        let mut object_classes = Vec::new();
        for k in 0..count {
            let class = if water_scene { boat } else { *land.choose(&mut rng).unwrap() };
            let truth = place(&mut rng, cells[k], profile(class));
            gts.push(GroundTruth { bbox: rounded(truth), label: class });
            let pred = rounded(jittered(&mut rng, truth)).to_array();
            let own = round2(rng.gen_range(2.0..4.0));
            let det = scored(&mut rng, 0, BBox::from_array(pred), class, own, n);
            let (counts, mismatch) = if !profile(class).water && rng.gen_bool(spec.shape_count_probability.clamp(0.0, 1.0)) {
                let mismatch = rng.gen_bool(spec.shape_mismatch_probability.clamp(0.0, 1.0));
                (shape_counts_for(&mut rng, vocab.name(class), &sk, mismatch), mismatch)
            } else {
                (None, false)
            };
            dets.push((det, counts, mismatch));
            objects.push(pred);
            object_classes.push(class);
        }

        let mut nested = 0;
        if rng.gen_bool(spec.nesting_probability.clamp(0.0, 1.0)) {
            let host = rng.gen_range(0..count);
            let b = objects[host];
            let (w, h) = (b[2] - b[0], b[3] - b[1]);
            let inset = |rng: &mut ChaCha8Rng, span: f64| round2(span * rng.gen_range(0.15..0.30));
            let inner = [
                b[0] + inset(&mut rng, w),
                b[1] + inset(&mut rng, h),
                b[2] - inset(&mut rng, w),
                b[3] - inset(&mut rng, h),
            ];
            let own = round2(rng.gen_range(1.0..1.5));
            let class = object_classes[host];
            dets.push((scored(&mut rng, 0, BBox::from_array(inner.map(round2)), class, own, n), None, false));
            nested = 1;
            *expected_fp_baseline.get_mut(group(class)).unwrap() += 1;
        }

        let mut overlapping = 0;
        if rng.gen_bool(spec.overlap_probability.clamp(0.0, 1.0)) {
            let host = rng.gen_range(0..count);
            let b = objects[host];
            let (w, h) = (b[2] - b[0], b[3] - b[1]);
            let x = b[0] + 0.2 * w;
            let y = b[1] + 0.05 * h;
            let copy = [x, y, x + 0.9 * w, y + 0.9 * h];
            let own = round2(rng.gen_range(1.0..1.5));
            let class = object_classes[host];
            dets.push((scored(&mut rng, 0, rounded(copy), class, own, n), None, false));
            overlapping = 1;
            *expected_fp_baseline.get_mut(group(class)).unwrap() += 1;
        }

        let mut context_fp = None;
        if count < cells.len() && rng.gen_bool(spec.context_fp_probability.clamp(0.0, 1.0)) {
            let class = if water_scene { *land.choose(&mut rng).unwrap() } else { boat };
            let b = rounded(place(&mut rng, cells[count], profile(class)));
            let own = round2(rng.gen_range(0.25..=0.30));
            dets.push((scored(&mut rng, 0, b, class, own, n), None, false));
            let g = group(class);
            *context_fps.get_mut(g).unwrap() += 1;
            *expected_fp_baseline.get_mut(g).unwrap() += 1;
            context_fp = Some((vocab.name(class).to_string(), g));
        }

        dets.shuffle(&mut rng);
        let mut entries = Vec::new();
        let mut set = Vec::with_capacity(dets.len());
        for (index, (mut d, counts, mismatch)) in dets.into_iter().enumerate() {
            d.id = next_id;
            next_id += 1;
            if let Some(counts) = counts {
                shape_entries += 1;
                if mismatch {
                    shape_mismatches.push(PlantedRef { image_id: image_id.clone(), id: d.id });
                }
                entries.push(ShapeCountsEntry { index, counts });
            }
            set.push(d);
        }
        if !entries.is_empty() {
            shape_counts.push(ShapeCountsImage { image_id: image_id.clone(), per_detection: entries });
        }

        let scene = scene_map(&mut rng, &image_id, water_scene, spec.context_mix, spec.grid.max(1));
        let total = scene.total_labels() as f64;
        let share = |name: &str| {
            scene.labels.iter().flatten().filter(|id| scene.legend[id] == name).count() as f64 / total
        };
        let water_fraction = share("water");
        let land_fraction = share("land") + share("road");
        // The foreign-class box is damped only when the scene's own binding
        // fires; otherwise it stays a false positive.
        if let Some((_, g)) = &context_fp {
            let own_share = if water_scene { water_fraction } else { land_fraction };
            if !(own_share > CONTEXT_THRESHOLD) {
                *expected_fp_refined.get_mut(*g).unwrap() += 1;
            }
        }
        per_image.push(ImageManifest {
            image_id: image_id.clone(),
            scene: if water_scene { "water" } else { "land" }.to_string(),
            water_fraction,
            land_fraction,
            objects: count,
            nested,
            overlapping,
            context_fp: context_fp.map(|(c, _)| c),
        });
        planted_nested += nested;
        planted_overlapping += overlapping;
        detections.push(DetectionSet::new(image_id.clone(), set));
        ground_truth.push(GroundTruthSet::new(image_id, gts));
        scenes.push(scene);
    }

    let manifest = Manifest {
        spec: spec.clone(),
        ground_truth_boxes: ground_truth.iter().map(|g| g.annotations.len()).sum(),
        detections: detections.iter().map(DetectionSet::len).sum(),
        planted_nested,
        planted_overlapping,
        redundant_total: planted_nested + planted_overlapping,
        context_fps,
        expected_fp_baseline,
        expected_fp_refined,
        shape_entries,
        shape_mismatches,
        per_image,
    };
    Scenario {
        vocab,
        detections,
        ground_truth,
        scenes,
        shape_counts,
        manifest,
    }
}

pub const DETECTIONS_FILE: &str = "detections.json";
pub const GROUND_TRUTH_FILE: &str = "ground_truth.json";
pub const SCENES_FILE: &str = "scenes.json";
pub const SHAPE_COUNTS_FILE: &str = "shape_counts.json";
pub const KNOWLEDGE_FILE: &str = "knowledge.json";
pub const CONFIG_FILE: &str = "config.toml";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Pipeline configuration matching a generated scenario: the default layers,
/// context bindings that also damp the classes foreign to each scene, and
/// the scenario false-positive threshold. Input paths are relative to the
/// scenario directory.
pub fn scenario_config(spec: &ScenarioSpec) -> PipelineConfig {
    let land: Vec<String> = CLASS_PROFILES.iter().filter(|p| !p.water).map(|p| p.class.to_string()).collect();
    let water = vec!["boat".to_string()];
    let mut cfg = PipelineConfig {
        seed: spec.seed,
        ..Default::default()
    };
    cfg.cawal.bindings = vec![
        BindingSection {
            context_labels: vec!["water".into()],
            boosted_classes: water.clone(),
            adjust_percent: 10.0,
            attenuated_classes: land.clone(),
            attenuate_percent: 50.0,
        },
        BindingSection {
            context_labels: vec!["land".into(), "road".into()],
            boosted_classes: land,
            adjust_percent: 10.0,
            attenuated_classes: water,
            attenuate_percent: 50.0,
        },
    ];
    cfg.eval.fp_score_threshold = SCENARIO_FP_THRESHOLD;
    cfg.inputs = InputPaths {
        detections: Some(DETECTIONS_FILE.into()),
        ground_truth: Some(GROUND_TRUTH_FILE.into()),
        scenes: Some(SCENES_FILE.into()),
        knowledge: Some(KNOWLEDGE_FILE.into()),
        shape_counts: Some(SHAPE_COUNTS_FILE.into()),
        shape_knowledge: None,
    };
    cfg
}

/// Writes every scenario file, the bundled size graph and a matching
/// config into `dir`.
pub fn write_scenario(dir: &Path, scenario: &Scenario) -> Result<()> {
    let files = [
        (DETECTIONS_FILE, io::detections_to_json(&scenario.detections, &scenario.vocab)),
        (GROUND_TRUTH_FILE, io::ground_truth_to_json(&scenario.ground_truth, &scenario.vocab)),
        (SCENES_FILE, io::scenes_to_json(&scenario.scenes)),
        (SHAPE_COUNTS_FILE, io::shape_counts_to_json(&scenario.shape_counts)),
        (KNOWLEDGE_FILE, include_str!("../../fixtures/size-graph-v1.json").to_string()),
        (CONFIG_FILE, scenario_config(&scenario.manifest.spec).to_toml()),
        (MANIFEST_FILE, io::to_pretty_json(&scenario.manifest)),
    ];
    std::fs::create_dir_all(dir).map_err(|e| crate::Error::io(dir, e))?;
    for (name, text) in files {
        write_atomic(&dir.join(name), text.as_bytes())?;
    }
    Ok(())
}

/// Random same-image detections on a small integer canvas, with repeated
/// boxes, nesting and tied scores common enough to exercise tie-breaks.
pub fn random_detection_set(rng: &mut impl Rng, max_boxes: usize, classes: usize) -> DetectionSet<f64> {
    let count = rng.gen_range(0..=max_boxes);
    let mut dets: Vec<Detection<f64>> = Vec::with_capacity(count);
    for id in 0..count as u64 {
        let label = ClassId(rng.gen_range(0..classes.max(1)));
        let score = rng.gen_range(1..=9) as f64 / 10.0;
        let bbox = match rng.gen_range(0..10) {
            0 if !dets.is_empty() => dets[rng.gen_range(0..dets.len())].bbox,
            1 if !dets.is_empty() => {
                let o = dets[rng.gen_range(0..dets.len())].bbox;
                let (w, h) = (o.width(), o.height());
                let dx = rng.gen_range(0.0..=w / 2.0).floor();
                let dy = rng.gen_range(0.0..=h / 2.0).floor();
                BBox::new(o.x1() + dx, o.y1() + dy, (o.x2() - dx).max(o.x1() + dx + 1.0), (o.y2() - dy).max(o.y1() + dy + 1.0))
            }
            _ => {
                let x = rng.gen_range(0..60) as f64;
                let y = rng.gen_range(0..60) as f64;
                BBox::new(x, y, x + rng.gen_range(1..30) as f64, y + rng.gen_range(1..30) as f64)
            }
        };
        dets.push(Detection::new(id, bbox, label, score));
    }
    DetectionSet::new("random", dets)
}

/// Small evaluation instance: a few images and classes, predictions near
/// some ground-truth boxes plus stray ones, distinct scores.
pub fn random_ap_instance(rng: &mut impl Rng) -> (Vec<DetectionSet<f64>>, Vec<GroundTruthSet<f64>>) {
    let images = rng.gen_range(1..=3);
    let classes = rng.gen_range(1..=3);
    let mut used_scores = BTreeSet::new();
    let mut fresh_score = |rng: &mut dyn rand::RngCore| loop {
        let s = rng.gen_range(1..10_000u32);
        if used_scores.insert(s) {
            return s as f64 / 10_000.0;
        }
    };
    let mut preds = Vec::new();
    let mut gts = Vec::new();
    let mut id = 0u64;
    for i in 0..images {
        let image_id = format!("im{i}");
        let mut annotations = Vec::new();
        let mut dets = Vec::new();
        for _ in 0..rng.gen_range(0..=4) {
            let label = ClassId(rng.gen_range(0..classes));
            let x = rng.gen_range(0..200) as f64;
            let y = rng.gen_range(0..200) as f64;
            let b = BBox::new(x, y, x + rng.gen_range(10..40) as f64, y + rng.gen_range(10..40) as f64);
            annotations.push(GroundTruth { bbox: b, label });
            for _ in 0..rng.gen_range(0..=2) {
                let shift = |rng: &mut dyn rand::RngCore, v: f64| v + rng.gen_range(-6..=6) as f64 + 0.25;
                let p = BBox::new(shift(rng, b.x1()), shift(rng, b.y1()), shift(rng, b.x2()), shift(rng, b.y2()));
                let label = if rng.gen_bool(0.85) { label } else { ClassId(rng.gen_range(0..classes)) };
                dets.push(Detection::new(id, p, label, fresh_score(rng)));
                id += 1;
            }
        }
        for _ in 0..rng.gen_range(0..=2) {
            let x = rng.gen_range(0..200) as f64 + 0.5;
            let y = rng.gen_range(0..200) as f64 + 0.5;
            let b = BBox::new(x, y, x + rng.gen_range(10..40) as f64, y + rng.gen_range(10..40) as f64);
            dets.push(Detection::new(id, b, ClassId(rng.gen_range(0..classes)), fresh_score(rng)));
            id += 1;
        }
        dets.shuffle(rng);
        preds.push(DetectionSet::new(image_id.clone(), dets));
        gts.push(GroundTruthSet::new(image_id, annotations));
    }
    (preds, gts)
}
