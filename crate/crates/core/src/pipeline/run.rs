use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use log::{debug, info, warn};
use serde::Serialize;

use crate::cawal::{apply_bindings, context_fraction, SceneLabelMap};
use crate::detection::{DetectionSet, Vocabulary};
use crate::error::{Error, Result};
use crate::evalmetrics::{compare, EvalComparison, GroundTruthSet};
use crate::hwad::{apply_hwad, run_hwad_update_cycle, RuleStats};
use crate::knowledge::graph::write_atomic;
use crate::knowledge::{parse_knowledge_graph, parse_shape_knowledge, KnowledgeGraph, ShapeKnowledge};
use crate::redundancy::{apply_rule, RedundancyRule};
use crate::shapeconf::{apply_shape_gate, GateOutcome, ShapeCounts};

use super::config::{InputPaths, Layer, PipelineConfig, ResolvedConfig};
use super::io;

pub const REFINED_FILE: &str = "refined_detections.json";
pub const REPORT_JSON_FILE: &str = "report.json";
pub const REPORT_TEXT_FILE: &str = "report.txt";
pub const KNOWLEDGE_FILE: &str = "knowledge_updated.json";

const BUNDLED_SHAPES: &str = include_str!("../../fixtures/shape-counts-v1.json");

/// Everything a run reads, already parsed.
#[derive(Debug, Clone)]
pub struct PipelineInputs {
    pub detections: Vec<DetectionSet<f64>>,
    pub ground_truth: Option<Vec<GroundTruthSet<f64>>>,
    pub scenes: BTreeMap<String, SceneLabelMap>,
    pub knowledge: Option<KnowledgeGraph<f64>>,
    pub shape_counts: BTreeMap<(String, u64), ShapeCounts>,
    pub shape_knowledge: ShapeKnowledge,
}

fn missing(what: &str, layer: Layer) -> Error {
    Error::Config(format!("layer '{layer}' is enabled but no {what} file was given"))
}

impl PipelineInputs {
    /// Loads the files the enabled layers need. Ground truth is optional;
    /// without it the report has no evaluation section.
    pub fn load(paths: &InputPaths, cfg: &ResolvedConfig) -> Result<Self> {
        let det_path = paths
            .detections
            .as_deref()
            .ok_or_else(|| Error::Config("no detections file was given".into()))?;
        let detections = io::load_detections(det_path, &cfg.vocab)?;
        let ground_truth = paths
            .ground_truth
            .as_deref()
            .map(|p| io::load_ground_truth(p, &cfg.vocab))
            .transpose()?;
        let scenes = match &paths.scenes {
            Some(p) => io::load_scenes(p)?,
            None if cfg.has(Layer::Cawal) => return Err(missing("scene map", Layer::Cawal)),
            None => BTreeMap::new(),
        };
        let knowledge = match &paths.knowledge {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                Some(parse_knowledge_graph(&text)?)
            }
            None if cfg.has(Layer::Hwad) => return Err(missing("knowledge graph", Layer::Hwad)),
            None => None,
        };
        let shape_counts = match &paths.shape_counts {
            Some(p) => io::load_shape_counts(p, &detections)?,
            None if cfg.has(Layer::ShapeGate) => return Err(missing("shape counts", Layer::ShapeGate)),
            None => BTreeMap::new(),
        };
        let shape_knowledge = match &paths.shape_knowledge {
            Some(p) => parse_shape_knowledge(&std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?)?,
            None => parse_shape_knowledge(BUNDLED_SHAPES)?,
        };
        Ok(Self {
            detections,
            ground_truth,
            scenes,
            knowledge,
            shape_counts,
            shape_knowledge,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageRecord {
    pub layer: Layer,
    pub boxes_before: usize,
    pub boxes_after: usize,
    pub removed: usize,
    pub scores_increased: usize,
    pub scores_decreased: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContextRecord {
    pub image_id: String,
    pub binding: usize,
    pub fraction: f64,
    pub fired: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RuleUpdateRecord {
    pub subject: String,
    pub relation: &'static str,
    pub object: String,
    pub stats: RuleStats,
    pub prior: f64,
    pub posterior: Option<f64>,
    pub weight: f64,
    pub initial_llm_weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GateRecord {
    pub image_id: String,
    pub id: u64,
    pub label: String,
    pub error_sum: f64,
    pub confidence: f64,
    pub kept: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipelineReport {
    pub seed: u64,
    pub layers: Vec<Layer>,
    pub input_boxes: usize,
    pub output_boxes: usize,
    pub stages: Vec<StageRecord>,
    pub images_without_scene: Vec<String>,
    pub context: Vec<ContextRecord>,
    pub knowledge_updates: Vec<RuleUpdateRecord>,
    pub shape_gate: Vec<GateRecord>,
    pub evaluation: Option<EvalComparison<f64>>,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub refined: Vec<DetectionSet<f64>>,
    pub report: PipelineReport,
    /// The graph after the update cycle, when the size layer ran.
    pub knowledge: Option<KnowledgeGraph<f64>>,
}

fn box_count(sets: &[DetectionSet<f64>]) -> usize {
    sets.iter().map(DetectionSet::len).sum()
}

fn stage_record(layer: Layer, before: &[DetectionSet<f64>], after: &[DetectionSet<f64>]) -> StageRecord {
    let old: BTreeMap<(&str, u64), f64> = before
        .iter()
        .flat_map(|ds| ds.detections.iter().map(move |d| ((ds.image_id.as_str(), d.id), d.score)))
        .collect();
    let (mut up, mut down) = (0, 0);
    for ds in after {
        for d in &ds.detections {
            if let Some(&s) = old.get(&(ds.image_id.as_str(), d.id)) {
                if d.score > s {
                    up += 1;
                } else if d.score < s {
                    down += 1;
                }
            }
        }
    }
    let (b, a) = (box_count(before), box_count(after));
    StageRecord {
        layer,
        boxes_before: b,
        boxes_after: a,
        removed: b - a,
        scores_increased: up,
        scores_decreased: down,
    }
}

/// Runs the enabled layers in order. Each layer sees the whole dataset as
/// left by the previous one.
pub fn run_layers(cfg: &ResolvedConfig, inputs: &PipelineInputs) -> Result<PipelineOutput> {
    let mut current = inputs.detections.clone();
    let mut stages = Vec::new();
    let mut images_without_scene = Vec::new();
    let mut context = Vec::new();
    let mut knowledge_updates = Vec::new();
    let mut shape_gate = Vec::new();
    let mut knowledge = None;

    for &layer in &cfg.layers {
        let next: Vec<DetectionSet<f64>> = match layer {
            Layer::Containment => current
                .iter()
                .map(|ds| apply_rule(ds, RedundancyRule::Containment))
                .collect::<Result<_>>()?,
            Layer::Overlap => current
                .iter()
                .map(|ds| apply_rule(ds, RedundancyRule::Overlap(cfg.rf)))
                .collect::<Result<_>>()?,
            Layer::Cawal => {
                let mut out = Vec::with_capacity(current.len());
                for ds in &current {
                    let Some(scene) = inputs.scenes.get(&ds.image_id) else {
                        warn!("no scene map for image '{}'; context layer skipped", ds.image_id);
                        images_without_scene.push(ds.image_id.clone());
                        out.push(ds.clone());
                        continue;
                    };
                    for (i, b) in cfg.bindings.iter().enumerate() {
                        let fraction: f64 = context_fraction(scene, b.context_labels())?;
                        context.push(ContextRecord {
                            image_id: ds.image_id.clone(),
                            binding: i,
                            fraction,
                            fired: fraction > b.threshold(),
                        });
                    }
                    out.push(apply_bindings(ds, scene, &cfg.bindings)?);
                }
                out
            }
            Layer::Hwad => {
                let kg = inputs
                    .knowledge
                    .as_ref()
                    .ok_or_else(|| Error::Config("size layer needs a knowledge graph".into()))?;
                let kg = if cfg.update_knowledge {
                    let (updated, log) = run_hwad_update_cycle(kg, &cfg.vocab, &current, cfg.hwad_alpha)?;
                    for u in log {
                        let rule = &updated.rules()[u.rule_index];
                        debug!(
                            "rule {} {} {}: prior {} -> weight {}",
                            rule.subject,
                            rule.relation.as_str(),
                            rule.object,
                            u.prior,
                            u.weight
                        );
                        knowledge_updates.push(RuleUpdateRecord {
                            subject: rule.subject.clone(),
                            relation: rule.relation.as_str(),
                            object: rule.object.clone(),
                            stats: u.stats,
                            prior: u.prior,
                            posterior: u.posterior,
                            weight: u.weight,
                            initial_llm_weight: rule.initial_llm_weight,
                        });
                    }
                    updated
                } else {
                    kg.clone()
                };
                let out = current
                    .iter()
                    .map(|ds| apply_hwad(ds, &kg, &cfg.vocab, cfg.hwad_gamma))
                    .collect::<Result<_>>()?;
                knowledge = Some(kg);
                out
            }
            Layer::ShapeGate => {
                let mut out = Vec::with_capacity(current.len());
                for ds in &current {
                    let mut kept = Vec::with_capacity(ds.len());
                    for d in &ds.detections {
                        let Some(counts) = inputs.shape_counts.get(&(ds.image_id.clone(), d.id)) else {
                            kept.push(d.clone());
                            continue;
                        };
                        let dec = apply_shape_gate(d, counts, &inputs.shape_knowledge, &cfg.vocab, &cfg.gate)?;
                        shape_gate.push(GateRecord {
                            image_id: ds.image_id.clone(),
                            id: d.id,
                            label: cfg.vocab.name(d.label).to_string(),
                            error_sum: dec.error_sum,
                            confidence: dec.confidence,
                            kept: matches!(dec.outcome, GateOutcome::Keep(_)),
                        });
                        if let GateOutcome::Keep(d) = dec.outcome {
                            kept.push(d);
                        }
                    }
                    out.push(DetectionSet::new(ds.image_id.clone(), kept));
                }
                out
            }
        };
        let record = stage_record(layer, &current, &next);
        info!(
            "{}: {} -> {} boxes, {} scores up, {} down",
            layer, record.boxes_before, record.boxes_after, record.scores_increased, record.scores_decreased
        );
        stages.push(record);
        current = next;
    }

    let evaluation = inputs
        .ground_truth
        .as_ref()
        .map(|gts| {
            compare(
                &inputs.detections,
                &current,
                gts,
                &cfg.vocab,
                &cfg.groups,
                cfg.fp_score_threshold,
            )
        })
        .transpose()?;

    Ok(PipelineOutput {
        report: PipelineReport {
            seed: cfg.seed,
            layers: cfg.layers.clone(),
            input_boxes: box_count(&inputs.detections),
            output_boxes: box_count(&current),
            stages,
            images_without_scene,
            context,
            knowledge_updates,
            shape_gate,
            evaluation,
        },
        refined: current,
        knowledge,
    })
}

impl PipelineReport {
    pub fn to_json(&self) -> String {
        io::to_pretty_json(self)
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let layers: Vec<&str> = self.layers.iter().map(|l| l.as_str()).collect();
        let _ = writeln!(s, "Refinement run (seed {})", self.seed);
        let _ = writeln!(s, "Layers: {}", if layers.is_empty() { "none".into() } else { layers.join(" -> ") });
        let _ = writeln!(s, "Boxes: {} in, {} out", self.input_boxes, self.output_boxes);
        let _ = writeln!(s);
        let _ = writeln!(s, "Stages");
        let _ = writeln!(
            s,
            "  {:<12} {:>8} {:>8} {:>8} {:>10} {:>10}",
            "layer", "before", "after", "removed", "score up", "score down"
        );
        for r in &self.stages {
            let _ = writeln!(
                s,
                "  {:<12} {:>8} {:>8} {:>8} {:>10} {:>10}",
                r.layer.as_str(),
                r.boxes_before,
                r.boxes_after,
                r.removed,
                r.scores_increased,
                r.scores_decreased
            );
        }
        if !self.images_without_scene.is_empty() {
            let _ = writeln!(s, "  images without a scene map: {}", self.images_without_scene.len());
        }
        if !self.knowledge_updates.is_empty() {
            let _ = writeln!(s);
            let _ = writeln!(s, "Size rules");
            let _ = writeln!(
                s,
                "  {:<34} {:>5} {:>5} {:>5} {:>8} {:>9} {:>8}",
                "rule", "obj", "sat", "viol", "prior", "posterior", "weight"
            );
            for u in &self.knowledge_updates {
                let posterior = u.posterior.map_or("-".to_string(), |p| format!("{p:.4}"));
                let _ = writeln!(
                    s,
                    "  {:<34} {:>5} {:>5} {:>5} {:>8.4} {:>9} {:>8.4}",
                    format!("{} {} {}", u.subject, u.relation, u.object),
                    u.stats.c_obj,
                    u.stats.c_sat,
                    u.stats.c_not_sat,
                    u.prior,
                    posterior,
                    u.weight
                );
            }
        }
        if !self.shape_gate.is_empty() {
            let kept = self.shape_gate.iter().filter(|g| g.kept).count();
            let _ = writeln!(s);
            let _ = writeln!(
                s,
                "Shape gate: {} checked, {} kept, {} removed",
                self.shape_gate.len(),
                kept,
                self.shape_gate.len() - kept
            );
        }
        if let Some(eval) = &self.evaluation {
            let _ = writeln!(s);
            s.push_str(&eval.render());
        }
        s
    }
}

/// Writes the refined detections, both report forms and the updated graph.
/// All file contents are built before the first write; each file is
/// replaced atomically.
pub fn write_outputs(out_dir: &Path, output: &PipelineOutput, vocab: &Vocabulary) -> Result<()> {
    let mut files = vec![
        (REFINED_FILE, io::detections_to_json(&output.refined, vocab)),
        (REPORT_JSON_FILE, output.report.to_json()),
        (REPORT_TEXT_FILE, output.report.render()),
    ];
    if let Some(kg) = &output.knowledge {
        files.push((KNOWLEDGE_FILE, kg.to_json_string()));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    for (name, text) in files {
        write_atomic(&out_dir.join(name), text.as_bytes())?;
    }
    Ok(())
}

/// Resolves `cfg`, loads its inputs, runs and writes into `out_dir`.
pub fn run_pipeline(cfg: &PipelineConfig, out_dir: &Path) -> Result<PipelineOutput> {
    let resolved = cfg.resolve()?;
    let inputs = PipelineInputs::load(&cfg.inputs, &resolved)?;
    let output = run_layers(&resolved, &inputs)?;
    write_outputs(out_dir, &output, &resolved.vocab)?;
    Ok(output)
}
