//! Pipeline configuration (TOML).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cawal::ContextBinding;
use crate::detection::{ClassId, Vocabulary};
use crate::error::{Error, Result};
use crate::evalmetrics::ClassGroups;
use crate::shapeconf::ShapeGateConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layer {
    Containment,
    Overlap,
    Cawal,
    Hwad,
    ShapeGate,
}

impl Layer {
    pub fn as_str(self) -> &'static str {
        match self {
            Layer::Containment => "containment",
            Layer::Overlap => "overlap",
            Layer::Cawal => "cawal",
            Layer::Hwad => "hwad",
            Layer::ShapeGate => "shape_gate",
        }
    }
}

impl fmt::Display for Layer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RedundancySection {
    pub rf: f64,
}

impl Default for RedundancySection {
    fn default() -> Self {
        Self { rf: 0.60 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BindingSection {
    pub context_labels: Vec<String>,
    pub boosted_classes: Vec<String>,
    pub adjust_percent: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub attenuated_classes: Vec<String>,
    #[serde(default)]
    pub attenuate_percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CawalSection {
    pub threshold: f64,
    pub bindings: Vec<BindingSection>,
}

impl Default for CawalSection {
    fn default() -> Self {
        Self {
            threshold: 0.30,
            bindings: vec![
                BindingSection {
                    context_labels: vec!["water".into()],
                    boosted_classes: vec!["boat".into()],
                    adjust_percent: 10.0,
                    attenuated_classes: Vec::new(),
                    attenuate_percent: 0.0,
                },
                BindingSection {
                    context_labels: vec!["land".into(), "road".into()],
                    boosted_classes: ["bicycle", "motorcycle", "car", "bus", "truck"].map(String::from).to_vec(),
                    adjust_percent: 10.0,
                    attenuated_classes: Vec::new(),
                    attenuate_percent: 0.0,
                },
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HwadSection {
    /// Blend factor between the LLM weight and the dataset posterior.
    pub alpha: f64,
    /// Logit step per unit of rule weight.
    pub gamma: f64,
    /// Run the dataset-level weight update before adjusting detections.
    pub update_knowledge: bool,
}

impl Default for HwadSection {
    fn default() -> Self {
        Self {
            alpha: 0.50,
            gamma: 0.10,
            update_knowledge: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ShapeGateSection {
    pub shape_alpha: f64,
    pub boost_percent: f64,
}

impl Default for ShapeGateSection {
    fn default() -> Self {
        Self {
            shape_alpha: 1.0,
            boost_percent: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// Predictions below this score are ignored when counting false positives.
    pub fp_score_threshold: f64,
    /// Class groups for false-positive tallies; empty means water/land.
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub groups: BTreeMap<String, Vec<String>>,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            fp_score_threshold: 0.5,
            groups: BTreeMap::new(),
        }
    }
}

/// Input files. Relative paths in a config file resolve against the
/// directory holding that file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InputPaths {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detections: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scenes: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub knowledge: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shape_counts: Option<PathBuf>,
    /// Defaults to the bundled shape table.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shape_knowledge: Option<PathBuf>,
}

impl InputPaths {
    fn rebase(&mut self, base: &Path) {
        for p in [
            &mut self.detections,
            &mut self.ground_truth,
            &mut self.scenes,
            &mut self.knowledge,
            &mut self.shape_counts,
            &mut self.shape_knowledge,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    /// Fills unset paths from `other`.
    pub fn or(mut self, other: InputPaths) -> Self {
        self.detections = self.detections.or(other.detections);
        self.ground_truth = self.ground_truth.or(other.ground_truth);
        self.scenes = self.scenes.or(other.scenes);
        self.knowledge = self.knowledge.or(other.knowledge);
        self.shape_counts = self.shape_counts.or(other.shape_counts);
        self.shape_knowledge = self.shape_knowledge.or(other.shape_knowledge);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub vocabulary: Vec<String>,
    /// Enabled layers, in execution order.
    pub layers: Vec<Layer>,
    pub redundancy: RedundancySection,
    pub cawal: CawalSection,
    pub hwad: HwadSection,
    pub shape_gate: ShapeGateSection,
    pub eval: EvalSection,
    pub inputs: InputPaths,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            vocabulary: Vocabulary::default_vehicles().names().to_vec(),
            layers: vec![Layer::Containment, Layer::Overlap, Layer::Cawal, Layer::Hwad],
            redundancy: RedundancySection::default(),
            cawal: CawalSection::default(),
            hwad: HwadSection::default(),
            shape_gate: ShapeGateSection::default(),
            eval: EvalSection::default(),
            inputs: InputPaths::default(),
            out_dir: None,
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.inputs.rebase(base);
        if let Some(out) = cfg.out_dir.as_mut() {
            if out.is_relative() {
                *out = base.join(&*out);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn resolve(&self) -> Result<ResolvedConfig> {
        let vocab = Vocabulary::new(self.vocabulary.iter().cloned())?;
        let mut seen = BTreeSet::new();
        for l in &self.layers {
            if !seen.insert(*l) {
                return Err(Error::Config(format!("layer '{l}' listed twice")));
            }
        }
        let rf = self.redundancy.rf;
        if !(0.0..=1.0).contains(&rf) {
            return Err(Error::Config(format!("redundancy rf {rf} outside [0, 1]")));
        }
        let classes = |names: &[String], what: &str| -> Result<BTreeSet<ClassId>> {
            names
                .iter()
                .map(|n| {
                    vocab
                        .id(n)
                        .ok_or_else(|| Error::Config(format!("{what} names unknown class '{n}'")))
                })
                .collect()
        };
        let bindings = self
            .cawal
            .bindings
            .iter()
            .enumerate()
            .map(|(i, b)| {
                let what = format!("cawal.bindings[{i}]");
                let binding = ContextBinding::new(
                    b.context_labels.iter().cloned().collect(),
                    classes(&b.boosted_classes, &what)?,
                    b.adjust_percent,
                    self.cawal.threshold,
                )?;
                if b.attenuated_classes.is_empty() {
                    Ok(binding)
                } else {
                    binding.with_attenuation(classes(&b.attenuated_classes, &what)?, b.attenuate_percent)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        if !(0.0..=1.0).contains(&self.hwad.alpha) {
            return Err(Error::Config(format!("hwad alpha {} outside [0, 1]", self.hwad.alpha)));
        }
        if !(self.hwad.gamma >= 0.0) {
            return Err(Error::Config(format!("hwad gamma {} is negative", self.hwad.gamma)));
        }
        let gate = ShapeGateConfig::new(self.shape_gate.shape_alpha, self.shape_gate.boost_percent)?;
        let groups = if self.eval.groups.is_empty() {
            ClassGroups::water_land(&vocab)?
        } else {
            let mut g = BTreeMap::new();
            for (name, members) in &self.eval.groups {
                g.insert(name.clone(), classes(members, &format!("eval.groups.{name}"))?);
            }
            ClassGroups::new(g, &vocab)?
        };
        Ok(ResolvedConfig {
            seed: self.seed,
            vocab,
            layers: self.layers.clone(),
            rf,
            bindings,
            hwad_alpha: self.hwad.alpha,
            hwad_gamma: self.hwad.gamma,
            update_knowledge: self.hwad.update_knowledge,
            gate,
            groups,
            fp_score_threshold: self.eval.fp_score_threshold,
        })
    }
}

/// Validated configuration with names resolved to ids.
#[derive(Debug, Clone)]
pub struct ResolvedConfig {
    pub seed: u64,
    pub vocab: Vocabulary,
    pub layers: Vec<Layer>,
    pub rf: f64,
    pub bindings: Vec<ContextBinding<f64>>,
    pub hwad_alpha: f64,
    pub hwad_gamma: f64,
    pub update_knowledge: bool,
    pub gate: ShapeGateConfig<f64>,
    pub groups: ClassGroups,
    pub fp_score_threshold: f64,
}

impl ResolvedConfig {
    pub fn has(&self, layer: Layer) -> bool {
        self.layers.contains(&layer)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_documented_values() {
        let cfg = PipelineConfig::default();
        assert_eq!(cfg.redundancy.rf, 0.60);
        assert_eq!(cfg.cawal.threshold, 0.30);
        assert_eq!(cfg.hwad.alpha, 0.50);
        assert_eq!(cfg.hwad.gamma, 0.10);
        assert!(!cfg.layers.contains(&Layer::ShapeGate));
        let r = cfg.resolve().unwrap();
        assert_eq!(r.vocab.len(), 6);
        assert_eq!(r.bindings.len(), 2);
    }

    #[test]
    fn toml_round_trip() {
        let cfg = PipelineConfig {
            layers: vec![Layer::Overlap, Layer::ShapeGate],
            ..Default::default()
        };
        assert_eq!(PipelineConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn partial_toml_uses_defaults() {
        let cfg = PipelineConfig::from_toml("layers = []\n[redundancy]\nrf = 0.7\n").unwrap();
        assert!(cfg.layers.is_empty());
        assert_eq!(cfg.redundancy.rf, 0.7);
        assert_eq!(cfg.hwad.alpha, 0.5);
    }

    #[test]
    fn invalid_configs_are_config_errors() {
        assert!(matches!(PipelineConfig::from_toml("rff = 1"), Err(Error::Config(_))));
        let dup = PipelineConfig {
            layers: vec![Layer::Overlap, Layer::Overlap],
            ..Default::default()
        };
        assert!(matches!(dup.resolve(), Err(Error::Config(_))));
        let mut bad_rf = PipelineConfig::default();
        bad_rf.redundancy.rf = 1.2;
        assert!(matches!(bad_rf.resolve(), Err(Error::Config(_))));
        let mut bad_class = PipelineConfig::default();
        bad_class.cawal.bindings[0].boosted_classes = vec!["submarine".into()];
        assert!(matches!(bad_class.resolve(), Err(Error::Config(_))));
    }
}
