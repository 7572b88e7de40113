//! Reading and writing the JSON file formats.
//!
//! Detections and ground truth share one layout, a list of images each
//! holding records with either `box` (`[x1, y1, x2, y2]`) or `bbox`
//! (`[x, y, w, h]`). Output always uses `box`.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cawal::SceneLabelMap;
use crate::detection::{Detection, DetectionSet, Vocabulary};
use crate::error::{Error, Result};
use crate::evalmetrics::{GroundTruth, GroundTruthSet};
use crate::geometry::BBox;
use crate::shapeconf::ShapeCounts;

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDetectionFile {
    images: Vec<RawDetectionImage>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDetectionImage {
    image_id: String,
    detections: Vec<RawDetection>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDetection {
    id: Option<u64>,
    #[serde(rename = "box")]
    corners: Option<[f64; 4]>,
    bbox: Option<[f64; 4]>,
    label: String,
    score: f64,
    logits: Option<Vec<f64>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGroundTruthFile {
    images: Vec<RawGroundTruthImage>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGroundTruthImage {
    image_id: String,
    annotations: Vec<RawAnnotation>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAnnotation {
    #[serde(rename = "box")]
    corners: Option<[f64; 4]>,
    bbox: Option<[f64; 4]>,
    label: String,
}

#[derive(Serialize)]
struct OutDetectionFile<'a> {
    images: Vec<OutDetectionImage<'a>>,
}

#[derive(Serialize)]
struct OutDetectionImage<'a> {
    image_id: &'a str,
    detections: Vec<OutDetection<'a>>,
}

#[derive(Serialize)]
struct OutDetection<'a> {
    id: u64,
    #[serde(rename = "box")]
    corners: [f64; 4],
    label: &'a str,
    score: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    logits: Option<&'a [f64]>,
}

#[derive(Serialize)]
struct OutGroundTruthFile<'a> {
    images: Vec<OutGroundTruthImage<'a>>,
}

#[derive(Serialize)]
struct OutGroundTruthImage<'a> {
    image_id: &'a str,
    annotations: Vec<OutAnnotation<'a>>,
}

#[derive(Serialize)]
struct OutAnnotation<'a> {
    #[serde(rename = "box")]
    corners: [f64; 4],
    label: &'a str,
}

/// Per-detection shape counts for one image, keyed by detection index in
/// the detection file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShapeCountsImage {
    pub image_id: String,
    pub per_detection: Vec<ShapeCountsEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShapeCountsEntry {
    pub index: usize,
    pub counts: ShapeCounts,
}

/// Parses either a JSON array of `T` or a single `T`.
fn one_or_many<T: serde::de::DeserializeOwned>(text: &str, file: &str) -> Result<Vec<T>> {
    if text.trim_start().starts_with('[') {
        serde_json::from_str(text).map_err(|e| json_error(file, e))
    } else {
        serde_json::from_str(text).map(|x| vec![x]).map_err(|e| json_error(file, e))
    }
}

fn json_error(file: &str, e: serde_json::Error) -> Error {
    Error::schema(file, format!("line {} column {}: {e}", e.line(), e.column()))
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn pick_box(corners: Option<[f64; 4]>, xywh: Option<[f64; 4]>, context: &str) -> Result<BBox<f64>> {
    let b = match (corners, xywh) {
        (Some(c), None) => BBox::from_array(c),
        (None, Some([x, y, w, h])) => {
            if w < 0.0 || h < 0.0 {
                return Err(Error::schema(format!("{context}.bbox"), "negative width or height"));
            }
            BBox::from_xywh(x, y, w, h)
        }
        (Some(_), Some(_)) => return Err(Error::schema(context, "give either 'box' or 'bbox', not both")),
        (None, None) => return Err(Error::schema(context, "missing 'box' or 'bbox'")),
    };
    if !b.is_finite() {
        return Err(Error::schema(context, "box coordinates must be finite"));
    }
    Ok(b)
}

fn check_unique_images<'a>(ids: impl Iterator<Item = &'a str>, file: &str) -> Result<()> {
    let mut seen = BTreeSet::new();
    for id in ids {
        if !seen.insert(id) {
            return Err(Error::schema(file, format!("image_id '{id}' appears twice")));
        }
    }
    Ok(())
}

/// Parses a detection file. Records without an `id` get their position in
/// the file (counting across images) as id.
pub fn parse_detections(text: &str, vocab: &Vocabulary) -> Result<Vec<DetectionSet<f64>>> {
    let raw: RawDetectionFile = serde_json::from_str(text).map_err(|e| json_error("detections", e))?;
    check_unique_images(raw.images.iter().map(|i| i.image_id.as_str()), "detections")?;
    let mut position = 0u64;
    let mut out = Vec::with_capacity(raw.images.len());
    for (ii, img) in raw.images.into_iter().enumerate() {
        let mut ids = BTreeSet::new();
        let mut dets = Vec::with_capacity(img.detections.len());
        for (di, r) in img.detections.into_iter().enumerate() {
            let ctx = format!("detections.images[{ii}].detections[{di}]");
            let id = r.id.unwrap_or(position);
            position += 1;
            if !ids.insert(id) {
                return Err(Error::schema(format!("{ctx}.id"), format!("id {id} repeats within image '{}'", img.image_id)));
            }
            let bbox = pick_box(r.corners, r.bbox, &ctx)?;
            let label = vocab.id(&r.label).ok_or_else(|| {
                Error::schema(format!("{ctx}.label"), format!("'{}' is not in the vocabulary", r.label))
            })?;
            if !(0.0..=1.0).contains(&r.score) {
                return Err(Error::schema(format!("{ctx}.score"), format!("{} outside [0, 1]", r.score)));
            }
            let mut d = Detection::new(id, bbox, label, r.score);
            if let Some(logits) = r.logits {
                if logits.len() != vocab.len() {
                    return Err(Error::schema(
                        format!("{ctx}.logits"),
                        format!("expected {} values, found {}", vocab.len(), logits.len()),
                    ));
                }
                if logits.iter().any(|v| !v.is_finite()) {
                    return Err(Error::schema(format!("{ctx}.logits"), "values must be finite"));
                }
                d = d.with_logits(logits);
            }
            dets.push(d);
        }
        out.push(DetectionSet::new(img.image_id, dets));
    }
    Ok(out)
}

pub fn load_detections(path: &Path, vocab: &Vocabulary) -> Result<Vec<DetectionSet<f64>>> {
    parse_detections(&read(path)?, vocab).map_err(|e| with_file(e, path))
}

pub fn parse_ground_truth(text: &str, vocab: &Vocabulary) -> Result<Vec<GroundTruthSet<f64>>> {
    let raw: RawGroundTruthFile = serde_json::from_str(text).map_err(|e| json_error("ground truth", e))?;
    check_unique_images(raw.images.iter().map(|i| i.image_id.as_str()), "ground truth")?;
    raw.images
        .into_iter()
        .enumerate()
        .map(|(ii, img)| {
            let annotations = img
                .annotations
                .into_iter()
                .enumerate()
                .map(|(ai, a)| {
                    let ctx = format!("ground_truth.images[{ii}].annotations[{ai}]");
                    let bbox = pick_box(a.corners, a.bbox, &ctx)?;
                    let label = vocab.id(&a.label).ok_or_else(|| {
                        Error::schema(format!("{ctx}.label"), format!("'{}' is not in the vocabulary", a.label))
                    })?;
                    Ok(GroundTruth { bbox, label })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(GroundTruthSet::new(img.image_id, annotations))
        })
        .collect()
}

pub fn load_ground_truth(path: &Path, vocab: &Vocabulary) -> Result<Vec<GroundTruthSet<f64>>> {
    parse_ground_truth(&read(path)?, vocab).map_err(|e| with_file(e, path))
}

/// Scene maps keyed by image id. Accepts a list or a single map.
pub fn parse_scenes(text: &str) -> Result<BTreeMap<String, SceneLabelMap>> {
    let mut out = BTreeMap::new();
    for map in one_or_many::<SceneLabelMap>(text, "scenes")? {
        map.validate()?;
        let id = map.image_id.clone();
        if out.insert(id.clone(), map).is_some() {
            return Err(Error::schema("scenes", format!("image_id '{id}' appears twice")));
        }
    }
    Ok(out)
}

pub fn load_scenes(path: &Path) -> Result<BTreeMap<String, SceneLabelMap>> {
    parse_scenes(&read(path)?).map_err(|e| with_file(e, path))
}

/// Shape counts keyed by `(image_id, detection id)`. Entry indices refer to
/// positions in the matching image of `detections`.
pub fn parse_shape_counts(
    text: &str,
    detections: &[DetectionSet<f64>],
) -> Result<BTreeMap<(String, u64), ShapeCounts>> {
    let raw = one_or_many::<ShapeCountsImage>(text, "shape counts")?;
    let by_image: BTreeMap<&str, &DetectionSet<f64>> =
        detections.iter().map(|ds| (ds.image_id.as_str(), ds)).collect();
    let mut out = BTreeMap::new();
    for (ii, img) in raw.into_iter().enumerate() {
        let ds = by_image.get(img.image_id.as_str()).ok_or_else(|| {
            Error::schema(format!("shape_counts[{ii}].image_id"), format!("no detections for image '{}'", img.image_id))
        })?;
        for (ei, e) in img.per_detection.into_iter().enumerate() {
            let d = ds.detections.get(e.index).ok_or_else(|| {
                Error::schema(
                    format!("shape_counts[{ii}].per_detection[{ei}].index"),
                    format!("image '{}' has {} detections", img.image_id, ds.len()),
                )
            })?;
            if out.insert((img.image_id.clone(), d.id), e.counts).is_some() {
                return Err(Error::schema(
                    format!("shape_counts[{ii}].per_detection[{ei}]"),
                    format!("index {} listed twice", e.index),
                ));
            }
        }
    }
    Ok(out)
}

pub fn load_shape_counts(
    path: &Path,
    detections: &[DetectionSet<f64>],
) -> Result<BTreeMap<(String, u64), ShapeCounts>> {
    parse_shape_counts(&read(path)?, detections).map_err(|e| with_file(e, path))
}

fn with_file(e: Error, path: &Path) -> Error {
    match e {
        Error::Schema { context, message } => Error::Schema {
            context: format!("{}: {context}", path.display()),
            message,
        },
        other => other,
    }
}

fn pretty<S: Serialize>(value: &S) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

/// Canonical detection file text.
pub fn detections_to_json(sets: &[DetectionSet<f64>], vocab: &Vocabulary) -> String {
    pretty(&OutDetectionFile {
        images: sets
            .iter()
            .map(|ds| OutDetectionImage {
                image_id: &ds.image_id,
                detections: ds
                    .detections
                    .iter()
                    .map(|d| OutDetection {
                        id: d.id,
                        corners: d.bbox.to_array(),
                        label: vocab.name(d.label),
                        score: d.score,
                        logits: d.logits.as_deref(),
                    })
                    .collect(),
            })
            .collect(),
    })
}

pub fn ground_truth_to_json(sets: &[GroundTruthSet<f64>], vocab: &Vocabulary) -> String {
    pretty(&OutGroundTruthFile {
        images: sets
            .iter()
            .map(|g| OutGroundTruthImage {
                image_id: &g.image_id,
                annotations: g
                    .annotations
                    .iter()
                    .map(|a| OutAnnotation {
                        corners: a.bbox.to_array(),
                        label: vocab.name(a.label),
                    })
                    .collect(),
            })
            .collect(),
    })
}

pub fn scenes_to_json<'a>(maps: impl IntoIterator<Item = &'a SceneLabelMap>) -> String {
    pretty(&maps.into_iter().collect::<Vec<_>>())
}

pub fn shape_counts_to_json(images: &[ShapeCountsImage]) -> String {
    pretty(&images)
}

pub(crate) fn to_pretty_json<S: Serialize>(value: &S) -> String {
    pretty(value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::knowledge::Shape;

    fn vocab() -> Vocabulary {
        Vocabulary::default_vehicles()
    }

    #[test]
    fn parses_both_box_forms_and_assigns_ids() {
        let text = r#"{"images":[
            {"image_id":"a","detections":[
                {"box":[0,0,10,10],"label":"Car","score":0.9},
                {"bbox":[5,5,10,20],"label":"boat","score":0.4,"logits":[0,0,0,0,0,1]}]},
            {"image_id":"b","detections":[{"box":[1,1,2,2],"label":"bus","score":0.5}]}]}"#;
        let sets = parse_detections(text, &vocab()).unwrap();
        assert_eq!(sets[0].detections[1].bbox.to_array(), [5.0, 5.0, 15.0, 25.0]);
        assert_eq!(sets[0].detections[1].id, 1);
        assert_eq!(sets[1].detections[0].id, 2);
        let again = parse_detections(&detections_to_json(&sets, &vocab()), &vocab()).unwrap();
        assert_eq!(again, sets);
    }

    #[test]
    fn schema_errors_name_the_field() {
        let bad_label = r#"{"images":[{"image_id":"a","detections":[{"box":[0,0,1,1],"label":"tank","score":0.5}]}]}"#;
        match parse_detections(bad_label, &vocab()) {
            Err(Error::Schema { context, .. }) => assert_eq!(context, "detections.images[0].detections[0].label"),
            other => panic!("{other:?}"),
        }
        let short_logits =
            r#"{"images":[{"image_id":"a","detections":[{"box":[0,0,1,1],"label":"car","score":0.5,"logits":[1]}]}]}"#;
        assert!(matches!(parse_detections(short_logits, &vocab()), Err(Error::Schema { .. })));
        let no_box = r#"{"images":[{"image_id":"a","detections":[{"label":"car","score":0.5}]}]}"#;
        assert!(matches!(parse_detections(no_box, &vocab()), Err(Error::Schema { .. })));
        assert!(matches!(parse_detections("{", &vocab()), Err(Error::Schema { .. })));
        let dup = r#"{"images":[{"image_id":"a","detections":[]},{"image_id":"a","detections":[]}]}"#;
        assert!(matches!(parse_detections(dup, &vocab()), Err(Error::Schema { .. })));
    }

    #[test]
    fn scenes_accept_single_object() {
        let one = r#"{"image_id":"a","legend":{"0":"water","1":"land"},"grid":[[0,1],[1,1]]}"#;
        let maps = parse_scenes(one).unwrap();
        assert_eq!(maps["a"].total_labels(), 4);
        let bad = r#"[{"image_id":"a","legend":{"0":"water"},"grid":[[0,2]]}]"#;
        assert!(matches!(parse_scenes(bad), Err(Error::Schema { .. })));
    }

    #[test]
    fn shape_counts_map_index_to_id() {
        let dets = vec![DetectionSet::new(
            "a",
            vec![
                Detection::new(7, BBox::new(0., 0., 1., 1.), crate::ClassId(3), 0.5),
                Detection::new(9, BBox::new(0., 0., 2., 2.), crate::ClassId(3), 0.5),
            ],
        )];
        let text = r#"[{"image_id":"a","per_detection":[{"index":1,"counts":{"rectangle":1,"trapezoid":2}}]}]"#;
        let counts = parse_shape_counts(text, &dets).unwrap();
        assert_eq!(counts[&("a".to_string(), 9)].get(Shape::Trapezoid), 2);
        let out_of_range = r#"[{"image_id":"a","per_detection":[{"index":2,"counts":{}}]}]"#;
        assert!(parse_shape_counts(out_of_range, &dets).is_err());
    }
}
