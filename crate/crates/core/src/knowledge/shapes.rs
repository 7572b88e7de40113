//! Expected geometric-shape counts per class.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Square,
    Triangle,
    Rectangle,
    Parallelogram,
    Trapezoid,
}

impl Shape {
    pub const ALL: [Shape; 5] = [
        Shape::Square,
        Shape::Triangle,
        Shape::Rectangle,
        Shape::Parallelogram,
        Shape::Trapezoid,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Shape::Square => "square",
            Shape::Triangle => "triangle",
            Shape::Rectangle => "rectangle",
            Shape::Parallelogram => "parallelogram",
            Shape::Trapezoid => "trapezoid",
        }
    }

    pub fn parse(name: &str) -> Option<Shape> {
        Shape::ALL.into_iter().find(|s| s.as_str() == name)
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Inclusive integer range `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CountRange {
    pub lo: u32,
    pub hi: u32,
}

impl CountRange {
    pub fn new(lo: u32, hi: u32) -> Self {
        assert!(lo <= hi, "inverted count range");
        Self { lo, hi }
    }

    pub fn exact(k: u32) -> Self {
        Self { lo: k, hi: k }
    }

    pub fn contains(&self, n: u32) -> bool {
        (self.lo..=self.hi).contains(&n)
    }

    /// `n` if it is in range, otherwise the nearer bound.
    pub fn nearest(&self, n: u32) -> u32 {
        n.clamp(self.lo, self.hi)
    }
}

impl Serialize for CountRange {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        [self.lo, self.hi].serialize(s)
    }
}

pub type ShapeRow = BTreeMap<Shape, CountRange>;

/// Expected shape-count ranges keyed by class name. Shapes missing from a
/// class row are unconstrained for that class.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct ShapeKnowledge {
    rows: BTreeMap<String, ShapeRow>,
}

impl ShapeKnowledge {
    pub fn new(rows: BTreeMap<String, ShapeRow>) -> Self {
        Self { rows }
    }

    /// Case-insensitive row lookup.
    pub fn row(&self, class: &str) -> Option<&ShapeRow> {
        self.rows
            .get(class)
            .or_else(|| self.rows.iter().find(|(k, _)| k.eq_ignore_ascii_case(class)).map(|(_, v)| v))
    }

    pub fn classes(&self) -> impl Iterator<Item = &str> {
        self.rows.keys().map(String::as_str)
    }

    pub fn to_json_string(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("table serializes");
        s.push('\n');
        s
    }
}

fn count_at(v: &Value, context: &str) -> Result<u32> {
    if let Some(i) = v.as_i64() {
        if i < 0 {
            return Err(Error::NegativeCount {
                context: context.to_string(),
            });
        }
        return u32::try_from(i).map_err(|_| Error::schema(context, "count too large"));
    }
    if v.as_f64().is_some_and(|f| f < 0.0) {
        return Err(Error::NegativeCount {
            context: context.to_string(),
        });
    }
    Err(Error::schema(context, "expected a non-negative integer"))
}

fn range_at(v: &Value, context: &str) -> Result<CountRange> {
    match v {
        Value::Array(items) if items.len() == 2 => {
            let lo = count_at(&items[0], &format!("{context}[0]"))?;
            let hi = count_at(&items[1], &format!("{context}[1]"))?;
            if lo > hi {
                return Err(Error::schema(context, format!("inverted range [{lo}, {hi}]")));
            }
            Ok(CountRange::new(lo, hi))
        }
        Value::Number(_) => count_at(v, context).map(CountRange::exact),
        _ => Err(Error::schema(context, "expected [lo, hi] or a single count")),
    }
}

/// Parses `{"<class>": {"rectangle": [lo, hi], ...}, ...}`.
pub fn parse_shape_knowledge(document: &str) -> Result<ShapeKnowledge> {
    let root: Value = serde_json::from_str(document)
        .map_err(|e| Error::schema(format!("line {} column {}", e.line(), e.column()), e.to_string()))?;
    let Value::Object(classes) = root else {
        return Err(Error::schema("$", "expected an object keyed by class"));
    };
    if classes.is_empty() {
        return Err(Error::schema("$", "no classes"));
    }
    let mut rows = BTreeMap::new();
    for (class, row) in classes {
        let Value::Object(shapes) = row else {
            return Err(Error::schema(class, "expected an object keyed by shape"));
        };
        let mut parsed = ShapeRow::new();
        for (name, range) in shapes {
            let context = format!("{class}.{name}");
            let shape = Shape::parse(&name).ok_or_else(|| Error::schema(&context, "unknown shape"))?;
            parsed.insert(shape, range_at(&range, &context)?);
        }
        rows.insert(class, parsed);
    }
    Ok(ShapeKnowledge { rows })
}
