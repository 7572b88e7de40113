//! Weighted size-relation knowledge graph.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::detection::{ClassId, Vocabulary};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Relation {
    #[serde(rename = "isSmallerThan")]
    IsSmallerThan,
    #[serde(rename = "isBiggerThan")]
    IsBiggerThan,
}

impl Relation {
    /// Whether a subject of size `subject` and an object of size `object`
    /// agree with this relation. Both comparisons are strict.
    pub fn holds<T: PartialOrd>(self, subject: T, object: T) -> bool {
        match self {
            Relation::IsSmallerThan => subject < object,
            Relation::IsBiggerThan => subject > object,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Relation::IsSmallerThan => "isSmallerThan",
            Relation::IsBiggerThan => "isBiggerThan",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SizeRule<T> {
    pub subject: String,
    pub relation: Relation,
    pub object: String,
    pub weight: T,
    pub initial_llm_weight: T,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRule<T> {
    subject: String,
    relation: Relation,
    object: String,
    weight: T,
    // Fresh LLM output carries only `weight`; it becomes the initial weight.
    initial_llm_weight: Option<T>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGraph<T> {
    classes: Vec<String>,
    rules: Vec<RawRule<T>>,
}

/// Classes plus size rules, validated on construction.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KnowledgeGraph<T> {
    classes: Vec<String>,
    rules: Vec<SizeRule<T>>,
    #[serde(skip)]
    index: BTreeMap<String, usize>,
}

/// A rule with its endpoints resolved against a [`Vocabulary`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundRule<T> {
    /// Position of the rule in [`KnowledgeGraph::rules`].
    pub rule_index: usize,
    pub subject: ClassId,
    pub relation: Relation,
    pub object: ClassId,
    pub weight: T,
}

impl<T: Scalar> KnowledgeGraph<T> {
    pub fn new(classes: Vec<String>, rules: Vec<SizeRule<T>>) -> Result<Self> {
        let mut index = BTreeMap::new();
        for (i, c) in classes.iter().enumerate() {
            if c.is_empty() {
                return Err(Error::schema(format!("classes[{i}]"), "empty class name"));
            }
            if index.insert(c.clone(), i).is_some() {
                return Err(Error::schema(format!("classes[{i}]"), format!("duplicate class '{c}'")));
            }
        }
        let kg = Self {
            classes,
            rules,
            index,
        };
        kg.validate()?;
        Ok(kg)
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn rules(&self) -> &[SizeRule<T>] {
        &self.rules
    }

    pub fn class_index(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn class_name(&self, index: usize) -> Option<&str> {
        self.classes.get(index).map(String::as_str)
    }

    /// Returns a copy with rule `i`'s current weight replaced.
    /// `initial_llm_weight` is left as it was.
    pub fn with_weight(&self, i: usize, weight: T) -> Self {
        let mut next = self.clone();
        next.rules[i].weight = weight;
        next
    }

    /// Mutable access to a rule's current weight. Callers must re-validate
    /// before persisting; [`persist_knowledge_graph`] does so.
    pub fn weight_mut(&mut self, i: usize) -> &mut T {
        &mut self.rules[i].weight
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        let mut relations: BTreeMap<(&str, &str), Relation> = BTreeMap::new();
        for (i, r) in self.rules.iter().enumerate() {
            for (field, w) in [("weight", r.weight), ("initial_llm_weight", r.initial_llm_weight)] {
                if !w.in_unit_interval() {
                    return Err(Error::WeightOutOfRange {
                        context: format!("rules[{i}].{field}"),
                        value: w.as_f64(),
                    });
                }
            }
            for name in [&r.subject, &r.object] {
                if !self.index.contains_key(name) {
                    return Err(Error::UnknownClass {
                        name: name.clone(),
                        context: format!("rules[{i}]"),
                    });
                }
            }
            if r.subject == r.object {
                return Err(Error::schema(
                    format!("rules[{i}]"),
                    format!("'{}' compared with itself", r.subject),
                ));
            }
            if !seen.insert((&r.subject, r.relation, &r.object)) {
                return Err(Error::schema(format!("rules[{i}]"), "duplicate rule"));
            }
            match relations.insert((&r.subject, &r.object), r.relation) {
                Some(prev) if prev != r.relation => {
                    return Err(Error::ConflictingRelation {
                        subject: r.subject.clone(),
                        object: r.object.clone(),
                    })
                }
                _ => {}
            }
        }
        self.check_acyclic()
    }

    /// Kahn's algorithm over the "is smaller than" edges.
    fn check_acyclic(&self) -> Result<()> {
        let n = self.classes.len();
        let mut out: Vec<Vec<usize>> = vec![Vec::new(); n];
        let mut indegree = vec![0usize; n];
        for r in &self.rules {
            let (s, o) = (self.index[&r.subject], self.index[&r.object]);
            let (small, big) = match r.relation {
                Relation::IsSmallerThan => (s, o),
                Relation::IsBiggerThan => (o, s),
            };
            out[small].push(big);
            indegree[big] += 1;
        }
        let mut queue: VecDeque<usize> = (0..n).filter(|&i| indegree[i] == 0).collect();
        let mut visited = 0;
        while let Some(v) = queue.pop_front() {
            visited += 1;
            for &w in &out[v] {
                indegree[w] -= 1;
                if indegree[w] == 0 {
                    queue.push_back(w);
                }
            }
        }
        if visited == n {
            Ok(())
        } else {
            let stuck = (0..n).find(|&i| indegree[i] > 0).expect("a cycle leaves residual indegree");
            Err(Error::CyclicRelation {
                class: self.classes[stuck].clone(),
            })
        }
    }

    /// Resolves rule endpoints to vocabulary ids.
    pub fn bind(&self, vocab: &Vocabulary) -> Result<Vec<BoundRule<T>>> {
        self.rules
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let context = format!("knowledge graph rules[{i}]");
                Ok(BoundRule {
                    rule_index: i,
                    subject: vocab.require(&r.subject, &context)?,
                    relation: r.relation,
                    object: vocab.require(&r.object, &context)?,
                    weight: r.weight,
                })
            })
            .collect()
    }

    pub fn to_json_string(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("graph serializes");
        s.push('\n');
        s
    }
}

pub fn parse_knowledge_graph<T: Scalar>(document: &str) -> Result<KnowledgeGraph<T>> {
    let raw: RawGraph<T> = serde_json::from_str(document)
        .map_err(|e| Error::schema(format!("line {} column {}", e.line(), e.column()), e.to_string()))?;
    let rules = raw
        .rules
        .into_iter()
        .map(|r| SizeRule {
            subject: r.subject,
            relation: r.relation,
            object: r.object,
            weight: r.weight,
            initial_llm_weight: r.initial_llm_weight.unwrap_or(r.weight),
        })
        .collect();
    KnowledgeGraph::new(raw.classes, rules)
}

/// Validates `kg` and writes it to `destination` atomically.
pub fn persist_knowledge_graph<T: Scalar>(kg: &KnowledgeGraph<T>, destination: &Path) -> Result<()> {
    kg.validate()?;
    write_atomic(destination, kg.to_json_string().as_bytes())
}

/// Writes through a temporary file in the destination directory, then renames.
pub(crate) fn write_atomic(destination: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match destination.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(destination, e))?;
    tmp.persist(destination).map_err(|e| Error::io(destination, e.error))?;
    Ok(())
}
