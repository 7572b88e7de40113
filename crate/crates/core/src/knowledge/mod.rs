//! LLM-derived knowledge documents: the size-relation graph and the
//! shape-count table, plus the clients that fetch them.

pub mod client;
pub mod graph;
pub mod shapes;

pub use client::{fetch_knowledge, FixtureStore, KnowledgeClient, PromptEntry};
pub use graph::{
    parse_knowledge_graph, persist_knowledge_graph, BoundRule, KnowledgeGraph, Relation, SizeRule,
};
pub use shapes::{parse_shape_knowledge, CountRange, Shape, ShapeKnowledge, ShapeRow};
