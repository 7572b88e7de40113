//! Knowledge document sources: bundled fixtures or a live chat-completion
//! endpoint. Every document is validated before it is returned.

use crate::error::{Error, Result};
use crate::knowledge::graph::parse_knowledge_graph;
use crate::knowledge::shapes::parse_shape_knowledge;

/// Environment variable holding the chat-completion endpoint URL.
pub const ENDPOINT_VAR: &str = "PGRULES_LLM_ENDPOINT";
/// Environment variable holding the bearer token.
pub const API_KEY_VAR: &str = "PGRULES_LLM_API_KEY";
/// Optional model name; see [`DEFAULT_MODEL`].
pub const MODEL_VAR: &str = "PGRULES_LLM_MODEL";
pub const DEFAULT_MODEL: &str = "gpt-4o-mini";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DocumentKind {
    SizeGraph,
    ShapeCounts,
}

/// A registered prompt and the fixture answering it offline.
#[derive(Debug, Clone, Copy)]
pub struct PromptEntry {
    pub key: &'static str,
    pub kind: DocumentKind,
    pub prompt: &'static str,
    pub fixture: &'static str,
    /// Output-format instruction sent alongside the prompt to live endpoints.
    pub format_hint: &'static str,
}

const SIZE_GRAPH_HINT: &str = "Respond with JSON only, shaped as {\"classes\": [names], \"rules\": \
[{\"subject\": name, \"relation\": \"isSmallerThan\" | \"isBiggerThan\", \"object\": name, \"weight\": number in [0, 1]}]}.";

const SHAPE_COUNTS_HINT: &str = "Respond with JSON only, shaped as {\"<Vehicle>\": {\"rectangle\": [lo, hi], \
\"square\": [lo, hi], \"trapezoid\": [lo, hi], \"triangle\": [lo, hi], \"parallelogram\": [lo, hi]}}.";

pub const PROMPTS: [PromptEntry; 2] = [
    PromptEntry {
        key: "size-graph-v1",
        kind: DocumentKind::SizeGraph,
        prompt: include_str!("../../prompts/size-graph-v1.txt"),
        fixture: include_str!("../../fixtures/size-graph-v1.json"),
        format_hint: SIZE_GRAPH_HINT,
    },
    PromptEntry {
        key: "shape-counts-v1",
        kind: DocumentKind::ShapeCounts,
        prompt: include_str!("../../prompts/shape-counts-v1.txt"),
        fixture: include_str!("../../fixtures/shape-counts-v1.json"),
        format_hint: SHAPE_COUNTS_HINT,
    },
];

pub fn prompt_entry(key: &str) -> Result<&'static PromptEntry> {
    PROMPTS
        .iter()
        .find(|p| p.key == key)
        .ok_or_else(|| Error::Validation(format!("no prompt registered under '{key}'")))
}

pub trait KnowledgeClient {
    /// Returns the raw response text for a registered prompt.
    fn complete(&self, entry: &PromptEntry) -> Result<String>;
}

/// Offline client answering from the bundled fixtures.
#[derive(Debug, Default, Clone, Copy)]
pub struct FixtureStore;

impl KnowledgeClient for FixtureStore {
    fn complete(&self, entry: &PromptEntry) -> Result<String> {
        Ok(entry.fixture.to_string())
    }
}

/// Strips a surrounding Markdown code fence, if any.
fn strip_fence(text: &str) -> &str {
    let t = text.trim();
    let Some(rest) = t.strip_prefix("```") else {
        return t;
    };
    let body = rest.split_once('\n').map_or("", |(_, b)| b);
    body.trim_end().strip_suffix("```").unwrap_or(body).trim()
}

/// Fetches the document for `key` and validates it against its schema.
pub fn fetch_knowledge(key: &str, client: &dyn KnowledgeClient) -> Result<String> {
    let entry = prompt_entry(key)?;
    let raw = client.complete(entry)?;
    let doc = strip_fence(&raw);
    let checked = match entry.kind {
        DocumentKind::SizeGraph => parse_knowledge_graph::<f64>(doc).map(|_| ()),
        DocumentKind::ShapeCounts => parse_shape_knowledge(doc).map(|_| ()),
    };
    checked.map_err(|e| Error::Validation(format!("response for '{key}' failed validation: {e}")))?;
    let mut out = doc.to_string();
    if !out.ends_with('\n') {
        out.push('\n');
    }
    Ok(out)
}

#[cfg(feature = "live")]
pub use live::LiveClient;

#[cfg(feature = "live")]
mod live {
    use std::time::Duration;

    use serde_json::{json, Value};

    use super::*;

    /// Chat-completion client configured from the environment.
    #[derive(Debug, Clone)]
    pub struct LiveClient {
        endpoint: String,
        api_key: String,
        model: String,
    }

    impl LiveClient {
        pub fn new(endpoint: impl Into<String>, api_key: impl Into<String>, model: impl Into<String>) -> Self {
            Self {
                endpoint: endpoint.into(),
                api_key: api_key.into(),
                model: model.into(),
            }
        }

        pub fn from_env() -> Result<Self> {
            let endpoint = std::env::var(ENDPOINT_VAR)
                .map_err(|_| Error::Network(format!("{ENDPOINT_VAR} is not set")))?;
            let api_key =
                std::env::var(API_KEY_VAR).map_err(|_| Error::Auth(format!("{API_KEY_VAR} is not set")))?;
            let model = std::env::var(MODEL_VAR).unwrap_or_else(|_| DEFAULT_MODEL.to_string());
            Ok(Self::new(endpoint, api_key, model))
        }
    }

    impl KnowledgeClient for LiveClient {
        fn complete(&self, entry: &PromptEntry) -> Result<String> {
            let agent: ureq::Agent = ureq::Agent::config_builder()
                .timeout_global(Some(Duration::from_secs(120)))
                .http_status_as_error(false)
                .build()
                .into();
            let body = json!({
                "model": self.model,
                "temperature": 0,
                "messages": [
                    {"role": "system", "content": entry.format_hint},
                    {"role": "user", "content": entry.prompt},
                ],
            });
            let mut resp = agent
                .post(&self.endpoint)
                .header("Authorization", &format!("Bearer {}", self.api_key))
                .send_json(&body)
                .map_err(|e| Error::Network(e.to_string()))?;
            let status = resp.status().as_u16();
            if status == 401 || status == 403 {
                return Err(Error::Auth(format!("endpoint answered HTTP {status}")));
            }
            if !(200..300).contains(&status) {
                return Err(Error::Network(format!("endpoint answered HTTP {status}")));
            }
            let v: Value = resp
                .body_mut()
                .read_json()
                .map_err(|e| Error::Validation(format!("response is not JSON: {e}")))?;
            v.pointer("/choices/0/message/content")
                .and_then(Value::as_str)
                .map(str::to_string)
                .ok_or_else(|| Error::Validation("response has no choices[0].message.content".into()))
        }
    }
}
