//! Prompt assembly: chronological context rendering and template substitution.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::vector_store::EmbeddedEntry;

pub const DEFAULT_TEMPLATE_ID: &str = "default";
pub const DEFAULT_TEMPLATE: &str = include_str!("../templates/default.txt");

const LOGS_PLACEHOLDER: &str = "{logs}";
const QUESTION_PLACEHOLDER: &str = "{question}";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PromptError {
    #[error("no context entries to render")]
    EmptyContext,
    #[error("question is empty")]
    EmptyQuestion,
    #[error("template `{0}` not found")]
    TemplateNotFound(String),
    #[error("template `{id}` is invalid: {reason}")]
    InvalidTemplate { id: String, reason: String },
    #[error("reading templates: {0}")]
    Io(String),
}

/// Retrieved entries in chronological order plus their rendered lines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextSet {
    pub entries: Vec<EmbeddedEntry>,
    pub rendered: String,
}

impl ContextSet {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn lines(&self) -> impl Iterator<Item = &str> {
        self.rendered.split('\n')
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub template_id: String,
    pub context: ContextSet,
    pub question: String,
    pub prompt_text: String,
}

/// ISO-8601 UTC with millisecond precision (truncated), e.g. `2023-11-14T22:13:20.123Z`.
pub fn format_timestamp(ns: u64) -> String {
    let secs = (ns / 1_000_000_000) as i64;
    let nanos = (ns % 1_000_000_000) as u32;
    let dt: DateTime<Utc> =
        DateTime::from_timestamp(secs, nanos).expect("u64 nanoseconds stay within chrono's range");
    dt.to_rfc3339_opts(SecondsFormat::Millis, true)
}

/// `[<timestamp>] <message>`. Embedded line breaks are escaped so one entry
/// always renders as exactly one line.
pub fn render_line(entry: &EmbeddedEntry) -> String {
    let msg = entry
        .record
        .message
        .replace('\r', "\\r")
        .replace('\n', "\\n");
    format!("[{}] {}", format_timestamp(entry.record.timestamp), msg)
}

/// Stable sort by `(timestamp, seq)` and render one line per entry.
pub fn order_context(mut entries: Vec<EmbeddedEntry>) -> Result<ContextSet, PromptError> {
    if entries.is_empty() {
        return Err(PromptError::EmptyContext);
    }
    entries.sort_by_key(|e| (e.record.timestamp, e.record.seq));
    let rendered = entries
        .iter()
        .map(render_line)
        .collect::<Vec<_>>()
        .join("\n");
    Ok(ContextSet { entries, rendered })
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment {
    Text(String),
    Logs,
    Question,
}

/// A parsed template with `{logs}` and `{question}` each appearing exactly once.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    id: String,
    source: String,
    segments: Vec<Segment>,
}

impl PromptTemplate {
    pub fn parse(id: &str, source: &str) -> Result<Self, PromptError> {
        let invalid = |reason: String| PromptError::InvalidTemplate {
            id: id.to_string(),
            reason,
        };
        for ph in [LOGS_PLACEHOLDER, QUESTION_PLACEHOLDER] {
            let n = source.matches(ph).count();
            if n != 1 {
                return Err(invalid(format!(
                    "`{ph}` must appear exactly once, found {n}"
                )));
            }
        }

        let mut segments = Vec::new();
        let mut rest = source;
        while !rest.is_empty() {
            let next = [
                (rest.find(LOGS_PLACEHOLDER), LOGS_PLACEHOLDER, Segment::Logs),
                (
                    rest.find(QUESTION_PLACEHOLDER),
                    QUESTION_PLACEHOLDER,
                    Segment::Question,
                ),
            ]
            .into_iter()
            .filter_map(|(pos, ph, seg)| pos.map(|p| (p, ph, seg)))
            .min_by_key(|(p, _, _)| *p);
            match next {
                Some((pos, ph, seg)) => {
                    if pos > 0 {
                        segments.push(Segment::Text(rest[..pos].to_string()));
                    }
                    segments.push(seg);
                    rest = &rest[pos + ph.len()..];
                }
                None => {
                    segments.push(Segment::Text(rest.to_string()));
                    rest = "";
                }
            }
        }

        Ok(Self {
            id: id.to_string(),
            source: source.to_string(),
            segments,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    /// Single-pass substitution; placeholder-like text inside the inputs is left alone.
    pub fn render(&self, logs: &str, question: &str) -> String {
        let mut out = String::with_capacity(self.source.len() + logs.len() + question.len());
        for seg in &self.segments {
            match seg {
                Segment::Text(t) => out.push_str(t),
                Segment::Logs => out.push_str(logs),
                Segment::Question => out.push_str(question),
            }
        }
        out
    }
}

/// Named templates. Always contains the built-in `default`.
#[derive(Debug, Clone)]
pub struct TemplateRegistry {
    templates: BTreeMap<String, PromptTemplate>,
}

impl Default for TemplateRegistry {
    fn default() -> Self {
        let mut templates = BTreeMap::new();
        templates.insert(
            DEFAULT_TEMPLATE_ID.to_string(),
            PromptTemplate::parse(DEFAULT_TEMPLATE_ID, DEFAULT_TEMPLATE)
                .expect("bundled template is valid"),
        );
        Self { templates }
    }
}

impl TemplateRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, template: PromptTemplate) {
        self.templates.insert(template.id.clone(), template);
    }

    /// Load every `*.txt` file in `dir`, keyed by file stem.
    pub fn load_dir(&mut self, dir: &Path) -> Result<usize, PromptError> {
        let mut loaded = 0;
        let read_dir = std::fs::read_dir(dir).map_err(|e| PromptError::Io(e.to_string()))?;
        for entry in read_dir {
            let path = entry.map_err(|e| PromptError::Io(e.to_string()))?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("txt") {
                continue;
            }
            let Some(id) = path.file_stem().and_then(|s| s.to_str()) else {
                continue;
            };
            let source =
                std::fs::read_to_string(&path).map_err(|e| PromptError::Io(e.to_string()))?;
            self.insert(PromptTemplate::parse(id, &source)?);
            loaded += 1;
        }
        Ok(loaded)
    }

    pub fn get(&self, id: &str) -> Result<&PromptTemplate, PromptError> {
        self.templates
            .get(id)
            .ok_or_else(|| PromptError::TemplateNotFound(id.to_string()))
    }

    pub fn contains(&self, id: &str) -> bool {
        self.templates.contains_key(id)
    }

    pub fn build_prompt(
        &self,
        template_id: &str,
        context: ContextSet,
        question: &str,
    ) -> Result<PromptBundle, PromptError> {
        if question.trim().is_empty() {
            return Err(PromptError::EmptyQuestion);
        }
        if context.is_empty() {
            return Err(PromptError::EmptyContext);
        }
        let template = self.get(template_id)?;
        let prompt_text = template.render(&context.rendered, question);
        Ok(PromptBundle {
            template_id: template_id.to_string(),
            context,
            question: question.to_string(),
            prompt_text,
        })
    }
}
