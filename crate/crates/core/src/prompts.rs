//! Listwise prompt construction.
//!
//! A listwise prompt packages an instruction, k candidate documents and the
//! query into one text. Its embedding serves as a pseudo-relevance-feedback
//! query for reranking.

use std::path::Path;

use thiserror::Error;

use crate::data::{Document, Query};
use crate::encoder::Encoder;
use crate::linalg::Vector;
use crate::tokenizer::TokenId;

pub const DEFAULT_INSTRUCTION: &str =
    "Given a web search query and some relevant documents, rerank the documents that answer the query:";

#[derive(Debug, Error, PartialEq)]
pub enum TemplateError {
    #[error("`{field}` must contain `{placeholder}` exactly once")]
    Placeholder {
        field: &'static str,
        placeholder: &'static str,
    },
    #[error("line {line}: unknown section `{name}`")]
    UnknownSection { line: usize, name: String },
    #[error("line {line}: text before the first section header")]
    Orphan { line: usize },
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

/// Layout of a listwise prompt. Chat-template markers live in `prefix` and
/// `suffix` as opaque text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    prefix: String,
    suffix: String,
    header: String,
    doc_format: String,
    query_format: String,
    instruction: String,
}

impl Default for PromptTemplate {
    /// The evaluation prompt with Qwen-style chat markers.
    fn default() -> Self {
        PromptTemplate {
            prefix: "<|im_start|>user".into(),
            suffix: "<|im_end|>\n<|im_start|>assistant".into(),
            header: "Documents:".into(),
            doc_format: "[{i}] {doc}".into(),
            query_format: "Search Query: {query}".into(),
            instruction: DEFAULT_INSTRUCTION.into(),
        }
    }
}

impl PromptTemplate {
    pub fn new(
        prefix: impl Into<String>,
        suffix: impl Into<String>,
        header: impl Into<String>,
        doc_format: impl Into<String>,
        query_format: impl Into<String>,
        instruction: impl Into<String>,
    ) -> Result<Self, TemplateError> {
        let t = PromptTemplate {
            prefix: prefix.into(),
            suffix: suffix.into(),
            header: header.into(),
            doc_format: doc_format.into(),
            query_format: query_format.into(),
            instruction: instruction.into(),
        };
        t.validate()?;
        Ok(t)
    }

    /// No markers, no header, bare query line. With zero documents the
    /// rendered prompt tokenizes exactly like `instruction + " " + query`,
    /// i.e. like a plain query embedding input.
    pub fn plain(instruction: impl Into<String>) -> Self {
        PromptTemplate {
            prefix: String::new(),
            suffix: String::new(),
            header: String::new(),
            doc_format: "[{i}] {doc}".into(),
            query_format: "{query}".into(),
            instruction: instruction.into(),
        }
    }

    fn validate(&self) -> Result<(), TemplateError> {
        let once = |s: &str, ph: &'static str, field: &'static str| {
            if s.matches(ph).count() == 1 {
                Ok(())
            } else {
                Err(TemplateError::Placeholder {
                    field,
                    placeholder: ph,
                })
            }
        };
        once(&self.doc_format, "{i}", "doc_format")?;
        once(&self.doc_format, "{doc}", "doc_format")?;
        once(&self.query_format, "{query}", "query_format")
    }

    pub fn instruction(&self) -> &str {
        &self.instruction
    }

    /// Builds a prompt over `docs` using this template's instruction.
    pub fn prompt(&self, docs: Vec<Document>, query: Query) -> ListwisePrompt {
        ListwisePrompt::new(self.instruction.clone(), docs, query)
    }

    /// Parses the section format:
    ///
    /// ```text
    /// [instruction]
    /// Given a query and some documents, rerank the documents
    /// [doc_format]
    /// [{i}] {doc}
    /// ```
    ///
    /// Section bodies are the lines up to the next header, joined by `\n`.
    /// Omitted sections keep their [`Default`] values.
    pub fn parse(text: &str) -> Result<Self, TemplateError> {
        let mut t = PromptTemplate::default();
        let mut current: Option<(&'static str, Vec<&str>)> = None;
        let flush = |t: &mut PromptTemplate, sec: Option<(&'static str, Vec<&str>)>| {
            if let Some((name, lines)) = sec {
                let body = lines.join("\n");
                match name {
                    "prefix" => t.prefix = body,
                    "suffix" => t.suffix = body,
                    "header" => t.header = body,
                    "doc_format" => t.doc_format = body,
                    "query_format" => t.query_format = body,
                    _ => t.instruction = body,
                }
            }
        };
        for (i, line) in text.lines().enumerate() {
            let trimmed = line.trim();
            if trimmed.len() > 2
                && trimmed.starts_with('[')
                && trimmed.ends_with(']')
                && trimmed[1..trimmed.len() - 1]
                    .chars()
                    .all(|c| c.is_ascii_lowercase() || c == '_')
            {
                let name = &trimmed[1..trimmed.len() - 1];
                let name: &'static str = match name {
                    "prefix" => "prefix",
                    "suffix" => "suffix",
                    "header" => "header",
                    "doc_format" => "doc_format",
                    "query_format" => "query_format",
                    "instruction" => "instruction",
                    other => {
                        return Err(TemplateError::UnknownSection {
                            line: i + 1,
                            name: other.to_string(),
                        })
                    }
                };
                flush(&mut t, current.take());
                current = Some((name, Vec::new()));
            } else if let Some((_, lines)) = current.as_mut() {
                lines.push(line);
            } else if !trimmed.is_empty() && !trimmed.starts_with('#') {
                return Err(TemplateError::Orphan { line: i + 1 });
            }
        }
        flush(&mut t, current.take());
        t.validate()?;
        Ok(t)
    }

    /// Section-format text that [`PromptTemplate::parse`] reads back.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (name, body) in [
            ("prefix", &self.prefix),
            ("instruction", &self.instruction),
            ("header", &self.header),
            ("doc_format", &self.doc_format),
            ("query_format", &self.query_format),
            ("suffix", &self.suffix),
        ] {
            out.push_str(&format!("[{name}]\n"));
            if !body.is_empty() {
                out.push_str(body);
                out.push('\n');
            }
        }
        out
    }

    pub fn load(path: &Path) -> Result<Self, TemplateError> {
        let text = std::fs::read_to_string(path).map_err(|e| TemplateError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::parse(&text)
    }
}

/// `(I, d_1, .., d_k, q)`. Documents are numbered 1..=k in the given order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ListwisePrompt {
    pub instruction: String,
    pub documents: Vec<Document>,
    pub query: Query,
}

impl ListwisePrompt {
    pub fn new(instruction: impl Into<String>, documents: Vec<Document>, query: Query) -> Self {
        ListwisePrompt {
            instruction: instruction.into(),
            documents,
            query,
        }
    }

    pub fn k(&self) -> usize {
        self.documents.len()
    }
}

/// Replaces each `(placeholder, value)` in one left-to-right pass, so values
/// that themselves contain placeholder text are left untouched.
fn fill(format: &str, subs: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(format.len() + 64);
    let mut rest = format;
    'outer: while !rest.is_empty() {
        for (ph, value) in subs {
            if let Some(tail) = rest.strip_prefix(ph) {
                out.push_str(value);
                rest = tail;
                continue 'outer;
            }
        }
        let ch = rest.chars().next().unwrap();
        out.push(ch);
        rest = &rest[ch.len_utf8()..];
    }
    out
}

pub fn render_listwise(p: &ListwisePrompt, t: &PromptTemplate) -> String {
    let mut lines: Vec<String> = Vec::with_capacity(p.documents.len() + 5);
    if !t.prefix.is_empty() {
        lines.push(t.prefix.clone());
    }
    lines.push(p.instruction.clone());
    lines.push(t.header.clone());
    for (i, d) in p.documents.iter().enumerate() {
        let idx = (i + 1).to_string();
        lines.push(fill(&t.doc_format, &[("{i}", &idx), ("{doc}", &d.text)]));
    }
    lines.push(fill(&t.query_format, &[("{query}", &p.query.text)]));
    if !t.suffix.is_empty() {
        lines.push(t.suffix.clone());
    }
    lines.join("\n")
}

/// First `max_tokens` whitespace-separated words of `text`.
pub fn truncate_words(text: &str, max_tokens: usize) -> String {
    text.split_whitespace()
        .take(max_tokens)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Token ids of the rendered prompt, with every document truncated to the
/// encoder's document length limit.
pub fn prompt_tokens(p: &ListwisePrompt, t: &PromptTemplate, encoder: &Encoder) -> Vec<TokenId> {
    let truncated = ListwisePrompt {
        instruction: p.instruction.clone(),
        documents: p
            .documents
            .iter()
            .map(|d| {
                Document::new(
                    d.id.clone(),
                    truncate_words(&d.text, encoder.max_doc_tokens),
                )
            })
            .collect(),
        query: p.query.clone(),
    };
    encoder
        .tokenizer()
        .tokenize(&render_listwise(&truncated, t))
}

/// The PRF query embedding.
pub fn encode_prompt(p: &ListwisePrompt, t: &PromptTemplate, encoder: &Encoder) -> Vector {
    encoder.encode_tokens(&prompt_tokens(p, t, encoder))
}
