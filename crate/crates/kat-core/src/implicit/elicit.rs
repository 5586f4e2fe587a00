use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::lm::{prompt_hash, LmClient, LmError};
use super::prompt::{build_answer_prompt, build_evidence_prompt};
use super::QAExample;

/// A tentative answer and the evidence offered for it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImplicitItem {
    pub answer: String,
    pub evidence: String,
}

impl ImplicitItem {
    pub fn new(answer: impl Into<String>, evidence: impl Into<String>) -> Self {
        Self { answer: answer.into(), evidence: evidence.into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElicitConfig {
    /// Number of answer completions requested per example.
    pub p: usize,
    pub with_evidence: bool,
    /// Temperature for every answer completion after the first.
    pub sample_temperature: f64,
    pub answer_max_tokens: usize,
    pub evidence_max_tokens: usize,
}

impl Default for ElicitConfig {
    fn default() -> Self {
        Self { p: 5, with_evidence: true, sample_temperature: 0.7, answer_max_tokens: 10, evidence_max_tokens: 48 }
    }
}

#[derive(Debug, Error)]
pub enum ElicitError {
    #[error("p must be at least 1")]
    ZeroCandidates,
    #[error("question {qid}: completion failed for prompt {prompt_sha256}: {source}")]
    Client {
        qid: String,
        prompt_sha256: String,
        #[source]
        source: LmError,
    },
}

/// Items for one example plus non-fatal warnings (skipped empty completions).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Elicitation {
    pub items: Vec<ImplicitItem>,
    pub warnings: Vec<String>,
}

fn clean_answer(completion: &str) -> String {
    completion.split('\n').next().unwrap_or("").trim().to_lowercase()
}

/// First sentence of a completion, terminator included.
fn first_sentence(completion: &str) -> String {
    let text = completion.trim_start();
    let line = text.split('\n').next().unwrap_or("");
    let mut end = line.len();
    let mut chars = line.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        if matches!(c, '.' | '!' | '?') && chars.peek().is_none_or(|(_, n)| n.is_whitespace()) {
            end = i + c.len_utf8();
            break;
        }
    }
    line[..end].trim().to_string()
}

/// Queries the answer prompt `p` times (temperature 0 first, sampled after),
/// keeps distinct non-empty candidates in order, and optionally asks for
/// evidence behind each one.
pub fn elicit(
    target: &QAExample,
    exemplars: &[QAExample],
    client: &dyn LmClient,
    cfg: &ElicitConfig,
) -> Result<Elicitation, ElicitError> {
    if cfg.p == 0 {
        return Err(ElicitError::ZeroCandidates);
    }
    let call = |prompt: &str, max_tokens: usize, temperature: f64| {
        client.complete(prompt, max_tokens, temperature).map_err(|source| ElicitError::Client {
            qid: target.qid.clone(),
            prompt_sha256: prompt_hash(prompt),
            source,
        })
    };
    let prompt = build_answer_prompt(target, exemplars);
    let mut out = Elicitation::default();
    let mut candidates: Vec<String> = Vec::with_capacity(cfg.p);
    for i in 0..cfg.p {
        let temperature = if i == 0 { 0.0 } else { cfg.sample_temperature };
        let answer = clean_answer(&call(&prompt, cfg.answer_max_tokens, temperature)?);
        if answer.is_empty() {
            let msg = format!("{}: empty completion for candidate {i} skipped", target.qid);
            log::warn!("{msg}");
            out.warnings.push(msg);
            continue;
        }
        if !candidates.contains(&answer) {
            candidates.push(answer);
        }
    }
    for answer in candidates {
        let evidence = if cfg.with_evidence {
            let ep = build_evidence_prompt(&target.question, &answer);
            first_sentence(&call(&ep, cfg.evidence_max_tokens, 0.0)?)
        } else {
            String::new()
        };
        out.items.push(ImplicitItem { answer, evidence });
    }
    Ok(out)
}

/// Line record of the implicit-knowledge file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImplicitRecord {
    pub qid: String,
    pub items: Vec<ImplicitItem>,
}

pub fn write_implicit<W: Write>(mut sink: W, records: &[ImplicitRecord]) -> std::io::Result<()> {
    for r in records {
        writeln!(sink, "{}", serde_json::to_string(r).expect("record serializes"))?;
    }
    sink.flush()
}

pub fn read_implicit<R: BufRead>(source: R) -> Result<Vec<ImplicitRecord>, LmError> {
    let mut out = Vec::new();
    for (i, line) in source.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| LmError::BadTranscript { line: i + 1, reason: e.to_string() })?);
    }
    Ok(out)
}
