use std::collections::{HashMap, VecDeque};
use std::io::{BufRead, Write};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::binio::sha256_hex;

#[derive(Debug, Error)]
pub enum LmError {
    #[error("no recorded completion for prompt {0}")]
    CacheMiss(String),
    #[error("scripted client exhausted")]
    Exhausted,
    #[error("transcript line {line}: {reason}")]
    BadTranscript { line: usize, reason: String },
    #[error("language model request failed: {0}")]
    Request(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A text-completion language model.
pub trait LmClient: Send + Sync {
    fn complete(&self, prompt: &str, max_tokens: usize, temperature: f64) -> Result<String, LmError>;
}

/// Hex SHA-256 of a prompt, the transcript key.
pub fn prompt_hash(prompt: &str) -> String {
    sha256_hex(prompt.as_bytes())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptRecord {
    pub prompt_sha256: String,
    pub completion: String,
}

/// Ordered journal of `(prompt hash, completion)` records.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Transcript {
    pub records: Vec<TranscriptRecord>,
}

impl Transcript {
    pub fn read<R: BufRead>(source: R) -> Result<Self, LmError> {
        let mut records = Vec::new();
        for (i, line) in source.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec = serde_json::from_str(&line).map_err(|e| LmError::BadTranscript { line: i + 1, reason: e.to_string() })?;
            records.push(rec);
        }
        Ok(Self { records })
    }

    pub fn write<W: Write>(&self, mut sink: W) -> std::io::Result<()> {
        for r in &self.records {
            writeln!(sink, "{}", serde_json::to_string(r).expect("record serializes"))?;
        }
        sink.flush()
    }
}

/// Serves completions from a transcript. Repeated records for one prompt are
/// returned in journal order; once exhausted the last one keeps repeating.
/// A prompt with no record is a [`LmError::CacheMiss`].
#[derive(Debug)]
pub struct ReplayClient {
    by_prompt: HashMap<String, Vec<String>>,
    cursor: Mutex<HashMap<String, usize>>,
}

impl ReplayClient {
    pub fn new(transcript: &Transcript) -> Self {
        let mut by_prompt: HashMap<String, Vec<String>> = HashMap::new();
        for r in &transcript.records {
            by_prompt.entry(r.prompt_sha256.clone()).or_default().push(r.completion.clone());
        }
        Self { by_prompt, cursor: Mutex::new(HashMap::new()) }
    }
}

impl LmClient for ReplayClient {
    fn complete(&self, prompt: &str, _max_tokens: usize, _temperature: f64) -> Result<String, LmError> {
        let key = prompt_hash(prompt);
        let recorded = self.by_prompt.get(&key).ok_or_else(|| LmError::CacheMiss(key.clone()))?;
        let mut cursor = self.cursor.lock().expect("replay cursor lock");
        let at = cursor.entry(key).or_insert(0);
        let out = recorded[(*at).min(recorded.len() - 1)].clone();
        *at += 1;
        Ok(out)
    }
}

/// Wraps a client and journals every successful completion.
pub struct RecordingClient<C> {
    inner: C,
    journal: Mutex<Transcript>,
}

impl<C: LmClient> RecordingClient<C> {
    pub fn new(inner: C) -> Self {
        Self { inner, journal: Mutex::new(Transcript::default()) }
    }

    pub fn transcript(&self) -> Transcript {
        self.journal.lock().expect("journal lock").clone()
    }
}

impl<C: LmClient> LmClient for RecordingClient<C> {
    fn complete(&self, prompt: &str, max_tokens: usize, temperature: f64) -> Result<String, LmError> {
        let completion = self.inner.complete(prompt, max_tokens, temperature)?;
        self.journal
            .lock()
            .expect("journal lock")
            .records
            .push(TranscriptRecord { prompt_sha256: prompt_hash(prompt), completion: completion.clone() });
        Ok(completion)
    }
}

/// Returns scripted completions in order, ignoring the prompt.
#[derive(Debug, Default)]
pub struct ScriptedClient {
    queue: Mutex<VecDeque<String>>,
}

impl ScriptedClient {
    pub fn new<I, S>(responses: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self { queue: Mutex::new(responses.into_iter().map(Into::into).collect()) }
    }
}

impl LmClient for ScriptedClient {
    fn complete(&self, _prompt: &str, _max_tokens: usize, _temperature: f64) -> Result<String, LmError> {
        self.queue.lock().expect("script lock").pop_front().ok_or(LmError::Exhausted)
    }
}
