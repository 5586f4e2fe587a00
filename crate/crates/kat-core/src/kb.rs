//! Entity knowledge base: ingestion of line-delimited entity dumps, filtering
//! and rendering of entries into retrievable text.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default minimum share of ASCII-printable characters for a field to count
/// as English.
pub const DEFAULT_ASCII_THRESHOLD: f64 = 0.9;

const STORE_FORMAT: &str = "kat-kb";
const STORE_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum KbError {
    #[error("line {line}: malformed record: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("line {line}: duplicate entity id {id:?}")]
    DuplicateId { line: usize, id: String },
    #[error("line {line}: unknown subclass {value:?}")]
    UnknownSubclass { line: usize, value: String },
    #[error("bad knowledge-base store header: {0}")]
    BadHeader(String),
    #[error("store header declares {declared} entries but {found} were read")]
    CountMismatch { declared: usize, found: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Entity categories of the knowledge base.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Subclass {
    Role,
    PointOfInterest,
    Tool,
    Vehicle,
    Animal,
    Clothing,
    Company,
    Sport,
}

impl Subclass {
    pub const ALL: [Subclass; 8] = [
        Subclass::Role,
        Subclass::PointOfInterest,
        Subclass::Tool,
        Subclass::Vehicle,
        Subclass::Animal,
        Subclass::Clothing,
        Subclass::Company,
        Subclass::Sport,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Subclass::Role => "Role",
            Subclass::PointOfInterest => "PointOfInterest",
            Subclass::Tool => "Tool",
            Subclass::Vehicle => "Vehicle",
            Subclass::Animal => "Animal",
            Subclass::Clothing => "Clothing",
            Subclass::Company => "Company",
            Subclass::Sport => "Sport",
        }
    }
}

impl fmt::Display for Subclass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Subclass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Subclass::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| s.to_string())
    }
}

/// One entity triplet plus its rendered text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KnowledgeEntry {
    pub id: String,
    pub label: String,
    pub description: String,
    pub subclass: Subclass,
    pub rendered_text: String,
}

impl KnowledgeEntry {
    pub fn new(id: impl Into<String>, label: impl Into<String>, description: impl Into<String>, subclass: Subclass) -> Self {
        let label = label.into();
        let description = description.into();
        let rendered_text = render(&label, &description);
        Self { id: id.into(), label, description, subclass, rendered_text }
    }
}

/// Renders an entry as `label. description`.
pub fn render_entry(entry: &KnowledgeEntry) -> String {
    render(&entry.label, &entry.description)
}

fn render(label: &str, description: &str) -> String {
    let mut s = format!("{}. {}", label.trim_end(), description.trim());
    s.truncate(s.trim_end().len());
    s
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DumpRecord {
    id: String,
    label: String,
    description: String,
    subclass: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct StoreHeader {
    format: String,
    version: u32,
    count: usize,
}

/// Filtering rules applied during ingestion.
#[derive(Debug, Clone, Copy)]
pub struct IngestOptions {
    /// Minimum fraction of ASCII-printable characters in label and
    /// description for the record to be kept.
    pub ascii_threshold: f64,
}

impl Default for IngestOptions {
    fn default() -> Self {
        Self { ascii_threshold: DEFAULT_ASCII_THRESHOLD }
    }
}

/// Share of characters in `s` that are printable ASCII (space through `~`).
pub fn ascii_printable_share(s: &str) -> f64 {
    let mut total = 0usize;
    let mut printable = 0usize;
    for c in s.chars() {
        total += 1;
        if (' '..='~').contains(&c) {
            printable += 1;
        }
    }
    if total == 0 {
        0.0
    } else {
        printable as f64 / total as f64
    }
}

/// The keep/drop predicate of ingestion.
pub fn passes_filter(label: &str, description: &str, opts: &IngestOptions) -> bool {
    let (label, description) = (label.trim(), description.trim());
    !label.is_empty()
        && !description.is_empty()
        && ascii_printable_share(label) >= opts.ascii_threshold
        && ascii_printable_share(description) >= opts.ascii_threshold
}

/// Immutable, id-ordered collection of knowledge entries.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KnowledgeBase {
    entries: Vec<KnowledgeEntry>,
    counts_by_subclass: BTreeMap<Subclass, usize>,
}

impl KnowledgeBase {
    /// Builds a knowledge base from already-validated entries. Entries are
    /// sorted by id; duplicate ids are rejected.
    pub fn from_entries(mut entries: Vec<KnowledgeEntry>) -> Result<Self, KbError> {
        entries.sort_by(|a, b| a.id.cmp(&b.id));
        if let Some(w) = entries.windows(2).find(|w| w[0].id == w[1].id) {
            return Err(KbError::DuplicateId { line: 0, id: w[0].id.clone() });
        }
        let mut counts_by_subclass = BTreeMap::new();
        for e in &entries {
            *counts_by_subclass.entry(e.subclass).or_insert(0) += 1;
        }
        Ok(Self { entries, counts_by_subclass })
    }

    pub fn entries(&self) -> &[KnowledgeEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn counts_by_subclass(&self) -> &BTreeMap<Subclass, usize> {
        &self.counts_by_subclass
    }

    pub fn get(&self, id: &str) -> Option<&KnowledgeEntry> {
        self.entries
            .binary_search_by(|e| e.id.as_str().cmp(id))
            .ok()
            .map(|i| &self.entries[i])
    }

    /// Writes the store format: a header line followed by one record per line
    /// in ascending id order.
    pub fn write_store<W: Write>(&self, mut out: W) -> Result<(), KbError> {
        let header = StoreHeader { format: STORE_FORMAT.into(), version: STORE_VERSION, count: self.entries.len() };
        writeln!(out, "{}", serde_json::to_string(&header).expect("header serializes"))?;
        for e in &self.entries {
            let rec = DumpRecord {
                id: e.id.clone(),
                label: e.label.clone(),
                description: e.description.clone(),
                subclass: e.subclass.as_str().into(),
            };
            writeln!(out, "{}", serde_json::to_string(&rec).expect("record serializes"))?;
        }
        out.flush()?;
        Ok(())
    }

    /// Reads a store written by [`KnowledgeBase::write_store`].
    pub fn read_store<R: BufRead>(input: R) -> Result<Self, KbError> {
        let mut lines = input.lines();
        let header_line = lines.next().ok_or_else(|| KbError::BadHeader("empty store".into()))??;
        let header: StoreHeader =
            serde_json::from_str(&header_line).map_err(|e| KbError::BadHeader(e.to_string()))?;
        if header.format != STORE_FORMAT || header.version != STORE_VERSION {
            return Err(KbError::BadHeader(format!("unsupported {} v{}", header.format, header.version)));
        }
        let mut entries = Vec::with_capacity(header.count);
        let mut seen = HashSet::new();
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let entry = parse_record(&line, i + 2, &mut seen)?;
            entries.push(entry);
        }
        if entries.len() != header.count {
            return Err(KbError::CountMismatch { declared: header.count, found: entries.len() });
        }
        Self::from_entries(entries)
    }
}

fn parse_record(line: &str, line_no: usize, seen: &mut HashSet<String>) -> Result<KnowledgeEntry, KbError> {
    let rec: DumpRecord =
        serde_json::from_str(line).map_err(|e| KbError::Malformed { line: line_no, reason: e.to_string() })?;
    let subclass = rec
        .subclass
        .parse::<Subclass>()
        .map_err(|value| KbError::UnknownSubclass { line: line_no, value })?;
    if !seen.insert(rec.id.clone()) {
        return Err(KbError::DuplicateId { line: line_no, id: rec.id });
    }
    Ok(KnowledgeEntry::new(rec.id, rec.label.trim(), rec.description.trim(), subclass))
}

/// Ingests a line-delimited entity dump, keeping only records that pass the
/// filter. Blank lines are ignored; line numbers in errors are 1-based.
pub fn ingest_dump<R: BufRead>(source: R, opts: &IngestOptions) -> Result<KnowledgeBase, KbError> {
    let mut seen = HashSet::new();
    let mut kept = Vec::new();
    for (i, line) in source.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let entry = parse_record(&line, i + 1, &mut seen)?;
        if passes_filter(&entry.label, &entry.description, opts) {
            kept.push(entry);
        }
    }
    KnowledgeBase::from_entries(kept)
}
