use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Question categories of the benchmark's breakdown report.
pub const CATEGORIES: [&str; 11] = [
    "Plants and Animals",
    "Science and Technology",
    "Sports and Recreation",
    "Geo, History, Lang, and Culture",
    "Brands, Companies, and Products",
    "Vehicles and Transportation",
    "Cooking and Food",
    "Weather and Climate",
    "People and Everyday",
    "Objects, Material and Clothing",
    "Other",
];

pub const UNKNOWN_CATEGORY: &str = "unknown";

fn default_category() -> String {
    UNKNOWN_CATEGORY.to_string()
}

fn default_side() -> u32 {
    224
}

/// One question about one image, with its annotator answers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QAExample {
    pub qid: String,
    pub image_id: String,
    pub question: String,
    /// Textual description of the image.
    pub caption: String,
    pub answers: Vec<String>,
    #[serde(default = "default_category")]
    pub category: String,
    #[serde(default = "default_side")]
    pub width: u32,
    #[serde(default = "default_side")]
    pub height: u32,
}

impl QAExample {
    pub fn new(qid: &str, image_id: &str, question: &str, caption: &str, answers: Vec<String>) -> Self {
        Self {
            qid: qid.into(),
            image_id: image_id.into(),
            question: question.into(),
            caption: caption.into(),
            answers,
            category: default_category(),
            width: default_side(),
            height: default_side(),
        }
    }

    /// The answer used as a training target and in exemplar blocks.
    pub fn primary_answer(&self) -> &str {
        self.answers.first().map(String::as_str).unwrap_or("")
    }
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("duplicate qid {0:?}")]
    DuplicateQid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Reads a line-delimited dataset. Every example needs a non-empty question,
/// at least one answer and a known category.
pub fn read_dataset<R: BufRead>(source: R) -> Result<Vec<QAExample>, DatasetError> {
    let mut out: Vec<QAExample> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (i, line) in source.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |reason: String| DatasetError::Malformed { line: i + 1, reason };
        let ex: QAExample = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
        if ex.question.trim().is_empty() {
            return Err(bad("empty question".into()));
        }
        if ex.answers.is_empty() {
            return Err(bad("no answers".into()));
        }
        if ex.category != UNKNOWN_CATEGORY && !CATEGORIES.contains(&ex.category.as_str()) {
            return Err(bad(format!("unknown category {:?}", ex.category)));
        }
        if !seen.insert(ex.qid.clone()) {
            return Err(DatasetError::DuplicateQid(ex.qid));
        }
        out.push(ex);
    }
    Ok(out)
}

pub fn write_dataset<W: Write>(mut sink: W, examples: &[QAExample]) -> std::io::Result<()> {
    for ex in examples {
        writeln!(sink, "{}", serde_json::to_string(ex).expect("example serializes"))?;
    }
    sink.flush()
}
