use serde::{Deserialize, Serialize};
use unicode_general_category::{get_general_category, GeneralCategory};

use super::EvalError;

/// Annotator answers per question.
pub const GOLD_COUNT: usize = 10;

const ARTICLES: [&str; 3] = ["a", "an", "the"];

fn is_punctuation(c: char) -> bool {
    matches!(
        get_general_category(c),
        GeneralCategory::ConnectorPunctuation
            | GeneralCategory::DashPunctuation
            | GeneralCategory::OpenPunctuation
            | GeneralCategory::ClosePunctuation
            | GeneralCategory::InitialPunctuation
            | GeneralCategory::FinalPunctuation
            | GeneralCategory::OtherPunctuation
    )
}

/// Lowercases, turns dashes into spaces, drops punctuation and the whole-word
/// articles "a", "an", "the", and collapses whitespace.
pub fn normalize(answer: &str) -> String {
    let lower = answer.to_lowercase();
    let mut cleaned = String::with_capacity(lower.len());
    for c in lower.chars() {
        if get_general_category(c) == GeneralCategory::DashPunctuation {
            cleaned.push(' ');
        } else if !is_punctuation(c) {
            cleaned.push(c);
        }
    }
    cleaned.split_whitespace().filter(|w| !ARTICLES.contains(w)).collect::<Vec<_>>().join(" ")
}

/// Which form of the accuracy formula to apply.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricVariant {
    /// `min(matches / 3, 1)` over all ten answers.
    #[default]
    Simple,
    /// The same formula averaged over the ten leave-one-out subsets of nine.
    SubsetAveraged,
}

impl std::fmt::Display for MetricVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MetricVariant::Simple => "simple",
            MetricVariant::SubsetAveraged => "subset_averaged",
        })
    }
}

impl std::str::FromStr for MetricVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "simple" => Ok(MetricVariant::Simple),
            "subset_averaged" => Ok(MetricVariant::SubsetAveraged),
            _ => Err(format!("unknown metric variant {s:?}")),
        }
    }
}

/// Simple-variant accuracy of one prediction against ten gold answers.
pub fn vqa_score(prediction: &str, gold: &[String]) -> Result<f64, EvalError> {
    vqa_score_with(prediction, gold, MetricVariant::Simple)
}

pub fn vqa_score_with(prediction: &str, gold: &[String], variant: MetricVariant) -> Result<f64, EvalError> {
    if gold.len() != GOLD_COUNT {
        return Err(EvalError::GoldCount(gold.len()));
    }
    let p = normalize(prediction);
    let hits: Vec<bool> = gold.iter().map(|g| normalize(g) == p).collect();
    let matches = hits.iter().filter(|&&h| h).count();
    let acc = |n: usize| (n as f64 / 3.0).min(1.0);
    Ok(match variant {
        MetricVariant::Simple => acc(matches),
        MetricVariant::SubsetAveraged => {
            hits.iter().map(|&h| acc(matches - usize::from(h))).sum::<f64>() / GOLD_COUNT as f64
        }
    })
}
