use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::metric::{normalize, vqa_score_with, MetricVariant};
use super::EvalError;
use crate::implicit::QAExample;

/// One line of a predictions file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub qid: String,
    pub answer: String,
    pub logprob: f64,
}

pub fn write_predictions<W: Write>(mut sink: W, predictions: &[Prediction]) -> std::io::Result<()> {
    for p in predictions {
        writeln!(sink, "{}", serde_json::to_string(p).expect("prediction serializes"))?;
    }
    sink.flush()
}

pub fn read_predictions<R: BufRead>(source: R) -> Result<Vec<Prediction>, EvalError> {
    let mut out = Vec::new();
    for (i, line) in source.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| EvalError::Malformed { line: i + 1, reason: e.to_string() })?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryScore {
    pub accuracy: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleScore {
    pub prediction: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub overall_accuracy: f64,
    pub per_category: BTreeMap<String, CategoryScore>,
    pub per_example: BTreeMap<String, ExampleScore>,
    pub metric_variant: MetricVariant,
    pub config_fingerprint: String,
}

impl EvalReport {
    /// Pretty JSON with a trailing newline; key order is fixed, so equal
    /// reports serialize to identical bytes.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, EvalError> {
        serde_json::from_str(text).map_err(|e| EvalError::Malformed { line: e.line(), reason: e.to_string() })
    }

    /// Terminal table: one row per category, then the overall line.
    pub fn render_table(&self) -> String {
        let width = self.per_category.keys().map(|k| k.chars().count()).max().unwrap_or(0).max("overall".len());
        let mut out = String::new();
        let _ = writeln!(out, "{:<width$}  {:>8}  {:>5}", "category", "accuracy", "n");
        for (name, c) in &self.per_category {
            let _ = writeln!(out, "{:<width$}  {:>7.2}%  {:>5}", name, c.accuracy * 100.0, c.count);
        }
        let _ = writeln!(out, "{:<width$}  {:>7.2}%  {:>5}", "overall", self.overall_accuracy * 100.0, self.per_example.len());
        let _ = writeln!(out, "metric: {}  fingerprint: {}", self.metric_variant, self.config_fingerprint);
        out
    }
}

/// Scores every dataset example and aggregates overall and per category.
pub fn evaluate(
    predictions: &BTreeMap<String, String>,
    dataset: &[QAExample],
    variant: MetricVariant,
    config_fingerprint: &str,
) -> Result<EvalReport, EvalError> {
    let missing: Vec<String> = dataset.iter().filter(|e| !predictions.contains_key(&e.qid)).map(|e| e.qid.clone()).collect();
    if !missing.is_empty() {
        return Err(EvalError::MissingPredictions(missing));
    }
    let mut per_example = BTreeMap::new();
    let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for ex in dataset {
        let prediction = predictions[&ex.qid].clone();
        let score = vqa_score_with(&prediction, &ex.answers, variant).map_err(|e| EvalError::Example {
            qid: ex.qid.clone(),
            reason: e.to_string(),
        })?;
        let slot = sums.entry(ex.category.clone()).or_insert((0.0, 0));
        slot.0 += score;
        slot.1 += 1;
        per_example.insert(ex.qid.clone(), ExampleScore { prediction, score });
    }
    let overall_accuracy = if per_example.is_empty() {
        0.0
    } else {
        per_example.values().map(|e| e.score).sum::<f64>() / per_example.len() as f64
    };
    let per_category = sums
        .into_iter()
        .map(|(k, (sum, count))| (k, CategoryScore { accuracy: sum / count as f64, count }))
        .collect();
    Ok(EvalReport {
        overall_accuracy,
        per_category,
        per_example,
        metric_variant: variant,
        config_fingerprint: config_fingerprint.to_string(),
    })
}

/// Mean of overall accuracies across runs (the "average over seeds" figure,
/// distinct from [`ensemble`]).
pub fn mean_accuracy(reports: &[EvalReport]) -> Option<f64> {
    (!reports.is_empty()).then(|| reports.iter().map(|r| r.overall_accuracy).sum::<f64>() / reports.len() as f64)
}

/// Majority vote over normalized answers per question. Ties go to the higher
/// mean log-probability, then to the lexicographically smaller normalized
/// answer. The returned string is the first raw answer of the winning group.
pub fn ensemble(per_seed: &[BTreeMap<String, (String, f64)>]) -> Result<BTreeMap<String, String>, EvalError> {
    let Some(first) = per_seed.first() else {
        return Err(EvalError::Contract("ensemble needs at least one seed".into()));
    };
    for (i, seed) in per_seed.iter().enumerate().skip(1) {
        if seed.len() != first.len() || seed.keys().zip(first.keys()).any(|(a, b)| a != b) {
            return Err(EvalError::Contract(format!("seed {i} predicts a different set of questions than seed 0")));
        }
    }
    let mut out = BTreeMap::new();
    for qid in first.keys() {
        // normalized answer -> (votes, logprob sum, first raw answer)
        let mut groups: BTreeMap<String, (usize, f64, &str)> = BTreeMap::new();
        for seed in per_seed {
            let (answer, logprob) = &seed[qid];
            let g = groups.entry(normalize(answer)).or_insert((0, 0.0, answer.as_str()));
            g.0 += 1;
            g.1 += logprob;
        }
        let mut best: Option<(&String, &(usize, f64, &str))> = None;
        for cand in &groups {
            let better = match best {
                None => true,
                Some((_, b)) => {
                    let (cm, bm) = (cand.1 .1 / cand.1 .0 as f64, b.1 / b.0 as f64);
                    cand.1 .0 > b.0 || (cand.1 .0 == b.0 && cm > bm)
                }
            };
            if better {
                best = Some(cand);
            }
        }
        let (_, winner) = best.expect("at least one seed");
        out.insert(qid.clone(), winner.2.to_string());
    }
    Ok(out)
}
