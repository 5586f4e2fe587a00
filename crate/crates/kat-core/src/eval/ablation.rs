use std::collections::BTreeMap;
use std::io::Write;

use super::metric::MetricVariant;
use super::report::{evaluate, EvalReport, Prediction};
use super::EvalError;
use crate::fusion::{encode_example, EncodedExample, FusionModel, KnowledgeConfig, Tokenizer};
use crate::implicit::{ImplicitItem, QAExample};
use crate::kb::KnowledgeEntry;
use crate::Scalar;

/// Retrieved and elicited knowledge for a dataset.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KnowledgeInputs {
    /// Ranked explicit entries per image id.
    pub explicit: BTreeMap<String, Vec<KnowledgeEntry>>,
    /// Implicit items per question id.
    pub implicit: BTreeMap<String, Vec<ImplicitItem>>,
}

impl KnowledgeInputs {
    /// Knowledge fed to `config` for one example, with explicit entries cut
    /// to the top `m`.
    pub fn select(&self, example: &QAExample, config: KnowledgeConfig, m: usize) -> (Vec<KnowledgeEntry>, Vec<ImplicitItem>) {
        let explicit = if config.uses_explicit() {
            self.explicit.get(&example.image_id).map(|v| v.iter().take(m).cloned().collect()).unwrap_or_default()
        } else {
            Vec::new()
        };
        let implicit = if config.uses_implicit() { self.implicit.get(&example.qid).cloned().unwrap_or_default() } else { Vec::new() };
        (explicit, implicit)
    }

    /// Tokenized example for `model`'s reasoning mode; the primary answer is
    /// the target when `with_answer` is set.
    pub fn encode<T: Scalar>(
        &self,
        model: &FusionModel<T>,
        tokenizer: &Tokenizer,
        example: &QAExample,
        config: KnowledgeConfig,
        m: usize,
        with_answer: bool,
    ) -> EncodedExample {
        let (explicit, implicit) = self.select(example, config, m);
        let answer = with_answer.then(|| example.primary_answer());
        encode_example(tokenizer, model.config(), &example.question, &explicit, &implicit, answer)
    }
}

/// Greedy predictions for every example.
pub fn predict_dataset<T: Scalar>(
    model: &FusionModel<T>,
    tokenizer: &Tokenizer,
    dataset: &[QAExample],
    knowledge: &KnowledgeInputs,
    config: KnowledgeConfig,
    m: usize,
) -> Result<Vec<Prediction>, EvalError> {
    if config == KnowledgeConfig::ExplicitOnly && m == 0 {
        return Err(EvalError::Contract("explicit_only with m=0 leaves no knowledge rows".into()));
    }
    if model.config().reasoning != config.reasoning() {
        return Err(EvalError::Contract(format!("model reasoning mode does not fit {config}")));
    }
    let max_len = model.config().max_answer_len;
    dataset
        .iter()
        .map(|ex| {
            let enc = knowledge.encode(model, tokenizer, ex, config, m, false);
            let g = model
                .generate(tokenizer, &enc, max_len)
                .map_err(|e| EvalError::Example { qid: ex.qid.clone(), reason: e.to_string() })?;
            Ok(Prediction { qid: ex.qid.clone(), answer: g.answer, logprob: g.logprob })
        })
        .collect()
}

/// One cell of an ablation table.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub config: KnowledgeConfig,
    pub m: usize,
    pub report: EvalReport,
}

/// Evaluates `config` at every `m` in `m_sweep` (ascending), truncating the
/// explicit knowledge to the top `m` before encoding.
#[allow(clippy::too_many_arguments)]
pub fn ablation_run<T: Scalar>(
    dataset: &[QAExample],
    knowledge: &KnowledgeInputs,
    config: KnowledgeConfig,
    m_sweep: &[usize],
    model: Option<(&FusionModel<T>, &Tokenizer)>,
    variant: MetricVariant,
    config_fingerprint: &str,
) -> Result<Vec<SweepCell>, EvalError> {
    let mut ms = m_sweep.to_vec();
    ms.sort_unstable();
    ms.dedup();
    let mut out = Vec::with_capacity(ms.len());
    for m in ms {
        if config == KnowledgeConfig::ExplicitOnly && m == 0 {
            return Err(EvalError::Contract("explicit_only with m=0 leaves no knowledge rows".into()));
        }
        let Some((model, tokenizer)) = model else {
            return Err(EvalError::MissingCheckpoint { config: config.to_string(), m });
        };
        let preds = predict_dataset(model, tokenizer, dataset, knowledge, config, m)?;
        let map: BTreeMap<String, String> = preds.into_iter().map(|p| (p.qid, p.answer)).collect();
        let report = evaluate(&map, dataset, variant, config_fingerprint)?;
        out.push(SweepCell { config, m, report });
    }
    Ok(out)
}

/// Writes `config,m,accuracy` rows.
pub fn write_sweep_csv<W: Write>(mut sink: W, cells: &[SweepCell]) -> std::io::Result<()> {
    writeln!(sink, "config,m,accuracy")?;
    for c in cells {
        writeln!(sink, "{},{},{:.6}", c.config, c.m, c.report.overall_accuracy)?;
    }
    sink.flush()
}
