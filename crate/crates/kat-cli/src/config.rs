//! Run configuration: one TOML file plus dotted `--set` overrides.

use std::path::{Path, PathBuf};

use kat_core::eval::MetricVariant;
use kat_core::fusion::{FusionConfig, KnowledgeConfig, Schedule};
use kat_core::implicit::ElicitConfig;
use kat_core::retriever::WindowConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use toml::Value;

use crate::CliError;

/// Artifact locations. Relative paths resolve against the config file's
/// directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub kb_dump: PathBuf,
    pub kb_store: PathBuf,
    /// Source vectors for `retrieval.provider = "file"`.
    #[serde(default)]
    pub precomputed_embeddings: Option<PathBuf>,
    pub embeddings: PathBuf,
    pub index: PathBuf,
    pub dataset_train: PathBuf,
    pub dataset_test: PathBuf,
    pub retrieved: PathBuf,
    pub lm_transcript: PathBuf,
    pub implicit_out: PathBuf,
    pub checkpoints: PathBuf,
    pub reports: PathBuf,
}

impl Paths {
    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for p in [
            &mut self.kb_dump,
            &mut self.kb_store,
            &mut self.embeddings,
            &mut self.index,
            &mut self.dataset_train,
            &mut self.dataset_test,
            &mut self.retrieved,
            &mut self.lm_transcript,
            &mut self.implicit_out,
            &mut self.checkpoints,
            &mut self.reports,
        ] {
            fix(p);
        }
        if let Some(p) = self.precomputed_embeddings.as_mut() {
            fix(p);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KbSection {
    pub ascii_threshold: f64,
}

impl Default for KbSection {
    fn default() -> Self {
        Self { ascii_threshold: kat_core::kb::DEFAULT_ASCII_THRESHOLD }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    /// Seeded pseudo-random vectors; useful only for plumbing tests.
    Hash,
    /// Vectors copied from `paths.precomputed_embeddings`.
    File,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalSection {
    pub d_r: usize,
    pub window_fraction: f64,
    pub stride_fraction: f64,
    pub include_full: bool,
    pub k: usize,
    pub m: usize,
    pub provider: ProviderKind,
    pub provider_seed: u64,
}

impl Default for RetrievalSection {
    fn default() -> Self {
        let w = WindowConfig::default();
        Self {
            d_r: 512,
            window_fraction: w.window_fraction,
            stride_fraction: w.stride_fraction,
            include_full: w.include_full,
            k: 10,
            m: kat_core::retriever::DEFAULT_M,
            provider: ProviderKind::Hash,
            provider_seed: 0,
        }
    }
}

impl RetrievalSection {
    pub fn window(&self) -> WindowConfig {
        WindowConfig {
            window_fraction: self.window_fraction,
            stride_fraction: self.stride_fraction,
            include_full: self.include_full,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LmMode {
    Replay,
    Live,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImplicitSection {
    pub n_exemplars: usize,
    pub p: usize,
    pub with_evidence: bool,
    pub sample_temperature: f64,
    pub answer_max_tokens: usize,
    pub evidence_max_tokens: usize,
    pub lm_mode: LmMode,
    pub endpoint: String,
    pub model: String,
}

impl Default for ImplicitSection {
    fn default() -> Self {
        let e = ElicitConfig::default();
        Self {
            n_exemplars: 8,
            p: e.p,
            with_evidence: e.with_evidence,
            sample_temperature: e.sample_temperature,
            answer_max_tokens: e.answer_max_tokens,
            evidence_max_tokens: e.evidence_max_tokens,
            lm_mode: LmMode::Replay,
            endpoint: "https://api.openai.com/v1/completions".into(),
            model: "davinci-002".into(),
        }
    }
}

impl ImplicitSection {
    pub fn elicit_config(&self) -> ElicitConfig {
        ElicitConfig {
            p: self.p,
            with_evidence: self.with_evidence,
            sample_temperature: self.sample_temperature,
            answer_max_tokens: self.answer_max_tokens,
            evidence_max_tokens: self.evidence_max_tokens,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleSection {
    pub lr: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
    pub batch_size: usize,
    pub weight_decay: f64,
    /// 0 disables clipping.
    pub max_grad_norm: f64,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        let s = Schedule::default();
        Self {
            lr: s.lr,
            warmup_steps: s.warmup_steps,
            total_steps: s.total_steps,
            batch_size: s.batch_size,
            weight_decay: s.weight_decay,
            max_grad_norm: s.max_grad_norm.unwrap_or(0.0),
        }
    }
}

/// Architecture fields of [`FusionConfig`]; the vocabulary size comes from
/// the fitted tokenizer, the seed from `eval.seeds` and the reasoning mode
/// from the knowledge configuration being trained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionSection {
    pub d: usize,
    pub layers_enc: usize,
    pub layers_dec: usize,
    pub heads: usize,
    pub d_ff: usize,
    pub max_pair_len: usize,
    pub max_answer_len: usize,
    pub init_std: f64,
    pub schedule: ScheduleSection,
}

impl Default for FusionSection {
    fn default() -> Self {
        let t = FusionConfig::toy(16);
        Self {
            d: t.d,
            layers_enc: t.layers_enc,
            layers_dec: t.layers_dec,
            heads: t.heads,
            d_ff: t.d_ff,
            max_pair_len: t.max_pair_len,
            max_answer_len: t.max_answer_len,
            init_std: t.init_std,
            schedule: ScheduleSection::default(),
        }
    }
}

impl FusionSection {
    pub fn model_config(&self, vocab_size: usize, seed: u64, knowledge: KnowledgeConfig) -> FusionConfig {
        FusionConfig {
            d: self.d,
            layers_enc: self.layers_enc,
            layers_dec: self.layers_dec,
            heads: self.heads,
            d_ff: self.d_ff,
            max_pair_len: self.max_pair_len,
            max_answer_len: self.max_answer_len,
            vocab_size,
            seed,
            init_std: self.init_std,
            reasoning: knowledge.reasoning(),
        }
    }

    pub fn schedule(&self, seed: u64) -> Schedule {
        let s = &self.schedule;
        Schedule {
            lr: s.lr,
            warmup_steps: s.warmup_steps,
            total_steps: s.total_steps,
            batch_size: s.batch_size,
            weight_decay: s.weight_decay,
            seed,
            max_grad_norm: (s.max_grad_norm > 0.0).then_some(s.max_grad_norm),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub metric_variant: MetricVariant,
    pub seeds: Vec<u64>,
    /// Knowledge configurations trained, predicted and swept.
    pub configs: Vec<KnowledgeConfig>,
    pub m_sweep: Vec<usize>,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            metric_variant: MetricVariant::Simple,
            seeds: vec![0, 1, 2],
            configs: vec![KnowledgeConfig::Both],
            m_sweep: vec![5, 10, 20, 40],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub paths: Paths,
    #[serde(default)]
    pub kb: KbSection,
    #[serde(default)]
    pub retrieval: RetrievalSection,
    #[serde(default)]
    pub implicit: ImplicitSection,
    #[serde(default)]
    pub fusion: FusionSection,
    #[serde(default)]
    pub eval: EvalSection,
}

/// Parses a `--set` value as a TOML value, falling back to a bare string.
fn parse_value(raw: &str) -> Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

/// Applies `section.key=value` to a parsed document.
pub fn apply_override(doc: &mut toml::Table, spec: &str) -> Result<(), String> {
    let (path, raw) = spec.split_once('=').ok_or_else(|| format!("override {spec:?} is not of the form key=value"))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(format!("override {spec:?} has an empty key"));
    }
    let (last, parents) = keys.split_last().expect("split yields one key");
    let mut table = doc;
    for k in parents {
        let entry = table.entry(k.to_string()).or_insert_with(|| Value::Table(toml::Table::new()));
        table = entry.as_table_mut().ok_or_else(|| format!("override {spec:?}: {k} is not a section"))?;
    }
    table.insert(last.to_string(), parse_value(raw.trim()));
    Ok(())
}

impl RunConfig {
    /// Reads, overrides, resolves and validates a config file.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(vec![format!("{}: {e}", path.display())]))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base, overrides)
    }

    pub fn parse(text: &str, base: &Path, overrides: &[String]) -> Result<Self, CliError> {
        let mut doc: toml::Table = toml::from_str(text).map_err(|e| CliError::Config(vec![e.to_string()]))?;
        for o in overrides {
            apply_override(&mut doc, o).map_err(|e| CliError::Config(vec![e]))?;
        }
        let mut cfg: RunConfig = Value::Table(doc).try_into().map_err(|e: toml::de::Error| CliError::Config(vec![e.to_string()]))?;
        cfg.paths.resolve(base);
        let problems = cfg.validate();
        if problems.is_empty() {
            Ok(cfg)
        } else {
            Err(CliError::Config(problems))
        }
    }

    /// Field-level problems; empty when the config is usable.
    pub fn validate(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut check = |ok: bool, msg: &str| {
            if !ok {
                out.push(msg.to_string());
            }
        };
        let r = &self.retrieval;
        check(self.kb.ascii_threshold >= 0.0 && self.kb.ascii_threshold <= 1.0, "kb.ascii_threshold: must lie in [0, 1]");
        check(r.d_r >= 2, "retrieval.d_r: must be at least 2");
        check(r.window_fraction > 0.0 && r.window_fraction <= 1.0, "retrieval.window_fraction: must lie in (0, 1]");
        check(r.stride_fraction > 0.0 && r.stride_fraction <= 1.0, "retrieval.stride_fraction: must lie in (0, 1]");
        check(r.k >= 1, "retrieval.k: must be at least 1");
        let explicit = self.eval.configs.iter().any(|c| c.uses_explicit());
        check(!explicit || r.m >= 1, "retrieval.m: must be at least 1 when explicit knowledge is enabled");
        check(
            r.provider != ProviderKind::File || self.paths.precomputed_embeddings.is_some(),
            "paths.precomputed_embeddings: required when retrieval.provider = \"file\"",
        );
        let i = &self.implicit;
        check(i.p >= 1, "implicit.p: must be at least 1");
        check(i.sample_temperature >= 0.0, "implicit.sample_temperature: must be non-negative");
        check(i.answer_max_tokens >= 1, "implicit.answer_max_tokens: must be at least 1");
        check(i.evidence_max_tokens >= 1, "implicit.evidence_max_tokens: must be at least 1");
        let s = &self.fusion.schedule;
        check(s.lr >= 0.0 && s.lr.is_finite(), "fusion.schedule.lr: must be finite and non-negative");
        check(s.batch_size >= 1, "fusion.schedule.batch_size: must be at least 1");
        check(s.max_grad_norm >= 0.0, "fusion.schedule.max_grad_norm: must be non-negative (0 disables)");
        check(!self.eval.seeds.is_empty(), "eval.seeds: must be non-empty");
        check(!self.eval.configs.is_empty(), "eval.configs: must be non-empty");
        check(!self.eval.m_sweep.is_empty(), "eval.m_sweep: must be non-empty");
        if let Err(e) = self.fusion.model_config(16, 0, KnowledgeConfig::Both).validate() {
            out.push(format!("fusion: {e}"));
        }
        out
    }

    /// SHA-256 over the canonical JSON of everything except `paths`, so a
    /// relocated run keeps its fingerprint.
    pub fn fingerprint(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        v.as_object_mut().expect("config is an object").remove("paths");
        let canonical = serde_json::to_string(&v).expect("value serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }
}
