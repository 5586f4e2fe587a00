use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write as _};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context as _};
use clap::Subcommand;
use kat_core::eval::{
    ablation_run, ensemble, evaluate, mean_accuracy, predict_dataset, read_predictions, write_predictions, EvalReport,
    KnowledgeInputs,
};
use kat_core::fusion::{
    load_checkpoint, save_checkpoint, train_with, FusionModel, KnowledgeConfig, Tokenizer, TrainOptions,
};
use kat_core::implicit::{
    elicit, read_dataset, read_implicit, select_exemplars, similarity_text, write_implicit, ImplicitRecord, LmClient,
    QAExample, RecordingClient, ReplayClient, Transcript,
};
use kat_core::index::VectorIndex;
use kat_core::kb::{ingest_dump, IngestOptions, KnowledgeBase};
use kat_core::retriever::{
    generate_regions, hash_provider, region_key, retrieve_explicit, text_key, write_embeddings, EmbeddingProvider,
    ExplicitKnowledge, ExplicitRecord, FileProvider,
};
use serde::{Deserialize, Serialize};

use crate::config::{LmMode, ProviderKind, RunConfig};
use crate::live::HttpClient;
use crate::stamp::Stamp;
use crate::{CliError, Outcome, API_KEY_VAR};

/// Pipeline subcommands, in dependency order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Stage {
    /// Ingest the entity dump into a filtered knowledge-base store.
    BuildKb,
    /// Embed entry texts, exemplar texts and image regions.
    Embed,
    /// Build the exact inner-product index over entry embeddings.
    BuildIndex,
    /// Retrieve top-m explicit knowledge for every image.
    Retrieve,
    /// Elicit tentative answers and evidence from the language model.
    Elicit,
    /// Train one model per knowledge configuration and seed.
    Train,
    /// Generate test-set predictions with every trained model.
    Predict,
    /// Score predictions per seed and as a seed ensemble.
    Evaluate,
    /// Accuracy as a function of the number of explicit entries.
    Sweep,
    /// Render the evaluation summary as text.
    Report,
}

impl Stage {
    pub const ALL: [Stage; 10] = [
        Stage::BuildKb,
        Stage::Embed,
        Stage::BuildIndex,
        Stage::Retrieve,
        Stage::Elicit,
        Stage::Train,
        Stage::Predict,
        Stage::Evaluate,
        Stage::Sweep,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::BuildKb => "build-kb",
            Stage::Embed => "embed",
            Stage::BuildIndex => "build-index",
            Stage::Retrieve => "retrieve",
            Stage::Elicit => "elicit",
            Stage::Train => "train",
            Stage::Predict => "predict",
            Stage::Evaluate => "evaluate",
            Stage::Sweep => "sweep",
            Stage::Report => "report",
        }
    }
}

/// A file a stage reads, with where it comes from.
struct Input {
    path: PathBuf,
    field: &'static str,
    producer: Option<&'static str>,
}

fn input(path: &Path, field: &'static str, producer: Option<&'static str>) -> Input {
    Input { path: path.to_path_buf(), field, producer }
}

fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".stamp");
    PathBuf::from(s)
}

pub(crate) struct Context {
    pub cfg: RunConfig,
    pub fingerprint: String,
    pub force: bool,
    pub live: bool,
}

/// Evaluation summary across configurations and seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub config_fingerprint: String,
    pub metric_variant: String,
    pub configs: BTreeMap<String, ConfigSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigSummary {
    pub per_seed: BTreeMap<u64, f64>,
    pub mean_accuracy: f64,
    pub ensemble_accuracy: f64,
}

impl Context {
    pub fn run(&self, stage: Stage) -> Result<Outcome, CliError> {
        match stage {
            Stage::BuildKb => self.build_kb(),
            Stage::Embed => self.embed(),
            Stage::BuildIndex => self.build_index(),
            Stage::Retrieve => self.retrieve(),
            Stage::Elicit => self.elicit(),
            Stage::Train => self.train(),
            Stage::Predict => self.predict(),
            Stage::Evaluate => self.evaluate(),
            Stage::Sweep => self.sweep(),
            Stage::Report => self.report(),
        }
    }

    /// Checks inputs, skips when the stamp is current, runs `body` and
    /// stamps the outputs.
    fn stage(
        &self,
        stage: Stage,
        inputs: Vec<Input>,
        outputs: Vec<PathBuf>,
        stamp: PathBuf,
        body: impl FnOnce() -> anyhow::Result<()>,
    ) -> Result<Outcome, CliError> {
        for i in &inputs {
            if !i.path.is_file() {
                return Err(CliError::MissingInput { path: i.path.clone(), field: i.field, producer: i.producer });
            }
        }
        let in_paths: Vec<PathBuf> = inputs.into_iter().map(|i| i.path).collect();
        if !self.force && Stamp::is_current(&stamp, stage.name(), &self.fingerprint, &in_paths, &outputs) {
            return Ok(Outcome::UpToDate);
        }
        for p in outputs.iter().chain(std::iter::once(&stamp)) {
            if let Some(dir) = p.parent() {
                std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            }
        }
        body()?;
        Stamp::collect(stage.name(), &self.fingerprint, &in_paths, &outputs)?.write(&stamp)?;
        log::info!("{}: wrote {} output(s)", stage.name(), outputs.len());
        Ok(Outcome::Ran)
    }

    fn datasets(&self) -> [Input; 2] {
        let p = &self.cfg.paths;
        [input(&p.dataset_train, "dataset_train", None), input(&p.dataset_test, "dataset_test", None)]
    }

    fn vocab_path(&self) -> PathBuf {
        self.cfg.paths.checkpoints.join("vocab.txt")
    }

    fn checkpoint_path(&self, config: KnowledgeConfig, seed: u64) -> PathBuf {
        self.cfg.paths.checkpoints.join(format!("{config}-seed{seed}.ckpt"))
    }

    fn predictions_path(&self, config: KnowledgeConfig, seed: u64) -> PathBuf {
        self.cfg.paths.reports.join(format!("predictions-{config}-seed{seed}.jsonl"))
    }

    fn report_path(&self, config: KnowledgeConfig, tag: &str) -> PathBuf {
        self.cfg.paths.reports.join(format!("report-{config}-{tag}.json"))
    }

    fn summary_path(&self) -> PathBuf {
        self.cfg.paths.reports.join("summary.json")
    }

    fn sweep_path(&self) -> PathBuf {
        self.cfg.paths.reports.join("sweep.csv")
    }

    fn runs(&self) -> Vec<(KnowledgeConfig, u64)> {
        let e = &self.cfg.eval;
        e.configs.iter().flat_map(|&c| e.seeds.iter().map(move |&s| (c, s))).collect()
    }

    fn checkpoint_inputs(&self) -> Vec<Input> {
        let mut v = vec![input(&self.vocab_path(), "checkpoints", Some("train"))];
        v.extend(self.runs().into_iter().map(|(c, s)| input(&self.checkpoint_path(c, s), "checkpoints", Some("train"))));
        v
    }

    fn knowledge_inputs(&self) -> Vec<Input> {
        let p = &self.cfg.paths;
        vec![
            input(&p.kb_store, "kb_store", Some("build-kb")),
            input(&p.retrieved, "retrieved", Some("retrieve")),
            input(&p.implicit_out, "implicit_out", Some("elicit")),
        ]
    }

    fn build_kb(&self) -> Result<Outcome, CliError> {
        let p = &self.cfg.paths;
        let opts = IngestOptions { ascii_threshold: self.cfg.kb.ascii_threshold };
        self.stage(
            Stage::BuildKb,
            vec![input(&p.kb_dump, "kb_dump", None)],
            vec![p.kb_store.clone()],
            sidecar(&p.kb_store),
            || {
                let kb = ingest_dump(BufReader::new(File::open(&p.kb_dump)?), &opts)?;
                for (subclass, n) in kb.counts_by_subclass() {
                    log::info!("build-kb: {subclass}: {n}");
                }
                log::info!("build-kb: kept {} entries", kb.len());
                kb.write_store(BufWriter::new(File::create(&p.kb_store)?))?;
                Ok(())
            },
        )
    }

    fn embed(&self) -> Result<Outcome, CliError> {
        let p = &self.cfg.paths;
        let r = &self.cfg.retrieval;
        let mut inputs = vec![input(&p.kb_store, "kb_store", Some("build-kb"))];
        inputs.extend(self.datasets());
        if r.provider == ProviderKind::File {
            let src = p.precomputed_embeddings.as_ref().expect("validated");
            inputs.push(input(src, "precomputed_embeddings", None));
        }
        self.stage(Stage::Embed, inputs, vec![p.embeddings.clone()], sidecar(&p.embeddings), || {
            let kb = load_kb(&p.kb_store)?;
            let examples = load_examples(&self.cfg)?;
            let mut keys: Vec<String> = kb.entries().iter().map(|e| text_key(&e.rendered_text)).collect();
            keys.extend(examples.iter().map(|e| text_key(&similarity_text(e))));
            for (image_id, (w, h)) in images(&examples)? {
                keys.extend(generate_regions(&image_id, w, h, &r.window()).iter().map(region_key));
            }
            keys.sort();
            keys.dedup();
            let provider: Box<dyn EmbeddingProvider> = match r.provider {
                ProviderKind::Hash => Box::new(hash_provider(r.provider_seed, r.d_r)),
                ProviderKind::File => {
                    let src = p.precomputed_embeddings.as_ref().expect("validated");
                    let fp = FileProvider::load(BufReader::new(File::open(src)?))
                        .with_context(|| format!("loading {}", src.display()))?;
                    if fp.dim() != r.d_r {
                        bail!("{} holds {}-dim vectors but retrieval.d_r = {}", src.display(), fp.dim(), r.d_r);
                    }
                    Box::new(fp)
                }
            };
            let records = keys
                .into_iter()
                .map(|k| Ok((k.clone(), provider.embed_key(&k)?)))
                .collect::<anyhow::Result<Vec<_>>>()?;
            log::info!("embed: {} vectors of dim {}", records.len(), r.d_r);
            write_embeddings(BufWriter::new(File::create(&p.embeddings)?), r.d_r, &records)?;
            Ok(())
        })
    }

    fn build_index(&self) -> Result<Outcome, CliError> {
        let p = &self.cfg.paths;
        let inputs =
            vec![input(&p.kb_store, "kb_store", Some("build-kb")), input(&p.embeddings, "embeddings", Some("embed"))];
        self.stage(Stage::BuildIndex, inputs, vec![p.index.clone()], sidecar(&p.index), || {
            let kb = load_kb(&p.kb_store)?;
            let provider = load_provider(&p.embeddings)?;
            let pairs = kb
                .entries()
                .iter()
                .map(|e| Ok((e.id.clone(), provider.embed_text(&e.rendered_text)?)))
                .collect::<anyhow::Result<Vec<_>>>()?;
            let index = VectorIndex::build(provider.dim(), pairs)?;
            index.save(BufWriter::new(File::create(&p.index)?))?;
            Ok(())
        })
    }

    fn retrieve(&self) -> Result<Outcome, CliError> {
        let p = &self.cfg.paths;
        let r = &self.cfg.retrieval;
        let mut inputs = vec![
            input(&p.kb_store, "kb_store", Some("build-kb")),
            input(&p.embeddings, "embeddings", Some("embed")),
            input(&p.index, "index", Some("build-index")),
        ];
        inputs.extend(self.datasets());
        self.stage(Stage::Retrieve, inputs, vec![p.retrieved.clone()], sidecar(&p.retrieved), || {
            let kb = load_kb(&p.kb_store)?;
            let provider = load_provider(&p.embeddings)?;
            let index = VectorIndex::load(BufReader::new(File::open(&p.index)?))?;
            let examples = load_examples(&self.cfg)?;
            let mut out = BufWriter::new(File::create(&p.retrieved)?);
            for (image_id, (w, h)) in images(&examples)? {
                let regions = generate_regions(&image_id, w, h, &r.window());
                let found = retrieve_explicit(&kb, &index, &provider, &image_id, &regions, r.k, r.m)
                    .with_context(|| format!("retrieving for image {image_id}"))?;
                writeln!(out, "{}", serde_json::to_string(&found.to_record(&image_id))?)?;
            }
            out.flush()?;
            Ok(())
        })
    }

    fn elicit(&self) -> Result<Outcome, CliError> {
        let p = &self.cfg.paths;
        let i = &self.cfg.implicit;
        let mut inputs = self.datasets().into_iter().collect::<Vec<_>>();
        inputs.push(input(&p.embeddings, "embeddings", Some("embed")));
        let mut outputs = vec![p.implicit_out.clone()];
        let live_key = match i.lm_mode {
            LmMode::Replay => {
                inputs.push(input(&p.lm_transcript, "lm_transcript", Some("elicit --live")));
                None
            }
            LmMode::Live => {
                if !self.live {
                    return Err(CliError::Config(vec![
                        "implicit.lm_mode: \"live\" also needs the --live flag".into(),
                    ]));
                }
                let key = std::env::var(API_KEY_VAR).ok().filter(|k| !k.is_empty()).ok_or_else(|| {
                    CliError::Config(vec![format!("implicit.lm_mode: \"live\" needs {API_KEY_VAR} in the environment")])
                })?;
                outputs.push(p.lm_transcript.clone());
                Some(key)
            }
        };
        self.stage(Stage::Elicit, inputs, outputs, sidecar(&p.implicit_out), || {
            let provider = load_provider(&p.embeddings)?;
            let records = match live_key {
                None => {
                    let transcript = Transcript::read(BufReader::new(File::open(&p.lm_transcript)?))?;
                    elicit_records(&self.cfg, &provider, &ReplayClient::new(&transcript))?
                }
                Some(key) => {
                    let client = RecordingClient::new(HttpClient::new(&i.endpoint, &i.model, key)?);
                    let records = elicit_records(&self.cfg, &provider, &client)?;
                    let mut journal = match File::open(&p.lm_transcript) {
                        Ok(f) => Transcript::read(BufReader::new(f))?,
                        Err(_) => Transcript::default(),
                    };
                    journal.records.extend(client.transcript().records);
                    journal.write(BufWriter::new(File::create(&p.lm_transcript)?))?;
                    records
                }
            };
            write_implicit(BufWriter::new(File::create(&p.implicit_out)?), &records)?;
            Ok(())
        })
    }

    fn train(&self) -> Result<Outcome, CliError> {
        let cfg = &self.cfg;
        let mut inputs = self.knowledge_inputs();
        inputs.extend(self.datasets());
        let mut outputs = vec![self.vocab_path()];
        outputs.extend(self.runs().into_iter().map(|(c, s)| self.checkpoint_path(c, s)));
        let stamp = cfg.paths.checkpoints.join("train.stamp");
        self.stage(Stage::Train, inputs, outputs, stamp, || {
            let kb = load_kb(&cfg.paths.kb_store)?;
            let knowledge = load_knowledge(cfg, &kb)?;
            let train = load_dataset(&cfg.paths.dataset_train)?;
            let test = load_dataset(&cfg.paths.dataset_test)?;
            let tokenizer = fit_tokenizer(&kb, &train, &test, &knowledge);
            tokenizer.write_vocab(BufWriter::new(File::create(self.vocab_path())?))?;
            log::info!("train: vocabulary of {} tokens", tokenizer.len());
            for (config, seed) in self.runs() {
                let mc = cfg.fusion.model_config(tokenizer.len(), seed, config);
                let mut model = FusionModel::<f32>::new(mc)?;
                let data: Vec<_> =
                    train.iter().map(|ex| knowledge.encode(&model, &tokenizer, ex, config, cfg.retrieval.m, true)).collect();
                let schedule = cfg.fusion.schedule(seed);
                let total = schedule.total_steps;
                let report = train_with(&mut model, &data, &schedule, &TrainOptions::default(), |step, loss, _| {
                    if (step + 1) % 100 == 0 || step + 1 == total {
                        log::info!("train {config} seed {seed}: step {} loss {loss:.4}", step + 1);
                    }
                    true
                })
                .with_context(|| format!("training {config} with seed {seed}"))?;
                log::debug!("train {config} seed {seed}: {} steps", report.loss_curve.len());
                save_checkpoint(&model, &self.checkpoint_path(config, seed))?;
            }
            Ok(())
        })
    }

    fn predict(&self) -> Result<Outcome, CliError> {
        let cfg = &self.cfg;
        let mut inputs = self.checkpoint_inputs();
        inputs.extend(self.knowledge_inputs());
        inputs.push(input(&cfg.paths.dataset_test, "dataset_test", None));
        let outputs = self.runs().into_iter().map(|(c, s)| self.predictions_path(c, s)).collect();
        let stamp = cfg.paths.reports.join("predict.stamp");
        self.stage(Stage::Predict, inputs, outputs, stamp, || {
            let kb = load_kb(&cfg.paths.kb_store)?;
            let knowledge = load_knowledge(cfg, &kb)?;
            let test = load_dataset(&cfg.paths.dataset_test)?;
            let tokenizer = load_tokenizer(&self.vocab_path())?;
            for (config, seed) in self.runs() {
                let model: FusionModel<f32> = load_checkpoint(&self.checkpoint_path(config, seed))?;
                let preds = predict_dataset(&model, &tokenizer, &test, &knowledge, config, cfg.retrieval.m)?;
                write_predictions(BufWriter::new(File::create(self.predictions_path(config, seed))?), &preds)?;
            }
            Ok(())
        })
    }

    fn evaluate(&self) -> Result<Outcome, CliError> {
        let cfg = &self.cfg;
        let mut inputs: Vec<Input> = self
            .runs()
            .into_iter()
            .map(|(c, s)| input(&self.predictions_path(c, s), "reports", Some("predict")))
            .collect();
        inputs.push(input(&cfg.paths.dataset_test, "dataset_test", None));
        let mut outputs = Vec::new();
        for &c in &cfg.eval.configs {
            outputs.extend(cfg.eval.seeds.iter().map(|s| self.report_path(c, &format!("seed{s}"))));
            outputs.push(self.report_path(c, "ensemble"));
        }
        outputs.push(self.summary_path());
        let stamp = cfg.paths.reports.join("evaluate.stamp");
        self.stage(Stage::Evaluate, inputs, outputs, stamp, || {
            let test = load_dataset(&cfg.paths.dataset_test)?;
            let variant = cfg.eval.metric_variant;
            let mut summary = Summary {
                config_fingerprint: self.fingerprint.clone(),
                metric_variant: variant.to_string(),
                configs: BTreeMap::new(),
            };
            for &config in &cfg.eval.configs {
                let mut reports = Vec::new();
                let mut per_seed_preds = Vec::new();
                let mut per_seed = BTreeMap::new();
                for &seed in &cfg.eval.seeds {
                    let path = self.predictions_path(config, seed);
                    let preds = read_predictions(BufReader::new(File::open(&path)?))
                        .with_context(|| format!("reading {}", path.display()))?;
                    let answers = preds.iter().map(|p| (p.qid.clone(), p.answer.clone())).collect();
                    let report = evaluate(&answers, &test, variant, &self.fingerprint)
                        .with_context(|| format!("scoring {}", path.display()))?;
                    std::fs::write(self.report_path(config, &format!("seed{seed}")), report.to_json())?;
                    per_seed.insert(seed, report.overall_accuracy);
                    per_seed_preds.push(preds.into_iter().map(|p| (p.qid, (p.answer, p.logprob))).collect());
                    reports.push(report);
                }
                let voted = ensemble(&per_seed_preds)?;
                let ens = evaluate(&voted, &test, variant, &self.fingerprint)?;
                std::fs::write(self.report_path(config, "ensemble"), ens.to_json())?;
                let mean = mean_accuracy(&reports).expect("seeds validated non-empty");
                summary.configs.insert(
                    config.to_string(),
                    ConfigSummary { per_seed, mean_accuracy: mean, ensemble_accuracy: ens.overall_accuracy },
                );
            }
            std::fs::write(self.summary_path(), serde_json::to_string_pretty(&summary)? + "\n")?;
            Ok(())
        })
    }

    fn sweep(&self) -> Result<Outcome, CliError> {
        let cfg = &self.cfg;
        let mut inputs = self.checkpoint_inputs();
        inputs.extend(self.knowledge_inputs());
        inputs.push(input(&cfg.paths.dataset_test, "dataset_test", None));
        let stamp = cfg.paths.reports.join("sweep.stamp");
        self.stage(Stage::Sweep, inputs, vec![self.sweep_path()], stamp, || {
            let kb = load_kb(&cfg.paths.kb_store)?;
            let knowledge = load_knowledge(cfg, &kb)?;
            let test = load_dataset(&cfg.paths.dataset_test)?;
            let tokenizer = load_tokenizer(&self.vocab_path())?;
            let m_max = cfg.retrieval.m;
            let ms: Vec<usize> = cfg.eval.m_sweep.iter().copied().filter(|&m| m <= m_max).collect();
            if ms.len() < cfg.eval.m_sweep.len() {
                log::warn!("sweep: skipping m values above retrieval.m = {m_max}");
            }
            let mut table: BTreeMap<(KnowledgeConfig, usize), Vec<f64>> = BTreeMap::new();
            for (config, seed) in self.runs() {
                let model: FusionModel<f32> = load_checkpoint(&self.checkpoint_path(config, seed))?;
                let cells = ablation_run(
                    &test,
                    &knowledge,
                    config,
                    &ms,
                    Some((&model, &tokenizer)),
                    cfg.eval.metric_variant,
                    &self.fingerprint,
                )?;
                for c in cells {
                    table.entry((c.config, c.m)).or_default().push(c.report.overall_accuracy);
                }
            }
            let mut csv = String::from("config,m,accuracy\n");
            for ((config, m), accs) in &table {
                let mean = accs.iter().sum::<f64>() / accs.len() as f64;
                let _ = writeln!(csv, "{config},{m},{mean:.6}");
            }
            std::fs::write(self.sweep_path(), csv)?;
            Ok(())
        })
    }

    fn report(&self) -> Result<Outcome, CliError> {
        let cfg = &self.cfg;
        let mut inputs = vec![input(&self.summary_path(), "reports", Some("evaluate"))];
        inputs.extend(cfg.eval.configs.iter().map(|&c| input(&self.report_path(c, "ensemble"), "reports", Some("evaluate"))));
        let text_path = cfg.paths.reports.join("report.txt");
        let stamp = cfg.paths.reports.join("report.stamp");
        let outcome = self.stage(Stage::Report, inputs, vec![text_path.clone()], stamp, || {
            let summary: Summary = serde_json::from_str(&std::fs::read_to_string(self.summary_path())?)?;
            let mut out = String::new();
            let _ = writeln!(out, "config fingerprint: {}", summary.config_fingerprint);
            let _ = writeln!(out, "metric: {}\n", summary.metric_variant);
            let _ = writeln!(out, "{:<18}  {:>8}  {:>8}  per seed", "config", "mean", "ensemble");
            for (name, s) in &summary.configs {
                let seeds: Vec<String> = s.per_seed.iter().map(|(k, v)| format!("{k}:{:.2}%", v * 100.0)).collect();
                let _ = writeln!(
                    out,
                    "{name:<18}  {:>7.2}%  {:>7.2}%  {}",
                    s.mean_accuracy * 100.0,
                    s.ensemble_accuracy * 100.0,
                    seeds.join(" ")
                );
            }
            for &c in &cfg.eval.configs {
                let report = EvalReport::from_json(&std::fs::read_to_string(self.report_path(c, "ensemble"))?)?;
                let _ = writeln!(out, "\n{c} (ensemble)\n{}", report.render_table());
            }
            if let Ok(csv) = std::fs::read_to_string(self.sweep_path()) {
                let _ = writeln!(out, "\nsweep\n{csv}");
            }
            std::fs::write(&text_path, &out)?;
            Ok(())
        })?;
        print!("{}", std::fs::read_to_string(&text_path).map_err(anyhow::Error::from)?);
        Ok(outcome)
    }
}

fn load_kb(path: &Path) -> anyhow::Result<KnowledgeBase> {
    KnowledgeBase::read_store(BufReader::new(File::open(path)?)).with_context(|| format!("reading {}", path.display()))
}

fn load_dataset(path: &Path) -> anyhow::Result<Vec<QAExample>> {
    read_dataset(BufReader::new(File::open(path)?)).with_context(|| format!("reading {}", path.display()))
}

fn load_provider(path: &Path) -> anyhow::Result<FileProvider> {
    FileProvider::load(BufReader::new(File::open(path)?)).with_context(|| format!("reading {}", path.display()))
}

fn load_tokenizer(path: &Path) -> anyhow::Result<Tokenizer> {
    Tokenizer::read_vocab(BufReader::new(File::open(path)?)).with_context(|| format!("reading {}", path.display()))
}

/// Training examples followed by test examples.
fn load_examples(cfg: &RunConfig) -> anyhow::Result<Vec<QAExample>> {
    let mut v = load_dataset(&cfg.paths.dataset_train)?;
    v.extend(load_dataset(&cfg.paths.dataset_test)?);
    Ok(v)
}

/// Distinct images with their sizes, ordered by id.
fn images(examples: &[QAExample]) -> anyhow::Result<BTreeMap<String, (u32, u32)>> {
    let mut out = BTreeMap::new();
    for e in examples {
        if let Some(&(w, h)) = out.get(&e.image_id) {
            if (w, h) != (e.width, e.height) {
                bail!("image {} appears with sizes {w}x{h} and {}x{}", e.image_id, e.width, e.height);
            }
        }
        out.insert(e.image_id.clone(), (e.width, e.height));
    }
    Ok(out)
}

fn load_knowledge(cfg: &RunConfig, kb: &KnowledgeBase) -> anyhow::Result<KnowledgeInputs> {
    let mut k = KnowledgeInputs::default();
    let path = &cfg.paths.retrieved;
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let rec: ExplicitRecord =
            serde_json::from_str(line).with_context(|| format!("{} line {}", path.display(), n + 1))?;
        let found = ExplicitKnowledge::from_record(&rec, kb)?;
        k.explicit.insert(rec.image_id, found.entries().cloned().collect());
    }
    let path = &cfg.paths.implicit_out;
    let records = read_implicit(BufReader::new(File::open(path)?)).with_context(|| format!("reading {}", path.display()))?;
    k.implicit.extend(records.into_iter().map(|r| (r.qid, r.items)));
    Ok(k)
}

/// Vocabulary over every string the model reads, plus training answers.
fn fit_tokenizer(kb: &KnowledgeBase, train: &[QAExample], test: &[QAExample], knowledge: &KnowledgeInputs) -> Tokenizer {
    let mut texts: Vec<&str> = Vec::new();
    for e in kb.entries() {
        texts.push(&e.label);
        texts.push(&e.description);
    }
    for ex in train {
        texts.push(&ex.question);
        texts.push(ex.primary_answer());
    }
    texts.extend(test.iter().map(|ex| ex.question.as_str()));
    for items in knowledge.implicit.values() {
        for i in items {
            texts.push(&i.answer);
            texts.push(&i.evidence);
        }
    }
    Tokenizer::fit(texts)
}

/// Elicits implicit knowledge for every training and test example, with
/// exemplars drawn from the training set.
pub fn elicit_records(
    cfg: &RunConfig,
    provider: &dyn EmbeddingProvider,
    client: &dyn LmClient,
) -> anyhow::Result<Vec<ImplicitRecord>> {
    let pool = load_dataset(&cfg.paths.dataset_train)?;
    let examples = load_examples(cfg)?;
    let ec = cfg.implicit.elicit_config();
    let mut out = Vec::with_capacity(examples.len());
    for ex in &examples {
        let exemplars = select_exemplars(&pool, ex, provider, cfg.implicit.n_exemplars)?;
        let got = elicit(ex, &exemplars, client, &ec).map_err(|e| anyhow!(e))?;
        out.push(ImplicitRecord { qid: ex.qid.clone(), items: got.items });
    }
    Ok(out)
}
