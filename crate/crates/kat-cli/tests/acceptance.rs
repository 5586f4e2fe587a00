//! Acceptance suite: one line per criterion, run sequentially so the
//! runtime limits are measured without contention.
//!
//! ```text
//! cargo test --release -p kat-cli --test acceptance            # all
//! cargo test --release -p kat-cli --test acceptance -- AC5 AC7 # some
//! ```

#[path = "../../kat-core/tests/common/mod.rs"]
mod common;
mod support;

use std::collections::BTreeMap;
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use kat_core::eval::{ablation_run, normalize, predict_dataset, KnowledgeInputs, MetricVariant};
use kat_core::fusion::{
    train_with, write_checkpoint, EncodedExample, FusionConfig, FusionModel, KnowledgeConfig, KnowledgeTokens,
    ReasoningMode, Schedule, Tokenizer, TrainOptions, CONCAT_MAX_TOKENS,
};
use kat_core::synthetic::{complementarity_task, memorization_set, ComplementarityConfig, SyntheticSet};
use kat_core::FusionModel64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit: Duration, what: &str) -> Result<(), String> {
    ensure(elapsed <= limit, || format!("{what} took {:.1} s, limit {:.0} s", elapsed.as_secs_f64(), limit.as_secs_f64()))
}

fn ac1_retrieval_oracle() -> Outcome {
    let t = Instant::now();
    for seed in 0..50 {
        common::check_retrieval_instance(seed)?;
    }
    within(t.elapsed(), Duration::from_secs(30), "50 instances")?;
    Ok("50 random instances equal the brute-force oracle".into())
}

fn ac2_index_oracle() -> Outcome {
    let t = Instant::now();
    common::check_index_oracle(2)?;
    within(t.elapsed(), Duration::from_secs(10), "index check")?;
    Ok("10,000 rows, 50 queries, k=10 exact; round trip bit-identical".into())
}

fn ac3_gradients() -> Outcome {
    let t = Instant::now();
    let mut worst: f64 = 0.0;
    for (mode, rng_seed, seed) in [(ReasoningMode::PerPair, 21, 3), (ReasoningMode::Concat, 22, 5)] {
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        let mut model = FusionModel64::new(common::tiny_config(mode, seed)).map_err(|e| e.to_string())?;
        common::perturb(&mut model, seed + 1, 0.2);
        let batch = match mode {
            ReasoningMode::PerPair => {
                vec![common::random_example(&mut rng, 16, 3, 2, 3), common::random_example(&mut rng, 16, 2, 1, 2)]
            }
            ReasoningMode::Concat => vec![EncodedExample {
                knowledge: KnowledgeTokens::Concat(common::random_seq(&mut rng, 16, 9)),
                target: common::random_seq(&mut rng, 16, 3),
            }],
        };
        let (rel, at) = common::gradient_check(&model, &batch, 1e-4, 1e-6);
        ensure(rel < 1e-4, || format!("{mode:?}: relative error {rel:e} at {at}"))?;
        worst = worst.max(rel);
    }
    within(t.elapsed(), Duration::from_secs(120), "gradient check")?;
    Ok(format!("max relative error {worst:.2e} over every parameter"))
}

fn ac4_attention() -> Outcome {
    common::check_attention_invariants()?;
    Ok("20 cases: rows sum to 1, single row weight 1, permutation-invariant answers".into())
}

fn exact_match(model: &FusionModel<f32>, tok: &Tokenizer, set: &SyntheticSet, k: &KnowledgeInputs, m: usize) -> f64 {
    let preds = predict_dataset(model, tok, &set.dataset(), k, KnowledgeConfig::Both, m).expect("prediction");
    let hits = preds.iter().zip(&set.examples).filter(|(p, e)| normalize(&p.answer) == normalize(&e.example.answers[0])).count();
    hits as f64 / preds.len() as f64
}

/// Trains the toy model on the 32-example set until exact match reaches
/// 95%, checking every 25 steps. Returns the step count, final accuracy,
/// loss curve and checkpoint bytes.
fn memorize(seed: u64) -> (usize, f64, Vec<f64>, Vec<u8>) {
    let set = memorization_set(seed, 32);
    let texts = set.texts();
    let tok = Tokenizer::fit(texts.iter().map(String::as_str));
    let mut cfg = FusionConfig::toy(tok.len());
    cfg.seed = seed;
    let knowledge = set.knowledge();
    let mut model = FusionModel::<f32>::new(cfg).expect("config");
    let data: Vec<_> =
        set.dataset().iter().map(|e| knowledge.encode(&model, &tok, e, KnowledgeConfig::Both, 1, true)).collect();
    let schedule = Schedule { lr: 1e-3, warmup_steps: 100, total_steps: 3000, batch_size: 32, seed, ..Schedule::default() };
    let mut acc = 0.0;
    let report = train_with(&mut model, &data, &schedule, &TrainOptions::default(), |step, _, m| {
        if (step + 1) % 25 != 0 {
            return true;
        }
        acc = exact_match(m, &tok, &set, &knowledge, 1);
        acc < 0.95
    })
    .expect("training");
    (report.loss_curve.len(), acc, report.loss_curve, write_checkpoint(&model))
}

fn ac5_memorization() -> Outcome {
    let t = Instant::now();
    let (steps, acc, curve, ckpt) = memorize(0);
    ensure(acc >= 0.95, || format!("exact match {acc:.3} after {steps} steps"))?;
    let (steps2, acc2, curve2, ckpt2) = memorize(0);
    ensure(steps == steps2 && acc == acc2 && curve == curve2 && ckpt == ckpt2, || "second run with the same seed differs".into())?;
    within(t.elapsed(), Duration::from_secs(600), "two memorization runs")?;
    Ok(format!("exact match {:.1}% at step {steps}; rerun bit-identical", acc * 100.0))
}

fn ac6_metric() -> Outcome {
    common::check_metric_table()?;
    Ok("30 hand-computed cases exact; overall equals weighted category mean".into())
}

const SWEEP: [usize; 4] = [1, 5, 10, 20];

struct ComplementarityData {
    train: SyntheticSet,
    test: SyntheticSet,
    tok: Tokenizer,
}

fn complementarity_data(seed: u64) -> ComplementarityData {
    let cfg = ComplementarityConfig::default();
    let train = complementarity_task(1000 + seed, 1024, cfg);
    let test = complementarity_task(2000, 200, cfg);
    let texts = train.texts();
    let tok = Tokenizer::fit(texts.iter().map(String::as_str));
    ComplementarityData { train, test, tok }
}

fn train_complementarity(data: &ComplementarityData, config: KnowledgeConfig, seed: u64) -> FusionModel<f32> {
    let entries = ComplementarityConfig::default().entries;
    let cfg = FusionConfig {
        d: 32,
        layers_enc: 1,
        layers_dec: 1,
        heads: 4,
        d_ff: 64,
        max_pair_len: 10,
        max_answer_len: 4,
        vocab_size: data.tok.len(),
        seed,
        init_std: 0.2,
        reasoning: config.reasoning(),
    };
    let mut model = FusionModel::<f32>::new(cfg).expect("config");
    let knowledge = data.train.knowledge();
    let examples: Vec<_> =
        data.train.dataset().iter().map(|e| knowledge.encode(&model, &data.tok, e, config, entries, true)).collect();
    let schedule = Schedule { lr: 2e-3, warmup_steps: 100, total_steps: 1000, batch_size: 16, seed, ..Schedule::default() };
    train_with(&mut model, &examples, &schedule, &TrainOptions::default(), |_, _, _| true).expect("training");
    model
}

/// Accuracy per m for one trained configuration.
fn sweep(data: &ComplementarityData, model: &FusionModel<f32>, config: KnowledgeConfig, ms: &[usize]) -> BTreeMap<usize, f64> {
    let cells = ablation_run(
        &data.test.dataset(),
        &data.test.knowledge(),
        config,
        ms,
        Some((model, &data.tok)),
        MetricVariant::Simple,
        "acceptance",
    )
    .expect("ablation");
    cells.into_iter().map(|c| (c.m, c.report.overall_accuracy)).collect()
}

/// Seed-0 `both` model, reused by the reasoning-module comparison.
struct Shared {
    data: ComplementarityData,
    both: FusionModel<f32>,
}

fn ac7_complementarity(shared: &mut Option<Shared>) -> Outcome {
    let full = *SWEEP.last().unwrap();
    let mut lines = Vec::new();
    let mut failures = Vec::new();
    for seed in 0..3 {
        let data = complementarity_data(seed);
        let both = train_complementarity(&data, KnowledgeConfig::Both, seed);
        let curve = sweep(&data, &both, KnowledgeConfig::Both, &SWEEP);
        let explicit = sweep(&data, &train_complementarity(&data, KnowledgeConfig::ExplicitOnly, seed), KnowledgeConfig::ExplicitOnly, &[full])[&full];
        let implicit = sweep(&data, &train_complementarity(&data, KnowledgeConfig::ImplicitOnly, seed), KnowledgeConfig::ImplicitOnly, &[full])[&full];
        let b = curve[&full];
        let margin = b - explicit.max(implicit);
        let curve_text: Vec<String> = curve.iter().map(|(m, a)| format!("m={m}:{:.1}", a * 100.0)).collect();
        lines.push(format!(
            "seed {seed}: both {:.1} explicit_only {:.1} implicit_only {:.1} [{}]",
            b * 100.0,
            explicit * 100.0,
            implicit * 100.0,
            curve_text.join(" ")
        ));
        if margin < 0.10 {
            failures.push(format!("seed {seed}: both leads the best single source by {:.1} points", margin * 100.0));
        }
        let accs: Vec<f64> = curve.values().copied().collect();
        for w in accs.windows(2) {
            if w[1] < w[0] - 0.02 {
                failures.push(format!("seed {seed}: accuracy drops from {:.3} to {:.3} as m grows", w[0], w[1]));
            }
        }
        if seed == 0 {
            *shared = Some(Shared { data, both });
        }
    }
    let detail = lines.join("; ");
    if failures.is_empty() {
        Ok(detail)
    } else {
        Err(format!("{}; {detail}", failures.join("; ")))
    }
}

fn ac8_reasoning_module(shared: &mut Option<Shared>) -> Outcome {
    if shared.is_none() {
        let data = complementarity_data(0);
        let both = train_complementarity(&data, KnowledgeConfig::Both, 0);
        *shared = Some(Shared { data, both });
    }
    let Shared { data, both } = shared.as_ref().expect("filled above");
    let full = ComplementarityConfig::default().entries;
    let concat = train_complementarity(data, KnowledgeConfig::BothNoReasoning, 0);

    // The fixture must overflow the concatenation budget and push the
    // implicit half of the answer past the cap.
    let knowledge = data.test.knowledge();
    for s in &data.test.examples {
        let enc = knowledge.encode(&concat, &data.tok, &s.example, KnowledgeConfig::BothNoReasoning, full, false);
        let KnowledgeTokens::Concat(ids) = &enc.knowledge else { return Err("expected a concatenated encoding".into()) };
        let y = s.example.answers[0].split(' ').nth(1).expect("two-word answer");
        let y_id = data.tok.id(y).ok_or_else(|| format!("{y} not in vocabulary"))?;
        ensure(ids.len() == CONCAT_MAX_TOKENS, || format!("{}: concatenation fits in {} tokens", s.example.qid, ids.len()))?;
        ensure(!ids.contains(&y_id), || format!("{}: implicit answer survives truncation", s.example.qid))?;
    }
    let per_pair = sweep(data, both, KnowledgeConfig::Both, &[full])[&full];
    let concatenated = sweep(data, &concat, KnowledgeConfig::BothNoReasoning, &[full])[&full];
    ensure(per_pair >= concatenated, || format!("per-pair {per_pair:.3} < concatenated {concatenated:.3}"))?;
    Ok(format!("per-pair {:.1}% vs concatenated {:.1}% (every test input truncated at 256 tokens)", per_pair * 100.0, concatenated * 100.0))
}

fn ac9_goldens() -> Outcome {
    common::check_prompt_goldens()?;
    Ok("answer and evidence prompts byte-identical to goldens".into())
}

fn report_files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir.join("work/reports")).expect("reports directory") {
        let path = entry.expect("entry").path();
        if path.extension().is_some_and(|e| e != "stamp") {
            out.insert(path.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&path).unwrap());
        }
    }
    out
}

fn ac10_determinism() -> Outcome {
    let mut runs = Vec::new();
    let mut times = Vec::new();
    for _ in 0..2 {
        let dir = support::fixture_copy();
        let t = Instant::now();
        support::run_pipeline(dir.path(), &[]);
        times.push(t.elapsed());
        within(t.elapsed(), Duration::from_secs(300), "pipeline run")?;
        runs.push(report_files(dir.path()));
    }
    ensure(runs[0].contains_key("summary.json") && runs[0].contains_key("sweep.csv"), || "reports missing".into())?;
    let keys: Vec<&String> = runs[0].keys().collect();
    ensure(runs[0].keys().eq(runs[1].keys()), || "runs wrote different report files".into())?;
    for k in &keys {
        ensure(runs[0][*k] == runs[1][*k], || format!("{k} differs between runs"))?;
    }
    Ok(format!(
        "{} report files byte-identical across two runs ({:.0} s, {:.0} s)",
        keys.len(),
        times[0].as_secs_f64(),
        times[1].as_secs_f64()
    ))
}

fn main() {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut shared: Option<Shared> = None;
    type Check<'a> = Box<dyn FnMut() -> Outcome + 'a>;
    let mut failed = 0;
    {
        let shared = std::cell::RefCell::new(&mut shared);
        let criteria: Vec<(&str, &str, Check)> = vec![
            ("AC1", "retrieval oracle equivalence", Box::new(ac1_retrieval_oracle)),
            ("AC2", "index oracle equivalence", Box::new(ac2_index_oracle)),
            ("AC3", "gradient correctness", Box::new(ac3_gradients)),
            ("AC4", "attention invariants", Box::new(ac4_attention)),
            ("AC5", "memorization", Box::new(ac5_memorization)),
            ("AC6", "metric fixtures", Box::new(ac6_metric)),
            ("AC7", "knowledge complementarity", Box::new(|| ac7_complementarity(&mut shared.borrow_mut()))),
            ("AC8", "reasoning module vs concatenation", Box::new(|| ac8_reasoning_module(&mut shared.borrow_mut()))),
            ("AC9", "prompt golden files", Box::new(ac9_goldens)),
            ("AC10", "end-to-end determinism", Box::new(ac10_determinism)),
        ];
        for (id, name, mut check) in criteria {
            if !filters.is_empty() && !filters.iter().any(|f| f == id) {
                continue;
            }
            let t = Instant::now();
            let result = catch_unwind(AssertUnwindSafe(&mut check)).unwrap_or_else(|p| {
                Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panicked".into()))
            });
            let secs = t.elapsed().as_secs_f64();
            let line = match &result {
                Ok(detail) => format!("[PASS] {id} {name}: {detail} [{secs:.1} s]"),
                Err(why) => {
                    failed += 1;
                    format!("[FAIL] {id} {name}: {why} [{secs:.1} s]")
                }
            };
            let mut out = std::io::stdout().lock();
            let _ = writeln!(out, "{line}");
            let _ = out.flush();
        }
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criterion/criteria failed");
        std::process::exit(1);
    }
}
