//! Straight-line reference implementations used only by tests.
#![allow(dead_code)]

use kat_core::fusion::{EncodedExample, FusionConfig, FusionModel, KnowledgeTokens, ReasoningMode, BOS, EOS};
use kat_core::index::{EmbeddingVector, ScoredHit};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Mat = Vec<Vec<f64>>;

pub fn to_mat(a: &Array2<f64>) -> Mat {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn param(model: &FusionModel<f64>, name: &str) -> Mat {
    to_mat(model.param(name).unwrap_or_else(|| panic!("no parameter {name}")))
}

pub fn matmul(a: &Mat, b: &Mat) -> Mat {
    let (n, k, m) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![0.0; m]; n];
    for i in 0..n {
        for j in 0..m {
            let mut s = 0.0;
            for t in 0..k {
                s += a[i][t] * b[t][j];
            }
            out[i][j] = s;
        }
    }
    out
}

fn add(a: &Mat, b: &Mat) -> Mat {
    a.iter().zip(b).map(|(x, y)| x.iter().zip(y).map(|(p, q)| p + q).collect()).collect()
}

fn add_bias(a: &Mat, b: &Mat) -> Mat {
    a.iter().map(|x| x.iter().zip(&b[0]).map(|(p, q)| p + q).collect()).collect()
}

fn layer_norm(x: &Mat, gamma: &Mat, beta: &Mat) -> Mat {
    x.iter()
        .map(|row| {
            let n = row.len() as f64;
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let sd = (var + 1e-6).sqrt();
            row.iter().enumerate().map(|(j, v)| (v - mean) / sd * gamma[0][j] + beta[0][j]).collect()
        })
        .collect()
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x * x * x)).tanh())
}

/// Multi-head attention of `h` over `kv` rows with separate projections.
#[allow(clippy::too_many_arguments)]
pub fn attention(h: &Mat, kv: &Mat, wq: &Mat, wk: &Mat, wv: &Mat, wo: &Mat, heads: usize, causal: bool) -> (Mat, Vec<Mat>) {
    let q = matmul(h, wq);
    let k = matmul(kv, wk);
    let v = matmul(kv, wv);
    let d = q[0].len();
    let dh = d / heads;
    let mut concat = vec![vec![0.0; d]; h.len()];
    let mut maps = Vec::new();
    for hd in 0..heads {
        let mut map = vec![vec![0.0; kv.len()]; h.len()];
        for i in 0..h.len() {
            let allowed = if causal { i + 1 } else { kv.len() };
            let mut scores = vec![f64::NEG_INFINITY; kv.len()];
            for j in 0..allowed {
                let mut s = 0.0;
                for c in 0..dh {
                    s += q[i][hd * dh + c] * k[j][hd * dh + c];
                }
                scores[j] = s / (dh as f64).sqrt();
            }
            let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = scores.iter().map(|s| (s - max).exp()).sum();
            for j in 0..kv.len() {
                map[i][j] = (scores[j] - max).exp() / z;
            }
            for c in 0..dh {
                let mut s = 0.0;
                for j in 0..kv.len() {
                    s += map[i][j] * v[j][hd * dh + c];
                }
                concat[i][hd * dh + c] = s;
            }
        }
        maps.push(map);
    }
    (matmul(&concat, wo), maps)
}

fn embed(model: &FusionModel<f64>, ids: &[u32]) -> Mat {
    let table = param(model, "embed");
    let d = model.config().d;
    ids.iter()
        .enumerate()
        .map(|(pos, &id)| {
            (0..d)
                .map(|c| {
                    let angle = pos as f64 / 10000f64.powf((2 * (c / 2)) as f64 / d as f64);
                    table[id as usize][c] + if c % 2 == 0 { angle.sin() } else { angle.cos() }
                })
                .collect()
        })
        .collect()
}

fn self_or_cross(model: &FusionModel<f64>, prefix: &str, h: &Mat, kv: &Mat, causal: bool) -> Mat {
    let w = |n: &str| param(model, &format!("{prefix}.{n}"));
    attention(h, kv, &w("wq"), &w("wk"), &w("wv"), &w("wo"), model.config().heads, causal).0
}

fn ln(model: &FusionModel<f64>, prefix: &str, x: &Mat) -> Mat {
    layer_norm(x, &param(model, &format!("{prefix}.gamma")), &param(model, &format!("{prefix}.beta")))
}

fn ffn(model: &FusionModel<f64>, prefix: &str, x: &Mat) -> Mat {
    let w = |n: &str| param(model, &format!("{prefix}.{n}"));
    let h: Mat = add_bias(&matmul(x, &w("w1")), &w("b1")).into_iter().map(|r| r.into_iter().map(gelu).collect()).collect();
    add_bias(&matmul(&h, &w("w2")), &w("b2"))
}

pub fn encoder(model: &FusionModel<f64>, ids: &[u32]) -> Mat {
    let mut x = embed(model, ids);
    for l in 0..model.config().layers_enc {
        let p = format!("enc.{l}");
        let a = ln(model, &format!("{p}.ln1"), &x);
        x = add(&x, &self_or_cross(model, &format!("{p}.attn"), &a, &a, false));
        let f = ln(model, &format!("{p}.ln2"), &x);
        x = add(&x, &ffn(model, &format!("{p}.ffn"), &f));
    }
    ln(model, "enc.norm", &x)
}

/// Knowledge rows the decoder attends over.
pub fn knowledge(model: &FusionModel<f64>, ex: &EncodedExample) -> Mat {
    match &ex.knowledge {
        KnowledgeTokens::Pairs { sequences, .. } => sequences
            .iter()
            .map(|s| {
                let h = encoder(model, s);
                (0..model.config().d).map(|c| h.iter().map(|r| r[c]).sum::<f64>() / h.len() as f64).collect()
            })
            .collect(),
        KnowledgeTokens::Concat(s) => encoder(model, s),
    }
}

pub fn decoder_logits(model: &FusionModel<f64>, know: &Mat, input: &[u32]) -> Mat {
    let mut y = embed(model, input);
    for l in 0..model.config().layers_dec {
        let p = format!("dec.{l}");
        let a = ln(model, &format!("{p}.ln1"), &y);
        y = add(&y, &self_or_cross(model, &format!("{p}.self"), &a, &a, true));
        let c = ln(model, &format!("{p}.ln2"), &y);
        y = add(&y, &self_or_cross(model, &format!("{p}.cross"), &c, know, false));
        let f = ln(model, &format!("{p}.ln3"), &y);
        y = add(&y, &ffn(model, &format!("{p}.ffn"), &f));
    }
    let y = ln(model, "dec.norm", &y);
    add_bias(&matmul(&y, &param(model, "out.w")), &param(model, "out.b"))
}

fn log_softmax_at(row: &[f64], t: usize) -> f64 {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    row[t] - max - row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Mean teacher-forced negative log-likelihood.
pub fn loss(model: &FusionModel<f64>, ex: &EncodedExample) -> f64 {
    let know = knowledge(model, ex);
    let mut input = vec![BOS];
    input.extend_from_slice(&ex.target[..ex.target.len() - 1]);
    let logits = decoder_logits(model, &know, &input);
    -ex.target.iter().enumerate().map(|(i, &t)| log_softmax_at(&logits[i], t as usize)).sum::<f64>() / ex.target.len() as f64
}

/// Greedy decoding, re-running the full decoder at every step.
pub fn generate(model: &FusionModel<f64>, ex: &EncodedExample, max_len: usize) -> Vec<u32> {
    let know = knowledge(model, ex);
    let mut input = vec![BOS];
    let mut out = Vec::new();
    while out.len() < max_len {
        let logits = decoder_logits(model, &know, &input);
        let last = logits.last().unwrap();
        let mut best = 0;
        for (i, &v) in last.iter().enumerate() {
            if v > last[best] {
                best = i;
            }
        }
        if best as u32 == EOS {
            break;
        }
        out.push(best as u32);
        input.push(best as u32);
    }
    out
}

/// Tiny fp64 config: d=8, one layer each side, vocab 16.
pub fn tiny_config(reasoning: ReasoningMode, seed: u64) -> FusionConfig {
    FusionConfig {
        d: 8,
        layers_enc: 1,
        layers_dec: 1,
        heads: 2,
        d_ff: 32,
        max_pair_len: 12,
        max_answer_len: 4,
        vocab_size: 16,
        seed,
        init_std: 0.3,
        reasoning,
    }
}

/// Moves every parameter away from its structured initial value so layer
/// norms and biases are exercised.
pub fn perturb(model: &mut FusionModel<f64>, seed: u64, scale: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for p in model.params_mut() {
        p.mapv_inplace(|v| v + rng.random_range(-scale..scale));
    }
}

pub fn random_seq(rng: &mut ChaCha8Rng, vocab: u32, len: usize) -> Vec<u32> {
    let mut s: Vec<u32> = (0..len - 1).map(|_| rng.random_range(4..vocab)).collect();
    s.push(EOS);
    s
}

pub fn random_example(rng: &mut ChaCha8Rng, vocab: u32, pairs: usize, explicit: usize, target_len: usize) -> EncodedExample {
    let sequences = (0..pairs).map(|_| {
        let len = rng.random_range(2..9);
        random_seq(rng, vocab, len)
    });
    EncodedExample {
        knowledge: KnowledgeTokens::Pairs { sequences: sequences.collect(), explicit },
        target: random_seq(rng, vocab, target_len + 1),
    }
}

/// Top-k by exhaustive scoring: score descending, then id ascending.
pub fn brute_force_topk(rows: &[(String, EmbeddingVector)], query: &EmbeddingVector, k: usize) -> Vec<ScoredHit> {
    let mut all: Vec<ScoredHit> =
        rows.iter().map(|(id, v)| ScoredHit { entry_id: id.clone(), score: naive_dot(v.as_slice(), query.as_slice()) }).collect();
    all.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap().then_with(|| a.entry_id.cmp(&b.entry_id)));
    all.truncate(k);
    all
}

pub fn naive_dot(a: &[f32], b: &[f32]) -> f64 {
    let mut s = 0.0f64;
    for i in 0..a.len() {
        s += a[i] as f64 * b[i] as f64;
    }
    s
}

/// Explicit retrieval by scoring every (region, entry) pair: each region
/// keeps its own top `k`, entries keep their best score (earliest region on
/// exact ties), and the merged list is cut to `m`.
pub fn brute_force_retrieve(
    rows: &[(String, EmbeddingVector)],
    regions: &[EmbeddingVector],
    k: usize,
    m: usize,
) -> Vec<(String, f64, usize)> {
    let mut best: Vec<(String, f64, usize)> = Vec::new();
    for (r, q) in regions.iter().enumerate() {
        for hit in brute_force_topk(rows, q, k) {
            match best.iter_mut().find(|b| b.0 == hit.entry_id) {
                Some(b) if hit.score > b.1 => {
                    b.1 = hit.score;
                    b.2 = r;
                }
                Some(_) => {}
                None => best.push((hit.entry_id, hit.score, r)),
            }
        }
    }
    best.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
    best.truncate(m);
    best
}

/// Worst relative error between analytic and central-difference gradients
/// over every scalar parameter, with the tensor it occurred in.
/// Relative error is `|a - n| / max(|a|, |n|, floor)`.
pub fn gradient_check(model: &FusionModel<f64>, batch: &[EncodedExample], step: f64, floor: f64) -> (f64, String) {
    let (_, grads) = model.loss_and_gradients(batch).unwrap();
    let mut probe = model.clone();
    let mut worst = (0.0, String::new());
    for (t, name) in grads.names.iter().enumerate() {
        for idx in 0..grads.tensors[t].len() {
            let (r, c) = (idx / grads.tensors[t].ncols(), idx % grads.tensors[t].ncols());
            let orig = probe.params()[t][[r, c]];
            probe.params_mut()[t][[r, c]] = orig + step;
            let up = probe.batch_loss(batch).unwrap();
            probe.params_mut()[t][[r, c]] = orig - step;
            let down = probe.batch_loss(batch).unwrap();
            probe.params_mut()[t][[r, c]] = orig;
            let numeric = (up - down) / (2.0 * step);
            let analytic = grads.tensors[t][[r, c]];
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor);
            if rel > worst.0 {
                worst = (rel, format!("{name}[{r},{c}] analytic {analytic:e} numeric {numeric:e}"));
            }
        }
    }
    worst
}

use kat_core::index::VectorIndex;
use kat_core::kb::{KnowledgeBase, KnowledgeEntry, Subclass};
use kat_core::retriever::{region_key, retrieve_explicit, FileProvider, RegionSpec};

fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> EmbeddingVector {
    loop {
        let raw: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        if let Some(v) = EmbeddingVector::normalized(&raw) {
            return v;
        }
    }
}

/// Random rows where roughly one in eight repeats an earlier vector, so exact
/// score ties occur.
pub fn random_rows(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<(String, EmbeddingVector)> {
    let mut rows: Vec<(String, EmbeddingVector)> = Vec::with_capacity(n);
    for i in 0..n {
        let v = if i > 0 && rng.random_range(0..8) == 0 {
            rows[rng.random_range(0..i)].1.clone()
        } else {
            random_unit(rng, dim)
        };
        rows.push((format!("Q{}x{i}", rng.random_range(0..1000u32)), v));
    }
    rows
}

/// One random retrieval instance checked against [`brute_force_retrieve`].
pub fn check_retrieval_instance(seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = rng.random_range(4..33);
    let n = rng.random_range(1..=1000);
    let n_regions = rng.random_range(1..=16);
    let k = rng.random_range(1..=10);
    let m = rng.random_range(1..=40);
    let rows = random_rows(&mut rng, n, dim);
    let kb = KnowledgeBase::from_entries(rows.iter().map(|(id, _)| KnowledgeEntry::new(id.as_str(), id.as_str(), "entity", Subclass::Tool)).collect())
        .map_err(|e| e.to_string())?;
    let index = VectorIndex::build(dim, rows.iter().cloned()).map_err(|e| e.to_string())?;
    let regions: Vec<RegionSpec> =
        (0..n_regions).map(|i| RegionSpec { x: i as u32, y: 0, w: 1, h: 1, region_id: format!("img#r{i}") }).collect();
    let mut queries: Vec<EmbeddingVector> = Vec::new();
    for i in 0..n_regions {
        // Some regions reuse an entry vector or an earlier region's vector.
        let q = match rng.random_range(0..6) {
            0 => rows[rng.random_range(0..n)].1.clone(),
            1 if i > 0 => queries[rng.random_range(0..i)].clone(),
            _ => random_unit(&mut rng, dim),
        };
        queries.push(q);
    }
    let records = regions.iter().zip(&queries).map(|(r, q)| (region_key(r), q.clone())).collect();
    let provider = FileProvider::from_records(dim, records).map_err(|e| e.to_string())?;
    let got = retrieve_explicit(&kb, &index, &provider, "img", &regions, k, m).map_err(|e| e.to_string())?;
    let want = brute_force_retrieve(&rows, &queries, k, m);
    if got.items.len() != want.len() {
        return Err(format!("seed {seed}: {} items, oracle {}", got.items.len(), want.len()));
    }
    for (g, w) in got.items.iter().zip(&want) {
        if g.entry.id != w.0 || (g.score - w.1).abs() > 1e-9 || g.source_region != regions[w.2].region_id {
            return Err(format!("seed {seed}: got ({}, {}, {}), oracle ({}, {}, {})", g.entry.id, g.score, g.source_region, w.0, w.1, w.2));
        }
    }
    Ok(())
}

/// 10,000-row index, 50 queries, k = 10, plus a bit-exact save/load.
pub fn check_index_oracle(seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = 32;
    let rows = random_rows(&mut rng, 10_000, dim);
    let index = VectorIndex::build(dim, rows.iter().cloned()).map_err(|e| e.to_string())?;
    for qi in 0..50 {
        let q = if qi % 5 == 0 { rows[rng.random_range(0..rows.len())].1.clone() } else { random_unit(&mut rng, dim) };
        let got = index.search(&q, 10).map_err(|e| e.to_string())?;
        let want = brute_force_topk(&rows, &q, 10);
        if got != want {
            return Err(format!("query {qi}: {got:?} != {want:?}"));
        }
    }
    let bytes = index.to_bytes();
    let back = VectorIndex::from_bytes(&bytes).map_err(|e| e.to_string())?;
    if back.to_bytes() != bytes || back.ids() != index.ids() || back.matrix() != index.matrix() {
        return Err("save/load round trip is not bit-identical".into());
    }
    Ok(())
}

use std::path::{Path, PathBuf};

use kat_core::eval::{evaluate, normalize, vqa_score, MetricVariant};
use kat_core::implicit::{build_answer_prompt, build_evidence_prompt, QAExample, CATEGORIES};

pub fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../kat-core/tests/golden")
}

fn compare_golden(name: &str, got: &str) -> Result<(), String> {
    let path = golden_dir().join(name);
    let want = std::fs::read(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    if got.as_bytes() != want.as_slice() {
        return Err(format!("{name}: got {got:?}, golden {:?}", String::from_utf8_lossy(&want)));
    }
    Ok(())
}

fn shot(qid: &str, caption: &str, question: &str, answer: &str) -> QAExample {
    QAExample::new(qid, "img", question, caption, vec![answer.to_string()])
}

/// Answer and evidence prompts against the checked-in golden files.
pub fn check_prompt_goldens() -> Result<(), String> {
    let exemplars = [
        shot("e1", "A man riding skis down a snowy slope.", "What sport is this?", "skiing"),
        shot("e2", "A red double-decker bus on a city street.", "In which country is this bus common?", "england"),
    ];
    let target = shot("t1", "A bowl of sliced oranges on a wooden table.", "What vitamin is this fruit known for?", "vitamin c");
    compare_golden("answer_prompt_two_shot.txt", &build_answer_prompt(&target, &exemplars))?;
    let lone = shot("t2", "A dog catching a frisbee in a park.", "What breed is the dog?", "collie");
    compare_golden("answer_prompt_zero_shot.txt", &build_answer_prompt(&lone, &[]))?;
    compare_golden("evidence_prompt_vitamin.txt", &build_evidence_prompt("What vitamin is this fruit known for?", "vitamin c"))?;
    compare_golden("evidence_prompt_skiing.txt", &build_evidence_prompt("What sport can you use this for", "skiing"))?;
    Ok(())
}

pub struct MetricCase {
    pub prediction: String,
    pub normalized: String,
    pub gold: Vec<String>,
    pub score: f64,
}

pub fn metric_cases() -> Vec<MetricCase> {
    let text = std::fs::read_to_string(golden_dir().join("metric_cases.tsv")).unwrap();
    text.lines()
        .skip(1)
        .filter(|l| !l.is_empty())
        .map(|line| {
            let cols: Vec<&str> = line.split('\t').collect();
            let mut gold = Vec::new();
            for item in cols[2].split('|') {
                let (answer, count) = item.rsplit_once('*').unwrap();
                gold.extend(std::iter::repeat_n(answer.to_string(), count.parse().unwrap()));
            }
            let score = match cols[3] {
                "0" => 0.0,
                "1/3" => 1.0 / 3.0,
                "2/3" => 2.0 / 3.0,
                "1" => 1.0,
                other => panic!("unexpected score {other}"),
            };
            MetricCase { prediction: cols[0].to_string(), normalized: cols[1].to_string(), gold, score }
        })
        .collect()
}

/// The fixture table through `normalize`, `vqa_score` and `evaluate`.
pub fn check_metric_table() -> Result<(), String> {
    let cases = metric_cases();
    if cases.len() != 30 {
        return Err(format!("expected 30 cases, found {}", cases.len()));
    }
    let mut dataset = Vec::new();
    let mut predictions = std::collections::BTreeMap::new();
    for (i, c) in cases.iter().enumerate() {
        let n = normalize(&c.prediction);
        if n != c.normalized {
            return Err(format!("case {}: normalize({:?}) = {n:?}, expected {:?}", i + 1, c.prediction, c.normalized));
        }
        let s = vqa_score(&c.prediction, &c.gold).map_err(|e| e.to_string())?;
        if s != c.score {
            return Err(format!("case {}: score {s}, expected {}", i + 1, c.score));
        }
        let qid = format!("m{i:02}");
        let mut ex = QAExample::new(&qid, "img", "q?", "c", c.gold.clone());
        ex.category = CATEGORIES[i % 4].to_string();
        dataset.push(ex);
        predictions.insert(qid, c.prediction.clone());
    }
    let report = evaluate(&predictions, &dataset, MetricVariant::Simple, "fixture").map_err(|e| e.to_string())?;
    let weighted: f64 = report.per_category.values().map(|c| c.accuracy * c.count as f64).sum::<f64>() / dataset.len() as f64;
    if (report.overall_accuracy - weighted).abs() > 1e-12 {
        return Err(format!("overall {} vs weighted category mean {weighted}", report.overall_accuracy));
    }
    let direct: f64 = cases.iter().map(|c| c.score).sum::<f64>() / cases.len() as f64;
    if (report.overall_accuracy - direct).abs() > 1e-12 {
        return Err(format!("overall {} vs table mean {direct}", report.overall_accuracy));
    }
    Ok(())
}

use kat_core::fusion::Tokenizer;
use rand::seq::SliceRandom;

/// Attention rows are distributions, a single knowledge row takes weight
/// exactly 1, and shuffling knowledge rows leaves greedy answers unchanged.
pub fn check_attention_invariants() -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let tok = Tokenizer::fit(["a b c d e f g h i j k l"]);
    for case in 0..20 {
        let mut model = FusionModel::<f64>::new(tiny_config(ReasoningMode::PerPair, case)).map_err(|e| e.to_string())?;
        perturb(&mut model, case + 1000, 0.3);
        let pairs = rng.random_range(2..7);
        let ex = random_example(&mut rng, 16, pairs, pairs / 2, 3);
        let out = model.forward(&ex).map_err(|e| e.to_string())?;
        for map in &out.attention_maps {
            for row in map.rows() {
                if (row.sum() - 1.0).abs() > 1e-6 || row.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
                    return Err(format!("case {case}: attention row {row} is not a distribution"));
                }
            }
        }

        let KnowledgeTokens::Pairs { sequences, explicit } = &ex.knowledge else { unreachable!() };
        let mut shuffled = sequences.clone();
        shuffled.shuffle(&mut rng);
        let permuted = EncodedExample {
            knowledge: KnowledgeTokens::Pairs { sequences: shuffled, explicit: *explicit },
            target: ex.target.clone(),
        };
        let a = model.generate(&tok, &ex, 4).map_err(|e| e.to_string())?;
        let b = model.generate(&tok, &permuted, 4).map_err(|e| e.to_string())?;
        if a.tokens != b.tokens {
            return Err(format!("case {case}: answer changed under knowledge permutation: {:?} vs {:?}", a.tokens, b.tokens));
        }

        let single = EncodedExample {
            knowledge: KnowledgeTokens::Pairs { sequences: vec![sequences[0].clone()], explicit: 1 },
            target: ex.target.clone(),
        };
        let maps = model.forward(&single).map_err(|e| e.to_string())?.attention_maps;
        // Cross-attention maps are the only ones with a single column here
        // besides the first decoder position of the causal self-attention.
        let cross: Vec<_> = maps.iter().filter(|m| m.ncols() == 1 && m.nrows() == single.target.len()).collect();
        if cross.len() != model.config().heads * model.config().layers_dec {
            return Err(format!("case {case}: expected one cross map per head, found {}", cross.len()));
        }
        if cross.iter().any(|m| m.iter().any(|&v| v != 1.0)) {
            return Err(format!("case {case}: single knowledge row weight is not exactly 1"));
        }
    }
    Ok(())
}
