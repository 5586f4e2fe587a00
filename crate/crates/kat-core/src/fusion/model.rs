use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::format::{format_concat, format_pair_explicit, format_pair_implicit, CONCAT_MAX_TOKENS};
use super::graph::{AttnBlock, Graph, NodeId};
use super::tokenizer::{Tokenizer, BOS, EOS, PAD};
use super::FusionError;
use crate::implicit::ImplicitItem;
use crate::kb::KnowledgeEntry;
use crate::Scalar;

/// How knowledge reaches the decoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReasoningMode {
    /// Each question-knowledge pair is encoded alone and mean-pooled into one
    /// row; the decoder cross-attends over the pooled rows.
    PerPair,
    /// All knowledge is one capped token sequence; the decoder cross-attends
    /// over its token states.
    Concat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionConfig {
    pub d: usize,
    pub layers_enc: usize,
    pub layers_dec: usize,
    pub heads: usize,
    pub d_ff: usize,
    pub max_pair_len: usize,
    pub max_answer_len: usize,
    pub vocab_size: usize,
    pub seed: u64,
    pub init_std: f64,
    pub reasoning: ReasoningMode,
}

impl FusionConfig {
    /// Toy defaults: width 64, two encoder and two decoder layers, four heads.
    pub fn toy(vocab_size: usize) -> Self {
        Self {
            d: 64,
            layers_enc: 2,
            layers_dec: 2,
            heads: 4,
            d_ff: 256,
            max_pair_len: 64,
            max_answer_len: 8,
            vocab_size,
            seed: 0,
            init_std: 0.02,
            reasoning: ReasoningMode::PerPair,
        }
    }

    pub fn validate(&self) -> Result<(), FusionError> {
        let bad = |m: &str| Err(FusionError::Config(m.to_string()));
        if self.d == 0 || self.heads == 0 || !self.d.is_multiple_of(self.heads) {
            return bad("d must be a positive multiple of heads");
        }
        if self.layers_enc == 0 || self.layers_dec == 0 || self.d_ff == 0 {
            return bad("layer counts and d_ff must be positive");
        }
        if self.max_pair_len == 0 || self.max_answer_len == 0 {
            return bad("max_pair_len and max_answer_len must be at least 1");
        }
        if self.vocab_size <= EOS as usize {
            return bad("vocabulary too small");
        }
        if !(self.init_std.is_finite() && self.init_std > 0.0) {
            return bad("init_std must be positive");
        }
        Ok(())
    }

    fn max_positions(&self) -> usize {
        CONCAT_MAX_TOKENS.max(self.max_pair_len).max(self.max_answer_len + 1)
    }
}

/// Which knowledge sources feed the model, and through which reasoning path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KnowledgeConfig {
    ExplicitOnly,
    ImplicitOnly,
    Both,
    BothNoReasoning,
}

impl KnowledgeConfig {
    pub const ALL: [KnowledgeConfig; 4] =
        [KnowledgeConfig::ExplicitOnly, KnowledgeConfig::ImplicitOnly, KnowledgeConfig::Both, KnowledgeConfig::BothNoReasoning];

    pub fn as_str(self) -> &'static str {
        match self {
            KnowledgeConfig::ExplicitOnly => "explicit_only",
            KnowledgeConfig::ImplicitOnly => "implicit_only",
            KnowledgeConfig::Both => "both",
            KnowledgeConfig::BothNoReasoning => "both_no_reasoning",
        }
    }

    pub fn reasoning(self) -> ReasoningMode {
        match self {
            KnowledgeConfig::BothNoReasoning => ReasoningMode::Concat,
            _ => ReasoningMode::PerPair,
        }
    }

    pub fn uses_explicit(self) -> bool {
        self != KnowledgeConfig::ImplicitOnly
    }

    pub fn uses_implicit(self) -> bool {
        self != KnowledgeConfig::ExplicitOnly
    }
}

impl std::fmt::Display for KnowledgeConfig {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for KnowledgeConfig {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL.into_iter().find(|k| k.as_str() == s).ok_or_else(|| format!("unknown knowledge config {s:?}"))
    }
}

/// Token ids of the encoder input(s).
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum KnowledgeTokens {
    /// One sequence per knowledge item; the first `explicit` are explicit.
    Pairs { sequences: Vec<Vec<u32>>, explicit: usize },
    Concat(Vec<u32>),
}

/// A tokenized example. `target` ends with EOS, or is empty at inference.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedExample {
    pub knowledge: KnowledgeTokens,
    pub target: Vec<u32>,
}

fn capped(mut ids: Vec<u32>, max_len: usize) -> Vec<u32> {
    ids.truncate(max_len - 1);
    ids.push(EOS);
    ids
}

/// Tokenizes one example for the given reasoning mode.
pub fn encode_example(
    tokenizer: &Tokenizer,
    config: &FusionConfig,
    question: &str,
    explicit: &[KnowledgeEntry],
    implicit: &[ImplicitItem],
    answer: Option<&str>,
) -> EncodedExample {
    let knowledge = match config.reasoning {
        ReasoningMode::PerPair => {
            let mut sequences = Vec::with_capacity(explicit.len() + implicit.len());
            for e in explicit {
                sequences.push(capped(tokenizer.encode(&format_pair_explicit(question, e)), config.max_pair_len));
            }
            for i in implicit {
                sequences.push(capped(tokenizer.encode(&format_pair_implicit(question, i)), config.max_pair_len));
            }
            KnowledgeTokens::Pairs { sequences, explicit: explicit.len() }
        }
        ReasoningMode::Concat => {
            KnowledgeTokens::Concat(capped(tokenizer.encode(&format_concat(question, explicit, implicit)), CONCAT_MAX_TOKENS))
        }
    };
    let target = answer.map(|a| answer_target(tokenizer, config, a)).unwrap_or_default();
    EncodedExample { knowledge, target }
}

/// Answer tokens capped at `max_answer_len`, followed by EOS.
pub fn answer_target(tokenizer: &Tokenizer, config: &FusionConfig, answer: &str) -> Vec<u32> {
    let mut ids = tokenizer.encode(answer);
    ids.truncate(config.max_answer_len);
    ids.push(EOS);
    ids
}

#[derive(Debug, Clone, Copy)]
enum Init {
    Normal(f64),
    Ones,
    Zeros,
}

#[derive(Debug, Clone)]
pub(crate) struct ParamSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    /// Stored as a rank-1 tensor in checkpoints.
    pub vector: bool,
    init: Init,
}

#[derive(Debug, Clone, Copy)]
struct AttnIdx {
    wq: usize,
    wk: usize,
    wv: usize,
    wo: usize,
}

#[derive(Debug, Clone, Copy)]
struct NormIdx {
    gamma: usize,
    beta: usize,
}

#[derive(Debug, Clone, Copy)]
struct FfnIdx {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

#[derive(Debug, Clone, Copy)]
struct EncLayer {
    ln1: NormIdx,
    attn: AttnIdx,
    ln2: NormIdx,
    ffn: FfnIdx,
}

#[derive(Debug, Clone, Copy)]
struct DecLayer {
    ln1: NormIdx,
    self_attn: AttnIdx,
    ln2: NormIdx,
    cross: AttnIdx,
    ln3: NormIdx,
    ffn: FfnIdx,
}

#[derive(Debug, Clone)]
struct Layout {
    embed: usize,
    enc: Vec<EncLayer>,
    enc_norm: NormIdx,
    dec: Vec<DecLayer>,
    dec_norm: NormIdx,
    out_w: usize,
    out_b: usize,
}

struct LayoutBuilder {
    specs: Vec<ParamSpec>,
    d: usize,
    std: f64,
}

impl LayoutBuilder {
    fn add(&mut self, name: String, rows: usize, cols: usize, vector: bool, init: Init) -> usize {
        self.specs.push(ParamSpec { name, rows, cols, vector, init });
        self.specs.len() - 1
    }

    fn norm(&mut self, prefix: &str) -> NormIdx {
        NormIdx {
            gamma: self.add(format!("{prefix}.gamma"), 1, self.d, true, Init::Ones),
            beta: self.add(format!("{prefix}.beta"), 1, self.d, true, Init::Zeros),
        }
    }

    fn attn(&mut self, prefix: &str) -> AttnIdx {
        let (d, std) = (self.d, self.std);
        AttnIdx {
            wq: self.add(format!("{prefix}.wq"), d, d, false, Init::Normal(std)),
            wk: self.add(format!("{prefix}.wk"), d, d, false, Init::Normal(std)),
            wv: self.add(format!("{prefix}.wv"), d, d, false, Init::Normal(std)),
            wo: self.add(format!("{prefix}.wo"), d, d, false, Init::Normal(std)),
        }
    }

    fn ffn(&mut self, prefix: &str, d_ff: usize) -> FfnIdx {
        let (d, std) = (self.d, self.std);
        FfnIdx {
            w1: self.add(format!("{prefix}.w1"), d, d_ff, false, Init::Normal(std)),
            b1: self.add(format!("{prefix}.b1"), 1, d_ff, true, Init::Zeros),
            w2: self.add(format!("{prefix}.w2"), d_ff, d, false, Init::Normal(std)),
            b2: self.add(format!("{prefix}.b2"), 1, d, true, Init::Zeros),
        }
    }
}

fn build_layout(cfg: &FusionConfig) -> (Layout, Vec<ParamSpec>) {
    let mut b = LayoutBuilder { specs: Vec::new(), d: cfg.d, std: cfg.init_std };
    let embed = b.add("embed".into(), cfg.vocab_size, cfg.d, false, Init::Normal(1.0));
    let enc = (0..cfg.layers_enc)
        .map(|l| {
            let p = format!("enc.{l}");
            EncLayer {
                ln1: b.norm(&format!("{p}.ln1")),
                attn: b.attn(&format!("{p}.attn")),
                ln2: b.norm(&format!("{p}.ln2")),
                ffn: b.ffn(&format!("{p}.ffn"), cfg.d_ff),
            }
        })
        .collect();
    let enc_norm = b.norm("enc.norm");
    let dec = (0..cfg.layers_dec)
        .map(|l| {
            let p = format!("dec.{l}");
            DecLayer {
                ln1: b.norm(&format!("{p}.ln1")),
                self_attn: b.attn(&format!("{p}.self")),
                ln2: b.norm(&format!("{p}.ln2")),
                cross: b.attn(&format!("{p}.cross")),
                ln3: b.norm(&format!("{p}.ln3")),
                ffn: b.ffn(&format!("{p}.ffn"), cfg.d_ff),
            }
        })
        .collect();
    let dec_norm = b.norm("dec.norm");
    let out_w = b.add("out.w".into(), cfg.d, cfg.vocab_size, false, Init::Normal(cfg.init_std));
    let out_b = b.add("out.b".into(), 1, cfg.vocab_size, true, Init::Zeros);
    (Layout { embed, enc, enc_norm, dec, dec_norm, out_w, out_b }, b.specs)
}

/// Sinusoidal position table: `sin` on even columns, `cos` on odd ones.
pub fn positional_table<T: Scalar>(positions: usize, d: usize) -> Array2<T> {
    Array2::from_shape_fn((positions, d), |(pos, c)| {
        let i = (c / 2) as f64;
        let angle = pos as f64 / 10000f64.powf(2.0 * i / d as f64);
        T::from_f64_lossy(if c % 2 == 0 { angle.sin() } else { angle.cos() })
    })
}

/// Pooled knowledge rows of one example.
#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeEmbeddings<T> {
    pub explicit: Array2<T>,
    pub implicit: Array2<T>,
    /// Explicit rows followed by implicit rows.
    pub fused: Array2<T>,
}

#[derive(Debug, Clone)]
pub struct ForwardOutput<T> {
    /// One row per target position.
    pub logits: Array2<T>,
    /// Mean negative log-likelihood over target positions.
    pub loss: T,
    /// Every attention map computed, for inspection.
    pub attention_maps: Vec<Array2<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generation {
    pub answer: String,
    pub tokens: Vec<u32>,
    /// Sum of log-probabilities of the emitted tokens (EOS included).
    pub logprob: f64,
}

/// Gradients aligned with [`FusionModel::params`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub names: Vec<String>,
    pub tensors: Vec<Array2<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, name: &str) -> Option<&Array2<T>> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn max_abs(&self) -> T {
        self.tensors.iter().flat_map(|t| t.iter()).fold(T::zero(), |a, &v| a.max(v.abs()))
    }

    pub fn global_norm(&self) -> f64 {
        self.tensors.iter().flat_map(|t| t.iter()).map(|&v| v.to_f64_lossy().powi(2)).sum::<f64>().sqrt()
    }

    pub fn check_finite(&self) -> Result<(), FusionError> {
        for (n, t) in self.names.iter().zip(&self.tensors) {
            if t.iter().any(|v| !v.is_finite()) {
                return Err(FusionError::NonFiniteGradient(n.clone()));
            }
        }
        Ok(())
    }
}

/// Encoder-decoder transformer that reasons over pooled knowledge rows.
#[derive(Debug, Clone)]
pub struct FusionModel<T: Scalar> {
    config: FusionConfig,
    layout: Layout,
    specs: Vec<ParamSpec>,
    params: Vec<Array2<T>>,
    positions: Array2<T>,
}

/// Encoder pass bookkeeping: where each sequence landed in the packed rows.
struct Packed {
    ids: Vec<usize>,
    positions: Vec<usize>,
    /// `(start row, valid length)` per sequence.
    segments: Vec<(usize, usize)>,
    blocks: Vec<AttnBlock>,
}

fn pack(seqs: &[&[u32]], pad_to: Option<usize>, causal: bool) -> Packed {
    let mut p = Packed { ids: Vec::new(), positions: Vec::new(), segments: Vec::new(), blocks: Vec::new() };
    for s in seqs {
        let start = p.ids.len();
        let len = pad_to.unwrap_or(s.len()).max(s.len());
        for pos in 0..len {
            p.ids.push(s.get(pos).copied().unwrap_or(PAD) as usize);
            p.positions.push(pos);
        }
        p.segments.push((start, s.len()));
        p.blocks.push(AttnBlock { q_start: start, q_len: len, k_start: start, k_valid: s.len(), causal });
    }
    p
}

impl<T: Scalar> FusionModel<T> {
    /// Initializes parameters from `config.seed`: normal projections with
    /// `init_std`, unit-normal embeddings, unit norm gains, zero biases.
    pub fn new(config: FusionConfig) -> Result<Self, FusionError> {
        config.validate()?;
        let (layout, specs) = build_layout(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let params = specs
            .iter()
            .map(|s| match s.init {
                Init::Normal(std) => {
                    let dist = Normal::new(0.0, std).expect("valid std");
                    Array2::from_shape_fn((s.rows, s.cols), |_| T::from_f64_lossy(dist.sample(&mut rng)))
                }
                Init::Ones => Array2::from_elem((s.rows, s.cols), T::one()),
                Init::Zeros => Array2::zeros((s.rows, s.cols)),
            })
            .collect();
        let positions = positional_table(config.max_positions(), config.d);
        Ok(Self { config, layout, specs, params, positions })
    }

    /// Rebuilds a model from named tensors, checking names and shapes.
    pub fn from_tensors(config: FusionConfig, tensors: Vec<(String, Array2<T>)>) -> Result<Self, FusionError> {
        let mut model = Self::new(config)?;
        if tensors.len() != model.specs.len() {
            return Err(FusionError::Contract(format!("expected {} tensors, got {}", model.specs.len(), tensors.len())));
        }
        for (slot, ((name, t), spec)) in tensors.into_iter().zip(&model.specs).enumerate() {
            if name != spec.name || t.dim() != (spec.rows, spec.cols) {
                return Err(FusionError::Contract(format!(
                    "tensor {name:?} {:?} does not match {:?} ({}, {})",
                    t.dim(),
                    spec.name,
                    spec.rows,
                    spec.cols
                )));
            }
            model.params[slot] = t;
        }
        Ok(model)
    }

    pub fn config(&self) -> &FusionConfig {
        &self.config
    }

    pub fn params(&self) -> &[Array2<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Array2<T>] {
        &mut self.params
    }

    pub fn param_names(&self) -> Vec<String> {
        self.specs.iter().map(|s| s.name.clone()).collect()
    }

    pub(crate) fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn param(&self, name: &str) -> Option<&Array2<T>> {
        self.specs.iter().position(|s| s.name == name).map(|i| &self.params[i])
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Array2<T>> {
        self.specs.iter().position(|s| s.name == name).map(move |i| &mut self.params[i])
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(|p| p.len()).sum()
    }

    fn check_ids(&self, ids: &[u32]) -> Result<(), FusionError> {
        match ids.iter().find(|&&id| id as usize >= self.config.vocab_size) {
            Some(&id) => Err(FusionError::Contract(format!("token id {id} >= vocab size {}", self.config.vocab_size))),
            None => Ok(()),
        }
    }

    fn embed(&self, g: &mut Graph<'_, T>, ids: Vec<usize>, positions: &[usize]) -> Result<NodeId, FusionError> {
        if let Some(&p) = positions.iter().find(|&&p| p >= self.positions.nrows()) {
            return Err(FusionError::Contract(format!("position {p} exceeds the position table")));
        }
        let table = g.param(self.layout.embed);
        let x = g.gather(table, ids);
        let pe = Array2::from_shape_fn((positions.len(), self.config.d), |(r, c)| self.positions[[positions[r], c]]);
        let pe = g.leaf(pe);
        Ok(g.add(x, pe))
    }

    fn norm(&self, g: &mut Graph<'_, T>, x: NodeId, idx: NormIdx) -> NodeId {
        let (gamma, beta) = (g.param(idx.gamma), g.param(idx.beta));
        g.layer_norm(x, gamma, beta)
    }

    fn attend(&self, g: &mut Graph<'_, T>, h: NodeId, kv: NodeId, idx: AttnIdx, blocks: Vec<AttnBlock>) -> NodeId {
        let (wq, wk, wv, wo) = (g.param(idx.wq), g.param(idx.wk), g.param(idx.wv), g.param(idx.wo));
        let q = g.matmul(h, wq);
        let k = g.matmul(kv, wk);
        let v = g.matmul(kv, wv);
        let a = g.attention(q, k, v, self.config.heads, blocks);
        g.matmul(a, wo)
    }

    fn ffn(&self, g: &mut Graph<'_, T>, x: NodeId, idx: FfnIdx) -> NodeId {
        let (w1, b1, w2, b2) = (g.param(idx.w1), g.param(idx.b1), g.param(idx.w2), g.param(idx.b2));
        let h = g.matmul(x, w1);
        let h = g.add_row(h, b1);
        let h = g.gelu(h);
        let o = g.matmul(h, w2);
        g.add_row(o, b2)
    }

    /// Runs the encoder over packed sequences; returns final-layer states.
    fn encoder(&self, g: &mut Graph<'_, T>, packed: &Packed) -> Result<NodeId, FusionError> {
        let mut x = self.embed(g, packed.ids.clone(), &packed.positions)?;
        for layer in &self.layout.enc {
            let a = self.norm(g, x, layer.ln1);
            let a = self.attend(g, a, a, layer.attn, packed.blocks.clone());
            x = g.add(x, a);
            let f = self.norm(g, x, layer.ln2);
            let f = self.ffn(g, f, layer.ffn);
            x = g.add(x, f);
        }
        Ok(self.norm(g, x, self.layout.enc_norm))
    }

    /// Builds the knowledge rows for a batch; returns the node and each
    /// example's `(first row, row count)`.
    fn knowledge(&self, g: &mut Graph<'_, T>, batch: &[&EncodedExample]) -> Result<(NodeId, Vec<(usize, usize)>), FusionError> {
        let mut seqs: Vec<&[u32]> = Vec::new();
        let mut counts = Vec::with_capacity(batch.len());
        for ex in batch {
            match (&ex.knowledge, self.config.reasoning) {
                (KnowledgeTokens::Pairs { sequences, .. }, ReasoningMode::PerPair) => {
                    seqs.extend(sequences.iter().map(Vec::as_slice));
                    counts.push(sequences.len());
                }
                (KnowledgeTokens::Concat(s), ReasoningMode::Concat) => {
                    seqs.push(s);
                    counts.push(1);
                }
                _ => return Err(FusionError::Contract("example encoding does not match the model's reasoning mode".into())),
            }
        }
        if counts.contains(&0) {
            return Err(FusionError::NoKnowledge);
        }
        if let Some(s) = seqs.iter().find(|s| s.is_empty()) {
            let _ = s;
            return Err(FusionError::EmptySequence);
        }
        for s in &seqs {
            self.check_ids(s)?;
        }
        let packed = pack(&seqs, None, false);
        let h = self.encoder(g, &packed)?;
        match self.config.reasoning {
            ReasoningMode::PerPair => {
                let pooled = g.segment_mean(h, packed.segments.clone());
                let mut ranges = Vec::with_capacity(counts.len());
                let mut row = 0;
                for c in counts {
                    ranges.push((row, c));
                    row += c;
                }
                Ok((pooled, ranges))
            }
            ReasoningMode::Concat => Ok((h, packed.segments)),
        }
    }

    /// Decoder over `inputs` (each starting with BOS), cross-attending each
    /// example to its knowledge range. Returns logits for every input row.
    fn decoder(&self, g: &mut Graph<'_, T>, know: NodeId, ranges: &[(usize, usize)], inputs: &[Vec<u32>]) -> Result<NodeId, FusionError> {
        let seqs: Vec<&[u32]> = inputs.iter().map(Vec::as_slice).collect();
        for s in &seqs {
            self.check_ids(s)?;
        }
        let packed = pack(&seqs, None, true);
        let cross: Vec<AttnBlock> = packed
            .segments
            .iter()
            .zip(ranges)
            .map(|(&(q_start, q_len), &(k_start, k_valid))| AttnBlock { q_start, q_len, k_start, k_valid, causal: false })
            .collect();
        let mut y = self.embed(g, packed.ids.clone(), &packed.positions)?;
        for layer in &self.layout.dec {
            let a = self.norm(g, y, layer.ln1);
            let a = self.attend(g, a, a, layer.self_attn, packed.blocks.clone());
            y = g.add(y, a);
            let c = self.norm(g, y, layer.ln2);
            let c = self.attend(g, c, know, layer.cross, cross.clone());
            y = g.add(y, c);
            let f = self.norm(g, y, layer.ln3);
            let f = self.ffn(g, f, layer.ffn);
            y = g.add(y, f);
        }
        let y = self.norm(g, y, self.layout.dec_norm);
        let (w, b) = (g.param(self.layout.out_w), g.param(self.layout.out_b));
        let logits = g.matmul(y, w);
        Ok(g.add_row(logits, b))
    }

    /// Teacher-forced graph for a batch; returns the summed loss node, the
    /// logits node and the number of scored target tokens.
    fn batch_graph(&self, g: &mut Graph<'_, T>, batch: &[&EncodedExample]) -> Result<(NodeId, NodeId, usize), FusionError> {
        let mut inputs = Vec::with_capacity(batch.len());
        let mut targets = Vec::new();
        for ex in batch {
            if ex.target.last() != Some(&EOS) {
                return Err(FusionError::Contract("target must end with EOS".into()));
            }
            let mut input = vec![BOS];
            input.extend_from_slice(&ex.target[..ex.target.len() - 1]);
            inputs.push(input);
            targets.extend(ex.target.iter().map(|&t| (t != PAD).then_some(t as usize)));
        }
        let count = targets.iter().filter(|t| t.is_some()).count();
        let (know, ranges) = self.knowledge(g, batch)?;
        let logits = self.decoder(g, know, &ranges, &inputs)?;
        let loss = g.cross_entropy(logits, targets);
        Ok((loss, logits, count))
    }

    /// Teacher-forced forward pass on one example.
    pub fn forward(&self, example: &EncodedExample) -> Result<ForwardOutput<T>, FusionError> {
        let mut g = Graph::new(&self.params);
        let (loss, logits, count) = self.batch_graph(&mut g, &[example])?;
        Ok(ForwardOutput {
            logits: g.value(logits).to_owned(),
            loss: g.value(loss)[[0, 0]] / T::from_usize(count).unwrap(),
            attention_maps: g.attention_maps(),
        })
    }

    /// Mean per-token loss over the batch and its exact gradient.
    pub fn loss_and_gradients(&self, batch: &[EncodedExample]) -> Result<(T, Gradients<T>), FusionError> {
        if batch.is_empty() {
            return Err(FusionError::Contract("empty batch".into()));
        }
        let refs: Vec<&EncodedExample> = batch.iter().collect();
        let mut g = Graph::new(&self.params);
        let (loss, _, count) = self.batch_graph(&mut g, &refs)?;
        let scale = T::one() / T::from_usize(count).unwrap();
        let raw = g.backward(loss, scale);
        let tensors = raw
            .into_iter()
            .zip(&self.params)
            .map(|(gr, p)| gr.unwrap_or_else(|| Array2::zeros(p.dim())))
            .collect();
        let grads = Gradients { names: self.param_names(), tensors };
        grads.check_finite()?;
        Ok((g.value(loss)[[0, 0]] * scale, grads))
    }

    /// Mean loss only; used by finite-difference checks.
    pub fn batch_loss(&self, batch: &[EncodedExample]) -> Result<T, FusionError> {
        let refs: Vec<&EncodedExample> = batch.iter().collect();
        let mut g = Graph::new(&self.params);
        let (loss, _, count) = self.batch_graph(&mut g, &refs)?;
        Ok(g.value(loss)[[0, 0]] / T::from_usize(count).unwrap())
    }

    /// Encodes token sequences in one padded batch and mean-pools each over
    /// its non-padding positions.
    pub fn encode_pairs(&self, pairs: &[Vec<u32>]) -> Result<Array2<T>, FusionError> {
        if pairs.iter().any(Vec::is_empty) {
            return Err(FusionError::EmptySequence);
        }
        for p in pairs {
            self.check_ids(p)?;
        }
        let longest = pairs.iter().map(Vec::len).max().unwrap_or(0);
        let seqs: Vec<&[u32]> = pairs.iter().map(Vec::as_slice).collect();
        let packed = pack(&seqs, Some(longest), false);
        let mut g = Graph::new(&self.params);
        let h = self.encoder(&mut g, &packed)?;
        let pooled = g.segment_mean(h, packed.segments.clone());
        Ok(g.value(pooled).to_owned())
    }

    /// Pooled explicit, implicit and fused knowledge rows of one example.
    pub fn knowledge_embeddings(&self, example: &EncodedExample) -> Result<KnowledgeEmbeddings<T>, FusionError> {
        let KnowledgeTokens::Pairs { sequences, explicit } = &example.knowledge else {
            return Err(FusionError::Contract("knowledge embeddings need per-pair encoding".into()));
        };
        let fused = if sequences.is_empty() { Array2::zeros((0, self.config.d)) } else { self.encode_pairs(sequences)? };
        Ok(KnowledgeEmbeddings {
            explicit: fused.slice(ndarray::s![..*explicit, ..]).to_owned(),
            implicit: fused.slice(ndarray::s![*explicit.., ..]).to_owned(),
            fused,
        })
    }

    /// Greedy decoding from BOS until EOS or `max_answer_len` tokens.
    pub fn generate(&self, tokenizer: &Tokenizer, example: &EncodedExample, max_answer_len: usize) -> Result<Generation, FusionError> {
        let mut g = Graph::new(&self.params);
        let (know, ranges) = self.knowledge(&mut g, &[example])?;
        let know = g.value(know).to_owned();
        let mut input = vec![BOS];
        let mut tokens = Vec::new();
        let mut logprob = 0.0;
        // Answer tokens plus the closing EOS.
        for _ in 0..=max_answer_len {
            let mut g = Graph::new(&self.params);
            let k = g.leaf(know.clone());
            let logits = self.decoder(&mut g, k, &ranges, std::slice::from_ref(&input))?;
            let lv = g.value(logits);
            let last = lv.row(lv.nrows() - 1);
            let mut best = 0usize;
            for (i, &v) in last.iter().enumerate() {
                if v > last[best] {
                    best = i;
                }
            }
            if tokens.len() == max_answer_len {
                // Length cap reached: only EOS may follow.
                best = EOS as usize;
            }
            let max = last.iter().fold(T::neg_infinity(), |a, &b| a.max(b)).to_f64_lossy();
            let lse = max + last.iter().map(|&v| (v.to_f64_lossy() - max).exp()).sum::<f64>().ln();
            logprob += last[best].to_f64_lossy() - lse;
            if best == EOS as usize {
                break;
            }
            tokens.push(best as u32);
            input.push(best as u32);
        }
        Ok(Generation { answer: tokenizer.decode(&tokens).to_lowercase(), tokens, logprob })
    }
}
