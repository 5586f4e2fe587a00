//! Fusion-in-decoder reasoning over explicit and implicit knowledge.
//!
//! Each question-knowledge pair is tokenized with field sentinels, encoded on
//! its own and mean-pooled into one row. The decoder cross-attends over the
//! stacked rows (explicit first) and generates the answer greedily. Gradients
//! come from a small reverse-mode tape in [`graph`](self) with hand-written
//! adjoints for attention, layer norm and cross-entropy.

mod attention;
mod checkpoint;
mod format;
mod graph;
mod model;
mod tokenizer;
mod train;

use thiserror::Error;

pub use attention::{cross_attend, CrossAttention, CrossAttentionWeights};
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use format::{format_concat, format_pair_explicit, format_pair_implicit, CONCAT_MAX_TOKENS};
pub use model::{
    answer_target, encode_example, positional_table, EncodedExample, ForwardOutput, FusionConfig, FusionModel, Generation,
    Gradients, KnowledgeConfig, KnowledgeEmbeddings, KnowledgeTokens, ReasoningMode,
};
pub use tokenizer::{split_pieces, Tokenizer, BOS, EOS, PAD, SENTINELS, UNK};
pub use train::{train, train_with, AdamW, Schedule, TrainError, TrainOptions, TrainReport};

#[derive(Debug, Error)]
pub enum FusionError {
    #[error("invalid fusion config: {0}")]
    Config(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("no knowledge rows: at least one explicit or implicit item is required")]
    NoKnowledge,
    #[error("empty token sequence cannot be encoded")]
    EmptySequence,
    #[error("non-finite gradient in tensor {0}")]
    NonFiniteGradient(String),
    #[error("checkpoint corrupt at byte {offset}: {reason}")]
    Checkpoint { offset: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
