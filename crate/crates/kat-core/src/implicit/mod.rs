//! Implicit knowledge: exemplar selection, prompt construction and
//! elicitation of (tentative answer, evidence) pairs from a language model.

mod elicit;
mod example;
mod exemplars;
mod lm;
mod prompt;

pub use elicit::{elicit, read_implicit, write_implicit, ElicitConfig, ElicitError, Elicitation, ImplicitItem, ImplicitRecord};
pub use example::{read_dataset, write_dataset, DatasetError, QAExample, CATEGORIES, UNKNOWN_CATEGORY};
pub use exemplars::{select_exemplars, similarity_text};
pub use lm::{
    prompt_hash, LmClient, LmError, RecordingClient, ReplayClient, ScriptedClient, Transcript, TranscriptRecord,
};
pub use prompt::{build_answer_prompt, build_evidence_prompt, ANSWER_INSTRUCTION};
