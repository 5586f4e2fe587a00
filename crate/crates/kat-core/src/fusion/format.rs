//! Encoder input strings. Every field is introduced by a sentinel token.

use crate::implicit::ImplicitItem;
use crate::kb::KnowledgeEntry;

/// Token cap of the single concatenated sequence used without the
/// per-pair reasoning module, end-of-sequence marker included.
pub const CONCAT_MAX_TOKENS: usize = 256;

fn push_field(out: &mut String, sentinel: &str, value: &str) {
    if !out.is_empty() {
        out.push(' ');
    }
    out.push_str(sentinel);
    let value = value.trim();
    if !value.is_empty() {
        out.push(' ');
        out.push_str(value);
    }
}

fn push_explicit(out: &mut String, entry: &KnowledgeEntry) {
    push_field(out, "entity:", &entry.label);
    push_field(out, "description:", &entry.description);
}

fn push_implicit(out: &mut String, item: &ImplicitItem) {
    push_field(out, "candidate:", &item.answer);
    push_field(out, "evidence:", &item.evidence);
}

/// `question: <q> entity: <label> description: <description>`
pub fn format_pair_explicit(question: &str, entry: &KnowledgeEntry) -> String {
    let mut s = String::new();
    push_field(&mut s, "question:", question);
    push_explicit(&mut s, entry);
    s
}

/// `question: <q> candidate: <answer> evidence: <evidence>`; an empty
/// evidence leaves the trailing `evidence:` marker in place.
pub fn format_pair_implicit(question: &str, item: &ImplicitItem) -> String {
    let mut s = String::new();
    push_field(&mut s, "question:", question);
    push_implicit(&mut s, item);
    s
}

/// All knowledge as one sequence: the question, every explicit entry, then
/// every implicit item.
pub fn format_concat(question: &str, explicit: &[KnowledgeEntry], implicit: &[ImplicitItem]) -> String {
    let mut s = String::new();
    push_field(&mut s, "question:", question);
    for e in explicit {
        push_explicit(&mut s, e);
    }
    for i in implicit {
        push_implicit(&mut s, i);
    }
    s
}
