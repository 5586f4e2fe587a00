//! Seeded synthetic tasks for exercising the fusion model.
//!
//! Words are drawn from disjoint families so every token's role is known:
//! `xw*` words only appear in the one relevant explicit entry, `yw*` words
//! only as the relevant implicit candidate, `nw*` words are noise.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::eval::{KnowledgeInputs, GOLD_COUNT};
use crate::implicit::{ImplicitItem, QAExample};
use crate::kb::{KnowledgeEntry, Subclass};

/// One example together with the knowledge supplied for it.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticExample {
    pub example: QAExample,
    /// Explicit entries in retrieval order.
    pub explicit: Vec<KnowledgeEntry>,
    pub implicit: Vec<ImplicitItem>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SyntheticSet {
    pub examples: Vec<SyntheticExample>,
}

impl SyntheticSet {
    pub fn dataset(&self) -> Vec<QAExample> {
        self.examples.iter().map(|e| e.example.clone()).collect()
    }

    pub fn knowledge(&self) -> KnowledgeInputs {
        let mut k = KnowledgeInputs::default();
        for e in &self.examples {
            k.explicit.insert(e.example.image_id.clone(), e.explicit.clone());
            k.implicit.insert(e.example.qid.clone(), e.implicit.clone());
        }
        k
    }

    /// Every string the tokenizer needs to cover.
    pub fn texts(&self) -> Vec<String> {
        let mut out = Vec::new();
        for e in &self.examples {
            out.push(e.example.question.clone());
            out.extend(e.example.answers.iter().take(1).cloned());
            for k in &e.explicit {
                out.push(k.label.clone());
                out.push(k.description.clone());
            }
            for i in &e.implicit {
                out.push(i.answer.clone());
                out.push(i.evidence.clone());
            }
        }
        out
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }
}

fn words(rng: &mut ChaCha8Rng, prefix: &str, family: usize, n: usize) -> String {
    (0..n).map(|_| format!("{prefix}{}", rng.random_range(0..family))).collect::<Vec<_>>().join(" ")
}

fn entry(id: String, label: String, description: String, rng: &mut ChaCha8Rng) -> KnowledgeEntry {
    let subclass = Subclass::ALL[rng.random_range(0..Subclass::ALL.len())];
    KnowledgeEntry::new(&id, &label, &description, subclass)
}

fn qa(qid: String, question: String, answer: &str, category: &str) -> QAExample {
    let mut ex = QAExample::new(&qid, &format!("img-{qid}"), &question, "synthetic scene", vec![answer.to_string(); GOLD_COUNT]);
    ex.category = category.to_string();
    ex
}

/// `n` examples whose answers are arbitrary one- or two-word strings tied to
/// a distinct question word; only memorization can recover them.
pub fn memorization_set(seed: u64, n: usize) -> SyntheticSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let examples = (0..n)
        .map(|i| {
            let answer_len = rng.random_range(1..=2);
            let answer = words(&mut rng, "aw", 16, answer_len);
            let question = format!("what is mw{i}?");
            let explicit = vec![entry(format!("Q{}", i + 1), words(&mut rng, "lw", 20, 1), words(&mut rng, "nw", 40, 3), &mut rng)];
            let implicit = vec![ImplicitItem::new(words(&mut rng, "nw", 40, 1), words(&mut rng, "nw", 40, 3))];
            SyntheticExample { example: qa(format!("mem{i:03}"), question, &answer, "Other"), explicit, implicit }
        })
        .collect();
    SyntheticSet { examples }
}

/// Shape of the complementarity task.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ComplementarityConfig {
    /// Explicit entries per example; the relevant one sits at a uniformly
    /// random rank among them.
    pub entries: usize,
    /// Noise words in each distractor description.
    pub description_words: usize,
    /// Size of the `xw*` and `yw*` answer-word families.
    pub family: usize,
}

impl Default for ComplementarityConfig {
    fn default() -> Self {
        Self { entries: 20, description_words: 12, family: 8 }
    }
}

/// Answers are `"<x> <y>"`: `x` is the label of one explicit entry, `y` only as one of two implicit candidates (the
/// other is noise). Neither source alone determines the answer.
pub fn complementarity_task(seed: u64, n: usize, cfg: ComplementarityConfig) -> SyntheticSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let examples = (0..n)
        .map(|i| {
            let x = format!("xw{}", rng.random_range(0..cfg.family));
            let y = format!("yw{}", rng.random_range(0..cfg.family));
            let relevant = rng.random_range(0..cfg.entries);
            let explicit = (0..cfg.entries)
                .map(|r| {
                    let label = if r == relevant { x.clone() } else { words(&mut rng, "lw", 20, 1) };
                    let description = words(&mut rng, "nw", 40, cfg.description_words);
                    entry(format!("Q{}", r + 1), label, description, &mut rng)
                })
                .collect();
            let mut implicit = vec![
                ImplicitItem::new(y.clone(), words(&mut rng, "nw", 40, 3)),
                ImplicitItem::new(words(&mut rng, "nw", 40, 1), words(&mut rng, "nw", 40, 3)),
            ];
            implicit.shuffle(&mut rng);
            let question = "what code?".to_string();
            SyntheticExample { example: qa(format!("cmp{i:04}"), question, &format!("{x} {y}"), "Other"), explicit, implicit }
        })
        .collect();
    SyntheticSet { examples }
}
