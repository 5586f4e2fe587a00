//! Lowercased word-level tokenizer with punctuation splitting.

use std::collections::{BTreeSet, HashMap};
use std::io::{BufRead, Write};

use super::FusionError;

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
pub const UNK: u32 = 3;

/// Field markers that always map to a single token.
pub const SENTINELS: [&str; 5] = ["question:", "entity:", "description:", "candidate:", "evidence:"];

const SPECIALS: [&str; 4] = ["<pad>", "<s>", "</s>", "<unk>"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tokenizer {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

/// Splits text into lowercase pieces: sentinels stay whole, otherwise runs of
/// alphanumerics and single punctuation characters.
pub fn split_pieces(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        let lower = chunk.to_lowercase();
        if SENTINELS.contains(&lower.as_str()) {
            out.push(lower);
            continue;
        }
        let mut word = String::new();
        for c in lower.chars() {
            if c.is_alphanumeric() {
                word.push(c);
            } else {
                if !word.is_empty() {
                    out.push(std::mem::take(&mut word));
                }
                out.push(c.to_string());
            }
        }
        if !word.is_empty() {
            out.push(word);
        }
    }
    out
}

impl Tokenizer {
    fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        Self { tokens, index }
    }

    /// Builds a vocabulary from a corpus: specials, then sentinels, then every
    /// distinct piece in lexicographic order.
    pub fn fit<'a, I>(texts: I) -> Self
    where
        I: IntoIterator<Item = &'a str>,
    {
        let reserved: Vec<String> = SPECIALS.iter().chain(SENTINELS.iter()).map(|s| s.to_string()).collect();
        let mut words = BTreeSet::new();
        for t in texts {
            for piece in split_pieces(t) {
                if !reserved.contains(&piece) {
                    words.insert(piece);
                }
            }
        }
        Self::from_tokens(reserved.into_iter().chain(words).collect())
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn encode(&self, text: &str) -> Vec<u32> {
        split_pieces(text).iter().map(|p| self.index.get(p).copied().unwrap_or(UNK)).collect()
    }

    /// Joins non-special tokens, attaching punctuation to its neighbours.
    pub fn decode(&self, ids: &[u32]) -> String {
        let mut out = String::new();
        let mut prev_joiner = true;
        for &id in ids {
            if matches!(id, PAD | BOS | EOS) {
                continue;
            }
            let tok = self.token(id).unwrap_or("<unk>");
            let attaches = matches!(tok, "." | "," | "!" | "?" | ";" | ":" | ")" | "'" | "-" | "/");
            if !out.is_empty() && !prev_joiner && !attaches {
                out.push(' ');
            }
            out.push_str(tok);
            prev_joiner = matches!(tok, "(" | "'" | "-" | "/");
        }
        out
    }

    pub fn write_vocab<W: Write>(&self, mut sink: W) -> std::io::Result<()> {
        for t in &self.tokens {
            writeln!(sink, "{t}")?;
        }
        sink.flush()
    }

    pub fn read_vocab<R: BufRead>(source: R) -> Result<Self, FusionError> {
        let tokens = source.lines().collect::<Result<Vec<_>, _>>()?;
        let reserved = SPECIALS.iter().chain(SENTINELS.iter());
        if tokens.len() < SPECIALS.len() + SENTINELS.len() || !tokens.iter().zip(reserved).all(|(a, b)| a == b) {
            return Err(FusionError::Contract("vocabulary does not start with the reserved tokens".into()));
        }
        Ok(Self::from_tokens(tokens))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn reserved_layout() {
        let t = Tokenizer::fit(["What color is the bench?"]);
        assert_eq!(t.id("<pad>"), Some(PAD));
        assert_eq!(t.id("</s>"), Some(EOS));
        assert_eq!(t.id("question:"), Some(4));
        assert_eq!(t.encode("question: what color? entity:"), vec![4, t.id("what").unwrap(), t.id("color").unwrap(), t.id("?").unwrap(), 5]);
        assert_eq!(t.encode("zebra"), vec![UNK]);
    }

    #[test]
    fn decode_attaches_punctuation() {
        let t = Tokenizer::fit(["coca-cola is it? don't"]);
        assert_eq!(t.decode(&t.encode("Coca-Cola is it?")), "coca-cola is it?");
        assert_eq!(t.decode(&t.encode("don't")), "don't");
    }

    #[test]
    fn vocab_file_round_trip() {
        let t = Tokenizer::fit(["a b c", "d"]);
        let mut buf = Vec::new();
        t.write_vocab(&mut buf).unwrap();
        assert_eq!(Tokenizer::read_vocab(buf.as_slice()).unwrap(), t);
    }

    proptest! {
        #[test]
        fn encode_decode_round_trips(words in proptest::collection::vec("[a-z]{1,6}|[?.,!-]", 1..12)) {
            let text = words.join(" ");
            let t = Tokenizer::fit([text.as_str()]);
            let ids = t.encode(&text);
            prop_assert_eq!(t.encode(&t.decode(&ids)), ids);
        }
    }
}
