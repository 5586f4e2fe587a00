use super::QAExample;
use crate::index::{rank_order, EmbeddingVector};
use crate::retriever::{EmbeddingProvider, ProviderError};

/// Text whose embedding ranks exemplars: `caption + " " + question`.
pub fn similarity_text(ex: &QAExample) -> String {
    format!("{} {}", ex.caption, ex.question)
}

/// Picks the `n` pool examples most similar to `target` by inner product of
/// their `caption + " " + question` embeddings; ties go to the smaller qid.
/// The target itself (same qid) is never selected.
pub fn select_exemplars(
    pool: &[QAExample],
    target: &QAExample,
    provider: &dyn EmbeddingProvider,
    n: usize,
) -> Result<Vec<QAExample>, ProviderError> {
    if n == 0 {
        return Ok(Vec::new());
    }
    let t: EmbeddingVector = provider.embed_text(&similarity_text(target))?;
    let mut scored = Vec::with_capacity(pool.len());
    for ex in pool.iter().filter(|e| e.qid != target.qid) {
        let score = provider.embed_text(&similarity_text(ex))?.dot(&t);
        scored.push((score, ex));
    }
    scored.sort_by(|a, b| rank_order(a.0, &a.1.qid, b.0, &b.1.qid));
    Ok(scored.into_iter().take(n).map(|(_, e)| e.clone()).collect())
}
