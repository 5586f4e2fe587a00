use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{EmbeddingProvider, ProviderError, RegionSpec};
use crate::index::{rank_order, IndexError, VectorIndex};
use crate::kb::{KnowledgeBase, KnowledgeEntry};

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("index returned id {0:?} which is not in the knowledge base")]
    UnknownEntry(String),
    #[error("index dimension {index} differs from provider dimension {provider}")]
    DimensionMismatch { index: usize, provider: usize },
    #[error("k and m must be positive")]
    ZeroLimit,
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Index(#[from] IndexError),
}

/// One retrieved entry with its best region score.
#[derive(Debug, Clone, PartialEq)]
pub struct ExplicitItem {
    pub entry: KnowledgeEntry,
    pub score: f64,
    pub source_region: String,
}

/// Top-`m` explicit knowledge for one image, best first.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExplicitKnowledge {
    pub items: Vec<ExplicitItem>,
}

impl ExplicitKnowledge {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Keeps at most the first `m` items.
    pub fn truncated(&self, m: usize) -> Self {
        Self { items: self.items.iter().take(m).cloned().collect() }
    }

    pub fn entries(&self) -> impl Iterator<Item = &KnowledgeEntry> {
        self.items.iter().map(|i| &i.entry)
    }

    pub fn to_record(&self, image_id: &str) -> ExplicitRecord {
        ExplicitRecord {
            image_id: image_id.to_string(),
            items: self
                .items
                .iter()
                .map(|i| ExplicitRecordItem { id: i.entry.id.clone(), score: i.score, region: i.source_region.clone() })
                .collect(),
        }
    }

    pub fn from_record(record: &ExplicitRecord, kb: &KnowledgeBase) -> Result<Self, RetrievalError> {
        let items = record
            .items
            .iter()
            .map(|r| {
                let entry = kb.get(&r.id).ok_or_else(|| RetrievalError::UnknownEntry(r.id.clone()))?;
                Ok(ExplicitItem { entry: entry.clone(), score: r.score, source_region: r.region.clone() })
            })
            .collect::<Result<_, RetrievalError>>()?;
        Ok(Self { items })
    }
}

/// Line record of the retrieval output file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplicitRecord {
    pub image_id: String,
    pub items: Vec<ExplicitRecordItem>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplicitRecordItem {
    pub id: String,
    pub score: f64,
    pub region: String,
}

/// Retrieves top-`k` entries per region, keeps each entry's best score (the
/// earliest region wins exact ties), ranks the pool by score then id, and
/// keeps the first `m`.
pub fn retrieve_explicit(
    kb: &KnowledgeBase,
    index: &VectorIndex,
    provider: &dyn EmbeddingProvider,
    image_id: &str,
    regions: &[RegionSpec],
    k: usize,
    m: usize,
) -> Result<ExplicitKnowledge, RetrievalError> {
    if k == 0 || m == 0 {
        return Err(RetrievalError::ZeroLimit);
    }
    if index.dim() != provider.dim() {
        return Err(RetrievalError::DimensionMismatch { index: index.dim(), provider: provider.dim() });
    }
    let mut pool: HashMap<String, (f64, usize)> = HashMap::new();
    for (ri, region) in regions.iter().enumerate() {
        let query = provider.embed_region(image_id, region)?;
        for hit in index.search(&query, k)? {
            match pool.get_mut(&hit.entry_id) {
                Some(best) if hit.score > best.0 => *best = (hit.score, ri),
                Some(_) => {}
                None => {
                    pool.insert(hit.entry_id, (hit.score, ri));
                }
            }
        }
    }
    let mut ranked: Vec<(String, f64, usize)> = pool.into_iter().map(|(id, (s, r))| (id, s, r)).collect();
    ranked.sort_by(|a, b| rank_order(a.1, &a.0, b.1, &b.0));
    ranked.truncate(m);
    let items = ranked
        .into_iter()
        .map(|(id, score, ri)| {
            let entry = kb.get(&id).ok_or_else(|| RetrievalError::UnknownEntry(id.clone()))?;
            Ok(ExplicitItem { entry: entry.clone(), score, source_region: regions[ri].region_id.clone() })
        })
        .collect::<Result<_, RetrievalError>>()?;
    Ok(ExplicitKnowledge { items })
}
