//! Explicit knowledge retrieval: image regions are embedded through a
//! pluggable provider, each region retrieves its top-`k` entries from the
//! index, and the pooled candidates are merged into a top-`m` list.

mod explicit;
mod provider;
mod regions;

pub use explicit::{
    retrieve_explicit, ExplicitItem, ExplicitKnowledge, ExplicitRecord, ExplicitRecordItem, RetrievalError,
};
pub use provider::{
    hash_provider, read_embeddings, region_key, text_key, write_embeddings, EmbeddingProvider, FileProvider,
    HashProvider, ProviderError,
};
pub use regions::{generate_regions, RegionSpec, WindowConfig};

/// Default number of explicit entries kept per image.
pub const DEFAULT_M: usize = 40;
