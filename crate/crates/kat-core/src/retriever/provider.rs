use std::collections::HashMap;
use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::RegionSpec;
use crate::binio::{put_f32s, put_str16, put_u32, put_u64, sha256_hex, ByteReader};
use crate::index::EmbeddingVector;

const EMB_MAGIC: &[u8; 8] = b"KATEMB01";

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("no embedding stored under key {0:?}")]
    MissingKey(String),
    #[error("embedding {key:?} is not unit-norm (norm {norm})")]
    NotUnitNorm { key: String, norm: f64 },
    #[error("embedding {key:?} has dimension {got}, expected {expected}")]
    DimensionMismatch { key: String, expected: usize, got: usize },
    #[error("duplicate embedding key {0:?}")]
    DuplicateKey(String),
    #[error("corrupt embeddings file at byte {offset}: {reason}")]
    Corrupt { offset: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Lookup key for a text embedding: `text:<sha256 hex of the UTF-8 text>`.
pub fn text_key(text: &str) -> String {
    format!("text:{}", sha256_hex(text.as_bytes()))
}

/// Lookup key for a region embedding: `region:<image_id>#r<i>`.
pub fn region_key(region: &RegionSpec) -> String {
    format!("region:{}", region.region_id)
}

/// Maps texts and image regions into a shared unit-norm embedding space.
///
/// Implementations must be deterministic and safe for concurrent reads.
pub trait EmbeddingProvider: Send + Sync {
    fn dim(&self) -> usize;

    /// Resolves a key produced by [`text_key`] or [`region_key`].
    fn embed_key(&self, key: &str) -> Result<EmbeddingVector, ProviderError>;

    fn embed_text(&self, text: &str) -> Result<EmbeddingVector, ProviderError> {
        self.embed_key(&text_key(text))
    }

    fn embed_region(&self, _image_id: &str, region: &RegionSpec) -> Result<EmbeddingVector, ProviderError> {
        self.embed_key(&region_key(region))
    }
}

/// Deterministic pseudo-random provider: each key seeds a ChaCha stream from
/// `sha256(seed || key)` and draws a Gaussian vector, which is normalized.
#[derive(Debug, Clone)]
pub struct HashProvider {
    seed: u64,
    dim: usize,
}

pub fn hash_provider(seed: u64, dim: usize) -> HashProvider {
    assert!(dim >= 2, "hash provider needs dim >= 2");
    HashProvider { seed, dim }
}

impl HashProvider {
    fn vector(&self, key: &str) -> EmbeddingVector {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(key.as_bytes());
        let digest: [u8; 32] = h.finalize().into();
        let mut rng = ChaCha8Rng::from_seed(digest);
        loop {
            let raw: Vec<f64> = (0..self.dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            if let Some(v) = EmbeddingVector::normalized(&raw) {
                return v;
            }
        }
    }
}

impl EmbeddingProvider for HashProvider {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_key(&self, key: &str) -> Result<EmbeddingVector, ProviderError> {
        Ok(self.vector(key))
    }
}

/// Provider backed by a precomputed embeddings file. Unknown keys are errors.
#[derive(Debug, Clone)]
pub struct FileProvider {
    dim: usize,
    vectors: HashMap<String, EmbeddingVector>,
}

impl FileProvider {
    pub fn load<R: Read>(source: R) -> Result<Self, ProviderError> {
        let (dim, records) = read_embeddings(source)?;
        Self::from_records(dim, records)
    }

    pub fn from_records(dim: usize, records: Vec<(String, EmbeddingVector)>) -> Result<Self, ProviderError> {
        let mut vectors = HashMap::with_capacity(records.len());
        for (key, v) in records {
            if v.dim() != dim {
                return Err(ProviderError::DimensionMismatch { key, expected: dim, got: v.dim() });
            }
            if !v.is_unit() {
                let norm = v.norm();
                return Err(ProviderError::NotUnitNorm { key, norm });
            }
            if vectors.contains_key(&key) {
                return Err(ProviderError::DuplicateKey(key));
            }
            vectors.insert(key, v);
        }
        Ok(Self { dim, vectors })
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }
}

impl EmbeddingProvider for FileProvider {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_key(&self, key: &str) -> Result<EmbeddingVector, ProviderError> {
        self.vectors.get(key).cloned().ok_or_else(|| ProviderError::MissingKey(key.to_string()))
    }
}

/// Writes `records` in the embeddings file format, in the given order.
pub fn write_embeddings<W: Write>(mut sink: W, dim: usize, records: &[(String, EmbeddingVector)]) -> Result<(), ProviderError> {
    let mut out = Vec::with_capacity(20 + records.len() * (dim * 4 + 40));
    out.extend_from_slice(EMB_MAGIC);
    put_u32(&mut out, dim as u32);
    put_u64(&mut out, records.len() as u64);
    for (key, v) in records {
        if v.dim() != dim {
            return Err(ProviderError::DimensionMismatch { key: key.clone(), expected: dim, got: v.dim() });
        }
        put_str16(&mut out, key);
        put_f32s(&mut out, v.as_slice());
    }
    sink.write_all(&out)?;
    sink.flush()?;
    Ok(())
}

/// Reads an embeddings file without validating norms.
pub fn read_embeddings<R: Read>(mut source: R) -> Result<(usize, Vec<(String, EmbeddingVector)>), ProviderError> {
    let mut buf = Vec::new();
    source.read_to_end(&mut buf)?;
    let short = |e: crate::binio::ShortRead| ProviderError::Corrupt { offset: e.offset, reason: e.to_string() };
    let mut r = ByteReader::new(&buf);
    if r.take(8).map_err(short)? != EMB_MAGIC {
        return Err(ProviderError::Corrupt { offset: 0, reason: "bad magic or version".into() });
    }
    let dim = r.u32().map_err(short)? as usize;
    let count = r.u64().map_err(short)?;
    let mut records = Vec::new();
    for _ in 0..count {
        let at = r.offset();
        let len = r.u16().map_err(short)? as usize;
        let key = std::str::from_utf8(r.take(len).map_err(short)?)
            .map_err(|e| ProviderError::Corrupt { offset: at, reason: format!("key is not UTF-8: {e}") })?
            .to_string();
        let mut values = Vec::with_capacity(dim);
        r.f32s(dim, &mut values).map_err(short)?;
        records.push((key, EmbeddingVector::from_raw(values)));
    }
    if r.remaining() != 0 {
        return Err(ProviderError::Corrupt { offset: r.offset(), reason: "trailing bytes".into() });
    }
    Ok((dim, records))
}
