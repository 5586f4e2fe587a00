//! Exact inner-product vector index over unit-norm embeddings.
//!
//! Rows are stored as `f32` in ascending id order; scores are accumulated in
//! `f64`. Ties in score are broken by ascending id, which makes every search
//! result a total order and therefore reproducible.

use std::cmp::Ordering;
use std::collections::HashSet;
use std::io::{Read, Write};

use thiserror::Error;

use crate::binio::{put_f32s, put_str16, put_u32, put_u64, ByteReader};

/// Allowed deviation of a stored or query vector's L2 norm from 1.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-4;

const INDEX_MAGIC: &[u8; 8] = b"KATIDX01";

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("vector for {id:?} is not unit-norm (norm {norm})")]
    NotUnitNorm { id: String, norm: f64 },
    #[error("duplicate id {0:?}")]
    DuplicateId(String),
    #[error("index dimension must be positive")]
    ZeroDimension,
    #[error("id {0:?} is longer than 65535 bytes")]
    IdTooLong(String),
    #[error("corrupt index at byte {offset}: {reason}")]
    Corrupt { offset: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A dense vector of `f32` values expected to have unit L2 norm.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector(Vec<f32>);

impl EmbeddingVector {
    /// Wraps raw values without any normalization or validation.
    pub fn from_raw(values: Vec<f32>) -> Self {
        Self(values)
    }

    /// Scales `values` to unit norm. Returns `None` for the zero vector.
    pub fn normalized(values: &[f64]) -> Option<Self> {
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return None;
        }
        Some(Self(values.iter().map(|v| (v / norm) as f32).collect()))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f32> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>().sqrt()
    }

    pub fn is_unit(&self) -> bool {
        (self.norm() - 1.0).abs() <= UNIT_NORM_TOLERANCE
    }

    /// Inner product with `f64` accumulation.
    pub fn dot(&self, other: &EmbeddingVector) -> f64 {
        dot_f64(&self.0, &other.0)
    }
}

pub(crate) fn dot_f64(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| f64::from(x) * f64::from(y)).sum()
}

/// One search result.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredHit {
    pub entry_id: String,
    pub score: f64,
}

/// Total order used for ranking: score descending, then id ascending.
pub fn rank_order(a_score: f64, a_id: &str, b_score: f64, b_id: &str) -> Ordering {
    b_score.total_cmp(&a_score).then_with(|| a_id.cmp(b_id))
}

/// Flat exact index.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorIndex {
    dim: usize,
    ids: Vec<String>,
    matrix: Vec<f32>,
}

impl VectorIndex {
    /// Creates an empty index of the given dimension.
    pub fn empty(dim: usize) -> Result<Self, IndexError> {
        if dim == 0 {
            return Err(IndexError::ZeroDimension);
        }
        Ok(Self { dim, ids: Vec::new(), matrix: Vec::new() })
    }

    /// Builds an index from `(id, vector)` pairs. `dim` is required so an
    /// empty input still yields a usable index.
    pub fn build<I>(dim: usize, pairs: I) -> Result<Self, IndexError>
    where
        I: IntoIterator<Item = (String, EmbeddingVector)>,
    {
        let mut index = Self::empty(dim)?;
        let mut pairs: Vec<(String, EmbeddingVector)> = pairs.into_iter().collect();
        let mut seen = HashSet::with_capacity(pairs.len());
        for (id, v) in &pairs {
            if v.dim() != dim {
                return Err(IndexError::DimensionMismatch { expected: dim, got: v.dim() });
            }
            if !v.is_unit() {
                return Err(IndexError::NotUnitNorm { id: id.clone(), norm: v.norm() });
            }
            if id.len() > u16::MAX as usize {
                return Err(IndexError::IdTooLong(id.clone()));
            }
            if !seen.insert(id.as_str()) {
                return Err(IndexError::DuplicateId(id.clone()));
            }
        }
        pairs.sort_by(|a, b| a.0.cmp(&b.0));
        index.matrix.reserve(pairs.len() * dim);
        for (id, v) in pairs {
            index.ids.push(id);
            index.matrix.extend_from_slice(v.as_slice());
        }
        Ok(index)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.matrix[i * self.dim..(i + 1) * self.dim]
    }

    /// Raw row-major matrix bytes' source values.
    pub fn matrix(&self) -> &[f32] {
        &self.matrix
    }

    /// Exact top-`k` search. Returns `min(k, len)` hits, best first.
    pub fn search(&self, query: &EmbeddingVector, k: usize) -> Result<Vec<ScoredHit>, IndexError> {
        if query.dim() != self.dim {
            return Err(IndexError::DimensionMismatch { expected: self.dim, got: query.dim() });
        }
        let k = k.min(self.len());
        if k == 0 {
            return Ok(Vec::new());
        }
        let q = query.as_slice();
        let mut scored: Vec<(f64, usize)> = (0..self.len()).map(|i| (dot_f64(self.row(i), q), i)).collect();
        // Rows are id-sorted, so comparing row indices is comparing ids.
        let cmp = |a: &(f64, usize), b: &(f64, usize)| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1));
        if k < scored.len() {
            scored.select_nth_unstable_by(k - 1, cmp);
            scored.truncate(k);
        }
        scored.sort_unstable_by(cmp);
        Ok(scored
            .into_iter()
            .map(|(score, i)| ScoredHit { entry_id: self.ids[i].clone(), score })
            .collect())
    }

    /// Serializes into the binary index format.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 4 + 8 + self.matrix.len() * 4 + 8);
        out.extend_from_slice(INDEX_MAGIC);
        put_u32(&mut out, self.dim as u32);
        put_u64(&mut out, self.ids.len() as u64);
        put_f32s(&mut out, &self.matrix);
        for id in &self.ids {
            put_str16(&mut out, id);
        }
        let total = out.len() as u64 + 8;
        put_u64(&mut out, total);
        out
    }

    pub fn save<W: Write>(&self, mut sink: W) -> Result<(), IndexError> {
        sink.write_all(&self.to_bytes())?;
        sink.flush()?;
        Ok(())
    }

    pub fn load<R: Read>(mut source: R) -> Result<Self, IndexError> {
        let mut buf = Vec::new();
        source.read_to_end(&mut buf)?;
        Self::from_bytes(&buf)
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self, IndexError> {
        let corrupt = |offset: usize, reason: String| IndexError::Corrupt { offset, reason };
        let short = |e: crate::binio::ShortRead| corrupt(e.offset, e.to_string());
        let mut r = ByteReader::new(buf);
        let magic = r.take(8).map_err(short)?;
        if magic != INDEX_MAGIC {
            return Err(corrupt(0, "bad magic or version".into()));
        }
        let dim = r.u32().map_err(short)? as usize;
        if dim == 0 {
            return Err(corrupt(8, "zero dimension".into()));
        }
        let count_at = r.offset();
        let count = r.u64().map_err(short)?;
        let cells = usize::try_from(count)
            .ok()
            .and_then(|c| c.checked_mul(dim))
            .filter(|&cells| cells.saturating_mul(4) <= r.remaining())
            .ok_or_else(|| corrupt(count_at, format!("row count {count} exceeds available data")))?;
        let mut matrix = Vec::with_capacity(cells);
        r.f32s(cells, &mut matrix).map_err(short)?;
        let mut ids = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let at = r.offset();
            let len = r.u16().map_err(short)? as usize;
            let bytes = r.take(len).map_err(short)?;
            let id = std::str::from_utf8(bytes).map_err(|e| corrupt(at, format!("id is not UTF-8: {e}")))?;
            ids.push(id.to_string());
        }
        let footer_at = r.offset();
        let total = r.u64().map_err(short)?;
        if total != buf.len() as u64 || r.remaining() != 0 {
            return Err(corrupt(footer_at, format!("length footer {total} does not match stream length {}", buf.len())));
        }
        if ids.windows(2).any(|w| w[0] >= w[1]) {
            return Err(corrupt(footer_at, "ids are not strictly ascending".into()));
        }
        Ok(Self { dim, ids, matrix })
    }
}
