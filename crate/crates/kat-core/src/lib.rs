//! Knowledge-augmented answer generation.
//!
//! The crate is organized as a pipeline:
//!
//! - [`kb`]: ingest an entity dump into a filtered knowledge base.
//! - [`index`]: exact inner-product index over entry embeddings.
//! - [`retriever`]: sliding-window regions, embedding providers and top-m merge.
//! - [`implicit`]: prompt construction and language-model elicitation.
//! - [`fusion`]: the encoder-decoder that reasons jointly over both sources.
//! - [`eval`]: answer normalization, VQA accuracy, ensembling and ablations.
//!
//! Numerical code in [`fusion`] is generic over [`Scalar`] (`f32` or `f64`);
//! the aliases below name the two concrete instantiations.

pub mod eval;
pub mod fusion;
pub mod implicit;
pub mod index;
pub mod kb;
pub mod retriever;
pub mod scalar;
pub mod synthetic;

mod binio;

pub use scalar::Scalar;

/// Single-precision fusion model, used for training and inference.
pub type FusionModel32 = fusion::FusionModel<f32>;
/// Double-precision fusion model, used for gradient verification.
pub type FusionModel64 = fusion::FusionModel<f64>;
/// Single-precision gradients.
pub type Gradients32 = fusion::Gradients<f32>;
/// Double-precision gradients.
pub type Gradients64 = fusion::Gradients<f64>;
