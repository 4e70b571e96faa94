//! Superpixel continuous-CRF segmentation with hand-written backward passes.
//!
//! Data flow: an image is oversegmented into superpixels ([`spgraph`]); a small
//! encoder/decoder produces per-pixel class scores and a pairwise branch produces
//! non-negative affinities between 4-adjacent pixels ([`featnet`]); both are
//! average-pooled onto the superpixel graph ([`sppool`]); a continuous CRF solves
//! `(D − W + λI) Z_c = Z_s` ([`ccrf`]); region scores are broadcast back to pixels
//! and trained with per-pixel cross-entropy ([`pipeline`]). [`evalio`] covers files,
//! metrics and a synthetic dataset, and [`gradcheck`] checks every backward pass.

pub mod ccrf;
pub mod error;
pub mod evalio;
pub mod featnet;
pub mod field;
pub mod gradcheck;
pub mod pipeline;
pub mod pnm;
pub mod spgraph;
pub mod sppool;

pub use error::{Error, Result};
pub use field::FeatureField;
pub use pipeline::LabelMap;
