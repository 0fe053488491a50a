//! Font recognition from text-line images.
//!
//! The crate covers the whole pipeline: procedural glyph rendering for
//! synthetic font classes and a shifted pseudo-real domain, font-specific
//! augmentation, a CNN split into an auto-encoder-pretrained feature stack
//! and a supervised classifier, multiview inference, feature-space font
//! similarity and rank-constrained compression of dense layers.

pub mod augment;
pub mod compress;
pub mod dataset;
pub mod evalsim;
pub mod glyphgen;
pub mod image;
pub mod network;
pub mod numerics;
pub mod rng;
pub mod training;
