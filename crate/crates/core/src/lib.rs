//! Two-phase abstractive summarization of short social-media posts.
//!
//! Phase I ranks posts and keeps the best ones under a word budget. Phase II
//! feeds the selection to a pointer-generator network whose attention is
//! mixed, during training, with a distribution derived from scored
//! key-phrases, and whose coverage vector discourages repeated attention.

pub mod checkpoint;
pub mod corpus;
pub mod decode;
pub mod error;
pub mod eval;
pub mod extract;
pub mod keyphrase;
pub mod model;
pub mod numerics;
pub mod tfidf;
pub mod train;
pub mod vocab;

pub use error::{Error, Result};
