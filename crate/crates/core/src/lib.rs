//! Document-to-document retrieval for regulatory texts.
//!
//! The pipeline pre-fetches candidates with BM25, dense vectors or a fusion
//! of both, optionally re-ranks them with a neural model, optionally filters
//! them by publication year and scores the result against relevance
//! judgments.

pub mod corpus;
pub mod dense;
pub mod eval;
pub mod fusion;
pub mod lexical;
pub mod neural;
pub mod ranking;
pub mod runner;
pub mod temporal;
pub mod text;
