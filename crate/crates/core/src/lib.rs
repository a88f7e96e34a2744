//! Document-level repair for sentence-level machine translation.
//!
//! A sentence-level translation model produces context-agnostic
//! translations; a second, monolingual sequence-to-sequence model rewrites
//! groups of those translations into mutually consistent ones. The repair
//! model is trained on round-trip translations of monolingual documents.

pub mod numerics;
pub mod tokenize;
pub mod model;
pub mod corpus;
pub mod synth;
pub mod eval;
pub mod pipeline;
