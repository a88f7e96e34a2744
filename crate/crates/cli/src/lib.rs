//! Annotation HTTP service for blind pairwise preference judgments.

pub mod server;
