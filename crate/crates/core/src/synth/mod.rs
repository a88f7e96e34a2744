//! Round-trip sample pools, token noise and repair-example assembly.

mod noise;
mod pool;
mod shards;

pub use noise::{noise_tokens, noise_tokens_counted};
pub use pool::{
    assemble_example, derive_rng, one_way_samples, round_trip, PoolEntry, Provenance, RepairExample, SamplePool,
    Translator,
};
pub use shards::{read_shards, write_shards, ShardManifest};

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("pool has no entry for sentence {1} of document {0}")]
    PoolGap(String, usize),
    #[error("malformed {what} at line {line}: {reason}")]
    Format {
        what: &'static str,
        line: usize,
        reason: String,
    },
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
