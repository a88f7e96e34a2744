//! Documents, sentence groups, subtitle-overlap filtering and batching.

mod batch;
mod groups;
mod io;
mod overlap;

pub use batch::{make_batches, source_tokens};
pub use groups::{
    concat_group, extract_groups, group_fingerprint, join_encoded, split_group, Document, ExclusionSet, SentenceGroup,
};
pub use io::{
    align_pairs, format_mono, parse_alignment, parse_mono, parse_timed, read_alignment, read_mono, read_parallel,
    read_timed, timed_documents, write_mono, write_timed, AlignedPair, TimedSentence,
};
pub use overlap::{relative_overlap, Interval, OverlapMode};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("invalid interval [{0}, {1}]")]
    Interval(f64, f64),
    #[error("malformed {what} at line {line}: {reason}")]
    Format {
        what: &'static str,
        line: usize,
        reason: String,
    },
    #[error("example {index} has {tokens} source tokens, over the batch budget of {budget}")]
    OverBudget {
        index: usize,
        tokens: usize,
        budget: usize,
    },
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
