//! BLEU, contrastive consistency accuracy and repair change statistics.

mod bleu;
mod changes;
mod contrastive;

pub use bleu::{bleu, bleu_stats, BleuStats};
pub use changes::{change_stats, normalize_sentence, ChangeStats};
pub use contrastive::{
    accuracy_from_scores, contrastive_accuracy, format_suite, parse_suite, read_suite, write_suite, ContrastiveInstance, ContrastiveReport, Phenomenon, Tally,
};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("empty corpus")]
    Empty,
    #[error("length mismatch: {0}")]
    Mismatch(String),
    #[error("invalid instance {index}: {reason}")]
    Instance { index: usize, reason: String },
    #[error("malformed suite at line {line}: {reason}")]
    Format { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
