//! End-to-end orchestration: toy data, sentence MT, pools, DocRepair
//! training, test-time repair, evaluation reports and annotation tasks.

pub mod annotation;
mod config;
mod metrics;
mod repair;
mod run;
pub mod toy;
mod train;

use std::path::PathBuf;

pub use config::{
    EvalSettings, ExperimentConfig, ModelSettings, MtSettings, Paths, RepairSettings, ToySizes, CONFIG_VERSION,
};
pub use metrics::MetricsLog;
pub use repair::{
    build_one_way_pool, build_round_trip_pool, decode_group, docrepair_suite_scores, evaluate_dev, repair_group,
    repair_groups, sentence_suite_scores, suite_inputs, train_docrepair, translate_all, DevSet, EncodedDoc, GroupRef,
    RepairJob, RepairRecord,
};
pub use run::{
    copy_phase, load_inputs, load_mt, load_repair, load_tokenizers, read_records, run_experiment, stage_evaluate, stage_mt, stage_pool,
    stage_repair, stage_tokenizers, translate_documents, write_toy_data, Inputs, Layout, Report,
};
pub use train::{train_sentence_mt, CheckpointRing, MtJob, MtRecord};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("training diverged at step {step} (loss {loss}); last good snapshot: {last_good:?}")]
    Diverged {
        step: u64,
        loss: f64,
        last_good: Option<PathBuf>,
    },
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
    #[error(transparent)]
    Numerics(#[from] crate::numerics::NumericsError),
    #[error(transparent)]
    Corpus(#[from] crate::corpus::CorpusError),
    #[error(transparent)]
    Synth(#[from] crate::synth::SynthError),
    #[error(transparent)]
    Eval(#[from] crate::eval::EvalError),
    #[error(transparent)]
    Tokenize(#[from] crate::tokenize::TokenizeError),
    #[error(transparent)]
    Annotation(#[from] annotation::AnnotationError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Maps `f` over `items` on `workers` threads (0 = all cores), preserving
/// input order.
pub fn par_map<T: Sync, U: Send, F: Fn(&T) -> U + Sync>(items: &[T], workers: usize, f: F) -> Vec<U> {
    let workers = if workers == 0 {
        std::thread::available_parallelism().map_or(1, |n| n.get())
    } else {
        workers
    }
    .min(items.len());
    if workers <= 1 {
        return items.iter().map(f).collect();
    }
    let f = &f;
    let mut parts: Vec<Vec<(usize, U)>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..workers)
            .map(|w| s.spawn(move || items.iter().enumerate().skip(w).step_by(workers).map(|(i, x)| (i, f(x))).collect()))
            .collect();
        handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
    });
    let mut out: Vec<Option<U>> = (0..items.len()).map(|_| None).collect();
    for part in parts.iter_mut() {
        for (i, u) in part.drain(..) {
            out[i] = Some(u);
        }
    }
    out.into_iter().map(|u| u.expect("every index mapped")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn par_map_keeps_order() {
        let xs: Vec<u64> = (0..103).collect();
        for w in [0, 1, 2, 7, 200] {
            assert_eq!(par_map(&xs, w, |x| x * x), xs.iter().map(|x| x * x).collect::<Vec<_>>());
        }
        assert!(par_map(&Vec::<u8>::new(), 3, |x| *x).is_empty());
    }
}
