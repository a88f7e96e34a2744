//! Sentence-level MT training and checkpoint rotation.

use std::collections::VecDeque;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{MetricsLog, PipelineError};
use crate::corpus::make_batches;
use crate::model::{average_checkpoints, train_step, Checkpoint, ModelError, SeqPair, Transformer, TransformerConfig};
use crate::numerics::{AdamState, OptimizerConfig};
use crate::synth::derive_rng;

/// Keeps the latest `keep` snapshots on disk and in memory.
pub struct CheckpointRing {
    dir: PathBuf,
    keep: usize,
    recent: VecDeque<(PathBuf, Checkpoint)>,
}

impl CheckpointRing {
    pub fn new(dir: &Path, keep: usize) -> Result<Self, PipelineError> {
        fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            keep,
            recent: VecDeque::new(),
        })
    }

    pub fn push(&mut self, ck: Checkpoint) -> Result<PathBuf, PipelineError> {
        let path = self.dir.join(format!("ckpt-{:07}.ckpt", ck.training_step));
        ck.save(&path)?;
        self.recent.push_back((path.clone(), ck));
        while self.recent.len() > self.keep {
            let (old, _) = self.recent.pop_front().expect("non-empty");
            fs::remove_file(old)?;
        }
        Ok(path)
    }

    pub fn last_path(&self) -> Option<&Path> {
        self.recent.back().map(|(p, _)| p.as_path())
    }

    pub fn snapshots(&self) -> Vec<Checkpoint> {
        self.recent.iter().map(|(_, c)| c.clone()).collect()
    }

    /// Mean of the retained snapshots.
    pub fn average(&self) -> Result<Checkpoint, PipelineError> {
        Ok(average_checkpoints(&self.snapshots())?)
    }
}

/// One line of a sentence-MT training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MtRecord {
    pub step: u64,
    pub epoch: usize,
    pub loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct MtJob<'a> {
    pub pairs: &'a [SeqPair],
    pub config: TransformerConfig,
    pub optimizer: &'a OptimizerConfig,
    pub steps: u64,
    pub batch_tokens: usize,
    pub checkpoint_every: u64,
    pub average_last: usize,
    pub seed: u64,
    pub stream: &'a str,
    pub src_vocab: String,
    pub tgt_vocab: String,
}

/// Trains for `steps` updates, snapshotting every `checkpoint_every`, and
/// returns the mean of the latest `average_last` snapshots. A non-finite
/// loss stops training and reports the last good snapshot.
pub fn train_sentence_mt(job: &MtJob, out_dir: &Path) -> Result<Checkpoint, PipelineError> {
    let mut rng = derive_rng(job.seed, job.stream, 0);
    let mut model = Transformer::init(job.config.clone(), &mut rng)?;
    let mut adam = AdamState::new();
    let mut ring = CheckpointRing::new(out_dir, job.average_last)?;
    let mut log = MetricsLog::create(&out_dir.join("train_log.jsonl"))?;
    if job.pairs.is_empty() {
        return Err(PipelineError::Data("no training pairs".into()));
    }
    let mut step = 0u64;
    let mut epoch = 0usize;
    let (mut loss_sum, mut loss_n) = (0.0, 0usize);
    'outer: while step < job.steps {
        let batches = make_batches(job.pairs, job.batch_tokens, &mut rng)?;
        for b in batches {
            let batch: Vec<SeqPair> = b.iter().map(|&i| job.pairs[i].clone()).collect();
            let report = match train_step(&mut model, &batch, &mut adam, job.optimizer, &mut rng) {
                Ok(r) => r,
                Err(ModelError::NonFiniteLoss(v)) => {
                    return Err(PipelineError::Diverged {
                        step: step + 1,
                        loss: v,
                        last_good: ring.last_path().map(Path::to_path_buf),
                    })
                }
                Err(e) => return Err(e.into()),
            };
            step += 1;
            loss_sum += report.loss;
            loss_n += 1;
            if step % job.checkpoint_every == 0 || step == job.steps {
                log.append(&MtRecord {
                    step,
                    epoch,
                    loss: loss_sum / loss_n as f64,
                    lr: report.lr,
                })?;
                loss_sum = 0.0;
                loss_n = 0;
                ring.push(Checkpoint {
                    config: model.config.clone(),
                    params: model.params.clone(),
                    optimizer: adam.clone(),
                    training_step: step,
                    src_vocab: job.src_vocab.clone(),
                    tgt_vocab: job.tgt_vocab.clone(),
                })?;
            }
            if step >= job.steps {
                break 'outer;
            }
        }
        epoch += 1;
    }
    let final_ck = ring.average()?;
    final_ck.save(&out_dir.join("final.ckpt"))?;
    Ok(final_ck)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn copy_pairs(n: usize, seed: u64) -> Vec<SeqPair> {
        use rand::Rng;
        let mut rng = derive_rng(seed, "copy", 0);
        (0..n)
            .map(|_| {
                let len = rng.gen_range(1..=4);
                let s: Vec<u32> = (0..len).map(|_| rng.gen_range(5..10)).collect();
                SeqPair { src: s.clone(), tgt: s }
            })
            .collect()
    }

    fn job<'a>(pairs: &'a [SeqPair], opt: &'a OptimizerConfig, steps: u64) -> MtJob<'a> {
        MtJob {
            pairs,
            config: TransformerConfig {
                num_layers: 1,
                num_heads: 2,
                model_dim: 16,
                ff_dim: 32,
                dropout: 0.0,
                max_positions: 16,
                ..TransformerConfig::desk(10, 10)
            },
            optimizer: opt,
            steps,
            batch_tokens: 40,
            checkpoint_every: 5,
            average_last: 3,
            seed: 4,
            stream: "t",
            src_vocab: "s".into(),
            tgt_vocab: "t".into(),
        }
    }

    #[test]
    fn ring_keeps_latest_and_averages() {
        let pairs = copy_pairs(20, 1);
        let opt = OptimizerConfig {
            warmup_steps: 10,
            scale: 0.05,
            ..OptimizerConfig::default()
        };
        let dir = tempfile::tempdir().unwrap();
        let a = train_sentence_mt(&job(&pairs, &opt, 22), dir.path()).unwrap();
        let names: Vec<String> = fs::read_dir(dir.path())
            .unwrap()
            .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
            .filter(|n| n.starts_with("ckpt-"))
            .collect();
        assert_eq!(names.len(), 3);
        assert_eq!(a.training_step, 22);
        let snaps: Vec<Checkpoint> = {
            let mut v: Vec<_> = names.iter().map(|n| Checkpoint::load(&dir.path().join(n)).unwrap()).collect();
            v.sort_by_key(|c| c.training_step);
            v
        };
        assert_eq!(snaps.iter().map(|c| c.training_step).collect::<Vec<_>>(), vec![15, 20, 22]);
        let name = "enc.0.ff.w1";
        for (i, &v) in a.params[name].data().iter().enumerate() {
            let mut col: Vec<f64> = snaps.iter().map(|c| c.params[name].data()[i]).collect();
            col.sort_by(f64::total_cmp);
            let mean = col.iter().sum::<f64>() / 3.0;
            assert!((v - mean).abs() <= 1e-15 * mean.abs().max(1.0));
        }
        let dir2 = tempfile::tempdir().unwrap();
        let b = train_sentence_mt(&job(&pairs, &opt, 22), dir2.path()).unwrap();
        assert_eq!(a, b);
    }
}
