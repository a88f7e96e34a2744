//! Pools, DocRepair training with early stopping, and test-time repair.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::train::CheckpointRing;
use super::{par_map, MetricsLog, PipelineError};
use crate::corpus::{join_encoded, make_batches, split_group};
use crate::eval::{accuracy_from_scores, bleu, ContrastiveInstance, ContrastiveReport};
use crate::model::{Checkpoint, ModelError, SeqPair, Transformer, TransformerConfig, train_step};
use crate::numerics::{AdamState, OptimizerConfig};
use crate::synth::{
    assemble_example, derive_rng, one_way_samples, round_trip, Provenance, SamplePool, SynthError,
};
use crate::tokenize::{Tokenizer, TokenizeError};

/// A tokenized document: `(doc_id, sentence ids)`.
pub type EncodedDoc = (String, Vec<Vec<u32>>);

/// Beam translations of independent sentences, in input order; outputs
/// never contain the group separator.
pub fn translate_all(
    model: &Transformer,
    sentences: &[Vec<u32>],
    beam: usize,
    workers: usize,
) -> Result<Vec<Vec<u32>>, PipelineError> {
    par_map(sentences, workers, |s| model.translate_sentence(s, beam).map(|d| d.tokens))
        .into_iter()
        .map(|r| r.map_err(PipelineError::from))
        .collect()
}

/// Round-trip pool over target-language documents.
pub fn build_round_trip_pool(
    docs: &[EncodedDoc],
    rev: &Transformer,
    fwd: &Transformer,
    n: usize,
    temperature: f64,
    seed: u64,
    workers: usize,
) -> Result<SamplePool, PipelineError> {
    let parts = par_map(docs, workers, |(id, sents)| {
        let mut p = SamplePool::new(n, Provenance::RoundTrip);
        round_trip(id, sents, rev, fwd, n, temperature, seed, &mut p).map(|_| p)
    });
    merge(parts, n, Provenance::RoundTrip)
}

/// One-way pool: samples translate the true sources of parallel documents.
pub fn build_one_way_pool(
    sources: &[EncodedDoc],
    fwd: &Transformer,
    n: usize,
    temperature: f64,
    seed: u64,
    workers: usize,
) -> Result<SamplePool, PipelineError> {
    let parts = par_map(sources, workers, |(id, sents)| {
        let mut p = SamplePool::new(n, Provenance::OneWay);
        let src: Vec<Option<Vec<u32>>> = sents.iter().cloned().map(Some).collect();
        one_way_samples(id, &src, fwd, n, temperature, seed, &mut p).map(|_| p)
    });
    merge(parts, n, Provenance::OneWay)
}

fn merge(parts: Vec<Result<SamplePool, SynthError>>, n: usize, prov: Provenance) -> Result<SamplePool, PipelineError> {
    let mut pool = SamplePool::new(n, prov);
    for p in parts {
        pool.entries.append(&mut p?.entries);
    }
    Ok(pool)
}

/// A training group: document, first sentence, and target encodings.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupRef {
    pub doc_id: String,
    pub start: usize,
    pub originals: Vec<Vec<u32>>,
}

/// Evaluation inputs fixed before DocRepair training starts.
#[derive(Debug, Clone, Default)]
pub struct DevSet {
    /// Sentence-level translations per group.
    pub baseline: Vec<Vec<Vec<u32>>>,
    pub references: Vec<Vec<String>>,
    pub suite: Vec<ContrastiveInstance>,
    /// Concatenated sentence-level translations of each instance's source.
    pub suite_inputs: Vec<Vec<u32>>,
}

/// Joined baseline translations of every contrastive instance's source.
pub fn suite_inputs(
    suite: &[ContrastiveInstance],
    mt: &Transformer,
    src_tok: &Tokenizer,
    beam: usize,
    workers: usize,
) -> Result<Vec<Vec<u32>>, PipelineError> {
    let sents: Vec<Vec<u32>> = suite.iter().flat_map(|i| i.source.iter().map(|s| src_tok.encode(s))).collect();
    let out = translate_all(mt, &sents, beam, workers)?;
    let mut it = out.into_iter();
    Ok(suite
        .iter()
        .map(|i| join_encoded(&it.by_ref().take(i.source.len()).collect::<Vec<_>>()))
        .collect())
}

/// DocRepair log-probabilities of each candidate group given its instance's
/// baseline input; the true candidate comes first.
pub fn docrepair_suite_scores(
    model: &Transformer,
    tgt_tok: &Tokenizer,
    suite: &[ContrastiveInstance],
    inputs: &[Vec<u32>],
    workers: usize,
) -> Result<Vec<Vec<f64>>, PipelineError> {
    let items: Vec<(&ContrastiveInstance, &Vec<u32>)> = suite.iter().zip(inputs).collect();
    par_map(&items, workers, |(inst, input)| {
        let cands: Vec<Vec<u32>> = inst.candidate_groups().iter().map(|g| crate::corpus::concat_group(g, tgt_tok)).collect();
        let pairs: Vec<(&[u32], &[u32])> = cands.iter().map(|c| (input.as_slice(), c.as_slice())).collect();
        model.score_batch(&pairs)
    })
    .into_iter()
    .map(|r| r.map_err(PipelineError::from))
    .collect()
}

/// Sentence-level scores: each candidate sentence against its own source.
pub fn sentence_suite_scores(
    model: &Transformer,
    src_tok: &Tokenizer,
    tgt_tok: &Tokenizer,
    suite: &[ContrastiveInstance],
    workers: usize,
) -> Result<Vec<Vec<f64>>, PipelineError> {
    par_map(suite, workers, |inst| -> Result<Vec<f64>, PipelineError> {
        let src: Vec<Vec<u32>> = inst.source.iter().map(|s| src_tok.encode(s)).collect();
        inst.candidate_groups()
            .iter()
            .map(|g| {
                if g.len() != src.len() {
                    return Err(PipelineError::Data(format!(
                        "candidate group of {} sentences for {} source sentences",
                        g.len(),
                        src.len()
                    )));
                }
                let tgt: Vec<Vec<u32>> = g.iter().map(|s| tgt_tok.encode(s)).collect();
                let pairs: Vec<(&[u32], &[u32])> = src.iter().zip(&tgt).map(|(s, t)| (s.as_slice(), t.as_slice())).collect();
                Ok(model.score_batch(&pairs)?.iter().sum())
            })
            .collect()
    })
    .into_iter()
    .collect()
}

/// Repairs one group of sentence translations. Falls back to the input
/// when the output does not split into the same number of sentences or
/// decoding hits the length limit; the flag reports the fallback.
pub fn repair_group(model: &Transformer, baseline: &[Vec<u32>], beam: usize) -> Result<(Vec<Vec<u32>>, bool), ModelError> {
    let input = join_encoded(baseline);
    if input.len() >= model.config.max_positions {
        return Ok((baseline.to_vec(), true));
    }
    let d = model.translate(&input, beam)?;
    let parts = split_group(&d.tokens);
    if !d.finished || parts.len() != baseline.len() {
        return Ok((baseline.to_vec(), true));
    }
    Ok((parts, false))
}

/// Repaired groups and the number of fallbacks.
pub fn repair_groups(
    model: &Transformer,
    groups: &[Vec<Vec<u32>>],
    beam: usize,
    workers: usize,
) -> Result<(Vec<Vec<Vec<u32>>>, usize), PipelineError> {
    let mut out = Vec::with_capacity(groups.len());
    let mut fallbacks = 0;
    for r in par_map(groups, workers, |g| repair_group(model, g, beam)) {
        let (g, f) = r?;
        fallbacks += usize::from(f);
        out.push(g);
    }
    Ok((out, fallbacks))
}

pub fn decode_group(tok: &Tokenizer, group: &[Vec<u32>]) -> Result<Vec<String>, TokenizeError> {
    group.iter().map(|s| tok.decode(s)).collect()
}

/// One DocRepair evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepairRecord {
    pub step: u64,
    pub epoch: usize,
    pub train_loss: f64,
    pub lr: f64,
    pub dev_bleu_reference: f64,
    pub dev_bleu_baseline: f64,
    pub dev_consistency: f64,
    pub fallbacks: usize,
    pub improved: bool,
}

pub struct RepairJob<'a> {
    pub groups: &'a [GroupRef],
    pub pool: &'a SamplePool,
    pub dev: &'a DevSet,
    pub tok: &'a Tokenizer,
    pub config: TransformerConfig,
    pub optimizer: &'a OptimizerConfig,
    pub noise: f64,
    pub batch_tokens: usize,
    pub max_steps: u64,
    pub eval_every: u64,
    pub patience: usize,
    pub average_last: usize,
    pub beam: usize,
    pub lowercase: bool,
    pub workers: usize,
    pub seed: u64,
    pub vocab: String,
}

/// Dev BLEU against references and against the baseline input, dev
/// consistency accuracy, and the fallback count.
pub fn evaluate_dev(
    model: &Transformer,
    dev: &DevSet,
    tok: &Tokenizer,
    beam: usize,
    lowercase: bool,
    workers: usize,
) -> Result<(f64, f64, Option<ContrastiveReport>, usize), PipelineError> {
    let (repaired, fallbacks) = repair_groups(model, &dev.baseline, beam, workers)?;
    let (mut hyp, mut base, mut refs) = (Vec::new(), Vec::new(), Vec::new());
    for ((r, b), f) in repaired.iter().zip(&dev.baseline).zip(&dev.references) {
        hyp.extend(decode_group(tok, r)?);
        base.extend(decode_group(tok, b)?);
        refs.extend(f.iter().cloned());
    }
    let (br, bb) = if hyp.is_empty() {
        (0.0, 0.0)
    } else {
        (bleu(&hyp, &refs, lowercase)?, bleu(&hyp, &base, lowercase)?)
    };
    let cons = if dev.suite.is_empty() {
        None
    } else {
        let scores = docrepair_suite_scores(model, tok, &dev.suite, &dev.suite_inputs, workers)?;
        Some(accuracy_from_scores(&dev.suite, &scores)?)
    };
    Ok((br, bb, cons, fallbacks))
}

/// Trains on freshly assembled noisy examples every epoch. Evaluates every
/// `eval_every` steps and stops once neither dev BLEU nor dev consistency
/// has set a new best for `patience` evaluations. Returns the mean of the
/// latest `average_last` evaluation snapshots.
pub fn train_docrepair(job: &RepairJob, out_dir: &Path) -> Result<(Checkpoint, Vec<RepairRecord>), PipelineError> {
    if job.groups.is_empty() {
        return Err(PipelineError::Data("no training groups".into()));
    }
    if job.dev.baseline.is_empty() && job.dev.suite.is_empty() {
        return Err(PipelineError::Data("empty dev sets".into()));
    }
    let mut rng = derive_rng(job.seed, "repair-train", 0);
    let mut model = Transformer::init(job.config.clone(), &mut rng)?;
    let mut adam = AdamState::new();
    let mut ring = CheckpointRing::new(out_dir, job.average_last)?;
    let mut log = MetricsLog::create(&out_dir.join("metrics.jsonl"))?;
    let mut records = Vec::new();
    let vocab_size = job.tok.vocab.len();
    let (mut best_bleu, mut best_cons) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    let mut stale = 0usize;
    let mut step = 0u64;
    let mut epoch = 0usize;
    let (mut loss_sum, mut loss_n) = (0.0, 0usize);
    'outer: while step < job.max_steps {
        let mut erng = derive_rng(job.seed, "repair-epoch", epoch);
        let mut examples = Vec::with_capacity(job.groups.len());
        for g in job.groups {
            let ex = assemble_example(&g.doc_id, g.start, &g.originals, job.pool, job.noise, vocab_size, &mut erng)?;
            if ex.input.len().max(ex.target.len()) >= job.config.max_positions {
                continue;
            }
            examples.push(SeqPair {
                src: ex.input,
                tgt: ex.target,
            });
        }
        if examples.is_empty() {
            return Err(PipelineError::Data("every training group exceeds max_positions".into()));
        }
        for b in make_batches(&examples, job.batch_tokens, &mut erng)? {
            let batch: Vec<SeqPair> = b.iter().map(|&i| examples[i].clone()).collect();
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
            if step % job.eval_every == 0 {
                let (br, bb, cons, fallbacks) = evaluate_dev(&model, job.dev, job.tok, job.beam, job.lowercase, job.workers)?;
                let cons = cons.map_or(0.0, |r| r.overall.accuracy());
                let improved = br > best_bleu || cons > best_cons;
                best_bleu = best_bleu.max(br);
                best_cons = best_cons.max(cons);
                stale = if improved { 0 } else { stale + 1 };
                let rec = RepairRecord {
                    step,
                    epoch,
                    train_loss: loss_sum / loss_n as f64,
                    lr: report.lr,
                    dev_bleu_reference: br,
                    dev_bleu_baseline: bb,
                    dev_consistency: cons,
                    fallbacks,
                    improved,
                };
                log.append(&rec)?;
                records.push(rec);
                loss_sum = 0.0;
                loss_n = 0;
                ring.push(snapshot(&model, &adam, step, &job.vocab))?;
                if stale >= job.patience {
                    break 'outer;
                }
            }
            if step >= job.max_steps {
                break 'outer;
            }
        }
        epoch += 1;
    }
    if ring.snapshots().is_empty() || loss_n > 0 {
        ring.push(snapshot(&model, &adam, step, &job.vocab))?;
    }
    let final_ck = ring.average()?;
    final_ck.save(&out_dir.join("final.ckpt"))?;
    Ok((final_ck, records))
}

fn snapshot(model: &Transformer, adam: &AdamState, step: u64, vocab: &str) -> Checkpoint {
    Checkpoint {
        config: model.config.clone(),
        params: model.params.clone(),
        optimizer: adam.clone(),
        training_step: step,
        src_vocab: vocab.to_string(),
        tgt_vocab: vocab.to_string(),
    }
}
