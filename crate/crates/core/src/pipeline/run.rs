//! Stage functions over a work directory and the full experiment.
//!
//! Layout under `work_dir`:
//! `data/` inputs, `tok/` tokenizers, `mt/{fwd,rev}/` sentence models,
//! `pools/` sample pools, `repair/` DocRepair training, `reports/` results.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::annotation::{build_tasks, write_tasks};
use super::config::ExperimentConfig;
use super::repair::{
    build_one_way_pool, build_round_trip_pool, decode_group, docrepair_suite_scores, repair_groups,
    sentence_suite_scores, suite_inputs, train_docrepair, translate_all, DevSet, EncodedDoc, GroupRef, RepairJob,
    RepairRecord,
};
use super::toy::{make_toy_corpus, target_gender, ParallelDocs};
use super::train::{train_sentence_mt, MtJob};
use super::PipelineError;
use crate::corpus::{
    extract_groups, read_mono, read_parallel, write_mono, Document, ExclusionSet,
};
use crate::eval::{accuracy_from_scores, bleu, change_stats, read_suite, write_suite, ChangeStats, ContrastiveInstance, ContrastiveReport};
use crate::model::{Checkpoint, SeqPair, Transformer};
use crate::synth::{Provenance, SamplePool};
use crate::tokenize::Tokenizer;

/// Paths of every artifact under a work directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn data(&self, name: &str) -> PathBuf {
        self.root.join("data").join(name)
    }

    pub fn tok(&self) -> PathBuf {
        self.root.join("tok")
    }

    pub fn mt(&self, direction: &str) -> PathBuf {
        self.root.join("mt").join(direction)
    }

    pub fn pool(&self) -> PathBuf {
        self.root.join("pools").join("train.pool")
    }

    pub fn repair(&self) -> PathBuf {
        self.root.join("repair")
    }

    pub fn reports(&self) -> PathBuf {
        self.root.join("reports")
    }
}

/// Writes the generated toy corpora to `data/`.
pub fn write_toy_data(cfg: &ExperimentConfig) -> Result<(), PipelineError> {
    let l = Layout::new(&cfg.paths.work_dir);
    fs::create_dir_all(l.root.join("data"))?;
    let c = make_toy_corpus(cfg.seed, &cfg.toy);
    write_mono(&l.data("train.src"), &c.train.src)?;
    write_mono(&l.data("train.tgt"), &c.train.tgt)?;
    write_mono(&l.data("mono.tgt"), &c.mono)?;
    write_mono(&l.data("dev.src"), &c.dev.src)?;
    write_mono(&l.data("dev.tgt"), &c.dev.tgt)?;
    write_mono(&l.data("test.src"), &c.test.src)?;
    write_mono(&l.data("test.tgt"), &c.test.tgt)?;
    write_suite(&l.data("contrastive_dev.jsonl"), &c.contrastive_dev)?;
    write_suite(&l.data("contrastive_test.jsonl"), &c.contrastive_test)?;
    let ex: String = c.exclusions.iter().map(|f| format!("{f}\n")).collect();
    fs::write(l.data("exclusions.txt"), ex)?;
    Ok(())
}

/// Every corpus an experiment reads.
#[derive(Debug, Clone)]
pub struct Inputs {
    pub train: ParallelDocs,
    pub mono: Vec<Document>,
    pub dev: ParallelDocs,
    pub test: ParallelDocs,
    pub contrastive_dev: Vec<ContrastiveInstance>,
    pub contrastive_test: Vec<ContrastiveInstance>,
    pub exclusions: ExclusionSet,
}

fn pick(configured: &Option<PathBuf>, l: &Layout, name: &str) -> PathBuf {
    configured.clone().unwrap_or_else(|| l.data(name))
}

fn parallel(src: &Path, tgt: &Path, prefix: &str) -> Result<ParallelDocs, PipelineError> {
    let s = read_mono(src, prefix)?;
    let t = read_mono(tgt, prefix)?;
    let aligned = s.len() == t.len() && s.iter().zip(&t).all(|(a, b)| a.sentences.len() == b.sentences.len());
    if !aligned {
        return Err(PipelineError::Data(format!(
            "{} and {} are not sentence-aligned",
            src.display(),
            tgt.display()
        )));
    }
    Ok(ParallelDocs { src: s, tgt: t })
}

/// Aligned timed pairs regrouped into documents by source document id.
fn aligned_docs(cfg: &ExperimentConfig, src: &Path, tgt: &Path, alignment: &Path) -> Result<ParallelDocs, PipelineError> {
    let pairs = read_parallel(src, tgt, alignment, cfg.mt.overlap_mode, cfg.mt.overlap_threshold)?;
    let (mut s, mut t): (Vec<Document>, Vec<Document>) = (Vec::new(), Vec::new());
    for p in pairs {
        match s.last_mut() {
            Some(d) if d.doc_id == p.source.doc_id => {
                d.sentences.push(p.source.text);
                t.last_mut().expect("parallel push").sentences.push(p.target.text);
            }
            _ => {
                s.push(Document::new(p.source.doc_id.clone(), vec![p.source.text]));
                t.push(Document::new(p.source.doc_id, vec![p.target.text]));
            }
        }
    }
    Ok(ParallelDocs { src: s, tgt: t })
}

/// Reads inputs from configured paths, defaulting to `data/`.
pub fn load_inputs(cfg: &ExperimentConfig) -> Result<Inputs, PipelineError> {
    let l = Layout::new(&cfg.paths.work_dir);
    let p = &cfg.paths;
    let (ts, tt) = (pick(&p.train_src, &l, "train.src"), pick(&p.train_tgt, &l, "train.tgt"));
    let train = match &p.train_alignment {
        Some(a) => aligned_docs(cfg, &ts, &tt, a)?,
        None => parallel(&ts, &tt, "train")?,
    };
    let exclusions = match fs::read_to_string(pick(&p.exclusions, &l, "exclusions.txt")) {
        Ok(text) => text.lines().map(str::trim).filter(|s| !s.is_empty()).map(str::to_string).collect(),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound && p.exclusions.is_none() => ExclusionSet::new(),
        Err(e) => return Err(e.into()),
    };
    Ok(Inputs {
        train,
        mono: read_mono(&pick(&p.mono, &l, "mono.tgt"), "mono")?,
        dev: parallel(&pick(&p.dev_src, &l, "dev.src"), &pick(&p.dev_tgt, &l, "dev.tgt"), "dev")?,
        test: parallel(&pick(&p.test_src, &l, "test.src"), &pick(&p.test_tgt, &l, "test.tgt"), "test")?,
        contrastive_dev: read_suite(&pick(&p.contrastive_dev, &l, "contrastive_dev.jsonl"))?,
        contrastive_test: read_suite(&pick(&p.contrastive_test, &l, "contrastive_test.jsonl"))?,
        exclusions,
    })
}

fn sentences(docs: &[Document]) -> impl Iterator<Item = &String> {
    docs.iter().flat_map(|d| &d.sentences)
}

/// Trains and saves source and target tokenizers; the target side also
/// learns from the monolingual corpus.
pub fn stage_tokenizers(cfg: &ExperimentConfig, inputs: &Inputs) -> Result<(Tokenizer, Tokenizer), PipelineError> {
    let l = Layout::new(&cfg.paths.work_dir);
    fs::create_dir_all(l.tok())?;
    let src_text: Vec<&String> = sentences(&inputs.train.src).collect();
    let tgt_text: Vec<&String> = sentences(&inputs.train.tgt).chain(sentences(&inputs.mono)).collect();
    let src = Tokenizer::train(&src_text, cfg.mt.src_merges)?;
    let tgt = Tokenizer::train(&tgt_text, cfg.mt.tgt_merges)?;
    src.save(&l.tok(), "src")?;
    tgt.save(&l.tok(), "tgt")?;
    Ok((src, tgt))
}

pub fn load_tokenizers(cfg: &ExperimentConfig) -> Result<(Tokenizer, Tokenizer), PipelineError> {
    let l = Layout::new(&cfg.paths.work_dir);
    Ok((Tokenizer::load(&l.tok(), "src")?, Tokenizer::load(&l.tok(), "tgt")?))
}

/// Trains one direction's sentence-level model on `pairs`.
fn train_direction(
    cfg: &ExperimentConfig,
    pairs: Vec<SeqPair>,
    from: &Tokenizer,
    to: &Tokenizer,
    direction: &str,
) -> Result<Transformer, PipelineError> {
    let config = cfg.model.config(from.vocab.len(), to.vocab.len());
    let pairs: Vec<SeqPair> = pairs
        .into_iter()
        .filter(|p| p.src.len().max(p.tgt.len()) < config.max_positions)
        .collect();
    let out = Layout::new(&cfg.paths.work_dir).mt(direction);
    fs::create_dir_all(&out)?;
    let ck = train_sentence_mt(
        &MtJob {
            pairs: &pairs,
            config,
            optimizer: &cfg.mt.optimizer,
            steps: cfg.mt.steps,
            batch_tokens: cfg.mt.batch_tokens,
            checkpoint_every: cfg.mt.checkpoint_every,
            average_last: cfg.mt.average_last,
            seed: cfg.seed,
            stream: &format!("mt-{direction}"),
            src_vocab: from.vocab.fingerprint(),
            tgt_vocab: to.vocab.fingerprint(),
        },
        &out,
    )?;
    Ok(ck.model()?)
}

/// Forward (source→target) and reverse sentence-level models.
pub fn stage_mt(
    cfg: &ExperimentConfig,
    inputs: &Inputs,
    src_tok: &Tokenizer,
    tgt_tok: &Tokenizer,
) -> Result<(Transformer, Transformer), PipelineError> {
    let mut fwd_pairs = Vec::new();
    for (s, t) in sentences(&inputs.train.src).zip(sentences(&inputs.train.tgt)) {
        fwd_pairs.push(SeqPair {
            src: src_tok.encode(s),
            tgt: tgt_tok.encode(t),
        });
    }
    let rev_pairs = fwd_pairs
        .iter()
        .map(|p| SeqPair {
            src: p.tgt.clone(),
            tgt: p.src.clone(),
        })
        .collect();
    let fwd = train_direction(cfg, fwd_pairs, src_tok, tgt_tok, "fwd")?;
    let rev = train_direction(cfg, rev_pairs, tgt_tok, src_tok, "rev")?;
    Ok((fwd, rev))
}

/// Loads `mt/{direction}/final.ckpt`.
pub fn load_mt(cfg: &ExperimentConfig, direction: &str) -> Result<Transformer, PipelineError> {
    let p = Layout::new(&cfg.paths.work_dir).mt(direction).join("final.ckpt");
    Ok(Checkpoint::load(&p)?.model()?)
}

/// Target documents DocRepair learns from and their training groups: the
/// monolingual corpus for round-trip pools, the parallel target side for
/// one-way pools.
fn training_groups(cfg: &ExperimentConfig, inputs: &Inputs, tgt_tok: &Tokenizer) -> Result<(Vec<EncodedDoc>, Vec<GroupRef>), PipelineError> {
    let docs = match cfg.repair.provenance {
        Provenance::RoundTrip => &inputs.mono,
        Provenance::OneWay => &inputs.train.tgt,
    };
    let k = cfg.repair.group_size;
    let (mut used, mut groups) = (Vec::new(), Vec::new());
    for d in docs {
        let gs = extract_groups(d, k, cfg.repair.stride, &inputs.exclusions)?;
        if gs.is_empty() {
            continue;
        }
        let enc: Vec<Vec<u32>> = d.sentences.iter().map(|s| tgt_tok.encode(s)).collect();
        for g in gs {
            groups.push(GroupRef {
                doc_id: g.doc_id,
                start: g.start,
                originals: enc[g.start..g.start + k].to_vec(),
            });
        }
        used.push((d.doc_id.clone(), enc));
    }
    Ok((used, groups))
}

/// Builds and saves the sample pool for the configured provenance.
pub fn stage_pool(
    cfg: &ExperimentConfig,
    inputs: &Inputs,
    src_tok: &Tokenizer,
    tgt_tok: &Tokenizer,
    fwd: &Transformer,
    rev: &Transformer,
) -> Result<SamplePool, PipelineError> {
    let (docs, _) = training_groups(cfg, inputs, tgt_tok)?;
    let r = &cfg.repair;
    let pool = match r.provenance {
        Provenance::RoundTrip => {
            build_round_trip_pool(&docs, rev, fwd, r.pool_size, r.temperature, cfg.seed, cfg.eval.workers)?
        }
        Provenance::OneWay => {
            let used: std::collections::BTreeSet<&str> = docs.iter().map(|d| d.0.as_str()).collect();
            let sources: Vec<EncodedDoc> = inputs
                .train
                .src
                .iter()
                .filter(|d| used.contains(d.doc_id.as_str()))
                .map(|d| (d.doc_id.clone(), d.sentences.iter().map(|s| src_tok.encode(s)).collect()))
                .collect();
            build_one_way_pool(&sources, fwd, r.pool_size, r.temperature, cfg.seed, cfg.eval.workers)?
        }
    };
    let path = Layout::new(&cfg.paths.work_dir).pool();
    fs::create_dir_all(path.parent().expect("pool path has a parent"))?;
    pool.save(&path)?;
    Ok(pool)
}

/// Sentence-level translations of every `k`-group of `docs` (stride `k`)
/// with their references and sources.
struct EvalGroups {
    sources: Vec<Vec<String>>,
    baseline: Vec<Vec<Vec<u32>>>,
    references: Vec<Vec<String>>,
}

fn eval_groups(
    docs: &ParallelDocs,
    k: usize,
    limit: usize,
    fwd: &Transformer,
    src_tok: &Tokenizer,
    beam: usize,
    workers: usize,
) -> Result<EvalGroups, PipelineError> {
    let none = ExclusionSet::new();
    let (mut sources, mut references) = (Vec::new(), Vec::new());
    for (s, t) in docs.src.iter().zip(&docs.tgt) {
        for g in extract_groups(t, k, k, &none)? {
            if sources.len() == limit {
                break;
            }
            sources.push(s.sentences[g.start..g.start + k].to_vec());
            references.push(g.sentences);
        }
    }
    let flat: Vec<Vec<u32>> = sources.iter().flatten().map(|s| src_tok.encode(s)).collect();
    let out = translate_all(fwd, &flat, beam, workers)?;
    let baseline = out.chunks(k).map(<[Vec<u32>]>::to_vec).collect();
    Ok(EvalGroups {
        sources,
        baseline,
        references,
    })
}

/// Trains DocRepair, writing `repair/metrics.jsonl` and `repair/final.ckpt`.
pub fn stage_repair(
    cfg: &ExperimentConfig,
    inputs: &Inputs,
    src_tok: &Tokenizer,
    tgt_tok: &Tokenizer,
    fwd: &Transformer,
    pool: &SamplePool,
) -> Result<(Transformer, Vec<RepairRecord>), PipelineError> {
    let r = &cfg.repair;
    let w = cfg.eval.workers;
    let (_, groups) = training_groups(cfg, inputs, tgt_tok)?;
    let eg = eval_groups(&inputs.dev, r.group_size, r.dev_groups, fwd, src_tok, r.beam, w)?;
    let dev = DevSet {
        baseline: eg.baseline,
        references: eg.references,
        suite_inputs: suite_inputs(&inputs.contrastive_dev, fwd, src_tok, cfg.mt.beam, w)?,
        suite: inputs.contrastive_dev.clone(),
    };
    let out = Layout::new(&cfg.paths.work_dir).repair();
    fs::create_dir_all(&out)?;
    let v = tgt_tok.vocab.len();
    let (ck, records) = train_docrepair(
        &RepairJob {
            groups: &groups,
            pool,
            dev: &dev,
            tok: tgt_tok,
            config: cfg.model.config(v, v),
            optimizer: &r.optimizer,
            noise: r.noise,
            batch_tokens: r.batch_tokens,
            max_steps: r.max_steps,
            eval_every: r.eval_every,
            patience: r.patience,
            average_last: r.average_last,
            beam: r.beam,
            lowercase: cfg.eval.lowercase,
            workers: w,
            seed: cfg.seed,
            vocab: tgt_tok.vocab.fingerprint(),
        },
        &out,
    )?;
    Ok((ck.model()?, records))
}

/// Loads `repair/final.ckpt`.
pub fn load_repair(cfg: &ExperimentConfig) -> Result<Transformer, PipelineError> {
    Ok(Checkpoint::load(&Layout::new(&cfg.paths.work_dir).repair().join("final.ckpt"))?.model()?)
}

/// Reads `repair/metrics.jsonl`.
pub fn read_records(cfg: &ExperimentConfig) -> Result<Vec<RepairRecord>, PipelineError> {
    let text = fs::read_to_string(Layout::new(&cfg.paths.work_dir).repair().join("metrics.jsonl"))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| PipelineError::Data(format!("metrics log: {e}"))))
        .collect()
}

/// Two-step translation of source documents: sentence-level translation,
/// then repair of consecutive non-overlapping `k`-groups. Trailing
/// sentences that do not fill a group keep their baseline translation.
/// Returns baseline documents, repaired documents and the fallback count.
#[allow(clippy::too_many_arguments)]
pub fn translate_documents(
    docs: &[Document],
    fwd: &Transformer,
    repair: Option<&Transformer>,
    src_tok: &Tokenizer,
    tgt_tok: &Tokenizer,
    k: usize,
    beam: usize,
    workers: usize,
) -> Result<(Vec<Document>, Vec<Document>, usize), PipelineError> {
    if k == 0 {
        return Err(PipelineError::Config("group size must be positive".into()));
    }
    let flat: Vec<Vec<u32>> = sentences(docs).map(|s| src_tok.encode(s)).collect();
    let mut out = translate_all(fwd, &flat, beam, workers)?.into_iter();
    let mut encoded: Vec<Vec<Vec<u32>>> = Vec::new();
    let mut groups = Vec::new();
    for d in docs {
        let e: Vec<Vec<u32>> = out.by_ref().take(d.sentences.len()).collect();
        groups.extend(e.chunks_exact(k).map(<[Vec<u32>]>::to_vec));
        encoded.push(e);
    }
    let (repaired, fallbacks) = match repair {
        Some(m) => repair_groups(m, &groups, beam, workers)?,
        None => (groups, 0),
    };
    let mut rep_groups = repaired.into_iter();
    let (mut base_docs, mut rep_docs) = (Vec::new(), Vec::new());
    for (d, e) in docs.iter().zip(&encoded) {
        let base = decode_group(tgt_tok, e)?;
        let mut rep = Vec::with_capacity(e.len());
        for _ in 0..e.len() / k {
            rep.extend(decode_group(tgt_tok, &rep_groups.next().expect("one repaired group per chunk"))?);
        }
        rep.extend(base[rep.len()..].iter().cloned());
        base_docs.push(Document::new(d.doc_id.clone(), base));
        rep_docs.push(Document::new(d.doc_id.clone(), rep));
    }
    Ok((base_docs, rep_docs, fallbacks))
}

/// Some evaluation in the first half of training scores higher BLEU
/// against the baseline input than against the reference.
pub fn copy_phase(records: &[RepairRecord]) -> bool {
    let half = records.len().div_ceil(2);
    records[..half].iter().any(|r| r.dev_bleu_baseline > r.dev_bleu_reference)
}

/// Fraction of groups in which at least one pool sample carries a
/// different agreement value from its original sentence.
fn pool_disagreement(groups: &[GroupRef], pool: &SamplePool, tok: &Tokenizer) -> Result<Option<f64>, PipelineError> {
    let mut judged = 0usize;
    let mut bad = 0usize;
    for g in groups {
        let mut any_gendered = false;
        let mut disagree = false;
        for (j, orig) in g.originals.iter().enumerate() {
            let Some(want) = target_gender(&tok.decode(orig)?) else { continue };
            any_gendered = true;
            let Some(entry) = pool.get(&g.doc_id, g.start + j) else { continue };
            for s in &entry.samples {
                if target_gender(&tok.decode(s)?).is_some_and(|got| got != want) {
                    disagree = true;
                }
            }
        }
        judged += usize::from(any_gendered);
        bad += usize::from(disagree);
    }
    Ok((judged > 0).then(|| bad as f64 / judged as f64))
}

/// Fraction of groups whose every gendered reference sentence is
/// translated with the reference's agreement value.
fn agreement_accuracy(hyps: &[Vec<String>], refs: &[Vec<String>]) -> Option<f64> {
    let mut judged = 0usize;
    let mut good = 0usize;
    for (h, r) in hyps.iter().zip(refs) {
        let mut any = false;
        let mut ok = true;
        for (hs, rs) in h.iter().zip(r) {
            if let Some(g) = target_gender(rs) {
                any = true;
                ok &= target_gender(hs) == Some(g);
            }
        }
        if any {
            judged += 1;
            good += usize::from(ok);
        }
    }
    (judged > 0).then(|| good as f64 / judged as f64)
}

/// Experiment outcome; contains no timings so reruns compare byte-equal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub seed: u64,
    pub contrastive_baseline: f64,
    pub contrastive_docrepair: f64,
    pub contrastive_gain_points: f64,
    pub test_groups: usize,
    pub test_bleu_baseline: f64,
    pub test_bleu_repaired: f64,
    pub test_fallbacks: usize,
    pub agreement_baseline: Option<f64>,
    pub agreement_repaired: Option<f64>,
    pub change_stats: ChangeStats,
    pub pool_group_disagreement: Option<f64>,
    pub repair_evaluations: usize,
    pub repair_last_step: u64,
    pub copy_phase: bool,
    pub annotation_tasks: usize,
}

impl Report {
    pub fn summary(&self) -> String {
        let opt = |x: Option<f64>| x.map_or("n/a".to_string(), |v| format!("{:.2}", 100.0 * v));
        let hist: Vec<String> = self.change_stats.histogram.iter().map(usize::to_string).collect();
        format!(
            "seed                         {}\n\
             contrastive accuracy         baseline {:.2}  docrepair {:.2}  gain {:+.2}\n\
             test BLEU ({} groups)        baseline {:.2}  repaired {:.2}\n\
             repair fallbacks             {}\n\
             group agreement accuracy     baseline {}  repaired {}\n\
             changed sentences histogram  {}\n\
             unchanged groups             {:.2}%\n\
             repaired BLEU vs baseline    {:.2}\n\
             pool group disagreement      {}\n\
             DocRepair evaluations        {} (last step {})\n\
             copy phase observed          {}\n\
             annotation tasks             {}\n",
            self.seed,
            100.0 * self.contrastive_baseline,
            100.0 * self.contrastive_docrepair,
            self.contrastive_gain_points,
            self.test_groups,
            self.test_bleu_baseline,
            self.test_bleu_repaired,
            self.test_fallbacks,
            opt(self.agreement_baseline),
            opt(self.agreement_repaired),
            hist.join(" "),
            100.0 * self.change_stats.unchanged_fraction,
            self.change_stats.bleu_vs_baseline,
            opt(self.pool_group_disagreement),
            self.repair_evaluations,
            self.repair_last_step,
            self.copy_phase,
            self.annotation_tasks,
        )
    }
}

/// Evaluates both systems on the test corpora and writes `reports/`.
#[allow(clippy::too_many_arguments)]
pub fn stage_evaluate(
    cfg: &ExperimentConfig,
    inputs: &Inputs,
    src_tok: &Tokenizer,
    tgt_tok: &Tokenizer,
    fwd: &Transformer,
    repair: &Transformer,
    pool: &SamplePool,
    records: &[RepairRecord],
) -> Result<Report, PipelineError> {
    let r = &cfg.repair;
    let w = cfg.eval.workers;
    let suite = &inputs.contrastive_test;
    let base_scores = sentence_suite_scores(fwd, src_tok, tgt_tok, suite, w)?;
    let base = accuracy_from_scores(suite, &base_scores)?;
    let inputs_test = suite_inputs(suite, fwd, src_tok, cfg.mt.beam, w)?;
    let rep_scores = docrepair_suite_scores(repair, tgt_tok, suite, &inputs_test, w)?;
    let rep = accuracy_from_scores(suite, &rep_scores)?;

    let eg = eval_groups(&inputs.test, r.group_size, usize::MAX, fwd, src_tok, r.beam, w)?;
    let (repaired, fallbacks) = repair_groups(repair, &eg.baseline, r.beam, w)?;
    let base_text: Vec<Vec<String>> = eg.baseline.iter().map(|g| decode_group(tgt_tok, g)).collect::<Result<_, _>>()?;
    let rep_text: Vec<Vec<String>> = repaired.iter().map(|g| decode_group(tgt_tok, g)).collect::<Result<_, _>>()?;
    let flat = |x: &[Vec<String>]| x.iter().flatten().cloned().collect::<Vec<String>>();
    let refs = flat(&eg.references);
    let stats = change_stats(&base_text, &rep_text, &eg.references)?;
    let tasks = build_tasks(&eg.sources, &base_text, &rep_text, cfg.seed);
    let (_, groups) = training_groups(cfg, inputs, tgt_tok)?;

    let report = Report {
        seed: cfg.seed,
        contrastive_baseline: base.overall.accuracy(),
        contrastive_docrepair: rep.overall.accuracy(),
        contrastive_gain_points: 100.0 * (rep.overall.accuracy() - base.overall.accuracy()),
        test_groups: eg.baseline.len(),
        test_bleu_baseline: bleu(&flat(&base_text), &refs, cfg.eval.lowercase)?,
        test_bleu_repaired: bleu(&flat(&rep_text), &refs, cfg.eval.lowercase)?,
        test_fallbacks: fallbacks,
        agreement_baseline: agreement_accuracy(&base_text, &eg.references),
        agreement_repaired: agreement_accuracy(&rep_text, &eg.references),
        change_stats: stats,
        pool_group_disagreement: pool_disagreement(&groups, pool, tgt_tok)?,
        repair_evaluations: records.len(),
        repair_last_step: records.last().map_or(0, |r| r.step),
        copy_phase: copy_phase(records),
        annotation_tasks: tasks.len(),
    };

    let dir = Layout::new(&cfg.paths.work_dir).reports();
    fs::create_dir_all(dir.join("anno"))?;
    write_tasks(&dir.join("anno").join("tasks.jsonl"), &tasks)?;
    write_json(&dir.join("summary.json"), &report)?;
    fs::write(dir.join("summary.txt"), report.summary())?;
    write_contrastive(&dir, "baseline", &base)?;
    write_contrastive(&dir, "docrepair", &rep)?;
    let mut out = String::new();
    for ((b, x), f) in base_text.iter().zip(&rep_text).zip(&eg.references) {
        for ((b, x), f) in b.iter().zip(x).zip(f) {
            out.push_str(&format!("{b}\t{x}\t{f}\n"));
        }
        out.push('\n');
    }
    fs::write(dir.join("test_outputs.tsv"), out)?;
    Ok(report)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| PipelineError::Data(e.to_string()))?;
    s.push('\n');
    Ok(fs::write(path, s)?)
}

fn write_contrastive(dir: &Path, name: &str, r: &ContrastiveReport) -> Result<(), PipelineError> {
    write_json(&dir.join(format!("contrastive_{name}.json")), r)?;
    Ok(fs::write(dir.join(format!("contrastive_{name}.txt")), r.table())?)
}

/// Runs every stage; generates toy data first when `data/` is absent and
/// no input paths are configured.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Report, PipelineError> {
    cfg.validate()?;
    let l = Layout::new(&cfg.paths.work_dir);
    fs::create_dir_all(&l.root)?;
    fs::write(l.root.join("config.toml"), cfg.to_toml())?;
    if cfg.paths.train_src.is_none() && !l.data("train.src").exists() {
        write_toy_data(cfg)?;
    }
    let inputs = load_inputs(cfg)?;
    let (src_tok, tgt_tok) = stage_tokenizers(cfg, &inputs)?;
    let (fwd, rev) = stage_mt(cfg, &inputs, &src_tok, &tgt_tok)?;
    let pool = stage_pool(cfg, &inputs, &src_tok, &tgt_tok, &fwd, &rev)?;
    let (repair, records) = stage_repair(cfg, &inputs, &src_tok, &tgt_tok, &fwd, &pool)?;
    stage_evaluate(cfg, &inputs, &src_tok, &tgt_tok, &fwd, &repair, &pool, &records)
}
