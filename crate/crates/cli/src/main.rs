use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use docrepair::corpus::{read_mono, write_mono, Document};
use docrepair::eval::{accuracy_from_scores, bleu, change_stats, read_suite};
use docrepair::pipeline::annotation::{read_tasks, TaskStore};
use docrepair::pipeline::{
    docrepair_suite_scores, load_inputs, load_mt, load_repair, load_tokenizers, read_records, run_experiment,
    sentence_suite_scores, stage_evaluate, stage_mt, stage_pool, stage_repair, stage_tokenizers, suite_inputs,
    translate_documents, write_toy_data, ExperimentConfig, Layout,
};
use docrepair::synth::SamplePool;

#[derive(Parser)]
#[command(name = "docrepair", version, about = "Document-level repair of sentence-level machine translation")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment config (TOML); defaults to the toy preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Config override, e.g. `--set repair.noise=0.2`; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Work directory; overrides `paths.work_dir`.
    #[arg(long, global = true)]
    work_dir: Option<PathBuf>,
    /// Use the reduced toy preset when no config file is given.
    #[arg(long, global = true)]
    small: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Write the generated toy corpora to `data/`.
    MakeToy,
    /// Train source and target tokenizers.
    Tokenize,
    /// Train forward and reverse sentence-level models.
    TrainMt,
    /// Build the sample pool for DocRepair training.
    BuildPools,
    /// Train DocRepair with early stopping.
    TrainDocrepair,
    /// Evaluate baseline and DocRepair and write `reports/`.
    Evaluate,
    /// Run every stage end to end.
    RunToy,
    /// Sentence-level translation of a document file.
    Translate {
        input: PathBuf,
        output: PathBuf,
    },
    /// Two-step translation: sentence-level, then DocRepair.
    Repair {
        input: PathBuf,
        output: PathBuf,
        /// Also write the sentence-level translations here.
        #[arg(long)]
        baseline_output: Option<PathBuf>,
    },
    /// Corpus BLEU of a hypothesis file against a reference file.
    Bleu {
        hypothesis: PathBuf,
        reference: PathBuf,
    },
    /// Contrastive consistency accuracy on a suite.
    Contrastive {
        /// Suite file; defaults to the configured test suite.
        #[arg(long)]
        suite: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = System::Docrepair)]
        system: System,
    },
    /// Change statistics of repaired documents against baseline documents.
    ChangeStats {
        baseline: PathBuf,
        repaired: PathBuf,
        reference: PathBuf,
    },
    /// Serve the annotation HTTP API.
    ServeAnno {
        #[arg(long)]
        tasks: Option<PathBuf>,
        #[arg(long)]
        judgments: Option<PathBuf>,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        #[arg(long)]
        static_dir: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum System {
    Baseline,
    Docrepair,
}

fn load_config(c: &Common) -> Result<ExperimentConfig> {
    let work = c.work_dir.clone().unwrap_or_else(|| PathBuf::from("work"));
    let mut cfg = match &c.config {
        Some(p) => ExperimentConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None if c.small => ExperimentConfig::toy_small(&work),
        None => ExperimentConfig::toy(&work),
    };
    cfg = cfg.with_overrides(&c.set)?;
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(w) = &c.work_dir {
        cfg.paths.work_dir = w.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    Ok(fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))?
        .lines()
        .map(str::to_string)
        .collect())
}

/// Non-overlapping `k`-groups of every document.
fn doc_groups(docs: &[Document], k: usize) -> Vec<Vec<String>> {
    docs.iter().flat_map(|d| d.sentences.chunks_exact(k).map(<[String]>::to_vec)).collect()
}

fn main() -> Result<()> {
    let root = Cli::parse();
    let cfg = load_config(&root.common)?;
    let layout = Layout::new(&cfg.paths.work_dir);
    let w = cfg.eval.workers;
    match root.command {
        Command::MakeToy => {
            write_toy_data(&cfg)?;
            println!("wrote {}", layout.root.join("data").display());
        }
        Command::Tokenize => {
            let (s, t) = stage_tokenizers(&cfg, &load_inputs(&cfg)?)?;
            println!("source vocabulary {}, target vocabulary {}", s.vocab.len(), t.vocab.len());
        }
        Command::TrainMt => {
            let (s, t) = load_tokenizers(&cfg)?;
            stage_mt(&cfg, &load_inputs(&cfg)?, &s, &t)?;
            println!("wrote {} and {}", layout.mt("fwd").display(), layout.mt("rev").display());
        }
        Command::BuildPools => {
            let (s, t) = load_tokenizers(&cfg)?;
            let pool = stage_pool(&cfg, &load_inputs(&cfg)?, &s, &t, &load_mt(&cfg, "fwd")?, &load_mt(&cfg, "rev")?)?;
            println!("{} pool entries in {}", pool.entries.len(), layout.pool().display());
        }
        Command::TrainDocrepair => {
            let (s, t) = load_tokenizers(&cfg)?;
            let pool = SamplePool::load(&layout.pool())?;
            let (_, records) = stage_repair(&cfg, &load_inputs(&cfg)?, &s, &t, &load_mt(&cfg, "fwd")?, &pool)?;
            for r in &records {
                println!("{}", serde_json::to_string(r)?);
            }
        }
        Command::Evaluate => {
            let (s, t) = load_tokenizers(&cfg)?;
            let pool = SamplePool::load(&layout.pool())?;
            let report = stage_evaluate(
                &cfg,
                &load_inputs(&cfg)?,
                &s,
                &t,
                &load_mt(&cfg, "fwd")?,
                &load_repair(&cfg)?,
                &pool,
                &read_records(&cfg)?,
            )?;
            print!("{}", report.summary());
        }
        Command::RunToy => print!("{}", run_experiment(&cfg)?.summary()),
        Command::Translate { input, output } => {
            let (s, t) = load_tokenizers(&cfg)?;
            let docs = read_mono(&input, "doc")?;
            let (base, _, _) =
                translate_documents(&docs, &load_mt(&cfg, "fwd")?, None, &s, &t, cfg.repair.group_size, cfg.mt.beam, w)?;
            write_mono(&output, &base)?;
        }
        Command::Repair {
            input,
            output,
            baseline_output,
        } => {
            let (s, t) = load_tokenizers(&cfg)?;
            let docs = read_mono(&input, "doc")?;
            let repair = load_repair(&cfg)?;
            let (base, rep, fallbacks) = translate_documents(
                &docs,
                &load_mt(&cfg, "fwd")?,
                Some(&repair),
                &s,
                &t,
                cfg.repair.group_size,
                cfg.repair.beam,
                w,
            )?;
            write_mono(&output, &rep)?;
            if let Some(p) = baseline_output {
                write_mono(&p, &base)?;
            }
            eprintln!("{fallbacks} groups fell back to the sentence-level translation");
        }
        Command::Bleu { hypothesis, reference } => {
            let score = bleu(&read_lines(&hypothesis)?, &read_lines(&reference)?, cfg.eval.lowercase)?;
            println!("{score:.2}");
        }
        Command::Contrastive { suite, system } => {
            let path = suite
                .or_else(|| cfg.paths.contrastive_test.clone())
                .unwrap_or_else(|| layout.data("contrastive_test.jsonl"));
            let suite = read_suite(&path)?;
            let (s, t) = load_tokenizers(&cfg)?;
            let fwd = load_mt(&cfg, "fwd")?;
            let scores = match system {
                System::Baseline => sentence_suite_scores(&fwd, &s, &t, &suite, w)?,
                System::Docrepair => {
                    let inputs = suite_inputs(&suite, &fwd, &s, cfg.mt.beam, w)?;
                    docrepair_suite_scores(&load_repair(&cfg)?, &t, &suite, &inputs, w)?
                }
            };
            print!("{}", accuracy_from_scores(&suite, &scores)?.table());
        }
        Command::ChangeStats {
            baseline,
            repaired,
            reference,
        } => {
            let k = cfg.repair.group_size;
            let g = |p: &Path| -> Result<Vec<Vec<String>>> { Ok(doc_groups(&read_mono(p, "doc")?, k)) };
            let stats = change_stats(&g(&baseline)?, &g(&repaired)?, &g(&reference)?)?;
            println!("{}", serde_json::to_string_pretty(&stats)?);
        }
        Command::ServeAnno {
            tasks,
            judgments,
            addr,
            static_dir,
        } => {
            let anno = layout.reports().join("anno");
            let tasks = tasks.unwrap_or_else(|| anno.join("tasks.jsonl"));
            let judgments = judgments.unwrap_or_else(|| anno.join("judgments.jsonl"));
            let list = read_tasks(&tasks).with_context(|| format!("reading {}", tasks.display()))?;
            if list.iter().any(|t| t.a == t.b) {
                bail!("{} contains a task with identical translations", tasks.display());
            }
            let store = TaskStore::open(list, &judgments)?;
            let app = docrepair_cli::server::router(store, static_dir);
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async {
                let listener = tokio::net::TcpListener::bind(addr).await?;
                eprintln!("serving annotation API on http://{addr}");
                axum::serve(listener, app)
                    .with_graceful_shutdown(async {
                        let _ = tokio::signal::ctrl_c().await;
                    })
                    .await
            })?;
        }
    }
    Ok(())
}
