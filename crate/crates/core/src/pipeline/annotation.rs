//! Blind pairwise preference tasks: baseline vs repaired translations.
//!
//! Tasks file: one JSON [`AnnotationTask`] per line. Judgment store:
//! append-only JSON lines, one [`Judgment`] per line.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::synth::derive_rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Baseline,
    Repaired,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationTask {
    pub id: String,
    pub source: Vec<String>,
    pub a: Vec<String>,
    pub b: Vec<String>,
    /// Model behind translation A; never sent to annotators.
    pub origin_a: Origin,
}

/// What annotators see.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskView {
    pub id: String,
    pub source: Vec<String>,
    pub a: Vec<String>,
    pub b: Vec<String>,
}

impl AnnotationTask {
    pub fn view(&self) -> TaskView {
        TaskView {
            id: self.id.clone(),
            source: self.source.clone(),
            a: self.a.clone(),
            b: self.b.clone(),
        }
    }

    pub fn origin_b(&self) -> Origin {
        match self.origin_a {
            Origin::Baseline => Origin::Repaired,
            Origin::Repaired => Origin::Baseline,
        }
    }

    pub fn resolve(&self, choice: Choice) -> Outcome {
        let winner = match choice {
            Choice::Equal => return Outcome::Equal,
            Choice::A => self.origin_a,
            Choice::B => self.origin_b(),
        };
        match winner {
            Origin::Repaired => Outcome::RepairedBetter,
            Origin::Baseline => Outcome::BaselineBetter,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Choice {
    A,
    B,
    #[serde(rename = "equal")]
    Equal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Equal,
    RepairedBetter,
    BaselineBetter,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Judgment {
    pub task_id: String,
    pub annotator: String,
    pub choice: Choice,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
}

/// Tasks for every group whose repaired text differs from the baseline;
/// the A/B order of task `i` is drawn from `seed`.
pub fn build_tasks(
    sources: &[Vec<String>],
    baseline: &[Vec<String>],
    repaired: &[Vec<String>],
    seed: u64,
) -> Vec<AnnotationTask> {
    let mut out = Vec::new();
    for (i, ((s, b), r)) in sources.iter().zip(baseline).zip(repaired).enumerate() {
        if b == r {
            continue;
        }
        let repaired_first = derive_rng(seed, "annotation", i).gen_bool(0.5);
        let (a, bb, origin_a) = if repaired_first {
            (r.clone(), b.clone(), Origin::Repaired)
        } else {
            (b.clone(), r.clone(), Origin::Baseline)
        };
        out.push(AnnotationTask {
            id: format!("t{i:05}"),
            source: s.clone(),
            a,
            b: bb,
            origin_a,
        });
    }
    out
}

/// Judgment counts; percentages are of all tasks, pending included.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub total: usize,
    pub judged: usize,
    pub pending: usize,
    pub equal: usize,
    pub repaired_better: usize,
    pub baseline_better: usize,
    pub pct_equal: f64,
    pub pct_repaired_better: f64,
    pub pct_baseline_better: f64,
    /// repaired_better / (repaired_better + baseline_better), in percent.
    pub decided_preference: f64,
}

pub fn aggregate(total: usize, equal: usize, repaired_better: usize, baseline_better: usize) -> Aggregate {
    let pct = |n: usize, d: usize| if d == 0 { 0.0 } else { 100.0 * n as f64 / d as f64 };
    let judged = equal + repaired_better + baseline_better;
    Aggregate {
        total,
        judged,
        pending: total.saturating_sub(judged),
        equal,
        repaired_better,
        baseline_better,
        pct_equal: pct(equal, total),
        pct_repaired_better: pct(repaired_better, total),
        pct_baseline_better: pct(baseline_better, total),
        decided_preference: pct(repaired_better, repaired_better + baseline_better),
    }
}

#[derive(Debug, thiserror::Error)]
pub enum AnnotationError {
    #[error("unknown task {0}")]
    UnknownTask(String),
    #[error("task {0} already judged")]
    Duplicate(String),
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("corrupt store at line {line}: {reason}")]
    Corrupt { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Export row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportRow {
    pub task_id: String,
    pub annotator: String,
    pub choice: Choice,
    pub origin_a: Origin,
    pub outcome: Outcome,
    pub timestamp: u64,
}

/// Tasks plus immutable judgments, persisted by appending.
pub struct TaskStore {
    tasks: Vec<AnnotationTask>,
    index: BTreeMap<String, usize>,
    judgments: BTreeMap<String, Judgment>,
    leases: BTreeMap<String, String>,
    log: Option<File>,
}

impl TaskStore {
    pub fn in_memory(tasks: Vec<AnnotationTask>) -> Self {
        let index = tasks.iter().enumerate().map(|(i, t)| (t.id.clone(), i)).collect();
        Self {
            tasks,
            index,
            judgments: BTreeMap::new(),
            leases: BTreeMap::new(),
            log: None,
        }
    }

    /// Replays `judgments_path` if present and appends to it afterwards.
    pub fn open(tasks: Vec<AnnotationTask>, judgments_path: &Path) -> Result<Self, AnnotationError> {
        let mut store = Self::in_memory(tasks);
        if judgments_path.exists() {
            for (n, line) in fs::read_to_string(judgments_path)?.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let j: Judgment = serde_json::from_str(line).map_err(|e| AnnotationError::Corrupt {
                    line: n + 1,
                    reason: e.to_string(),
                })?;
                store.insert(j).map_err(|e| AnnotationError::Corrupt {
                    line: n + 1,
                    reason: e.to_string(),
                })?;
            }
        }
        store.log = Some(OpenOptions::new().create(true).append(true).open(judgments_path)?);
        Ok(store)
    }

    fn insert(&mut self, j: Judgment) -> Result<(), AnnotationError> {
        if !self.index.contains_key(&j.task_id) {
            return Err(AnnotationError::UnknownTask(j.task_id));
        }
        if self.judgments.contains_key(&j.task_id) {
            return Err(AnnotationError::Duplicate(j.task_id));
        }
        self.judgments.insert(j.task_id.clone(), j);
        Ok(())
    }

    pub fn tasks(&self) -> &[AnnotationTask] {
        &self.tasks
    }

    pub fn task(&self, id: &str) -> Option<&AnnotationTask> {
        self.index.get(id).map(|&i| &self.tasks[i])
    }

    /// First task without a judgment.
    pub fn next_pending(&self) -> Option<&AnnotationTask> {
        self.tasks.iter().find(|t| !self.judgments.contains_key(&t.id))
    }

    /// The pending task to show `annotator`: one already served to them,
    /// else the first one not served to anyone, else any pending task.
    pub fn next_for(&mut self, annotator: &str) -> Option<&AnnotationTask> {
        let pending = |t: &&AnnotationTask| !self.judgments.contains_key(&t.id);
        let pick = self
            .tasks
            .iter()
            .filter(pending)
            .find(|t| self.leases.get(&t.id).is_some_and(|a| a == annotator))
            .or_else(|| self.tasks.iter().filter(pending).find(|t| !self.leases.contains_key(&t.id)))
            .or_else(|| self.tasks.iter().find(pending))?;
        let id = pick.id.clone();
        self.leases.entry(id.clone()).or_insert_with(|| annotator.to_string());
        self.task(&id)
    }

    pub fn submit(&mut self, task_id: &str, annotator: &str, choice: Choice, timestamp: u64) -> Result<Outcome, AnnotationError> {
        if annotator.trim().is_empty() {
            return Err(AnnotationError::BadRequest("annotator id is empty".into()));
        }
        let task = self.task(task_id).ok_or_else(|| AnnotationError::UnknownTask(task_id.to_string()))?;
        let outcome = task.resolve(choice);
        if self.judgments.contains_key(task_id) {
            return Err(AnnotationError::Duplicate(task_id.to_string()));
        }
        let j = Judgment {
            task_id: task_id.to_string(),
            annotator: annotator.to_string(),
            choice,
            timestamp,
        };
        if let Some(f) = self.log.as_mut() {
            let mut line = serde_json::to_string(&j).expect("judgment serializes");
            line.push('\n');
            f.write_all(line.as_bytes())?;
            f.flush()?;
        }
        self.insert(j)?;
        Ok(outcome)
    }

    pub fn stats(&self) -> Aggregate {
        let (mut e, mut r, mut b) = (0, 0, 0);
        for j in self.judgments.values() {
            match self.task(&j.task_id).expect("judged tasks exist").resolve(j.choice) {
                Outcome::Equal => e += 1,
                Outcome::RepairedBetter => r += 1,
                Outcome::BaselineBetter => b += 1,
            }
        }
        aggregate(self.tasks.len(), e, r, b)
    }

    pub fn export(&self) -> Vec<ExportRow> {
        self.tasks
            .iter()
            .filter_map(|t| {
                self.judgments.get(&t.id).map(|j| ExportRow {
                    task_id: t.id.clone(),
                    annotator: j.annotator.clone(),
                    choice: j.choice,
                    origin_a: t.origin_a,
                    outcome: t.resolve(j.choice),
                    timestamp: j.timestamp,
                })
            })
            .collect()
    }
}

pub fn write_tasks(path: &Path, tasks: &[AnnotationTask]) -> Result<(), AnnotationError> {
    let text: String = tasks
        .iter()
        .map(|t| serde_json::to_string(t).expect("task serializes") + "\n")
        .collect();
    Ok(fs::write(path, text)?)
}

pub fn read_tasks(path: &Path) -> Result<Vec<AnnotationTask>, AnnotationError> {
    fs::read_to_string(path)?
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            serde_json::from_str(l).map_err(|e| AnnotationError::Corrupt {
                line: n + 1,
                reason: e.to_string(),
            })
        })
        .collect()
}
