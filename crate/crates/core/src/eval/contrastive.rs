//! Contrastive suites: one JSON object per line,
//! `{"source": [..], "context": [..], "true": [..], "contrastive": [[..], ..],
//!   "phenomenon": "deixis", "distance": 2}`.
//! A candidate group is `context` followed by `true` or one contrastive
//! entry; `distance` may be absent or null.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::EvalError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phenomenon {
    Deixis,
    LexCohesion,
    EllipsisInfl,
    EllipsisVp,
}

impl Phenomenon {
    pub const ALL: [Phenomenon; 4] = [
        Phenomenon::Deixis,
        Phenomenon::LexCohesion,
        Phenomenon::EllipsisInfl,
        Phenomenon::EllipsisVp,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Phenomenon::Deixis => "deixis",
            Phenomenon::LexCohesion => "lex_cohesion",
            Phenomenon::EllipsisInfl => "ellipsis_infl",
            Phenomenon::EllipsisVp => "ellipsis_vp",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContrastiveInstance {
    pub source: Vec<String>,
    pub context: Vec<String>,
    #[serde(rename = "true")]
    pub true_: Vec<String>,
    pub contrastive: Vec<Vec<String>>,
    pub phenomenon: Phenomenon,
    #[serde(default)]
    pub distance: Option<u32>,
}

impl ContrastiveInstance {
    pub fn validate(&self) -> Result<(), String> {
        if self.contrastive.is_empty() {
            return Err("no contrastive candidates".into());
        }
        if self.true_.is_empty() {
            return Err("empty true translation".into());
        }
        if let Some(c) = self.contrastive.iter().find(|c| c.len() != self.true_.len()) {
            return Err(format!("candidate with {} sentences, true has {}", c.len(), self.true_.len()));
        }
        Ok(())
    }

    /// `context ++ candidate`; index 0 is the true translation.
    pub fn candidate_groups(&self) -> Vec<Vec<String>> {
        std::iter::once(&self.true_)
            .chain(&self.contrastive)
            .map(|c| self.context.iter().chain(c).cloned().collect())
            .collect()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tally {
    pub correct: usize,
    pub total: usize,
}

impl Tally {
    pub fn accuracy(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.correct as f64 / self.total as f64
        }
    }

    fn add(&mut self, ok: bool) {
        self.total += 1;
        self.correct += usize::from(ok);
    }
}

/// Accuracy overall, per phenomenon, and per phenomenon and distance
/// (distance key `"none"` when unspecified).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ContrastiveReport {
    pub overall: Tally,
    pub by_phenomenon: BTreeMap<Phenomenon, Tally>,
    pub by_distance: BTreeMap<Phenomenon, BTreeMap<String, Tally>>,
    /// Per instance: whether the true candidate won.
    pub outcomes: Vec<bool>,
}

impl ContrastiveReport {
    pub fn table(&self) -> String {
        let mut keys: Vec<String> = self.by_distance.values().flat_map(|m| m.keys().cloned()).collect();
        keys.sort();
        keys.dedup();
        let mut s = format!("{:<14} {:>8}", "phenomenon", "total");
        for k in &keys {
            let _ = write!(s, " {:>8}", format!("d={k}"));
        }
        s.push('\n');
        for (p, t) in &self.by_phenomenon {
            let _ = write!(s, "{:<14} {:>8.1}", p.as_str(), 100.0 * t.accuracy());
            for k in &keys {
                match self.by_distance[p].get(k) {
                    Some(t) => {
                        let _ = write!(s, " {:>8.1}", 100.0 * t.accuracy());
                    }
                    None => {
                        let _ = write!(s, " {:>8}", "-");
                    }
                }
            }
            s.push('\n');
        }
        let _ = writeln!(
            s,
            "{:<14} {:>8.1}  ({}/{})",
            "all",
            100.0 * self.overall.accuracy(),
            self.overall.correct,
            self.overall.total
        );
        s
    }
}

/// An instance counts as correct iff the true group scores strictly higher
/// than every contrastive group. `scorer` receives each candidate group.
pub fn contrastive_accuracy<F>(instances: &[ContrastiveInstance], mut scorer: F) -> Result<ContrastiveReport, EvalError>
where
    F: FnMut(&ContrastiveInstance, &[String]) -> f64,
{
    let mut scores = Vec::with_capacity(instances.len());
    for (index, inst) in instances.iter().enumerate() {
        inst.validate().map_err(|reason| EvalError::Instance { index, reason })?;
        scores.push(inst.candidate_groups().iter().map(|g| scorer(inst, g)).collect::<Vec<f64>>());
    }
    accuracy_from_scores(instances, &scores)
}

/// As [`contrastive_accuracy`] with precomputed scores, true candidate
/// first in each row.
pub fn accuracy_from_scores(instances: &[ContrastiveInstance], scores: &[Vec<f64>]) -> Result<ContrastiveReport, EvalError> {
    if instances.len() != scores.len() {
        return Err(EvalError::Mismatch(format!("{} instances, {} score rows", instances.len(), scores.len())));
    }
    let mut r = ContrastiveReport::default();
    for (index, (inst, row)) in instances.iter().zip(scores).enumerate() {
        inst.validate().map_err(|reason| EvalError::Instance { index, reason })?;
        if row.len() != inst.contrastive.len() + 1 {
            return Err(EvalError::Instance {
                index,
                reason: format!("{} scores for {} candidates", row.len(), inst.contrastive.len() + 1),
            });
        }
        let t = row[0];
        let ok = row[1..].iter().all(|&c| c.partial_cmp(&t) == Some(std::cmp::Ordering::Less));
        r.overall.add(ok);
        r.by_phenomenon.entry(inst.phenomenon).or_default().add(ok);
        let key = inst.distance.map_or_else(|| "none".to_string(), |d| d.to_string());
        r.by_distance.entry(inst.phenomenon).or_default().entry(key).or_default().add(ok);
        r.outcomes.push(ok);
    }
    Ok(r)
}

pub fn parse_suite(text: &str) -> Result<Vec<ContrastiveInstance>, EvalError> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let inst: ContrastiveInstance = serde_json::from_str(line).map_err(|e| EvalError::Format {
            line: n + 1,
            reason: e.to_string(),
        })?;
        inst.validate().map_err(|reason| EvalError::Format { line: n + 1, reason })?;
        out.push(inst);
    }
    Ok(out)
}

pub fn read_suite(path: &Path) -> Result<Vec<ContrastiveInstance>, EvalError> {
    parse_suite(&fs::read_to_string(path)?)
}

pub fn format_suite(instances: &[ContrastiveInstance]) -> String {
    instances
        .iter()
        .map(|i| serde_json::to_string(i).expect("instances serialize") + "\n")
        .collect()
}

pub fn write_suite(path: &Path, instances: &[ContrastiveInstance]) -> Result<(), EvalError> {
    Ok(fs::write(path, format_suite(instances))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn inst(m: usize, p: Phenomenon, d: Option<u32>) -> ContrastiveInstance {
        ContrastiveInstance {
            source: vec!["s".into()],
            context: vec!["c".into()],
            true_: vec!["t".into()],
            contrastive: (1..m).map(|i| vec![format!("x{i}")]).collect(),
            phenomenon: p,
            distance: d,
        }
    }

    #[test]
    fn oracle_scores_one() {
        let suite: Vec<_> = (0..30).map(|i| inst(2 + i % 3, Phenomenon::ALL[i % 4], Some(1 + (i % 3) as u32))).collect();
        let r = contrastive_accuracy(&suite, |_, g| if g[1] == "t" { 1.0 } else { 0.0 }).unwrap();
        assert_eq!(r.overall.accuracy(), 1.0);
    }

    #[test]
    fn ties_fail() {
        let r = contrastive_accuracy(&[inst(2, Phenomenon::Deixis, None)], |_, _| 0.0).unwrap();
        assert_eq!(r.overall, Tally { correct: 0, total: 1 });
        assert!(contrastive_accuracy(&[inst(1, Phenomenon::Deixis, None)], |_, _| 0.0).is_err());
    }

    #[test]
    fn random_scorer_gives_one_over_m() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for m in [2, 3, 5] {
            let suite: Vec<_> = (0..10_000).map(|_| inst(m, Phenomenon::LexCohesion, Some(1))).collect();
            let r = contrastive_accuracy(&suite, |_, _| rng.gen::<f64>()).unwrap();
            assert!((r.overall.accuracy() - 1.0 / m as f64).abs() < 0.02);
        }
    }

    #[test]
    fn distance_rows_sum_to_phenomenon() {
        let suite: Vec<_> = (0..40)
            .map(|i| inst(2, Phenomenon::ALL[i % 2], if i % 5 == 0 { None } else { Some(1 + (i % 3) as u32) }))
            .collect();
        let mut k = 0;
        let r = contrastive_accuracy(&suite, |_, _| {
            k += 1;
            (k % 3) as f64
        })
        .unwrap();
        for (p, t) in &r.by_phenomenon {
            let rows: Vec<&Tally> = r.by_distance[p].values().collect();
            assert_eq!(rows.iter().map(|t| t.total).sum::<usize>(), t.total);
            assert_eq!(rows.iter().map(|t| t.correct).sum::<usize>(), t.correct);
        }
        assert!(r.table().contains("d=none"));
    }

    #[test]
    fn suite_roundtrip_and_schema() {
        let suite = vec![inst(3, Phenomenon::EllipsisVp, Some(2)), inst(2, Phenomenon::Deixis, None)];
        let text = format_suite(&suite);
        assert!(text.contains("\"true\""));
        assert_eq!(parse_suite(&text).unwrap(), suite);
        assert!(parse_suite(r#"{"source":[],"context":[],"true":["a"],"contrastive":[["b"]],"phenomenon":"other"}"#).is_err());
        assert!(parse_suite(r#"{"source":[],"context":[],"true":["a"],"contrastive":[["b","c"]],"phenomenon":"deixis"}"#).is_err());
        let ok = parse_suite(r#"{"source":[],"context":[],"true":["a"],"contrastive":[["b"]],"phenomenon":"deixis"}"#).unwrap();
        assert_eq!(ok[0].distance, None);
    }
}
