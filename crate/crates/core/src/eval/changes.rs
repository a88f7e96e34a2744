use serde::{Deserialize, Serialize};

use super::{bleu, EvalError};
use crate::tokenize::RESERVED_TOKENS;

/// How much a repair pass edited its input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChangeStats {
    /// `histogram[c]` = groups with exactly `c` changed sentences.
    pub histogram: Vec<usize>,
    pub unchanged_fraction: f64,
    pub bleu_vs_baseline: f64,
    pub bleu_vs_reference: f64,
}

/// Drops control tokens and collapses whitespace.
pub fn normalize_sentence(s: &str) -> String {
    s.split_whitespace()
        .filter(|w| !RESERVED_TOKENS.contains(w))
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn change_stats<S: AsRef<str>>(
    baseline: &[Vec<S>],
    repaired: &[Vec<S>],
    references: &[Vec<S>],
) -> Result<ChangeStats, EvalError> {
    if baseline.len() != repaired.len() || baseline.len() != references.len() {
        return Err(EvalError::Mismatch(format!(
            "{} baseline, {} repaired, {} reference groups",
            baseline.len(),
            repaired.len(),
            references.len()
        )));
    }
    if baseline.is_empty() {
        return Err(EvalError::Empty);
    }
    let k = baseline[0].len();
    let mut histogram = vec![0; k + 1];
    let (mut rep, mut base, mut refs) = (Vec::new(), Vec::new(), Vec::new());
    for (i, ((b, r), f)) in baseline.iter().zip(repaired).zip(references).enumerate() {
        if b.len() != k || r.len() != k || f.len() != k {
            return Err(EvalError::Mismatch(format!("group {i} is not of size {k}")));
        }
        let mut changed = 0;
        for j in 0..k {
            let bn = normalize_sentence(b[j].as_ref());
            let rn = normalize_sentence(r[j].as_ref());
            changed += usize::from(bn != rn);
            base.push(bn);
            rep.push(rn);
            refs.push(normalize_sentence(f[j].as_ref()));
        }
        histogram[changed] += 1;
    }
    Ok(ChangeStats {
        unchanged_fraction: histogram[0] as f64 / baseline.len() as f64,
        histogram,
        bleu_vs_baseline: bleu(&rep, &base, true)?,
        bleu_vs_reference: bleu(&rep, &refs, true)?,
    })
}
