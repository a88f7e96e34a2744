use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::EvalError;

/// Corpus-level n-gram statistics.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BleuStats {
    pub matches: [usize; 4],
    pub totals: [usize; 4],
    pub hyp_len: usize,
    pub ref_len: usize,
}

impl BleuStats {
    pub fn precisions(&self) -> [f64; 4] {
        let mut p = [0.0; 4];
        for n in 0..4 {
            if self.totals[n] > 0 {
                p[n] = self.matches[n] as f64 / self.totals[n] as f64;
            }
        }
        p
    }

    pub fn brevity_penalty(&self) -> f64 {
        if self.hyp_len == 0 {
            return 0.0;
        }
        (1.0 - self.ref_len as f64 / self.hyp_len as f64).min(0.0).exp()
    }

    /// BLEU-4 in [0, 100]; zero when any precision is zero.
    pub fn score(&self) -> f64 {
        let p = self.precisions();
        if p.iter().any(|&x| x == 0.0) {
            return 0.0;
        }
        let log_mean = p.iter().map(|x| x.ln()).sum::<f64>() / 4.0;
        (100.0 * self.brevity_penalty() * log_mean.exp()).clamp(0.0, 100.0)
    }
}

fn ngrams<'a, 'b>(toks: &'b [&'a str], n: usize) -> HashMap<&'b [&'a str], usize> {
    let mut m = HashMap::new();
    if toks.len() >= n {
        for w in toks.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

pub fn bleu_stats<H: AsRef<str>, R: AsRef<str>>(hyps: &[H], refs: &[R], lowercase: bool) -> Result<BleuStats, EvalError> {
    if hyps.len() != refs.len() {
        return Err(EvalError::Mismatch(format!("{} hypotheses, {} references", hyps.len(), refs.len())));
    }
    if hyps.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut st = BleuStats::default();
    for (h, r) in hyps.iter().zip(refs) {
        let (h, r) = if lowercase {
            (h.as_ref().to_lowercase(), r.as_ref().to_lowercase())
        } else {
            (h.as_ref().to_string(), r.as_ref().to_string())
        };
        let ht: Vec<&str> = h.split_whitespace().collect();
        let rt: Vec<&str> = r.split_whitespace().collect();
        st.hyp_len += ht.len();
        st.ref_len += rt.len();
        for n in 1..=4 {
            let hc = ngrams(&ht, n);
            let rc = ngrams(&rt, n);
            st.totals[n - 1] += ht.len().saturating_sub(n - 1);
            st.matches[n - 1] += hc.iter().map(|(g, &c)| c.min(*rc.get(g).unwrap_or(&0))).sum::<usize>();
        }
    }
    Ok(st)
}

/// Corpus BLEU-4 over whitespace tokens, no smoothing.
pub fn bleu<H: AsRef<str>, R: AsRef<str>>(hyps: &[H], refs: &[R], lowercase: bool) -> Result<f64, EvalError> {
    Ok(bleu_stats(hyps, refs, lowercase)?.score())
}
