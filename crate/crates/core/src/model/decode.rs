//! Search over any step-wise scorer: greedy, beam and temperature sampling.

use rand::Rng;

use crate::numerics::kernels;
use crate::tokenize::{BOS, EOS, PAD};

/// A left-to-right next-token distribution.
pub trait StepModel {
    type State: Clone;

    fn vocab_size(&self) -> usize;
    /// State after BOS and the log-probabilities of the first token.
    fn start(&self) -> (Self::State, Vec<f64>);
    /// Consumes `token` and returns log-probabilities of the next one.
    fn advance(&self, state: &mut Self::State, token: u32) -> Vec<f64>;
}

/// A decoded hypothesis. `tokens` excludes BOS and EOS.
#[derive(Clone, Debug, PartialEq)]
pub struct Decoded {
    pub tokens: Vec<u32>,
    pub log_prob: f64,
    pub finished: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BeamConfig {
    pub beam: usize,
    pub max_len: usize,
    /// Exponent on hypothesis length when ranking; 0 disables normalization.
    pub length_penalty: f64,
}

impl BeamConfig {
    pub fn new(beam: usize, max_len: usize) -> Self {
        Self {
            beam,
            max_len,
            length_penalty: 0.0,
        }
    }
}

/// `inner` with the `banned` ids made impossible.
pub struct Masked<'a, M> {
    pub inner: &'a M,
    pub banned: &'a [u32],
}

impl<M: StepModel> Masked<'_, M> {
    fn mask(&self, mut lp: Vec<f64>) -> Vec<f64> {
        for &b in self.banned {
            if let Some(x) = lp.get_mut(b as usize) {
                *x = f64::NEG_INFINITY;
            }
        }
        lp
    }
}

impl<M: StepModel> StepModel for Masked<'_, M> {
    type State = M::State;

    fn vocab_size(&self) -> usize {
        self.inner.vocab_size()
    }

    fn start(&self) -> (Self::State, Vec<f64>) {
        let (s, lp) = self.inner.start();
        (s, self.mask(lp))
    }

    fn advance(&self, state: &mut Self::State, token: u32) -> Vec<f64> {
        self.mask(self.inner.advance(state, token))
    }
}

fn generatable(id: usize) -> bool {
    id as u32 != PAD && id as u32 != BOS
}

/// Default output length budget for a source of `src_len` tokens.
pub fn default_max_len(src_len: usize) -> usize {
    2 * src_len + 8
}

fn best_token(lp: &[f64]) -> u32 {
    let mut best = None;
    for (i, &v) in lp.iter().enumerate() {
        if !generatable(i) {
            continue;
        }
        match best {
            Some((_, b)) if v <= b => {}
            _ => best = Some((i, v)),
        }
    }
    best.map_or(EOS, |(i, _)| i as u32)
}

/// Picks the most probable token at every step.
pub fn greedy<M: StepModel>(model: &M, max_len: usize) -> Decoded {
    let (mut state, mut lp) = model.start();
    let mut out = Decoded {
        tokens: Vec::new(),
        log_prob: 0.0,
        finished: false,
    };
    for step in 0..max_len {
        let t = best_token(&lp);
        out.log_prob += lp[t as usize];
        if t == EOS {
            out.finished = true;
            break;
        }
        out.tokens.push(t);
        if step + 1 < max_len {
            lp = model.advance(&mut state, t);
        }
    }
    out
}

#[derive(Clone)]
struct Hyp<S> {
    tokens: Vec<u32>,
    score: f64,
    state: S,
    next: Vec<f64>,
}

fn rank(score: f64, len: usize, alpha: f64) -> f64 {
    if alpha == 0.0 {
        score
    } else {
        score / (len.max(1) as f64).powf(alpha)
    }
}

/// Beam search. Hypotheses that emit EOS leave the beam; search stops once
/// no open hypothesis can outrank the best finished one, or at `max_len`.
/// Returns the best finished hypothesis, else the best open one.
pub fn beam_search<M: StepModel>(model: &M, cfg: BeamConfig) -> Decoded {
    let beam = cfg.beam.max(1);
    let (state, next) = model.start();
    let mut active = vec![Hyp {
        tokens: Vec::new(),
        score: 0.0,
        state,
        next,
    }];
    let mut finished: Vec<Decoded> = Vec::new();
    let alpha = cfg.length_penalty;
    for step in 0..cfg.max_len {
        let mut cands: Vec<(f64, usize, u32, f64)> = Vec::new();
        for (h, hyp) in active.iter().enumerate() {
            for (t, &lp) in hyp.next.iter().enumerate() {
                if !generatable(t) || lp == f64::NEG_INFINITY {
                    continue;
                }
                let s = hyp.score + lp;
                let len = hyp.tokens.len() + 1;
                cands.push((rank(s, len, alpha), h, t as u32, s));
            }
        }
        cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        cands.truncate(beam);
        let mut next_active = Vec::new();
        for &(_, h, t, s) in &cands {
            let parent = &active[h];
            if t == EOS {
                finished.push(Decoded {
                    tokens: parent.tokens.clone(),
                    log_prob: s,
                    finished: true,
                });
            } else {
                let mut tokens = parent.tokens.clone();
                tokens.push(t);
                next_active.push(Hyp {
                    tokens,
                    score: s,
                    state: parent.state.clone(),
                    next: Vec::new(),
                });
            }
        }
        active = next_active;
        if active.is_empty() {
            break;
        }
        let best_fin = finished
            .iter()
            .map(|d| rank(d.log_prob, d.tokens.len() + 1, alpha))
            .fold(f64::NEG_INFINITY, f64::max);
        let best_open = active
            .iter()
            .map(|h| rank(h.score, h.tokens.len(), alpha))
            .fold(f64::NEG_INFINITY, f64::max);
        if alpha == 0.0 && best_fin >= best_open {
            break;
        }
        if step + 1 == cfg.max_len {
            break;
        }
        for hyp in &mut active {
            let last = *hyp.tokens.last().expect("open hypotheses are non-empty");
            hyp.next = model.advance(&mut hyp.state, last);
        }
    }
    let pick = |d: &Decoded| rank(d.log_prob, d.tokens.len() + 1, alpha);
    if let Some(best) = finished
        .iter()
        .fold(None::<&Decoded>, |b, d| match b {
            Some(b) if pick(b) >= pick(d) => Some(b),
            _ => Some(d),
        })
    {
        return best.clone();
    }
    active
        .into_iter()
        .fold(None::<Hyp<M::State>>, |b, h| match b {
            Some(b) if rank(b.score, b.tokens.len(), alpha) >= rank(h.score, h.tokens.len(), alpha) => Some(b),
            _ => Some(h),
        })
        .map_or(
            Decoded {
                tokens: Vec::new(),
                log_prob: f64::NEG_INFINITY,
                finished: false,
            },
            |h| Decoded {
                tokens: h.tokens,
                log_prob: h.score,
                finished: false,
            },
        )
}

/// Draws one token from `softmax(lp / temperature)` over generatable ids.
/// Temperatures below 1e-4 fall back to argmax.
pub fn sample_token<R: Rng + ?Sized>(lp: &[f64], temperature: f64, rng: &mut R) -> u32 {
    if temperature < 1e-4 {
        return best_token(lp);
    }
    let mut w: Vec<f64> = lp
        .iter()
        .enumerate()
        .map(|(i, &v)| if generatable(i) { v / temperature } else { f64::NEG_INFINITY })
        .collect();
    kernels::softmax_in_place(&mut w);
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = EOS;
    for (i, &p) in w.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        acc += p;
        last = i as u32;
        if u < acc {
            return i as u32;
        }
    }
    last
}

/// Ancestral sampling at `temperature`. `log_prob` is the model
/// log-probability of the sample, not of the tempered distribution.
pub fn sample<M: StepModel, R: Rng + ?Sized>(model: &M, temperature: f64, max_len: usize, rng: &mut R) -> Decoded {
    let (mut state, mut lp) = model.start();
    let mut out = Decoded {
        tokens: Vec::new(),
        log_prob: 0.0,
        finished: false,
    };
    for step in 0..max_len {
        let t = sample_token(&lp, temperature, rng);
        out.log_prob += lp[t as usize];
        if t == EOS {
            out.finished = true;
            break;
        }
        out.tokens.push(t);
        if step + 1 < max_len {
            lp = model.advance(&mut state, t);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Next-token table keyed by prefix; missing prefixes end with EOS.
    struct Table {
        vocab: usize,
        rows: Vec<(Vec<u32>, Vec<(u32, f64)>)>,
    }

    impl Table {
        fn lp(&self, prefix: &[u32]) -> Vec<f64> {
            let mut out = vec![f64::NEG_INFINITY; self.vocab];
            match self.rows.iter().find(|(p, _)| p == prefix) {
                Some((_, dist)) => {
                    for &(t, p) in dist {
                        out[t as usize] = p.ln();
                    }
                }
                None => out[EOS as usize] = 0.0,
            }
            out
        }
    }

    impl StepModel for Table {
        type State = Vec<u32>;
        fn vocab_size(&self) -> usize {
            self.vocab
        }
        fn start(&self) -> (Vec<u32>, Vec<f64>) {
            (Vec::new(), self.lp(&[]))
        }
        fn advance(&self, s: &mut Vec<u32>, t: u32) -> Vec<f64> {
            s.push(t);
            self.lp(s)
        }
    }

    const A: u32 = 5;
    const B: u32 = 6;

    fn trap() -> Table {
        Table {
            vocab: 7,
            rows: vec![
                (vec![], vec![(A, 0.6), (B, 0.4)]),
                (vec![A], vec![(A, 0.5), (B, 0.5)]),
                (vec![B], vec![(EOS, 1.0)]),
                (vec![A, A], vec![(EOS, 1.0)]),
                (vec![A, B], vec![(EOS, 1.0)]),
            ],
        }
    }

    #[test]
    fn greedy_takes_local_best() {
        let d = greedy(&trap(), 10);
        assert_eq!(d.tokens, vec![A, A]);
        assert!((d.log_prob - 0.3f64.ln()).abs() < 1e-12);
        assert!(d.finished);
    }

    #[test]
    fn beam_two_finds_global_best() {
        let d = beam_search(&trap(), BeamConfig::new(2, 10));
        assert_eq!(d.tokens, vec![B]);
        assert!((d.log_prob - 0.4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn beam_one_matches_greedy() {
        let t = trap();
        assert_eq!(beam_search(&t, BeamConfig::new(1, 10)), greedy(&t, 10));
    }

    #[test]
    fn max_len_cuts_unfinished() {
        let t = Table {
            vocab: 7,
            rows: vec![(vec![], vec![(A, 1.0)]), (vec![A], vec![(A, 1.0)]), (vec![A, A], vec![(A, 1.0)])],
        };
        let d = beam_search(&t, BeamConfig::new(3, 2));
        assert_eq!(d.tokens, vec![A, A]);
        assert!(!d.finished);
        let g = greedy(&t, 2);
        assert_eq!(g.tokens, vec![A, A]);
        assert!(!g.finished);
    }

    #[test]
    fn sampling_frequencies() {
        let t = Table {
            vocab: 7,
            rows: vec![(vec![], vec![(A, 0.75), (B, 0.25)])],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 20000;
        let hits = (0..n).filter(|_| sample(&t, 1.0, 5, &mut rng).tokens == [A]).count();
        assert!((hits as f64 / n as f64 - 0.75).abs() < 0.02);
        let hits = (0..n).filter(|_| sample(&t, 0.5, 5, &mut rng).tokens == [A]).count();
        assert!((hits as f64 / n as f64 - 0.9).abs() < 0.02);
    }

    #[test]
    fn zero_temperature_is_argmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let lp = [0.0, 0.0, -3.0, -9.0, -9.0, -0.1, -2.0];
        for _ in 0..50 {
            assert_eq!(sample_token(&lp, 0.0, &mut rng), A);
        }
    }

    #[test]
    fn never_emits_pad_or_bos() {
        let lp = [10.0, 10.0, -1.0, -50.0, -50.0, -50.0, -50.0];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert_eq!(best_token(&lp), EOS);
        for _ in 0..100 {
            let t = sample_token(&lp, 1.0, &mut rng);
            assert!(t != PAD && t != BOS);
        }
    }
}
