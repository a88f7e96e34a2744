use rand::Rng;

use crate::tokenize::NUM_RESERVED;

/// Replaces each non-reserved token with probability `p` by a uniform draw
/// over non-reserved ids (which may equal the original). Also returns the
/// number of replacement attempts.
pub fn noise_tokens_counted<R: Rng + ?Sized>(ids: &[u32], p: f64, vocab_size: usize, rng: &mut R) -> (Vec<u32>, usize) {
    let lo = NUM_RESERVED as u32;
    let hi = vocab_size as u32;
    let mut attempts = 0;
    let out = ids
        .iter()
        .map(|&t| {
            if t < lo || hi <= lo || p <= 0.0 {
                return t;
            }
            if rng.gen::<f64>() < p {
                attempts += 1;
                rng.gen_range(lo..hi)
            } else {
                t
            }
        })
        .collect();
    (out, attempts)
}

pub fn noise_tokens<R: Rng + ?Sized>(ids: &[u32], p: f64, vocab_size: usize, rng: &mut R) -> Vec<u32> {
    noise_tokens_counted(ids, p, vocab_size, rng).0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenize::{BOS, EOS, PAD, SEP};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_probability_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let ids = vec![5, 9, SEP, 7, EOS];
        assert_eq!(noise_tokens(&ids, 0.0, 20, &mut rng), ids);
    }

    #[test]
    fn specials_never_touched_or_drawn() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ids: Vec<u32> = (0..2000).map(|i| [PAD, BOS, EOS, SEP, 6][i % 5]).collect();
        let out = noise_tokens(&ids, 1.0, 12, &mut rng);
        for (a, b) in ids.iter().zip(&out) {
            if *a < NUM_RESERVED as u32 {
                assert_eq!(a, b);
            } else {
                assert!(*b >= NUM_RESERVED as u32 && *b < 12);
            }
        }
    }

    #[test]
    fn full_noise_keeps_original_at_uniform_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let v = 15;
        let ids = vec![7u32; 200_000];
        let out = noise_tokens(&ids, 1.0, v, &mut rng);
        let same = out.iter().filter(|&&t| t == 7).count() as f64 / ids.len() as f64;
        assert!((same - 1.0 / (v - NUM_RESERVED as usize) as f64).abs() < 0.01);
    }
}
