use rand::seq::SliceRandom;
use rand::Rng;

use super::CorpusError;
use crate::model::SeqPair;

/// Source token count of an example as seen by the batcher.
pub fn source_tokens(p: &SeqPair) -> usize {
    p.src.len()
}

/// Groups example indices into batches whose source tokens sum to at most
/// `budget`. Examples are sorted by source length (ties keep corpus order)
/// and chunked greedily; the batch order is then shuffled with `rng`.
pub fn make_batches<R: Rng + ?Sized>(
    examples: &[SeqPair],
    budget: usize,
    rng: &mut R,
) -> Result<Vec<Vec<usize>>, CorpusError> {
    if let Some((index, p)) = examples.iter().enumerate().find(|(_, p)| source_tokens(p) > budget) {
        return Err(CorpusError::OverBudget {
            index,
            tokens: source_tokens(p),
            budget,
        });
    }
    let mut order: Vec<usize> = (0..examples.len()).collect();
    order.sort_by_key(|&i| source_tokens(&examples[i]));
    let mut batches = Vec::new();
    let mut cur = Vec::new();
    let mut used = 0;
    for i in order {
        let n = source_tokens(&examples[i]);
        if !cur.is_empty() && used + n > budget {
            batches.push(std::mem::take(&mut cur));
            used = 0;
        }
        cur.push(i);
        used += n;
    }
    if !cur.is_empty() {
        batches.push(cur);
    }
    batches.shuffle(rng);
    Ok(batches)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ex(lens: &[usize]) -> Vec<SeqPair> {
        lens.iter()
            .map(|&n| SeqPair {
                src: vec![5; n],
                tgt: vec![6],
            })
            .collect()
    }

    #[test]
    fn ten_fives_budget_fifteen() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let b = make_batches(&ex(&[5; 10]), 15, &mut rng).unwrap();
        let mut sizes: Vec<usize> = b.iter().map(Vec::len).collect();
        sizes.sort_unstable_by(|a, b| b.cmp(a));
        assert_eq!(sizes, vec![3, 3, 3, 1]);
    }

    #[test]
    fn budget_of_one_example_gives_singletons() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let b = make_batches(&ex(&[4; 6]), 4, &mut rng).unwrap();
        assert!(b.iter().all(|b| b.len() == 1));
        assert!(make_batches(&ex(&[4, 5]), 4, &mut rng).is_err());
    }

    #[test]
    fn seeded_order_is_reproducible() {
        let e = ex(&[1, 2, 3, 4, 5, 6, 7, 8, 9, 10]);
        let a = make_batches(&e, 10, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let b = make_batches(&e, 10, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!(a, b);
    }

    proptest! {
        #[test]
        fn partition_within_budget(lens in prop::collection::vec(1usize..20, 0..60), budget in 20usize..80, seed in 0u64..100) {
            let e = ex(&lens);
            let b = make_batches(&e, budget, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let mut seen: Vec<usize> = b.iter().flatten().copied().collect();
            seen.sort_unstable();
            prop_assert_eq!(seen, (0..lens.len()).collect::<Vec<_>>());
            for batch in &b {
                prop_assert!(!batch.is_empty());
                prop_assert!(batch.iter().map(|&i| lens[i]).sum::<usize>() <= budget);
            }
            let total: usize = lens.iter().sum();
            prop_assert!(b.len() >= total.div_ceil(budget));
        }
    }
}
