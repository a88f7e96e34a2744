use docrepair::tokenize::{Tokenizer, NUM_RESERVED, RESERVED_TOKENS, SEP, UNK};
use proptest::prelude::*;

fn sentence() -> impl Strategy<Value = String> {
    prop::collection::vec("[a-e]{1,6}", 1..8).prop_map(|w| w.join(" "))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn decode_inverts_encode(corpus in prop::collection::vec(sentence(), 1..12), merges in 0usize..40, picks in prop::collection::vec(any::<prop::sample::Index>(), 1..10)) {
        let tok = Tokenizer::train(&corpus, merges).unwrap();
        let words: Vec<&str> = corpus.iter().flat_map(|s| s.split(' ')).collect();
        let probe = picks.iter().map(|i| *i.get(&words)).collect::<Vec<_>>().join(" ");
        for s in corpus.iter().chain(std::iter::once(&probe)) {
            let ids = tok.encode(s);
            prop_assert!(!ids.contains(&UNK));
            prop_assert!(!ids.contains(&SEP));
            prop_assert!(ids.iter().all(|&i| i >= NUM_RESERVED && (i as usize) < tok.vocab.len()));
            prop_assert_eq!(&tok.decode(&ids).unwrap(), s);
        }
    }

    #[test]
    fn vocabulary_is_bijective_with_reserved_prefix(corpus in prop::collection::vec(sentence(), 1..8), merges in 0usize..30) {
        let tok = Tokenizer::train(&corpus, merges).unwrap();
        for (i, r) in RESERVED_TOKENS.iter().enumerate() {
            prop_assert_eq!(tok.vocab.id(r), Some(i as u32));
        }
        for id in 0..tok.vocab.len() as u32 {
            let t = tok.vocab.token(id).unwrap();
            prop_assert_eq!(tok.vocab.id(t), Some(id));
        }
        prop_assert!(tok.merges.len() <= merges);
    }

    #[test]
    fn save_and_load_preserve_encoding(corpus in prop::collection::vec(sentence(), 1..6), merges in 0usize..20) {
        let tok = Tokenizer::train(&corpus, merges).unwrap();
        let dir = tempfile::tempdir().unwrap();
        tok.save(dir.path(), "t").unwrap();
        let back = Tokenizer::load(dir.path(), "t").unwrap();
        prop_assert_eq!(&back, &tok);
        for s in &corpus {
            prop_assert_eq!(back.encode(s), tok.encode(s));
        }
    }
}

#[test]
fn unseen_characters_map_to_unknown() {
    let tok = Tokenizer::train(&["abc abd"], 2).unwrap();
    assert!(tok.encode("abz").contains(&UNK));
}
