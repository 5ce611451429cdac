mod common;

use mlm_core::bpe::{chunk_ranges, train_vocab, BpeVocab, SpecialTokens, NUM_SPECIAL_TOKENS};
use proptest::prelude::*;

fn small_corpus() -> impl Strategy<Value = Vec<Vec<u8>>> {
    let alphabet: Vec<u8> = b"abcde  \n".iter().copied().chain([0xC3, 0xBC, 0xFF]).collect();
    prop::collection::vec(prop::collection::vec(prop::sample::select(alphabet), 0..120), 1..8)
        .prop_filter("1 byte to 1 KB", |docs| (1..=1024).contains(&docs.iter().map(Vec::len).sum::<usize>()))
}

fn trained(corpus: &[Vec<u8>], target: usize) -> BpeVocab {
    train_vocab(corpus, target, SpecialTokens::default()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn chunking_matches_reference(text in prop::collection::vec(prop::sample::select(b"ab \t\n".to_vec()), 0..60)) {
        let got: Vec<Vec<u8>> = chunk_ranges(&text).into_iter().map(|r| text[r].to_vec()).collect();
        prop_assert_eq!(got, common::oracle_chunks(&text));
    }

    #[test]
    fn merges_match_recount_oracle(corpus in small_corpus(), extra in 0usize..40) {
        let target = 256 + NUM_SPECIAL_TOKENS + extra;
        let vocab = trained(&corpus, target);
        let (merges, _) = common::oracle_bpe(&corpus, extra);
        prop_assert_eq!(vocab.merges(), merges.as_slice());
    }

    #[test]
    fn encoding_training_chunks_reproduces_trainer_segmentation(corpus in small_corpus(), extra in 0usize..40) {
        let vocab = trained(&corpus, 256 + NUM_SPECIAL_TOKENS + extra);
        let (_, segmentation) = common::oracle_bpe(&corpus, extra);
        for (chunk, pieces) in segmentation {
            let ids = vocab.encode_chunk(&chunk);
            let got: Vec<String> = ids.iter().map(|&i| vocab.token(i).unwrap().to_string()).collect();
            prop_assert_eq!(got, pieces);
        }
    }

    #[test]
    fn roundtrip_on_arbitrary_bytes(corpus in small_corpus(), text in prop::collection::vec(any::<u8>(), 0..512)) {
        let vocab = trained(&corpus, 300);
        let enc = vocab.encode(&text, false);
        prop_assert_eq!(vocab.decode(&enc.ids).unwrap(), text.clone());
        let with_specials = vocab.encode(&text, true);
        prop_assert_eq!(vocab.decode(&with_specials.ids).unwrap(), text);
    }

    #[test]
    fn every_prefix_of_the_merge_list_is_a_valid_vocab(corpus in small_corpus()) {
        let vocab = trained(&corpus, 300);
        for k in 0..=vocab.merges().len() {
            let t = vocab.truncated(k).unwrap();
            prop_assert_eq!(t.len(), 256 + NUM_SPECIAL_TOKENS + k);
            prop_assert_eq!(t.merges(), &vocab.merges()[..k]);
            let text = corpus.concat();
            prop_assert_eq!(t.decode(&t.encode(&text, false).ids).unwrap(), text);
        }
    }

    #[test]
    fn more_merges_never_lengthen_an_encoding(corpus in small_corpus(), text in prop::collection::vec(prop::sample::select(b"abcde \n".to_vec()), 0..200)) {
        let vocab = trained(&corpus, 300);
        let mut prev = usize::MAX;
        for k in 0..=vocab.merges().len() {
            let n = vocab.truncated(k).unwrap().encode(&text, false).ids.len();
            prop_assert!(n <= prev, "k={} gives {} tokens, k-1 gave {}", k, n, prev);
            prev = n;
        }
    }
}

#[test]
fn vocab_files_roundtrip() {
    let corpus = vec![b"evler evlerde evlerimiz ev".to_vec()];
    let vocab = trained(&corpus, 280);
    let dir = tempfile::tempdir().unwrap();
    vocab.save(dir.path()).unwrap();
    let loaded = BpeVocab::load(dir.path()).unwrap();
    assert_eq!(loaded.merges(), vocab.merges());
    assert_eq!(loaded.len(), vocab.len());
    assert_eq!(loaded.encode(b"evlerde", true), vocab.encode(b"evlerde", true));
}
