use std::fs;
use std::path::Path;

use mlm_core::bpe::{train_vocab, BpeVocab, SpecialTokens};
use mlm_core::encoder::Checkpoint;
use mlm_core::pretrain::{
    epoch_checkpoint_name, train, EpochPlan, PackedBlocks, PretrainConfig, PretrainData, TrainSchedule, FINAL_CHECKPOINT,
    TRAIN_CSV, VALID_CSV,
};
use mlm_core::synth::grammar_corpus;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn texts(seed: u64, bytes: usize) -> Vec<String> {
    grammar_corpus(seed, bytes).into_iter().map(|d| d.text).collect()
}

/// A model small enough to take a few milliseconds per update.
fn tiny(vocab: &BpeVocab, total: u64, seed: u64) -> PretrainConfig {
    let mut cfg = PretrainConfig::toy(vocab.len(), seed);
    cfg.model.hidden_size = 32;
    cfg.model.num_heads = 2;
    cfg.model.ffn_size = 64;
    cfg.model.max_positions = 32;
    cfg.seq_len = 32;
    cfg.micro_batch = 4;
    cfg.evals_per_epoch = 1;
    cfg.max_valid_blocks = Some(8);
    cfg.schedule.total_updates = total;
    cfg.schedule.warmup_updates = (total / 10).max(1);
    cfg.schedule.tokens_per_update = 32 * 8;
    cfg
}

fn setup(corpus_bytes: usize) -> (BpeVocab, PretrainData) {
    let train_docs = texts(11, corpus_bytes);
    let valid_docs = texts(12, 2_000);
    let vocab = train_vocab(&train_docs, 320, SpecialTokens::default()).unwrap();
    let data = PretrainData::prepare(&vocab, 32, &train_docs, &valid_docs).unwrap();
    (vocab, data)
}

fn read(p: &Path) -> Vec<u8> {
    fs::read(p).unwrap()
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let (vocab, data) = setup(3_000);
    let upe = data.train.len().div_ceil(8) as u64;
    assert!(upe >= 2, "corpus too small for a meaningful resume");
    let cfg = tiny(&vocab, 2 * upe + 1, 5);

    let full = tempfile::tempdir().unwrap();
    let a = train(&cfg, &vocab, &data, full.path(), None).unwrap();
    assert_eq!(a.checkpoints.len(), 2);

    let ck = Checkpoint::load(&full.path().join(epoch_checkpoint_name(1))).unwrap();
    assert_eq!(ck.step, upe);
    let resumed = tempfile::tempdir().unwrap();
    let b = train(&cfg, &vocab, &data, resumed.path(), Some(&ck)).unwrap();

    assert_eq!(a.params, b.params);
    assert_eq!(a.log, b.log);
    for name in [FINAL_CHECKPOINT, TRAIN_CSV, VALID_CSV] {
        assert_eq!(read(&full.path().join(name)), read(&resumed.path().join(name)), "{name} differs");
    }
}

#[test]
fn same_seed_is_bitwise_reproducible() {
    let (vocab, data) = setup(3_000);
    let run = |seed| {
        let dir = tempfile::tempdir().unwrap();
        let out = train(&tiny(&vocab, 4, seed), &vocab, &data, dir.path(), None).unwrap();
        (out.log, read(&out.final_checkpoint))
    };
    let (log1, ck1) = run(1);
    assert_eq!((log1.clone(), ck1.clone()), run(1));
    assert_ne!(log1, run(2).0);
}

#[test]
fn resume_rejects_foreign_checkpoints() {
    let (vocab, data) = setup(3_000);
    let dir = tempfile::tempdir().unwrap();
    let out = train(&tiny(&vocab, 2, 1), &vocab, &data, dir.path(), None).unwrap();
    let ck = Checkpoint::load(&out.final_checkpoint).unwrap();
    let mut other = tiny(&vocab, 2, 1);
    other.model.hidden_size = 16;
    other.model.ffn_size = 32;
    assert!(train(&other, &vocab, &data, dir.path(), Some(&ck)).is_err());

    let mut bare = ck.clone();
    bare.optimizer = None;
    assert!(train(&tiny(&vocab, 2, 1), &vocab, &data, dir.path(), Some(&bare)).is_err());
}

#[test]
fn short_run_learns() {
    let (vocab, data) = setup(12_000);
    let dir = tempfile::tempdir().unwrap();
    let out = train(&tiny(&vocab, 300, 3), &vocab, &data, dir.path(), None).unwrap();
    let train_ppl: Vec<f64> = out.log.train_points.iter().map(|p| p.1).collect();
    let k = train_ppl.len() / 10;
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    assert!(mean(&train_ppl[train_ppl.len() - k..]) < mean(&train_ppl[..k]));

    let initial = out.log.valid_points[0].1;
    for &(epoch, ppl) in &out.log.valid_points[1..] {
        assert!(ppl <= initial, "validation ppl {ppl} at epoch {epoch} above initial {initial}");
    }
    assert_eq!(out.skipped_steps, 0);
}

#[test]
fn vocab_mismatch_is_a_config_error() {
    let (vocab, data) = setup(3_000);
    let mut cfg = tiny(&vocab, 2, 1);
    cfg.model.vocab_size += 1;
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(
        train(&cfg, &vocab, &data, dir.path(), None),
        Err(mlm_core::Error::Config(_))
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn every_token_is_consumed_once_per_epoch(
        docs in prop::collection::vec(prop::collection::vec(4u32..300, 0..40), 1..20),
        seq_len in 3usize..20,
        per_update in 1usize..7,
        seed in any::<u64>(),
        epoch in 0u64..5,
    ) {
        prop_assume!(docs.iter().any(|d| !d.is_empty()) || docs.len() > 1);
        let packed = PackedBlocks::pack(&docs, seq_len, 0, 2).unwrap();
        let mut stream = Vec::new();
        for (i, d) in docs.iter().enumerate() {
            if i > 0 {
                stream.push(2);
            }
            stream.extend_from_slice(d);
        }
        let bodies: Vec<u32> = packed.blocks.iter().flat_map(|b| b[1..b.len() - 1].to_vec()).collect();
        prop_assert_eq!(&bodies, &stream);
        prop_assert!(packed.blocks.iter().all(|b| b.len() <= seq_len && b[0] == 0 && *b.last().unwrap() == 2));

        let plan = EpochPlan { num_blocks: packed.len(), sequences_per_update: per_update, seed };
        let upe = plan.updates_per_epoch();
        let order = plan.order(epoch);
        let mut seen: Vec<usize> = (epoch * upe..(epoch + 1) * upe)
            .flat_map(|s| plan.blocks_for(s, &order))
            .collect();
        seen.sort_unstable();
        prop_assert_eq!(seen, (0..packed.len()).collect::<Vec<_>>());
    }

    #[test]
    fn schedule_shape(
        total in 2u64..5_000,
        warmup_frac in 0.0f64..0.9,
        peak in 1e-6f64..1e-1,
        end_frac in 0.0f64..0.5,
        power in 0.5f64..3.0,
    ) {
        let warmup = ((total as f64 * warmup_frac) as u64).min(total - 1);
        let s = TrainSchedule {
            total_updates: total,
            warmup_updates: warmup,
            peak_lr: peak,
            end_lr: peak * end_frac,
            power,
            tokens_per_update: 512,
            seed: 0,
        };
        let lrs: Vec<f64> = (0..=total).map(|t| s.lr_at(t).unwrap()).collect();
        prop_assert!(lrs.iter().all(|&l| l >= 0.0));
        prop_assert_eq!(lrs[warmup as usize], peak);
        prop_assert!(lrs.iter().all(|&l| l <= peak));
        // Strictly below the peak away from the warmup boundary.
        prop_assert!(lrs.iter().enumerate().all(|(t, &l)| t == warmup as usize || l < peak));
        if warmup > 0 {
            let jump = peak - lrs[warmup as usize - 1];
            prop_assert!((jump - peak / warmup as f64).abs() <= 1e-12 * peak);
        }
        prop_assert!((lrs[total as usize] - s.end_lr).abs() <= 1e-15);
        prop_assert!(s.lr_at(total + 1).is_err());
    }
}

#[test]
fn schedule_closed_form_at_random_steps() {
    let s = TrainSchedule::base();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..100 {
        let t = rng.random_range(1..s.total_updates);
        let want = if t < 10_000 {
            4e-4 * t as f64 / 10_000.0
        } else {
            4e-4 * (100_000 - t) as f64 / 90_000.0
        };
        let got = s.lr_at(t).unwrap();
        assert!((got - want).abs() <= 1e-12 * want, "step {t}: {got} vs {want}");
    }
}
