use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::checks::{full_model_grad_check, toy_config, toy_examples};
use super::*;
use crate::corpus::build_vocabulary;
use crate::descriptors::{extract_descriptors, ExtractOptions, TestKind};
use crate::synthetic::separable_corpus;

fn toy_model<T: Scalar>(mode: Mode, seed: u64) -> DualChannelModel<T> {
    let labels = LabelSpace::new(["a", "b", "c"], mode).unwrap();
    DualChannelModel::new(toy_config(mode, seed), labels, 20).unwrap()
}

fn toy_batch(mode: Mode, seed: u64, n: usize) -> Vec<EncodedExample> {
    toy_examples(mode, n, 3, 20, 6, &mut ChaCha8Rng::seed_from_u64(seed))
}

#[test]
fn dense_input_width_is_six_gru_widths() {
    let m = toy_model::<f32>(Mode::MultiClass, 1);
    assert_eq!(m.feature_width(), 6 * 4);
    assert_eq!(m.output_layer().output_size, 3);
}

#[test]
fn full_model_gradient_check() {
    for mode in [Mode::MultiClass, Mode::MultiLabel] {
        let r = full_model_grad_check(mode, 42).unwrap();
        assert!(r.max_relative_error < 1e-4, "{mode}: {r:?}");
        assert!(r.entries_checked > 500);
    }
}

#[test]
fn forward_rows_are_distributions() {
    for seed in 0..20 {
        let m = toy_model::<f32>(Mode::MultiClass, seed);
        let probs = m.predict_proba(&toy_batch(Mode::MultiClass, seed, 7)).unwrap();
        for row in probs {
            assert!(row.iter().all(|&p| p >= 0.0));
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
        let ml = toy_model::<f32>(Mode::MultiLabel, seed);
        for row in ml.predict_proba(&toy_batch(Mode::MultiLabel, seed, 7)).unwrap() {
            assert!(row.iter().all(|&p| p > 0.0 && p < 1.0));
        }
    }
}

#[test]
fn empty_descriptor_channel_gives_zero_context() {
    let m = toy_model::<f64>(Mode::MultiClass, 2);
    let mut ex = toy_batch(Mode::MultiClass, 2, 2);
    for e in &mut ex {
        e.descriptor_ids = vec![0; 6];
    }
    let batch = m.batch(&ex).unwrap();
    let mut g = Graph::new();
    let f = m.features(&mut g, &batch, None).unwrap();
    let w = m.feature_width();
    for row in g.value(f).rows() {
        assert!(row[2 * w / 3..].iter().all(|&v| v == 0.0));
        assert!(row[..2 * w / 3].iter().any(|&v| v != 0.0));
    }
    let p = m.forward(&mut g, &batch, None).unwrap();
    assert!(g.value(p).all_finite());
}

#[test]
fn sigmoid_head_classes_are_independent() {
    let mut m = toy_model::<f64>(Mode::MultiLabel, 3);
    let ex = toy_batch(Mode::MultiLabel, 3, 4);
    let before = m.predict_proba(&ex).unwrap();
    let w = m.output_layer().weights;
    let (rows, cols) = (m.feature_width(), 3);
    let j = 1;
    for r in 0..rows {
        m.params_mut().get_mut(w).value.data_mut()[r * cols + j] += 0.3;
    }
    let after = m.predict_proba(&ex).unwrap();
    for (b, a) in before.iter().zip(&after) {
        assert_eq!(b[0], a[0]);
        assert_eq!(b[2], a[2]);
        assert_ne!(b[1], a[1]);
    }
}

#[test]
fn forward_without_dropout_is_bit_identical() {
    let m = toy_model::<f32>(Mode::MultiClass, 4);
    let ex = toy_batch(Mode::MultiClass, 4, 5);
    let a = m.predict_proba(&ex).unwrap();
    let b = m.predict_proba(&ex).unwrap();
    assert!(a
        .iter()
        .flatten()
        .zip(b.iter().flatten())
        .all(|(x, y)| x.to_bits() == y.to_bits()));
}

#[test]
fn batch_rejects_wrong_lengths() {
    let m = toy_model::<f32>(Mode::MultiClass, 5);
    let mut ex = toy_batch(Mode::MultiClass, 5, 1);
    ex[0].text_ids.push(0);
    assert!(matches!(m.batch(&ex), Err(Error::Shape { .. })));
}

#[test]
fn decision_rules() {
    assert_eq!(
        decide(Mode::MultiClass, &[0.1, 0.7, 0.2], None).unwrap(),
        BTreeSet::from([1])
    );
    assert_eq!(
        decide(Mode::MultiClass, &[0.4, 0.4, 0.2], None).unwrap(),
        BTreeSet::from([0])
    );
    assert_eq!(
        decide(Mode::MultiLabel, &[0.9, 0.4, 0.6], Some(0.5)).unwrap(),
        BTreeSet::from([0, 2])
    );
    assert!(decide(Mode::MultiLabel, &[0.2, 0.2], Some(0.5)).unwrap().is_empty());
    assert!(decide(Mode::MultiLabel, &[0.2], None).is_err());
    let m = toy_model::<f32>(Mode::MultiLabel, 6);
    assert!(m.predict(&toy_batch(Mode::MultiLabel, 6, 2), None).is_err());
}

fn small_training_setup(
    seed: u64,
    patience: usize,
    epochs: usize,
) -> (DualChannelModel<f32>, Vec<EncodedExample>, Vec<EncodedExample>) {
    let (space, docs) = separable_corpus(seed).unwrap();
    let config = ModelConfig {
        d_embed: 16,
        gru_units: 8,
        text_length: 16,
        descriptor_dimension: 5,
        max_epochs: epochs,
        patience,
        seed,
        learning_rate: 0.01,
        batch_size: 16,
        ..ModelConfig::default()
    };
    let (train, val, _) = crate::corpus::split(&docs, (0.7, 0.2, 0.1), seed).unwrap();
    let vocab = build_vocabulary(&train, config.vocabulary_max).unwrap();
    let desc = extract_descriptors(&train, &vocab, &space, ExtractOptions::new(TestKind::Chi2, 5)).unwrap();
    let enc = |d: &[Document]| encode_corpus(d, &space, &vocab, &desc, &config);
    let (tr, va) = (enc(&train), enc(&val));
    (DualChannelModel::new(config, space, vocab.len()).unwrap(), tr, va)
}

#[test]
fn patience_zero_runs_one_epoch() {
    let (mut m, tr, va) = small_training_setup(1, 0, 5);
    let report = m.train(&tr, &va).unwrap();
    assert_eq!(report.history.len(), 1);
    assert_eq!(report.best_epoch, 1);
}

#[test]
fn training_is_deterministic_and_learns() {
    let run = || {
        let (mut m, tr, va) = small_training_setup(2, 3, 4);
        let report = m.train(&tr, &va).unwrap();
        let ckpt = m.to_checkpoint([1; 32], [2; 32], report.best_epoch as u32, report.best_metric);
        (history_csv(&report.history), ckpt.to_bytes(), report)
    };
    let (h1, c1, report) = run();
    let (h2, c2, _) = run();
    assert_eq!(h1, h2);
    assert_eq!(c1, c2);
    assert!(h1.starts_with("epoch,train_loss,val_metric\n1,"));
    assert!(report.history[0].train_loss < report.first_batch_loss);
    assert!(report.best_metric >= 0.9, "{report:?}");
}

#[test]
fn training_rejects_empty_splits() {
    let (mut m, tr, _) = small_training_setup(3, 1, 1);
    assert!(matches!(m.train(&tr, &[]), Err(Error::NoExamples)));
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let m = toy_model::<f32>(Mode::MultiLabel, 7);
    let ex = toy_batch(Mode::MultiLabel, 7, 5);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    m.save_checkpoint(&path, [3; 32], [4; 32], 2, 0.75).unwrap();
    let ckpt = Checkpoint::load(&path).unwrap();
    assert_eq!((ckpt.epoch, ckpt.val_metric, ckpt.vocab_digest), (2, 0.75, [3; 32]));
    let loaded = DualChannelModel::<f32>::from_checkpoint(&ckpt).unwrap();
    assert_eq!(loaded.config(), m.config());
    assert_eq!(loaded.labels(), m.labels());
    let (a, b) = (m.predict_proba(&ex).unwrap(), loaded.predict_proba(&ex).unwrap());
    assert!(a
        .iter()
        .flatten()
        .zip(b.iter().flatten())
        .all(|(x, y)| x.to_bits() == y.to_bits()));
}

#[test]
fn truncated_or_corrupt_checkpoint_is_rejected() {
    let m = toy_model::<f32>(Mode::MultiClass, 8);
    let bytes = m.to_checkpoint([0; 32], [0; 32], 1, 0.5).to_bytes();
    for cut in [0, 7, 20, bytes.len() / 2, bytes.len() - 1] {
        assert!(Checkpoint::from_bytes(&bytes[..cut]).is_err(), "cut at {cut}");
    }
    let mut flipped = bytes.clone();
    let mid = flipped.len() / 2;
    flipped[mid] ^= 1;
    assert!(matches!(Checkpoint::from_bytes(&flipped), Err(Error::Incompatible(_))));
    let mut future = bytes;
    future[8] = 9;
    let err = Checkpoint::from_bytes(&future).unwrap_err().to_string();
    assert!(err.contains("version 9"), "{err}");
}

#[test]
fn checkpoint_from_other_vocabulary_is_shape_mismatch() {
    let small = toy_model::<f32>(Mode::MultiClass, 9);
    let ckpt = small.to_checkpoint([0; 32], [0; 32], 1, 0.5);
    let labels = LabelSpace::new(["a", "b", "c"], Mode::MultiClass).unwrap();
    let mut bigger = DualChannelModel::<f32>::new(toy_config(Mode::MultiClass, 9), labels, 30).unwrap();
    let err = bigger.load_parameters(&ckpt).unwrap_err();
    assert!(matches!(err, Error::Shape { .. }));
    assert!(err.to_string().contains("embedding.text"), "{err}");
}

#[test]
fn config_text_round_trip_and_unknown_keys() {
    let cfg = ModelConfig {
        mode: Mode::MultiLabel,
        dropout_rate: 0.25,
        descriptor_length: Some(40),
        seed: u64::MAX,
        ..ModelConfig::default()
    };
    let text = cfg.to_text();
    assert_eq!(ModelConfig::from_text(&text).unwrap(), cfg);
    assert_eq!(text.lines().count(), MODEL_KEYS.len());
    for (line, key) in text.lines().zip(MODEL_KEYS) {
        assert!(line.starts_with(&format!("{key} = ")));
    }
    assert!(ModelConfig::from_text("gru_unit = 3")
        .unwrap_err()
        .to_string()
        .contains("unknown key"));
    assert!(ModelConfig::from_text("dropout_rate = 1.0").is_err());
    assert!(ModelConfig::from_text("gru_units = 0").is_err());
    let auto = ModelConfig::from_text("# comment\n\ntext_length = 33\n").unwrap();
    assert_eq!(auto.descriptor_len(), 33);
}

#[test]
fn train_loss_is_finite_under_heavy_dropout() {
    let (mut m, tr, va) = small_training_setup(4, 1, 2);
    let report = m.train(&tr, &va).unwrap();
    assert!(report.history.iter().all(|h| h.train_loss.is_finite()));
}
