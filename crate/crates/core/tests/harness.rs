use proptest::prelude::*;

use sentibert::baselines::{EmbeddingTable, SvmConfig};
use sentibert::data::synth::{embedding_file, generate, SynthConfig};
use sentibert::data::ReviewRecord;
use sentibert::encoder::EncoderConfig;
use sentibert::error::Error;
use sentibert::harness::checkpoint::{Checkpoint, CheckpointMeta, ModelConfig};
use sentibert::harness::matrix::{run_matrix, CellOutcome, MatrixDataset, MatrixSetup, ModelSpec};
use sentibert::harness::metrics::MetricsReport;
use sentibert::harness::train::{evaluate, finetune, logits, predict, TrainConfig};
use sentibert::heads::{classify, FeatureView, HeadKind, HeadSpec};
use sentibert::tokenizer::Vocabulary;

struct Fixture {
    vocab: Vocabulary,
    pretrained: Checkpoint,
    train: Vec<ReviewRecord>,
    test: Vec<ReviewRecord>,
}

fn fixture(layers: usize) -> Fixture {
    let data = generate(60, 11, &SynthConfig::default());
    let vocab = Vocabulary::train(data.iter().map(|r| r.text.as_str()), 150, 1).unwrap();
    let config = ModelConfig {
        encoder: EncoderConfig {
            layers,
            heads: 2,
            hidden: 16,
            ff: 32,
            seq_len: 16,
            vocab_size: vocab.len(),
            dropout: 0.1,
        },
        head: None,
    };
    let pretrained = Checkpoint {
        meta: CheckpointMeta {
            vocab_fingerprint: vocab.fingerprint(),
            seed: 0,
            steps: 0,
        },
        params: config.init_params(0).unwrap(),
        config,
    };
    let (train, test) = data.split_at(40);
    Fixture {
        vocab,
        pretrained,
        train: train.to_vec(),
        test: test.to_vec(),
    }
}

fn head(kind: HeadKind, view: FeatureView) -> HeadSpec {
    HeadSpec {
        ffn_hidden: 8,
        state_size: 4,
        filters: 3,
        ..HeadSpec::new(kind, view)
    }
}

fn quick(seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: 1,
        batch_size: 8,
        seed,
        ..TrainConfig::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn metrics_match_brute_force_counts(pairs in prop::collection::vec((0u8..=1, 0u8..=1), 1..=200)) {
        let gold: Vec<u8> = pairs.iter().map(|p| p.0).collect();
        let pred: Vec<u8> = pairs.iter().map(|p| p.1).collect();
        let count = |g: u8, p: u8| pairs.iter().filter(|&&q| q == (g, p)).count();
        let (tp, fp, fn_, tn) = (count(1, 1), count(0, 1), count(1, 0), count(0, 0));
        let m = MetricsReport::compute("m", "d", &gold, &pred).unwrap();
        prop_assert_eq!((m.tp, m.fp, m.fn_, m.tn), (tp, fp, fn_, tn));
        let p = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
        let r = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
        prop_assert_eq!(m.precision, p);
        prop_assert_eq!(m.recall, r);
        let harmonic = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        prop_assert!((m.f1 - harmonic).abs() < 1e-12);
        if m.precision == m.recall {
            prop_assert!((m.f1 - m.precision).abs() < 1e-12);
        }
    }
}

#[test]
fn metrics_edge_cases() {
    let m = MetricsReport::compute("m", "d", &[0, 0], &[0, 0]).unwrap();
    assert_eq!((m.precision, m.recall, m.f1), (0.0, 0.0, 0.0));
    assert!(matches!(MetricsReport::compute("m", "d", &[], &[]), Err(Error::Validation(_))));
    assert!(matches!(MetricsReport::compute("m", "d", &[1], &[1, 0]), Err(Error::Validation(_))));
    let m = MetricsReport::from_counts("m", "d", 3, 1, 1, 5);
    assert_eq!((m.precision, m.recall, m.f1), (0.75, 0.75, 0.75));
}

#[test]
fn finetuning_is_deterministic_and_persists_exactly() {
    let f = fixture(4);
    let dir = tempfile::tempdir().unwrap();
    for kind in HeadKind::ALL {
        let h = head(kind, FeatureView::Concat4);
        let (a, report) = finetune::<f32>(&f.pretrained, &h, &f.vocab, &f.train, &quick(5)).unwrap();
        let (b, _) = finetune::<f32>(&f.pretrained, &h, &f.vocab, &f.train, &quick(5)).unwrap();
        assert_eq!(a.to_bytes(), b.to_bytes(), "{kind}");
        assert_eq!(report.steps, 5);
        let path = dir.path().join(format!("{kind}.ck"));
        a.save(&path).unwrap();
        let first = std::fs::read(&path).unwrap();
        Checkpoint::load(&path).unwrap().save(&path).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), first, "{kind}");
        let ea = evaluate(&a, &f.vocab, &f.test, "m", "d").unwrap();
        let eb = evaluate(&Checkpoint::load(&path).unwrap(), &f.vocab, &f.test, "m", "d").unwrap();
        assert_eq!(ea, eb);
    }
    let h = head(HeadKind::Lstm, FeatureView::Last);
    let (a, _) = finetune::<f32>(&f.pretrained, &h, &f.vocab, &f.train, &quick(5)).unwrap();
    let (c, _) = finetune::<f32>(&f.pretrained, &h, &f.vocab, &f.train, &quick(6)).unwrap();
    assert_ne!(a.to_bytes(), c.to_bytes());
}

#[test]
fn frozen_encoder_leaves_encoder_tensors_untouched() {
    let f = fixture(4);
    let cfg = TrainConfig {
        frozen_encoder: true,
        ..quick(2)
    };
    let (ck, _) = finetune::<f32>(&f.pretrained, &head(HeadKind::TextCnn, FeatureView::Last), &f.vocab, &f.train, &cfg)
        .unwrap();
    for (name, t) in f.pretrained.params.iter() {
        assert_eq!(ck.params.get(name).unwrap().data(), t.data(), "{name}");
    }
    let (full, _) =
        finetune::<f32>(&f.pretrained, &head(HeadKind::TextCnn, FeatureView::Last), &f.vocab, &f.train, &quick(2))
            .unwrap();
    let moved = f
        .pretrained
        .params
        .iter()
        .any(|(name, t)| full.params.get(name).unwrap().data() != t.data());
    assert!(moved);
}

#[test]
fn predict_is_pure_and_calibrated_to_the_logit() {
    let f = fixture(2);
    let (ck, _) =
        finetune::<f32>(&f.pretrained, &head(HeadKind::ClsFfn, FeatureView::Last), &f.vocab, &f.train, &quick(1))
            .unwrap();
    assert!(predict(&ck, &f.vocab, &[]).unwrap().is_empty());
    let texts = ["quán ngon", "phục vụ chậm", "quán ngon"];
    let rows = predict(&ck, &f.vocab, &texts).unwrap();
    assert_eq!(rows[0], rows[2]);
    assert_eq!(rows, predict(&ck, &f.vocab, &texts).unwrap());
    for ((row, l), text) in rows.iter().zip(logits::<f32>(&ck, &f.vocab, &texts).unwrap()).zip(texts) {
        assert_eq!(row.probability, classify(l).probability);
        assert_eq!(row.text, text);
    }
}

#[test]
fn evaluating_nothing_is_a_validation_error() {
    let f = fixture(2);
    let (ck, _) =
        finetune::<f32>(&f.pretrained, &head(HeadKind::Lstm, FeatureView::Last), &f.vocab, &f.train, &quick(1))
            .unwrap();
    assert!(matches!(evaluate(&ck, &f.vocab, &[], "m", "d"), Err(Error::Validation(_))));
}

#[test]
fn incompatible_head_is_rejected_before_training() {
    let f = fixture(3);
    let h = head(HeadKind::Rcnn, FeatureView::Concat4);
    assert!(matches!(
        finetune::<f32>(&f.pretrained, &h, &f.vocab, &f.train, &quick(0)),
        Err(Error::Validation(_))
    ));
    let other = Vocabulary::train(["khác hẳn"], 40, 1).unwrap();
    assert!(finetune::<f32>(&f.pretrained, &head(HeadKind::Lstm, FeatureView::Last), &other, &f.train, &quick(0)).is_err());
}

#[test]
fn matrix_is_deterministic_and_isolates_failures() {
    let f = fixture(4);
    let tables = vec![("fasttext".to_string(), EmbeddingTable::parse(&embedding_file(8, 1), 8).unwrap())];
    let setup = MatrixSetup {
        vocab: &f.vocab,
        pretrained: &f.pretrained,
        embeddings: &tables,
        head: head(HeadKind::ClsFfn, FeatureView::Last),
        train: quick(0),
        svm: SvmConfig {
            epochs: 5,
            ..SvmConfig::default()
        },
        static_seq_len: 12,
        seed: 3,
    };
    let models = vec![
        ModelSpec::Svm,
        ModelSpec::External("XGBoost".into()),
        ModelSpec::Static {
            source: "fasttext".into(),
            kind: HeadKind::Rcnn,
        },
        ModelSpec::Bert {
            kind: HeadKind::Lstm,
            view: FeatureView::Concat4,
        },
    ];
    let mut broken_test = f.test.clone();
    broken_test[0].label = None;
    let datasets = vec![
        MatrixDataset {
            name: "good".into(),
            train: f.train.clone(),
            test: f.test.clone(),
        },
        MatrixDataset {
            name: "broken".into(),
            train: f.train.clone(),
            test: broken_test,
        },
    ];
    let a = run_matrix(&setup, &models, &datasets);
    let b = run_matrix(&setup, &models, &datasets);
    assert_eq!(a, b);
    assert_eq!(a.tables(), b.tables());
    for m in &models {
        let key = m.key();
        match (m, a.cell(&key, "good").unwrap(), a.cell(&key, "broken").unwrap()) {
            (ModelSpec::External(_), CellOutcome::External(_), CellOutcome::External(_)) => {}
            (_, CellOutcome::Metrics(r), CellOutcome::Failed(_)) => assert_eq!(r.total(), f.test.len()),
            other => panic!("{key}: {other:?}"),
        }
    }
}
