//! Fine-tuning, head-only training, evaluation and prediction.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::{Checkpoint, CheckpointMeta, ModelConfig};
use super::metrics::MetricsReport;
use crate::baselines::{static_embed_sequence, EmbeddingTable};
use crate::data::{gold_labels, Label, ReviewRecord};
use crate::encoder::{encode_real, sub_seed, Dropout, EncoderConfig};
use crate::error::{Error, Result};
use crate::heads::{classify, feature_view, HeadSpec};
use crate::tensor::{AdamConfig, AdamState, Bound, ParamStore, Real, Tape, Var};
use crate::tokenizer::{EncodedSequence, Vocabulary};

const STREAM_HEAD_INIT: u64 = 10;
const STREAM_ORDER: u64 = 11;
const STREAM_DROPOUT: u64 = 12;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Feature extraction: only the head trains.
    pub frozen_encoder: bool,
    /// Stop once training accuracy (measured without dropout after an
    /// epoch) reaches this value. Off by default.
    pub stop_at_train_accuracy: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 16,
            epochs: 3,
            seed: 0,
            frozen_encoder: false,
            stop_at_train_accuracy: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    pub epoch_losses: Vec<f64>,
    pub steps: u64,
    /// Training accuracy after the last epoch, when it was measured.
    pub train_accuracy: Option<f64>,
}

/// Logit of one encoded sequence. Only real positions are run through the
/// encoder; masking makes this identical to running the padded sequence.
pub fn sequence_logit<'t, T: Real>(
    params: &Bound<'t, '_, T>,
    config: &ModelConfig,
    seq: &EncodedSequence,
    dropout: Option<&mut Dropout>,
) -> Result<Var<'t, T>> {
    let head = head_of(config)?;
    let stack = encode_real(params, &config.encoder, seq, dropout)?;
    let features = feature_view(&stack, head.view)?;
    head.logit(params, features, seq.real_length())
}

fn head_of(config: &ModelConfig) -> Result<&HeadSpec> {
    config
        .head
        .as_ref()
        .ok_or_else(|| Error::validation("checkpoint has no classification head"))
}

/// A precomputed `rows × cols` feature matrix whose first `real_len` rows
/// are real.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureExample<T> {
    pub values: Vec<T>,
    pub rows: usize,
    pub cols: usize,
    pub real_len: usize,
}

/// Feature-view values of the frozen encoder (no dropout) for one sequence.
pub fn extract_features<T: Real>(
    params: &ParamStore<T>,
    encoder: &EncoderConfig,
    head: &HeadSpec,
    seq: &EncodedSequence,
) -> Result<FeatureExample<T>> {
    let tape = Tape::new();
    let bound = Bound::new(&tape, params);
    let stack = encode_real(&bound, encoder, seq, None)?;
    let f = feature_view(&stack, head.view)?;
    Ok(FeatureExample {
        values: f.value(),
        rows: f.rows(),
        cols: f.cols(),
        real_len: seq.real_length(),
    })
}

/// Fresh head parameters for feature width `d`, drawn from the run seed.
pub fn init_head<T: Real>(head: &HeadSpec, d: usize, seed: u64) -> Result<ParamStore<T>> {
    let mut store = ParamStore::new();
    head.init_params(d, &mut store, &mut ChaCha8Rng::seed_from_u64(sub_seed(seed, STREAM_HEAD_INIT)))?;
    Ok(store)
}

fn check_labels(labels: &[u8], examples: usize) -> Result<()> {
    if examples == 0 {
        return Err(Error::validation("training set is empty"));
    }
    if labels.len() != examples {
        return Err(Error::validation(format!("{examples} examples but {} labels", labels.len())));
    }
    Ok(())
}

/// The shared minibatch loop: mean logistic loss per batch, one Adam step
/// per batch. `logit` builds the logit of example `i` on a fresh tape.
fn train_loop<T, F>(
    params: &mut ParamStore<T>,
    labels: &[u8],
    cfg: &TrainConfig,
    mut logit: F,
    mut accuracy: impl FnMut(&ParamStore<T>) -> Result<f64>,
) -> Result<TrainReport>
where
    T: Real,
    F: for<'t, 'p> FnMut(&Bound<'t, 'p, T>, usize) -> Result<Var<'t, T>>,
{
    if cfg.batch_size == 0 {
        return Err(Error::config("batch size must be positive"));
    }
    let mut adam = AdamState::for_trainable(params, AdamConfig::with_learning_rate(cfg.learning_rate));
    let mut order_rng = ChaCha8Rng::seed_from_u64(sub_seed(cfg.seed, STREAM_ORDER));
    let mut order: Vec<usize> = (0..labels.len()).collect();
    let mut report = TrainReport::default();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut order_rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            params.zero_grad();
            let scale = T::one() / T::from_usize(chunk.len());
            for &i in chunk {
                let grads = {
                    let tape = Tape::new();
                    let bound = Bound::new(&tape, params);
                    let loss = logit(&bound, i)?.logistic_loss(labels[i])?.scale(scale);
                    epoch_loss += loss.item().as_f64();
                    loss.backward()?;
                    bound.into_grads()
                };
                params.accumulate(grads);
            }
            adam.step(params)?;
        }
        let batches = labels.len().div_ceil(cfg.batch_size);
        let mean = epoch_loss / batches as f64;
        log::info!("epoch {} loss {:.5}", epoch + 1, mean);
        report.epoch_losses.push(mean);
        if let Some(target) = cfg.stop_at_train_accuracy {
            let acc = accuracy(params)?;
            report.train_accuracy = Some(acc);
            if acc >= target {
                break;
            }
        }
    }
    report.steps = adam.step_count();
    params.clear_grad();
    Ok(report)
}

fn accuracy_of(logits: impl Iterator<Item = Result<f64>>, labels: &[u8]) -> Result<f64> {
    let mut correct = 0;
    for (l, &y) in logits.zip(labels) {
        correct += usize::from(classify(l?).label == y);
    }
    Ok(correct as f64 / labels.len() as f64)
}

fn feature_logit<'t, T: Real>(params: &Bound<'t, '_, T>, head: &HeadSpec, ex: &FeatureExample<T>) -> Result<Var<'t, T>> {
    let x = params.tape().constant(ex.rows, ex.cols, ex.values.clone())?;
    head.logit(params, x, ex.real_len)
}

/// Trains only head parameters on precomputed features.
pub fn train_head_on_features<T: Real>(
    head: &HeadSpec,
    params: &mut ParamStore<T>,
    examples: &[FeatureExample<T>],
    labels: &[u8],
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    check_labels(labels, examples.len())?;
    train_loop(
        params,
        labels,
        cfg,
        |b, i| feature_logit(b, head, &examples[i]),
        |p| accuracy_of(examples.iter().map(|ex| feature_logits(p, head, ex)), labels),
    )
}

/// Logit of a head over fixed features, outside any training tape.
pub fn feature_logits<T: Real>(params: &ParamStore<T>, head: &HeadSpec, ex: &FeatureExample<T>) -> Result<f64> {
    let tape = Tape::new();
    let bound = Bound::new(&tape, params);
    Ok(feature_logit(&bound, head, ex)?.item().as_f64())
}

fn encode_all(vocab: &Vocabulary, records: &[ReviewRecord], seq_len: usize) -> Result<Vec<EncodedSequence>> {
    records.iter().map(|r| vocab.encode(&r.text, seq_len)).collect()
}

fn check_vocab(ck: &Checkpoint, vocab: &Vocabulary) -> Result<()> {
    if ck.meta.vocab_fingerprint != vocab.fingerprint() {
        return Err(Error::validation(
            "tokenizer does not match the one the checkpoint was trained with",
        ));
    }
    if vocab.len() != ck.config.encoder.vocab_size {
        return Err(Error::validation(format!(
            "tokenizer has {} tokens, encoder expects {}",
            vocab.len(),
            ck.config.encoder.vocab_size
        )));
    }
    Ok(())
}

/// Attaches `head` to a pretrained encoder and trains on `train`.
///
/// All encoder and head parameters are updated unless
/// `cfg.frozen_encoder`, in which case encoder features are computed once
/// without dropout and only the head trains on them.
pub fn finetune<T: Real>(
    pretrained: &Checkpoint,
    head: &HeadSpec,
    vocab: &Vocabulary,
    train: &[ReviewRecord],
    cfg: &TrainConfig,
) -> Result<(Checkpoint, TrainReport)> {
    head.check_compatible(&pretrained.config.encoder)?;
    check_vocab(pretrained, vocab)?;
    let labels = gold_labels(train)?;
    check_labels(&labels, train.len())?;
    let config = ModelConfig {
        encoder: pretrained.config.encoder.clone(),
        head: Some(head.clone()),
    };
    let d = head.view.width(config.encoder.hidden);
    let seqs = encode_all(vocab, train, config.encoder.seq_len)?;

    let mut encoder_params: ParamStore<T> = ParamStore::new();
    for (name, t) in pretrained.params.iter().filter(|(n, _)| !n.starts_with("head.")) {
        encoder_params.insert(name, t.cast())?;
    }
    let mut head_params: ParamStore<T> = init_head(head, d, cfg.seed)?;

    let report = if cfg.frozen_encoder {
        let features = seqs
            .iter()
            .map(|s| extract_features(&encoder_params, &config.encoder, head, s))
            .collect::<Result<Vec<_>>>()?;
        train_head_on_features(head, &mut head_params, &features, &labels, cfg)?
    } else {
        let mut params = encoder_params.clone();
        for (name, t) in head_params.iter() {
            params.insert(name, t.clone())?;
        }
        // The MLM output bias plays no part in classification.
        params.set_requires_grad("mlm.", false);
        let mut dropout = Dropout::new(config.encoder.dropout, sub_seed(cfg.seed, STREAM_DROPOUT));
        let report = train_loop(
            &mut params,
            &labels,
            cfg,
            |b, i| sequence_logit(b, &config, &seqs[i], Some(&mut dropout)),
            |p| accuracy_of(seqs.iter().map(|s| logit_of(p, &config, s)), &labels),
        )?;
        params.set_requires_grad("mlm.", true);
        for name in head_params.names().to_vec() {
            let t = params.get(&name).expect("inserted above").clone();
            *head_params.get_mut(&name).expect("same names") = t;
        }
        for name in encoder_params.names().to_vec() {
            let t = params.get(&name).expect("inserted above").clone();
            *encoder_params.get_mut(&name).expect("same names") = t;
        }
        report
    };

    let mut params = ParamStore::new();
    for (name, t) in encoder_params.iter().chain(head_params.iter()) {
        let mut t = t.cast::<f32>();
        t.requires_grad = true;
        params.insert(name, t)?;
    }
    let ck = Checkpoint {
        config,
        meta: CheckpointMeta {
            vocab_fingerprint: pretrained.meta.vocab_fingerprint.clone(),
            seed: cfg.seed,
            steps: report.steps,
        },
        params,
    };
    Ok((ck, report))
}

fn logit_of<T: Real>(params: &ParamStore<T>, config: &ModelConfig, seq: &EncodedSequence) -> Result<f64> {
    let tape = Tape::new();
    let bound = Bound::new(&tape, params);
    Ok(sequence_logit(&bound, config, seq, None)?.item().as_f64())
}

/// Inference logits (no dropout) for a batch of texts, in input order.
pub fn logits<T: Real>(ck: &Checkpoint, vocab: &Vocabulary, texts: &[&str]) -> Result<Vec<f64>> {
    head_of(&ck.config)?;
    check_vocab(ck, vocab)?;
    let params: ParamStore<T> = ck.params.cast();
    texts
        .iter()
        .map(|t| logit_of(&params, &ck.config, &vocab.encode(t, ck.config.encoder.seq_len)?))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub text: String,
    pub label: Label,
    pub probability: f64,
}

pub fn predict(ck: &Checkpoint, vocab: &Vocabulary, texts: &[&str]) -> Result<Vec<PredictionRow>> {
    Ok(logits::<f32>(ck, vocab, texts)?
        .into_iter()
        .zip(texts)
        .map(|(l, t)| {
            let p = classify(l);
            PredictionRow {
                text: t.to_string(),
                label: Label::from_u8(p.label),
                probability: p.probability,
            }
        })
        .collect())
}

pub fn evaluate(
    ck: &Checkpoint,
    vocab: &Vocabulary,
    test: &[ReviewRecord],
    model: &str,
    dataset: &str,
) -> Result<MetricsReport> {
    let gold = gold_labels(test)?;
    let texts: Vec<&str> = test.iter().map(|r| r.text.as_str()).collect();
    let predicted: Vec<u8> = logits::<f32>(ck, vocab, &texts)?
        .into_iter()
        .map(|l| classify(l).label)
        .collect();
    MetricsReport::compute(model, dataset, &gold, &predicted)
}

/// A head trained over static word embeddings.
#[derive(Clone, Debug)]
pub struct StaticClassifier {
    pub head: HeadSpec,
    pub seq_len: usize,
    pub params: ParamStore<f32>,
}

fn static_features(table: &EmbeddingTable, text: &str, seq_len: usize) -> FeatureExample<f32> {
    let s = static_embed_sequence(text, table, seq_len);
    FeatureExample {
        values: s.matrix.iter().map(|&v| v as f32).collect(),
        rows: s.rows,
        cols: s.cols,
        // An all-empty text is read as one zero row.
        real_len: s.real_length().max(1),
    }
}

impl StaticClassifier {
    pub fn train(
        table: &EmbeddingTable,
        head: &HeadSpec,
        seq_len: usize,
        train: &[ReviewRecord],
        cfg: &TrainConfig,
    ) -> Result<(Self, TrainReport)> {
        head.validate()?;
        if head.kind == crate::heads::HeadKind::TextCnn {
            if let Some(&r) = head.regions.iter().find(|&&r| r > seq_len) {
                return Err(Error::validation(format!("TextCNN region size {r} exceeds seq_len {seq_len}")));
            }
        }
        let labels = gold_labels(train)?;
        let features: Vec<_> = train.iter().map(|r| static_features(table, &r.text, seq_len)).collect();
        let mut params = init_head::<f32>(head, table.dim(), cfg.seed)?;
        let report = train_head_on_features(head, &mut params, &features, &labels, cfg)?;
        Ok((
            StaticClassifier {
                head: head.clone(),
                seq_len,
                params,
            },
            report,
        ))
    }

    pub fn logit(&self, table: &EmbeddingTable, text: &str) -> Result<f64> {
        feature_logits(&self.params, &self.head, &static_features(table, text, self.seq_len))
    }
}
