//! The mini-BERT encoder and its masked-language-model objective.
//!
//! Embeddings are token + learned position embeddings followed by layer
//! normalization (there are no segment embeddings: every input is a single
//! review). Each block is post-norm: self-attention, add & norm, GELU
//! feed-forward, add & norm. The MLM output projection is tied to the token
//! embedding matrix.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::harness::checkpoint::{Checkpoint, CheckpointMeta, ModelConfig};
use crate::tensor::{truncated_normal, AdamConfig, AdamState, Bound, ParamStore, Real, Tape, Tensor, Var};
use crate::tokenizer::{EncodedSequence, Vocabulary, MASK_ID, NUM_SPECIAL};

pub const LAYER_NORM_EPS: f64 = 1e-12;
pub const INIT_STD: f64 = 0.02;

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderConfig {
    /// Number of encoder blocks (L).
    pub layers: usize,
    /// Attention heads per block (A).
    pub heads: usize,
    /// Hidden size (h).
    pub hidden: usize,
    /// Feed-forward inner size (f).
    pub ff: usize,
    pub seq_len: usize,
    pub vocab_size: usize,
    pub dropout: f64,
}

impl EncoderConfig {
    /// L=4, A=4, h=64, f=256, SEQ_LEN=128.
    pub fn desk(vocab_size: usize) -> Self {
        EncoderConfig {
            layers: 4,
            heads: 4,
            hidden: 64,
            ff: 256,
            seq_len: 128,
            vocab_size,
            dropout: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers < 1 {
            return Err(Error::config("encoder needs at least one block"));
        }
        if self.heads == 0 || self.hidden == 0 || self.hidden % self.heads != 0 {
            return Err(Error::config(format!(
                "hidden size {} must be a positive multiple of the head count {}",
                self.hidden, self.heads
            )));
        }
        if self.hidden < 2 {
            return Err(Error::config("hidden size must be at least 2"));
        }
        if self.ff < self.hidden {
            return Err(Error::config(format!(
                "feed-forward size {} must be at least the hidden size {}",
                self.ff, self.hidden
            )));
        }
        if self.seq_len < 2 {
            return Err(Error::config("seq_len must be at least 2"));
        }
        if self.vocab_size <= NUM_SPECIAL {
            return Err(Error::config("vocabulary must contain more than the special tokens"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config(format!("dropout {} must be in [0, 1)", self.dropout)));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }
}

/// Inverted dropout with its own random stream.
pub struct Dropout {
    rate: f64,
    rng: ChaCha8Rng,
}

impl Dropout {
    pub fn new(rate: f64, seed: u64) -> Self {
        Dropout {
            rate,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    pub fn apply<'t, T: Real>(&mut self, x: Var<'t, T>) -> Result<Var<'t, T>> {
        if self.rate <= 0.0 {
            return Ok(x);
        }
        let keep = T::from_f64(1.0 / (1.0 - self.rate));
        let n = x.rows() * x.cols();
        let mask = (0..n)
            .map(|_| if self.rng.gen::<f64>() < self.rate { T::zero() } else { keep })
            .collect();
        x.mul_const(mask)
    }
}

fn maybe_dropout<'t, T: Real>(x: Var<'t, T>, dropout: &mut Option<&mut Dropout>) -> Result<Var<'t, T>> {
    match dropout {
        Some(d) => d.apply(x),
        None => Ok(x),
    }
}

fn layer_prefix(i: usize) -> String {
    format!("encoder.layer{i}")
}

/// Registers encoder and MLM parameters in `store`.
pub fn init_params<T: Real, R: Rng>(cfg: &EncoderConfig, store: &mut ParamStore<T>, rng: &mut R) -> Result<()> {
    cfg.validate()?;
    let h = cfg.hidden;
    let mut normal = |shape: Vec<usize>| Tensor::<T>::from_fn(shape, || truncated_normal(rng, INIT_STD));
    store.insert("encoder.embeddings.token", normal(vec![cfg.vocab_size, h]))?;
    store.insert("encoder.embeddings.position", normal(vec![cfg.seq_len, h]))?;
    for i in 0..cfg.layers {
        let p = layer_prefix(i);
        for name in ["q", "k", "v", "o"] {
            store.insert(format!("{p}.attn.{name}.weight"), normal(vec![h, h]))?;
        }
        store.insert(format!("{p}.ffn.in.weight"), normal(vec![h, cfg.ff]))?;
        store.insert(format!("{p}.ffn.out.weight"), normal(vec![cfg.ff, h]))?;
    }
    let ones = |n: usize| Tensor::<T>::from_fn(vec![n], || 1.0);
    store.insert("encoder.embeddings.ln.gain", ones(h))?;
    store.insert("encoder.embeddings.ln.bias", Tensor::zeros(vec![h]))?;
    for i in 0..cfg.layers {
        let p = layer_prefix(i);
        // A key bias shifts every score in a row equally, so softmax cancels it.
        for name in ["q", "v", "o"] {
            store.insert(format!("{p}.attn.{name}.bias"), Tensor::zeros(vec![h]))?;
        }
        store.insert(format!("{p}.attn.ln.gain"), ones(h))?;
        store.insert(format!("{p}.attn.ln.bias"), Tensor::zeros(vec![h]))?;
        store.insert(format!("{p}.ffn.in.bias"), Tensor::zeros(vec![cfg.ff]))?;
        store.insert(format!("{p}.ffn.out.bias"), Tensor::zeros(vec![h]))?;
        store.insert(format!("{p}.ffn.ln.gain"), ones(h))?;
        store.insert(format!("{p}.ffn.ln.bias"), Tensor::zeros(vec![h]))?;
    }
    store.insert("mlm.bias", Tensor::zeros(vec![cfg.vocab_size]))?;
    Ok(())
}

/// Per-layer outputs of the encoder for one sequence.
pub struct HiddenStack<'t, T: Real> {
    /// `layers[0]` is the embedding output, `layers[i]` the output of block i.
    pub layers: Vec<Var<'t, T>>,
    pub attention_mask: Vec<bool>,
    /// Attention probabilities, indexed `[block][head]`, each rows×rows.
    pub attention: Vec<Vec<Var<'t, T>>>,
}

impl<'t, T: Real> HiddenStack<'t, T> {
    pub fn num_blocks(&self) -> usize {
        self.layers.len() - 1
    }

    pub fn last(&self) -> Var<'t, T> {
        *self.layers.last().expect("stack is never empty")
    }

    pub fn real_length(&self) -> usize {
        self.attention_mask.iter().filter(|&&m| m).count()
    }
}

/// Token plus position embeddings, normalized.
pub fn embed<'t, T: Real>(
    params: &Bound<'t, '_, T>,
    cfg: &EncoderConfig,
    ids: &[u32],
    mut dropout: Option<&mut Dropout>,
) -> Result<Var<'t, T>> {
    if ids.is_empty() || ids.len() > cfg.seq_len {
        return Err(Error::validation(format!(
            "sequence length {} must be in 1..={}",
            ids.len(),
            cfg.seq_len
        )));
    }
    if let Some(&bad) = ids.iter().find(|&&i| i as usize >= cfg.vocab_size) {
        return Err(Error::validation(format!(
            "token id {bad} is outside the vocabulary of {}",
            cfg.vocab_size
        )));
    }
    let idx: Vec<usize> = ids.iter().map(|&i| i as usize).collect();
    let positions: Vec<usize> = (0..ids.len()).collect();
    let tok = params.get("encoder.embeddings.token")?.gather_rows(&idx)?;
    let pos = params.get("encoder.embeddings.position")?.gather_rows(&positions)?;
    let x = tok.add(&pos)?.layer_norm(
        &params.get("encoder.embeddings.ln.gain")?,
        &params.get("encoder.embeddings.ln.bias")?,
        T::from_f64(LAYER_NORM_EPS),
    )?;
    maybe_dropout(x, &mut dropout)
}

/// Runs the embeddings and every block over `ids`.
///
/// `mask[i] == false` marks position `i` as padding: no position attends to
/// it, so real positions are unaffected by anything stored there.
pub fn encode_ids<'t, T: Real>(
    params: &Bound<'t, '_, T>,
    cfg: &EncoderConfig,
    ids: &[u32],
    mask: &[bool],
    mut dropout: Option<&mut Dropout>,
) -> Result<HiddenStack<'t, T>> {
    if mask.len() != ids.len() {
        return Err(Error::Shape {
            op: "encode",
            left: vec![ids.len()],
            right: vec![mask.len()],
        });
    }
    let tape = params.tape();
    let eps = T::from_f64(LAYER_NORM_EPS);
    let dh = cfg.head_dim();
    let scale = T::from_f64(1.0 / (dh as f64).sqrt());

    let mut x = embed(params, cfg, ids, dropout.as_deref_mut())?;
    let mut layers = vec![x];
    let mut attention = Vec::with_capacity(cfg.layers);
    for i in 0..cfg.layers {
        let p = layer_prefix(i);
        let w = |n: &str| params.get(&format!("{p}.{n}"));
        let q = x.linear(&w("attn.q.weight")?, &w("attn.q.bias")?)?;
        let k = x.matmul(&w("attn.k.weight")?)?;
        let v = x.linear(&w("attn.v.weight")?, &w("attn.v.bias")?)?;
        let mut contexts = Vec::with_capacity(cfg.heads);
        let mut probs = Vec::with_capacity(cfg.heads);
        for hd in 0..cfg.heads {
            let qh = q.slice_cols(hd * dh, dh)?;
            let kh = k.slice_cols(hd * dh, dh)?;
            let vh = v.slice_cols(hd * dh, dh)?;
            let pr = qh.matmul_t(&kh)?.scale(scale).softmax_rows(Some(mask))?;
            contexts.push(pr.matmul(&vh)?);
            probs.push(pr);
        }
        let ctx = tape.concat_cols(&contexts)?;
        let attn = maybe_dropout(ctx.linear(&w("attn.o.weight")?, &w("attn.o.bias")?)?, &mut dropout)?;
        x = x.add(&attn)?.layer_norm(&w("attn.ln.gain")?, &w("attn.ln.bias")?, eps)?;

        let ff = x
            .linear(&w("ffn.in.weight")?, &w("ffn.in.bias")?)?
            .gelu()
            .linear(&w("ffn.out.weight")?, &w("ffn.out.bias")?)?;
        let ff = maybe_dropout(ff, &mut dropout)?;
        x = x.add(&ff)?.layer_norm(&w("ffn.ln.gain")?, &w("ffn.ln.bias")?, eps)?;

        if x.value().iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite activation in encoder block {i}")));
        }
        layers.push(x);
        attention.push(probs);
    }
    Ok(HiddenStack {
        layers,
        attention_mask: mask.to_vec(),
        attention,
    })
}

/// Encodes a full fixed-length sequence, padding included.
pub fn encode_sequence<'t, T: Real>(
    params: &Bound<'t, '_, T>,
    cfg: &EncoderConfig,
    seq: &EncodedSequence,
    dropout: Option<&mut Dropout>,
) -> Result<HiddenStack<'t, T>> {
    let mask: Vec<bool> = seq.attention_mask.iter().map(|&m| m == 1).collect();
    encode_ids(params, cfg, &seq.ids, &mask, dropout)
}

/// Encodes only the real (non-pad) prefix. Because padding is masked out of
/// attention, the real rows equal those of [`encode_sequence`].
pub fn encode_real<'t, T: Real>(
    params: &Bound<'t, '_, T>,
    cfg: &EncoderConfig,
    seq: &EncodedSequence,
    dropout: Option<&mut Dropout>,
) -> Result<HiddenStack<'t, T>> {
    let ids = seq.real_ids();
    encode_ids(params, cfg, ids, &vec![true; ids.len()], dropout)
}

/// One sequence prepared for masked-LM training.
#[derive(Clone, Debug, PartialEq)]
pub struct MlmExample {
    /// Real (unpadded) ids after masking.
    pub input_ids: Vec<u32>,
    pub positions: Vec<usize>,
    pub targets: Vec<u32>,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct MlmBatch {
    pub examples: Vec<MlmExample>,
}

impl MlmBatch {
    pub fn masked_count(&self) -> usize {
        self.examples.iter().map(|e| e.positions.len()).sum()
    }
}

/// Selects 15% of the non-special positions (at least one when any exist)
/// and corrupts them with the 80/10/10 mask/random/keep recipe.
pub fn mask_sequence<R: Rng>(seq: &EncodedSequence, vocab_size: usize, mask_prob: f64, rng: &mut R) -> MlmExample {
    let ids = seq.real_ids().to_vec();
    let mut eligible: Vec<usize> = (0..ids.len()).filter(|&i| !Vocabulary::is_special(ids[i])).collect();
    if eligible.is_empty() {
        return MlmExample {
            input_ids: ids,
            positions: Vec::new(),
            targets: Vec::new(),
        };
    }
    let count = ((eligible.len() as f64 * mask_prob).round() as usize).clamp(1, eligible.len());
    eligible.shuffle(rng);
    let mut positions: Vec<usize> = eligible[..count].to_vec();
    positions.sort_unstable();
    let mut input_ids = ids.clone();
    let targets = positions.iter().map(|&p| ids[p]).collect();
    for &p in &positions {
        let r: f64 = rng.gen();
        if r < 0.8 {
            input_ids[p] = MASK_ID;
        } else if r < 0.9 {
            input_ids[p] = rng.gen_range(NUM_SPECIAL as u32..vocab_size as u32);
        }
    }
    MlmExample {
        input_ids,
        positions,
        targets,
    }
}

/// Vocabulary logits at the given rows of a hidden matrix.
pub fn mlm_logits<'t, T: Real>(params: &Bound<'t, '_, T>, hidden: Var<'t, T>, positions: &[usize]) -> Result<Var<'t, T>> {
    let rows = hidden.gather_rows(positions)?;
    rows.matmul_t(&params.get("encoder.embeddings.token")?)?
        .add_row(&params.get("mlm.bias")?)
}

/// Summed cross-entropy at the masked positions of one example.
pub fn mlm_loss_sum<'t, T: Real>(
    params: &Bound<'t, '_, T>,
    cfg: &EncoderConfig,
    example: &MlmExample,
    dropout: Option<&mut Dropout>,
) -> Result<Var<'t, T>> {
    if example.positions.is_empty() {
        return Err(Error::contract("example has no masked positions"));
    }
    let stack = encode_ids(params, cfg, &example.input_ids, &vec![true; example.input_ids.len()], dropout)?;
    let logits = mlm_logits(params, stack.last(), &example.positions)?;
    let targets: Vec<usize> = example.targets.iter().map(|&t| t as usize).collect();
    logits.cross_entropy_sum(&targets)
}

/// Mean cross-entropy over every masked position of the batch.
pub fn mlm_loss<'t, T: Real>(
    params: &Bound<'t, '_, T>,
    cfg: &EncoderConfig,
    batch: &MlmBatch,
    mut dropout: Option<&mut Dropout>,
) -> Result<Var<'t, T>> {
    let total = batch.masked_count();
    if total == 0 {
        return Err(Error::contract("MLM batch has no masked positions"));
    }
    let mut parts = Vec::new();
    for ex in batch.examples.iter().filter(|e| !e.positions.is_empty()) {
        parts.push(mlm_loss_sum(params, cfg, ex, dropout.as_deref_mut())?);
    }
    let tape = params.tape();
    Ok(tape.concat_cols(&parts)?.sum().scale(T::one() / T::from_usize(total)))
}

#[derive(Clone, Debug, PartialEq)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub mask_prob: f64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            epochs: 3,
            batch_size: 16,
            learning_rate: 1e-3,
            mask_prob: 0.15,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PretrainReport {
    /// Mean masked-LM loss of every optimizer step, in order.
    pub step_losses: Vec<f64>,
    pub epoch_losses: Vec<f64>,
}

/// Derives independent random streams from one run seed.
pub fn sub_seed(seed: u64, stream: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(stream.wrapping_mul(0xBF58_476D_1CE4_E5B9))
}

/// Masked-LM pretraining from a fresh initialization.
pub fn pretrain<T: Real, S: AsRef<str>>(
    corpus: &[S],
    vocab: &Vocabulary,
    cfg: &EncoderConfig,
    hyper: &PretrainConfig,
    seed: u64,
) -> Result<(Checkpoint, PretrainReport)> {
    cfg.validate()?;
    if cfg.vocab_size != vocab.len() {
        return Err(Error::config(format!(
            "encoder vocabulary size {} does not match the tokenizer's {}",
            cfg.vocab_size,
            vocab.len()
        )));
    }
    let sequences: Vec<EncodedSequence> = corpus
        .iter()
        .map(|t| vocab.encode(t.as_ref(), cfg.seq_len))
        .collect::<Result<_>>()?;
    let usable: Vec<&EncodedSequence> = sequences
        .iter()
        .filter(|s| s.real_ids().iter().any(|&i| !Vocabulary::is_special(i)))
        .collect();
    if hyper.batch_size == 0 || usable.len() < hyper.batch_size {
        return Err(Error::validation(format!(
            "corpus has {} usable sequences, fewer than one batch of {}",
            usable.len(),
            hyper.batch_size
        )));
    }

    let mut params = ParamStore::<T>::new();
    init_params(cfg, &mut params, &mut ChaCha8Rng::seed_from_u64(sub_seed(seed, 0)))?;
    let mut adam = AdamState::for_trainable(&params, AdamConfig::with_learning_rate(hyper.learning_rate));
    let mut order_rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, 1));
    let mut mask_rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, 2));
    let mut dropout = Dropout::new(cfg.dropout, sub_seed(seed, 3));
    let mut report = PretrainReport::default();

    let mut order: Vec<usize> = (0..usable.len()).collect();
    for epoch in 0..hyper.epochs {
        order.shuffle(&mut order_rng);
        let mut epoch_sum = 0.0;
        let mut epoch_steps = 0;
        for chunk in order.chunks(hyper.batch_size) {
            let batch = MlmBatch {
                examples: chunk
                    .iter()
                    .map(|&i| mask_sequence(usable[i], cfg.vocab_size, hyper.mask_prob, &mut mask_rng))
                    .collect(),
            };
            let total = T::from_usize(batch.masked_count());
            params.zero_grad();
            let mut loss_sum = 0.0;
            for ex in &batch.examples {
                let grads = {
                    let tape = Tape::new();
                    let bound = Bound::new(&tape, &params);
                    let loss = mlm_loss_sum(&bound, cfg, ex, Some(&mut dropout))?.scale(T::one() / total);
                    loss_sum += loss.item().as_f64();
                    loss.backward()?;
                    bound.into_grads()
                };
                params.accumulate(grads);
            }
            adam.step(&mut params)?;
            report.step_losses.push(loss_sum);
            epoch_sum += loss_sum;
            epoch_steps += 1;
        }
        let mean = epoch_sum / epoch_steps as f64;
        log::info!("pretrain epoch {} mlm loss {:.4}", epoch + 1, mean);
        report.epoch_losses.push(mean);
    }

    let checkpoint = Checkpoint {
        config: ModelConfig {
            encoder: cfg.clone(),
            head: None,
        },
        meta: CheckpointMeta {
            vocab_fingerprint: vocab.fingerprint(),
            seed,
            steps: adam.step_count(),
        },
        params: params.cast(),
    };
    Ok((checkpoint, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> EncoderConfig {
        EncoderConfig {
            layers: 2,
            heads: 2,
            hidden: 8,
            ff: 16,
            seq_len: 10,
            vocab_size: 20,
            dropout: 0.0,
        }
    }

    fn params(cfg: &EncoderConfig, seed: u64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        init_params(cfg, &mut s, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        s
    }

    fn seq(ids: &[u32], len: usize) -> EncodedSequence {
        let mut v = ids.to_vec();
        v.resize(len, 0);
        EncodedSequence::from_ids(v).unwrap()
    }

    #[test]
    fn config_validation() {
        let mut c = tiny();
        assert!(c.validate().is_ok());
        c.heads = 3;
        assert!(c.validate().is_err());
        let mut c = tiny();
        c.ff = 4;
        assert!(c.validate().is_err());
        let mut c = tiny();
        c.layers = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn stack_shapes() {
        let cfg = tiny();
        let p = params(&cfg, 1);
        let tape = Tape::new();
        let b = Bound::new(&tape, &p);
        let s = encode_sequence(&b, &cfg, &seq(&[2, 7, 9, 3], 10), None).unwrap();
        assert_eq!(s.layers.len(), cfg.layers + 1);
        for l in &s.layers {
            assert_eq!(l.shape(), (10, 8));
        }
    }

    #[test]
    fn attention_rows_are_distributions_over_real_columns() {
        let cfg = tiny();
        let p = params(&cfg, 2);
        let tape = Tape::new();
        let b = Bound::new(&tape, &p);
        let s = encode_sequence(&b, &cfg, &seq(&[2, 7, 9, 3], 10), None).unwrap();
        for block in &s.attention {
            for head in block {
                let v = head.value();
                for row in v.chunks(10) {
                    assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                    assert!(row[4..].iter().all(|&x| x == 0.0));
                }
            }
        }
    }

    #[test]
    fn out_of_range_id_is_rejected() {
        let cfg = tiny();
        let p = params(&cfg, 1);
        let tape = Tape::new();
        let b = Bound::new(&tape, &p);
        assert!(matches!(
            embed(&b, &cfg, &[2, 25, 3], None),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn pad_token_content_does_not_leak() {
        let cfg = tiny();
        let p = params(&cfg, 3);
        let tape = Tape::new();
        let b = Bound::new(&tape, &p);
        let mask: Vec<bool> = (0..10).map(|i| i < 4).collect();
        let a = encode_ids(&b, &cfg, &[2, 7, 9, 3, 0, 0, 0, 0, 0, 0], &mask, None).unwrap();
        let c = encode_ids(&b, &cfg, &[2, 7, 9, 3, 0, 11, 0, 0, 0, 0], &mask, None).unwrap();
        let (va, vc) = (a.last().value(), c.last().value());
        let diff = va[..4 * 8]
            .iter()
            .zip(&vc[..4 * 8])
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        assert!(diff < 1e-6);
    }

    #[test]
    fn embeddings_identical_except_at_pad_row() {
        let cfg = tiny();
        let p = params(&cfg, 4);
        let tape = Tape::new();
        let b = Bound::new(&tape, &p);
        let a = embed(&b, &cfg, &[2, 7, 3, 0], None).unwrap().value();
        let c = embed(&b, &cfg, &[2, 7, 3, 12], None).unwrap().value();
        assert_eq!(a[..24], c[..24]);
    }

    #[test]
    fn zero_embeddings_give_bias_rows() {
        let cfg = tiny();
        let mut p = params(&cfg, 4);
        for name in ["encoder.embeddings.token", "encoder.embeddings.position"] {
            p.get_mut(name).unwrap().data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let tape = Tape::new();
        let b = Bound::new(&tape, &p);
        let e = embed(&b, &cfg, &[2, 7, 3], None).unwrap().value();
        assert!(e.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn bidirectional_attention_reaches_cls() {
        let cfg = tiny();
        let p = params(&cfg, 5);
        let tape = Tape::new();
        let b = Bound::new(&tape, &p);
        let a = encode_real(&b, &cfg, &seq(&[2, 7, 9, 3], 10), None).unwrap();
        let c = encode_real(&b, &cfg, &seq(&[2, 7, 15, 3], 10), None).unwrap();
        let diff = a.last().value()[..8]
            .iter()
            .zip(&c.last().value()[..8])
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        assert!(diff > 1e-9);
    }

    #[test]
    fn mask_sequence_only_touches_content() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let s = seq(&[2, 7, 8, 9, 10, 11, 12, 13, 3], 10);
        for _ in 0..50 {
            let ex = mask_sequence(&s, 20, 0.15, &mut rng);
            assert!(!ex.positions.is_empty());
            for &p in &ex.positions {
                assert!(p > 0 && p < 8);
            }
            assert_eq!(ex.input_ids.len(), 9);
        }
        let empty = mask_sequence(&seq(&[2, 3], 10), 20, 0.15, &mut rng);
        assert!(empty.positions.is_empty());
    }

    #[test]
    fn mlm_loss_of_uniform_model_is_log_vocab() {
        let cfg = tiny();
        let mut p = params(&cfg, 6);
        p.get_mut("encoder.embeddings.token")
            .unwrap()
            .data_mut()
            .iter_mut()
            .for_each(|v| *v = 0.0);
        let tape = Tape::new();
        let b = Bound::new(&tape, &p);
        let batch = MlmBatch {
            examples: vec![MlmExample {
                input_ids: vec![2, 4, 9, 3],
                positions: vec![1],
                targets: vec![8],
            }],
        };
        let l = mlm_loss(&b, &cfg, &batch, None).unwrap().item();
        assert!((l - (20f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn mlm_loss_ignores_unmasked_predictions() {
        let cfg = tiny();
        let p = params(&cfg, 7);
        let tape = Tape::new();
        let b = Bound::new(&tape, &p);
        let ex = |targets: Vec<u32>| MlmBatch {
            examples: vec![MlmExample {
                input_ids: vec![2, 4, 9, 3],
                positions: vec![1],
                targets,
            }],
        };
        let a = mlm_loss(&b, &cfg, &ex(vec![8]), None).unwrap().item();
        // same masked target, different unmasked content elsewhere is not a target
        let c = mlm_loss(&b, &cfg, &ex(vec![8]), None).unwrap().item();
        assert_eq!(a, c);
        let empty = MlmBatch {
            examples: vec![MlmExample {
                input_ids: vec![2, 3],
                positions: vec![],
                targets: vec![],
            }],
        };
        assert!(matches!(mlm_loss(&b, &cfg, &empty, None), Err(Error::Contract(_))));
    }
}
