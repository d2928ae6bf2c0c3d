//! Finite-difference checks of the assembled models.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::checkpoint::ModelConfig;
use crate::encoder::{self, encode_sequence, EncoderConfig, MlmExample};
use crate::error::Result;
use crate::heads::{feature_view, FeatureView, HeadKind, HeadSpec};
use crate::tensor::{grad_check, Bound, GradCheckReport, Objective, ParamStore, Precision, Real, Tape, Var};
use crate::tokenizer::{EncodedSequence, CLS_ID, NUM_SPECIAL, SEP_ID};

/// Logistic loss of one padded sequence through encoder and head.
pub struct ClassifierObjective {
    pub config: ModelConfig,
    pub seq: EncodedSequence,
    pub label: u8,
}

impl Objective for ClassifierObjective {
    fn loss<'t, T: Real>(&self, _tape: &'t Tape<T>, params: &Bound<'t, '_, T>) -> Result<Var<'t, T>> {
        let head = self.config.head.as_ref().expect("classifier objective needs a head");
        let stack = encode_sequence(params, &self.config.encoder, &self.seq, None)?;
        let features = feature_view(&stack, head.view)?;
        head.logit(params, features, self.seq.real_length())?.logistic_loss(self.label)
    }
}

/// Masked-LM loss of one example.
pub struct MlmObjective {
    pub encoder: EncoderConfig,
    pub example: MlmExample,
}

impl Objective for MlmObjective {
    fn loss<'t, T: Real>(&self, _tape: &'t Tape<T>, params: &Bound<'t, '_, T>) -> Result<Var<'t, T>> {
        encoder::mlm_loss_sum(params, &self.encoder, &self.example, None)
    }
}

/// L=2, A=2, h=16, SEQ_LEN=16 (L=4 when `layers4` so concat4 is valid).
pub fn small_encoder(vocab_size: usize, layers: usize) -> EncoderConfig {
    EncoderConfig {
        layers,
        heads: 2,
        hidden: 16,
        ff: 32,
        seq_len: 16,
        vocab_size,
        dropout: 0.0,
    }
}

/// Small head sizes that keep the check fast.
pub fn small_head(kind: HeadKind, view: FeatureView) -> HeadSpec {
    HeadSpec {
        ffn_hidden: 8,
        state_size: 4,
        filters: 3,
        ..HeadSpec::new(kind, view)
    }
}

/// A random padded sequence with `real` positions.
pub fn random_sequence<R: Rng>(rng: &mut R, vocab_size: usize, real: usize, seq_len: usize) -> Result<EncodedSequence> {
    let mut ids = vec![CLS_ID];
    ids.extend((0..real - 2).map(|_| rng.gen_range(NUM_SPECIAL as u32..vocab_size as u32)));
    ids.push(SEP_ID);
    ids.resize(seq_len, 0);
    EncodedSequence::from_ids(ids)
}

/// Encoder weights and embeddings are multiplied by this at the check point.
pub const CHECK_WEIGHT_SCALE: f64 = 10.0;

/// Initial parameters in 64-bit at the check point: encoder weights and
/// embeddings scaled by [`CHECK_WEIGHT_SCALE`], every bias and layer-norm
/// parameter jittered so no gradient is structurally zero.
///
/// At std 0.02 the layer-norm inputs are tiny and the central difference is
/// dominated by truncation error.
pub fn check_params(config: &ModelConfig, seed: u64) -> Result<ParamStore<f64>> {
    let mut params: ParamStore<f64> = config.init_params(seed)?.cast();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED);
    for id in 0..params.len() {
        let name = params.name(id);
        let scaled = name.starts_with("encoder.") && (name.ends_with(".weight") || name.ends_with(".token") || name.ends_with(".position"));
        let jitter = name.ends_with(".bias") || name.ends_with(".gain");
        if scaled {
            for v in params.tensor_mut(id).data_mut() {
                *v *= CHECK_WEIGHT_SCALE;
            }
        }
        if jitter {
            for v in params.tensor_mut(id).data_mut() {
                *v += rng.gen_range(-0.1..0.1);
            }
        }
    }
    Ok(params)
}

#[derive(Clone, Debug)]
pub struct CaseResult {
    pub name: String,
    pub report: GradCheckReport,
}

/// Every head with every valid view, plus the MLM objective.
pub fn full_model_check(
    precision: Precision,
    eps: f64,
    max_per_tensor: Option<usize>,
    seed: u64,
) -> Result<Vec<CaseResult>> {
    let vocab_size = 24;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for kind in HeadKind::ALL {
        for view in [FeatureView::Last, FeatureView::Concat4] {
            let layers = if view == FeatureView::Concat4 { 4 } else { 2 };
            let config = ModelConfig {
                encoder: small_encoder(vocab_size, layers),
                head: Some(small_head(kind, view)),
            };
            let params = check_params(&config, seed)?;
            let real = rng.gen_range(6..=12);
            let objective = ClassifierObjective {
                config,
                seq: random_sequence(&mut rng, vocab_size, real, 16)?,
                label: rng.gen_range(0..=1),
            };
            let report = grad_check(&objective, &params, precision, eps, max_per_tensor, seed)?;
            out.push(CaseResult {
                name: format!("{kind}/{}", view.as_str()),
                report,
            });
        }
    }
    let encoder = small_encoder(vocab_size, 2);
    let config = ModelConfig {
        encoder: encoder.clone(),
        head: None,
    };
    let params = check_params(&config, seed)?;
    let seq = random_sequence(&mut rng, vocab_size, 10, 16)?;
    let example = encoder::mask_sequence(&seq, vocab_size, 0.3, &mut rng);
    let report = grad_check(&MlmObjective { encoder, example }, &params, precision, eps, max_per_tensor, seed)?;
    out.push(CaseResult {
        name: "mlm".into(),
        report,
    });
    Ok(out)
}
