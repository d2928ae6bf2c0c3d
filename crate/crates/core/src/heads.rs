//! Classification heads over a token-feature matrix.
//!
//! Every head maps a `rows × d` feature matrix plus the number of real rows
//! `n` to a single logit. The same heads serve contextual (encoder) features
//! and static word embeddings.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::encoder::{EncoderConfig, HiddenStack};
use crate::error::{Error, Result};
use crate::tensor::{Bound, ParamStore, Real, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum HeadKind {
    /// Feed-forward network over the `[CLS]` row.
    ClsFfn,
    Lstm,
    TextCnn,
    Rcnn,
}

impl HeadKind {
    pub const ALL: [HeadKind; 4] = [HeadKind::ClsFfn, HeadKind::Lstm, HeadKind::TextCnn, HeadKind::Rcnn];

    pub fn as_str(self) -> &'static str {
        match self {
            HeadKind::ClsFfn => "cls_ffn",
            HeadKind::Lstm => "lstm",
            HeadKind::TextCnn => "textcnn",
            HeadKind::Rcnn => "rcnn",
        }
    }
}

impl fmt::Display for HeadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for HeadKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        HeadKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::config(format!("unknown head {s:?} (expected cls_ffn, lstm, textcnn or rcnn)")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FeatureView {
    /// Output of the final block.
    Last,
    /// Outputs of the last four blocks, concatenated along features.
    Concat4,
}

impl FeatureView {
    pub fn as_str(self) -> &'static str {
        match self {
            FeatureView::Last => "last",
            FeatureView::Concat4 => "concat4",
        }
    }

    pub fn width(self, hidden: usize) -> usize {
        match self {
            FeatureView::Last => hidden,
            FeatureView::Concat4 => 4 * hidden,
        }
    }
}

impl FromStr for FeatureView {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "last" => Ok(FeatureView::Last),
            "concat4" => Ok(FeatureView::Concat4),
            _ => Err(Error::config(format!("unknown feature view {s:?} (expected last or concat4)"))),
        }
    }
}

/// Selects the rows × d feature matrix a head consumes.
pub fn feature_view<'t, T: Real>(stack: &HiddenStack<'t, T>, view: FeatureView) -> Result<Var<'t, T>> {
    match view {
        FeatureView::Last => Ok(stack.last()),
        FeatureView::Concat4 => {
            if stack.num_blocks() < 4 {
                return Err(Error::config(format!(
                    "concat4 needs at least 4 encoder blocks, model has {}",
                    stack.num_blocks()
                )));
            }
            let n = stack.layers.len();
            stack.last().tape().concat_cols(&stack.layers[n - 4..])
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeadSpec {
    pub kind: HeadKind,
    pub view: FeatureView,
    /// Hidden width of the `[CLS]` feed-forward layer.
    pub ffn_hidden: usize,
    /// LSTM state size (per direction for RCNN).
    pub state_size: usize,
    /// Filters per region size (TextCNN) or in total (RCNN).
    pub filters: usize,
    pub regions: Vec<usize>,
    /// RCNN convolution width in tokens.
    pub conv_width: usize,
}

impl HeadSpec {
    pub fn new(kind: HeadKind, view: FeatureView) -> Self {
        HeadSpec {
            kind,
            view,
            ffn_hidden: 64,
            state_size: 32,
            filters: 32,
            regions: vec![2, 3, 4, 5],
            conv_width: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("ffn_hidden", self.ffn_hidden),
            ("state_size", self.state_size),
            ("filters", self.filters),
            ("conv_width", self.conv_width),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::config(format!("head {name} must be positive")));
        }
        if self.kind == HeadKind::TextCnn && (self.regions.is_empty() || self.regions.contains(&0)) {
            return Err(Error::config("TextCNN region sizes must be non-empty and positive"));
        }
        Ok(())
    }

    /// Checks this head against the encoder it will sit on.
    pub fn check_compatible(&self, encoder: &EncoderConfig) -> Result<()> {
        self.validate()?;
        if self.view == FeatureView::Concat4 && encoder.layers < 4 {
            return Err(Error::validation(format!(
                "concat4 feature view needs at least 4 encoder blocks, encoder has {}",
                encoder.layers
            )));
        }
        if self.kind == HeadKind::TextCnn {
            if let Some(&r) = self.regions.iter().find(|&&r| r > encoder.seq_len) {
                return Err(Error::validation(format!(
                    "TextCNN region size {r} exceeds seq_len {}",
                    encoder.seq_len
                )));
            }
        }
        Ok(())
    }

    /// Registers `head.*` parameters for input feature width `d`.
    pub fn init_params<T: Real, R: Rng>(&self, d: usize, store: &mut ParamStore<T>, rng: &mut R) -> Result<()> {
        self.validate()?;
        let mut uniform = |shape: Vec<usize>, fan_in: usize| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            Tensor::<T>::from_fn(shape, || rng.gen_range(-bound..bound))
        };
        match self.kind {
            HeadKind::ClsFfn => {
                store.insert("head.ffn.weight", uniform(vec![d, self.ffn_hidden], d))?;
                store.insert("head.ffn.bias", Tensor::zeros(vec![self.ffn_hidden]))?;
                store.insert("head.out.weight", uniform(vec![self.ffn_hidden, 1], self.ffn_hidden))?;
            }
            HeadKind::Lstm => {
                insert_lstm(store, "head.lstm", d, self.state_size, &mut uniform)?;
                store.insert("head.out.weight", uniform(vec![self.state_size, 1], self.state_size))?;
            }
            HeadKind::TextCnn => {
                for &r in &self.regions {
                    store.insert(format!("head.conv{r}.weight"), uniform(vec![r * d, self.filters], r * d))?;
                    store.insert(format!("head.conv{r}.bias"), Tensor::zeros(vec![self.filters]))?;
                }
                let pooled = self.regions.len() * self.filters;
                store.insert("head.out.weight", uniform(vec![pooled, 1], pooled))?;
            }
            HeadKind::Rcnn => {
                let s = self.state_size;
                insert_lstm(store, "head.fwd", d, s, &mut uniform)?;
                insert_lstm(store, "head.bwd", d, s, &mut uniform)?;
                let width = self.conv_width * (2 * s + d);
                store.insert("head.conv.weight", uniform(vec![width, self.filters], width))?;
                store.insert("head.conv.bias", Tensor::zeros(vec![self.filters]))?;
                store.insert("head.out.weight", uniform(vec![self.filters, 1], self.filters))?;
            }
        }
        store.insert("head.out.bias", Tensor::zeros(vec![1]))?;
        Ok(())
    }

    /// Logit for one example; only the first `real_len` rows of `features`
    /// are read.
    pub fn logit<'t, T: Real>(
        &self,
        params: &Bound<'t, '_, T>,
        features: Var<'t, T>,
        real_len: usize,
    ) -> Result<Var<'t, T>> {
        if real_len == 0 || real_len > features.rows() {
            return Err(Error::validation(format!(
                "real length {real_len} must be in 1..={}",
                features.rows()
            )));
        }
        let out = |x: Var<'t, T>| x.linear(&params.get("head.out.weight")?, &params.get("head.out.bias")?);
        match self.kind {
            HeadKind::ClsFfn => {
                let cls = features.slice_rows(0, 1)?;
                out(cls
                    .linear(&params.get("head.ffn.weight")?, &params.get("head.ffn.bias")?)?
                    .tanh())
            }
            HeadKind::Lstm => {
                let states = lstm_states(params, "head.lstm", features, real_len, false)?;
                out(*states.last().expect("real_len >= 1"))
            }
            HeadKind::TextCnn => {
                let x = features.slice_rows(0, real_len)?;
                let mut pooled = Vec::with_capacity(self.regions.len());
                for &r in &self.regions {
                    let starts = window_starts(real_len, r);
                    let conv = x
                        .unfold(r, &starts)?
                        .linear(
                            &params.get(&format!("head.conv{r}.weight"))?,
                            &params.get(&format!("head.conv{r}.bias"))?,
                        )?
                        .relu();
                    pooled.push(conv.max_rows(starts.len())?);
                }
                out(params.tape().concat_cols(&pooled)?)
            }
            HeadKind::Rcnn => {
                let tape = params.tape();
                let fwd = lstm_states(params, "head.fwd", features, real_len, false)?;
                let bwd = lstm_states(params, "head.bwd", features, real_len, true)?;
                let x = features.slice_rows(0, real_len)?;
                let joined = tape.concat_cols(&[tape.concat_rows(&fwd)?, x, tape.concat_rows(&bwd)?])?;
                let starts = window_starts(real_len, self.conv_width);
                let conv = joined
                    .unfold(self.conv_width, &starts)?
                    .linear(&params.get("head.conv.weight")?, &params.get("head.conv.bias")?)?
                    .relu();
                out(conv.max_rows(starts.len())?)
            }
        }
    }
}

fn insert_lstm<T: Real>(
    store: &mut ParamStore<T>,
    prefix: &str,
    d: usize,
    s: usize,
    uniform: &mut impl FnMut(Vec<usize>, usize) -> Tensor<T>,
) -> Result<()> {
    store.insert(format!("{prefix}.input.weight"), uniform(vec![d, 4 * s], s))?;
    store.insert(format!("{prefix}.state.weight"), uniform(vec![s, 4 * s], s))?;
    // Gate order is input, forget, cell, output; the forget gate starts open.
    let mut bias = vec![T::zero(); 4 * s];
    bias[s..2 * s].iter_mut().for_each(|b| *b = T::one());
    store.insert(format!("{prefix}.bias"), Tensor::new(vec![4 * s], bias)?)?;
    Ok(())
}

/// Hidden states of an LSTM over the first `n` rows of `x`, in row order.
/// With `reverse` the recurrence runs from row `n-1` down to row 0.
pub fn lstm_states<'t, T: Real>(
    params: &Bound<'t, '_, T>,
    prefix: &str,
    x: Var<'t, T>,
    n: usize,
    reverse: bool,
) -> Result<Vec<Var<'t, T>>> {
    let wx = params.get(&format!("{prefix}.input.weight"))?;
    let wh = params.get(&format!("{prefix}.state.weight"))?;
    let b = params.get(&format!("{prefix}.bias"))?;
    let s = wh.rows();
    let projected = x.slice_rows(0, n)?.matmul(&wx)?.add_row(&b)?;
    let mut states: Vec<Option<Var<'t, T>>> = vec![None; n];
    let mut carry: Option<(Var<'t, T>, Var<'t, T>)> = None;
    let order: Vec<usize> = if reverse { (0..n).rev().collect() } else { (0..n).collect() };
    for t in order {
        let mut gates = projected.slice_rows(t, 1)?;
        if let Some((h, _)) = carry {
            gates = gates.add(&h.matmul(&wh)?)?;
        }
        let i = gates.slice_cols(0, s)?.sigmoid();
        let f = gates.slice_cols(s, s)?.sigmoid();
        let g = gates.slice_cols(2 * s, s)?.tanh();
        let o = gates.slice_cols(3 * s, s)?.sigmoid();
        let mut c = i.mul(&g)?;
        if let Some((_, c_prev)) = carry {
            c = c.add(&f.mul(&c_prev)?)?;
        }
        let h = o.mul(&c.tanh())?;
        states[t] = Some(h);
        carry = Some((h, c));
    }
    Ok(states.into_iter().map(|s| s.expect("every step visited")).collect())
}

/// Window start offsets for width `r` over `n` rows. When the sequence is
/// shorter than the window, every row starts one (zero-padded) window.
pub fn window_starts(n: usize, r: usize) -> Vec<usize> {
    if n >= r {
        (0..=n - r).collect()
    } else {
        (0..n).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Prediction {
    pub label: u8,
    pub probability: f64,
}

/// Thresholds the positive-class probability at 0.5.
pub fn classify(logit: f64) -> Prediction {
    let probability = if logit >= 0.0 {
        1.0 / (1.0 + (-logit).exp())
    } else {
        let e = logit.exp();
        e / (1.0 + e)
    };
    Prediction {
        label: u8::from(probability >= 0.5),
        probability,
    }
}
