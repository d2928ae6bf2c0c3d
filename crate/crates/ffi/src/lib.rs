//! C ABI over the tokenizer, fine-tuned classifiers, labeling rules and
//! metrics.
//!
//! Every function returns an [`SbStatus`]. On failure the message is kept
//! per thread and read with [`sb_last_error_message`]. Handles are opaque
//! and released with their `_free` function. Panics never cross the
//! boundary; they surface as `SB_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use sentibert::data::{Label, LabelRule};
use sentibert::error::Error;
use sentibert::harness::checkpoint::Checkpoint;
use sentibert::harness::metrics::MetricsReport;
use sentibert::harness::train::predict;
use sentibert::tokenizer::Vocabulary;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SbStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Parse = 4,
    Validation = 5,
    Integrity = 6,
    Version = 7,
    Config = 8,
    Panic = 9,
    Other = 10,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SbRule {
    NtcSv = 0,
    Vreview = 1,
}

/// Positive-class counts and scores.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SbMetrics {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// A loaded subword vocabulary.
pub struct SbVocab {
    inner: Vocabulary,
}

/// A fine-tuned classifier checkpoint.
pub struct SbModel {
    inner: Checkpoint,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(SbStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Io(_) => SbStatus::Io,
            Error::Parse { .. } | Error::Json(_) | Error::Schema(_) => SbStatus::Parse,
            Error::Validation(_) | Error::Contract(_) | Error::Shape { .. } => SbStatus::Validation,
            Error::Integrity(_) => SbStatus::Integrity,
            Error::Version { .. } => SbStatus::Version,
            Error::Config(_) => SbStatus::Config,
            _ => SbStatus::Other,
        };
        Failure(status, e.to_string())
    }
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(body: impl FnOnce() -> Result<(), Failure>) -> SbStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            SbStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            SbStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(SbStatus::NullArgument, format!("{what} is null"))
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(SbStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sb_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL. Valid until the
/// next call into the library on the same thread.
#[no_mangle]
pub extern "C" fn sb_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// # Safety
/// `path` must be a NUL-terminated string and `out_vocab` writable.
#[no_mangle]
pub unsafe extern "C" fn sb_vocab_load(path: *const c_char, out_vocab: *mut *mut SbVocab) -> SbStatus {
    guard(|| {
        let slot = out(out_vocab, "out_vocab")?;
        let inner = Vocabulary::load(Path::new(text(path, "path")?))?;
        *slot = Box::into_raw(Box::new(SbVocab { inner }));
        Ok(())
    })
}

/// # Safety
/// `vocab` must come from `sb_vocab_load` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sb_vocab_free(vocab: *mut SbVocab) {
    if !vocab.is_null() {
        drop(Box::from_raw(vocab));
    }
}

/// # Safety
/// `vocab` must be a live handle and `out_size` writable.
#[no_mangle]
pub unsafe extern "C" fn sb_vocab_size(vocab: *const SbVocab, out_size: *mut usize) -> SbStatus {
    guard(|| {
        let v = vocab.as_ref().ok_or_else(|| null("vocab"))?;
        *out(out_size, "out_size")? = v.inner.len();
        Ok(())
    })
}

/// Encodes `text` to exactly `seq_len` ids and mask flags.
///
/// # Safety
/// `ids` and `mask` must each hold `seq_len` elements.
#[no_mangle]
pub unsafe extern "C" fn sb_encode(
    vocab: *const SbVocab,
    text_in: *const c_char,
    seq_len: usize,
    ids: *mut u32,
    mask: *mut u8,
    out_real_length: *mut usize,
) -> SbStatus {
    guard(|| {
        let v = vocab.as_ref().ok_or_else(|| null("vocab"))?;
        if ids.is_null() || mask.is_null() {
            return Err(null("ids or mask"));
        }
        let e = v.inner.encode(text(text_in, "text")?, seq_len)?;
        std::slice::from_raw_parts_mut(ids, seq_len).copy_from_slice(&e.ids);
        std::slice::from_raw_parts_mut(mask, seq_len).copy_from_slice(&e.attention_mask);
        *out(out_real_length, "out_real_length")? = e.real_length();
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated string and `out_model` writable.
#[no_mangle]
pub unsafe extern "C" fn sb_model_load(path: *const c_char, out_model: *mut *mut SbModel) -> SbStatus {
    guard(|| {
        let slot = out(out_model, "out_model")?;
        let inner = Checkpoint::load(Path::new(text(path, "path")?))?;
        if inner.config.head.is_none() {
            return Err(Failure(
                SbStatus::Validation,
                "checkpoint has no classification head".into(),
            ));
        }
        *slot = Box::into_raw(Box::new(SbModel { inner }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from `sb_model_load` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sb_model_free(model: *mut SbModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Label (1 positive, 0 negative) and positive-class probability of one text.
///
/// # Safety
/// Handles must be live; outputs writable.
#[no_mangle]
pub unsafe extern "C" fn sb_model_predict(
    model: *const SbModel,
    vocab: *const SbVocab,
    text_in: *const c_char,
    out_label: *mut i32,
    out_probability: *mut f64,
) -> SbStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let v = vocab.as_ref().ok_or_else(|| null("vocab"))?;
        let label = out(out_label, "out_label")?;
        let probability = out(out_probability, "out_probability")?;
        let row = predict(&m.inner, &v.inner, &[text(text_in, "text")?])?
            .pop()
            .expect("one row per text");
        *label = row.label.as_u8() as i32;
        *probability = row.probability;
        Ok(())
    })
}

/// Applies a labeling rule: 1 positive, 0 negative, -1 dropped.
///
/// # Safety
/// `out_label` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sb_label_score(rule: SbRule, score: f64, out_label: *mut i32) -> SbStatus {
    guard(|| {
        let r = match rule {
            SbRule::NtcSv => LabelRule::ntc_sv(),
            SbRule::Vreview => LabelRule::vreview(),
        };
        *out(out_label, "out_label")? = match r.label(score) {
            Some(Label::Positive) => 1,
            Some(Label::Negative) => 0,
            None => -1,
        };
        Ok(())
    })
}

/// Positive-class metrics of `n` paired 0/1 labels.
///
/// # Safety
/// `gold` and `predicted` must each hold `n` elements.
#[no_mangle]
pub unsafe extern "C" fn sb_metrics(gold: *const u8, predicted: *const u8, n: usize, out_metrics: *mut SbMetrics) -> SbStatus {
    guard(|| {
        let slot = out(out_metrics, "out_metrics")?;
        if n > 0 && (gold.is_null() || predicted.is_null()) {
            return Err(null("gold or predicted"));
        }
        let (g, p) = if n == 0 {
            (&[][..], &[][..])
        } else {
            (std::slice::from_raw_parts(gold, n), std::slice::from_raw_parts(predicted, n))
        };
        let m = MetricsReport::compute("", "", g, p)?;
        *slot = SbMetrics {
            tp: m.tp as u64,
            fp: m.fp as u64,
            fn_: m.fn_ as u64,
            tn: m.tn as u64,
            precision: m.precision,
            recall: m.recall,
            f1: m.f1,
        };
        Ok(())
    })
}
