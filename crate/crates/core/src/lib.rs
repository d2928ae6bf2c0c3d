//! Desk-scale BERT fine-tuning for binary sentiment analysis.
//!
//! The crate builds everything from scratch on a small reverse-mode autodiff
//! engine:
//!
//! - [`tensor`]: tensors, the tape, Adam and a finite-difference checker;
//! - [`tokenizer`]: BPE-trained sub-word vocabulary with greedy longest-match encoding;
//! - [`encoder`]: the mini-BERT encoder and masked-LM pretraining;
//! - [`heads`]: `[CLS]` feed-forward, LSTM, TextCNN and RCNN classification heads;
//! - [`baselines`]: n-gram linear SVM and static word-embedding models;
//! - [`data`]: ingestion, score-threshold labeling, splitting, corpus statistics
//!   and a synthetic review generator;
//! - [`harness`]: fine-tuning, evaluation, checkpoints and the comparison matrix.

pub mod baselines;
pub mod data;
pub mod encoder;
pub mod error;
pub mod harness;
pub mod heads;
pub mod tensor;
pub mod tokenizer;

pub use error::{Error, Result};
