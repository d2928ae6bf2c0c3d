//! Run configuration read from flat `key=value` files.
//!
//! ```text
//! # comments and blank lines are ignored
//! encoder.L = 4
//! encoder.h = 64
//! head.kind = rcnn
//! head.view = concat4
//! train.lr = 5e-4
//! data.train = train.jsonl
//! seed = 7
//! ```

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::train::TrainConfig;
use crate::encoder::{EncoderConfig, PretrainConfig};
use crate::error::{Error, Result};
use crate::heads::{FeatureView, HeadKind, HeadSpec};

/// Every accepted key, in the order [`RunConfig::to_text`] writes them.
pub const KEYS: &[&str] = &[
    "encoder.L",
    "encoder.A",
    "encoder.h",
    "encoder.ff",
    "encoder.seq_len",
    "encoder.dropout",
    "head.kind",
    "head.view",
    "head.ffn_hidden",
    "head.state",
    "head.filters",
    "train.lr",
    "train.epochs",
    "train.batch",
    "train.frozen",
    "pretrain.epochs",
    "pretrain.batch",
    "pretrain.lr",
    "pretrain.mask_prob",
    "vocab.size",
    "data.train",
    "data.test",
    "seed",
];

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    /// `vocab_size` is filled in from the tokenizer when a model is built.
    pub encoder: EncoderConfig,
    pub head: HeadSpec,
    pub train: TrainConfig,
    pub pretrain: PretrainConfig,
    /// Target size for `vocab-train`.
    pub vocab_size: usize,
    pub data_train: Option<PathBuf>,
    pub data_test: Option<PathBuf>,
    pub seed: u64,
    ff_set: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            encoder: EncoderConfig::desk(0),
            head: HeadSpec::new(HeadKind::ClsFfn, FeatureView::Last),
            train: TrainConfig::default(),
            pretrain: PretrainConfig::default(),
            vocab_size: 4000,
            data_train: None,
            data_test: None,
            seed: 0,
            ff_set: false,
        }
    }
}

fn value<T: FromStr>(key: &str, raw: &str) -> Result<T> {
    raw.parse()
        .map_err(|_| Error::config(format!("{key}: cannot parse {raw:?}")))
}

fn flag(key: &str, raw: &str) -> Result<bool> {
    match raw {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::config(format!("{key}: expected true or false, found {raw:?}"))),
    }
}

impl RunConfig {
    /// Sets one key. An unset `encoder.ff` follows `4 × encoder.h`.
    pub fn set(&mut self, key: &str, raw: &str) -> Result<()> {
        let raw = raw.trim();
        match key {
            "encoder.L" => self.encoder.layers = value(key, raw)?,
            "encoder.A" => self.encoder.heads = value(key, raw)?,
            "encoder.h" => {
                self.encoder.hidden = value(key, raw)?;
                if !self.ff_set {
                    self.encoder.ff = 4 * self.encoder.hidden;
                }
            }
            "encoder.ff" => {
                self.encoder.ff = value(key, raw)?;
                self.ff_set = true;
            }
            "encoder.seq_len" => self.encoder.seq_len = value(key, raw)?,
            "encoder.dropout" => self.encoder.dropout = value(key, raw)?,
            "head.kind" => self.head.kind = raw.parse()?,
            "head.view" => self.head.view = raw.parse()?,
            "head.ffn_hidden" => self.head.ffn_hidden = value(key, raw)?,
            "head.state" => self.head.state_size = value(key, raw)?,
            "head.filters" => self.head.filters = value(key, raw)?,
            "train.lr" => self.train.learning_rate = value(key, raw)?,
            "train.epochs" => self.train.epochs = value(key, raw)?,
            "train.batch" => self.train.batch_size = value(key, raw)?,
            "train.frozen" => self.train.frozen_encoder = flag(key, raw)?,
            "pretrain.epochs" => self.pretrain.epochs = value(key, raw)?,
            "pretrain.batch" => self.pretrain.batch_size = value(key, raw)?,
            "pretrain.lr" => self.pretrain.learning_rate = value(key, raw)?,
            "pretrain.mask_prob" => self.pretrain.mask_prob = value(key, raw)?,
            "vocab.size" => self.vocab_size = value(key, raw)?,
            "data.train" => self.data_train = Some(PathBuf::from(raw)),
            "data.test" => self.data_test = Some(PathBuf::from(raw)),
            "seed" => {
                self.seed = value(key, raw)?;
                self.train.seed = self.seed;
            }
            _ => return Err(Error::config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Parses a config file body over the defaults. No file checks.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, raw) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: i + 1,
                msg: format!("expected key=value, found {line:?}"),
            })?;
            cfg.set(key.trim(), raw).map_err(|e| Error::Parse {
                line: i + 1,
                msg: e.to_string(),
            })?;
        }
        Ok(cfg)
    }

    /// Reads and parses a config file, then checks that every data path
    /// it names exists.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let cfg = Self::parse(&std::fs::read_to_string(path)?)?;
        cfg.check_files()?;
        Ok(cfg)
    }

    pub fn check_files(&self) -> Result<()> {
        for (key, p) in [("data.train", &self.data_train), ("data.test", &self.data_test)] {
            if let Some(p) = p {
                if !p.is_file() {
                    return Err(Error::config(format!("{key}: {} does not exist", p.display())));
                }
            }
        }
        Ok(())
    }

    /// The encoder config for a tokenizer of `vocab_size` entries, validated.
    pub fn encoder_for(&self, vocab_size: usize) -> Result<EncoderConfig> {
        let enc = EncoderConfig {
            vocab_size,
            ..self.encoder.clone()
        };
        enc.validate()?;
        self.head.check_compatible(&enc)?;
        Ok(enc)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        let pairs: Vec<(&str, Option<String>)> = vec![
            ("encoder.L", Some(self.encoder.layers.to_string())),
            ("encoder.A", Some(self.encoder.heads.to_string())),
            ("encoder.h", Some(self.encoder.hidden.to_string())),
            ("encoder.ff", Some(self.encoder.ff.to_string())),
            ("encoder.seq_len", Some(self.encoder.seq_len.to_string())),
            ("encoder.dropout", Some(self.encoder.dropout.to_string())),
            ("head.kind", Some(self.head.kind.to_string())),
            ("head.view", Some(self.head.view.as_str().to_string())),
            ("head.ffn_hidden", Some(self.head.ffn_hidden.to_string())),
            ("head.state", Some(self.head.state_size.to_string())),
            ("head.filters", Some(self.head.filters.to_string())),
            ("train.lr", Some(self.train.learning_rate.to_string())),
            ("train.epochs", Some(self.train.epochs.to_string())),
            ("train.batch", Some(self.train.batch_size.to_string())),
            ("train.frozen", Some(self.train.frozen_encoder.to_string())),
            ("pretrain.epochs", Some(self.pretrain.epochs.to_string())),
            ("pretrain.batch", Some(self.pretrain.batch_size.to_string())),
            ("pretrain.lr", Some(self.pretrain.learning_rate.to_string())),
            ("pretrain.mask_prob", Some(self.pretrain.mask_prob.to_string())),
            ("vocab.size", Some(self.vocab_size.to_string())),
            ("data.train", path(&self.data_train)),
            ("data.test", path(&self.data_test)),
            ("seed", Some(self.seed.to_string())),
        ];
        for (k, v) in pairs {
            if let Some(v) = v {
                let _ = writeln!(out, "{k} = {v}");
            }
        }
        out
    }
}
