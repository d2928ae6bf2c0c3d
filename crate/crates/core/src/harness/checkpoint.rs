//! Binary checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "SBCK" | u32 version | u64 total file length
//! u32 config length | config text (sorted key=value lines)
//! u32 tensor count
//! per tensor: u32 name length | name | u32 rank | u32 dims... | f32 values...
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::encoder::{self, EncoderConfig};
use crate::error::{Error, Result};
use crate::heads::HeadSpec;
use crate::tensor::{ParamStore, Tensor};

pub const MAGIC: &[u8; 4] = b"SBCK";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    /// `None` for a pretrained encoder without a classifier.
    pub head: Option<HeadSpec>,
}

impl ModelConfig {
    /// Builds a parameter store with the exact names and shapes this
    /// config implies.
    pub fn init_params(&self, seed: u64) -> Result<ParamStore<f32>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        encoder::init_params(&self.encoder, &mut store, &mut rng)?;
        if let Some(head) = &self.head {
            head.check_compatible(&self.encoder)?;
            head.init_params(head.view.width(self.encoder.hidden), &mut store, &mut rng)?;
        }
        Ok(store)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointMeta {
    /// SHA-256 of the tokenizer's vocabulary file.
    pub vocab_fingerprint: String,
    pub seed: u64,
    pub steps: u64,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub meta: CheckpointMeta,
    pub params: ParamStore<f32>,
}

fn config_text(config: &ModelConfig, meta: &CheckpointMeta) -> String {
    let e = &config.encoder;
    let mut kv = BTreeMap::new();
    kv.insert("encoder.layers", e.layers.to_string());
    kv.insert("encoder.heads", e.heads.to_string());
    kv.insert("encoder.hidden", e.hidden.to_string());
    kv.insert("encoder.ff", e.ff.to_string());
    kv.insert("encoder.seq_len", e.seq_len.to_string());
    kv.insert("encoder.vocab_size", e.vocab_size.to_string());
    kv.insert("encoder.dropout", format!("{:?}", e.dropout));
    if let Some(h) = &config.head {
        kv.insert("head.kind", h.kind.to_string());
        kv.insert("head.view", h.view.as_str().to_string());
        kv.insert("head.ffn_hidden", h.ffn_hidden.to_string());
        kv.insert("head.state_size", h.state_size.to_string());
        kv.insert("head.filters", h.filters.to_string());
        let regions: Vec<String> = h.regions.iter().map(|r| r.to_string()).collect();
        kv.insert("head.regions", regions.join(","));
        kv.insert("head.conv_width", h.conv_width.to_string());
    }
    kv.insert("tokenizer.sha256", meta.vocab_fingerprint.clone());
    kv.insert("train.seed", meta.seed.to_string());
    kv.insert("train.steps", meta.steps.to_string());
    kv.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
}

fn parse_config(text: &str) -> Result<(ModelConfig, CheckpointMeta)> {
    let mut kv = BTreeMap::new();
    for line in text.lines() {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Integrity(format!("malformed config line {line:?}")))?;
        kv.insert(k.to_string(), v.to_string());
    }
    let get = |k: &str| {
        kv.get(k)
            .map(String::as_str)
            .ok_or_else(|| Error::Integrity(format!("config is missing {k}")))
    };
    fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
        v.parse()
            .map_err(|_| Error::Integrity(format!("config value {key}={v} is not a number")))
    }
    let usize_of = |k: &str| get(k).and_then(|v| num::<usize>(k, v));
    let encoder = EncoderConfig {
        layers: usize_of("encoder.layers")?,
        heads: usize_of("encoder.heads")?,
        hidden: usize_of("encoder.hidden")?,
        ff: usize_of("encoder.ff")?,
        seq_len: usize_of("encoder.seq_len")?,
        vocab_size: usize_of("encoder.vocab_size")?,
        dropout: num("encoder.dropout", get("encoder.dropout")?)?,
    };
    let head = if kv.contains_key("head.kind") {
        let regions = get("head.regions")?
            .split(',')
            .filter(|s| !s.is_empty())
            .map(|s| num("head.regions", s))
            .collect::<Result<Vec<usize>>>()?;
        Some(HeadSpec {
            kind: get("head.kind")?.parse()?,
            view: get("head.view")?.parse()?,
            ffn_hidden: usize_of("head.ffn_hidden")?,
            state_size: usize_of("head.state_size")?,
            filters: usize_of("head.filters")?,
            regions,
            conv_width: usize_of("head.conv_width")?,
        })
    } else {
        None
    };
    let meta = CheckpointMeta {
        vocab_fingerprint: get("tokenizer.sha256")?.to_string(),
        seed: num("train.seed", get("train.seed")?)?,
        steps: num("train.steps", get("train.steps")?)?,
    };
    Ok((ModelConfig { encoder, head }, meta))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Integrity(format!("unexpected end of data at byte {}", self.pos)));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Integrity("string is not UTF-8".into()))
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&0u64.to_le_bytes());
        let config = config_text(&self.config, &self.meta);
        out.extend_from_slice(&(config.len() as u32).to_le_bytes());
        out.extend_from_slice(config.as_bytes());
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for (name, tensor) in self.params.iter() {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(tensor.shape().len() as u32).to_le_bytes());
            for &d in tensor.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in tensor.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let total = out.len() as u64;
        out[8..16].copy_from_slice(&total.to_le_bytes());
        out
    }

    /// Parses and validates a checkpoint: magic, version, declared length,
    /// and every tensor name and shape against the stored config.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Integrity("not a checkpoint (bad magic bytes)".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Version {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let declared = r.u64()?;
        if declared != bytes.len() as u64 {
            return Err(Error::Integrity(format!(
                "declared length {declared} bytes but found {}",
                bytes.len()
            )));
        }
        let (config, meta) = parse_config(&r.string()?)?;
        config.encoder.validate()?;
        let expected = config.init_params(0)?;
        let count = r.u32()? as usize;
        if count != expected.len() {
            return Err(Error::validation(format!(
                "checkpoint has {count} tensors but its config implies {}",
                expected.len()
            )));
        }
        let mut params = ParamStore::new();
        for i in 0..count {
            let name = r.string()?;
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            if name != expected.name(i) {
                return Err(Error::validation(format!(
                    "tensor {i} is {name:?}, expected {:?}",
                    expected.name(i)
                )));
            }
            if shape != expected.tensor(i).shape() {
                return Err(Error::validation(format!(
                    "tensor {name:?} has shape {shape:?}, config implies {:?}",
                    expected.tensor(i).shape()
                )));
            }
            let n: usize = shape.iter().product();
            let data = r
                .take(4 * n)?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            params.insert(name, Tensor::new(shape, data)?)?;
        }
        if r.pos != bytes.len() {
            return Err(Error::Integrity(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Checkpoint { config, meta, params })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
