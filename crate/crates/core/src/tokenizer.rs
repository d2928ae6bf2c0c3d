//! Sub-word vocabulary training and WordPiece-style encoding.
//!
//! Vocabularies are trained with byte-pair-style merges over whitespace-split
//! words. A word is first split into its characters, where every character
//! after the first carries the `##` continuation prefix; each merge joins the
//! most frequent adjacent pair. Encoding then segments every word greedily,
//! taking the longest vocabulary entry at each position.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;

use sha2::{Digest, Sha256};
use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const CLS_ID: u32 = 2;
pub const SEP_ID: u32 = 3;
pub const MASK_ID: u32 = 4;

/// Special tokens, in id order.
pub const SPECIAL_TOKENS: [&str; 5] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"];
pub const NUM_SPECIAL: usize = SPECIAL_TOKENS.len();

pub const CONTINUATION_PREFIX: &str = "##";

pub const DEFAULT_SEQ_LEN: usize = 128;

/// NFC, control characters stripped, whitespace runs collapsed to one space.
/// Case is preserved.
pub fn normalize(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut pending_space = false;
    for ch in text.nfc() {
        if ch.is_whitespace() {
            pending_space = !out.is_empty();
        } else if ch.is_control() {
            continue;
        } else {
            if pending_space {
                out.push(' ');
                pending_space = false;
            }
            out.push(ch);
        }
    }
    out
}

#[derive(Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl fmt::Debug for Vocabulary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Vocabulary").field("size", &self.tokens.len()).finish()
    }
}

/// Fixed-length encoded review: `[CLS] pieces… [SEP] [PAD]…`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedSequence {
    pub ids: Vec<u32>,
    pub attention_mask: Vec<u8>,
    real_length: usize,
}

impl EncodedSequence {
    /// Builds a sequence from raw ids, deriving the mask from `[PAD]` positions.
    pub fn from_ids(ids: Vec<u32>) -> Result<Self> {
        let real_length = ids.iter().take_while(|&&i| i != PAD_ID).count();
        if ids[real_length..].iter().any(|&i| i != PAD_ID) {
            return Err(Error::validation("padding must form a suffix"));
        }
        if real_length < 2 || ids[0] != CLS_ID || ids[real_length - 1] != SEP_ID {
            return Err(Error::validation("sequence must start with [CLS] and end with [SEP]"));
        }
        let attention_mask = (0..ids.len()).map(|i| u8::from(i < real_length)).collect();
        Ok(EncodedSequence {
            ids,
            attention_mask,
            real_length,
        })
    }

    pub fn seq_len(&self) -> usize {
        self.ids.len()
    }

    /// Number of non-pad positions.
    pub fn real_length(&self) -> usize {
        self.real_length
    }

    /// The ids without trailing padding.
    pub fn real_ids(&self) -> &[u32] {
        &self.ids[..self.real_length]
    }

    /// The same content re-padded to `seq_len` (which must fit the real part).
    pub fn repadded(&self, seq_len: usize) -> Result<Self> {
        if seq_len < self.real_length {
            return Err(Error::validation(format!(
                "cannot repad {} real tokens into {seq_len}",
                self.real_length
            )));
        }
        let mut ids = self.real_ids().to_vec();
        ids.resize(seq_len, PAD_ID);
        Self::from_ids(ids)
    }
}

impl Vocabulary {
    /// Builds a vocabulary from its id-ordered token list.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < NUM_SPECIAL || tokens[..NUM_SPECIAL].iter().zip(SPECIAL_TOKENS).any(|(a, b)| a != b) {
            return Err(Error::validation(format!(
                "the first {NUM_SPECIAL} tokens must be {SPECIAL_TOKENS:?}"
            )));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(Error::validation(format!("token {i} is empty or contains whitespace")));
            }
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(Error::validation(format!("duplicate token {t:?}")));
            }
        }
        Ok(Vocabulary { tokens, index })
    }

    /// Trains a vocabulary of at most `target_size` entries.
    ///
    /// Merges stop when the vocabulary is full or no pair occurs at least
    /// `min_frequency` times. Equal counts are broken by the lexicographic
    /// order of the pair.
    pub fn train<I, S>(corpus: I, target_size: usize, min_frequency: u64) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut word_counts: BTreeMap<String, u64> = BTreeMap::new();
        for text in corpus {
            for w in normalize(text.as_ref()).split(' ').filter(|w| !w.is_empty()) {
                *word_counts.entry(w.to_string()).or_default() += 1;
            }
        }
        if word_counts.is_empty() {
            return Err(Error::validation("cannot train a vocabulary on an empty corpus"));
        }

        let mut symbols: Vec<String> = Vec::new();
        let mut symbol_ids: HashMap<String, u32> = HashMap::new();
        let mut intern = |s: String, symbols: &mut Vec<String>| -> u32 {
            *symbol_ids.entry(s.clone()).or_insert_with(|| {
                symbols.push(s);
                (symbols.len() - 1) as u32
            })
        };

        let mut alphabet: BTreeSet<String> = BTreeSet::new();
        let mut words: Vec<(Vec<u32>, i64)> = Vec::with_capacity(word_counts.len());
        for (w, &count) in &word_counts {
            let pieces: Vec<String> = w
                .chars()
                .enumerate()
                .map(|(i, c)| if i == 0 { c.to_string() } else { format!("{CONTINUATION_PREFIX}{c}") })
                .collect();
            let ids = pieces
                .into_iter()
                .map(|p| {
                    alphabet.insert(p.clone());
                    intern(p, &mut symbols)
                })
                .collect();
            words.push((ids, count as i64));
        }
        if target_size <= NUM_SPECIAL + alphabet.len() {
            return Err(Error::validation(format!(
                "target size {target_size} must exceed {NUM_SPECIAL} specials + {} distinct characters",
                alphabet.len()
            )));
        }

        let mut tokens: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
        tokens.extend(alphabet.iter().cloned());
        let mut present: BTreeSet<String> = tokens.iter().cloned().collect();

        let mut pair_counts: HashMap<(u32, u32), i64> = HashMap::new();
        let mut occurs: HashMap<(u32, u32), BTreeSet<usize>> = HashMap::new();
        for (wi, (ids, count)) in words.iter().enumerate() {
            for p in ids.windows(2) {
                *pair_counts.entry((p[0], p[1])).or_default() += count;
                occurs.entry((p[0], p[1])).or_default().insert(wi);
            }
        }

        while tokens.len() < target_size {
            let best = pair_counts
                .iter()
                .filter(|(_, &c)| c > 0 && c as u64 >= min_frequency)
                .max_by(|(pa, ca), (pb, cb)| {
                    ca.cmp(cb).then_with(|| {
                        let ka = (&symbols[pa.0 as usize], &symbols[pa.1 as usize]);
                        let kb = (&symbols[pb.0 as usize], &symbols[pb.1 as usize]);
                        kb.cmp(&ka)
                    })
                })
                .map(|(p, _)| *p);
            let Some(pair) = best else { break };

            let right = &symbols[pair.1 as usize];
            let merged = format!(
                "{}{}",
                symbols[pair.0 as usize],
                right.strip_prefix(CONTINUATION_PREFIX).unwrap_or(right)
            );
            let new_id = intern(merged.clone(), &mut symbols);
            if present.insert(merged.clone()) {
                tokens.push(merged);
            }

            for wi in occurs.remove(&pair).unwrap_or_default() {
                let (ids, count) = &mut words[wi];
                for p in ids.windows(2) {
                    *pair_counts.get_mut(&(p[0], p[1])).expect("pair counted") -= *count;
                }
                let mut merged_ids = Vec::with_capacity(ids.len());
                let mut i = 0;
                while i < ids.len() {
                    if i + 1 < ids.len() && (ids[i], ids[i + 1]) == pair {
                        merged_ids.push(new_id);
                        i += 2;
                    } else {
                        merged_ids.push(ids[i]);
                        i += 1;
                    }
                }
                *ids = merged_ids;
                for p in ids.windows(2) {
                    *pair_counts.entry((p[0], p[1])).or_default() += *count;
                    occurs.entry((p[0], p[1])).or_default().insert(wi);
                }
            }
            pair_counts.remove(&pair);
        }
        Self::from_tokens(tokens)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn is_special(id: u32) -> bool {
        (id as usize) < NUM_SPECIAL
    }

    /// Greedy longest-match segmentation of one word. Characters with no
    /// matching entry become `[UNK]`.
    pub fn segment_word(&self, word: &str, out: &mut Vec<u32>) {
        let chars: Vec<char> = word.chars().collect();
        let mut start = 0;
        let mut candidate = String::new();
        while start < chars.len() {
            let mut found = None;
            for end in (start + 1..=chars.len()).rev() {
                candidate.clear();
                if start > 0 {
                    candidate.push_str(CONTINUATION_PREFIX);
                }
                candidate.extend(&chars[start..end]);
                if let Some(id) = self.id(&candidate) {
                    found = Some((id, end));
                    break;
                }
            }
            match found {
                Some((id, end)) => {
                    out.push(id);
                    start = end;
                }
                None => {
                    out.push(UNK_ID);
                    start += 1;
                }
            }
        }
    }

    /// Sub-word pieces of `text` with no special tokens.
    pub fn pieces(&self, text: &str) -> Vec<u32> {
        let mut out = Vec::new();
        for w in normalize(text).split(' ').filter(|w| !w.is_empty()) {
            self.segment_word(w, &mut out);
        }
        out
    }

    /// Encodes to exactly `seq_len` ids, keeping the head of long texts.
    pub fn encode(&self, text: &str, seq_len: usize) -> Result<EncodedSequence> {
        if seq_len < 2 {
            return Err(Error::validation(format!("seq_len must be at least 2, got {seq_len}")));
        }
        let mut pieces = self.pieces(text);
        pieces.truncate(seq_len - 2);
        let mut ids = Vec::with_capacity(seq_len);
        ids.push(CLS_ID);
        ids.extend_from_slice(&pieces);
        ids.push(SEP_ID);
        let real_length = ids.len();
        ids.resize(seq_len, PAD_ID);
        let attention_mask = (0..seq_len).map(|i| u8::from(i < real_length)).collect();
        Ok(EncodedSequence {
            ids,
            attention_mask,
            real_length,
        })
    }

    /// Joins pieces back into text, dropping special tokens.
    pub fn decode(&self, ids: &[u32]) -> Result<String> {
        let mut out = String::new();
        for &id in ids {
            let token = self.token(id).ok_or_else(|| {
                Error::validation(format!("token id {id} out of range for vocabulary of {}", self.len()))
            })?;
            if Self::is_special(id) {
                continue;
            }
            match token.strip_prefix(CONTINUATION_PREFIX) {
                Some(rest) if !out.is_empty() => out.push_str(rest),
                _ => {
                    if !out.is_empty() {
                        out.push(' ');
                    }
                    out.push_str(token);
                }
            }
        }
        Ok(out)
    }

    /// One token per line; the line number is the id.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for t in &self.tokens {
            s.push_str(t);
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let body = text.strip_suffix('\n').unwrap_or(text);
        Self::from_tokens(body.split('\n').map(str::to_string).collect())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }

    /// SHA-256 of the serialized vocabulary, hex encoded.
    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(self.to_text().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
