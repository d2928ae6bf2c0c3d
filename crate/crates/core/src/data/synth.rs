//! Synthetic restaurant reviews with a lexically separable sentiment signal.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{Label, ReviewRecord};

pub const POSITIVE_WORDS: &[&str] = &[
    "ngon", "tuyệt vời", "thích", "tốt", "đẹp", "sạch sẽ", "nhanh", "rẻ", "thơm", "chu đáo", "hài lòng", "xuất sắc",
];

pub const NEGATIVE_WORDS: &[&str] = &[
    "dở", "tệ", "chán", "bẩn", "chậm", "đắt", "nhạt", "thất vọng", "ồn ào", "hôi", "khó chịu", "cẩu thả",
];

pub const NOISE_WORDS: &[&str] = &[
    "quán", "món", "phở", "cà phê", "nhân viên", "giá", "không gian", "hôm nay", "mình", "đi", "ăn", "với", "bạn",
    "ở", "quận", "lần", "này", "thì", "cũng", "là", "có", "một", "rất", "khá", "quá", "bún", "trà sữa", "buổi tối",
];

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub min_words: usize,
    pub max_words: usize,
    /// Fraction of records given a mid-range score and mixed wording.
    pub neutral_fraction: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            min_words: 6,
            max_words: 18,
            neutral_fraction: 0.0,
        }
    }
}

fn review<R: Rng>(rng: &mut R, cfg: &SynthConfig, lexicons: &[&[&str]]) -> String {
    let len = rng.gen_range(cfg.min_words..=cfg.max_words);
    let cues = rng.gen_range(1..=3.min(len));
    let mut words: Vec<&str> = (0..len - cues).map(|_| *NOISE_WORDS.choose(rng).expect("non-empty")).collect();
    for i in 0..cues {
        let lexicon = lexicons[i % lexicons.len()];
        let at = rng.gen_range(0..=words.len());
        words.insert(at, lexicon.choose(rng).expect("non-empty"));
    }
    words.join(" ")
}

/// `n` records, half positive and half negative (before the neutral share),
/// each with an `avg_score` consistent with the labeling rules and a label.
pub fn generate(n: usize, seed: u64, cfg: &SynthConfig) -> Vec<ReviewRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            if rng.gen::<f64>() < cfg.neutral_fraction {
                let text = review(&mut rng, cfg, &[POSITIVE_WORDS, NEGATIVE_WORDS]);
                let score = (rng.gen_range(5.0..=8.5f64) * 10.0).round() / 10.0;
                return ReviewRecord::scored(text, score);
            }
            let label = if i % 2 == 0 { Label::Positive } else { Label::Negative };
            let (lexicon, lo, hi) = match label {
                Label::Positive => (POSITIVE_WORDS, 8.6, 10.0),
                Label::Negative => (NEGATIVE_WORDS, 0.0, 4.9),
            };
            let text = review(&mut rng, cfg, &[lexicon]);
            let score = (rng.gen_range(lo..=hi) * 10.0f64).round() / 10.0;
            ReviewRecord {
                text,
                avg_score: Some(score),
                label: Some(label),
            }
        })
        .collect()
}

/// Every whitespace word the generator can emit, sorted.
pub fn word_list() -> Vec<String> {
    let mut words: Vec<String> = POSITIVE_WORDS
        .iter()
        .chain(NEGATIVE_WORDS)
        .chain(NOISE_WORDS)
        .flat_map(|p| p.split_whitespace())
        .map(str::to_string)
        .collect();
    words.sort();
    words.dedup();
    words
}

/// A random `word v1 … vd` embedding file covering [`word_list`], standard
/// normal components.
pub fn embedding_file(dim: usize, seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("valid std");
    let mut out = String::new();
    for w in word_list() {
        out.push_str(&w);
        for _ in 0..dim {
            let _ = write!(out, " {:.6}", normal.sample(&mut rng));
        }
        out.push('\n');
    }
    out
}

/// Records as `text,avg_score` CSV, every text field quoted.
pub fn to_csv(records: &[ReviewRecord]) -> String {
    let mut out = String::from("text,avg_score\n");
    for r in records {
        let score = r.avg_score.map(|s| s.to_string()).unwrap_or_default();
        let _ = writeln!(out, "\"{}\",{}", r.text.replace('"', "\"\""), score);
    }
    out
}
