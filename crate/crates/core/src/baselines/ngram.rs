use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::tokenizer::normalize;

/// Sparse feature vector: `(column, value)` pairs sorted by column.
pub type SparseVector = Vec<(usize, f64)>;

/// Word n-gram counts for n in `n_min..=n_max`. N-grams are keyed by their
/// words joined with single spaces.
#[derive(Clone, Debug, PartialEq)]
pub struct NGramFeaturizer {
    pub n_min: usize,
    pub n_max: usize,
    /// Minimum document frequency for n ≥ 2; unigrams are always kept.
    pub min_df: usize,
    /// Emit 1 instead of the count.
    pub binary: bool,
    index: HashMap<String, usize>,
    columns: Vec<String>,
}

fn words(text: &str) -> Vec<String> {
    normalize(text).split_whitespace().map(str::to_string).collect()
}

fn ngrams(words: &[String], n_min: usize, n_max: usize) -> impl Iterator<Item = String> + '_ {
    (n_min..=n_max).flat_map(move |n| words.windows(n).map(|w| w.join(" ")))
}

impl NGramFeaturizer {
    pub fn new(n_min: usize, n_max: usize, min_df: usize, binary: bool) -> Result<Self> {
        if n_min < 1 || n_max > 5 || n_min > n_max {
            return Err(Error::config(format!("n-gram range {n_min}..={n_max} must lie within 1..=5")));
        }
        Ok(NGramFeaturizer {
            n_min,
            n_max,
            min_df,
            binary,
            index: HashMap::new(),
            columns: Vec::new(),
        })
    }

    /// Builds the column index from a corpus. Columns are ordered by n-gram
    /// string, so fitting is deterministic.
    pub fn fit<S: AsRef<str>>(&mut self, texts: &[S]) {
        let mut df: BTreeMap<String, usize> = BTreeMap::new();
        for t in texts {
            let w = words(t.as_ref());
            let distinct: BTreeSet<String> = ngrams(&w, self.n_min, self.n_max).collect();
            for g in distinct {
                *df.entry(g).or_default() += 1;
            }
        }
        self.columns = df
            .into_iter()
            .filter(|(g, c)| g.split(' ').count() == 1 || *c >= self.min_df)
            .map(|(g, _)| g)
            .collect();
        self.index = self.columns.iter().enumerate().map(|(i, g)| (g.clone(), i)).collect();
    }

    pub fn dim(&self) -> usize {
        self.columns.len()
    }

    pub fn column(&self, ngram: &str) -> Option<usize> {
        self.index.get(ngram).copied()
    }

    /// Counts of fitted n-grams; unseen n-grams are ignored.
    pub fn featurize(&self, text: &str) -> SparseVector {
        let w = words(text);
        let mut counts: BTreeMap<usize, f64> = BTreeMap::new();
        for g in ngrams(&w, self.n_min, self.n_max) {
            if let Some(&c) = self.index.get(&g) {
                *counts.entry(c).or_default() += 1.0;
            }
        }
        if self.binary {
            counts.values_mut().for_each(|v| *v = 1.0);
        }
        counts.into_iter().collect()
    }

    /// `ngram<TAB>index` per line, in index order.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (i, g) in self.columns.iter().enumerate() {
            let _ = writeln!(out, "{g}\t{i}");
        }
        out
    }

    pub fn from_text(text: &str, n_min: usize, n_max: usize, min_df: usize, binary: bool) -> Result<Self> {
        let mut f = Self::new(n_min, n_max, min_df, binary)?;
        for (i, line) in text.lines().enumerate() {
            let (g, idx) = line.rsplit_once('\t').ok_or_else(|| Error::Parse {
                line: i + 1,
                msg: "expected ngram<TAB>index".into(),
            })?;
            if idx.parse::<usize>().ok() != Some(i) {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: format!("index {idx:?} is not the dense index {i}"),
                });
            }
            f.index.insert(g.to_string(), i);
            f.columns.push(g.to_string());
        }
        Ok(f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fitted(texts: &[&str], n_max: usize) -> NGramFeaturizer {
        let mut f = NGramFeaturizer::new(1, n_max, 1, false).unwrap();
        f.fit(texts);
        f
    }

    fn named(f: &NGramFeaturizer, v: &SparseVector) -> BTreeMap<String, f64> {
        v.iter().map(|&(c, x)| (f.columns[c].clone(), x)).collect()
    }

    #[test]
    fn bigram_enumeration() {
        let f = fitted(&["a b"], 2);
        let got = named(&f, &f.featurize("a b"));
        let want: BTreeMap<String, f64> = [("a", 1.0), ("b", 1.0), ("a b", 1.0)]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect();
        assert_eq!(got, want);
    }

    #[test]
    fn empty_text() {
        let f = fitted(&["a b"], 5);
        assert!(f.featurize("").is_empty());
    }

    #[test]
    fn single_token_only_unigram() {
        let f = fitted(&["x", "x y z"], 5);
        let got = named(&f, &f.featurize("x"));
        assert_eq!(got.len(), 1);
        assert_eq!(got["x"], 1.0);
    }

    #[test]
    fn document_frequency_floor() {
        let mut f = NGramFeaturizer::new(1, 2, 2, false).unwrap();
        f.fit(&["a b", "a b", "c d"]);
        assert!(f.column("a b").is_some());
        assert!(f.column("c d").is_none());
        assert!(f.column("c").is_some());
    }

    #[test]
    fn binary_flag() {
        let mut f = NGramFeaturizer::new(1, 1, 1, true).unwrap();
        f.fit(&["a a a"]);
        assert_eq!(f.featurize("a a a"), vec![(0, 1.0)]);
    }

    #[test]
    fn text_round_trip() {
        let f = fitted(&["xin chào bạn", "chào bạn"], 3);
        let back = NGramFeaturizer::from_text(&f.to_text(), 1, 3, 1, false).unwrap();
        assert_eq!(back, f);
    }

    #[test]
    fn range_checked() {
        assert!(NGramFeaturizer::new(1, 6, 2, false).is_err());
        assert!(NGramFeaturizer::new(0, 2, 2, false).is_err());
    }
}
