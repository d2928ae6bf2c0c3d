//! Non-transformer comparison systems: an n-gram linear SVM and static word
//! embeddings feeding the shared heads.

pub mod embedding;
pub mod ngram;
pub mod svm;

pub use embedding::{static_embed_sequence, EmbeddingTable, StaticSequence};
pub use ngram::{NGramFeaturizer, SparseVector};
pub use svm::LinearSvm;

use crate::data::{gold_labels, ReviewRecord};
use crate::error::Result;

#[derive(Clone, Debug, PartialEq)]
pub struct SvmConfig {
    pub n_max: usize,
    pub min_df: usize,
    pub binary: bool,
    pub lambda: f64,
    pub epochs: usize,
}

impl Default for SvmConfig {
    fn default() -> Self {
        SvmConfig {
            n_max: 5,
            min_df: 2,
            binary: false,
            lambda: 1e-4,
            epochs: 10,
        }
    }
}

/// Featurizer plus classifier; inputs are L2-normalized before scoring.
#[derive(Clone, Debug)]
pub struct SvmModel {
    pub featurizer: NGramFeaturizer,
    pub svm: LinearSvm,
}

impl SvmModel {
    pub fn fit(records: &[ReviewRecord], cfg: &SvmConfig, seed: u64) -> Result<Self> {
        let labels = gold_labels(records)?;
        let mut featurizer = NGramFeaturizer::new(1, cfg.n_max, cfg.min_df, cfg.binary)?;
        let texts: Vec<&str> = records.iter().map(|r| r.text.as_str()).collect();
        featurizer.fit(&texts);
        let xs: Vec<SparseVector> = texts.iter().map(|t| svm::l2_normalized(&featurizer.featurize(t))).collect();
        let svm = LinearSvm::train(&xs, &labels, featurizer.dim(), cfg.lambda, cfg.epochs, seed)?;
        Ok(SvmModel { featurizer, svm })
    }

    pub fn decision(&self, text: &str) -> f64 {
        self.svm.decision(&svm::l2_normalized(&self.featurizer.featurize(text)))
    }

    pub fn predict(&self, text: &str) -> u8 {
        u8::from(self.decision(text) >= 0.0)
    }
}
