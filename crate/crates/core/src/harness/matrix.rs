//! The model-by-dataset comparison run and its result tables.

use std::fmt::Write as _;

use serde_json::{json, Value};

use super::checkpoint::Checkpoint;
use super::metrics::MetricsReport;
use super::train::{evaluate, finetune, StaticClassifier, TrainConfig};
use crate::baselines::{EmbeddingTable, SvmConfig, SvmModel};
use crate::data::{gold_labels, ReviewRecord};
use crate::error::{Error, Result};
use crate::heads::{classify, FeatureView, HeadKind, HeadSpec};
use crate::tokenizer::Vocabulary;

pub const EXTERNAL_NOTE: &str = "external — out of scope";

#[derive(Clone, Debug, PartialEq)]
pub enum ModelSpec {
    Svm,
    /// A row that is listed but not run here.
    External(String),
    /// A head over the named static embedding table.
    Static { source: String, kind: HeadKind },
    Bert { kind: HeadKind, view: FeatureView },
}

fn head_title(kind: HeadKind) -> &'static str {
    match kind {
        HeadKind::ClsFfn => "FFN",
        HeadKind::Lstm => "LSTM",
        HeadKind::TextCnn => "TextCNN",
        HeadKind::Rcnn => "RCNN",
    }
}

impl ModelSpec {
    /// The comparison rows: SVM and XGBoost, then TextCNN/LSTM/RCNN over
    /// each embedding source, then the four BERT heads. BERT-base reads the
    /// last layer; the other BERT heads read `token_view`.
    pub fn comparison_rows(sources: &[&str], token_view: FeatureView) -> Vec<ModelSpec> {
        let mut rows = vec![ModelSpec::Svm, ModelSpec::External("XGBoost".into())];
        for s in sources {
            for kind in [HeadKind::TextCnn, HeadKind::Lstm, HeadKind::Rcnn] {
                rows.push(ModelSpec::Static {
                    source: s.to_string(),
                    kind,
                });
            }
        }
        rows.push(ModelSpec::Bert {
            kind: HeadKind::ClsFfn,
            view: FeatureView::Last,
        });
        for kind in [HeadKind::Lstm, HeadKind::TextCnn, HeadKind::Rcnn] {
            rows.push(ModelSpec::Bert { kind, view: token_view });
        }
        rows
    }

    /// Display name, e.g. `FastText + RCNN` or `BERT-LSTM`.
    pub fn name(&self) -> String {
        let name = match self {
            ModelSpec::Svm => "SVM".to_string(),
            ModelSpec::External(n) => n.clone(),
            ModelSpec::Static { source, kind } => format!("{source} + {}", head_title(*kind)),
            ModelSpec::Bert {
                kind: HeadKind::ClsFfn,
                ..
            } => "BERT-base".to_string(),
            ModelSpec::Bert { kind, .. } => format!("BERT-{}", head_title(*kind)),
        };
        match self {
            ModelSpec::Bert {
                view: FeatureView::Concat4,
                ..
            } => format!("{name} (concat4)"),
            _ => name,
        }
    }

    /// Machine-readable identifier used in the json output.
    pub fn key(&self) -> String {
        match self {
            ModelSpec::Svm => "svm".into(),
            ModelSpec::External(n) => n.to_lowercase(),
            ModelSpec::Static { source, kind } => format!("static-emb:{}+{kind}", source.to_lowercase()),
            ModelSpec::Bert { kind, view } => {
                let base = match kind {
                    HeadKind::ClsFfn => "bert-base".to_string(),
                    k => format!("bert-{k}"),
                };
                match view {
                    FeatureView::Last => base,
                    FeatureView::Concat4 => format!("{base}@concat4"),
                }
            }
        }
    }

    /// Rows sharing a group are printed without a separator between them.
    pub fn group(&self) -> String {
        match self {
            ModelSpec::Svm | ModelSpec::External(_) => "classical".into(),
            ModelSpec::Static { source, .. } => format!("static:{source}"),
            ModelSpec::Bert { .. } => "bert".into(),
        }
    }
}

pub struct MatrixDataset {
    pub name: String,
    pub train: Vec<ReviewRecord>,
    pub test: Vec<ReviewRecord>,
}

/// Everything shared by the cells of one run.
pub struct MatrixSetup<'a> {
    pub vocab: &'a Vocabulary,
    pub pretrained: &'a Checkpoint,
    /// Static embedding tables by source name.
    pub embeddings: &'a [(String, EmbeddingTable)],
    /// Head sizes; kind and view are taken from each row.
    pub head: HeadSpec,
    /// Shared by every neural cell; the seed is replaced per cell.
    pub train: TrainConfig,
    pub svm: SvmConfig,
    /// Word positions read by the static-embedding heads.
    pub static_seq_len: usize,
    /// Cell `i` (row-major over models × datasets) uses `seed + i`.
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum CellOutcome {
    Metrics(MetricsReport),
    External(String),
    Failed(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct MatrixRow {
    pub model: ModelSpec,
    pub cells: Vec<CellOutcome>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MatrixResult {
    pub datasets: Vec<String>,
    pub rows: Vec<MatrixRow>,
}

fn run_cell(setup: &MatrixSetup, model: &ModelSpec, data: &MatrixDataset, seed: u64) -> Result<MetricsReport> {
    let name = model.name();
    let cfg = TrainConfig {
        seed,
        ..setup.train.clone()
    };
    match model {
        ModelSpec::Svm => {
            let svm = SvmModel::fit(&data.train, &setup.svm, seed)?;
            let predicted: Vec<u8> = data.test.iter().map(|r| svm.predict(&r.text)).collect();
            MetricsReport::compute(&name, &data.name, &gold_labels(&data.test)?, &predicted)
        }
        ModelSpec::External(_) => Err(Error::contract("external rows are not run")),
        ModelSpec::Static { source, kind } => {
            if *kind == HeadKind::ClsFfn {
                return Err(Error::config("static embeddings have no [CLS] position"));
            }
            let table = setup
                .embeddings
                .iter()
                .find(|(s, _)| s == source)
                .map(|(_, t)| t)
                .ok_or_else(|| Error::config(format!("no embedding table named {source:?}")))?;
            let head = HeadSpec {
                kind: *kind,
                view: FeatureView::Last,
                ..setup.head.clone()
            };
            let (clf, _) = StaticClassifier::train(table, &head, setup.static_seq_len, &data.train, &cfg)?;
            let predicted = data
                .test
                .iter()
                .map(|r| Ok(classify(clf.logit(table, &r.text)?).label))
                .collect::<Result<Vec<u8>>>()?;
            MetricsReport::compute(&name, &data.name, &gold_labels(&data.test)?, &predicted)
        }
        ModelSpec::Bert { kind, view } => {
            let head = HeadSpec {
                kind: *kind,
                view: *view,
                ..setup.head.clone()
            };
            let (model, _) = finetune::<f32>(setup.pretrained, &head, setup.vocab, &data.train, &cfg)?;
            evaluate(&model, setup.vocab, &data.test, &name, &data.name)
        }
    }
}

/// Trains and evaluates every (model, dataset) cell. A failing cell is
/// recorded and the run continues.
pub fn run_matrix(setup: &MatrixSetup, models: &[ModelSpec], datasets: &[MatrixDataset]) -> MatrixResult {
    let mut rows = Vec::with_capacity(models.len());
    for (m, model) in models.iter().enumerate() {
        let mut cells = Vec::with_capacity(datasets.len());
        for (d, data) in datasets.iter().enumerate() {
            let index = (m * datasets.len() + d) as u64;
            let cell = match model {
                ModelSpec::External(_) => CellOutcome::External(EXTERNAL_NOTE.into()),
                _ => match run_cell(setup, model, data, setup.seed.wrapping_add(index)) {
                    Ok(report) => {
                        log::info!("{} on {}: F1 {:.4}", report.model, report.dataset, report.f1);
                        CellOutcome::Metrics(report)
                    }
                    Err(e) => {
                        log::warn!("{} on {} failed: {e}", model.name(), data.name);
                        CellOutcome::Failed(e.to_string())
                    }
                },
            };
            cells.push(cell);
        }
        rows.push(MatrixRow {
            model: model.clone(),
            cells,
        });
    }
    MatrixResult {
        datasets: datasets.iter().map(|d| d.name.clone()).collect(),
        rows,
    }
}

impl MatrixResult {
    pub fn cell(&self, model_key: &str, dataset: &str) -> Option<&CellOutcome> {
        let d = self.datasets.iter().position(|n| n == dataset)?;
        self.rows.iter().find(|r| r.model.key() == model_key).map(|r| &r.cells[d])
    }

    /// One aligned table for dataset `d`: model, Precision(%), Recall(%),
    /// F1(%), with a rule between model groups.
    pub fn table(&self, d: usize) -> String {
        let width = self
            .rows
            .iter()
            .map(|r| r.model.name().chars().count())
            .chain([5])
            .max()
            .unwrap_or(5);
        let header = format!("{:<width$}  {:>12}  {:>9}  {:>9}", "Model", "Precision(%)", "Recall(%)", "F1(%)");
        let rule = "-".repeat(header.chars().count());
        let mut out = String::new();
        let _ = writeln!(out, "Results on {}", self.datasets[d]);
        let _ = writeln!(out, "{rule}\n{header}");
        let mut last_group = None;
        for row in &self.rows {
            let group = row.model.group();
            if last_group.as_ref() != Some(&group) {
                let _ = writeln!(out, "{rule}");
                last_group = Some(group);
            }
            let name = row.model.name();
            let _ = match &row.cells[d] {
                CellOutcome::Metrics(m) => writeln!(
                    out,
                    "{name:<width$}  {:>12.2}  {:>9.2}  {:>9.2}",
                    100.0 * m.precision,
                    100.0 * m.recall,
                    100.0 * m.f1
                ),
                CellOutcome::External(note) => writeln!(out, "{name:<width$}  {note}"),
                CellOutcome::Failed(e) => writeln!(out, "{name:<width$}  failed: {e}"),
            };
        }
        let _ = writeln!(out, "{rule}");
        out
    }

    /// Every dataset's table, separated by a blank line.
    pub fn tables(&self) -> String {
        (0..self.datasets.len())
            .map(|d| self.table(d))
            .collect::<Vec<_>>()
            .join("\n")
    }

    pub fn to_json(&self) -> Value {
        let rows: Vec<Value> = self
            .rows
            .iter()
            .map(|r| {
                let cells: serde_json::Map<String, Value> = self
                    .datasets
                    .iter()
                    .zip(&r.cells)
                    .map(|(d, c)| {
                        let v = match c {
                            CellOutcome::Metrics(m) => serde_json::to_value(m).unwrap_or(Value::Null),
                            CellOutcome::External(note) => json!({ "status": note }),
                            CellOutcome::Failed(e) => json!({ "error": e }),
                        };
                        (d.clone(), v)
                    })
                    .collect();
                json!({
                    "model": r.model.key(),
                    "name": r.model.name(),
                    "group": r.model.group(),
                    "cells": cells,
                })
            })
            .collect();
        json!({ "datasets": self.datasets, "rows": rows })
    }
}
