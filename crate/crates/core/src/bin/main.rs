use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use sentibert::baselines::{EmbeddingTable, SvmConfig};
use sentibert::data::synth::{self, SynthConfig};
use sentibert::data::{
    apply_label_rule, compute_stats, ingest, read_labeled, split, write_jsonl, Format, LabelRule, ReviewRecord, Schema,
};
use sentibert::encoder::pretrain;
use sentibert::error::{Error, Result};
use sentibert::harness::checkpoint::Checkpoint;
use sentibert::harness::gradcheck::full_model_check;
use sentibert::harness::matrix::{run_matrix, MatrixDataset, MatrixSetup, ModelSpec};
use sentibert::harness::metrics::MetricsReport;
use sentibert::harness::run::RunConfig;
use sentibert::harness::train::{evaluate, finetune, predict};
use sentibert::heads::{FeatureView, HeadKind};
use sentibert::tensor::Precision;
use sentibert::tokenizer::Vocabulary;

#[derive(Parser)]
#[command(name = "sentibert", version, about = "Mini-BERT sentiment classification toolkit")]
struct Cli {
    /// Run seed (overrides `seed` in the config file).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Flat key=value run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Arithmetic precision (f32 by default; gradcheck defaults to f64).
    #[arg(long, global = true, value_enum)]
    precision: Option<PrecisionArg>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum PrecisionArg {
    F32,
    F64,
}

#[derive(Clone, Copy, ValueEnum)]
enum RuleArg {
    NtcSv,
    Vreview,
}

#[derive(Subcommand)]
enum Command {
    /// Train a subword vocabulary from text or review files.
    VocabTrain {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// Target vocabulary size (default from `vocab.size`).
        #[arg(long)]
        size: Option<usize>,
        #[arg(long, default_value_t = 2)]
        min_frequency: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Masked-LM pretraining of a fresh encoder.
    Pretrain {
        #[arg(required = true)]
        corpus: Vec<PathBuf>,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Turn scored reviews into labeled json-lines.
    Label {
        input: PathBuf,
        #[arg(long, value_enum, conflicts_with_all = ["positive", "negative"])]
        rule: Option<RuleArg>,
        #[arg(long, requires = "negative")]
        positive: Option<f64>,
        #[arg(long, requires = "positive")]
        negative: Option<f64>,
        #[command(flatten)]
        columns: Columns,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Review-length statistics (words per review).
    Stats {
        input: PathBuf,
        #[arg(long, default_value = "dataset")]
        dataset: String,
        #[command(flatten)]
        columns: Columns,
        #[arg(long)]
        json: bool,
    },
    /// Split labeled json-lines into train and test files.
    Split {
        input: PathBuf,
        #[arg(long, default_value_t = 0.2)]
        test_fraction: f64,
        #[arg(long)]
        stratified: bool,
        #[arg(long)]
        train_out: PathBuf,
        #[arg(long)]
        test_out: PathBuf,
    },
    /// Attach a head to a pretrained encoder and train it.
    Finetune {
        #[arg(long)]
        pretrained: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        /// Labeled json-lines (default from `data.train`).
        #[arg(long)]
        train: Option<PathBuf>,
        #[command(flatten)]
        head: HeadArgs,
        /// Train only the head on fixed encoder features.
        #[arg(long)]
        frozen: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Precision, recall and F1 of a fine-tuned model.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        /// Labeled json-lines (default from `data.test`).
        #[arg(long)]
        test: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        dataset: String,
        /// Also print macro-averaged values over both classes.
        #[arg(long = "macro")]
        macro_average: bool,
        #[arg(long)]
        json: bool,
    },
    /// Label texts (one per line, or json-lines with a `text` key).
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train and evaluate the full model comparison.
    Matrix {
        #[arg(long)]
        pretrained: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        /// `name=train.jsonl,test.jsonl`, repeatable.
        #[arg(long = "dataset", required = true)]
        datasets: Vec<String>,
        /// `name=vectors.txt`, repeatable.
        #[arg(long = "embedding")]
        embeddings: Vec<String>,
        #[arg(long, default_value_t = 100)]
        embedding_dim: usize,
        #[arg(long, default_value_t = 64)]
        static_seq_len: usize,
        /// Feature view for the BERT token heads.
        #[arg(long, default_value = "last")]
        token_view: FeatureView,
        #[arg(long)]
        json_out: Option<PathBuf>,
    },
    /// Finite-difference check of every head and view plus the MLM loss.
    Gradcheck {
        #[arg(long, default_value_t = 1e-4)]
        eps: f64,
        /// Coordinates sampled per tensor (all when absent).
        #[arg(long)]
        per_tensor: Option<usize>,
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Write a synthetic scored-review CSV.
    SynthData {
        #[arg(long, default_value_t = 2500)]
        n: usize,
        #[arg(long, default_value_t = 0.0)]
        neutral_fraction: f64,
        #[arg(long)]
        out: PathBuf,
        /// Also write a matching random embedding file.
        #[arg(long)]
        embeddings_out: Option<PathBuf>,
        #[arg(long, default_value_t = 100)]
        embedding_dim: usize,
    },
}

#[derive(Args)]
struct Columns {
    #[arg(long = "text-col", default_value = "text")]
    text_column: String,
    #[arg(long = "score-col", default_value = "avg_score")]
    score_column: String,
    #[arg(long = "label-col")]
    label_column: Option<String>,
}

impl Columns {
    fn schema(&self) -> Schema {
        Schema {
            text: self.text_column.clone(),
            score: Some(self.score_column.clone()),
            label: self.label_column.clone(),
        }
    }
}

#[derive(Args)]
struct HeadArgs {
    /// cls_ffn, lstm, textcnn or rcnn (default from `head.kind`).
    #[arg(long)]
    head: Option<HeadKind>,
    /// last or concat4 (default from `head.view`).
    #[arg(long)]
    view: Option<FeatureView>,
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn read_texts(path: &Path) -> Result<Vec<String>> {
    if Format::from_path(path) == Format::JsonLines {
        let body = std::fs::read_to_string(path)?;
        return body
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                let v: serde_json::Value = serde_json::from_str(l).map_err(|e| Error::Parse {
                    line: i + 1,
                    msg: e.to_string(),
                })?;
                v.get("text")
                    .and_then(|t| t.as_str())
                    .map(str::to_string)
                    .ok_or_else(|| Error::Schema(format!("line {} has no string key \"text\"", i + 1)))
            })
            .collect();
    }
    Ok(std::fs::read_to_string(path)?.lines().map(str::to_string).collect())
}

/// Plain text files contribute one text per line; review files their text
/// column.
fn read_corpus(paths: &[PathBuf]) -> Result<Vec<String>> {
    let mut out = Vec::new();
    for p in paths {
        match p.extension().and_then(|e| e.to_str()) {
            Some("csv") | Some("tsv") => {
                let schema = Schema::default();
                out.extend(ingest(p, Format::from_path(p), &schema)?.records.into_iter().map(|r| r.text));
            }
            _ => out.extend(read_texts(p)?),
        }
    }
    Ok(out)
}

fn required(path: Option<PathBuf>, fallback: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
    path.or_else(|| fallback.clone())
        .ok_or_else(|| Error::Config(format!("no {what} file given on the command line or in the config")))
}

fn print_report(report: &MetricsReport, macro_average: bool, json: bool) -> Result<()> {
    if json {
        let mut v = serde_json::to_value(report)?;
        if macro_average {
            let (p, r, f) = report.macro_average();
            v["macro"] = serde_json::json!({ "precision": p, "recall": r, "f1": f });
        }
        println!("{v}");
    } else {
        println!("{report}");
        if macro_average {
            let (p, r, f) = report.macro_average();
            println!(
                "macro: Precision(%) {:.2}  Recall(%) {:.2}  F1(%) {:.2}",
                100.0 * p,
                100.0 * r,
                100.0 * f
            );
        }
    }
    Ok(())
}

fn split_pair(raw: &str) -> Result<(&str, &str)> {
    raw.split_once('=')
        .ok_or_else(|| Error::Config(format!("expected name=value, found {raw:?}")))
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.set("seed", &seed.to_string())?;
    }
    let precision = match (cli.precision, &cli.command) {
        (Some(PrecisionArg::F64), _) | (None, Command::Gradcheck { .. }) => Precision::F64,
        _ => Precision::F32,
    };

    match cli.command {
        Command::VocabTrain {
            inputs,
            size,
            min_frequency,
            out,
        } => {
            let corpus = read_corpus(&inputs)?;
            let vocab = Vocabulary::train(corpus.iter().map(String::as_str), size.unwrap_or(cfg.vocab_size), min_frequency)?;
            vocab.save(&out)?;
            eprintln!("vocabulary of {} entries written to {}", vocab.len(), out.display());
        }
        Command::Pretrain { corpus, vocab, out } => {
            let vocab = Vocabulary::load(vocab)?;
            let texts = read_corpus(&corpus)?;
            let enc = cfg.encoder_for(vocab.len())?;
            let (ck, report) = match precision {
                Precision::F32 => pretrain::<f32, _>(&texts, &vocab, &enc, &cfg.pretrain, cfg.seed)?,
                Precision::F64 => pretrain::<f64, _>(&texts, &vocab, &enc, &cfg.pretrain, cfg.seed)?,
            };
            ck.save(&out)?;
            for (i, l) in report.epoch_losses.iter().enumerate() {
                eprintln!("epoch {} mlm loss {l:.4}", i + 1);
            }
        }
        Command::Label {
            input,
            rule,
            positive,
            negative,
            columns,
            out,
        } => {
            let rule = match (rule, positive, negative) {
                (Some(RuleArg::NtcSv), ..) => LabelRule::ntc_sv(),
                (Some(RuleArg::Vreview), ..) => LabelRule::vreview(),
                (None, Some(p), Some(n)) => LabelRule::new(p, n)?,
                _ => return Err(Error::Config("give --rule or both --positive and --negative".into())),
            };
            let ingested = ingest(&input, Format::from_path(&input), &columns.schema())?;
            let (labeled, dropped) = apply_label_rule(&ingested.records, &rule)?;
            write_jsonl(&labeled, output(out.as_deref())?)?;
            eprintln!(
                "{} labeled, {} dropped by the rule, {} empty rows skipped",
                labeled.len(),
                dropped,
                ingested.dropped_empty
            );
        }
        Command::Stats {
            input,
            dataset,
            columns,
            json,
        } => {
            let records: Vec<ReviewRecord> = match Format::from_path(&input) {
                Format::JsonLines => ingest(
                    &input,
                    Format::JsonLines,
                    &Schema {
                        text: columns.text_column.clone(),
                        score: None,
                        label: Some(columns.label_column.clone().unwrap_or_else(|| "label".into())),
                    },
                )?
                .records,
                f => ingest(&input, f, &columns.schema())?.records,
            };
            let stats = compute_stats(&records)?;
            if json {
                println!("{}", stats.to_json(&dataset));
            } else {
                print!("{}", stats.table(&dataset));
            }
        }
        Command::Split {
            input,
            test_fraction,
            stratified,
            train_out,
            test_out,
        } => {
            let records = read_labeled(&input)?;
            let (train, test) = split(&records, test_fraction, cfg.seed, stratified)?;
            write_jsonl(&train, output(Some(&train_out))?)?;
            write_jsonl(&test, output(Some(&test_out))?)?;
            eprintln!("{} train, {} test", train.len(), test.len());
        }
        Command::Finetune {
            pretrained,
            vocab,
            train,
            head,
            frozen,
            out,
        } => {
            let pretrained = Checkpoint::load(pretrained)?;
            let vocab = Vocabulary::load(vocab)?;
            let records = read_labeled(required(train, &cfg.data_train, "training")?)?;
            let mut spec = cfg.head.clone();
            spec.kind = head.head.unwrap_or(spec.kind);
            spec.view = head.view.unwrap_or(spec.view);
            let mut train_cfg = cfg.train.clone();
            train_cfg.frozen_encoder |= frozen;
            let (ck, report) = match precision {
                Precision::F32 => finetune::<f32>(&pretrained, &spec, &vocab, &records, &train_cfg)?,
                Precision::F64 => finetune::<f64>(&pretrained, &spec, &vocab, &records, &train_cfg)?,
            };
            ck.save(&out)?;
            for (i, l) in report.epoch_losses.iter().enumerate() {
                eprintln!("epoch {} loss {l:.4}", i + 1);
            }
        }
        Command::Evaluate {
            model,
            vocab,
            test,
            dataset,
            macro_average,
            json,
        } => {
            let ck = Checkpoint::load(model)?;
            let vocab = Vocabulary::load(vocab)?;
            let records = read_labeled(required(test, &cfg.data_test, "test")?)?;
            let name = ck.config.head.as_ref().map_or("model".to_string(), |h| {
                format!("bert-{}/{}", h.kind, h.view.as_str())
            });
            let report = evaluate(&ck, &vocab, &records, &name, &dataset)?;
            print_report(&report, macro_average, json)?;
        }
        Command::Predict {
            model,
            vocab,
            input,
            out,
        } => {
            let ck = Checkpoint::load(model)?;
            let vocab = Vocabulary::load(vocab)?;
            let texts = read_texts(&input)?;
            let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
            let mut w = output(out.as_deref())?;
            for row in predict(&ck, &vocab, &refs)? {
                serde_json::to_writer(&mut w, &row)?;
                w.write_all(b"\n")?;
            }
            w.flush()?;
        }
        Command::Matrix {
            pretrained,
            vocab,
            datasets,
            embeddings,
            embedding_dim,
            static_seq_len,
            token_view,
            json_out,
        } => {
            let pretrained = Checkpoint::load(pretrained)?;
            let vocab = Vocabulary::load(vocab)?;
            let tables = embeddings
                .iter()
                .map(|raw| {
                    let (name, path) = split_pair(raw)?;
                    Ok((name.to_string(), EmbeddingTable::load(path, embedding_dim)?))
                })
                .collect::<Result<Vec<_>>>()?;
            let data = datasets
                .iter()
                .map(|raw| {
                    let (name, paths) = split_pair(raw)?;
                    let (train, test) = paths
                        .split_once(',')
                        .ok_or_else(|| Error::Config(format!("expected train,test paths in {raw:?}")))?;
                    Ok(MatrixDataset {
                        name: name.to_string(),
                        train: read_labeled(train)?,
                        test: read_labeled(test)?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let sources: Vec<&str> = tables.iter().map(|(n, _)| n.as_str()).collect();
            let setup = MatrixSetup {
                vocab: &vocab,
                pretrained: &pretrained,
                embeddings: &tables,
                head: cfg.head.clone(),
                train: cfg.train.clone(),
                svm: SvmConfig::default(),
                static_seq_len,
                seed: cfg.seed,
            };
            let result = run_matrix(&setup, &ModelSpec::comparison_rows(&sources, token_view), &data);
            print!("{}", result.tables());
            if let Some(p) = json_out {
                std::fs::write(p, serde_json::to_string_pretty(&result.to_json())?)?;
            }
        }
        Command::Gradcheck {
            eps,
            per_tensor,
            threshold,
        } => {
            let threshold = threshold.unwrap_or(match precision {
                Precision::F64 => 1e-5,
                Precision::F32 => 1e-3,
            });
            let mut worst: f64 = 0.0;
            for case in full_model_check(precision, eps, per_tensor, cfg.seed)? {
                let r = &case.report;
                worst = worst.max(r.max_relative_error);
                let at = r.worst.as_ref().map_or(String::new(), |(n, i)| format!(" at {n}[{i}]"));
                println!(
                    "{:<16} max rel err {:.3e}{at}  ({} of {} coordinates above {threshold:e})",
                    case.name,
                    r.max_relative_error,
                    r.count_above(threshold),
                    r.checked
                );
            }
            println!("overall {worst:.3e}: {}", if worst < threshold { "pass" } else { "fail" });
        }
        Command::SynthData {
            n,
            neutral_fraction,
            out,
            embeddings_out,
            embedding_dim,
        } => {
            let records = synth::generate(
                n,
                cfg.seed,
                &SynthConfig {
                    neutral_fraction,
                    ..SynthConfig::default()
                },
            );
            std::fs::write(&out, synth::to_csv(&records))?;
            if let Some(p) = embeddings_out {
                std::fs::write(p, synth::embedding_file(embedding_dim, cfg.seed))?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
