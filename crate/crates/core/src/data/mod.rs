//! Review records: ingestion, score-threshold labeling, splitting and
//! word-count statistics.

mod delimited;
pub mod synth;

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Negative,
    Positive,
}

impl Label {
    pub fn as_u8(self) -> u8 {
        match self {
            Label::Negative => 0,
            Label::Positive => 1,
        }
    }

    pub fn from_u8(v: u8) -> Self {
        if v == 0 {
            Label::Negative
        } else {
            Label::Positive
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Negative => "negative",
            Label::Positive => "positive",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "positive" | "pos" | "1" => Ok(Label::Positive),
            "negative" | "neg" | "0" => Ok(Label::Negative),
            other => Err(Error::validation(format!("unrecognised label {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReviewRecord {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub avg_score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<Label>,
}

impl ReviewRecord {
    pub fn labeled(text: impl Into<String>, label: Label) -> Self {
        ReviewRecord {
            text: text.into(),
            avg_score: None,
            label: Some(label),
        }
    }

    pub fn scored(text: impl Into<String>, avg_score: f64) -> Self {
        ReviewRecord {
            text: text.into(),
            avg_score: Some(avg_score),
            label: None,
        }
    }
}

/// Gold labels as 0/1, failing on the first unlabeled record.
pub fn gold_labels(records: &[ReviewRecord]) -> Result<Vec<u8>> {
    records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            r.label
                .map(Label::as_u8)
                .ok_or_else(|| Error::validation(format!("record {i} has no label")))
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Delimited(char),
    JsonLines,
}

impl Format {
    /// json-lines for `.jsonl`/`.json`, tab-delimited for `.tsv`, CSV otherwise.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") | Some("json") => Format::JsonLines,
            Some("tsv") => Format::Delimited('\t'),
            _ => Format::Delimited(','),
        }
    }
}

/// Which columns (or json keys) hold the text, score and label.
#[derive(Clone, Debug, PartialEq)]
pub struct Schema {
    pub text: String,
    pub score: Option<String>,
    pub label: Option<String>,
}

impl Default for Schema {
    fn default() -> Self {
        Schema {
            text: "text".into(),
            score: Some("avg_score".into()),
            label: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Ingested {
    pub records: Vec<ReviewRecord>,
    /// Rows dropped because their text was empty after trimming.
    pub dropped_empty: usize,
}

fn parse_score(raw: &str, line: usize) -> Result<Option<f64>> {
    let raw = raw.trim();
    if raw.is_empty() {
        return Ok(None);
    }
    let v: f64 = raw.parse().map_err(|_| Error::Parse {
        line,
        msg: format!("score {raw:?} is not a number"),
    })?;
    if !(0.0..=10.0).contains(&v) {
        return Err(Error::Parse {
            line,
            msg: format!("score {v} is outside [0, 10]"),
        });
    }
    Ok(Some(v))
}

fn parse_label(raw: &str, line: usize) -> Result<Option<Label>> {
    if raw.trim().is_empty() {
        return Ok(None);
    }
    raw.parse().map(Some).map_err(|e: Error| Error::Parse {
        line,
        msg: e.to_string(),
    })
}

fn finish(text: String, avg_score: Option<f64>, label: Option<Label>, line: usize, out: &mut Ingested) -> Result<()> {
    if text.trim().is_empty() {
        out.dropped_empty += 1;
        return Ok(());
    }
    if avg_score.is_none() && label.is_none() {
        return Err(Error::Parse {
            line,
            msg: "record has neither a score nor a label".into(),
        });
    }
    out.records.push(ReviewRecord { text, avg_score, label });
    Ok(())
}

/// Parses records from in-memory text, in file order.
pub fn ingest_str(text: &str, format: Format, schema: &Schema) -> Result<Ingested> {
    if schema.score.is_none() && schema.label.is_none() {
        return Err(Error::Schema("schema must map a score or a label column".into()));
    }
    let mut out = Ingested {
        records: Vec::new(),
        dropped_empty: 0,
    };
    match format {
        Format::Delimited(delim) => {
            let rows = delimited::parse(text, delim)?;
            let Some(((_, header), body)) = rows.split_first() else {
                return Ok(out);
            };
            let column = |name: &str| {
                header
                    .iter()
                    .position(|h| h.trim() == name)
                    .ok_or_else(|| Error::Schema(format!("column {name:?} not found in header {header:?}")))
            };
            let text_col = column(&schema.text)?;
            let score_col = schema.score.as_deref().map(column).transpose()?;
            let label_col = schema.label.as_deref().map(column).transpose()?;
            for (line, fields) in body {
                if fields.len() != header.len() {
                    return Err(Error::Parse {
                        line: *line,
                        msg: format!("expected {} fields, found {}", header.len(), fields.len()),
                    });
                }
                let score = score_col.map(|c| parse_score(&fields[c], *line)).transpose()?.flatten();
                let label = label_col.map(|c| parse_label(&fields[c], *line)).transpose()?.flatten();
                finish(fields[text_col].clone(), score, label, *line, &mut out)?;
            }
        }
        Format::JsonLines => {
            for (i, raw) in text.lines().enumerate() {
                let line = i + 1;
                if raw.trim().is_empty() {
                    continue;
                }
                let value: serde_json::Value = serde_json::from_str(raw).map_err(|e| Error::Parse {
                    line,
                    msg: e.to_string(),
                })?;
                let field = |key: &str| -> Result<Option<String>> {
                    match value.get(key) {
                        None => Err(Error::Schema(format!("line {line} has no key {key:?}"))),
                        Some(serde_json::Value::Null) => Ok(None),
                        Some(serde_json::Value::String(s)) => Ok(Some(s.clone())),
                        Some(other) => Ok(Some(other.to_string())),
                    }
                };
                let text = field(&schema.text)?.unwrap_or_default();
                let score = match &schema.score {
                    Some(k) => field(k)?.map(|s| parse_score(&s, line)).transpose()?.flatten(),
                    None => None,
                };
                let label = match &schema.label {
                    Some(k) => field(k)?.map(|s| parse_label(&s, line)).transpose()?.flatten(),
                    None => None,
                };
                finish(text, score, label, line, &mut out)?;
            }
        }
    }
    Ok(out)
}

pub fn ingest(path: impl AsRef<Path>, format: Format, schema: &Schema) -> Result<Ingested> {
    ingest_str(&std::fs::read_to_string(path)?, format, schema)
}

/// Writes `{text, label}` (and the score when present) per line.
pub fn write_jsonl(records: &[ReviewRecord], mut out: impl Write) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads a labeled json-lines file as written by [`write_jsonl`].
pub fn read_labeled(path: impl AsRef<Path>) -> Result<Vec<ReviewRecord>> {
    let schema = Schema {
        text: "text".into(),
        score: None,
        label: Some("label".into()),
    };
    let records = ingest(path, Format::JsonLines, &schema)?.records;
    gold_labels(&records)?;
    Ok(records)
}

/// Score thresholds: strictly above `positive` is positive, strictly below
/// `negative` is negative, anything else is dropped.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LabelRule {
    pub positive: f64,
    pub negative: f64,
}

impl LabelRule {
    pub fn new(positive: f64, negative: f64) -> Result<Self> {
        if !(negative <= positive) {
            return Err(Error::validation(format!(
                "negative threshold {negative} exceeds positive threshold {positive}"
            )));
        }
        Ok(LabelRule { positive, negative })
    }

    pub fn ntc_sv() -> Self {
        LabelRule {
            positive: 8.5,
            negative: 5.0,
        }
    }

    pub fn vreview() -> Self {
        LabelRule {
            positive: 7.5,
            negative: 5.0,
        }
    }

    pub fn label(&self, score: f64) -> Option<Label> {
        if score > self.positive {
            Some(Label::Positive)
        } else if score < self.negative {
            Some(Label::Negative)
        } else {
            None
        }
    }
}

/// Labels every record from its score. Returns the labeled records and the
/// number dropped in the neutral band.
pub fn apply_label_rule(records: &[ReviewRecord], rule: &LabelRule) -> Result<(Vec<ReviewRecord>, usize)> {
    let mut labeled = Vec::new();
    let mut dropped = 0;
    for (i, r) in records.iter().enumerate() {
        let score = r
            .avg_score
            .ok_or_else(|| Error::contract(format!("record {i} has no avg_score")))?;
        match rule.label(score) {
            Some(label) => labeled.push(ReviewRecord {
                label: Some(label),
                ..r.clone()
            }),
            None => dropped += 1,
        }
    }
    Ok((labeled, dropped))
}

/// Deterministic train/test partition. Both halves keep input order.
pub fn split(
    records: &[ReviewRecord],
    test_fraction: f64,
    seed: u64,
    stratified: bool,
) -> Result<(Vec<ReviewRecord>, Vec<ReviewRecord>)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::validation(format!("test fraction {test_fraction} must be in (0, 1)")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut in_test = vec![false; records.len()];
    let groups: Vec<Vec<usize>> = if stratified {
        let labels = gold_labels(records)?;
        let by_class: Vec<Vec<usize>> = [0u8, 1]
            .iter()
            .map(|&c| (0..records.len()).filter(|&i| labels[i] == c).collect())
            .collect();
        if let Some(small) = by_class.iter().position(|g| g.len() < 2) {
            return Err(Error::validation(format!(
                "class {} has {} records; stratified split needs at least 2",
                Label::from_u8(small as u8),
                by_class[small].len()
            )));
        }
        by_class
    } else {
        vec![(0..records.len()).collect()]
    };
    for mut group in groups {
        let n_test = (group.len() as f64 * test_fraction).round() as usize;
        group.shuffle(&mut rng);
        for &i in &group[..n_test] {
            in_test[i] = true;
        }
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (r, &t) in records.iter().zip(&in_test) {
        if t {
            test.push(r.clone());
        } else {
            train.push(r.clone());
        }
    }
    if train.is_empty() || test.is_empty() {
        return Err(Error::validation(format!(
            "split of {} records at fraction {test_fraction} leaves an empty side",
            records.len()
        )));
    }
    Ok((train, test))
}

/// Whitespace word-count distribution of a corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub count: usize,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub min: f64,
    pub p25: f64,
    pub p50: f64,
    pub p75: f64,
    pub max: f64,
}

/// Linear interpolation at position `q * (n - 1)` of a sorted list.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn compute_stats_from_counts(counts: &[usize]) -> Result<CorpusStats> {
    if counts.is_empty() {
        return Err(Error::validation("cannot compute statistics of zero records"));
    }
    let mut sorted: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mean = sorted.iter().sum::<f64>() / n;
    let var = sorted.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / n;
    Ok(CorpusStats {
        count: counts.len(),
        mean,
        std: var.sqrt(),
        min: sorted[0],
        p25: percentile(&sorted, 0.25),
        p50: percentile(&sorted, 0.5),
        p75: percentile(&sorted, 0.75),
        max: sorted[sorted.len() - 1],
    })
}

pub fn compute_stats(records: &[ReviewRecord]) -> Result<CorpusStats> {
    let counts: Vec<usize> = records.iter().map(|r| r.text.split_whitespace().count()).collect();
    compute_stats_from_counts(&counts)
}

impl CorpusStats {
    pub const FIELD_NAMES: [&'static str; 7] = ["Mean", "Std", "Min", "25%", "50%", "75%", "Max"];

    /// The seven reported fields in table order.
    pub fn fields(&self) -> [(&'static str, f64); 7] {
        let v = [self.mean, self.std, self.min, self.p25, self.p50, self.p75, self.max];
        let mut out = [("", 0.0); 7];
        for (i, (name, value)) in Self::FIELD_NAMES.iter().zip(v).enumerate() {
            out[i] = (name, value);
        }
        out
    }

    /// Aligned two-column table, one row per field.
    pub fn table(&self, dataset: &str) -> String {
        let width = dataset.len().max(8);
        let mut s = format!("{:<6}  {:>width$}\n", "", dataset);
        for (name, value) in self.fields() {
            s.push_str(&format!("{name:<6}  {value:>width$.2}\n"));
        }
        s
    }

    pub fn to_json(&self, dataset: &str) -> serde_json::Value {
        let mut fields = serde_json::Map::new();
        for (name, value) in self.fields() {
            fields.insert(name.to_string(), value.into());
        }
        serde_json::json!({ "dataset": dataset, "records": self.count, "stats": fields })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema() -> Schema {
        Schema::default()
    }

    #[test]
    fn quoted_csv_row() {
        let got = ingest_str("text,avg_score\n\"ngon, rẻ\",9.0\n", Format::Delimited(','), &schema()).unwrap();
        assert_eq!(got.records, vec![ReviewRecord::scored("ngon, rẻ", 9.0)]);
    }

    #[test]
    fn empty_file() {
        let got = ingest_str("", Format::Delimited(','), &schema()).unwrap();
        assert!(got.records.is_empty());
    }

    #[test]
    fn absent_column_is_schema_error() {
        let s = Schema {
            score: Some("rating".into()),
            ..schema()
        };
        assert!(matches!(
            ingest_str("text,avg_score\nx,1\n", Format::Delimited(','), &s),
            Err(Error::Schema(_))
        ));
    }

    #[test]
    fn empty_text_dropped_and_counted() {
        let got = ingest_str("text,avg_score\n,9\n  ,3\nok,2\n", Format::Delimited(','), &schema()).unwrap();
        assert_eq!(got.records.len(), 1);
        assert_eq!(got.dropped_empty, 2);
    }

    #[test]
    fn jsonl_with_label() {
        let s = Schema {
            text: "text".into(),
            score: None,
            label: Some("label".into()),
        };
        let got = ingest_str(
            "{\"text\":\"tốt\",\"label\":\"positive\"}\n{\"text\":\"tệ\",\"label\":0}\n",
            Format::JsonLines,
            &s,
        )
        .unwrap();
        assert_eq!(got.records[0].label, Some(Label::Positive));
        assert_eq!(got.records[1].label, Some(Label::Negative));
    }

    #[test]
    fn jsonl_round_trip() {
        let recs = vec![ReviewRecord::labeled("a \"b\"", Label::Positive), ReviewRecord::labeled("c", Label::Negative)];
        let mut buf = Vec::new();
        write_jsonl(&recs, &mut buf).unwrap();
        let s = Schema {
            text: "text".into(),
            score: None,
            label: Some("label".into()),
        };
        let back = ingest_str(std::str::from_utf8(&buf).unwrap(), Format::JsonLines, &s).unwrap();
        assert_eq!(back.records, recs);
    }

    #[test]
    fn ntc_sv_rule() {
        let r = LabelRule::ntc_sv();
        assert_eq!(r.label(9.0), Some(Label::Positive));
        assert_eq!(r.label(6.0), None);
        assert_eq!(r.label(8.5), None);
        assert_eq!(r.label(5.0), None);
        assert_eq!(r.label(4.99), Some(Label::Negative));
    }

    #[test]
    fn vreview_rule() {
        let r = LabelRule::vreview();
        assert_eq!(r.label(4.9), Some(Label::Negative));
        assert_eq!(r.label(7.6), Some(Label::Positive));
        assert_eq!(r.label(7.5), None);
    }

    #[test]
    fn rule_requires_ordered_thresholds() {
        assert!(LabelRule::new(4.0, 5.0).is_err());
        assert!(LabelRule::new(5.0, 5.0).is_ok());
    }

    #[test]
    fn missing_score_is_contract_error() {
        let recs = vec![ReviewRecord::labeled("x", Label::Positive)];
        assert!(matches!(
            apply_label_rule(&recs, &LabelRule::ntc_sv()),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn split_sizes() {
        let recs: Vec<_> = (0..10).map(|i| ReviewRecord::scored(format!("r{i}"), 1.0)).collect();
        let (train, test) = split(&recs, 0.2, 3, false).unwrap();
        assert_eq!((train.len(), test.len()), (8, 2));
        let again = split(&recs, 0.2, 3, false).unwrap();
        assert_eq!(again.1, test);
    }

    #[test]
    fn stratified_split_ratio() {
        let recs: Vec<_> = (0..10)
            .map(|i| ReviewRecord::labeled(format!("r{i}"), if i < 6 { Label::Positive } else { Label::Negative }))
            .collect();
        let (_, test) = split(&recs, 0.5, 1, true).unwrap();
        let pos = test.iter().filter(|r| r.label == Some(Label::Positive)).count();
        assert_eq!((pos, test.len() - pos), (3, 2));
    }

    #[test]
    fn stratified_needs_two_per_class() {
        let recs = vec![
            ReviewRecord::labeled("a", Label::Positive),
            ReviewRecord::labeled("b", Label::Positive),
            ReviewRecord::labeled("c", Label::Negative),
        ];
        assert!(matches!(split(&recs, 0.5, 0, true), Err(Error::Validation(_))));
    }

    #[test]
    fn median_of_four() {
        let s = compute_stats_from_counts(&[1, 2, 3, 4]).unwrap();
        assert_eq!(s.p50, 2.5);
        assert_eq!(s.p25, 1.75);
        assert_eq!(s.std, 1.25f64.sqrt());
    }

    #[test]
    fn single_record() {
        let s = compute_stats(&[ReviewRecord::scored("a b c d e f g", 9.0)]).unwrap();
        for v in [s.min, s.p25, s.p50, s.p75, s.max] {
            assert_eq!(v, 7.0);
        }
        assert!(compute_stats(&[]).is_err());
    }

    #[test]
    fn report_field_names() {
        let s = compute_stats_from_counts(&[3, 5]).unwrap();
        let names: Vec<_> = s.fields().iter().map(|f| f.0).collect();
        assert_eq!(names, ["Mean", "Std", "Min", "25%", "50%", "75%", "Max"]);
        let table = s.table("corpus");
        assert!(table.lines().nth(1).unwrap().starts_with("Mean"));
        let json = s.to_json("corpus");
        assert_eq!(json["stats"].as_object().unwrap().len(), 7);
    }
}
