//! File formats: example pools in JSONL or CSV, and experiment results in
//! CSV or JSON.
//!
//! # Example records
//!
//! JSONL, one object per line:
//!
//! ```text
//! {"id": "q1", "features": [0.1, 2.0], "cloud_probs": [0.5, 0.5], "edge_probs": [0.6, 0.4], "label": 1}
//! ```
//!
//! `features` and `label` are optional. Labels may be integers or strings;
//! strings are mapped to indices in first-seen order and the mapping is
//! returned with the examples.
//!
//! CSV files carry a header row with the columns `id`, optionally `label`,
//! `feat_0..feat_{d-1}`, `cloud_0..cloud_{K-1}` and `edge_0..edge_{K-1}`.
//! An empty `label` cell means unlabeled.
//!
//! # Result files
//!
//! CSV results use the fixed columns in [`RESULT_COLUMNS`]. Rows with
//! `kind = trial` hold per-trial values; every (edge method, cascade, alpha,
//! delta) cell is followed by a `mean` and an `se` row. JSON results are an
//! object with `schema_version` (currently [`SCHEMA_VERSION`]), a `trials`
//! array and an `aggregate` array, the latter omitted when there are no
//! trials.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::domain::{validate_example, Categorical, Example};
use crate::error::{Error, Result};
use crate::metrics::{MeanSe, TrialMetrics};

pub const SCHEMA_VERSION: u32 = 1;

pub const RESULT_COLUMNS: [&str; 13] = [
    "kind",
    "edge_method",
    "cascade",
    "alpha",
    "delta",
    "trial",
    "satisfaction_rate",
    "deferral_rate",
    "normalized_inefficiency",
    "fdp",
    "marginal_coverage",
    "n_selected",
    "empty_selection",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataFormat {
    Jsonl,
    Csv,
}

impl FromStr for DataFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "jsonl" => Ok(DataFormat::Jsonl),
            "csv" => Ok(DataFormat::Csv),
            other => Err(Error::InvalidConfig(format!(
                "unknown data format {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResultFormat {
    Csv,
    Json,
}

impl FromStr for ResultFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ResultFormat::Csv),
            "json" => Ok(ResultFormat::Json),
            other => Err(Error::InvalidConfig(format!(
                "unknown result format {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RawLabel {
    Index(usize),
    Name(String),
}

/// Wire format of one example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleRecord {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<Vec<f64>>,
    pub cloud_probs: Vec<f64>,
    pub edge_probs: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<RawLabel>,
}

impl From<&Example> for ExampleRecord {
    fn from(e: &Example) -> Self {
        Self {
            id: e.id.clone(),
            features: (!e.features.is_empty()).then(|| e.features.clone()),
            cloud_probs: e.cloud_dist.probs().to_vec(),
            edge_probs: e.edge_dist.probs().to_vec(),
            label: e.label.map(RawLabel::Index),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedExamples {
    pub examples: Vec<Example>,
    pub num_labels: usize,
    /// Names of string labels by index, when the file used string labels.
    pub label_names: Option<Vec<String>>,
}

#[derive(Default)]
struct LabelMapper {
    names: Vec<String>,
    lookup: HashMap<String, usize>,
    saw_index: bool,
}

impl LabelMapper {
    fn map(&mut self, raw: RawLabel, line: usize) -> Result<usize> {
        match raw {
            RawLabel::Index(i) => {
                if !self.names.is_empty() {
                    return Err(mixed_labels(line));
                }
                self.saw_index = true;
                Ok(i)
            }
            RawLabel::Name(name) => {
                if self.saw_index {
                    return Err(mixed_labels(line));
                }
                let next = self.names.len();
                Ok(*self.lookup.entry(name.clone()).or_insert_with(|| {
                    self.names.push(name);
                    next
                }))
            }
        }
    }

    fn into_names(self) -> Option<Vec<String>> {
        (!self.names.is_empty()).then_some(self.names)
    }
}

fn mixed_labels(line: usize) -> Error {
    Error::Parse {
        line,
        message: "mixes integer and string labels".into(),
    }
}

struct Builder {
    num_labels: Option<usize>,
    labels: LabelMapper,
    examples: Vec<Example>,
}

impl Builder {
    fn new() -> Self {
        Self {
            num_labels: None,
            labels: LabelMapper::default(),
            examples: Vec::new(),
        }
    }

    fn push(&mut self, record: ExampleRecord, line: usize) -> Result<()> {
        let k = record.cloud_probs.len();
        let expected = *self.num_labels.get_or_insert(k);
        for found in [k, record.edge_probs.len()] {
            if found != expected {
                return Err(Error::InconsistentK {
                    line,
                    expected,
                    found,
                });
            }
        }
        let wrap = |source: Error| Error::Validation {
            line,
            source: Box::new(source),
        };
        let label = record
            .label
            .map(|raw| self.labels.map(raw, line))
            .transpose()?;
        let example = Example {
            id: record.id,
            features: record.features.unwrap_or_default(),
            cloud_dist: Categorical::new(record.cloud_probs).map_err(wrap)?,
            edge_dist: Categorical::new(record.edge_probs).map_err(wrap)?,
            label,
        };
        validate_example(&example).map_err(wrap)?;
        self.examples.push(example);
        Ok(())
    }

    fn finish(self) -> Result<LoadedExamples> {
        let num_labels = self
            .num_labels
            .ok_or(Error::EmptyInput("no examples in file"))?;
        Ok(LoadedExamples {
            examples: self.examples,
            num_labels,
            label_names: self.labels.into_names(),
        })
    }
}

pub fn load_examples(path: &Path, format: DataFormat) -> Result<LoadedExamples> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    match format {
        DataFormat::Jsonl => read_jsonl(BufReader::new(file), path),
        DataFormat::Csv => read_csv(file),
    }
}

fn read_jsonl<R: BufRead>(reader: R, path: &Path) -> Result<LoadedExamples> {
    let mut builder = Builder::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: ExampleRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        builder.push(record, lineno)?;
    }
    builder.finish()
}

fn read_csv<R: std::io::Read>(reader: R) -> Result<LoadedExamples> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let parse_err = |line: usize, message: String| Error::Parse { line, message };
    let headers = rdr
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .clone();
    let column = |name: &str| headers.iter().position(|h| h == name);
    let numbered = |prefix: &str| -> Vec<usize> {
        (0..)
            .map(|j| column(&format!("{prefix}{j}")))
            .take_while(Option::is_some)
            .flatten()
            .collect()
    };
    let id_col = column("id").ok_or_else(|| parse_err(1, "missing id column".into()))?;
    let label_col = column("label");
    let feat_cols = numbered("feat_");
    let cloud_cols = numbered("cloud_");
    let edge_cols = numbered("edge_");
    if edge_cols.len() != cloud_cols.len() {
        return Err(Error::InconsistentK {
            line: 1,
            expected: cloud_cols.len(),
            found: edge_cols.len(),
        });
    }

    let mut builder = Builder::new();
    for (i, row) in rdr.records().enumerate() {
        let lineno = i + 2;
        let row = row.map_err(|e| parse_err(lineno, e.to_string()))?;
        let num = |c: usize| -> Result<f64> {
            row[c]
                .trim()
                .parse::<f64>()
                .map_err(|e| parse_err(lineno, format!("column {}: {e}", &headers[c])))
        };
        let nums = |cols: &[usize]| cols.iter().map(|&c| num(c)).collect::<Result<Vec<f64>>>();
        let label = match label_col.map(|c| row[c].trim()) {
            None | Some("") => None,
            Some(cell) => Some(match cell.parse::<usize>() {
                Ok(i) => RawLabel::Index(i),
                Err(_) => RawLabel::Name(cell.to_string()),
            }),
        };
        let record = ExampleRecord {
            id: row[id_col].to_string(),
            features: (!feat_cols.is_empty())
                .then(|| nums(&feat_cols))
                .transpose()?,
            cloud_probs: nums(&cloud_cols)?,
            edge_probs: nums(&edge_cols)?,
            label,
        };
        builder.push(record, lineno)?;
    }
    builder.finish()
}

/// Writes examples in the loader's format.
pub fn write_examples(examples: &[Example], path: &Path, format: DataFormat) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let io = |e: std::io::Error| Error::io(path, e);
    match format {
        DataFormat::Jsonl => {
            for e in examples {
                let line =
                    serde_json::to_string(&ExampleRecord::from(e)).expect("records serialize");
                writeln!(out, "{line}").map_err(io)?;
            }
        }
        DataFormat::Csv => {
            let k = examples.first().map_or(0, Example::num_labels);
            let d = examples.first().map_or(0, |e| e.features.len());
            let mut header = vec!["id".to_string(), "label".to_string()];
            header.extend((0..d).map(|j| format!("feat_{j}")));
            header.extend((0..k).map(|j| format!("cloud_{j}")));
            header.extend((0..k).map(|j| format!("edge_{j}")));
            let mut w = csv::Writer::from_writer(&mut out);
            w.write_record(&header)
                .map_err(|e| Error::io(path, e.into()))?;
            for e in examples {
                let mut row = vec![
                    e.id.clone(),
                    e.label.map(|l| l.to_string()).unwrap_or_default(),
                ];
                row.extend(e.features.iter().map(f64::to_string));
                row.extend(e.cloud_dist.probs().iter().map(f64::to_string));
                row.extend(e.edge_dist.probs().iter().map(f64::to_string));
                w.write_record(&row)
                    .map_err(|e| Error::io(path, e.into()))?;
            }
            w.flush().map_err(io)?;
        }
    }
    out.flush().map_err(io)
}

/// One routed trial for one experiment cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub edge_method: String,
    pub cascade: String,
    pub alpha: f64,
    pub delta: f64,
    pub trial: usize,
    #[serde(flatten)]
    pub metrics: TrialMetrics,
}

/// Mean and standard error of every metric over the trials of one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub edge_method: String,
    pub cascade: String,
    pub alpha: f64,
    pub delta: f64,
    pub trials: usize,
    pub satisfaction_rate: MeanSe,
    /// Satisfaction rate averaged over trials with a non-empty selection.
    pub satisfaction_rate_nonempty: Option<MeanSe>,
    pub deferral_rate: MeanSe,
    pub normalized_inefficiency: MeanSe,
    pub fdp: MeanSe,
    pub marginal_coverage: Option<MeanSe>,
    pub n_selected: MeanSe,
    pub empty_selection_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsFile {
    pub schema_version: u32,
    pub trials: Vec<TrialRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aggregate: Option<Vec<CellSummary>>,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_results(
    trials: &[TrialRecord],
    aggregate: &[CellSummary],
    path: &Path,
    format: ResultFormat,
) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let io = |e: std::io::Error| Error::io(path, e);
    match format {
        ResultFormat::Json => {
            let doc = ResultsFile {
                schema_version: SCHEMA_VERSION,
                trials: trials.to_vec(),
                aggregate: (!trials.is_empty()).then(|| aggregate.to_vec()),
            };
            serde_json::to_writer_pretty(&mut out, &doc).map_err(|e| io(e.into()))?;
            writeln!(out).map_err(io)?;
        }
        ResultFormat::Csv => {
            let mut w = csv::Writer::from_writer(&mut out);
            let csv_io = |e: csv::Error| Error::io(path, e.into());
            w.write_record(RESULT_COLUMNS).map_err(csv_io)?;
            for t in trials {
                let m = &t.metrics;
                w.write_record([
                    "trial".to_string(),
                    t.edge_method.clone(),
                    t.cascade.clone(),
                    t.alpha.to_string(),
                    t.delta.to_string(),
                    t.trial.to_string(),
                    m.satisfaction_rate.to_string(),
                    m.deferral_rate.to_string(),
                    m.normalized_inefficiency.to_string(),
                    m.fdp.to_string(),
                    fmt_opt(m.marginal_coverage),
                    m.n_selected.to_string(),
                    u8::from(m.empty_selection).to_string(),
                ])
                .map_err(csv_io)?;
            }
            if !trials.is_empty() {
                for c in aggregate {
                    for kind in ["mean", "se"] {
                        let pick = |s: &MeanSe| if kind == "mean" { s.mean } else { s.se };
                        w.write_record([
                            kind.to_string(),
                            c.edge_method.clone(),
                            c.cascade.clone(),
                            c.alpha.to_string(),
                            c.delta.to_string(),
                            String::new(),
                            pick(&c.satisfaction_rate).to_string(),
                            pick(&c.deferral_rate).to_string(),
                            pick(&c.normalized_inefficiency).to_string(),
                            pick(&c.fdp).to_string(),
                            fmt_opt(c.marginal_coverage.as_ref().map(pick)),
                            pick(&c.n_selected).to_string(),
                            if kind == "mean" {
                                c.empty_selection_rate.to_string()
                            } else {
                                String::new()
                            },
                        ])
                        .map_err(csv_io)?;
                    }
                }
            }
            w.flush().map_err(io)?;
        }
    }
    out.flush().map_err(io)
}

pub fn read_results_json(path: &Path) -> Result<ResultsFile> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        line: e.line(),
        message: e.to_string(),
    })
}
