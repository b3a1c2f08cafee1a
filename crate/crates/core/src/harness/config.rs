//! Experiment configuration, read from TOML.
//!
//! ```toml
//! [data]
//! source = "synthetic"        # or "file", with path and format
//!
//! [synthetic]
//! num_labels = 10
//! edge_temperature = 0.5
//!
//! [partition]
//! cal = 500
//! tr = 200
//! val = 500
//! te = 100
//!
//! [method]
//! edge_sets = ["hms", "cp", "lcp"]
//! cascades = ["cab", "cbd"]
//! kernel = "gaussian"
//! # bandwidth = 3.0         # omitted: calibrated from the pool
//!
//! [risk]
//! alphas = [0.2]
//! deltas = [0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4]
//!
//! [run]
//! trials = 200
//! base_seed = 0
//!
//! [output]
//! path = "results.csv"
//! format = "csv"
//! ```

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::domain::{check_alpha, PartitionSizes};
use crate::error::{Error, Result};
use crate::ingest::{DataFormat, ResultFormat};
use crate::synth::SynthConfig;

/// Grid of `delta` values used when a config gives none.
pub const DEFAULT_DELTAS: [f64; 8] = [0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4];
pub const DEFAULT_ALPHA: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceKind {
    Synthetic,
    File,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub source: SourceKind,
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub format: Option<DataFormat>,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            source: SourceKind::Synthetic,
            path: None,
            format: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeSetKind {
    Hms,
    Cp,
    Lcp,
}

impl EdgeSetKind {
    pub fn name(self) -> &'static str {
        match self {
            EdgeSetKind::Hms => "hms",
            EdgeSetKind::Cp => "cp",
            EdgeSetKind::Lcp => "lcp",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CascadeMethod {
    CloudOnly,
    EdgeOnly,
    Cbd,
    Cab,
}

impl CascadeMethod {
    pub fn name(self) -> &'static str {
        match self {
            CascadeMethod::CloudOnly => "cloud_only",
            CascadeMethod::EdgeOnly => "edge_only",
            CascadeMethod::Cbd => "cbd",
            CascadeMethod::Cab => "cab",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    Gaussian,
    Constant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictorKind {
    /// Isotonic fit on the training split.
    Isotonic,
    /// Fixed prediction, ignoring the training split.
    Constant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodSection {
    #[serde(default = "default_edge_sets")]
    pub edge_sets: Vec<EdgeSetKind>,
    #[serde(default = "default_cascades")]
    pub cascades: Vec<CascadeMethod>,
    #[serde(default = "default_kernel")]
    pub kernel: KernelKind,
    /// Gaussian bandwidth; calibrated from the pool when absent.
    #[serde(default)]
    pub bandwidth: Option<f64>,
    /// Bandwidth sweep for LCP; each value becomes its own `lcp_h<h>` cell.
    /// Takes precedence over `bandwidth` when non-empty.
    #[serde(default)]
    pub bandwidths: Vec<f64>,
    /// Confidence threshold for CbD; `1 - delta` when absent.
    #[serde(default)]
    pub gamma: Option<f64>,
    #[serde(default = "default_predictor")]
    pub predictor: PredictorKind,
    #[serde(default = "default_predictor_constant")]
    pub predictor_constant: f64,
}

fn default_edge_sets() -> Vec<EdgeSetKind> {
    vec![EdgeSetKind::Hms]
}
fn default_cascades() -> Vec<CascadeMethod> {
    vec![CascadeMethod::Cab]
}
fn default_kernel() -> KernelKind {
    KernelKind::Gaussian
}
fn default_predictor() -> PredictorKind {
    PredictorKind::Isotonic
}
fn default_predictor_constant() -> f64 {
    0.5
}

impl Default for MethodSection {
    fn default() -> Self {
        Self {
            edge_sets: default_edge_sets(),
            cascades: default_cascades(),
            kernel: default_kernel(),
            bandwidth: None,
            bandwidths: Vec::new(),
            gamma: None,
            predictor: default_predictor(),
            predictor_constant: default_predictor_constant(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RiskSection {
    #[serde(default = "default_alphas")]
    pub alphas: Vec<f64>,
    #[serde(default = "default_deltas")]
    pub deltas: Vec<f64>,
}

fn default_alphas() -> Vec<f64> {
    vec![DEFAULT_ALPHA]
}
fn default_deltas() -> Vec<f64> {
    DEFAULT_DELTAS.to_vec()
}

impl Default for RiskSection {
    fn default() -> Self {
        Self {
            alphas: default_alphas(),
            deltas: default_deltas(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub base_seed: u64,
    /// Worker threads; 0 uses every core.
    #[serde(default)]
    pub workers: usize,
    #[serde(default = "default_bins")]
    pub reliability_bins: usize,
}

fn default_trials() -> usize {
    200
}
fn default_bins() -> usize {
    10
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            trials: default_trials(),
            base_seed: 0,
            workers: 0,
            reliability_bins: default_bins(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_out")]
    pub path: PathBuf,
    #[serde(default = "default_out_format")]
    pub format: ResultFormat,
}

fn default_out() -> PathBuf {
    PathBuf::from("results.csv")
}
fn default_out_format() -> ResultFormat {
    ResultFormat::Csv
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            path: default_out(),
            format: default_out_format(),
        }
    }
}

/// Everything needed to reproduce one experiment.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub synthetic: SynthConfig,
    #[serde(default)]
    pub partition: PartitionSizes,
    #[serde(default)]
    pub method: MethodSection,
    #[serde(default)]
    pub risk: RiskSection,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub output: OutputSection,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.method.edge_sets.is_empty() || self.method.cascades.is_empty() {
            return bad("edge_sets and cascades must be non-empty".into());
        }
        if self.risk.alphas.is_empty() || self.risk.deltas.is_empty() {
            return bad("alpha and delta sweeps must be non-empty".into());
        }
        for &a in &self.risk.alphas {
            check_alpha(a)?;
        }
        for &d in &self.risk.deltas {
            if !(d > 0.0 && d < 1.0) {
                return Err(Error::InvalidDelta(d));
            }
        }
        for &h in self.method.bandwidth.iter().chain(&self.method.bandwidths) {
            if !(h > 0.0 && h.is_finite()) {
                return Err(Error::InvalidBandwidth(h));
            }
        }
        if let Some(g) = self.method.gamma {
            if !(0.0..=1.0).contains(&g) {
                return bad(format!("gamma must lie in [0, 1], got {g}"));
            }
        }
        if !(0.0..=1.0).contains(&self.method.predictor_constant) {
            return bad("predictor_constant must lie in [0, 1]".into());
        }
        if self.partition.val == 0 || self.partition.te == 0 || self.partition.tr == 0 {
            return bad("tr, val and te partitions must be non-empty".into());
        }
        if self.run.reliability_bins == 0 {
            return bad("reliability_bins must be at least 1".into());
        }
        match self.data.source {
            SourceKind::Synthetic => {
                self.synthetic.validate()?;
                if self.synthetic.pool_size < self.partition.total() {
                    return bad(format!(
                        "pool_size {} is smaller than the partition total {}",
                        self.synthetic.pool_size,
                        self.partition.total()
                    ));
                }
            }
            SourceKind::File => {
                if self.data.path.is_none() {
                    return bad("file data source needs a path".into());
                }
            }
        }
        Ok(())
    }

    pub fn data_format(&self) -> DataFormat {
        self.data.format.unwrap_or_else(|| {
            match self
                .data
                .path
                .as_ref()
                .and_then(|p| p.extension())
                .and_then(|e| e.to_str())
            {
                Some("csv") => DataFormat::Csv,
                _ => DataFormat::Jsonl,
            }
        })
    }
}
