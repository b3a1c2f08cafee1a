//! Evaluation metrics, reliability diagrams and the screening martingale.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::cascade::{Origin, PoolItem};
use crate::domain::PredictionSet;
use crate::error::{Error, Result};

/// Fraction of selected inputs whose true alignment misses `1 - alpha`;
/// zero for an empty selection.
pub fn fdp(selected_true_alignments: &[f64], alpha: f64) -> f64 {
    if selected_true_alignments.is_empty() {
        return 0.0;
    }
    let misses = selected_true_alignments
        .iter()
        .filter(|&&c| c < 1.0 - alpha)
        .count();
    misses as f64 / selected_true_alignments.len() as f64
}

/// Complement of [`fdp`]; zero for an empty selection (0/0 = 0).
pub fn satisfaction_rate(selected_true_alignments: &[f64], alpha: f64) -> f64 {
    if selected_true_alignments.is_empty() {
        return 0.0;
    }
    1.0 - fdp(selected_true_alignments, alpha)
}

pub fn deferral_rate(n_selected: usize, n_test: usize) -> f64 {
    1.0 - n_selected as f64 / n_test as f64
}

/// Mean of `|final| / |oracle|` over inputs.
pub fn normalized_inefficiency(
    final_sets: &[PredictionSet],
    oracle_sets: &[PredictionSet],
) -> Result<f64> {
    if final_sets.len() != oracle_sets.len() {
        return Err(Error::LengthMismatch {
            left: final_sets.len(),
            right: oracle_sets.len(),
        });
    }
    if final_sets.is_empty() {
        return Err(Error::EmptyInput("no prediction sets"));
    }
    let mut total = 0.0;
    for (i, (f, o)) in final_sets.iter().zip(oracle_sets).enumerate() {
        if o.is_empty() {
            return Err(Error::EmptyOracleSet(i));
        }
        total += f.len() as f64 / o.len() as f64;
    }
    Ok(total / final_sets.len() as f64)
}

pub fn marginal_coverage(sets: &[PredictionSet], labels: &[usize]) -> Result<f64> {
    if sets.len() != labels.len() {
        return Err(Error::LengthMismatch {
            left: sets.len(),
            right: labels.len(),
        });
    }
    if sets.is_empty() {
        return Err(Error::EmptyInput("no prediction sets"));
    }
    let hits = sets
        .iter()
        .zip(labels)
        .filter(|(s, &y)| s.contains(y))
        .count();
    Ok(hits as f64 / sets.len() as f64)
}

/// Per-trial evaluation record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialMetrics {
    pub satisfaction_rate: f64,
    pub deferral_rate: f64,
    pub normalized_inefficiency: f64,
    pub fdp: f64,
    pub marginal_coverage: Option<f64>,
    pub n_selected: usize,
    pub empty_selection: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityBin {
    pub lower: f64,
    pub upper: f64,
    /// Mean confidence of the bin, `None` when empty.
    pub confidence_mean: Option<f64>,
    pub accuracy: Option<f64>,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityDiagram {
    pub bin_edges: Vec<f64>,
    pub bins: Vec<ReliabilityBin>,
}

impl ReliabilityDiagram {
    pub fn total_count(&self) -> usize {
        self.bins.iter().map(|b| b.count).sum()
    }
}

/// Equal-width, right-closed bins over `[0, 1]`; a confidence of exactly 0
/// lands in the first bin.
pub fn reliability_diagram(
    confidences: &[f64],
    correct: &[bool],
    n_bins: usize,
) -> Result<ReliabilityDiagram> {
    if confidences.len() != correct.len() {
        return Err(Error::LengthMismatch {
            left: confidences.len(),
            right: correct.len(),
        });
    }
    if n_bins == 0 {
        return Err(Error::InvalidConfig(
            "reliability diagram needs at least one bin".into(),
        ));
    }
    let edges: Vec<f64> = (0..=n_bins).map(|i| i as f64 / n_bins as f64).collect();
    let mut conf_sum = vec![0.0; n_bins];
    let mut hits = vec![0usize; n_bins];
    let mut counts = vec![0usize; n_bins];
    for (&c, &ok) in confidences.iter().zip(correct) {
        if !(0.0..=1.0).contains(&c) {
            return Err(Error::FeatureOutOfRange(c));
        }
        // first upper edge >= c
        let b = edges[1..].partition_point(|&e| e < c).min(n_bins - 1);
        conf_sum[b] += c;
        counts[b] += 1;
        hits[b] += usize::from(ok);
    }
    let bins = (0..n_bins)
        .map(|b| {
            let n = counts[b];
            ReliabilityBin {
                lower: edges[b],
                upper: edges[b + 1],
                confidence_mean: (n > 0).then(|| conf_sum[b] / n as f64),
                accuracy: (n > 0).then(|| hits[b] as f64 / n as f64),
                count: n,
            }
        })
        .collect();
    Ok(ReliabilityDiagram {
        bin_edges: edges,
        bins,
    })
}

/// Screening martingale `M_l` for every step `l = 0..=N` of an ordered pool.
///
/// `M_l` is the number of unscreened misaligned test items divided by one
/// plus the number of unscreened misaligned validation items. Test items have
/// no true alignment inside the pool, so their held-out values come from
/// `test_truth`, keyed by example id.
pub fn martingale_trajectory(
    order: &[PoolItem],
    test_truth: &HashMap<String, f64>,
    alpha: f64,
) -> Result<Vec<f64>> {
    let coverage = 1.0 - alpha;
    let mut miss_flags = Vec::with_capacity(order.len());
    for item in order {
        let c = match item.origin() {
            Origin::Validation => item.true_score(),
            Origin::Test => test_truth.get(item.example_id()).copied(),
        }
        .ok_or_else(|| Error::MissingTrueAlignment(item.example_id().to_string()))?;
        miss_flags.push((item.origin(), c < coverage));
    }
    let mut te_miss = miss_flags
        .iter()
        .filter(|(o, m)| *o == Origin::Test && *m)
        .count();
    let mut val_miss = miss_flags
        .iter()
        .filter(|(o, m)| *o == Origin::Validation && *m)
        .count();
    let mut out = Vec::with_capacity(order.len() + 1);
    out.push(te_miss as f64 / (1.0 + val_miss as f64));
    for (origin, missed) in miss_flags {
        if missed {
            match origin {
                Origin::Test => te_miss -= 1,
                Origin::Validation => val_miss -= 1,
            }
        }
        out.push(te_miss as f64 / (1.0 + val_miss as f64));
    }
    Ok(out)
}

/// Sample mean and standard error of the mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSe {
    pub mean: f64,
    pub se: f64,
    pub n: usize,
}

impl MeanSe {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self {
                mean: f64::NAN,
                se: f64::NAN,
                n,
            };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let se = if n < 2 {
            0.0
        } else {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        };
        Self { mean, se, n }
    }
}
