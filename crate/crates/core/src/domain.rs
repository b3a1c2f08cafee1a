//! Core value types: label spaces, categorical distributions, examples,
//! risk levels, prediction sets and data partitions.
//!
//! Everything here is immutable once built and can be shared freely across
//! threads.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mass-sum deviation accepted without touching the vector.
pub const MASS_TOLERANCE: f64 = 1e-9;
/// Mass-sum deviation that is still repaired by renormalization.
pub const RENORMALIZE_TOLERANCE: f64 = 1e-6;

/// A finite label space `{0, .., K-1}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSpace {
    num_labels: usize,
}

impl LabelSpace {
    pub fn new(num_labels: usize) -> Result<Self> {
        if num_labels < 2 {
            return Err(Error::InvalidLabelSpace(num_labels));
        }
        Ok(Self { num_labels })
    }

    pub fn num_labels(&self) -> usize {
        self.num_labels
    }
}

/// Probability mass function over a finite label space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Categorical {
    probs: Vec<f64>,
}

impl Categorical {
    /// Validates `probs`, renormalizing small rounding drift.
    ///
    /// Sums within `1e-9` of one are kept verbatim, sums within `1e-6` are
    /// rescaled (with a warning) and anything further off is rejected.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        let sum = check_masses(&probs)?;
        let drift = (sum - 1.0).abs();
        if drift <= MASS_TOLERANCE {
            Ok(Self { probs })
        } else if drift <= RENORMALIZE_TOLERANCE {
            log::warn!("renormalizing distribution with mass {sum}");
            Ok(Self {
                probs: probs.into_iter().map(|p| p / sum).collect(),
            })
        } else {
            Err(Error::NotADistribution(format!("masses sum to {sum}")))
        }
    }

    /// Wraps `probs` without any check. Use [`Categorical::validate`] before
    /// relying on it.
    pub fn new_unchecked(probs: Vec<f64>) -> Self {
        Self { probs }
    }

    /// Uniform distribution over `num_labels` labels.
    pub fn uniform(num_labels: usize) -> Self {
        Self {
            probs: vec![1.0 / num_labels as f64; num_labels],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let sum = check_masses(&self.probs)?;
        if (sum - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::NotADistribution(format!("masses sum to {sum}")));
        }
        Ok(())
    }

    pub fn num_labels(&self) -> usize {
        self.probs.len()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob(&self, label: usize) -> f64 {
        self.probs[label]
    }

    /// Largest single-label probability.
    pub fn max_prob(&self) -> f64 {
        self.probs.iter().copied().fold(0.0, f64::max)
    }

    /// Label with the highest probability, lowest index on ties.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = i;
            }
        }
        best
    }

    /// Total mass of `set`, clamped to `[0, 1]`.
    pub fn mass(&self, set: &PredictionSet) -> Result<f64> {
        if let Some(&last) = set.members().last() {
            if last >= self.num_labels() {
                return Err(Error::DimensionMismatch {
                    expected: self.num_labels(),
                    found: last + 1,
                });
            }
        }
        let total: f64 = set.members().iter().map(|&y| self.probs[y]).sum();
        Ok(total.clamp(0.0, 1.0))
    }
}

fn check_masses(probs: &[f64]) -> Result<f64> {
    if probs.len() < 2 {
        return Err(Error::InvalidLabelSpace(probs.len()));
    }
    if let Some(bad) = probs.iter().find(|p| !p.is_finite() || **p < 0.0) {
        return Err(Error::NotADistribution(format!("invalid mass {bad}")));
    }
    Ok(probs.iter().sum())
}

/// One input together with its cloud and edge predictive distributions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub id: String,
    #[serde(default)]
    pub features: Vec<f64>,
    pub cloud_dist: Categorical,
    pub edge_dist: Categorical,
    #[serde(default)]
    pub label: Option<usize>,
}

impl Example {
    pub fn num_labels(&self) -> usize {
        self.cloud_dist.num_labels()
    }
}

/// Checks every [`Example`] invariant.
pub fn validate_example(example: &Example) -> Result<()> {
    let k = example.cloud_dist.num_labels();
    if example.edge_dist.num_labels() != k {
        return Err(Error::DimensionMismatch {
            expected: k,
            found: example.edge_dist.num_labels(),
        });
    }
    example.cloud_dist.validate()?;
    example.edge_dist.validate()?;
    if let Some(label) = example.label {
        if label >= k {
            return Err(Error::LabelOutOfRange {
                label,
                num_labels: k,
            });
        }
    }
    if example.features.iter().any(|f| !f.is_finite()) {
        return Err(Error::NotADistribution(format!(
            "non-finite feature in example {}",
            example.id
        )));
    }
    Ok(())
}

/// Target miscoverage `alpha` and tolerated violation level `delta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskSpec {
    alpha: f64,
    delta: f64,
}

impl RiskSpec {
    pub fn new(alpha: f64, delta: f64) -> Result<Self> {
        check_alpha(alpha)?;
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::InvalidDelta(delta));
        }
        Ok(Self { alpha, delta })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// Required conditional coverage `1 - alpha`.
    pub fn coverage(&self) -> f64 {
        1.0 - self.alpha
    }
}

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if (0.0..1.0).contains(&alpha) {
        Ok(())
    } else {
        Err(Error::InvalidAlpha(alpha))
    }
}

/// Sorted, duplicate-free subset of labels.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PredictionSet {
    members: Vec<usize>,
}

impl PredictionSet {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn full(num_labels: usize) -> Self {
        Self {
            members: (0..num_labels).collect(),
        }
    }

    /// Builds a set from labels in any order; duplicates are dropped.
    pub fn from_labels(labels: impl IntoIterator<Item = usize>) -> Self {
        let mut members: Vec<usize> = labels.into_iter().collect();
        members.sort_unstable();
        members.dedup();
        Self { members }
    }

    pub fn members(&self) -> &[usize] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, label: usize) -> bool {
        self.members.binary_search(&label).is_ok()
    }

    pub fn is_subset(&self, other: &PredictionSet) -> bool {
        self.members.iter().all(|&y| other.contains(y))
    }
}

/// Split sizes for the calibration, training, validation and test sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PartitionSizes {
    pub cal: usize,
    pub tr: usize,
    pub val: usize,
    pub te: usize,
}

impl Default for PartitionSizes {
    fn default() -> Self {
        Self {
            cal: 500,
            tr: 200,
            val: 500,
            te: 100,
        }
    }
}

impl PartitionSizes {
    pub fn total(&self) -> usize {
        self.cal + self.tr + self.val + self.te
    }
}

/// Four disjoint index lists into one pool of examples.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataPartition {
    pub cal: Vec<usize>,
    pub tr: Vec<usize>,
    pub val: Vec<usize>,
    pub te: Vec<usize>,
}

impl DataPartition {
    /// Shuffles `0..pool_size` and cuts consecutive blocks of the requested
    /// sizes.
    pub fn random<R: Rng + ?Sized>(
        pool_size: usize,
        sizes: PartitionSizes,
        rng: &mut R,
    ) -> Result<Self> {
        if sizes.total() > pool_size {
            return Err(Error::InvalidConfig(format!(
                "partition needs {} examples but the pool has {pool_size}",
                sizes.total()
            )));
        }
        let mut idx: Vec<usize> = (0..pool_size).collect();
        idx.shuffle(rng);
        let mut rest = idx.into_iter();
        let mut take = |n: usize| rest.by_ref().take(n).collect::<Vec<_>>();
        Ok(Self {
            cal: take(sizes.cal),
            tr: take(sizes.tr),
            val: take(sizes.val),
            te: take(sizes.te),
        })
    }

    fn blocks(&self) -> [&[usize]; 4] {
        [&self.cal, &self.tr, &self.val, &self.te]
    }

    /// True when no index appears twice, within or across the four lists.
    pub fn is_disjoint(&self) -> bool {
        let blocks = self.blocks();
        for i in 0..4 {
            for j in (i + 1)..4 {
                let left: HashSet<usize> = blocks[i].iter().copied().collect();
                if blocks[j].iter().any(|x| left.contains(x)) {
                    return false;
                }
            }
        }
        blocks.iter().all(|b| {
            let unique: HashSet<usize> = b.iter().copied().collect();
            unique.len() == b.len()
        })
    }

    pub fn within(&self, pool_size: usize) -> bool {
        self.blocks()
            .iter()
            .all(|b| b.iter().all(|&i| i < pool_size))
    }
}
