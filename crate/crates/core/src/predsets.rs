//! Edge prediction sets: highest-mass sets, split conformal prediction and
//! localized conformal prediction with a Gaussian kernel.
//!
//! All conformal thresholds go through [`weighted_quantile`], a discrete
//! quantile over point masses that always returns one of its input values.
//! CP puts mass `1/(n+1)` on every calibration score plus mass `1/(n+1)` at
//! `+inf`; LCP replaces the uniform masses with kernel weights evaluated at a
//! random perturbation of the test input.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::domain::{check_alpha, Categorical, Example, PredictionSet};
use crate::error::{Error, Result};

/// Slack applied to cumulative-mass comparisons so sums that are exactly on
/// the boundary in exact arithmetic are not lost to rounding.
pub const CUMULATIVE_TOLERANCE: f64 = 1e-12;

/// Nonconformity score in `[0, +inf]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Score(f64);

impl Score {
    pub const INFINITY: Score = Score(f64::INFINITY);

    pub fn new(value: f64) -> Result<Self> {
        if value.is_nan() {
            Err(Error::NanScore)
        } else {
            Ok(Score(value))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// A point mass at `value` carrying a non-negative `weight`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightedPoint {
    pub value: f64,
    pub weight: f64,
}

impl WeightedPoint {
    pub fn new(value: f64, weight: f64) -> Self {
        Self { value, weight }
    }
}

/// Localization kernel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KernelSpec {
    Gaussian { bandwidth: f64 },
    Constant,
}

impl KernelSpec {
    pub fn gaussian(bandwidth: f64) -> Result<Self> {
        if bandwidth.is_finite() && bandwidth > 0.0 {
            Ok(KernelSpec::Gaussian { bandwidth })
        } else {
            Err(Error::InvalidBandwidth(bandwidth))
        }
    }
}

/// Highest-mass set: the smallest set of labels whose mass reaches `1 - alpha`.
///
/// Labels are added by descending probability, lower index first on ties.
pub fn hms(dist: &Categorical, alpha: f64) -> Result<PredictionSet> {
    check_alpha(alpha)?;
    let target = 1.0 - alpha;
    let mut order: Vec<usize> = (0..dist.num_labels()).collect();
    order.sort_by(|&a, &b| {
        dist.prob(b)
            .total_cmp(&dist.prob(a))
            .then_with(|| a.cmp(&b))
    });
    let mut mass = 0.0;
    let mut taken = Vec::with_capacity(order.len());
    for y in order {
        if mass + CUMULATIVE_TOLERANCE >= target {
            break;
        }
        mass += dist.prob(y);
        taken.push(y);
    }
    Ok(PredictionSet::from_labels(taken))
}

/// Negative log-likelihood score `-log p(label)`; `+inf` for zero mass.
pub fn nll_score(edge_dist: &Categorical, label: usize) -> Result<Score> {
    if label >= edge_dist.num_labels() {
        return Err(Error::LabelOutOfRange {
            label,
            num_labels: edge_dist.num_labels(),
        });
    }
    let p = edge_dist.prob(label);
    if p <= 0.0 {
        Ok(Score::INFINITY)
    } else {
        Ok(Score((-p.ln()).max(0.0)))
    }
}

/// Smallest value whose cumulative normalized weight reaches `level`.
///
/// Weights are normalized internally, so only their ratios matter. The
/// returned value is always one of the input values.
pub fn weighted_quantile(points: &[WeightedPoint], level: f64) -> Result<f64> {
    if points
        .iter()
        .any(|p| p.value.is_nan() || !(p.weight >= 0.0) || !p.weight.is_finite())
    {
        return Err(Error::EmptyInput(
            "weighted points must be finite and non-negative",
        ));
    }
    let total: f64 = points.iter().map(|p| p.weight).sum();
    if !(total > 0.0) {
        return Err(Error::EmptyInput("total weight must be positive"));
    }
    let mut sorted: Vec<WeightedPoint> = points.to_vec();
    sorted.sort_by(|a, b| a.value.total_cmp(&b.value));

    let needed = level * total - CUMULATIVE_TOLERANCE * total;
    let mut cumulative = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let value = sorted[i].value;
        // absorb every point tied at this value before testing
        while i < sorted.len() && sorted[i].value == value {
            cumulative += sorted[i].weight;
            i += 1;
        }
        if cumulative >= needed {
            return Ok(value);
        }
    }
    Ok(sorted.last().map_or(f64::INFINITY, |p| p.value))
}

/// Split conformal threshold: the `1 - alpha` quantile of the calibration
/// scores with an extra mass at `+inf`.
pub fn cp_threshold(cal_scores: &[Score], alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    let points: Vec<WeightedPoint> = cal_scores
        .iter()
        .map(|s| WeightedPoint::new(s.value(), 1.0))
        .chain(std::iter::once(WeightedPoint::new(f64::INFINITY, 1.0)))
        .collect();
    weighted_quantile(&points, 1.0 - alpha)
}

/// Labels whose score does not exceed `threshold`.
pub fn threshold_set(edge_dist: &Categorical, threshold: f64) -> PredictionSet {
    if threshold == f64::INFINITY {
        return PredictionSet::full(edge_dist.num_labels());
    }
    PredictionSet::from_labels((0..edge_dist.num_labels()).filter(|&y| {
        nll_score(edge_dist, y)
            .map(|s| s.value() <= threshold)
            .unwrap_or(false)
    }))
}

pub fn kernel_eval(spec: &KernelSpec, x1: &[f64], x2: &[f64]) -> Result<f64> {
    if x1.len() != x2.len() {
        return Err(Error::DimensionMismatch {
            expected: x1.len(),
            found: x2.len(),
        });
    }
    match *spec {
        KernelSpec::Constant => Ok(1.0),
        KernelSpec::Gaussian { bandwidth } => {
            let sq: f64 = x1.iter().zip(x2).map(|(a, b)| (a - b) * (a - b)).sum();
            Ok((-sq / (2.0 * bandwidth * bandwidth)).exp())
        }
    }
}

/// Draws a perturbation of `x` from the density proportional to the kernel
/// centered at `x`.
pub fn perturb<R: Rng + ?Sized>(spec: &KernelSpec, x: &[f64], rng: &mut R) -> Result<Vec<f64>> {
    match *spec {
        KernelSpec::Constant => Ok(x.to_vec()),
        KernelSpec::Gaussian { bandwidth } => {
            if x.is_empty() {
                return Err(Error::EmptyFeatureSpace);
            }
            Ok(x.iter()
                .map(|&xi| {
                    let z: f64 = rng.sample(StandardNormal);
                    xi + bandwidth * z
                })
                .collect())
        }
    }
}

fn raw_kernel_weights(
    spec: &KernelSpec,
    test_features: &[f64],
    cal_features: &[&[f64]],
    anchor: &[f64],
) -> Result<Vec<f64>> {
    let mut raw = Vec::with_capacity(cal_features.len() + 1);
    for f in cal_features {
        raw.push(kernel_eval(spec, f, anchor)?);
    }
    raw.push(kernel_eval(spec, test_features, anchor)?);
    Ok(raw)
}

/// Normalized localization weights for the calibration points (in order)
/// followed by the weight of the `+inf` mass, all evaluated at `anchor`.
pub fn lcp_weights(
    spec: &KernelSpec,
    test_features: &[f64],
    cal_features: &[&[f64]],
    anchor: &[f64],
) -> Result<Vec<f64>> {
    let raw = raw_kernel_weights(spec, test_features, cal_features, anchor)?;
    let total: f64 = raw.iter().sum();
    if !(total > 0.0) {
        // every kernel value underflowed: all mass sits at infinity
        let n = raw.len();
        return Ok((0..n).map(|i| if i + 1 == n { 1.0 } else { 0.0 }).collect());
    }
    Ok(raw.into_iter().map(|w| w / total).collect())
}

/// Localized conformal threshold for one test input.
///
/// The quantile only depends on weight ratios, so the unnormalized kernel
/// values are handed to [`weighted_quantile`] directly. With the constant
/// kernel this is the exact input [`cp_threshold`] builds.
pub fn lcp_threshold<R: Rng + ?Sized>(
    test: &Example,
    cal: &[(&Example, Score)],
    alpha: f64,
    spec: &KernelSpec,
    rng: &mut R,
) -> Result<f64> {
    check_alpha(alpha)?;
    if matches!(spec, KernelSpec::Gaussian { .. }) && test.features.is_empty() {
        return Err(Error::EmptyFeatureSpace);
    }
    let anchor = perturb(spec, &test.features, rng)?;
    let cal_features: Vec<&[f64]> = cal.iter().map(|(e, _)| e.features.as_slice()).collect();
    let weights = raw_kernel_weights(spec, &test.features, &cal_features, &anchor)?;
    if !(weights.iter().sum::<f64>() > 0.0) {
        return Ok(f64::INFINITY);
    }
    let points: Vec<WeightedPoint> = cal
        .iter()
        .map(|(_, s)| s.value())
        .chain(std::iter::once(f64::INFINITY))
        .zip(weights)
        .map(|(v, w)| WeightedPoint::new(v, w))
        .collect();
    weighted_quantile(&points, 1.0 - alpha)
}

/// How the edge device forms its prediction set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum EdgeSetMethod {
    Hms,
    Cp,
    Lcp { kernel: KernelSpec },
}

impl EdgeSetMethod {
    pub fn name(&self) -> &'static str {
        match self {
            EdgeSetMethod::Hms => "hms",
            EdgeSetMethod::Cp => "cp",
            EdgeSetMethod::Lcp { .. } => "lcp",
        }
    }
}

/// Calibration data for CP/LCP: each example paired with its score.
pub fn calibration_scores<'a>(cal: &[&'a Example]) -> Result<Vec<(&'a Example, Score)>> {
    cal.iter()
        .map(|e| {
            let label = e.label.ok_or_else(|| {
                Error::InvalidConfig(format!("calibration example {} has no label", e.id))
            })?;
            Ok((*e, nll_score(&e.edge_dist, label)?))
        })
        .collect()
}

/// Edge sets for `targets` under `method`, calibrated on `cal`.
///
/// LCP draws one perturbation per target from `rng`, in target order.
pub fn build_edge_sets<R: Rng + ?Sized>(
    method: &EdgeSetMethod,
    alpha: f64,
    cal: &[&Example],
    targets: &[&Example],
    rng: &mut R,
) -> Result<Vec<PredictionSet>> {
    match method {
        EdgeSetMethod::Hms => targets.iter().map(|e| hms(&e.edge_dist, alpha)).collect(),
        EdgeSetMethod::Cp => {
            let scored = calibration_scores(cal)?;
            let scores: Vec<Score> = scored.iter().map(|(_, s)| *s).collect();
            let q = cp_threshold(&scores, alpha)?;
            Ok(targets
                .iter()
                .map(|e| threshold_set(&e.edge_dist, q))
                .collect())
        }
        EdgeSetMethod::Lcp { kernel } => {
            let scored = calibration_scores(cal)?;
            targets
                .iter()
                .map(|e| {
                    let q = lcp_threshold(e, &scored, alpha, kernel, rng)?;
                    Ok(threshold_set(&e.edge_dist, q))
                })
                .collect()
        }
    }
}
