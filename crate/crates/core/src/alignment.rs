//! Alignment scores and the monotone alignment predictor.
//!
//! The true alignment of an edge set is its cloud mass. At test time that
//! mass is unknown, so a one-dimensional isotonic regressor maps the edge's
//! own estimate of the coverage of its set to a predicted alignment.

use serde::{Deserialize, Serialize};

use crate::domain::{Categorical, PredictionSet};
use crate::error::{Error, Result};

/// Cloud mass of `edge_set`.
pub fn true_alignment(cloud_dist: &Categorical, edge_set: &PredictionSet) -> Result<f64> {
    cloud_dist.mass(edge_set)
}

/// Edge mass of `edge_set`, the input feature of the alignment predictor.
pub fn edge_coverage_feature(edge_dist: &Categorical, edge_set: &PredictionSet) -> Result<f64> {
    edge_dist.mass(edge_set)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentSample {
    pub example_id: String,
    pub feature: f64,
    pub target: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Knot {
    pub feature: f64,
    pub value: f64,
}

/// Nondecreasing step function from feature to predicted alignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentPredictor {
    knots: Vec<Knot>,
}

impl AlignmentPredictor {
    /// Predicts `value` everywhere.
    pub fn constant(value: f64) -> Self {
        Self {
            knots: vec![Knot {
                feature: 0.0,
                value: value.clamp(0.0, 1.0),
            }],
        }
    }

    /// Builds a predictor from explicit knots, which must be sorted by
    /// feature with nondecreasing values.
    pub fn from_knots(knots: Vec<Knot>) -> Result<Self> {
        if knots.is_empty() {
            return Err(Error::EmptyTrainingSet);
        }
        for k in &knots {
            if !(0.0..=1.0).contains(&k.feature) || !(0.0..=1.0).contains(&k.value) {
                return Err(Error::FeatureOutOfRange(k.feature));
            }
        }
        let ordered = knots
            .windows(2)
            .all(|w| w[0].feature < w[1].feature && w[0].value <= w[1].value);
        if !ordered {
            return Err(Error::Invariant(
                "knots must be strictly increasing in feature and nondecreasing in value".into(),
            ));
        }
        Ok(Self { knots })
    }

    pub fn knots(&self) -> &[Knot] {
        &self.knots
    }

    /// Value of the last knot at or below `feature`; the first knot's value
    /// below the fitted range.
    pub fn predict(&self, feature: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&feature) {
            return Err(Error::FeatureOutOfRange(feature));
        }
        let idx = self.knots.partition_point(|k| k.feature <= feature);
        Ok(self.knots[idx.saturating_sub(1)].value)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.knots).expect("knots serialize")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let knots: Vec<Knot> = serde_json::from_str(text).map_err(|e| Error::Parse {
            line: e.line(),
            message: e.to_string(),
        })?;
        Self::from_knots(knots)
    }
}

/// Same as [`AlignmentPredictor::predict`].
pub fn predict_alignment(predictor: &AlignmentPredictor, feature: f64) -> Result<f64> {
    predictor.predict(feature)
}

/// Isotonic least-squares fit of target on feature (pool adjacent violators).
pub fn fit_predictor(train: &[AlignmentSample]) -> Result<AlignmentPredictor> {
    if train.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    for s in train {
        if !(0.0..=1.0).contains(&s.feature) {
            return Err(Error::FeatureOutOfRange(s.feature));
        }
        if !(0.0..=1.0).contains(&s.target) {
            return Err(Error::Invariant(format!(
                "alignment target {} outside [0, 1]",
                s.target
            )));
        }
    }

    let mut sorted: Vec<(f64, f64)> = train.iter().map(|s| (s.feature, s.target)).collect();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));

    // distinct features become weighted points at their mean target
    let mut features: Vec<f64> = Vec::new();
    let mut points: Vec<(f64, f64)> = Vec::new(); // (mean, weight)
    for (f, t) in sorted {
        match features.last() {
            Some(&last) if last == f => {
                let p = points.last_mut().expect("paired with features");
                p.0 = (p.0 * p.1 + t) / (p.1 + 1.0);
                p.1 += 1.0;
            }
            _ => {
                features.push(f);
                points.push((t, 1.0));
            }
        }
    }

    // blocks: (mean, weight, number of distinct features covered)
    let mut blocks: Vec<(f64, f64, usize)> = Vec::with_capacity(points.len());
    for (mean, weight) in points {
        blocks.push((mean, weight, 1));
        while blocks.len() >= 2 {
            let n = blocks.len();
            let (m1, w1, c1) = blocks[n - 2];
            let (m2, w2, c2) = blocks[n - 1];
            if m1 <= m2 {
                break;
            }
            blocks.truncate(n - 2);
            blocks.push(((m1 * w1 + m2 * w2) / (w1 + w2), w1 + w2, c1 + c2));
        }
    }

    let mut knots = Vec::with_capacity(features.len());
    let mut fi = features.into_iter();
    for (mean, _, count) in blocks {
        let value = mean.clamp(0.0, 1.0);
        for feature in fi.by_ref().take(count) {
            knots.push(Knot { feature, value });
        }
    }
    Ok(AlignmentPredictor { knots })
}
