//! Routing between edge and cloud.
//!
//! Two deferral rules live here: the confidence threshold baseline and
//! conformal-alignment screening. Screening merges the validation inputs
//! (true alignment known) with the test inputs (only the predicted alignment
//! known), walks the merged pool from the least to the most promising input
//! and stops as soon as the estimated false discovery proportion of the
//! still-unscreened test inputs is at most `delta`. Those test inputs stay on
//! the edge.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{Categorical, Example, PredictionSet, RiskSpec};
use crate::error::{Error, Result};
use crate::predsets::hms;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RouteDecision {
    Edge,
    Cloud,
}

/// Confidence-based deferral: keep the input on the edge iff the edge top-1
/// probability reaches `gamma`.
pub fn cbd_route(edge_dist: &Categorical, gamma: f64) -> RouteDecision {
    if edge_dist.max_prob() >= gamma {
        RouteDecision::Edge
    } else {
        RouteDecision::Cloud
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Validation,
    Test,
}

/// One entry of the merged screening pool.
///
/// Validation items always carry their true alignment and test items never
/// do; the constructors are the only way to build one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolItem {
    example_id: String,
    origin: Origin,
    predicted_score: f64,
    true_score: Option<f64>,
    tiebreak: f64,
}

impl PoolItem {
    pub fn validation(
        id: impl Into<String>,
        true_score: f64,
        predicted_score: f64,
        tiebreak: f64,
    ) -> Self {
        Self {
            example_id: id.into(),
            origin: Origin::Validation,
            predicted_score,
            true_score: Some(true_score),
            tiebreak,
        }
    }

    pub fn test(id: impl Into<String>, predicted_score: f64, tiebreak: f64) -> Self {
        Self {
            example_id: id.into(),
            origin: Origin::Test,
            predicted_score,
            true_score: None,
            tiebreak,
        }
    }

    pub fn example_id(&self) -> &str {
        &self.example_id
    }

    pub fn origin(&self) -> Origin {
        self.origin
    }

    pub fn predicted_score(&self) -> f64 {
        self.predicted_score
    }

    pub fn true_score(&self) -> Option<f64> {
        self.true_score
    }

    pub fn tiebreak(&self) -> f64 {
        self.tiebreak
    }

    fn is_misaligned(&self, coverage: f64) -> bool {
        self.true_score.is_some_and(|c| c < coverage)
    }
}

/// Permutation that sorts `pool` by ascending predicted score, ties broken
/// by the tiebreak draw.
pub fn screen_order(pool: &[PoolItem]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..pool.len()).collect();
    idx.sort_by(|&a, &b| {
        pool[a]
            .predicted_score
            .total_cmp(&pool[b].predicted_score)
            .then_with(|| pool[a].tiebreak.total_cmp(&pool[b].tiebreak))
    });
    idx
}

/// Estimated FDP of the unscreened test inputs; zero once none remain.
pub fn fdp_estimate(
    unscreened_val_miss: usize,
    unscreened_te: usize,
    n_te: usize,
    n_val: usize,
) -> f64 {
    if unscreened_te == 0 {
        return 0.0;
    }
    (n_te as f64 / (1.0 + n_val as f64)) * (1.0 + unscreened_val_miss as f64) / unscreened_te as f64
}

/// Progress of a sequential screening pass over an ordered pool.
#[derive(Debug, Clone)]
pub struct ScreeningState {
    order: Vec<PoolItem>,
    coverage: f64,
    step: usize,
    n_val: usize,
    n_te: usize,
    unscreened_val_miss: usize,
    unscreened_te: usize,
    fdp_trajectory: Vec<f64>,
}

impl ScreeningState {
    /// Starts at step zero with nothing screened; `order` must already be
    /// sorted.
    pub fn new(order: Vec<PoolItem>, alpha: f64) -> Self {
        let coverage = 1.0 - alpha;
        let n_val = order
            .iter()
            .filter(|i| i.origin == Origin::Validation)
            .count();
        let n_te = order.len() - n_val;
        let unscreened_val_miss = order.iter().filter(|i| i.is_misaligned(coverage)).count();
        let mut state = Self {
            order,
            coverage,
            step: 0,
            n_val,
            n_te,
            unscreened_val_miss,
            unscreened_te: n_te,
            fdp_trajectory: Vec::new(),
        };
        state.fdp_trajectory.push(state.estimate());
        state
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn is_exhausted(&self) -> bool {
        self.step == self.order.len()
    }

    pub fn estimate(&self) -> f64 {
        fdp_estimate(
            self.unscreened_val_miss,
            self.unscreened_te,
            self.n_te,
            self.n_val,
        )
    }

    pub fn unscreened_val_miss(&self) -> usize {
        self.unscreened_val_miss
    }

    pub fn unscreened_te(&self) -> usize {
        self.unscreened_te
    }

    pub fn fdp_trajectory(&self) -> &[f64] {
        &self.fdp_trajectory
    }

    pub fn order(&self) -> &[PoolItem] {
        &self.order
    }

    /// Screens the next item and records the new estimate.
    pub fn advance(&mut self) {
        let item = &self.order[self.step];
        match item.origin {
            Origin::Validation => {
                if item.is_misaligned(self.coverage) {
                    self.unscreened_val_miss -= 1;
                }
            }
            Origin::Test => self.unscreened_te -= 1,
        }
        self.step += 1;
        self.fdp_trajectory.push(self.estimate());
    }

    /// Recomputes both counters from the unscreened suffix.
    pub fn recount(&self) -> (usize, usize) {
        let rest = &self.order[self.step..];
        (
            rest.iter()
                .filter(|i| i.is_misaligned(self.coverage))
                .count(),
            rest.iter().filter(|i| i.origin == Origin::Test).count(),
        )
    }

    pub fn unscreened_test_ids(&self) -> Vec<String> {
        self.order[self.step..]
            .iter()
            .filter(|i| i.origin == Origin::Test)
            .map(|i| i.example_id.clone())
            .collect()
    }

    pub fn into_order(self) -> Vec<PoolItem> {
        self.order
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationInput {
    pub id: String,
    pub true_score: f64,
    pub predicted_score: f64,
}

/// A test input as seen by the router: no label, no true alignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestInput {
    pub id: String,
    pub predicted_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    /// Test ids kept on the edge, in screening order.
    pub selected_ids: Vec<String>,
    pub stop_step: usize,
    /// Estimates for steps `0..=stop_step`.
    pub fdp_trajectory: Vec<f64>,
    /// Predicted score of the last screened item, `None` when nothing was
    /// screened.
    pub threshold_score: Option<f64>,
    /// The ordered pool, kept for diagnostics.
    pub order: Vec<PoolItem>,
}

/// Merges validation and test inputs into one pool with tiebreak draws from
/// `seed`, validation items first.
pub fn build_pool(val: &[ValidationInput], te: &[TestInput], seed: u64) -> Vec<PoolItem> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pool: Vec<PoolItem> = val
        .iter()
        .map(|v| PoolItem::validation(v.id.clone(), v.true_score, v.predicted_score, rng.random()))
        .collect();
    pool.extend(
        te.iter()
            .map(|t| PoolItem::test(t.id.clone(), t.predicted_score, rng.random())),
    );
    pool
}

/// Conformal-alignment selection of the test inputs kept on the edge.
pub fn cab_select(
    val: &[ValidationInput],
    te: &[TestInput],
    spec: &RiskSpec,
    seed: u64,
) -> Result<SelectionResult> {
    if val.is_empty() {
        return Err(Error::EmptyValidation);
    }
    if te.is_empty() {
        return Err(Error::EmptyTest);
    }
    let pool = build_pool(val, te, seed);
    let order_idx = screen_order(&pool);
    let mut slots: Vec<Option<PoolItem>> = pool.into_iter().map(Some).collect();
    let order: Vec<PoolItem> = order_idx
        .into_iter()
        .map(|i| slots[i].take().expect("permutation"))
        .collect();
    Ok(screen(order, spec))
}

/// Runs the stopping rule over an already ordered pool.
pub fn screen(order: Vec<PoolItem>, spec: &RiskSpec) -> SelectionResult {
    let mut state = ScreeningState::new(order, spec.alpha());
    while state.estimate() > spec.delta() && !state.is_exhausted() {
        state.advance();
    }
    let stop_step = state.step();
    let selected_ids = state.unscreened_test_ids();
    let fdp_trajectory = state.fdp_trajectory().to_vec();
    let order = state.into_order();
    let threshold_score = stop_step.checked_sub(1).map(|i| order[i].predicted_score);
    SelectionResult {
        selected_ids,
        stop_step,
        fdp_trajectory,
        threshold_score,
        order,
    }
}

/// Final set for one input: the edge set when selected, otherwise the cloud
/// highest-mass set.
pub fn assemble_prediction(
    example: &Example,
    selected: bool,
    edge_set: &PredictionSet,
    alpha: f64,
) -> Result<PredictionSet> {
    if selected {
        Ok(edge_set.clone())
    } else {
        hms(&example.cloud_dist, alpha)
    }
}
