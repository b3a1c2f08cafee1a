//! One trial of the protocol: resplit the pool, build edge sets, fit the
//! alignment predictor on the training split, then route the test split.
//!
//! Test inputs reach the router as [`TestInput`] values (id and predicted
//! alignment only). Their labels and true alignments are kept apart and only
//! read when computing metrics.

use std::collections::HashMap;

use crate::alignment::{
    edge_coverage_feature, fit_predictor, true_alignment, AlignmentPredictor, AlignmentSample,
};
use crate::cascade::{
    assemble_prediction, cab_select, cbd_route, RouteDecision, SelectionResult, TestInput,
    ValidationInput,
};
use crate::domain::{DataPartition, Example, PartitionSizes, PredictionSet, RiskSpec};
use crate::error::{Error, Result};
use crate::harness::config::CascadeMethod;
use crate::harness::exec::{substream, Stream};
use crate::metrics::{self, TrialMetrics};
use crate::predsets::{build_edge_sets, hms, EdgeSetMethod};
use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PredictorChoice {
    Isotonic,
    Constant(f64),
}

/// Settings shared by every trial of one experiment cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialPlan {
    pub edge_method: EdgeSetMethod,
    pub alpha: f64,
    pub sizes: PartitionSizes,
    pub predictor: PredictorChoice,
    pub base_seed: u64,
}

/// Test-split quantities reserved for evaluation.
#[derive(Debug, Clone)]
struct HeldOut {
    true_alignment: Vec<f64>,
    oracle_sets: Vec<PredictionSet>,
    labels: Option<Vec<usize>>,
}

/// A trial after the offline phase, ready to be routed under any cascade.
#[derive(Debug, Clone)]
pub struct PreparedTrial<'a> {
    trial: usize,
    plan: TrialPlan,
    pool: &'a [Example],
    partition: DataPartition,
    predictor: AlignmentPredictor,
    validation: Vec<ValidationInput>,
    test: Vec<TestInput>,
    test_edge_sets: Vec<PredictionSet>,
    held_out: HeldOut,
}

/// Outcome of routing one prepared trial.
#[derive(Debug, Clone)]
pub struct RoutedTrial {
    pub metrics: TrialMetrics,
    /// Per test input, in partition order: kept on the edge?
    pub selected: Vec<bool>,
    pub final_sets: Vec<PredictionSet>,
    pub selection: Option<SelectionResult>,
}

fn gather<'a>(pool: &'a [Example], idx: &[usize]) -> Vec<&'a Example> {
    idx.iter().map(|&i| &pool[i]).collect()
}

impl<'a> PreparedTrial<'a> {
    pub fn prepare(pool: &'a [Example], plan: TrialPlan, trial: usize) -> Result<Self> {
        let mut split_rng = substream(plan.base_seed, trial, Stream::Split);
        let partition = DataPartition::random(pool.len(), plan.sizes, &mut split_rng)?;
        if !partition.is_disjoint() {
            return Err(Error::Invariant("partition blocks overlap".into()));
        }
        let cal = gather(pool, &partition.cal);
        let tr = gather(pool, &partition.tr);
        let val = gather(pool, &partition.val);
        let te = gather(pool, &partition.te);

        let mut lcp_rng = substream(plan.base_seed, trial, Stream::Lcp);
        let alpha = plan.alpha;
        let mut sets_for =
            |xs: &[&Example]| build_edge_sets(&plan.edge_method, alpha, &cal, xs, &mut lcp_rng);
        let tr_sets = sets_for(&tr)?;
        let val_sets = sets_for(&val)?;
        let te_sets = sets_for(&te)?;

        let feature = |e: &Example, s: &PredictionSet| edge_coverage_feature(&e.edge_dist, s);
        let truth = |e: &Example, s: &PredictionSet| true_alignment(&e.cloud_dist, s);

        let predictor = match plan.predictor {
            PredictorChoice::Constant(v) => AlignmentPredictor::constant(v),
            PredictorChoice::Isotonic => {
                let samples = tr
                    .iter()
                    .zip(&tr_sets)
                    .map(|(e, s)| {
                        Ok(AlignmentSample {
                            example_id: e.id.clone(),
                            feature: feature(e, s)?,
                            target: truth(e, s)?,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                fit_predictor(&samples)?
            }
        };

        let validation = val
            .iter()
            .zip(&val_sets)
            .map(|(e, s)| {
                Ok(ValidationInput {
                    id: e.id.clone(),
                    true_score: truth(e, s)?,
                    predicted_score: predictor.predict(feature(e, s)?)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let test = te
            .iter()
            .zip(&te_sets)
            .map(|(e, s)| {
                Ok(TestInput {
                    id: e.id.clone(),
                    predicted_score: predictor.predict(feature(e, s)?)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;

        let held_out = HeldOut {
            true_alignment: te
                .iter()
                .zip(&te_sets)
                .map(|(e, s)| truth(e, s))
                .collect::<Result<_>>()?,
            oracle_sets: te
                .iter()
                .map(|e| hms(&e.cloud_dist, alpha))
                .collect::<Result<_>>()?,
            labels: te.iter().map(|e| e.label).collect(),
        };

        Ok(Self {
            trial,
            plan,
            pool,
            partition,
            predictor,
            validation,
            test,
            test_edge_sets: te_sets,
            held_out,
        })
    }

    pub fn partition(&self) -> &DataPartition {
        &self.partition
    }

    pub fn predictor(&self) -> &AlignmentPredictor {
        &self.predictor
    }

    pub fn validation_inputs(&self) -> &[ValidationInput] {
        &self.validation
    }

    pub fn test_inputs(&self) -> &[TestInput] {
        &self.test
    }

    pub fn test_edge_sets(&self) -> &[PredictionSet] {
        &self.test_edge_sets
    }

    fn tiebreak_seed(&self) -> u64 {
        substream(self.plan.base_seed, self.trial, Stream::Tiebreak).random()
    }

    /// Conformal-alignment selection under `delta`; the tiebreak draws are
    /// fixed per trial, so selections for different `delta` are nested.
    pub fn select(&self, delta: f64) -> Result<SelectionResult> {
        let spec = RiskSpec::new(self.plan.alpha, delta)?;
        cab_select(&self.validation, &self.test, &spec, self.tiebreak_seed())
    }

    pub fn route(
        &self,
        cascade: CascadeMethod,
        delta: f64,
        gamma: Option<f64>,
    ) -> Result<RoutedTrial> {
        let te = &self.partition.te;
        let mut selection = None;
        let selected: Vec<bool> = match cascade {
            CascadeMethod::CloudOnly => vec![false; te.len()],
            CascadeMethod::EdgeOnly => vec![true; te.len()],
            CascadeMethod::Cbd => {
                let gamma = gamma.unwrap_or(1.0 - delta);
                te.iter()
                    .map(|&i| cbd_route(&self.pool[i].edge_dist, gamma) == RouteDecision::Edge)
                    .collect()
            }
            CascadeMethod::Cab => {
                let result = self.select(delta)?;
                let chosen: std::collections::HashSet<&str> =
                    result.selected_ids.iter().map(String::as_str).collect();
                let mask = self
                    .test
                    .iter()
                    .map(|t| chosen.contains(t.id.as_str()))
                    .collect();
                selection = Some(result);
                mask
            }
        };

        let final_sets = te
            .iter()
            .zip(&self.test_edge_sets)
            .zip(&selected)
            .map(|((&i, edge_set), &keep)| {
                assemble_prediction(&self.pool[i], keep, edge_set, self.plan.alpha)
            })
            .collect::<Result<Vec<_>>>()?;
        let metrics = self.evaluate(cascade, &selected, &final_sets)?;
        Ok(RoutedTrial {
            metrics,
            selected,
            final_sets,
            selection,
        })
    }

    fn evaluate(
        &self,
        cascade: CascadeMethod,
        selected: &[bool],
        final_sets: &[PredictionSet],
    ) -> Result<TrialMetrics> {
        let alpha = self.plan.alpha;
        let chosen: Vec<f64> = self
            .held_out
            .true_alignment
            .iter()
            .zip(selected)
            .filter_map(|(&c, &keep)| keep.then_some(c))
            .collect();
        let n_selected = chosen.len();
        let n_test = selected.len();
        let satisfaction_rate = match cascade {
            // every input gets its cloud highest-mass set
            CascadeMethod::CloudOnly => 1.0,
            _ => metrics::satisfaction_rate(&chosen, alpha),
        };
        let marginal_coverage = match &self.held_out.labels {
            Some(labels) => Some(metrics::marginal_coverage(final_sets, labels)?),
            None => None,
        };
        let out = TrialMetrics {
            satisfaction_rate,
            deferral_rate: metrics::deferral_rate(n_selected, n_test),
            normalized_inefficiency: metrics::normalized_inefficiency(
                final_sets,
                &self.held_out.oracle_sets,
            )?,
            fdp: metrics::fdp(&chosen, alpha),
            marginal_coverage,
            n_selected,
            empty_selection: n_selected == 0,
        };
        if n_selected > 0 && (out.fdp + out.satisfaction_rate - 1.0).abs() > 1e-12 {
            return Err(Error::Invariant(
                "fdp and satisfaction rate disagree".into(),
            ));
        }
        Ok(out)
    }

    /// Screening martingale over the ordered pool of `selection`, using the
    /// held-out test alignments.
    pub fn martingale(&self, selection: &SelectionResult) -> Result<Vec<f64>> {
        let truth: HashMap<String, f64> = self
            .test
            .iter()
            .zip(&self.held_out.true_alignment)
            .map(|(t, &c)| (t.id.clone(), c))
            .collect();
        metrics::martingale_trajectory(&selection.order, &truth, self.plan.alpha)
    }
}
