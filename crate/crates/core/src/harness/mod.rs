//! Experiment orchestration: configuration, trial execution and sweeps.

pub mod config;
pub mod exec;
pub mod experiment;
pub mod trial;

pub use config::{CascadeMethod, EdgeSetKind, ExperimentConfig};
pub use exec::{substream, Execution, Stream};
pub use experiment::{
    aggregate, calibrate_bandwidth, diagnose, load_pool, resolve_edge_methods, run_experiment,
    run_experiment_trials, write_diagnostics, write_outputs, DiagnosticReport, ExperimentOutput,
};
pub use trial::{PredictorChoice, PreparedTrial, RoutedTrial, TrialPlan};

use crate::domain::Example;
use crate::error::Result;
use crate::metrics::TrialMetrics;

/// Metrics of one trial for the first edge method, alpha, cascade and delta
/// of `config`.
pub fn run_trial(
    config: &ExperimentConfig,
    pool: &[Example],
    trial: usize,
) -> Result<TrialMetrics> {
    config.validate()?;
    let kind = config.method.edge_sets[0];
    let (_, method) = resolve_edge_methods(kind, config, pool)?.swap_remove(0);
    let predictor = match config.method.predictor {
        config::PredictorKind::Isotonic => PredictorChoice::Isotonic,
        config::PredictorKind::Constant => {
            PredictorChoice::Constant(config.method.predictor_constant)
        }
    };
    let plan = TrialPlan {
        edge_method: method,
        alpha: config.risk.alphas[0],
        sizes: config.partition,
        predictor,
        base_seed: config.run.base_seed,
    };
    let prepared = PreparedTrial::prepare(pool, plan, trial)?;
    Ok(prepared
        .route(
            config.method.cascades[0],
            config.risk.deltas[0],
            config.method.gamma,
        )?
        .metrics)
}
