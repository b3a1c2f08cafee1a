//! Monte Carlo sweeps over edge-set methods, cascades, `alpha` and `delta`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::domain::Example;
use crate::error::{Error, Result};
use crate::harness::config::{
    CascadeMethod, EdgeSetKind, ExperimentConfig, KernelKind, PredictorKind, SourceKind,
};
use crate::harness::exec::{map_trials, Execution};
use crate::harness::trial::{PredictorChoice, PreparedTrial, TrialPlan};
use crate::ingest::{load_examples, write_results, CellSummary, ResultFormat, TrialRecord};
use crate::metrics::{reliability_diagram, MeanSe, ReliabilityDiagram, TrialMetrics};
use crate::predsets::{EdgeSetMethod, KernelSpec};
use crate::synth::gen_pool;

/// Examples used as bandwidth queries and references.
const BANDWIDTH_QUERIES: usize = 100;
const BANDWIDTH_REFERENCES: usize = 500;

pub fn load_pool(config: &ExperimentConfig) -> Result<Vec<Example>> {
    match config.data.source {
        SourceKind::Synthetic => gen_pool(&config.synthetic),
        SourceKind::File => {
            let path = config
                .data
                .path
                .as_ref()
                .ok_or_else(|| Error::InvalidConfig("file data source needs a path".into()))?;
            let loaded = load_examples(path, config.data_format())?;
            if loaded.examples.len() < config.partition.total() {
                return Err(Error::InvalidConfig(format!(
                    "{} holds {} examples, the partition needs {}",
                    path.display(),
                    loaded.examples.len(),
                    config.partition.total()
                )));
            }
            Ok(loaded.examples)
        }
    }
}

fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let i = ((sorted.len() - 1) as f64 * q).round() as usize;
    sorted[i]
}

/// Gaussian bandwidth at which, for the median query, the kernel weight of
/// its nearest reference is ten times that of its farthest.
///
/// Queries are the first examples of the pool and references the ones after
/// them, so the result is a deterministic function of the pool.
pub fn calibrate_bandwidth(pool: &[Example]) -> Result<f64> {
    if pool.len() < 3 {
        return Err(Error::EmptyInput("bandwidth calibration pool"));
    }
    let dim = pool[0].features.len();
    if dim == 0 {
        return Err(Error::EmptyFeatureSpace);
    }
    let nq = BANDWIDTH_QUERIES.min(pool.len() / 2);
    let (queries, rest) = pool.split_at(nq);
    let refs = &rest[..BANDWIDTH_REFERENCES.min(rest.len())];
    let mut gaps = Vec::with_capacity(queries.len());
    for q in queries {
        let mut d2: Vec<f64> = refs
            .iter()
            .map(|r| {
                if r.features.len() != dim {
                    return Err(Error::DimensionMismatch {
                        expected: dim,
                        found: r.features.len(),
                    });
                }
                Ok(q.features
                    .iter()
                    .zip(&r.features)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum())
            })
            .collect::<Result<_>>()?;
        d2.sort_by(f64::total_cmp);
        gaps.push(d2[d2.len() - 1] - d2[0]);
    }
    gaps.sort_by(f64::total_cmp);
    let gap = quantile_sorted(&gaps, 0.5);
    let h = (gap / (2.0 * 10f64.ln())).sqrt();
    KernelSpec::gaussian(h).map(|_| h)
}

/// Named edge-set methods for `kind`: one entry, or one per swept LCP
/// bandwidth. Calibrates the bandwidth when none is configured.
pub fn resolve_edge_methods(
    kind: EdgeSetKind,
    config: &ExperimentConfig,
    pool: &[Example],
) -> Result<Vec<(String, EdgeSetMethod)>> {
    let single = |m: EdgeSetMethod| Ok(vec![(kind.name().to_string(), m)]);
    match kind {
        EdgeSetKind::Hms => single(EdgeSetMethod::Hms),
        EdgeSetKind::Cp => single(EdgeSetMethod::Cp),
        EdgeSetKind::Lcp => match config.method.kernel {
            KernelKind::Constant => single(EdgeSetMethod::Lcp {
                kernel: KernelSpec::Constant,
            }),
            KernelKind::Gaussian if !config.method.bandwidths.is_empty() => config
                .method
                .bandwidths
                .iter()
                .map(|&h| {
                    let kernel = KernelSpec::gaussian(h)?;
                    Ok((format!("lcp_h{h}"), EdgeSetMethod::Lcp { kernel }))
                })
                .collect(),
            KernelKind::Gaussian => {
                let h = match config.method.bandwidth {
                    Some(h) => h,
                    None => {
                        let h = calibrate_bandwidth(pool)?;
                        log::info!("calibrated LCP bandwidth {h:.4}");
                        h
                    }
                };
                single(EdgeSetMethod::Lcp {
                    kernel: KernelSpec::gaussian(h)?,
                })
            }
        },
    }
}

fn predictor_choice(config: &ExperimentConfig) -> PredictorChoice {
    match config.method.predictor {
        PredictorKind::Isotonic => PredictorChoice::Isotonic,
        PredictorKind::Constant => PredictorChoice::Constant(config.method.predictor_constant),
    }
}

fn plan_for(config: &ExperimentConfig, edge_method: EdgeSetMethod, alpha: f64) -> TrialPlan {
    TrialPlan {
        edge_method,
        alpha,
        sizes: config.partition,
        predictor: predictor_choice(config),
        base_seed: config.run.base_seed,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    /// Ordered by edge method, alpha, cascade, delta, then trial.
    pub records: Vec<TrialRecord>,
    pub aggregate: Vec<CellSummary>,
}

pub fn run_experiment(
    config: &ExperimentConfig,
    pool: &[Example],
    exec: Execution,
) -> Result<ExperimentOutput> {
    let trials: Vec<usize> = (0..config.run.trials).collect();
    run_experiment_trials(config, pool, &trials, exec)
}

/// Runs the given trial indices. Each trial's randomness depends only on the
/// base seed and its index, so any subset or order gives the same per-trial
/// records.
pub fn run_experiment_trials(
    config: &ExperimentConfig,
    pool: &[Example],
    trials: &[usize],
    exec: Execution,
) -> Result<ExperimentOutput> {
    config.validate()?;
    let cascades = &config.method.cascades;
    let deltas = &config.risk.deltas;
    let mut records = Vec::new();
    for &kind in &config.method.edge_sets {
        for (name, method) in resolve_edge_methods(kind, config, pool)? {
            for &alpha in &config.risk.alphas {
                let plan = plan_for(config, method, alpha);
                let per_trial: Vec<Vec<TrialMetrics>> = map_trials(trials, exec, |t| {
                    let prepared = PreparedTrial::prepare(pool, plan, t)?;
                    let mut out = Vec::with_capacity(cascades.len() * deltas.len());
                    for &cascade in cascades {
                        for &delta in deltas {
                            out.push(prepared.route(cascade, delta, config.method.gamma)?.metrics);
                        }
                    }
                    Ok(out)
                })?;
                for (ci, &cascade) in cascades.iter().enumerate() {
                    for (di, &delta) in deltas.iter().enumerate() {
                        for (&t, metrics) in trials.iter().zip(&per_trial) {
                            records.push(TrialRecord {
                                edge_method: name.clone(),
                                cascade: cascade.name().to_string(),
                                alpha,
                                delta,
                                trial: t,
                                metrics: metrics[ci * deltas.len() + di].clone(),
                            });
                        }
                    }
                }
            }
        }
    }
    let aggregate = aggregate(&records);
    Ok(ExperimentOutput { records, aggregate })
}

fn same_cell(a: &TrialRecord, b: &TrialRecord) -> bool {
    a.edge_method == b.edge_method
        && a.cascade == b.cascade
        && a.alpha == b.alpha
        && a.delta == b.delta
}

/// Per-cell means and standard errors, in first-appearance order.
pub fn aggregate(records: &[TrialRecord]) -> Vec<CellSummary> {
    let mut cells: Vec<Vec<&TrialRecord>> = Vec::new();
    for r in records {
        match cells.iter_mut().find(|c| same_cell(c[0], r)) {
            Some(c) => c.push(r),
            None => cells.push(vec![r]),
        }
    }
    cells.into_iter().map(|c| summarize(&c)).collect()
}

fn summarize(cell: &[&TrialRecord]) -> CellSummary {
    let col = |f: &dyn Fn(&TrialMetrics) -> f64| -> Vec<f64> {
        cell.iter().map(|r| f(&r.metrics)).collect()
    };
    let nonempty: Vec<f64> = cell
        .iter()
        .filter(|r| !r.metrics.empty_selection)
        .map(|r| r.metrics.satisfaction_rate)
        .collect();
    let coverage: Vec<f64> = cell
        .iter()
        .filter_map(|r| r.metrics.marginal_coverage)
        .collect();
    let n = cell.len();
    let first = cell[0];
    CellSummary {
        edge_method: first.edge_method.clone(),
        cascade: first.cascade.clone(),
        alpha: first.alpha,
        delta: first.delta,
        trials: n,
        satisfaction_rate: MeanSe::of(&col(&|m| m.satisfaction_rate)),
        satisfaction_rate_nonempty: (!nonempty.is_empty()).then(|| MeanSe::of(&nonempty)),
        deferral_rate: MeanSe::of(&col(&|m| m.deferral_rate)),
        normalized_inefficiency: MeanSe::of(&col(&|m| m.normalized_inefficiency)),
        fdp: MeanSe::of(&col(&|m| m.fdp)),
        marginal_coverage: (coverage.len() == n).then(|| MeanSe::of(&coverage)),
        n_selected: MeanSe::of(&col(&|m| m.n_selected as f64)),
        empty_selection_rate: cell.iter().filter(|r| r.metrics.empty_selection).count() as f64
            / n as f64,
    }
}

/// `results.csv` -> `results.<tag>.csv`.
pub fn sibling_path(path: &Path, tag: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("results");
    let name = match path.extension().and_then(|e| e.to_str()) {
        Some(ext) => format!("{stem}.{tag}.{ext}"),
        None => format!("{stem}.{tag}"),
    };
    path.with_file_name(name)
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| Error::io(path, e.into())
}

/// Deferral rate against normalized inefficiency, one row per cell.
pub fn write_tradeoff(aggregate: &[CellSummary], path: &Path) -> Result<()> {
    let err = csv_err(path);
    let mut w = csv::Writer::from_path(path).map_err(&err)?;
    w.write_record([
        "edge_method",
        "cascade",
        "alpha",
        "delta",
        "deferral_rate",
        "normalized_inefficiency",
    ])
    .map_err(&err)?;
    for c in aggregate {
        w.write_record([
            c.edge_method.clone(),
            c.cascade.clone(),
            c.alpha.to_string(),
            c.delta.to_string(),
            c.deferral_rate.mean.to_string(),
            c.normalized_inefficiency.mean.to_string(),
        ])
        .map_err(&err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Long-format table: one row per cell and metric.
pub fn write_long(aggregate: &[CellSummary], path: &Path) -> Result<()> {
    let err = csv_err(path);
    let mut w = csv::Writer::from_path(path).map_err(&err)?;
    w.write_record([
        "edge_method",
        "cascade",
        "alpha",
        "delta",
        "metric",
        "mean",
        "se",
    ])
    .map_err(&err)?;
    for c in aggregate {
        let mut rows = vec![
            ("satisfaction_rate", Some(c.satisfaction_rate)),
            ("deferral_rate", Some(c.deferral_rate)),
            ("normalized_inefficiency", Some(c.normalized_inefficiency)),
            ("fdp", Some(c.fdp)),
            ("marginal_coverage", c.marginal_coverage),
        ];
        rows.push(("satisfaction_rate_nonempty", c.satisfaction_rate_nonempty));
        for (name, stat) in rows {
            let Some(s) = stat else { continue };
            w.write_record([
                c.edge_method.clone(),
                c.cascade.clone(),
                c.alpha.to_string(),
                c.delta.to_string(),
                name.to_string(),
                s.mean.to_string(),
                s.se.to_string(),
            ])
            .map_err(&err)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes the main results file plus its tradeoff and long-format siblings.
/// Returns every path written.
pub fn write_outputs(
    output: &ExperimentOutput,
    path: &Path,
    format: ResultFormat,
) -> Result<Vec<PathBuf>> {
    write_results(&output.records, &output.aggregate, path, format)?;
    let base = path.with_extension("csv");
    let tradeoff = sibling_path(&base, "tradeoff");
    let long = sibling_path(&base, "long");
    write_tradeoff(&output.aggregate, &tradeoff)?;
    write_long(&output.aggregate, &long)?;
    Ok(vec![path.to_path_buf(), tradeoff, long])
}

/// Screening diagnostics for one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreeningDiagnostic {
    pub edge_method: String,
    pub alpha: f64,
    pub delta: f64,
    pub trial: usize,
    pub stop_step: usize,
    pub n_selected: usize,
    pub fdp_trajectory: Vec<f64>,
    pub martingale: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticReport {
    /// Edge top-1 confidence against top-1 correctness over the pool.
    pub reliability: ReliabilityDiagram,
    pub screening: Vec<ScreeningDiagnostic>,
}

/// Reliability of the edge model on labelled pool examples.
pub fn edge_reliability(pool: &[Example], n_bins: usize) -> Result<ReliabilityDiagram> {
    let labelled: Vec<&Example> = pool.iter().filter(|e| e.label.is_some()).collect();
    let conf: Vec<f64> = labelled.iter().map(|e| e.edge_dist.max_prob()).collect();
    let correct: Vec<bool> = labelled
        .iter()
        .map(|e| e.label == Some(e.edge_dist.argmax()))
        .collect();
    reliability_diagram(&conf, &correct, n_bins)
}

/// Reliability diagram plus the screening trajectory and martingale of trial
/// 0 for every edge method, alpha and delta in the config.
pub fn diagnose(config: &ExperimentConfig, pool: &[Example]) -> Result<DiagnosticReport> {
    config.validate()?;
    let reliability = edge_reliability(pool, config.run.reliability_bins)?;
    let mut screening = Vec::new();
    let trial = 0;
    for &kind in &config.method.edge_sets {
        for (name, method) in resolve_edge_methods(kind, config, pool)? {
            for &alpha in &config.risk.alphas {
                let prepared =
                    PreparedTrial::prepare(pool, plan_for(config, method, alpha), trial)?;
                for &delta in &config.risk.deltas {
                    let routed = prepared.route(CascadeMethod::Cab, delta, None)?;
                    let selection = routed.selection.ok_or_else(|| {
                        Error::Invariant("conformal routing returned no selection".into())
                    })?;
                    screening.push(ScreeningDiagnostic {
                        edge_method: name.clone(),
                        alpha,
                        delta,
                        trial,
                        stop_step: selection.stop_step,
                        n_selected: selection.selected_ids.len(),
                        martingale: prepared.martingale(&selection)?,
                        fdp_trajectory: selection.fdp_trajectory,
                    });
                }
            }
        }
    }
    Ok(DiagnosticReport {
        reliability,
        screening,
    })
}

/// JSON writes the whole report; CSV writes the reliability bins to `path`
/// and the trajectories to a `.screening` sibling.
pub fn write_diagnostics(
    report: &DiagnosticReport,
    path: &Path,
    format: ResultFormat,
) -> Result<Vec<PathBuf>> {
    match format {
        ResultFormat::Json => {
            let text =
                serde_json::to_string_pretty(report).map_err(|e| Error::io(path, e.into()))?;
            std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))?;
            Ok(vec![path.to_path_buf()])
        }
        ResultFormat::Csv => {
            let err = csv_err(path);
            let mut w = csv::Writer::from_path(path).map_err(&err)?;
            w.write_record(["lower", "upper", "confidence_mean", "accuracy", "count"])
                .map_err(&err)?;
            let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
            for b in &report.reliability.bins {
                w.write_record([
                    b.lower.to_string(),
                    b.upper.to_string(),
                    opt(b.confidence_mean),
                    opt(b.accuracy),
                    b.count.to_string(),
                ])
                .map_err(&err)?;
            }
            w.flush().map_err(|e| Error::io(path, e))?;

            let traj = sibling_path(path, "screening");
            let err = csv_err(&traj);
            let mut w = csv::Writer::from_path(&traj).map_err(&err)?;
            w.write_record([
                "edge_method",
                "alpha",
                "delta",
                "trial",
                "step",
                "fdp_estimate",
                "martingale",
                "stopped",
            ])
            .map_err(&err)?;
            for s in &report.screening {
                for (step, m) in s.martingale.iter().enumerate() {
                    w.write_record([
                        s.edge_method.clone(),
                        s.alpha.to_string(),
                        s.delta.to_string(),
                        s.trial.to_string(),
                        step.to_string(),
                        opt(s.fdp_trajectory.get(step).copied()),
                        m.to_string(),
                        u8::from(step == s.stop_step).to_string(),
                    ])
                    .map_err(&err)?;
                }
            }
            w.flush().map_err(|e| Error::io(&traj, e))?;
            Ok(vec![path.to_path_buf(), traj.clone()])
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::SynthConfig;

    fn small_config() -> ExperimentConfig {
        let mut c = ExperimentConfig::default();
        c.synthetic = SynthConfig {
            num_labels: 5,
            feature_dim: 4,
            pool_size: 300,
            seed: 3,
            ..SynthConfig::default()
        };
        c.partition = crate::domain::PartitionSizes {
            cal: 80,
            tr: 60,
            val: 80,
            te: 30,
        };
        c.method.edge_sets = vec![EdgeSetKind::Hms, EdgeSetKind::Lcp];
        c.method.cascades = vec![
            CascadeMethod::Cab,
            CascadeMethod::Cbd,
            CascadeMethod::EdgeOnly,
        ];
        c.risk.deltas = vec![0.1, 0.3];
        c.run.trials = 6;
        c
    }

    #[test]
    fn record_layout() {
        let c = small_config();
        let pool = load_pool(&c).unwrap();
        let out = run_experiment(&c, &pool, Execution::Sequential).unwrap();
        assert_eq!(out.records.len(), 2 * 3 * 2 * 6);
        assert_eq!(out.aggregate.len(), 2 * 3 * 2);
        assert_eq!(out.records[0].edge_method, "hms");
        assert_eq!(out.records[0].cascade, "cab");
        assert_eq!(out.records[5].trial, 5);
        assert_eq!(out.records[6].delta, 0.3);
        assert!(out.aggregate.iter().all(|a| a.trials == 6));
    }

    #[test]
    fn subsets_reproduce_records() {
        let c = small_config();
        let pool = load_pool(&c).unwrap();
        let full = run_experiment(&c, &pool, Execution::Parallel { workers: 2 }).unwrap();
        let part = run_experiment_trials(&c, &pool, &[4, 1], Execution::Sequential).unwrap();
        for r in &part.records {
            let twin = full
                .records
                .iter()
                .find(|f| same_cell(f, r) && f.trial == r.trial)
                .unwrap();
            assert_eq!(twin, r);
        }
    }

    #[test]
    fn bandwidth_is_deterministic_and_positive() {
        let pool = load_pool(&small_config()).unwrap();
        let h = calibrate_bandwidth(&pool).unwrap();
        assert!(h > 0.0 && h.is_finite());
        assert_eq!(h, calibrate_bandwidth(&pool).unwrap());
    }

    #[test]
    fn bandwidth_sweep_names_cells() {
        let mut c = small_config();
        c.method.edge_sets = vec![EdgeSetKind::Lcp];
        c.method.cascades = vec![CascadeMethod::Cab];
        c.method.bandwidths = vec![0.5, 2.0];
        c.run.trials = 2;
        let pool = load_pool(&c).unwrap();
        let out = run_experiment(&c, &pool, Execution::Sequential).unwrap();
        let names: Vec<&str> = out
            .aggregate
            .iter()
            .map(|a| a.edge_method.as_str())
            .collect();
        assert_eq!(names, ["lcp_h0.5", "lcp_h0.5", "lcp_h2", "lcp_h2"]);
    }

    #[test]
    fn sibling_names() {
        assert_eq!(
            sibling_path(Path::new("a/r.csv"), "long"),
            PathBuf::from("a/r.long.csv")
        );
        assert_eq!(
            sibling_path(Path::new("r"), "long"),
            PathBuf::from("r.long")
        );
    }

    #[test]
    fn diagnostics_have_full_trajectories() {
        let c = small_config();
        let pool = load_pool(&c).unwrap();
        let report = diagnose(&c, &pool).unwrap();
        assert_eq!(report.reliability.total_count(), pool.len());
        for s in &report.screening {
            assert_eq!(s.martingale.len(), 80 + 30 + 1);
            assert_eq!(s.fdp_trajectory.len(), s.stop_step + 1);
        }
    }
}
