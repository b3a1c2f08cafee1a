//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::path::Path;
use std::process::Command;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};

use cascade_core::cascade::{cab_select, TestInput, ValidationInput};
use cascade_core::domain::{Categorical, Example, PartitionSizes, RiskSpec};
use cascade_core::harness::config::{CascadeMethod, EdgeSetKind, PredictorKind, DEFAULT_DELTAS};
use cascade_core::harness::{
    load_pool, run_experiment, run_experiment_trials, Execution, ExperimentConfig, PredictorChoice,
    PreparedTrial, TrialPlan,
};
use cascade_core::ingest::CellSummary;
use cascade_core::metrics::{martingale_trajectory, MeanSe};
use cascade_core::predsets::{
    build_edge_sets, calibration_scores, cp_threshold, hms, lcp_threshold, threshold_set,
    weighted_quantile, EdgeSetMethod, KernelSpec, Score, WeightedPoint,
};
use cascade_core::synth::{gen_example, SynthConfig};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

/// Over-confident synthetic setting used by the routing criteria.
fn overconfident(trials: usize) -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    c.synthetic = SynthConfig {
        num_labels: 10,
        pool_size: 1400,
        edge_temperature: 0.5,
        ..SynthConfig::default()
    };
    c.partition = PartitionSizes {
        cal: 500,
        tr: 200,
        val: 500,
        te: 100,
    };
    c.risk.alphas = vec![0.2];
    c.run.trials = trials;
    c.run.base_seed = 2024;
    c
}

fn cell<'a>(agg: &'a [CellSummary], edge: &str, cascade: &str, delta: f64) -> &'a CellSummary {
    agg.iter()
        .find(|c| c.edge_method == edge && c.cascade == cascade && c.delta == delta)
        .expect("cell present")
}

fn fdr_control() -> Outcome {
    let deltas = [0.1, 0.2, 0.3];
    let mut notes = Vec::new();
    let mut pass = true;
    for predictor in [PredictorKind::Isotonic, PredictorKind::Constant] {
        let mut c = overconfident(500);
        c.method.edge_sets = vec![EdgeSetKind::Hms];
        c.method.cascades = vec![CascadeMethod::Cab];
        c.method.predictor = predictor;
        c.method.predictor_constant = 0.5;
        c.risk.deltas = deltas.to_vec();
        let pool = load_pool(&c).unwrap();
        let out = run_experiment(&c, &pool, Execution::default()).unwrap();
        for d in deltas {
            let s = cell(&out.aggregate, "hms", "cab", d);
            let ok = s.trials >= 500 && s.fdp.mean <= d + 3.0 * s.fdp.se;
            pass &= ok;
            notes.push(format!(
                "{predictor:?} d={d}: {:.4}+-{:.4}",
                s.fdp.mean, s.fdp.se
            ));
        }
    }
    outcome(pass, notes.join("; "))
}

fn edge_only_fails() -> Outcome {
    let delta = 0.2;
    let mut c = overconfident(500);
    c.method.edge_sets = vec![EdgeSetKind::Hms];
    c.method.cascades = vec![CascadeMethod::EdgeOnly, CascadeMethod::Cab];
    c.risk.deltas = vec![delta];
    let pool = load_pool(&c).unwrap();
    let out = run_experiment(&c, &pool, Execution::default()).unwrap();
    let edge = cell(&out.aggregate, "hms", "edge_only", delta);
    let cab = cell(&out.aggregate, "hms", "cab", delta);
    let edge_violates = edge.satisfaction_rate.mean + 3.0 * edge.satisfaction_rate.se < 1.0 - delta;
    let cab_ok = cab.fdp.mean <= delta + 3.0 * cab.fdp.se;
    outcome(
        edge_violates && cab_ok,
        format!(
            "edge-only satisfaction {:.4}+-{:.4} vs target {}; CAb FDR {:.4}+-{:.4}",
            edge.satisfaction_rate.mean,
            edge.satisfaction_rate.se,
            1.0 - delta,
            cab.fdp.mean,
            cab.fdp.se
        ),
    )
}

fn cp_marginal_validity() -> Outcome {
    let draws = 2000;
    let n_cal = 100;
    let config = SynthConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut pass = true;
    let mut notes = Vec::new();
    for alpha in [0.1, 0.2] {
        let mut hits = 0usize;
        for d in 0..draws {
            let cal: Vec<Example> = (0..n_cal)
                .map(|i| gen_example(&config, format!("c{d}-{i}"), &mut rng).unwrap())
                .collect();
            let test = gen_example(&config, format!("t{d}"), &mut rng).unwrap();
            let cal_refs: Vec<&Example> = cal.iter().collect();
            let sets =
                build_edge_sets(&EdgeSetMethod::Cp, alpha, &cal_refs, &[&test], &mut rng).unwrap();
            if sets[0].contains(test.label.unwrap()) {
                hits += 1;
            }
        }
        let p = hits as f64 / draws as f64;
        let se = (p * (1.0 - p) / draws as f64).sqrt();
        let lo = 1.0 - alpha - 3.0 * se;
        let hi = 1.0 - alpha + 1.0 / (n_cal as f64 + 1.0) + 3.0 * se;
        pass &= p >= lo && p <= hi;
        notes.push(format!("a={alpha}: {p:.4} in [{lo:.4}, {hi:.4}]"));
    }
    outcome(pass, notes.join("; "))
}

fn unit_box_example(id: String, k: usize, dim: usize, rng: &mut ChaCha8Rng) -> Example {
    let gamma = Gamma::new(1.0, 1.0).unwrap();
    let draw = |rng: &mut ChaCha8Rng| {
        let g: Vec<f64> = (0..k).map(|_| gamma.sample(rng) + 1e-6).collect();
        let s: f64 = g.iter().sum();
        Categorical::new(g.into_iter().map(|x| x / s).collect()).unwrap()
    };
    let cloud = draw(rng);
    let edge = draw(rng);
    let label = rng.random_range(0..k);
    Example {
        id,
        features: (0..dim).map(|_| rng.random::<f64>()).collect(),
        cloud_dist: cloud,
        edge_dist: edge,
        label: Some(label),
    }
}

fn lcp_degenerates_to_cp() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut bitwise = 0;
    let mut same_sets = 0;
    let instances = 100;
    let wide = KernelSpec::gaussian(1e9).unwrap();
    for inst in 0..instances {
        let k = rng.random_range(2..=8);
        let alpha = [0.1, 0.2, 0.3][inst % 3];
        // (1 - alpha)(n + 1) is kept off the integers, where an arbitrarily
        // small reweighting may move the quantile to a neighbouring score
        let off_boundary = |n: usize| {
            let frac = ((1.0 - alpha) * (n as f64 + 1.0)).fract();
            frac.min(1.0 - frac) > 1e-3
        };
        let mut n = if inst % 2 == 0 {
            100
        } else {
            rng.random_range(5..60)
        };
        while !off_boundary(n) {
            n += 1;
        }
        let cal: Vec<Example> = (0..n)
            .map(|i| unit_box_example(format!("c{i}"), k, 3, &mut rng))
            .collect();
        let test = unit_box_example("t".into(), k, 3, &mut rng);
        let refs: Vec<&Example> = cal.iter().collect();
        let scored = calibration_scores(&refs).unwrap();
        let scores: Vec<Score> = scored.iter().map(|(_, s)| *s).collect();
        let cp = cp_threshold(&scores, alpha).unwrap();
        let lcp = lcp_threshold(&test, &scored, alpha, &KernelSpec::Constant, &mut rng).unwrap();
        if cp.to_bits() == lcp.to_bits() {
            bitwise += 1;
        }
        let wide_q = lcp_threshold(&test, &scored, alpha, &wide, &mut rng).unwrap();
        if threshold_set(&test.edge_dist, wide_q) == threshold_set(&test.edge_dist, cp) {
            same_sets += 1;
        }
    }
    outcome(
        bitwise == instances && same_sets == instances,
        format!("constant kernel bitwise {bitwise}/{instances}; h=1e9 equal sets {same_sets}/{instances}"),
    )
}

/// Smallest subset size whose mass reaches `1 - alpha`, by exhaustive search.
fn brute_force_min_size(p: &[f64], alpha: f64) -> usize {
    let k = p.len();
    let mut best = usize::MAX;
    for mask in 0u32..(1 << k) {
        let mass: f64 = (0..k).filter(|&i| mask >> i & 1 == 1).map(|i| p[i]).sum();
        if mass >= (1.0 - alpha) - 1e-12 {
            best = best.min(mask.count_ones() as usize);
        }
    }
    best
}

fn hms_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut ok = 0;
    let total = 1000 * 3;
    for i in 0..1000 {
        let k = rng.random_range(2..=8);
        let raw: Vec<f64> = if i % 3 == 0 {
            // coarse grid to force ties
            (0..k)
                .map(|_| rng.random_range(0..5) as f64 + 1.0)
                .collect()
        } else {
            (0..k)
                .map(|_| -rng.random::<f64>().max(1e-300).ln())
                .collect()
        };
        let s: f64 = raw.iter().sum();
        let p: Vec<f64> = raw.iter().map(|x| x / s).collect();
        let dist = Categorical::new(p.clone()).unwrap();
        for alpha in [0.0, 0.1, 0.3] {
            let set = hms(&dist, alpha).unwrap();
            let mass: f64 = set.members().iter().map(|&y| p[y]).sum();
            let feasible = mass >= (1.0 - alpha) - 1e-12;
            if feasible && set.len() == brute_force_min_size(&p, alpha) {
                ok += 1;
            }
        }
    }
    outcome(ok == total, format!("{ok}/{total} match"))
}

/// Smallest point value whose cumulative normalized weight reaches `level`.
fn scan_quantile(points: &[(f64, f64)], level: f64) -> f64 {
    let total: f64 = points.iter().map(|p| p.1).sum();
    let mut values: Vec<f64> = points.iter().map(|p| p.0).collect();
    values.sort_by(f64::total_cmp);
    values.dedup();
    for v in &values {
        let cum: f64 = points.iter().filter(|p| p.0 <= *v).map(|p| p.1).sum();
        if cum / total >= level - 1e-12 {
            return *v;
        }
    }
    *values.last().unwrap()
}

fn random_points(rng: &mut ChaCha8Rng) -> Vec<(f64, f64)> {
    let n = rng.random_range(1..=12);
    (0..n)
        .map(|_| {
            let v = match rng.random_range(0..10) {
                0 => f64::INFINITY,
                1..=3 => rng.random_range(0..4) as f64,
                _ => rng.random::<f64>() * 5.0,
            };
            let w = if rng.random_bool(0.5) {
                rng.random_range(1..5) as f64
            } else {
                rng.random::<f64>() + 1e-3
            };
            (v, w)
        })
        .collect()
}

fn quantile_of(points: &[(f64, f64)], level: f64) -> f64 {
    let wp: Vec<WeightedPoint> = points
        .iter()
        .map(|&(v, w)| WeightedPoint::new(v, w))
        .collect();
    weighted_quantile(&wp, level).unwrap()
}

fn weighted_quantile_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut matched = 0;
    for _ in 0..500 {
        let pts = random_points(&mut rng);
        let level = rng.random::<f64>();
        let q = quantile_of(&pts, level);
        if q == scan_quantile(&pts, level) {
            matched += 1;
        }
    }
    let mut monotone = 0;
    for _ in 0..500 {
        let pts = random_points(&mut rng);
        let (a, b): (f64, f64) = (rng.random(), rng.random());
        let (lo, hi) = (a.min(b), a.max(b));
        if quantile_of(&pts, lo) <= quantile_of(&pts, hi) {
            monotone += 1;
        }
    }
    outcome(
        matched == 500 && monotone == 500,
        format!("oracle {matched}/500; monotone {monotone}/500"),
    )
}

fn monotone_tradeoff() -> Outcome {
    let mut c = overconfident(200);
    c.method.edge_sets = vec![EdgeSetKind::Hms, EdgeSetKind::Cp, EdgeSetKind::Lcp];
    c.method.cascades = vec![CascadeMethod::Cab, CascadeMethod::EdgeOnly];
    c.risk.deltas = DEFAULT_DELTAS.to_vec();
    let pool = load_pool(&c).unwrap();
    let out = run_experiment(&c, &pool, Execution::default()).unwrap();
    let mut violations = 0;
    let mut checked = 0;
    for edge in ["hms", "cp", "lcp"] {
        for t in 0..c.run.trials {
            let dr: Vec<f64> = DEFAULT_DELTAS
                .iter()
                .map(|&d| {
                    out.records
                        .iter()
                        .find(|r| {
                            r.edge_method == edge
                                && r.cascade == "cab"
                                && r.delta == d
                                && r.trial == t
                        })
                        .unwrap()
                        .metrics
                        .deferral_rate
                })
                .collect();
            checked += 1;
            if dr.windows(2).any(|w| w[1] > w[0]) {
                violations += 1;
            }
        }
    }
    let mut ni_out = Vec::new();
    for edge in ["hms", "cp", "lcp"] {
        for &d in &DEFAULT_DELTAS {
            let cab = cell(&out.aggregate, edge, "cab", d);
            let base = cell(&out.aggregate, edge, "edge_only", d)
                .normalized_inefficiency
                .mean;
            let m = cab.normalized_inefficiency;
            let tol = 3.0 * m.se;
            if m.mean < base.min(1.0) - tol || m.mean > base.max(1.0) + tol {
                ni_out.push(format!("{edge} d={d}: {:.4} vs edge {base:.4}", m.mean));
            }
        }
    }
    outcome(
        violations == 0 && ni_out.is_empty(),
        format!(
            "DR monotone in {}/{checked} trials; NI outside band: {}",
            checked - violations,
            if ni_out.is_empty() {
                "none".to_string()
            } else {
                ni_out.join(", ")
            }
        ),
    )
}

fn martingale_diagnostic() -> Outcome {
    let (n_val, n_te, trials) = (80, 20, 1000);
    let alpha = 0.2;
    let spec = RiskSpec::new(alpha, 0.2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let m0_expected = 20.0 / 81.0;
    let mut m0_exact = 0;
    let mut stopped = Vec::with_capacity(trials);
    for t in 0..trials {
        let val: Vec<ValidationInput> = (0..n_val)
            .map(|i| ValidationInput {
                id: format!("v{i}"),
                true_score: rng.random::<f64>() * 0.79,
                predicted_score: rng.random(),
            })
            .collect();
        let mut truth = std::collections::HashMap::new();
        let te: Vec<TestInput> = (0..n_te)
            .map(|i| {
                let id = format!("t{i}");
                truth.insert(id.clone(), rng.random::<f64>() * 0.79);
                TestInput {
                    id,
                    predicted_score: rng.random(),
                }
            })
            .collect();
        let sel = cab_select(&val, &te, &spec, t as u64).unwrap();
        let m = martingale_trajectory(&sel.order, &truth, alpha).unwrap();
        if m[0] == m0_expected {
            m0_exact += 1;
        }
        stopped.push(m[sel.stop_step]);
    }
    let s = MeanSe::of(&stopped);
    let pass = m0_exact == trials && s.mean <= m0_expected + 3.0 * s.se;
    outcome(
        pass,
        format!(
            "M0 = 20/81 in {m0_exact}/{trials}; stopped mean {:.4}+-{:.4} vs {:.4}",
            s.mean, s.se, m0_expected
        ),
    )
}

fn run_cli(args: &[&str]) -> bool {
    Command::new(env!("CARGO_BIN_EXE_cab"))
        .args(args)
        .status()
        .map(|s| s.success())
        .unwrap_or(false)
}

fn same_bytes(a: &Path, b: &Path) -> bool {
    match (std::fs::read(a), std::fs::read(b)) {
        (Ok(x), Ok(y)) => x == y,
        _ => false,
    }
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("exp.toml");
    std::fs::write(
        &cfg_path,
        "[synthetic]\npool_size = 600\n\n[partition]\ncal = 200\ntr = 100\nval = 200\nte = 50\n\n\
         [method]\nedge_sets = [\"hms\", \"lcp\"]\ncascades = [\"cab\", \"cbd\"]\n\n[run]\ntrials = 20\n",
    )
    .unwrap();
    let cfg = cfg_path.to_str().unwrap();
    let mut identical = true;
    let mut notes = Vec::new();
    for (verb, format, files) in [
        ("run", "csv", vec!["r.csv", "r.tradeoff.csv", "r.long.csv"]),
        (
            "run",
            "json",
            vec!["r.json", "r.tradeoff.csv", "r.long.csv"],
        ),
        ("diagnose", "csv", vec!["d.csv", "d.screening.csv"]),
    ] {
        let stem = files[0];
        for round in ["a", "b"] {
            let out = dir.path().join(round).join(stem);
            std::fs::create_dir_all(out.parent().unwrap()).unwrap();
            let ok = run_cli(&[
                verb,
                "--config",
                cfg,
                "--seed",
                "11",
                "--format",
                format,
                "--out",
                out.to_str().unwrap(),
            ]);
            identical &= ok;
        }
        for f in files {
            let same = same_bytes(&dir.path().join("a").join(f), &dir.path().join("b").join(f));
            identical &= same;
        }
        notes.push(format!("{verb} {format}"));
    }
    for round in ["a", "b"] {
        let out = dir.path().join(round).join("pool.jsonl");
        identical &= run_cli(&["gen", "--seed", "3", "--out", out.to_str().unwrap()]);
    }
    identical &= same_bytes(
        &dir.path().join("a/pool.jsonl"),
        &dir.path().join("b/pool.jsonl"),
    );

    // permuted trial order: identical per-trial records, aggregates agree
    let mut c = ExperimentConfig::from_file(&cfg_path).unwrap();
    c.run.base_seed = 11;
    let pool = load_pool(&c).unwrap();
    let forward: Vec<usize> = (0..c.run.trials).collect();
    let mut shuffled = forward.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for i in (1..shuffled.len()).rev() {
        shuffled.swap(i, rng.random_range(0..=i));
    }
    let a = run_experiment_trials(&c, &pool, &forward, Execution::Sequential).unwrap();
    let b = run_experiment_trials(&c, &pool, &shuffled, Execution::default()).unwrap();
    let mut records_match = true;
    for r in &a.records {
        records_match &= b.records.iter().any(|o| o == r);
    }
    let mut beyond = 0;
    for (x, y) in a.aggregate.iter().zip(&b.aggregate) {
        for (p, q) in [
            (x.deferral_rate, y.deferral_rate),
            (x.normalized_inefficiency, y.normalized_inefficiency),
            (x.fdp, y.fdp),
            (x.satisfaction_rate, y.satisfaction_rate),
        ] {
            if (p.mean - q.mean).abs() > 3.0 * p.se.max(q.se) + 1e-12 {
                beyond += 1;
            }
        }
    }
    notes.push(format!(
        "gen; reshuffled records match: {records_match}; aggregates beyond 3SE: {beyond}"
    ));
    outcome(identical && records_match && beyond == 0, notes.join(", "))
}

fn extremes() -> Outcome {
    let mut c = overconfident(50);
    c.method.edge_sets = vec![EdgeSetKind::Hms, EdgeSetKind::Cp, EdgeSetKind::Lcp];
    let pool = load_pool(&c).unwrap();
    let alpha = c.risk.alphas[0];
    let mut cloud_exact = true;
    let mut edge_exact = true;
    for (kind, method) in [
        ("hms", EdgeSetMethod::Hms),
        ("cp", EdgeSetMethod::Cp),
        (
            "lcp",
            EdgeSetMethod::Lcp {
                kernel: KernelSpec::gaussian(1.0).unwrap(),
            },
        ),
    ] {
        let plan = TrialPlan {
            edge_method: method,
            alpha,
            sizes: c.partition,
            predictor: PredictorChoice::Isotonic,
            base_seed: c.run.base_seed,
        };
        for t in 0..c.run.trials {
            let prepared = PreparedTrial::prepare(&pool, plan, t).unwrap();
            let cloud = prepared
                .route(CascadeMethod::CloudOnly, 0.2, None)
                .unwrap()
                .metrics;
            cloud_exact &= cloud.deferral_rate == 1.0
                && cloud.normalized_inefficiency == 1.0
                && cloud.satisfaction_rate == 1.0;
            let edge = prepared
                .route(CascadeMethod::EdgeOnly, 0.2, None)
                .unwrap()
                .metrics;
            // independent recomputation of the edge-only inefficiency
            let te = &prepared.partition().te;
            let ratio: f64 = te
                .iter()
                .zip(prepared.test_edge_sets())
                .map(|(&i, s)| {
                    s.len() as f64 / hms(&pool[i].cloud_dist, alpha).unwrap().len() as f64
                })
                .sum::<f64>()
                / te.len() as f64;
            edge_exact &=
                edge.deferral_rate == 0.0 && (edge.normalized_inefficiency - ratio).abs() < 1e-12;
            let _ = kind;
        }
    }

    // edge identical to cloud: every input is aligned and nothing is deferred
    let mut aligned = overconfident(20);
    aligned.synthetic.edge_temperature = 1.0;
    aligned.synthetic.edge_noise = 0.0;
    aligned.method.cascades = vec![CascadeMethod::Cab];
    let d_min = aligned.partition.te as f64 / (1.0 + aligned.partition.val as f64);
    aligned.risk.deltas = vec![d_min.max(0.2)];
    let pool = load_pool(&aligned).unwrap();
    let out = run_experiment(&aligned, &pool, Execution::default()).unwrap();
    let all_kept = out.records.iter().all(|r| {
        r.metrics.deferral_rate == 0.0
            && r.metrics.fdp == 0.0
            && r.metrics.n_selected == aligned.partition.te
    });
    outcome(
        cloud_exact && edge_exact && all_kept,
        format!("cloud-only DR=NI=1: {cloud_exact}; edge-only DR=0 and NI exact: {edge_exact}; aligned CAb keeps all: {all_kept}"),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("FDR control under CAb", fdr_control),
        (
            "edge-only violates the satisfaction target",
            edge_only_fails,
        ),
        ("CP marginal validity", cp_marginal_validity),
        ("LCP degenerates to CP", lcp_degenerates_to_cp),
        ("HMS brute-force oracle", hms_oracle),
        ("weighted-quantile oracle", weighted_quantile_oracle),
        ("monotone deferral and NI band", monotone_tradeoff),
        ("screening martingale", martingale_diagnostic),
        ("determinism", determinism),
        ("cloud-only and edge-only extremes", extremes),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = std::time::Instant::now();
        let o = f();
        let tag = if o.pass { "PASS" } else { "FAIL" };
        if !o.pass {
            failed += 1;
        }
        println!(
            "{tag} [{}] {name}: {} ({:.1}s)",
            i + 1,
            o.detail,
            start.elapsed().as_secs_f64()
        );
    }
    println!(
        "{} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
