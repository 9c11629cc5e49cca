//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::io::Write;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rangesel::estimators::{expand_query, neurocdf_estimate};
use rangesel::harness::{run_pipeline, DatasetSource, EstimatorConfig, ExperimentConfig, ExperimentReport, OodScenario, WorkloadSettings};
use rangesel::measurecheck::{gen_triples, MeasureClass, MeasureCheckSettings, FIGURE_FIXTURE};
use rangesel::neuralnet::{check_gradients, LossKind, Mlp, OutputActivation, TrainConfig};
use rangesel::workload::{center_move_example, estimate_c2, granularity_shift_example, verify_example1, Span};
use rangesel::{generate_gaussian, GaussianSpec, Interval, RangeQuery, WorkloadSpec, WorkloadTag};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn c1_figure_fixture() -> Outcome {
    let v: Vec<_> = FIGURE_FIXTURE.iter().map(|s| s.classify()).collect();
    ensure(v[0].class == MeasureClass::Probability && v[0].atoms == Some([2, 3, 5]), || {
        format!("S1: {:?}", v[0])
    })?;
    ensure(v[1].class == MeasureClass::NotAMeasure && v[1].additivity_residual == 9 - 20, || {
        format!("S2: {:?}", v[1])
    })?;
    ensure(
        v[2].class == MeasureClass::SignedOnly
            && v[2].additivity_residual == 0
            && v[2].inversions.is_empty()
            && v[2].total_mass == 9,
        || format!("S3: {:?}", v[2]),
    )?;
    ensure(
        v[3].class == MeasureClass::SignedOnly && v[3].inversions == vec![("R_BC", "R_ABC")],
        || format!("S4: {:?}", v[3]),
    )?;
    let f = &FIGURE_FIXTURE;
    Ok(format!(
        "S1 {}; S2 additivity {}+{}+{} != 2*{} (tenths); S3 mass 0.{}; S4 {} > {} on R_BC in R_ABC",
        v[0].class, f[1].ab, f[1].ac, f[1].bc, f[1].abc, v[2].total_mass, f[3].bc, f[3].abc
    ))
}

fn c2_vertex_expansion() -> Outcome {
    let (a1, b1, a2, b2) = (0.2, 0.6, 0.3, 0.9);
    let q = RangeQuery::new(vec![Some(Interval::new(a1, b1).unwrap()), Some(Interval::new(a2, b2).unwrap())]).unwrap();
    let e = expand_query(&q);
    let got: Vec<(f64, Vec<f64>)> = e.terms.iter().map(|t| (t.sign, t.vertex.clone())).collect();
    let want = vec![
        (1.0, vec![b1, b2]),
        (-1.0, vec![a1, b2]),
        (-1.0, vec![b1, a2]),
        (1.0, vec![a1, a2]),
    ];
    ensure(got == want, || format!("2-d expansion {got:?}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for case in 0..10_000 {
        let d = rng.random_range(1..=10);
        let n_c = rng.random_range(0..=d);
        let mut bounds = vec![None; d];
        for c in rand::seq::index::sample(&mut rng, d, n_c) {
            let lo = rng.random_range(0.001..0.9);
            let hi = rng.random_range(lo + 0.05..=1.0);
            bounds[c] = Some(Interval::new(lo, hi).unwrap());
        }
        let q = RangeQuery::new(bounds).unwrap();
        let e = expand_query(&q);
        ensure(e.terms.len() == 1 << n_c && e.skipped_zero_vertices == 0, || {
            format!("case {case}: {} terms for n_c = {n_c}", e.terms.len())
        })?;
        let sum: f64 = e.terms.iter().map(|t| t.sign).sum();
        ensure(n_c == 0 || sum == 0.0, || format!("case {case}: signs sum to {sum}"))?;
        for t in &e.terms {
            let lowers = q.constrained_columns().filter(|&c| t.vertex[c] == q.bound(c).unwrap().lo).count() as u32;
            let expected_sign = if lowers % 2 == 0 { 1.0 } else { -1.0 };
            ensure(t.sign == expected_sign && t.lower_count == lowers, || {
                format!("case {case}: sign {} with {lowers} lower endpoints", t.sign)
            })?;
        }
    }
    Ok("four signed terms verbatim; 10000 random queries have 2^n_c terms with zero sign sum".into())
}

fn c3_neurocdf_additivity() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for m in 0..50u64 {
        let d = 1 + (m as usize % 6);
        let model = Mlp::new(&[d, 32, 32, 1], OutputActivation::Sigmoid, 1_000 + m).unwrap();
        let spec = WorkloadSpec {
            length_bounds: Span::new(0.0, 1.0),
            ..WorkloadSpec::uniform(d, 0, 0)
        };
        for t in gen_triples(&spec, d, 20, 77 + m).map_err(|e| e.to_string())? {
            let (w, _) = neurocdf_estimate(&model, &t.whole).unwrap();
            let (l, _) = neurocdf_estimate(&model, &t.left).unwrap();
            let (r, _) = neurocdf_estimate(&model, &t.right).unwrap();
            worst = worst.max((w - l - r).abs());
            cases += 1;
        }
    }
    ensure(worst <= 1e-5, || format!("max residual {worst:e}"))?;
    Ok(format!("{cases} cases, max |S(q) - S(q2) - S(q3)| = {worst:.2e}"))
}

fn c4_gradients() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    let mut skipped = 0;
    let mut nets = 0;
    let mut seed = 0u64;
    while nets < 100 {
        seed += 1;
        let width = rng.random_range(1..=6);
        let h1 = rng.random_range(2..=12);
        let h2 = rng.random_range(2..=12);
        let batch: Vec<(Vec<f64>, f64)> = (0..rng.random_range(1..=8))
            .map(|_| {
                let x = (0..width).map(|_| rng.random::<f64>()).collect();
                (x, rng.random_range(0.001..1.0))
            })
            .collect();
        let mut results = Vec::new();
        for (kind, act) in [
            (LossKind::Mse, OutputActivation::Identity),
            (LossKind::Mse, OutputActivation::Sigmoid),
            (LossKind::Msle, OutputActivation::Sigmoid),
        ] {
            let m = Mlp::new(&[width, h1, h2, 1], act, seed).unwrap();
            // A step of 1e-5 moves pre-activations by about that much, so a
            // kink closer than 1e-4 can be straddled by the central difference.
            results.push(check_gradients(&m, &batch, kind, 1e-4, 1e-5, 1e-4));
        }
        if results.iter().any(|r| r.near_kink) {
            skipped += 1;
            continue;
        }
        for r in &results {
            worst = worst.max(r.max_rel_error);
        }
        nets += 1;
    }
    ensure(worst <= 1e-4, || format!("max relative error {worst:e}"))?;
    Ok(format!(
        "100 nets x {{mse identity, mse sigmoid, msle sigmoid}}: max rel. error {worst:.2e} ({skipped} nets near a ReLU kink redrawn)"
    ))
}

fn c5_oracle() -> Outcome {
    let ds = generate_gaussian(&GaussianSpec {
        dims: 4,
        rows: 1_000,
        correlation: 0.6,
        seed: 5,
    })
    .map_err(|e| e.to_string())?;
    let queries = WorkloadSpec::uniform(4, 1_000, 55).sample_queries(4).map_err(|e| e.to_string())?;
    let rows: Vec<Vec<f64>> = ds.rows().map(<[f64]>::to_vec).collect();
    for (i, q) in queries.iter().enumerate() {
        let mut count = 0usize;
        for row in &rows {
            let mut inside = true;
            for (c, b) in q.bounds().iter().enumerate() {
                if let Some(iv) = b {
                    if !(row[c] > iv.lo && row[c] <= iv.hi) {
                        inside = false;
                    }
                }
            }
            if inside {
                count += 1;
            }
        }
        let s = ds.true_selectivity(q).map_err(|e| e.to_string())?;
        ensure(s == count as f64 / 1_000.0, || format!("query {i}: {s} vs {count}/1000"))?;
    }
    Ok("1000 rows x 1000 queries match the nested-loop count exactly".into())
}

fn c6_c2() -> Outcome {
    let base = WorkloadSpec::uniform(1, 0, 6);
    let samples = 200_000;
    let (tr, te) = center_move_example(&base);
    let ex2 = estimate_c2(&tr, &te, 400, samples).map_err(|e| e.to_string())?;
    let (tr, te) = granularity_shift_example(&base);
    let ex3 = estimate_c2(&tr, &te, 400, samples).map_err(|e| e.to_string())?;
    let same = estimate_c2(&base, &WorkloadSpec { seed: 99, ..base.clone() }, 400, samples).map_err(|e| e.to_string())?;
    ensure((ex2 - 2.0).abs() <= 0.2, || format!("example 2: {ex2}"))?;
    ensure((ex3 - 5.0).abs() <= 0.5, || format!("example 3: {ex3}"))?;
    ensure((same - 1.0).abs() <= 0.05, || format!("identical: {same}"))?;
    Ok(format!(
        "center move {ex2:.3} (want 2), granularity {ex3:.3} (want 5), identical {same:.3} (want 1); {samples} samples"
    ))
}

fn c7_example1() -> Outcome {
    let mut parts = Vec::new();
    for delta in [-5.0, -1.0, 0.0, 0.5, 1.0, 5.0] {
        let r = verify_example1(delta, 10_000);
        ensure(r.holds, || format!("delta {delta}: lhs {} < {}", r.lhs, r.rhs_times_c3))?;
        parts.push(format!("{delta}: {:.4} >= {:.4}", r.lhs, r.rhs_times_c3));
    }
    Ok(parts.join(", "))
}

fn pipeline_config(dir: &Path) -> ExperimentConfig {
    ExperimentConfig {
        seed: 1,
        output_dir: dir.to_path_buf(),
        dataset: DatasetSource::Gaussian {
            dims: 10,
            rows: 50_000,
            correlation: 0.8,
        },
        scenario: OodScenario::GranularityShift {
            train_length: Span::new(0.05, 0.2),
            test_length: Span::new(0.4, 0.8),
        },
        workload: WorkloadSettings {
            n_train: 20_000,
            n_test: 5_000,
            n_filters: Some((1, 3)),
            ..WorkloadSettings::default()
        },
        estimators: vec![
            EstimatorConfig::Direct {
                train: TrainConfig::default(),
            },
            EstimatorConfig::Neurocdf {
                train: TrainConfig {
                    loss: LossKind::Mse,
                    ..TrainConfig::default()
                },
            },
            EstimatorConfig::Seconcdf {
                train: TrainConfig::default(),
                omega1: 1.0,
                omega2: 1.0,
                consistency_batch: 128,
            },
        ],
        measure: MeasureCheckSettings {
            n_triples: 200,
            n_chains: 20,
            grid_points: 20,
            ..MeasureCheckSettings::default()
        },
        ..ExperimentConfig::default()
    }
}

fn c8_generalization(r: &ExperimentReport) -> Outcome {
    let get = |name: &str, tag| r.row(name, tag).ok_or_else(|| format!("missing {name} {tag:?}"));
    let d_in = get("direct", WorkloadTag::TestIndist)?;
    let d_ood = get("direct", WorkloadTag::TestOod)?;
    let n_ood = get("neurocdf", WorkloadTag::TestOod)?;
    let s_in = get("seconcdf", WorkloadTag::TestIndist)?;
    let s_ood = get("seconcdf", WorkloadTag::TestOod)?;
    // Trained on msle, so judged by median Qerror.
    let tier = rangesel::metrics::Tier::from_median_qerror(d_in.qerror_median);
    ensure(tier != rangesel::metrics::Tier::Poor, || {
        format!("(a) direct in-dist median Qerror {} is {tier}", d_in.qerror_median)
    })?;
    ensure(d_ood.rmse >= 2.0 * d_in.rmse, || {
        format!("(b) direct OOD RMSE {} < 2 x {}", d_ood.rmse, d_in.rmse)
    })?;
    ensure(n_ood.rmse < d_ood.rmse, || {
        format!("(c) neurocdf OOD RMSE {} >= direct {}", n_ood.rmse, d_ood.rmse)
    })?;
    ensure(s_ood.qerror_median < d_ood.qerror_median, || {
        format!("(d) seconcdf OOD q50 {} >= direct {}", s_ood.qerror_median, d_ood.qerror_median)
    })?;
    ensure(s_in.qerror_median <= 1.5 * d_in.qerror_median, || {
        format!("(d) seconcdf in-dist q50 {} > 1.5 x {}", s_in.qerror_median, d_in.qerror_median)
    })?;
    Ok(format!(
        "(a) direct in-dist q50 {:.3} {tier}; (b) direct RMSE {:.4} -> {:.4} ({:.1}x); (c) neurocdf OOD RMSE {:.4} < {:.4}; \
         (d) seconcdf OOD q50 {:.3} < {:.3}, in-dist q50 {:.3} vs {:.3}",
        d_in.qerror_median,
        d_in.rmse,
        d_ood.rmse,
        d_ood.rmse / d_in.rmse,
        n_ood.rmse,
        d_ood.rmse,
        s_ood.qerror_median,
        d_ood.qerror_median,
        s_in.qerror_median,
        d_in.qerror_median
    ))
}

fn c9_measure(dir: &Path) -> Outcome {
    let cfg = ExperimentConfig {
        output_dir: dir.to_path_buf(),
        estimators: vec![
            EstimatorConfig::Direct {
                train: TrainConfig::default(),
            },
            EstimatorConfig::Parametric { degree: 2 },
            EstimatorConfig::Histogram {
                buckets_per_dim: 4,
                cell_cap: rangesel::estimators::DEFAULT_GRID_CELL_CAP,
            },
            EstimatorConfig::Neurocdf {
                train: TrainConfig {
                    loss: LossKind::Mse,
                    ..TrainConfig::default()
                },
            },
        ],
        measure: MeasureCheckSettings::default(),
        ..pipeline_config(dir)
    };
    let r = run_pipeline(&cfg).map_err(|e| e.to_string())?;
    let m = |name: &str| r.measure_for(name).ok_or_else(|| format!("no measure report for {name}"));
    let mut parts = Vec::new();
    for name in ["direct", "parametric"] {
        let x = m(name)?;
        let (a, b) = (x.additivity.violation_rate(), x.monotonicity.violation_rate());
        ensure(a >= 0.01 && b >= 0.01, || {
            format!("{name}: additivity violations {a:.3}, inverted chains {b:.3}")
        })?;
        parts.push(format!("{name} fails on {:.1}%/{:.1}%", 100.0 * a, 100.0 * b));
    }
    let h = m("histogram")?;
    ensure(h.additivity.passed && h.monotonicity.passed, || format!("histogram: {h:?}"))?;
    parts.push("histogram passes both".into());
    let n = m("neurocdf")?;
    ensure(n.additivity.passed, || format!("neurocdf additivity: {:?}", n.additivity))?;
    parts.push(format!(
        "neurocdf additive (max residual {:.1e})",
        n.additivity.max_abs_residual
    ));
    Ok(format!(
        "{} triples, {} chains x {} points: {}",
        h.additivity.n_triples,
        h.monotonicity.n_cdf_chains,
        cfg.measure.grid_points,
        parts.join("; ")
    ))
}

struct Line {
    id: usize,
    title: &'static str,
    outcome: Outcome,
    elapsed: Duration,
    budget: Duration,
}

fn report(line: &Line) -> bool {
    let within = line.elapsed <= line.budget;
    let ok = line.outcome.is_ok() && within;
    let detail = match &line.outcome {
        Ok(d) => d.clone(),
        Err(e) => e.clone(),
    };
    let budget = if within {
        String::new()
    } else {
        format!(" [over budget {:.0?}]", line.budget)
    };
    let mut err = std::io::stderr().lock();
    let _ = writeln!(
        err,
        "criterion {:>2} {} {}: {} ({:.1?}){}",
        line.id,
        if ok { "PASS" } else { "FAIL" },
        line.title,
        detail,
        line.elapsed,
        budget
    );
    ok
}

fn timed(id: usize, title: &'static str, budget: Duration, f: impl FnOnce() -> Outcome) -> Line {
    let t = Instant::now();
    let outcome = f();
    Line {
        id,
        title,
        outcome,
        elapsed: t.elapsed(),
        budget,
    }
}

fn main() {
    let secs = Duration::from_secs;
    let mut lines = vec![
        timed(1, "figure fixture", secs(1), c1_figure_fixture),
        timed(2, "vertex expansion", secs(10), c2_vertex_expansion),
        timed(3, "neurocdf additivity", secs(30), c3_neurocdf_additivity),
        timed(4, "gradient check", secs(60), c4_gradients),
        timed(5, "oracle equivalence", secs(30), c5_oracle),
        timed(6, "c2 estimation", secs(60), c6_c2),
        timed(7, "example 1", secs(5), c7_example1),
    ];

    let tmp = tempfile::tempdir().expect("temp dir");
    let t = Instant::now();
    let first = run_pipeline(&pipeline_config(&tmp.path().join("first")));
    let first_elapsed = t.elapsed();
    lines.push(Line {
        id: 8,
        title: "desk-scale generalization",
        outcome: first.as_ref().map_err(|e| e.to_string()).and_then(c8_generalization),
        elapsed: first_elapsed,
        budget: secs(30 * 60),
    });
    lines.push(timed(9, "measure checks", secs(10 * 60), || c9_measure(&tmp.path().join("measure"))));
    lines.push(timed(10, "determinism", secs(60 * 60), || {
        let a = first.as_ref().map_err(|e| e.to_string())?;
        let b = run_pipeline(&pipeline_config(&tmp.path().join("second"))).map_err(|e| e.to_string())?;
        ensure(*a == b, || "reports differ".into())?;
        let bytes = |d: &str| std::fs::read(tmp.path().join(d).join("report.json")).map_err(|e| e.to_string());
        ensure(bytes("first")? == bytes("second")?, || "report.json files differ".into())?;
        Ok(format!("two runs with seed 1 give identical reports (hash {})", &a.config_hash[..12]))
    }));
    // Criterion 10 also includes the first run.
    lines[9].elapsed += first_elapsed;

    let mut all = true;
    for l in &lines {
        all &= report(l);
    }
    if !all {
        std::process::exit(1);
    }
}
