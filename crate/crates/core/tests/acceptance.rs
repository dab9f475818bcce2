//! Acceptance gate: one test per release criterion, each ending in a
//! single PASS line (run with `--nocapture` to see them; a failed
//! criterion fails its test).
//!
//! The two desk-scale training criteria share one default run, built once.

use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use moelab::data::Corpus;
use moelab::harness::{self, analyze_sweep, run_sweep, ExperimentPlan, RunMeta, RunStatus};
use moelab::metrics::{self, OverlapReport};
use moelab::model::{MoEModel, MoEModelConfig, RoutingTrace, TokenRouting};
use moelab::stats;
use moelab::tensor::Tape;
use moelab::train::{evaluate_model, MetricsRecord, TrainConfig, Trainer};

fn pass(n: u32, name: &str) {
    println!("acceptance criterion {n} ({name}): PASS");
}

fn bundled_corpus() -> Corpus {
    let path = PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/data/corpus.txt"));
    Corpus::load(&path, 0.1).expect("bundled corpus")
}

// ---------------------------------------------------------------- 1

#[test]
fn criterion_1_metric_identities() {
    let tol = 1e-10;

    // orthonormal experts: zero overlap
    let ortho: Vec<Vec<f64>> = vec![
        vec![1.0, 0.0, 0.0],
        vec![0.0, 1.0, 0.0],
        vec![0.0, 0.0, 1.0],
    ];
    let refs: Vec<&[f64]> = ortho.iter().map(|v| v.as_slice()).collect();
    assert!(metrics::weight_mso(&[refs]).unwrap()[0].abs() < tol);

    // duplicated experts: unit overlap
    let dup: Vec<Vec<f64>> = vec![vec![0.3, -0.7, 2.0], vec![0.3, -0.7, 2.0]];
    let refs: Vec<&[f64]> = dup.iter().map(|v| v.as_slice()).collect();
    assert!((metrics::weight_mso(&[refs]).unwrap()[0] - 1.0).abs() < tol);

    // 45 degree pair: one half
    let s = 1.0 / 2f64.sqrt();
    let angled: Vec<Vec<f64>> = vec![vec![1.0, 0.0], vec![s, s]];
    let refs: Vec<&[f64]> = angled.iter().map(|v| v.as_slice()).collect();
    assert!((metrics::weight_mso(&[refs]).unwrap()[0] - 0.5).abs() < tol);

    // activation analogues on stubbed traces
    let stub = |pairs: Vec<(Vec<f64>, Vec<f64>)>| RoutingTrace {
        layer: 0,
        tokens: pairs
            .into_iter()
            .map(|(a, b)| TokenRouting {
                experts: vec![0, 1],
                gates: vec![0.5, 0.5],
                outputs: vec![a, b],
            })
            .collect(),
    };
    let identical = stub(vec![(vec![1.0, 2.0], vec![1.0, 2.0])]);
    let r = metrics::activation_mso(&[identical], 1, 2).unwrap();
    assert!((r.per_layer[0] - 1.0).abs() < tol);

    let orthogonal = stub(vec![(vec![1.0, 0.0], vec![0.0, 1.0])]);
    let r = metrics::activation_mso(&[orthogonal], 1, 2).unwrap();
    assert!(r.per_layer[0].abs() < tol);

    let half = stub(vec![(vec![1.0, 0.0], vec![s, s])]);
    let r = metrics::activation_mso(&[half], 1, 2).unwrap();
    assert!((r.per_layer[0] - 0.5).abs() < tol);

    pass(1, "metric identities at 1e-10");
}

// ---------------------------------------------------------------- 2

#[test]
fn criterion_2_gradient_fidelity() {
    let cfg = MoEModelConfig {
        vocab_size: 32,
        d_model: 8,
        n_layers: 2,
        n_heads: 2,
        n_experts: 2,
        top_k: 2,
        d_ffn: 8,
        context_length: 16,
        seed: 17,
    };
    let lambda = 0.05;
    let tokens: Vec<usize> = (0..12).map(|i| (i * 7) % 32).collect();
    let targets: Vec<usize> = (1..13).map(|i| (i * 7) % 32).collect();

    let total_loss = |model: &MoEModel| -> f64 {
        let tape = Tape::new();
        let bound = model.bind(&tape, false).unwrap();
        let (lm, _) = bound.loss(&tokens, &targets).unwrap();
        let orth: f64 = metrics::orthogonality_loss_value(&model.expert_up_weights())
            .unwrap()
            .iter()
            .sum();
        lm.value() + lambda * orth
    };

    let mut model = MoEModel::new(cfg).unwrap();
    // analytic gradients of lm + lambda * orth
    let tape = Tape::new();
    let bound = model.bind(&tape, true).unwrap();
    let (lm, _) = bound.loss(&tokens, &targets).unwrap();
    let orth = metrics::orthogonality_loss(&bound.expert_up_leaves()).unwrap();
    let total = lm.add(&orth.scale_const(lambda)).unwrap();
    total.backward().unwrap();
    let grads = bound.grads();
    let param_names: Vec<String> = model.params().iter().map(|p| p.name.clone()).collect();

    let step = 1e-5;
    let mut checked = 0usize;
    for l in 0..2 {
        for e in 0..2 {
            let name = format!("l{l}.expert{e}.w_up");
            let pi = param_names.iter().position(|n| n == &name).unwrap();
            let analytic = grads[pi].as_ref().expect("w_up gradient").clone();
            let n_elems = model.params()[pi].data.len();
            for i in 0..n_elems {
                let orig = model.params()[pi].data[i];
                model.params_mut()[pi].data[i] = orig + step;
                let up = total_loss(&model);
                model.params_mut()[pi].data[i] = orig - step;
                let down = total_loss(&model);
                model.params_mut()[pi].data[i] = orig;
                let numeric = (up - down) / (2.0 * step);
                let a = analytic[i];
                let denom = a.abs().max(numeric.abs()).max(1e-6);
                assert!(
                    (a - numeric).abs() / denom < 1e-4,
                    "{name}[{i}]: analytic {a} vs numeric {numeric}"
                );
                checked += 1;
            }
        }
    }
    assert_eq!(checked, 4 * 64);
    pass(2, "analytic vs central-difference gradients on every up-projection");
}

// ---------------------------------------------------------------- 3

#[test]
fn criterion_3_gap_oracle() {
    let r = metrics::gap_oracle(32, 32, 10_000, 42).unwrap();
    assert!(r.flat_inner_product.abs() < 1e-12, "trace {}", r.flat_inner_product);
    assert!(r.mean_sq_cos > 0.01, "mean sq cos {}", r.mean_sq_cos);
    assert!(r.control_mean_sq_cos.abs() < 1e-12);
    pass(3, "trace-orthogonal weights keep activation overlap; true annihilation does not");
}

// ---------------------------------------------------------------- 4

#[test]
fn criterion_4_stats_oracles() {
    // Pearson on the five reference overlap pairs, against a frozen
    // 40-digit mpmath evaluation of the same closed forms.
    let w = [5.43e-4, 7.52e-4, 1.16e-3, 2.04e-3, 2.78e-3];
    let a = [0.572, 0.581, 0.577, 0.593, 0.564];
    let r = stats::pearson(&w, &a).unwrap();
    assert!((r.r - (-0.15136095206793177)).abs() < 1e-10, "r {}", r.r);
    assert!((r.p_two_sided - 0.80801966890413658).abs() < 1e-10, "p {}", r.p_two_sided);

    // Fisher interval reproduces the reference CI within +/- 0.01
    let (lo, hi) = stats::fisher_ci(-0.293, 7);
    assert!((lo - (-0.857)).abs() < 0.01, "ci low {lo}");
    assert!((hi - 0.590).abs() < 0.01, "ci high {hi}");

    // Student-t CDF against the committed high-precision fixtures
    let fixtures = std::fs::read_to_string(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/tests/fixtures/t_cdf.csv"
    ))
    .unwrap();
    let mut rows = 0;
    for line in fixtures.lines().skip(1) {
        let mut parts = line.split(',');
        let t: f64 = parts.next().unwrap().parse().unwrap();
        let df: usize = parts.next().unwrap().parse().unwrap();
        let expected: f64 = parts.next().unwrap().parse().unwrap();
        let got = stats::student_t_cdf(t, df);
        assert!((got - expected).abs() < 1e-9, "cdf({t}, {df}): {got} vs {expected}");
        rows += 1;
    }
    assert_eq!(rows, 16);

    // paired t-test against a frozen hand computation
    let x = [2.1, 3.4, 1.9, 4.2, 3.3, 2.8];
    let y = [2.0, 3.1, 2.2, 3.9, 3.0, 2.5];
    let t = stats::paired_t_test(&x, &y).unwrap();
    assert!((t.mean_diff - 1.0 / 6.0).abs() < 1e-10);
    assert!((t.t_statistic - 1.6854996561581052).abs() < 1e-10, "t {}", t.t_statistic);
    assert!((t.p_two_sided - 0.15270488809703775).abs() < 1e-10, "p {}", t.p_two_sided);
    assert_eq!(t.degrees_freedom, 5);

    pass(4, "correlation, interval, t-CDF, and paired-t against frozen oracles");
}

// ---------------------------------------------------------------- 5

/// Synthesize a completed one-seed sweep whose final snapshots carry the
/// given per-lambda overlap values, then run the real analysis over it.
fn synthetic_sweep(root: &Path, cells: &[(f64, f64, f64)]) {
    let plan = ExperimentPlan {
        lambdas: cells.iter().map(|c| c.0).collect(),
        seeds: vec![1],
        model: MoEModelConfig::desk_default(),
        train: TrainConfig::default(),
        val_fraction: 0.1,
    };
    std::fs::write(
        root.join("sweep.json"),
        serde_json::to_string_pretty(&plan).unwrap(),
    )
    .unwrap();
    for &(lambda, weight, act) in cells {
        let dir = root.join(ExperimentPlan::cell_dir_name(lambda, 1));
        std::fs::create_dir_all(&dir).unwrap();
        let overlap = OverlapReport {
            per_layer_weight_mso: vec![weight],
            per_layer_activation_mso: vec![act],
            mean_weight_mso: weight,
            mean_activation_mso: act,
            per_layer_gap_ratio: vec![act / weight],
            gap_ratio: act / weight,
            skipped_activation_pairs: 0,
            total_activation_pairs: 1,
            flagged: false,
        };
        let record = MetricsRecord {
            step: 2000,
            train_lm_loss: 0.0,
            val_lm_loss: 0.0,
            orth_loss: weight,
            lambda,
            overlap,
        };
        std::fs::write(
            dir.join("metrics.jsonl"),
            serde_json::to_string(&record).unwrap() + "\n",
        )
        .unwrap();
        let meta = RunMeta {
            schema_version: harness::RUN_SCHEMA_VERSION,
            status: RunStatus::Completed,
            error: None,
            lambda,
            seed: 1,
            model: plan.model.clone(),
            train: plan.train.clone(),
            corpus_digest: "synthetic".into(),
            corpus_bytes: 0,
            val_fraction: 0.1,
            started_unix: 0,
            finished_unix: 0,
            snapshots: 1,
        };
        std::fs::write(
            dir.join("run.json"),
            serde_json::to_string_pretty(&meta).unwrap(),
        )
        .unwrap();
    }
}

#[test]
fn criterion_5_ratio_column_reproduction() {
    let tmp = tempfile::tempdir().unwrap();
    let cells = [
        (0.0, 5.43e-4, 0.572),
        (0.001, 7.52e-4, 0.581),
        (0.01, 1.16e-3, 0.577),
        (0.1, 2.04e-3, 0.593),
        (0.2, 2.78e-3, 0.564),
    ];
    synthetic_sweep(tmp.path(), &cells);
    analyze_sweep(tmp.path()).unwrap();
    let summary = std::fs::read_to_string(tmp.path().join("analysis/summary.csv")).unwrap();
    let reference = [1053.0, 773.0, 496.0, 290.0, 203.0];
    let mut rows = 0;
    for (line, &expect) in summary.lines().skip(2).zip(&reference) {
        let fields: Vec<&str> = line.split(',').collect();
        let ratio: f64 = fields[8].parse().unwrap();
        // the reference column was rounded from unrounded inputs, so the
        // check is relative (0.5%), which is within one integer count of
        // every reference value
        assert!(
            (ratio - expect).abs() / expect < 0.005,
            "ratio {ratio} vs reference {expect}"
        );
        rows += 1;
    }
    assert_eq!(rows, 5);
    pass(5, "analysis ratio column matches the five reference values");
}

// ------------------------------------------------------- shared 6/7 run

#[derive(serde::Serialize, serde::Deserialize)]
struct DefaultRun {
    key: String,
    initial_val_loss: f64,
    records: Vec<MetricsRecord>,
}

/// The run is deterministic, so its result is keyed by the exact
/// configuration and corpus digest and cached under the target dir; a
/// fresh checkout trains once (minutes), later invocations reload.
fn default_run() -> &'static DefaultRun {
    static RUN: OnceLock<DefaultRun> = OnceLock::new();
    RUN.get_or_init(|| {
        let corpus = bundled_corpus();
        let cfg = MoEModelConfig::desk_default();
        let train = TrainConfig::default(); // lambda 0, seed 42, 2000 iterations
        let key = format!(
            "{}|{}|{}",
            serde_json::to_string(&cfg).unwrap(),
            serde_json::to_string(&train).unwrap(),
            corpus.digest()
        );
        let cache = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("default_run.json");
        if let Ok(text) = std::fs::read_to_string(&cache) {
            if let Ok(run) = serde_json::from_str::<DefaultRun>(&text) {
                if run.key == key {
                    return run;
                }
            }
        }
        let model = MoEModel::new(cfg).unwrap();
        let (initial_val_loss, _) =
            evaluate_model(&model, &corpus, train.seq_len, train.eval_tokens).unwrap();
        let mut trainer = Trainer::new(model, train).unwrap();
        let records = trainer.run(&corpus).unwrap();
        let run = DefaultRun { key, initial_val_loss, records };
        let _ = std::fs::write(&cache, serde_json::to_string(&run).unwrap());
        run
    })
}

// ---------------------------------------------------------------- 6

#[test]
fn criterion_6_desk_scale_gap() {
    let run = default_run();
    let last = run.records.last().unwrap();
    let factor = last.overlap.mean_activation_mso / last.overlap.mean_weight_mso;
    assert!(
        factor > 10.0,
        "activation/weight overlap factor {factor} (weight {}, activation {})",
        last.overlap.mean_weight_mso,
        last.overlap.mean_activation_mso
    );
    pass(6, "activation overlap exceeds weight overlap by more than 10x");
}

// ---------------------------------------------------------------- 7

#[test]
fn criterion_7_training_sanity() {
    let run = default_run();
    let ln_vocab = 256f64.ln();
    assert!(
        (run.initial_val_loss - ln_vocab).abs() / ln_vocab < 0.02,
        "initial val loss {} vs ln(256) {}",
        run.initial_val_loss,
        ln_vocab
    );
    let final_val = run.records.last().unwrap().val_lm_loss;
    assert!(
        final_val < 0.9 * run.initial_val_loss,
        "final val loss {final_val} vs initial {}",
        run.initial_val_loss
    );
    pass(7, "val loss starts at ln(256) and drops below 0.9x of it");
}

// ---------------------------------------------------------------- 8

#[test]
fn criterion_8_sweep_protocol_fidelity() {
    // The contract under test is the protocol (grid, rows, replay,
    // resume), so the per-cell model and step budget are kept tiny.
    let tmp = tempfile::tempdir().unwrap();
    let corpus = {
        let bytes: Vec<u8> = (0..64u8).cycle().take(2000).collect();
        Corpus::from_bytes(bytes, 0.2).unwrap()
    };
    let model = MoEModelConfig {
        vocab_size: 64,
        d_model: 8,
        n_layers: 1,
        n_heads: 2,
        n_experts: 2,
        top_k: 2,
        d_ffn: 8,
        context_length: 16,
        seed: 0,
    };
    let train = TrainConfig {
        iterations: 2,
        batch_size: 2,
        seq_len: 8,
        eval_interval: 2,
        eval_tokens: 64,
        ..TrainConfig::default()
    };
    let plan = ExperimentPlan::default_grid(model, train);
    assert_eq!(plan.lambdas, vec![0.0, 0.001, 0.005, 0.01, 0.05, 0.1, 0.2]);
    assert_eq!(plan.seeds, vec![42, 123, 456, 789, 1337]);

    let first = run_sweep(tmp.path(), &plan, &corpus).unwrap();
    assert_eq!(first.trained, 35);
    assert_eq!(first.failed, 0);
    let csv1 = std::fs::read(&first.csv_path).unwrap();
    let rows = String::from_utf8(csv1.clone()).unwrap().lines().count();
    assert_eq!(rows, 2 + 35, "one row per cell plus schema and header");

    // replay: no retraining, byte-identical consolidated CSV
    let second = run_sweep(tmp.path(), &plan, &corpus).unwrap();
    assert_eq!(second.trained, 0);
    assert_eq!(second.resumed, 35);
    let csv2 = std::fs::read(&second.csv_path).unwrap();
    assert_eq!(csv1, csv2, "consolidated CSV changed on replay");

    // resume: delete two cells, only those retrain
    for (lambda, seed) in [(0.001, 123), (0.2, 1337)] {
        std::fs::remove_dir_all(tmp.path().join(ExperimentPlan::cell_dir_name(lambda, seed)))
            .unwrap();
    }
    let third = run_sweep(tmp.path(), &plan, &corpus).unwrap();
    assert_eq!(third.trained, 2);
    assert_eq!(third.resumed, 33);
    let csv3 = std::fs::read(&third.csv_path).unwrap();
    assert_eq!(csv1, csv3, "resumed sweep must reproduce the same CSV");

    pass(8, "default grid, one row per cell, byte-identical replay, true resume");
}

// ---------------------------------------------------------------- 9

#[test]
fn criterion_9_lambda_zero_equivalence() {
    let corpus = bundled_corpus();
    let cfg = MoEModelConfig::desk_default();
    let train = TrainConfig {
        iterations: 25,
        eval_interval: 25,
        ..TrainConfig::default()
    };
    let mut plain = Trainer::new(MoEModel::new(cfg.clone()).unwrap(), train.clone()).unwrap();
    let mut forced = Trainer::new(MoEModel::new(cfg).unwrap(), train.clone()).unwrap();
    forced.force_orth_term = true; // builds lambda * L_orth with lambda = 0
    for _ in 0..train.iterations {
        plain.train_step(&corpus).unwrap();
        forced.train_step(&corpus).unwrap();
    }
    for (p, f) in plain.model().params().iter().zip(forced.model().params()) {
        assert_eq!(p.name, f.name);
        for (i, (a, b)) in p.data.iter().zip(&f.data).enumerate() {
            assert_eq!(
                a.to_bits(),
                b.to_bits(),
                "parameter {} diverged at element {i}",
                p.name
            );
        }
    }
    pass(9, "lambda=0 run bitwise identical to the term-free build path");
}
