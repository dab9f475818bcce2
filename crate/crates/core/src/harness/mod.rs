//! Experiment orchestration: sweeps over (λ, seed) cells, resumable run
//! directories, consolidated CSV export, and downstream analysis tables.
//!
//! Layout under the sweep root:
//!
//! ```text
//! root/
//!   sweep.json                 # the plan that produced this sweep
//!   lambda-0.001_seed-42/
//!     run.json                 # cell metadata + terminal status
//!     metrics.jsonl            # one snapshot per line
//!     checkpoint.bin           # final parameters (completed cells)
//!   ...
//!   sweep.csv                  # consolidated final snapshots
//!   analysis/                  # written by `analyze_sweep`
//! ```
//!
//! A cell whose `run.json` reports `"completed"` is never re-trained, so a
//! killed sweep resumes from where it stopped. Failed cells keep their
//! error in `run.json` and appear in `sweep.csv` with empty metric fields
//! rather than vanishing.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Corpus;
use crate::metrics::{gap_oracle, GapOracleReport};
use crate::model::{save_checkpoint, MoEModel, MoEModelConfig};
use crate::stats;
use crate::train::{MetricsRecord, TrainConfig, Trainer};

pub const SWEEP_CSV_SCHEMA: &str = "moelab-sweep-v1";
pub const ANALYSIS_CSV_SCHEMA: &str = "moelab-analysis-v1";
pub const RUN_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("i/o at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad metadata at {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Train(#[from] crate::train::TrainError),
    #[error(transparent)]
    Data(#[from] crate::data::DataError),
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
    #[error(transparent)]
    Metric(#[from] crate::metrics::MetricError),
    #[error("plan error: {0}")]
    Plan(String),
    #[error("analysis out of scope: {reason}; computable outputs: {computable:?}")]
    AnalysisScope {
        reason: String,
        computable: Vec<String>,
    },
}

pub type Result<T> = std::result::Result<T, HarnessError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io { path: path.to_path_buf(), source }
}

/// Full description of a sweep: the λ grid crossed with the seed set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub lambdas: Vec<f64>,
    pub seeds: Vec<u64>,
    pub model: MoEModelConfig,
    pub train: TrainConfig,
    /// Held-out tail fraction of the corpus.
    pub val_fraction: f64,
}

impl ExperimentPlan {
    pub fn default_grid(model: MoEModelConfig, train: TrainConfig) -> Self {
        ExperimentPlan {
            lambdas: vec![0.0, 0.001, 0.005, 0.01, 0.05, 0.1, 0.2],
            seeds: vec![42, 123, 456, 789, 1337],
            model,
            train,
            val_fraction: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lambdas.is_empty() || self.seeds.is_empty() {
            return Err(HarnessError::Plan("empty lambda grid or seed set".into()));
        }
        if self.lambdas.iter().any(|&l| l < 0.0 || !l.is_finite()) {
            return Err(HarnessError::Plan("lambdas must be finite and nonnegative".into()));
        }
        let mut sorted = self.lambdas.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        sorted.dedup();
        if sorted.len() != self.lambdas.len() {
            return Err(HarnessError::Plan("duplicate lambda values".into()));
        }
        let mut seeds = self.seeds.clone();
        seeds.sort_unstable();
        seeds.dedup();
        if seeds.len() != self.seeds.len() {
            return Err(HarnessError::Plan("duplicate seeds".into()));
        }
        Ok(())
    }

    /// Deterministic cell order: λ-major, then seeds.
    pub fn cells(&self) -> Vec<(f64, u64)> {
        self.lambdas
            .iter()
            .flat_map(|&l| self.seeds.iter().map(move |&s| (l, s)))
            .collect()
    }

    pub fn cell_dir_name(lambda: f64, seed: u64) -> String {
        format!("lambda-{lambda}_seed-{seed}")
    }
}

/// Terminal state of one run directory.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    Failed,
}

/// `run.json`: everything needed to interpret a cell without the plan.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunMeta {
    pub schema_version: u32,
    pub status: RunStatus,
    pub error: Option<String>,
    pub lambda: f64,
    pub seed: u64,
    pub model: MoEModelConfig,
    pub train: TrainConfig,
    pub corpus_digest: String,
    pub corpus_bytes: usize,
    pub val_fraction: f64,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub snapshots: usize,
}

fn now_unix() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|source| HarnessError::Json { path: path.to_path_buf(), source })?;
    fs::write(path, text + "\n").map_err(io_err(path))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text)
        .map_err(|source| HarnessError::Json { path: path.to_path_buf(), source })
}

/// Train one (λ, seed) cell into `dir`. Returns the written metadata.
pub fn run_cell(
    dir: &Path,
    plan: &ExperimentPlan,
    lambda: f64,
    seed: u64,
    corpus: &Corpus,
) -> Result<RunMeta> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut model_cfg = plan.model.clone();
    model_cfg.seed = seed;
    let mut train_cfg = plan.train.clone();
    train_cfg.lambda = lambda;
    train_cfg.seed = seed;

    let started = now_unix();
    let model = MoEModel::new(model_cfg.clone())?;
    let mut trainer = Trainer::new(model, train_cfg.clone())?;
    let outcome = trainer.run(corpus);

    let mut meta = RunMeta {
        schema_version: RUN_SCHEMA_VERSION,
        status: RunStatus::Completed,
        error: None,
        lambda,
        seed,
        model: model_cfg,
        train: train_cfg,
        corpus_digest: corpus.digest().to_string(),
        corpus_bytes: corpus.train_len() + corpus.val_len(),
        val_fraction: corpus.val_fraction(),
        started_unix: started,
        finished_unix: 0,
        snapshots: 0,
    };

    match outcome {
        Ok(records) => {
            let jsonl = dir.join("metrics.jsonl");
            let mut body = String::new();
            for r in &records {
                let line = serde_json::to_string(r)
                    .map_err(|source| HarnessError::Json { path: jsonl.clone(), source })?;
                body.push_str(&line);
                body.push('\n');
            }
            fs::write(&jsonl, body).map_err(io_err(&jsonl))?;
            save_checkpoint(trainer.model(), &dir.join("checkpoint.bin"))?;
            meta.snapshots = records.len();
        }
        Err(e) => {
            meta.status = RunStatus::Failed;
            meta.error = Some(e.to_string());
        }
    }
    meta.finished_unix = now_unix();
    write_json(&dir.join("run.json"), &meta)?;
    Ok(meta)
}

/// Load the snapshot stream of a completed cell.
pub fn read_cell_records(dir: &Path) -> Result<Vec<MetricsRecord>> {
    let path = dir.join("metrics.jsonl");
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    text.lines()
        .map(|line| {
            serde_json::from_str(line)
                .map_err(|source| HarnessError::Json { path: path.clone(), source })
        })
        .collect()
}

/// One row of the consolidated sweep table.
#[derive(Debug, Clone)]
pub struct CellOutcome {
    pub lambda: f64,
    pub seed: u64,
    pub meta: RunMeta,
    pub final_record: Option<MetricsRecord>,
    pub records: Vec<MetricsRecord>,
}

#[derive(Debug, Clone)]
pub struct SweepReport {
    pub root: PathBuf,
    pub cells: Vec<CellOutcome>,
    pub trained: usize,
    pub resumed: usize,
    pub failed: usize,
    pub csv_path: PathBuf,
}

/// Run (or resume) every cell of the plan and rewrite the consolidated
/// CSV. Cells already marked completed are loaded, not re-trained.
pub fn run_sweep(root: &Path, plan: &ExperimentPlan, corpus: &Corpus) -> Result<SweepReport> {
    plan.validate()?;
    fs::create_dir_all(root).map_err(io_err(root))?;
    write_json(&root.join("sweep.json"), plan)?;

    let mut cells = Vec::new();
    let (mut trained, mut resumed, mut failed) = (0usize, 0usize, 0usize);
    for (lambda, seed) in plan.cells() {
        let dir = root.join(ExperimentPlan::cell_dir_name(lambda, seed));
        let meta_path = dir.join("run.json");
        let meta = match read_json::<RunMeta>(&meta_path) {
            Ok(meta) if meta.status == RunStatus::Completed => {
                resumed += 1;
                meta
            }
            _ => {
                let meta = run_cell(&dir, plan, lambda, seed, corpus)?;
                trained += 1;
                meta
            }
        };
        let records = if meta.status == RunStatus::Completed {
            read_cell_records(&dir)?
        } else {
            failed += 1;
            Vec::new()
        };
        cells.push(CellOutcome {
            lambda,
            seed,
            final_record: records.last().cloned(),
            records,
            meta,
        });
    }

    let csv_path = root.join("sweep.csv");
    write_sweep_csv(&csv_path, &cells)?;
    Ok(SweepReport {
        root: root.to_path_buf(),
        cells,
        trained,
        resumed,
        failed,
        csv_path,
    })
}

/// Reload a finished (or partial) sweep from disk without training.
pub fn load_sweep(root: &Path) -> Result<(ExperimentPlan, Vec<CellOutcome>)> {
    let plan: ExperimentPlan = read_json(&root.join("sweep.json"))?;
    let mut cells = Vec::new();
    for (lambda, seed) in plan.cells() {
        let dir = root.join(ExperimentPlan::cell_dir_name(lambda, seed));
        let meta_path = dir.join("run.json");
        if !meta_path.exists() {
            continue;
        }
        let meta: RunMeta = read_json(&meta_path)?;
        let records = if meta.status == RunStatus::Completed {
            read_cell_records(&dir)?
        } else {
            Vec::new()
        };
        cells.push(CellOutcome {
            lambda,
            seed,
            final_record: records.last().cloned(),
            records,
            meta,
        });
    }
    Ok((plan, cells))
}

/// Full precision for round-tripping f64 through text.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn write_sweep_csv(path: &Path, cells: &[CellOutcome]) -> Result<()> {
    let mut out = String::new();
    let _ = writeln!(out, "# schema: {SWEEP_CSV_SCHEMA}");
    let _ = writeln!(
        out,
        "lambda,seed,status,step,train_lm_loss,val_lm_loss,orth_loss,\
         mean_weight_mso,mean_activation_mso,gap_ratio,\
         skipped_activation_pairs,total_activation_pairs,flagged,error"
    );
    for c in cells {
        match (&c.meta.status, &c.final_record) {
            (RunStatus::Completed, Some(r)) => {
                let _ = writeln!(
                    out,
                    "{},{},completed,{},{},{},{},{},{},{},{},{},{},",
                    fmt_f64(c.lambda),
                    c.seed,
                    r.step,
                    fmt_f64(r.train_lm_loss),
                    fmt_f64(r.val_lm_loss),
                    fmt_f64(r.orth_loss),
                    fmt_f64(r.overlap.mean_weight_mso),
                    fmt_f64(r.overlap.mean_activation_mso),
                    fmt_f64(r.overlap.gap_ratio),
                    r.overlap.skipped_activation_pairs,
                    r.overlap.total_activation_pairs,
                    r.overlap.flagged,
                );
            }
            _ => {
                let err = c.meta.error.clone().unwrap_or_default().replace(',', ";");
                let _ = writeln!(
                    out,
                    "{},{},failed,,,,,,,,,,,{err}",
                    fmt_f64(c.lambda),
                    c.seed,
                );
            }
        }
    }
    fs::write(path, out).map_err(io_err(path))
}

/// What `analyze_sweep` wrote and what it had to skip.
#[derive(Debug, Clone, Serialize)]
pub struct AnalysisReport {
    pub out_dir: PathBuf,
    pub written: Vec<String>,
    pub skipped: Vec<SkippedOutput>,
    pub correlation: Option<stats::CorrelationResult>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SkippedOutput {
    pub name: String,
    pub reason: String,
}

struct LambdaGroup {
    lambda: f64,
    // aligned by seed order
    seeds: Vec<u64>,
    val_lm_loss: Vec<f64>,
    weight_mso: Vec<f64>,
    activation_mso: Vec<f64>,
    orth_loss: Vec<f64>,
    per_layer_gap: Vec<Vec<f64>>, // [cell][layer]
}

/// Build the analysis tables from a sweep directory:
///
/// * `summary.csv` — per-λ means/stds and the activation/weight ratio
/// * `correlation.json` — Pearson r of weight vs activation MSO across λ
/// * `comparison.csv` — each λ > 0 against λ = 0, Δ% and paired-t p by seed
/// * `per_layer_gap.csv` — layer-resolved activation/weight ratios
/// * `fig_overlap.csv` — the two overlap series over λ for plotting
///
/// Outputs that the available cells cannot support are skipped and listed;
/// an error is returned only when nothing is computable.
pub fn analyze_sweep(root: &Path) -> Result<AnalysisReport> {
    let (plan, cells) = load_sweep(root)?;
    let completed: Vec<&CellOutcome> = cells
        .iter()
        .filter(|c| c.meta.status == RunStatus::Completed && c.final_record.is_some())
        .collect();
    if completed.is_empty() {
        return Err(HarnessError::AnalysisScope {
            reason: "no completed cells in sweep".into(),
            computable: Vec::new(),
        });
    }

    let mut groups: Vec<LambdaGroup> = Vec::new();
    for &lambda in &plan.lambdas {
        let mut g = LambdaGroup {
            lambda,
            seeds: Vec::new(),
            val_lm_loss: Vec::new(),
            weight_mso: Vec::new(),
            activation_mso: Vec::new(),
            orth_loss: Vec::new(),
            per_layer_gap: Vec::new(),
        };
        for c in &completed {
            if c.lambda != lambda {
                continue;
            }
            let r = c.final_record.as_ref().unwrap();
            g.seeds.push(c.seed);
            g.val_lm_loss.push(r.val_lm_loss);
            g.weight_mso.push(r.overlap.mean_weight_mso);
            g.activation_mso.push(r.overlap.mean_activation_mso);
            g.orth_loss.push(r.orth_loss);
            g.per_layer_gap.push(r.overlap.per_layer_gap_ratio.clone());
        }
        if !g.seeds.is_empty() {
            groups.push(g);
        }
    }

    let out_dir = root.join("analysis");
    fs::create_dir_all(&out_dir).map_err(io_err(&out_dir))?;
    let mut written = Vec::new();
    let mut skipped = Vec::new();

    // summary.csv: always computable once any cell completed
    {
        let mut out = String::new();
        let _ = writeln!(out, "# schema: {ANALYSIS_CSV_SCHEMA}");
        let _ = writeln!(
            out,
            "lambda,n_seeds,val_lm_loss_mean,val_lm_loss_std,\
             weight_mso_mean,weight_mso_std,activation_mso_mean,activation_mso_std,\
             act_over_weight_ratio,orth_loss_mean"
        );
        for g in &groups {
            let vl = stats::summarize(&g.val_lm_loss).expect("nonempty");
            let wm = stats::summarize(&g.weight_mso).expect("nonempty");
            let am = stats::summarize(&g.activation_mso).expect("nonempty");
            let ol = stats::summarize(&g.orth_loss).expect("nonempty");
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                fmt_f64(g.lambda),
                g.seeds.len(),
                fmt_f64(vl.mean),
                fmt_opt(vl.sample_std),
                fmt_f64(wm.mean),
                fmt_opt(wm.sample_std),
                fmt_f64(am.mean),
                fmt_opt(am.sample_std),
                fmt_f64(am.mean / wm.mean),
                fmt_f64(ol.mean),
            );
        }
        let path = out_dir.join("summary.csv");
        fs::write(&path, out).map_err(io_err(&path))?;
        written.push("summary.csv".into());
    }

    // fig_overlap.csv: the two plotted series over λ
    {
        let mut out = String::new();
        let _ = writeln!(out, "# schema: {ANALYSIS_CSV_SCHEMA}");
        let _ = writeln!(out, "lambda,weight_mso_mean,activation_mso_mean");
        for g in &groups {
            let wm = stats::summarize(&g.weight_mso).expect("nonempty");
            let am = stats::summarize(&g.activation_mso).expect("nonempty");
            let _ = writeln!(
                out,
                "{},{},{}",
                fmt_f64(g.lambda),
                fmt_f64(wm.mean),
                fmt_f64(am.mean)
            );
        }
        let path = out_dir.join("fig_overlap.csv");
        fs::write(&path, out).map_err(io_err(&path))?;
        written.push("fig_overlap.csv".into());
    }

    // per_layer_gap.csv
    {
        let mut out = String::new();
        let _ = writeln!(out, "# schema: {ANALYSIS_CSV_SCHEMA}");
        let _ = writeln!(out, "lambda,layer,gap_ratio_mean");
        for g in &groups {
            let n_layers = g.per_layer_gap[0].len();
            for layer in 0..n_layers {
                let vals: Vec<f64> = g.per_layer_gap.iter().map(|v| v[layer]).collect();
                let s = stats::summarize(&vals).expect("nonempty");
                let _ = writeln!(out, "{},{layer},{}", fmt_f64(g.lambda), fmt_f64(s.mean));
            }
        }
        let path = out_dir.join("per_layer_gap.csv");
        fs::write(&path, out).map_err(io_err(&path))?;
        written.push("per_layer_gap.csv".into());
    }

    // correlation.json: weight vs activation MSO over λ (group means)
    let correlation = if groups.len() >= 3 {
        let w: Vec<f64> = groups
            .iter()
            .map(|g| stats::summarize(&g.weight_mso).expect("nonempty").mean)
            .collect();
        let a: Vec<f64> = groups
            .iter()
            .map(|g| stats::summarize(&g.activation_mso).expect("nonempty").mean)
            .collect();
        match stats::pearson(&w, &a) {
            Ok(corr) => {
                let path = out_dir.join("correlation.json");
                write_json(&path, &corr)?;
                written.push("correlation.json".into());
                Some(corr)
            }
            Err(e) => {
                skipped.push(SkippedOutput {
                    name: "correlation.json".into(),
                    reason: e.to_string(),
                });
                None
            }
        }
    } else {
        skipped.push(SkippedOutput {
            name: "correlation.json".into(),
            reason: format!(
                "correlation across lambda needs >= 3 completed lambda groups, have {}",
                groups.len()
            ),
        });
        None
    };

    // comparison.csv: each λ>0 vs baseline λ=0, paired by seed
    let baseline = groups.iter().find(|g| g.lambda == 0.0);
    match baseline {
        Some(base) if groups.len() >= 2 => {
            let mut out = String::new();
            let _ = writeln!(out, "# schema: {ANALYSIS_CSV_SCHEMA}");
            let _ = writeln!(
                out,
                "lambda,metric,baseline_mean,treated_mean,delta_pct,t_statistic,p_two_sided,saturated"
            );
            for g in groups.iter().filter(|g| g.lambda != 0.0) {
                // pair by seed: only seeds completed in both arms
                let pairs: Vec<(usize, usize)> = g
                    .seeds
                    .iter()
                    .enumerate()
                    .filter_map(|(ti, s)| {
                        base.seeds.iter().position(|bs| bs == s).map(|bi| (bi, ti))
                    })
                    .collect();
                if pairs.len() < 2 {
                    skipped.push(SkippedOutput {
                        name: format!("comparison.csv row lambda={}", g.lambda),
                        reason: format!("needs >= 2 shared seeds, have {}", pairs.len()),
                    });
                    continue;
                }
                for (metric, bvals, tvals) in [
                    ("val_lm_loss", &base.val_lm_loss, &g.val_lm_loss),
                    ("weight_mso", &base.weight_mso, &g.weight_mso),
                    ("activation_mso", &base.activation_mso, &g.activation_mso),
                ] {
                    let b: Vec<f64> = pairs.iter().map(|&(bi, _)| bvals[bi]).collect();
                    let t: Vec<f64> = pairs.iter().map(|&(_, ti)| tvals[ti]).collect();
                    let bm = stats::summarize(&b).expect("nonempty").mean;
                    let tm = stats::summarize(&t).expect("nonempty").mean;
                    let delta_pct = 100.0 * (tm - bm) / bm;
                    match stats::paired_t_test(&t, &b) {
                        Ok(r) => {
                            let _ = writeln!(
                                out,
                                "{},{metric},{},{},{},{},{},{}",
                                fmt_f64(g.lambda),
                                fmt_f64(bm),
                                fmt_f64(tm),
                                fmt_f64(delta_pct),
                                fmt_f64(r.t_statistic),
                                fmt_f64(r.p_two_sided),
                                r.saturated,
                            );
                        }
                        Err(e) => {
                            let _ = writeln!(
                                out,
                                "{},{metric},{},{},{},,,{}",
                                fmt_f64(g.lambda),
                                fmt_f64(bm),
                                fmt_f64(tm),
                                fmt_f64(delta_pct),
                                e,
                            );
                        }
                    }
                }
            }
            let path = out_dir.join("comparison.csv");
            fs::write(&path, out).map_err(io_err(&path))?;
            written.push("comparison.csv".into());
        }
        _ => {
            skipped.push(SkippedOutput {
                name: "comparison.csv".into(),
                reason: "needs a completed lambda=0 baseline and at least one treated group".into(),
            });
        }
    }

    Ok(AnalysisReport {
        out_dir,
        written,
        skipped,
        correlation,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

/// Run the trace-orthogonality demonstration and write its report.
pub fn run_gap_demo(
    out: Option<&Path>,
    d_model: usize,
    d_ffn: usize,
    trials: usize,
    seed: u64,
) -> Result<GapOracleReport> {
    let report = gap_oracle(d_model, d_ffn, trials, seed)?;
    if let Some(path) = out {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                fs::create_dir_all(parent).map_err(io_err(parent))?;
            }
        }
        write_json(path, &report)?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::MoEModelConfig;

    fn tiny_plan() -> ExperimentPlan {
        ExperimentPlan {
            lambdas: vec![0.0, 0.01],
            seeds: vec![1, 2],
            model: MoEModelConfig {
                vocab_size: 64,
                d_model: 8,
                n_layers: 1,
                n_heads: 2,
                n_experts: 2,
                top_k: 2,
                d_ffn: 8,
                context_length: 16,
                seed: 0,
            },
            train: TrainConfig {
                iterations: 2,
                batch_size: 2,
                seq_len: 8,
                eval_interval: 1,
                eval_tokens: 64,
                ..TrainConfig::default()
            },
            val_fraction: 0.2,
        }
    }

    fn tiny_corpus() -> Corpus {
        let bytes: Vec<u8> = (0..64u8).cycle().take(800).collect();
        Corpus::from_bytes(bytes, 0.2).unwrap()
    }

    #[test]
    fn sweep_trains_all_cells_in_grid_order() {
        let tmp = tempfile::tempdir().unwrap();
        let report = run_sweep(tmp.path(), &tiny_plan(), &tiny_corpus()).unwrap();
        assert_eq!(report.trained, 4);
        assert_eq!(report.failed, 0);
        let got: Vec<(f64, u64)> = report.cells.iter().map(|c| (c.lambda, c.seed)).collect();
        assert_eq!(got, vec![(0.0, 1), (0.0, 2), (0.01, 1), (0.01, 2)]);
        assert!(report.csv_path.exists());
        let csv = std::fs::read_to_string(&report.csv_path).unwrap();
        assert!(csv.starts_with(&format!("# schema: {SWEEP_CSV_SCHEMA}\n")));
        assert_eq!(csv.lines().count(), 2 + 4);
    }

    #[test]
    fn second_invocation_resumes_without_retraining() {
        let tmp = tempfile::tempdir().unwrap();
        let corpus = tiny_corpus();
        let plan = tiny_plan();
        let first = run_sweep(tmp.path(), &plan, &corpus).unwrap();
        assert_eq!(first.trained, 4);
        let second = run_sweep(tmp.path(), &plan, &corpus).unwrap();
        assert_eq!(second.trained, 0);
        assert_eq!(second.resumed, 4);
        // the consolidated rows are identical
        let a = serde_json::to_string(
            &first.cells.iter().map(|c| &c.final_record).collect::<Vec<_>>(),
        )
        .unwrap();
        let b = serde_json::to_string(
            &second.cells.iter().map(|c| &c.final_record).collect::<Vec<_>>(),
        )
        .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn interrupted_sweep_finishes_remaining_cells() {
        let tmp = tempfile::tempdir().unwrap();
        let corpus = tiny_corpus();
        let plan = tiny_plan();
        // simulate an interruption: run only the first cell
        let dir = tmp.path().join(ExperimentPlan::cell_dir_name(0.0, 1));
        run_cell(&dir, &plan, 0.0, 1, &corpus).unwrap();
        let report = run_sweep(tmp.path(), &plan, &corpus).unwrap();
        assert_eq!(report.resumed, 1);
        assert_eq!(report.trained, 3);
    }

    #[test]
    fn failed_cells_are_recorded_not_dropped() {
        let tmp = tempfile::tempdir().unwrap();
        let corpus = tiny_corpus();
        let mut plan = tiny_plan();
        plan.train.lr = 1e300; // blows the parameters up on the first update
        plan.lambdas = vec![0.0];
        plan.seeds = vec![1];
        let report = run_sweep(tmp.path(), &plan, &corpus).unwrap();
        assert_eq!(report.failed, 1);
        let csv = std::fs::read_to_string(&report.csv_path).unwrap();
        assert!(csv.contains("failed"), "{csv}");
        let meta: RunMeta =
            read_json(&tmp.path().join(ExperimentPlan::cell_dir_name(0.0, 1)).join("run.json"))
                .unwrap();
        assert_eq!(meta.status, RunStatus::Failed);
        assert!(meta.error.is_some());
    }

    #[test]
    fn analysis_writes_summary_and_comparison_for_two_groups() {
        let tmp = tempfile::tempdir().unwrap();
        let corpus = tiny_corpus();
        run_sweep(tmp.path(), &tiny_plan(), &corpus).unwrap();
        let report = analyze_sweep(tmp.path()).unwrap();
        assert!(report.written.contains(&"summary.csv".to_string()));
        assert!(report.written.contains(&"comparison.csv".to_string()));
        assert!(report.written.contains(&"fig_overlap.csv".to_string()));
        assert!(report.written.contains(&"per_layer_gap.csv".to_string()));
        // two λ groups cannot support a correlation
        assert!(report
            .skipped
            .iter()
            .any(|s| s.name == "correlation.json"));
        let summary =
            std::fs::read_to_string(report.out_dir.join("summary.csv")).unwrap();
        assert_eq!(summary.lines().count(), 2 + 2);
    }

    #[test]
    fn analysis_of_empty_directory_is_a_scope_error() {
        let tmp = tempfile::tempdir().unwrap();
        write_json(&tmp.path().join("sweep.json"), &tiny_plan()).unwrap();
        assert!(matches!(
            analyze_sweep(tmp.path()),
            Err(HarnessError::AnalysisScope { .. })
        ));
    }

    #[test]
    fn csv_floats_round_trip_exactly() {
        for v in [0.1, 1.0 / 3.0, 6.02e23, -7.3e-12, 0.0] {
            let s = fmt_f64(v);
            assert_eq!(s.parse::<f64>().unwrap().to_bits(), v.to_bits(), "{s}");
        }
    }

    #[test]
    fn plan_validation_rejects_duplicates() {
        let mut p = tiny_plan();
        p.lambdas = vec![0.0, 0.0];
        assert!(matches!(p.validate(), Err(HarnessError::Plan(_))));
    }

    #[test]
    fn gap_demo_writes_report() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("gap.json");
        let r = run_gap_demo(Some(&path), 16, 16, 500, 3).unwrap();
        assert!(path.exists());
        assert!(r.flat_inner_product.abs() < 1e-10);
        assert!(r.mean_sq_cos > 0.0);
    }
}
