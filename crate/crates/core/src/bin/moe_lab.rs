//! Command-line entry point for training runs, λ sweeps, analysis, and
//! the routing-overlap demonstration.
//!
//! Output directories default to `$MOELAB_OUT` (falling back to `runs/`),
//! and the corpus defaults to `$MOELAB_CORPUS` (falling back to the
//! bundled synthetic story corpus).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use moelab::data::Corpus;
use moelab::harness::{
    analyze_sweep, run_cell, run_sweep, ExperimentPlan, RunStatus,
};
use moelab::model::MoEModelConfig;
use moelab::train::TrainConfig;

#[derive(Parser)]
#[command(name = "moe-lab", version, about = "MoE expert-overlap experiment runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model at a fixed λ and seed.
    Train(TrainArgs),
    /// Run (or resume) the full λ × seed sweep.
    Sweep(SweepArgs),
    /// Build the analysis tables from a finished sweep.
    Analyze(AnalyzeArgs),
    /// Demonstrate that trace-orthogonal weight pairs still produce
    /// correlated activations.
    GapDemo(GapDemoArgs),
    /// Print corpus statistics and the content digest.
    CorpusInfo(CorpusArgs),
}

#[derive(Args)]
struct CorpusArgs {
    /// Corpus file (raw bytes; tokens are bytes).
    #[arg(long, env = "MOELAB_CORPUS", default_value_os_t = default_corpus())]
    corpus: PathBuf,
    /// Held-out tail fraction.
    #[arg(long, default_value_t = 0.1)]
    val_fraction: f64,
}

#[derive(Args)]
struct ModelArgs {
    /// Use the full-size preset instead of the desk-scale default.
    #[arg(long)]
    full_size: bool,
    #[arg(long)]
    d_model: Option<usize>,
    #[arg(long)]
    n_layers: Option<usize>,
    #[arg(long)]
    n_heads: Option<usize>,
    #[arg(long)]
    n_experts: Option<usize>,
    #[arg(long)]
    top_k: Option<usize>,
    #[arg(long)]
    d_ffn: Option<usize>,
    #[arg(long)]
    context_length: Option<usize>,
}

impl ModelArgs {
    fn build(&self) -> MoEModelConfig {
        let mut cfg = if self.full_size {
            MoEModelConfig::full_size_preset()
        } else {
            MoEModelConfig::desk_default()
        };
        // byte-level corpus
        cfg.vocab_size = moelab::data::BYTE_VOCAB;
        if let Some(v) = self.d_model {
            cfg.d_model = v;
        }
        if let Some(v) = self.n_layers {
            cfg.n_layers = v;
        }
        if let Some(v) = self.n_heads {
            cfg.n_heads = v;
        }
        if let Some(v) = self.n_experts {
            cfg.n_experts = v;
        }
        if let Some(v) = self.top_k {
            cfg.top_k = v;
        }
        if let Some(v) = self.d_ffn {
            cfg.d_ffn = v;
        }
        if let Some(v) = self.context_length {
            cfg.context_length = v;
        }
        cfg
    }
}

#[derive(Args)]
struct TrainOptArgs {
    #[arg(long)]
    iterations: Option<u64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    seq_len: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    eval_interval: Option<u64>,
    #[arg(long)]
    eval_tokens: Option<usize>,
    #[arg(long)]
    grad_clip: Option<f64>,
    #[arg(long)]
    cosine_decay: bool,
}

impl TrainOptArgs {
    fn build(&self) -> TrainConfig {
        let mut cfg = TrainConfig::default();
        if let Some(v) = self.iterations {
            cfg.iterations = v;
        }
        if let Some(v) = self.batch_size {
            cfg.batch_size = v;
        }
        if let Some(v) = self.seq_len {
            cfg.seq_len = v;
        }
        if let Some(v) = self.lr {
            cfg.lr = v;
        }
        if let Some(v) = self.weight_decay {
            cfg.weight_decay = v;
        }
        if let Some(v) = self.eval_interval {
            cfg.eval_interval = v;
        }
        if let Some(v) = self.eval_tokens {
            cfg.eval_tokens = v;
        }
        cfg.grad_clip = self.grad_clip;
        cfg.cosine_decay = self.cosine_decay;
        cfg
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    train: TrainOptArgs,
    /// Orthogonality penalty weight.
    #[arg(long, default_value_t = 0.0)]
    lambda: f64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Run directory (metrics.jsonl, run.json, checkpoint.bin).
    #[arg(long, env = "MOELAB_OUT", default_value = "runs")]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    train: TrainOptArgs,
    /// Comma-separated λ grid.
    #[arg(long, value_delimiter = ',')]
    lambdas: Option<Vec<f64>>,
    /// Comma-separated seed set.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Sweep root directory.
    #[arg(long, env = "MOELAB_OUT", default_value = "runs")]
    out: PathBuf,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Sweep root directory (the one given to `sweep --out`).
    #[arg(long, env = "MOELAB_OUT", default_value = "runs")]
    sweep: PathBuf,
}

#[derive(Args)]
struct GapDemoArgs {
    #[arg(long, default_value_t = 512)]
    d_model: usize,
    #[arg(long, default_value_t = 2048)]
    d_ffn: usize,
    #[arg(long, default_value_t = 10000)]
    trials: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Optional JSON report path.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn default_corpus() -> PathBuf {
    PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/data/corpus.txt"))
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<(), Box<dyn std::error::Error>> {
    match cli.command {
        Command::Train(args) => {
            let corpus = Corpus::load(&args.corpus.corpus, args.corpus.val_fraction)?;
            let plan = ExperimentPlan {
                lambdas: vec![args.lambda],
                seeds: vec![args.seed],
                model: args.model.build(),
                train: args.train.build(),
                val_fraction: args.corpus.val_fraction,
            };
            let meta = run_cell(&args.out, &plan, args.lambda, args.seed, &corpus)?;
            match meta.status {
                RunStatus::Completed => {
                    println!(
                        "completed {} snapshots at lambda {} seed {} -> {}",
                        meta.snapshots,
                        args.lambda,
                        args.seed,
                        args.out.display()
                    );
                    Ok(())
                }
                RunStatus::Failed => Err(format!(
                    "run failed: {}",
                    meta.error.unwrap_or_else(|| "unknown".into())
                )
                .into()),
            }
        }
        Command::Sweep(args) => {
            let corpus = Corpus::load(&args.corpus.corpus, args.corpus.val_fraction)?;
            let mut plan =
                ExperimentPlan::default_grid(args.model.build(), args.train.build());
            plan.val_fraction = args.corpus.val_fraction;
            if let Some(l) = args.lambdas {
                plan.lambdas = l;
            }
            if let Some(s) = args.seeds {
                plan.seeds = s;
            }
            let report = run_sweep(&args.out, &plan, &corpus)?;
            println!(
                "sweep: {} trained, {} resumed, {} failed -> {}",
                report.trained,
                report.resumed,
                report.failed,
                report.csv_path.display()
            );
            Ok(())
        }
        Command::Analyze(args) => {
            let report = analyze_sweep(&args.sweep)?;
            for name in &report.written {
                println!("wrote {}", report.out_dir.join(name).display());
            }
            for s in &report.skipped {
                println!("skipped {}: {}", s.name, s.reason);
            }
            if let Some(c) = &report.correlation {
                println!(
                    "weight vs activation MSO across lambda: r = {:.3}, p = {:.3}, n = {}",
                    c.r, c.p_two_sided, c.n
                );
            }
            Ok(())
        }
        Command::GapDemo(args) => {
            let r = moelab::harness::run_gap_demo(
                args.out.as_deref(),
                args.d_model,
                args.d_ffn,
                args.trials,
                args.seed,
            )?;
            println!("{}", serde_json::to_string_pretty(&r)?);
            Ok(())
        }
        Command::CorpusInfo(args) => {
            let corpus = Corpus::load(&args.corpus, args.val_fraction)?;
            println!("path:        {}", args.corpus.display());
            println!("sha256:      {}", corpus.digest());
            println!("bytes:       {}", corpus.train_len() + corpus.val_len());
            println!("train bytes: {}", corpus.train_len());
            println!("val bytes:   {}", corpus.val_len());
            println!("vocab:       {}", corpus.vocab_size());
            Ok(())
        }
    }
}
