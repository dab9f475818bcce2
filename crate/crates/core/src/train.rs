//! AdamW training loop combining the LM loss with the λ-weighted
//! orthogonality penalty, plus periodic overlap snapshots.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Corpus;
use crate::metrics::{self, ActivationMsoAccumulator, OverlapReport};
use crate::model::{MoEModel, ModelError};
use crate::rng::substream;
use crate::tensor::Tape;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("non-finite loss at step {step} (lm={lm_loss}, orth={orth_loss}); run aborted")]
    NonFinite { step: u64, lm_loss: f64, orth_loss: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metric(#[from] crate::metrics::MetricError),
    #[error(transparent)]
    Data(#[from] crate::data::DataError),
    #[error(transparent)]
    Tensor(#[from] crate::tensor::TensorError),
}

pub type Result<T> = std::result::Result<T, TrainError>;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub iterations: u64,
    pub batch_size: usize,
    pub seq_len: usize,
    pub lambda: f64,
    pub seed: u64,
    pub eval_interval: u64,
    pub grad_clip: Option<f64>,
    pub cosine_decay: bool,
    /// Held-out tokens evaluated per overlap snapshot.
    pub eval_tokens: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 5e-4,
            beta1: 0.9,
            beta2: 0.95,
            weight_decay: 0.1,
            iterations: 2000,
            batch_size: 16,
            seq_len: 128,
            lambda: 0.0,
            seed: 42,
            eval_interval: 200,
            grad_clip: None,
            cosine_decay: false,
            eval_tokens: 8192,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lr < 0.0 {
            return Err(TrainError::Model(ModelError::Config("lr must be >= 0".into())));
        }
        if self.lambda < 0.0 {
            return Err(TrainError::Model(ModelError::Config(
                "lambda must be nonnegative".into(),
            )));
        }
        if self.iterations == 0 || self.batch_size == 0 || self.seq_len == 0 || self.eval_interval == 0
        {
            return Err(TrainError::Model(ModelError::Config(
                "iterations, batch_size, seq_len, eval_interval must be positive".into(),
            )));
        }
        Ok(())
    }
}

/// Decoupled-weight-decay Adam. Decay applies only to parameters flagged
/// `decay` (projection matrices and embeddings, not LayerNorm affines).
pub struct AdamW {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
    beta1: f64,
    beta2: f64,
    weight_decay: f64,
    eps: f64,
}

impl AdamW {
    pub fn new(model: &MoEModel, cfg: &TrainConfig) -> Self {
        AdamW {
            m: model.params().iter().map(|p| vec![0.0; p.data.len()]).collect(),
            v: model.params().iter().map(|p| vec![0.0; p.data.len()]).collect(),
            step: 0,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            weight_decay: cfg.weight_decay,
            eps: 1e-8,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update. `grads` is aligned with the model's parameter order;
    /// `None` entries are treated as zero gradient.
    pub fn step(&mut self, model: &mut MoEModel, grads: &[Option<Vec<f64>>], lr: f64) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (((param, grad), m), v) in model
            .params_mut()
            .iter_mut()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            let zero;
            let g: &[f64] = match grad {
                Some(g) => g,
                None => {
                    zero = vec![0.0; param.data.len()];
                    &zero
                }
            };
            let decay = if param.decay { self.weight_decay } else { 0.0 };
            for (((p, &gv), mi), vi) in param.data.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut())
            {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gv;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gv * gv;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *p -= lr * (mhat / (vhat.sqrt() + self.eps) + decay * *p);
            }
        }
    }
}

/// One evaluation snapshot along a run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: u64,
    pub train_lm_loss: f64,
    pub val_lm_loss: f64,
    pub orth_loss: f64,
    pub lambda: f64,
    pub overlap: OverlapReport,
}

#[derive(Debug, Clone, Copy)]
pub struct StepStats {
    pub lm_loss: f64,
    pub orth_loss: f64,
}

pub struct Trainer {
    model: MoEModel,
    cfg: TrainConfig,
    opt: AdamW,
    data_rng: ChaCha8Rng,
    step: u64,
    /// Build the λ·L_orth term even when λ = 0. Exists so the λ=0
    /// equivalence contract (identical updates with the term never
    /// constructed) can be exercised; the default path skips construction
    /// entirely at λ = 0.
    pub force_orth_term: bool,
}

impl Trainer {
    pub fn new(model: MoEModel, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let opt = AdamW::new(&model, &cfg);
        let data_rng = substream(cfg.seed, "data");
        Ok(Trainer {
            model,
            cfg,
            opt,
            data_rng,
            step: 0,
            force_orth_term: false,
        })
    }

    pub fn model(&self) -> &MoEModel {
        &self.model
    }

    pub fn into_model(self) -> MoEModel {
        self.model
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    fn lr_at(&self, step: u64) -> f64 {
        if self.cfg.cosine_decay {
            let progress = step as f64 / self.cfg.iterations as f64;
            self.cfg.lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
        } else {
            self.cfg.lr
        }
    }

    /// One optimization step over a freshly sampled batch.
    pub fn train_step(&mut self, corpus: &Corpus) -> Result<StepStats> {
        let (inputs, targets) = corpus.sample_batch(
            self.cfg.batch_size,
            self.cfg.seq_len,
            &mut self.data_rng,
        )?;
        let tape = Tape::new();
        let bound = self.model.bind(&tape, true)?;

        let mut lm_sum: Option<crate::tensor::Tensor> = None;
        for (seq, tgt) in inputs.iter().zip(&targets) {
            let (loss, _traces) = bound.loss(seq, tgt)?;
            lm_sum = Some(match lm_sum {
                None => loss,
                Some(acc) => acc.add(&loss)?,
            });
        }
        let lm = lm_sum
            .expect("batch_size >= 1")
            .scale_const(1.0 / self.cfg.batch_size as f64);
        let lm_loss = lm.value();

        let (total, orth_loss) = if self.cfg.lambda > 0.0 || self.force_orth_term {
            let orth = metrics::orthogonality_loss(&bound.expert_up_leaves())?;
            let orth_loss = orth.value();
            (lm.add(&orth.scale_const(self.cfg.lambda))?, orth_loss)
        } else {
            (lm, 0.0)
        };

        if !total.value().is_finite() {
            return Err(TrainError::NonFinite {
                step: self.step,
                lm_loss,
                orth_loss,
            });
        }

        tape.backward(&total)?;
        let mut grads = bound.grads();
        if let Some(clip) = self.cfg.grad_clip {
            clip_global_norm(&mut grads, clip);
        }
        let lr = self.lr_at(self.step);
        self.opt.step(&mut self.model, &grads, lr);
        self.step += 1;
        Ok(StepStats { lm_loss, orth_loss })
    }

    /// Frozen-parameter evaluation on the held-out slice: validation LM
    /// loss plus weight/activation overlap.
    pub fn evaluate(&self, corpus: &Corpus) -> Result<(f64, OverlapReport)> {
        evaluate_model(&self.model, corpus, self.cfg.seq_len, self.cfg.eval_tokens)
    }

    /// Full run: `iterations` steps, a snapshot every `eval_interval`
    /// steps and after the final step.
    pub fn run(&mut self, corpus: &Corpus) -> Result<Vec<MetricsRecord>> {
        let mut records = Vec::new();
        let mut last_lm = f64::NAN;
        while self.step < self.cfg.iterations {
            let stats = self.train_step(corpus)?;
            last_lm = stats.lm_loss;
            if self.step % self.cfg.eval_interval == 0 || self.step == self.cfg.iterations {
                records.push(self.snapshot(corpus, last_lm)?);
            }
        }
        if records.last().map(|r| r.step) != Some(self.step) {
            records.push(self.snapshot(corpus, last_lm)?);
        }
        Ok(records)
    }

    fn snapshot(&self, corpus: &Corpus, train_lm_loss: f64) -> Result<MetricsRecord> {
        let (val_lm_loss, overlap) = self.evaluate(corpus)?;
        // single source of truth for the penalty value: the metrics module
        let orth_loss = metrics::orthogonality_loss_value(&self.model.expert_up_weights())?
            .iter()
            .sum();
        Ok(MetricsRecord {
            step: self.step,
            train_lm_loss,
            val_lm_loss,
            orth_loss,
            lambda: self.cfg.lambda,
            overlap,
        })
    }
}

/// Validation LM loss and overlap report for a frozen model.
pub fn evaluate_model(
    model: &MoEModel,
    corpus: &Corpus,
    seq_len: usize,
    eval_tokens: usize,
) -> Result<(f64, OverlapReport)> {
    let cfg = model.config();
    let tape = Tape::new();
    let bound = model.bind(&tape, false)?;
    let windows = corpus.val_windows(seq_len.min(cfg.context_length), eval_tokens);
    if windows.is_empty() {
        return Err(TrainError::Data(crate::data::DataError::Invalid(
            "validation split too short for one window".into(),
        )));
    }
    let mut acc = ActivationMsoAccumulator::new(cfg.n_layers, cfg.top_k)?;
    let mut loss_sum = 0.0;
    let mut token_sum = 0usize;
    for (inp, tgt) in &windows {
        let (loss, traces) = bound.loss(inp, tgt)?;
        loss_sum += loss.value() * inp.len() as f64;
        token_sum += inp.len();
        for t in &traces {
            acc.push_trace(t);
        }
    }
    let act = acc.finish()?;
    let weight = metrics::weight_mso(&model.expert_up_weights())?;
    Ok((
        loss_sum / token_sum as f64,
        OverlapReport::from_parts(weight, act),
    ))
}

fn clip_global_norm(grads: &mut [Option<Vec<f64>>], clip: f64) {
    let norm_sq: f64 = grads
        .iter()
        .flatten()
        .flat_map(|g| g.iter())
        .map(|&v| v * v)
        .sum();
    let norm = norm_sq.sqrt();
    if norm > clip {
        let scale = clip / norm;
        for g in grads.iter_mut().flatten() {
            for v in g.iter_mut() {
                *v *= scale;
            }
        }
    }
}
