//! Orthogonality penalty and mean squared overlap (MSO) metrics.
//!
//! Weight MSO is the pair-averaged squared inner product of the flattened,
//! L2-normalized expert up-projections. Activation MSO is the same pair
//! average over the squared cosines of the selected experts' outputs,
//! estimated as a running mean over evaluated tokens. Both are reported
//! per layer and averaged across layers.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::RoutingTrace;
use crate::rng::substream;
use crate::tensor::Tensor;
use rand::Rng;
use rand_distr::StandardNormal;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("degenerate parameters: {0}")]
    Degenerate(String),
    #[error("undefined metric: {0}")]
    Undefined(String),
    #[error("tensor error: {0}")]
    Tensor(#[from] crate::tensor::TensorError),
}

pub type Result<T> = std::result::Result<T, MetricError>;

/// Fraction of skipped activation pairs above which a run is flagged.
pub const SKIP_FLAG_THRESHOLD: f64 = 0.01;

/// One evaluation's overlap summary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OverlapReport {
    pub per_layer_weight_mso: Vec<f64>,
    pub per_layer_activation_mso: Vec<f64>,
    pub mean_weight_mso: f64,
    pub mean_activation_mso: f64,
    pub per_layer_gap_ratio: Vec<f64>,
    pub gap_ratio: f64,
    pub skipped_activation_pairs: u64,
    pub total_activation_pairs: u64,
    pub flagged: bool,
}

impl OverlapReport {
    pub fn from_parts(weight: Vec<f64>, act: ActivationMso) -> Self {
        let mean_w = mean(&weight);
        let mean_a = mean(&act.per_layer);
        let per_layer_gap_ratio = weight
            .iter()
            .zip(&act.per_layer)
            .map(|(&w, &a)| a / w)
            .collect();
        OverlapReport {
            gap_ratio: mean_a / mean_w,
            mean_weight_mso: mean_w,
            mean_activation_mso: mean_a,
            per_layer_weight_mso: weight,
            per_layer_activation_mso: act.per_layer,
            per_layer_gap_ratio,
            skipped_activation_pairs: act.skipped_pairs,
            total_activation_pairs: act.total_pairs,
            flagged: act.flagged,
        }
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

fn pairs(n: usize) -> f64 {
    (n * (n - 1) / 2) as f64
}

/// Per-layer Σ_{i<j} ⟨w̃_i, w̃_j⟩² over flattened unit-normalized weights,
/// computed outside any tape.
pub fn orthogonality_loss_value(experts_per_layer: &[Vec<&[f64]>]) -> Result<Vec<f64>> {
    experts_per_layer
        .iter()
        .enumerate()
        .map(|(l, experts)| {
            check_layer(l, experts.len())?;
            let norms: Vec<f64> = experts.iter().map(|w| dot(w, w).sqrt()).collect();
            if let Some(i) = norms.iter().position(|&n| n == 0.0) {
                return Err(MetricError::Degenerate(format!(
                    "zero-norm up-projection: layer {l} expert {i}"
                )));
            }
            let mut total = 0.0;
            for i in 0..experts.len() {
                for j in i + 1..experts.len() {
                    let c = dot(experts[i], experts[j]) / (norms[i] * norms[j]);
                    total += c * c;
                }
            }
            Ok(total)
        })
        .collect()
}

/// Per-layer weight MSO: the orthogonality loss normalized by the number
/// of expert pairs.
pub fn weight_mso(experts_per_layer: &[Vec<&[f64]>]) -> Result<Vec<f64>> {
    let loss = orthogonality_loss_value(experts_per_layer)?;
    Ok(loss
        .iter()
        .zip(experts_per_layer)
        .map(|(&l, experts)| l / pairs(experts.len()))
        .collect())
}

fn check_layer(layer: usize, n: usize) -> Result<()> {
    if n < 2 {
        return Err(MetricError::Undefined(format!(
            "layer {layer} has {n} experts; overlap needs at least 2"
        )));
    }
    Ok(())
}

/// Differentiable orthogonality loss over tape-bound up-projection leaves,
/// summed across layers. Gradients flow through the normalization.
pub fn orthogonality_loss(experts_per_layer: &[Vec<Tensor>]) -> Result<Tensor> {
    let mut total: Option<Tensor> = None;
    for (l, experts) in experts_per_layer.iter().enumerate() {
        check_layer(l, experts.len())?;
        let norms: Vec<Tensor> = experts
            .iter()
            .map(|w| Ok(w.dot(w)?.sqrt()))
            .collect::<Result<_>>()?;
        for (i, n) in norms.iter().enumerate() {
            if n.value() == 0.0 {
                return Err(MetricError::Degenerate(format!(
                    "zero-norm up-projection: layer {l} expert {i}"
                )));
            }
        }
        for i in 0..experts.len() {
            for j in i + 1..experts.len() {
                let raw = experts[i].dot(&experts[j])?;
                let denom = norms[i].mul(&norms[j])?.recip();
                let c = raw.mul(&denom)?;
                let sq = c.mul(&c)?;
                total = Some(match total {
                    None => sq,
                    Some(acc) => acc.add(&sq)?,
                });
            }
        }
    }
    total.ok_or_else(|| MetricError::Undefined("no layers given".into()))
}

/// Streaming estimator of activation MSO over routing traces.
pub struct ActivationMsoAccumulator {
    n_layers: usize,
    top_k: usize,
    layer_sum: Vec<f64>,
    layer_tokens: Vec<u64>,
    skipped_pairs: u64,
    total_pairs: u64,
}

#[derive(Debug, Clone)]
pub struct ActivationMso {
    pub per_layer: Vec<f64>,
    pub skipped_pairs: u64,
    pub total_pairs: u64,
    pub flagged: bool,
}

impl ActivationMsoAccumulator {
    pub fn new(n_layers: usize, top_k: usize) -> Result<Self> {
        if top_k < 2 {
            return Err(MetricError::Undefined(
                "activation MSO needs top_k >= 2 (pairs require two selected experts)".into(),
            ));
        }
        Ok(ActivationMsoAccumulator {
            n_layers,
            top_k,
            layer_sum: vec![0.0; n_layers],
            layer_tokens: vec![0; n_layers],
            skipped_pairs: 0,
            total_pairs: 0,
        })
    }

    pub fn push_trace(&mut self, trace: &RoutingTrace) {
        assert!(trace.layer < self.n_layers, "trace layer out of range");
        for tok in &trace.tokens {
            debug_assert_eq!(tok.outputs.len(), self.top_k);
            let norms: Vec<f64> = tok.outputs.iter().map(|h| dot(h, h).sqrt()).collect();
            let mut sum = 0.0;
            let mut valid = 0u64;
            for i in 0..tok.outputs.len() {
                for j in i + 1..tok.outputs.len() {
                    self.total_pairs += 1;
                    if norms[i] == 0.0 || norms[j] == 0.0 {
                        self.skipped_pairs += 1;
                        continue;
                    }
                    let c = dot(&tok.outputs[i], &tok.outputs[j]) / (norms[i] * norms[j]);
                    sum += c * c;
                    valid += 1;
                }
            }
            if valid > 0 {
                self.layer_sum[trace.layer] += sum / valid as f64;
                self.layer_tokens[trace.layer] += 1;
            }
        }
    }

    pub fn finish(self) -> Result<ActivationMso> {
        if self.layer_tokens.iter().any(|&c| c == 0) {
            return Err(MetricError::Undefined(
                "empty evaluation stream for at least one layer".into(),
            ));
        }
        let per_layer = self
            .layer_sum
            .iter()
            .zip(&self.layer_tokens)
            .map(|(&s, &c)| s / c as f64)
            .collect();
        let flagged = self.total_pairs > 0
            && self.skipped_pairs as f64 / self.total_pairs as f64 > SKIP_FLAG_THRESHOLD;
        Ok(ActivationMso {
            per_layer,
            skipped_pairs: self.skipped_pairs,
            total_pairs: self.total_pairs,
            flagged,
        })
    }
}

/// Activation MSO over an in-memory trace stream.
pub fn activation_mso(traces: &[RoutingTrace], n_layers: usize, top_k: usize) -> Result<ActivationMso> {
    let mut acc = ActivationMsoAccumulator::new(n_layers, top_k)?;
    for t in traces {
        acc.push_trace(t);
    }
    acc.finish()
}

/// Demonstration that trace-orthogonality of weights does not silence the
/// activation inner product.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GapOracleReport {
    pub d_model: usize,
    pub d_ffn: usize,
    pub trials: usize,
    /// ⟨vec(W₁), vec(W₂)⟩ of the constructed pair; zero by construction.
    pub flat_inner_product: f64,
    /// Mean squared activation cosine of the trace-orthogonal pair.
    pub mean_sq_cos: f64,
    pub max_abs_cos: f64,
    /// Mean squared activation cosine when W₁ᵀW₂ is literally zero.
    pub control_mean_sq_cos: f64,
    pub control_max_abs_cos: f64,
}

/// Builds W₁, W₂ with tr(W₁ᵀW₂) = 0 exactly (Gram–Schmidt in flattened
/// space) yet W₁ᵀW₂ ≠ 0, samples standard-normal inputs, and reports the
/// empirical squared-cosine distribution of ⟨W₁x, W₂x⟩. A control arm with
/// disjoint output support (W₁ᵀW₂ = 0 as a matrix) is reported alongside.
pub fn gap_oracle(d_model: usize, d_ffn: usize, trials: usize, seed: u64) -> Result<GapOracleReport> {
    if d_model < 2 || d_ffn < 2 {
        return Err(MetricError::Undefined("gap oracle needs dimensions >= 2".into()));
    }
    let mut rng = substream(seed, "gap-oracle");
    let len = d_ffn * d_model;
    let w1: Vec<f64> = (0..len).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let mut w2: Vec<f64> = (0..len).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    // Remove the flattened component of w2 along w1: the flat inner product
    // (= tr(W1ᵀW2)) becomes zero while the matrix product stays generic.
    let coeff = dot(&w1, &w2) / dot(&w1, &w1);
    for (b, &a) in w2.iter_mut().zip(&w1) {
        *b -= coeff * a;
    }
    let flat_inner_product = dot(&w1, &w2);

    // Control arm: W1 writes only the first half of the output rows and W2
    // only the second half, so W1ᵀW2 is the zero matrix.
    let half = d_ffn / 2;
    let mut c1 = vec![0.0; len];
    let mut c2 = vec![0.0; len];
    for v in &mut c1[..half * d_model] {
        *v = rng.sample::<f64, _>(StandardNormal);
    }
    for v in &mut c2[half * d_model..] {
        *v = rng.sample::<f64, _>(StandardNormal);
    }

    let mut sum_sq = 0.0;
    let mut max_abs: f64 = 0.0;
    let mut control_sum_sq = 0.0;
    let mut control_max: f64 = 0.0;
    let mut x = vec![0.0; d_model];
    for _ in 0..trials {
        for v in &mut x {
            *v = rng.sample::<f64, _>(StandardNormal);
        }
        let c = activation_cosine(&w1, &w2, &x, d_ffn, d_model);
        sum_sq += c * c;
        max_abs = max_abs.max(c.abs());
        let cc = activation_cosine(&c1, &c2, &x, d_ffn, d_model);
        control_sum_sq += cc * cc;
        control_max = control_max.max(cc.abs());
    }
    Ok(GapOracleReport {
        d_model,
        d_ffn,
        trials,
        flat_inner_product,
        mean_sq_cos: sum_sq / trials as f64,
        max_abs_cos: max_abs,
        control_mean_sq_cos: control_sum_sq / trials as f64,
        control_max_abs_cos: control_max,
    })
}

fn activation_cosine(w1: &[f64], w2: &[f64], x: &[f64], rows: usize, cols: usize) -> f64 {
    let mut z1 = vec![0.0; rows];
    let mut z2 = vec![0.0; rows];
    crate::tensor::matmul_nn(w1, x, &mut z1, rows, cols, 1);
    crate::tensor::matmul_nn(w2, x, &mut z2, rows, cols, 1);
    let (n1, n2) = (dot(&z1, &z1).sqrt(), dot(&z2, &z2).sqrt());
    if n1 == 0.0 || n2 == 0.0 {
        return 0.0;
    }
    dot(&z1, &z2) / (n1 * n2)
}
