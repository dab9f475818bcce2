//! Forward pass: parameters are bound onto a tape once, then any number of
//! sequences can be pushed through, sharing the same leaves so gradients
//! accumulate across a batch.

use super::{MoEModel, ModelError, Result, LAYERNORM_EPS};
use crate::tensor::{concat_cols, Tape, Tensor};

/// Routing decision for one token at one MoE layer. `outputs` are the
/// selected experts' full outputs before gate scaling, in selection order.
#[derive(Debug, Clone)]
pub struct TokenRouting {
    pub experts: Vec<usize>,
    pub gates: Vec<f64>,
    pub outputs: Vec<Vec<f64>>,
}

/// Per-layer routing record for one forward pass.
#[derive(Debug, Clone)]
pub struct RoutingTrace {
    pub layer: usize,
    pub tokens: Vec<TokenRouting>,
}

/// A model whose parameters are registered as leaves on one tape.
pub struct BoundModel<'m> {
    model: &'m MoEModel,
    tape: Tape,
    leaves: Vec<Tensor>,
}

impl MoEModel {
    pub fn bind<'m>(&'m self, tape: &Tape, requires_grad: bool) -> Result<BoundModel<'m>> {
        let leaves = self
            .params()
            .iter()
            .map(|p| tape.leaf(p.data.clone(), &p.shape, requires_grad))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(BoundModel {
            model: self,
            tape: tape.clone(),
            leaves,
        })
    }
}

impl<'m> BoundModel<'m> {
    pub fn tape(&self) -> &Tape {
        &self.tape
    }

    pub fn model(&self) -> &'m MoEModel {
        self.model
    }

    pub fn leaf(&self, name: &str) -> &Tensor {
        &self.leaves[self.model.param_index(name)]
    }

    /// Tape handles of every expert up-projection, per layer per expert.
    pub fn expert_up_leaves(&self) -> Vec<Vec<Tensor>> {
        let cfg = self.model.config();
        (0..cfg.n_layers)
            .map(|l| {
                (0..cfg.n_experts)
                    .map(|e| self.leaf(&format!("l{l}.expert{e}.w_up")).clone())
                    .collect()
            })
            .collect()
    }

    /// Gradients accumulated on the parameter leaves, aligned with
    /// `model.params()` order.
    pub fn grads(&self) -> Vec<Option<Vec<f64>>> {
        self.leaves.iter().map(|t| t.grad()).collect()
    }

    /// Causal logits `[seq × vocab]` plus one routing trace per MoE layer.
    pub fn forward(&self, tokens: &[usize]) -> Result<(Tensor, Vec<RoutingTrace>)> {
        let cfg = self.model.config();
        let t = tokens.len();
        if t == 0 {
            return Err(ModelError::Input("empty token sequence".into()));
        }
        if t > cfg.context_length {
            return Err(ModelError::Input(format!(
                "sequence length {t} exceeds context {}",
                cfg.context_length
            )));
        }
        let positions: Vec<usize> = (0..t).collect();
        let tok = self.leaf("tok_emb").embedding(tokens)?;
        let pos = self.leaf("pos_emb").embedding(&positions)?;
        let mut x = tok.add(&pos)?;

        let mut traces = Vec::with_capacity(cfg.n_layers);
        for l in 0..cfg.n_layers {
            let ln1 = x.layernorm(
                self.leaf(&format!("l{l}.ln1.gain")),
                self.leaf(&format!("l{l}.ln1.bias")),
                LAYERNORM_EPS,
            )?;
            let attn = self.attention(l, &ln1)?;
            x = x.add(&attn)?;

            let ln2 = x.layernorm(
                self.leaf(&format!("l{l}.ln2.gain")),
                self.leaf(&format!("l{l}.ln2.bias")),
                LAYERNORM_EPS,
            )?;
            let (moe, trace) = self.moe_block(l, &ln2)?;
            x = x.add(&moe)?;
            traces.push(trace);
        }

        let xf = x.layernorm(self.leaf("ln_f.gain"), self.leaf("ln_f.bias"), LAYERNORM_EPS)?;
        let logits = xf.matmul(self.leaf("lm_head"))?;
        Ok((logits, traces))
    }

    /// Forward plus mean token cross entropy against `targets`.
    pub fn loss(&self, tokens: &[usize], targets: &[usize]) -> Result<(Tensor, Vec<RoutingTrace>)> {
        let (logits, traces) = self.forward(tokens)?;
        let loss = logits.cross_entropy_mean(targets)?;
        Ok((loss, traces))
    }

    fn attention(&self, l: usize, x: &Tensor) -> Result<Tensor> {
        let cfg = self.model.config();
        let t = x.shape()[0];
        let hd = cfg.d_model / cfg.n_heads;
        let q = x.matmul(self.leaf(&format!("l{l}.attn.wq")))?;
        let k = x.matmul(self.leaf(&format!("l{l}.attn.wk")))?;
        let v = x.matmul(self.leaf(&format!("l{l}.attn.wv")))?;
        let scale = 1.0 / (hd as f64).sqrt();
        let mut heads = Vec::with_capacity(cfg.n_heads);
        for h in 0..cfg.n_heads {
            let qh = q.slice_cols(h * hd, hd)?;
            let kh = k.slice_cols(h * hd, hd)?;
            let vh = v.slice_cols(h * hd, hd)?;
            let scores = qh.matmul(&kh.transpose()?)?.scale_const(scale);
            let probs = scores.causal_mask()?.softmax();
            heads.push(probs.matmul(&vh)?);
        }
        let merged = if heads.len() == 1 {
            heads.pop().expect("one head")
        } else {
            concat_cols(&self.tape, &heads)?
        };
        let _ = t;
        merged.matmul(self.leaf(&format!("l{l}.attn.wo"))).map_err(Into::into)
    }

    /// One expert on a `[rows × d_model]` token block.
    pub fn expert_block(&self, l: usize, e: usize, x: &Tensor) -> Result<Tensor> {
        let up = x.matmul(&self.leaf(&format!("l{l}.expert{e}.w_up")).transpose()?)?;
        let act = up.silu().layernorm(
            self.leaf(&format!("l{l}.expert{e}.ln.gain")),
            self.leaf(&format!("l{l}.expert{e}.ln.bias")),
            LAYERNORM_EPS,
        )?;
        act.matmul(&self.leaf(&format!("l{l}.expert{e}.w_down")).transpose()?)
            .map_err(Into::into)
    }

    /// Single-token expert evaluation: `[d_model] → [d_model]`.
    pub fn expert_forward(&self, l: usize, e: usize, x: &[f64]) -> Result<Vec<f64>> {
        let d = self.model.config().d_model;
        if x.len() != d {
            return Err(ModelError::Input(format!(
                "expert input length {} != d_model {d}",
                x.len()
            )));
        }
        let xt = self.tape.leaf(x.to_vec(), &[1, d], false)?;
        Ok(self.expert_block(l, e, &xt)?.data())
    }

    /// MoE feed-forward over all tokens of one sequence. Tokens routed to
    /// the same expert are batched into one matmul; expert order 0..N keeps
    /// the reduction deterministic.
    pub fn moe_block(&self, l: usize, x: &Tensor) -> Result<(Tensor, RoutingTrace)> {
        let cfg = self.model.config();
        let (t, _d) = (x.shape()[0], x.shape()[1]);
        let n = cfg.n_experts;
        let k = cfg.top_k;

        let router = self.leaf(&format!("l{l}.router")).transpose()?; // [d×N]
        let logits = x.matmul(&router)?; // [T×N]
        let logit_vals = logits.data();

        if logit_vals.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::Input(format!(
                "non-finite router logits in layer {l}; parameters have diverged"
            )));
        }

        // Host-side top-k selection; ties broken toward the lower index.
        let mut selected: Vec<Vec<usize>> = Vec::with_capacity(t);
        for row in logit_vals.chunks_exact(n) {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.sort_by(|&a, &b| {
                row[b].partial_cmp(&row[a]).expect("finite router logits").then(a.cmp(&b))
            });
            idx.truncate(k);
            selected.push(idx);
        }

        // Gate weights: softmax over the k selected logits only.
        let sel_flat: Vec<usize> = selected
            .iter()
            .enumerate()
            .flat_map(|(ti, sel)| sel.iter().map(move |&e| ti * n + e))
            .collect();
        let gates = logits.gather(&sel_flat, &[t, k])?.softmax(); // [T×k]
        let gate_vals = gates.data();

        let mut token_traces: Vec<TokenRouting> = selected
            .iter()
            .zip(gate_vals.chunks_exact(k))
            .map(|(sel, g)| TokenRouting {
                experts: sel.clone(),
                gates: g.to_vec(),
                outputs: vec![Vec::new(); k],
            })
            .collect();

        let mut out: Option<Tensor> = None;
        for e in 0..n {
            let mut rows = Vec::new();
            let mut slots = Vec::new();
            for (ti, sel) in selected.iter().enumerate() {
                if let Some(s) = sel.iter().position(|&x| x == e) {
                    rows.push(ti);
                    slots.push(s);
                }
            }
            if rows.is_empty() {
                continue;
            }
            let xe = x.gather_rows(&rows)?;
            let he = self.expert_block(l, e, &xe)?; // [rows × d]
            let he_vals = he.data();
            for ((&ti, &slot), hrow) in
                rows.iter().zip(&slots).zip(he_vals.chunks_exact(x.shape()[1]))
            {
                token_traces[ti].outputs[slot] = hrow.to_vec();
            }
            let gate_idx: Vec<usize> =
                rows.iter().zip(&slots).map(|(&ti, &s)| ti * k + s).collect();
            let ge = gates.gather(&gate_idx, &[rows.len()])?;
            let contribution = he.scale_rows(&ge)?.scatter_add_rows(&rows, t)?;
            out = Some(match out {
                None => contribution,
                Some(acc) => acc.add(&contribution)?,
            });
        }
        let out = out.expect("top_k >= 1 guarantees expert contributions");
        Ok((
            out,
            RoutingTrace {
                layer: l,
                tokens: token_traces,
            },
        ))
    }
}
