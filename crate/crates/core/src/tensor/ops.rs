//! Forward constructors and backward rules for every tape operation.

use super::kernels::{matmul_nn, matmul_nt, matmul_tn};
use super::{Node, Op, Result, Tape, Tensor, TensorError};

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

const MASK_NEG: f64 = -1e30;

impl Tensor {
    fn node(&self, data: Vec<f64>, shape: Vec<usize>, op: Op, requires_grad: bool) -> Tensor {
        self.tape.push(Node {
            shape,
            data,
            grad: None,
            requires_grad,
            op: if requires_grad { Some(op) } else { None },
        })
    }

    /// Matrix product. `[m×k]·[k×n] → [m×n]`; a rank-1 right operand is
    /// treated as a column, producing a rank-1 result.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (m, k) = self.rows_cols();
        if self.rank() == 1 {
            return Err(TensorError::Dimension(
                "matmul left operand must be rank 2".into(),
            ));
        }
        let (k2, n) = other.rows_cols();
        if k != k2 {
            return Err(TensorError::Dimension(format!(
                "matmul inner dimensions disagree: {:?} · {:?}",
                self.shape, other.shape
            )));
        }
        let mut out = vec![0.0; m * n];
        self.tape.with_node(self.id, |a| {
            self.tape.with_node(other.id, |b| {
                matmul_nn(&a.data, &b.data, &mut out, m, k, n);
            })
        });
        let shape = if other.rank() == 1 { vec![m] } else { vec![m, n] };
        let rg = self.requires_grad() || other.requires_grad();
        Ok(self.node(out, shape, Op::Matmul { a: self.id, b: other.id }, rg))
    }

    pub fn transpose(&self) -> Result<Tensor> {
        if self.rank() != 2 {
            return Err(TensorError::Dimension("transpose requires rank 2".into()));
        }
        let (r, c) = (self.shape[0], self.shape[1]);
        let data = self.tape.with_node(self.id, |n| {
            let mut out = vec![0.0; r * c];
            for i in 0..r {
                for j in 0..c {
                    out[j * r + i] = n.data[i * c + j];
                }
            }
            out
        });
        let rg = self.requires_grad();
        Ok(self.node(data, vec![c, r], Op::Transpose { x: self.id }, rg))
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(TensorError::Dimension(format!(
                "add shapes differ: {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        let data = self.binary_zip(other, |a, b| a + b);
        let rg = self.requires_grad() || other.requires_grad();
        Ok(self.node(data, self.shape.clone(), Op::Add { a: self.id, b: other.id }, rg))
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(TensorError::Dimension(format!(
                "mul shapes differ: {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        let data = self.binary_zip(other, |a, b| a * b);
        let rg = self.requires_grad() || other.requires_grad();
        Ok(self.node(data, self.shape.clone(), Op::Mul { a: self.id, b: other.id }, rg))
    }

    fn binary_zip(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        self.tape.with_node(self.id, |a| {
            self.tape
                .with_node(other.id, |b| a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect())
        })
    }

    /// Row-broadcast bias add: `[r×c] + [c]`.
    pub fn add_bias(&self, bias: &Tensor) -> Result<Tensor> {
        let (r, c) = self.rows_cols();
        if bias.shape() != [c] {
            return Err(TensorError::Dimension(format!(
                "bias shape {:?} does not match row width {}",
                bias.shape(),
                c
            )));
        }
        let data = self.tape.with_node(self.id, |x| {
            self.tape.with_node(bias.id, |b| {
                let mut out = x.data.clone();
                for row in out.chunks_exact_mut(c) {
                    for (o, &bv) in row.iter_mut().zip(&b.data) {
                        *o += bv;
                    }
                }
                out
            })
        });
        let rg = self.requires_grad() || bias.requires_grad();
        let _ = r;
        Ok(self.node(data, self.shape.clone(), Op::AddBias { x: self.id, bias: bias.id }, rg))
    }

    /// Scale row i of `[r×c]` by `s[i]`.
    pub fn scale_rows(&self, s: &Tensor) -> Result<Tensor> {
        let (r, c) = self.rows_cols();
        if s.shape() != [r] {
            return Err(TensorError::Dimension(format!(
                "row-scale vector shape {:?} does not match {} rows",
                s.shape(),
                r
            )));
        }
        let data = self.tape.with_node(self.id, |x| {
            self.tape.with_node(s.id, |sv| {
                let mut out = x.data.clone();
                for (row, &f) in out.chunks_exact_mut(c).zip(&sv.data) {
                    for o in row {
                        *o *= f;
                    }
                }
                out
            })
        });
        let rg = self.requires_grad() || s.requires_grad();
        Ok(self.node(data, self.shape.clone(), Op::ScaleRows { x: self.id, s: s.id }, rg))
    }

    pub fn scale_const(&self, c: f64) -> Tensor {
        let data = self.tape.with_node(self.id, |x| x.data.iter().map(|v| v * c).collect());
        let rg = self.requires_grad();
        self.node(data, self.shape.clone(), Op::ScaleConst { x: self.id, c }, rg)
    }

    /// Multiply every element by a one-element tensor.
    pub fn scale(&self, s: &Tensor) -> Result<Tensor> {
        if s.len() != 1 {
            return Err(TensorError::Dimension("scale factor must be scalar".into()));
        }
        let sv = s.value();
        let data = self.tape.with_node(self.id, |x| x.data.iter().map(|v| v * sv).collect());
        let rg = self.requires_grad() || s.requires_grad();
        Ok(self.node(data, self.shape.clone(), Op::Scale { x: self.id, s: s.id }, rg))
    }

    pub fn recip(&self) -> Tensor {
        let data = self.tape.with_node(self.id, |x| x.data.iter().map(|v| 1.0 / v).collect());
        let rg = self.requires_grad();
        self.node(data, self.shape.clone(), Op::Recip { x: self.id }, rg)
    }

    pub fn sqrt(&self) -> Tensor {
        let data = self.tape.with_node(self.id, |x| x.data.iter().map(|v| v.sqrt()).collect());
        let rg = self.requires_grad();
        self.node(data, self.shape.clone(), Op::Sqrt { x: self.id }, rg)
    }

    /// Elementwise x·sigmoid(x).
    pub fn silu(&self) -> Tensor {
        let data = self
            .tape
            .with_node(self.id, |x| x.data.iter().map(|&v| v * sigmoid(v)).collect());
        let rg = self.requires_grad();
        self.node(data, self.shape.clone(), Op::Silu { x: self.id }, rg)
    }

    /// Mean-0 / variance-1 normalization over the last axis, then affine.
    pub fn layernorm(&self, gain: &Tensor, bias: &Tensor, eps: f64) -> Result<Tensor> {
        let d = *self.shape.last().expect("layernorm on empty shape");
        if d < 2 {
            return Err(TensorError::Dimension("layernorm needs last axis >= 2".into()));
        }
        if gain.shape() != [d] || bias.shape() != [d] {
            return Err(TensorError::Dimension(format!(
                "layernorm gain/bias must have shape [{d}]"
            )));
        }
        if eps <= 0.0 {
            return Err(TensorError::Contract("layernorm eps must be positive".into()));
        }
        let data = self.tape.with_node(self.id, |x| {
            self.tape.with_node(gain.id, |g| {
                self.tape.with_node(bias.id, |b| {
                    let mut out = vec![0.0; x.data.len()];
                    for (row, orow) in x.data.chunks_exact(d).zip(out.chunks_exact_mut(d)) {
                        let mean = row.iter().sum::<f64>() / d as f64;
                        let var =
                            row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
                        let inv_std = 1.0 / (var + eps).sqrt();
                        for j in 0..d {
                            orow[j] = (row[j] - mean) * inv_std * g.data[j] + b.data[j];
                        }
                    }
                    out
                })
            })
        });
        let rg = self.requires_grad() || gain.requires_grad() || bias.requires_grad();
        Ok(self.node(
            data,
            self.shape.clone(),
            Op::LayerNorm { x: self.id, gain: gain.id, bias: bias.id, eps },
            rg,
        ))
    }

    /// Softmax over the last axis.
    pub fn softmax(&self) -> Tensor {
        let d = *self.shape.last().expect("softmax on empty shape");
        let data = self.tape.with_node(self.id, |x| {
            let mut out = vec![0.0; x.data.len()];
            for (row, orow) in x.data.chunks_exact(d).zip(out.chunks_exact_mut(d)) {
                softmax_row(row, orow);
            }
            out
        });
        let rg = self.requires_grad();
        self.node(data, self.shape.clone(), Op::Softmax { x: self.id }, rg)
    }

    /// Replace entries strictly above the diagonal with a large negative
    /// constant (pre-softmax causal mask).
    pub fn causal_mask(&self) -> Result<Tensor> {
        if self.rank() != 2 || self.shape[0] != self.shape[1] {
            return Err(TensorError::Dimension("causal mask requires a square matrix".into()));
        }
        let t = self.shape[0];
        let data = self.tape.with_node(self.id, |x| {
            let mut out = x.data.clone();
            for i in 0..t {
                for v in &mut out[i * t + i + 1..(i + 1) * t] {
                    *v = MASK_NEG;
                }
            }
            out
        });
        let rg = self.requires_grad();
        Ok(self.node(data, self.shape.clone(), Op::CausalMask { x: self.id }, rg))
    }

    /// Mean token-level cross entropy of `[t×v]` logits against target ids.
    pub fn cross_entropy_mean(&self, targets: &[usize]) -> Result<Tensor> {
        let (t, v) = self.rows_cols();
        if self.rank() != 2 {
            return Err(TensorError::Dimension("cross entropy expects [tokens × vocab]".into()));
        }
        if targets.len() != t {
            return Err(TensorError::Dimension(format!(
                "{} targets for {} logit rows",
                targets.len(),
                t
            )));
        }
        if let Some(&bad) = targets.iter().find(|&&id| id >= v) {
            return Err(TensorError::Contract(format!("target id {bad} >= vocab {v}")));
        }
        let loss = self.tape.with_node(self.id, |x| {
            let mut total = 0.0;
            for (row, &tgt) in x.data.chunks_exact(v).zip(targets) {
                total += log_sum_exp(row) - row[tgt];
            }
            total / t as f64
        });
        let rg = self.requires_grad();
        Ok(self.node(
            vec![loss],
            vec![1],
            Op::CrossEntropyMean { logits: self.id, targets: targets.to_vec() },
            rg,
        ))
    }

    pub fn sum(&self) -> Tensor {
        let s = self.tape.with_node(self.id, |x| x.data.iter().sum());
        let rg = self.requires_grad();
        self.node(vec![s], vec![1], Op::Sum { x: self.id }, rg)
    }

    pub fn mean(&self) -> Tensor {
        let n = self.len() as f64;
        let s = self.tape.with_node(self.id, |x| x.data.iter().sum::<f64>() / n);
        let rg = self.requires_grad();
        self.node(vec![s], vec![1], Op::Mean { x: self.id }, rg)
    }

    /// Row lookup: self is a `[vocab × d]` table, result is `[ids.len() × d]`.
    pub fn embedding(&self, ids: &[usize]) -> Result<Tensor> {
        let (vocab, d) = self.rows_cols();
        if self.rank() != 2 {
            return Err(TensorError::Dimension("embedding table must be rank 2".into()));
        }
        if let Some(&bad) = ids.iter().find(|&&id| id >= vocab) {
            return Err(TensorError::Contract(format!("token id {bad} >= vocab {vocab}")));
        }
        let data = self.tape.with_node(self.id, |x| {
            let mut out = Vec::with_capacity(ids.len() * d);
            for &id in ids {
                out.extend_from_slice(&x.data[id * d..(id + 1) * d]);
            }
            out
        });
        let rg = self.requires_grad();
        Ok(self.node(data, vec![ids.len(), d], Op::Embedding { table: self.id, ids: ids.to_vec() }, rg))
    }

    /// Flat inner product of two equal-length tensors (any shape).
    pub fn dot(&self, other: &Tensor) -> Result<Tensor> {
        if self.len() != other.len() {
            return Err(TensorError::Dimension(format!(
                "dot lengths differ: {} vs {}",
                self.len(),
                other.len()
            )));
        }
        let s = self.binary_zip(other, |a, b| a * b).iter().sum();
        let rg = self.requires_grad() || other.requires_grad();
        Ok(self.node(vec![s], vec![1], Op::Dot { a: self.id, b: other.id }, rg))
    }

    /// Arbitrary element gather by flat source index.
    pub fn gather(&self, src: &[usize], shape: &[usize]) -> Result<Tensor> {
        if shape.iter().product::<usize>() != src.len() {
            return Err(TensorError::Dimension("gather shape/index length mismatch".into()));
        }
        let n = self.len();
        if let Some(&bad) = src.iter().find(|&&i| i >= n) {
            return Err(TensorError::Contract(format!("gather index {bad} out of range {n}")));
        }
        let data = self
            .tape
            .with_node(self.id, |x| src.iter().map(|&i| x.data[i]).collect());
        let rg = self.requires_grad();
        Ok(self.node(data, shape.to_vec(), Op::Gather { x: self.id, src: src.to_vec() }, rg))
    }

    /// Select rows of a `[r×c]` matrix (repeats allowed).
    pub fn gather_rows(&self, rows: &[usize]) -> Result<Tensor> {
        let (r, c) = self.rows_cols();
        if let Some(&bad) = rows.iter().find(|&&i| i >= r) {
            return Err(TensorError::Contract(format!("row index {bad} out of range {r}")));
        }
        let data = self.tape.with_node(self.id, |x| {
            let mut out = Vec::with_capacity(rows.len() * c);
            for &i in rows {
                out.extend_from_slice(&x.data[i * c..(i + 1) * c]);
            }
            out
        });
        let rg = self.requires_grad();
        Ok(self.node(
            data,
            vec![rows.len(), c],
            Op::GatherRows { x: self.id, rows: rows.to_vec() },
            rg,
        ))
    }

    /// Scatter rows of self into a zero `[total × c]` matrix, adding on
    /// collision.
    pub fn scatter_add_rows(&self, rows: &[usize], total: usize) -> Result<Tensor> {
        let (r, c) = self.rows_cols();
        if rows.len() != r {
            return Err(TensorError::Dimension("one destination per source row required".into()));
        }
        if let Some(&bad) = rows.iter().find(|&&i| i >= total) {
            return Err(TensorError::Contract(format!("destination row {bad} >= {total}")));
        }
        let data = self.tape.with_node(self.id, |x| {
            let mut out = vec![0.0; total * c];
            for (src_row, &dst) in x.data.chunks_exact(c).zip(rows) {
                for (o, &v) in out[dst * c..(dst + 1) * c].iter_mut().zip(src_row) {
                    *o += v;
                }
            }
            out
        });
        let rg = self.requires_grad();
        Ok(self.node(
            data,
            vec![total, c],
            Op::ScatterAddRows { x: self.id, rows: rows.to_vec() },
            rg,
        ))
    }

    /// Contiguous column slice of a `[r×c]` matrix.
    pub fn slice_cols(&self, start: usize, len: usize) -> Result<Tensor> {
        let (r, c) = self.rows_cols();
        if self.rank() != 2 || start + len > c {
            return Err(TensorError::Dimension(format!(
                "column slice {start}..{} out of range for width {c}",
                start + len
            )));
        }
        let data = self.tape.with_node(self.id, |x| {
            let mut out = Vec::with_capacity(r * len);
            for row in x.data.chunks_exact(c) {
                out.extend_from_slice(&row[start..start + len]);
            }
            out
        });
        let rg = self.requires_grad();
        Ok(self.node(data, vec![r, len], Op::SliceCols { x: self.id, start }, rg))
    }
}

/// Column-wise concatenation of matrices with equal row counts.
pub fn concat_cols(tape: &Tape, parts: &[Tensor]) -> Result<Tensor> {
    if parts.is_empty() {
        return Err(TensorError::Contract("concat of zero tensors".into()));
    }
    let r = parts[0].shape()[0];
    let mut widths = Vec::with_capacity(parts.len());
    for p in parts {
        if p.rank() != 2 || p.shape()[0] != r {
            return Err(TensorError::Dimension("concat parts must share row count".into()));
        }
        widths.push(p.shape()[1]);
    }
    let total: usize = widths.iter().sum();
    let mut data = vec![0.0; r * total];
    let mut offset = 0;
    for (p, &w) in parts.iter().zip(&widths) {
        p.tape().with_node(p.id(), |n| {
            for (i, row) in n.data.chunks_exact(w).enumerate() {
                data[i * total + offset..i * total + offset + w].copy_from_slice(row);
            }
        });
        offset += w;
    }
    let rg = parts.iter().any(|p| p.requires_grad());
    Ok(tape.push(Node {
        shape: vec![r, total],
        data,
        grad: None,
        requires_grad: rg,
        op: if rg {
            Some(Op::ConcatCols { parts: parts.iter().map(|p| p.id()).collect() })
        } else {
            None
        },
    }))
}

fn softmax_row(row: &[f64], out: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &v) in out.iter_mut().zip(row) {
        *o = (v - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln()
}

/// Accumulate `g` into the upstream buffer of node `id` if it participates
/// in differentiation.
fn accum(
    inner: &super::TapeInner,
    up: &mut [Option<Vec<f64>>],
    id: usize,
    add: impl FnOnce(&mut [f64]),
) {
    if !inner.nodes[id].requires_grad {
        return;
    }
    let buf = up[id].get_or_insert_with(|| vec![0.0; inner.nodes[id].data.len()]);
    add(buf);
}

pub(crate) fn backward_step(
    inner: &mut super::TapeInner,
    up: &mut [Option<Vec<f64>>],
    out_id: usize,
    op: &Op,
    g: &[f64],
) {
    let inner = &*inner;
    let data = |id: usize| -> &[f64] { &inner.nodes[id].data };
    let shape = |id: usize| -> &[usize] { &inner.nodes[id].shape };
    match *op {
        Op::Matmul { a, b } => {
            let (m, k) = mat_dims(shape(a));
            let n = shape(b).get(1).copied().unwrap_or(1);
            accum(inner, up, a, |buf| matmul_nt(g, data(b), buf, m, n, k));
            accum(inner, up, b, |buf| matmul_tn(data(a), g, buf, m, k, n));
        }
        Op::Transpose { x } => {
            let (r, c) = mat_dims(shape(x));
            accum(inner, up, x, |buf| {
                for i in 0..r {
                    for j in 0..c {
                        buf[i * c + j] += g[j * r + i];
                    }
                }
            });
        }
        Op::Add { a, b } => {
            accum(inner, up, a, |buf| add_into(buf, g));
            accum(inner, up, b, |buf| add_into(buf, g));
        }
        Op::Mul { a, b } => {
            accum(inner, up, a, |buf| {
                for ((o, &gv), &bv) in buf.iter_mut().zip(g).zip(data(b)) {
                    *o += gv * bv;
                }
            });
            accum(inner, up, b, |buf| {
                for ((o, &gv), &av) in buf.iter_mut().zip(g).zip(data(a)) {
                    *o += gv * av;
                }
            });
        }
        Op::AddBias { x, bias } => {
            accum(inner, up, x, |buf| add_into(buf, g));
            let c = shape(bias)[0];
            accum(inner, up, bias, |buf| {
                for grow in g.chunks_exact(c) {
                    add_into(buf, grow);
                }
            });
        }
        Op::ScaleRows { x, s } => {
            let (_, c) = mat_dims(shape(x));
            accum(inner, up, x, |buf| {
                for ((orow, grow), &f) in
                    buf.chunks_exact_mut(c).zip(g.chunks_exact(c)).zip(data(s))
                {
                    for (o, &gv) in orow.iter_mut().zip(grow) {
                        *o += gv * f;
                    }
                }
            });
            accum(inner, up, s, |buf| {
                for ((o, grow), xrow) in
                    buf.iter_mut().zip(g.chunks_exact(c)).zip(data(x).chunks_exact(c))
                {
                    *o += grow.iter().zip(xrow).map(|(&gv, &xv)| gv * xv).sum::<f64>();
                }
            });
        }
        Op::ScaleConst { x, c } => {
            accum(inner, up, x, |buf| {
                for (o, &gv) in buf.iter_mut().zip(g) {
                    *o += c * gv;
                }
            });
        }
        Op::Scale { x, s } => {
            let sv = data(s)[0];
            accum(inner, up, x, |buf| {
                for (o, &gv) in buf.iter_mut().zip(g) {
                    *o += sv * gv;
                }
            });
            accum(inner, up, s, |buf| {
                buf[0] += g.iter().zip(data(x)).map(|(&gv, &xv)| gv * xv).sum::<f64>();
            });
        }
        Op::Recip { x } => {
            let out = data(out_id);
            accum(inner, up, x, |buf| {
                for ((o, &gv), &y) in buf.iter_mut().zip(g).zip(out) {
                    *o -= gv * y * y;
                }
            });
        }
        Op::Sqrt { x } => {
            let out = data(out_id);
            accum(inner, up, x, |buf| {
                for ((o, &gv), &y) in buf.iter_mut().zip(g).zip(out) {
                    *o += gv * 0.5 / y;
                }
            });
        }
        Op::Silu { x } => {
            accum(inner, up, x, |buf| {
                for ((o, &gv), &xv) in buf.iter_mut().zip(g).zip(data(x)) {
                    let s = sigmoid(xv);
                    *o += gv * s * (1.0 + xv * (1.0 - s));
                }
            });
        }
        Op::LayerNorm { x, gain, bias, eps } => {
            let d = *shape(x).last().unwrap();
            let xd = data(x);
            let gd = data(gain);
            // Per-row stats are recomputed; the row count is small and the
            // forward is deterministic.
            accum(inner, up, gain, |buf| {
                for (row, grow) in xd.chunks_exact(d).zip(g.chunks_exact(d)) {
                    let (mean, inv_std) = row_stats(row, eps);
                    for j in 0..d {
                        buf[j] += grow[j] * (row[j] - mean) * inv_std;
                    }
                }
            });
            accum(inner, up, bias, |buf| {
                for grow in g.chunks_exact(d) {
                    add_into(buf, grow);
                }
            });
            accum(inner, up, x, |buf| {
                for ((row, grow), orow) in
                    xd.chunks_exact(d).zip(g.chunks_exact(d)).zip(buf.chunks_exact_mut(d))
                {
                    let (mean, inv_std) = row_stats(row, eps);
                    let mut sum_gg = 0.0;
                    let mut sum_ggx = 0.0;
                    for j in 0..d {
                        let xh = (row[j] - mean) * inv_std;
                        let gg = grow[j] * gd[j];
                        sum_gg += gg;
                        sum_ggx += gg * xh;
                    }
                    let n = d as f64;
                    for j in 0..d {
                        let xh = (row[j] - mean) * inv_std;
                        let gg = grow[j] * gd[j];
                        orow[j] += inv_std * (gg - sum_gg / n - xh * sum_ggx / n);
                    }
                }
            });
        }
        Op::Softmax { x } => {
            let d = *shape(x).last().unwrap();
            let out = data(out_id);
            accum(inner, up, x, |buf| {
                for ((yrow, grow), orow) in
                    out.chunks_exact(d).zip(g.chunks_exact(d)).zip(buf.chunks_exact_mut(d))
                {
                    let dot: f64 = yrow.iter().zip(grow).map(|(&y, &gv)| y * gv).sum();
                    for j in 0..d {
                        orow[j] += yrow[j] * (grow[j] - dot);
                    }
                }
            });
        }
        Op::CausalMask { x } => {
            let t = shape(x)[0];
            accum(inner, up, x, |buf| {
                for i in 0..t {
                    for j in 0..=i {
                        buf[i * t + j] += g[i * t + j];
                    }
                }
            });
        }
        Op::CrossEntropyMean { logits, ref targets } => {
            let (t, v) = mat_dims(shape(logits));
            let scale = g[0] / t as f64;
            let xd = data(logits);
            accum(inner, up, logits, |buf| {
                let mut probs = vec![0.0; v];
                for ((row, orow), &tgt) in
                    xd.chunks_exact(v).zip(buf.chunks_exact_mut(v)).zip(targets)
                {
                    softmax_row(row, &mut probs);
                    for j in 0..v {
                        orow[j] += scale * (probs[j] - if j == tgt { 1.0 } else { 0.0 });
                    }
                }
            });
        }
        Op::Sum { x } => {
            accum(inner, up, x, |buf| {
                for o in buf {
                    *o += g[0];
                }
            });
        }
        Op::Mean { x } => {
            let n = inner.nodes[x].data.len() as f64;
            accum(inner, up, x, |buf| {
                for o in buf {
                    *o += g[0] / n;
                }
            });
        }
        Op::Embedding { table, ref ids } => {
            let d = shape(table)[1];
            accum(inner, up, table, |buf| {
                for (grow, &id) in g.chunks_exact(d).zip(ids) {
                    add_into(&mut buf[id * d..(id + 1) * d], grow);
                }
            });
        }
        Op::Dot { a, b } => {
            accum(inner, up, a, |buf| {
                for (o, &bv) in buf.iter_mut().zip(data(b)) {
                    *o += g[0] * bv;
                }
            });
            accum(inner, up, b, |buf| {
                for (o, &av) in buf.iter_mut().zip(data(a)) {
                    *o += g[0] * av;
                }
            });
        }
        Op::Gather { x, ref src } => {
            accum(inner, up, x, |buf| {
                for (&i, &gv) in src.iter().zip(g) {
                    buf[i] += gv;
                }
            });
        }
        Op::GatherRows { x, ref rows } => {
            let (_, c) = mat_dims(shape(x));
            accum(inner, up, x, |buf| {
                for (grow, &i) in g.chunks_exact(c).zip(rows) {
                    add_into(&mut buf[i * c..(i + 1) * c], grow);
                }
            });
        }
        Op::ScatterAddRows { x, ref rows } => {
            let (_, c) = mat_dims(shape(x));
            accum(inner, up, x, |buf| {
                for (orow, &i) in buf.chunks_exact_mut(c).zip(rows) {
                    add_into(orow, &g[i * c..(i + 1) * c]);
                }
            });
        }
        Op::SliceCols { x, start } => {
            let (_, c) = mat_dims(shape(x));
            let w = shape(out_id)[1];
            accum(inner, up, x, |buf| {
                for (orow, grow) in buf.chunks_exact_mut(c).zip(g.chunks_exact(w)) {
                    add_into(&mut orow[start..start + w], grow);
                }
            });
        }
        Op::ConcatCols { ref parts } => {
            let total = shape(out_id)[1];
            let mut offset = 0;
            for &p in parts {
                let w = shape(p)[1];
                accum(inner, up, p, |buf| {
                    for (orow, grow) in buf.chunks_exact_mut(w).zip(g.chunks_exact(total)) {
                        add_into(orow, &grow[offset..offset + w]);
                    }
                });
                offset += w;
            }
        }
    }
}

fn mat_dims(shape: &[usize]) -> (usize, usize) {
    match shape.len() {
        1 => (shape[0], 1),
        2 => (shape[0], shape[1]),
        _ => unreachable!("rank > 2 in backward"),
    }
}

fn row_stats(row: &[f64], eps: f64) -> (f64, f64) {
    let d = row.len() as f64;
    let mean = row.iter().sum::<f64>() / d;
    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
    (mean, 1.0 / (var + eps).sqrt())
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (o, &v) in dst.iter_mut().zip(src) {
        *o += v;
    }
}
