//! Reverse-mode differentiation tape.
//!
//! Every op appends a node holding its forward value and whatever it needs for
//! the local gradient. `backward` consumes the tape, so each forward build is
//! differentiated at most once.

use rand::Rng;

use super::kernels::{gemm_nn, gemm_nt, gemm_tn};
use super::{Tensor, TensorError};
use crate::Scalar;

/// Target value skipped by [`Tape::cross_entropy`].
pub const IGNORE_INDEX: i64 = -100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    BatchMatMul {
        a: Var,
        b: Var,
        transpose_b: bool,
    },
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Sum(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Gelu(Var),
    Dropout {
        x: Var,
        mask: Vec<T>,
    },
    Embedding {
        table: Var,
        ids: Vec<u32>,
    },
    SplitHeads {
        x: Var,
        heads: usize,
        offset: usize,
    },
    MergeHeads {
        x: Var,
        heads: usize,
    },
    SelectRows {
        x: Var,
        rows: Vec<usize>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<i64>,
        weights: Vec<T>,
        probs: Vec<T>,
        denom: T,
    },
    Mse {
        pred: Var,
        diff: Vec<T>,
        mask: Vec<bool>,
        count: T,
    },
    Reshape(Var),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    check_finite: bool,
    fault: Option<&'static str>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn mismatch(op: &'static str, a: &[usize], b: &[usize]) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        left: a.to_vec(),
        right: b.to_vec(),
    }
}

impl<T: Scalar> Tape<T> {
    /// New tape; the non-finite tripwire is on in debug builds.
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            check_finite: cfg!(debug_assertions),
            fault: None,
        }
    }

    pub fn with_finite_check(mut self, on: bool) -> Self {
        self.check_finite = on;
        self
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// First op that produced a non-finite value, when the tripwire is on.
    pub fn fault(&self) -> Option<&'static str> {
        self.fault
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, name: &'static str, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        if self.check_finite && self.fault.is_none() && !value.is_finite() {
            self.fault = Some(name);
        }
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Records a copy of `t`; it is differentiated iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: &Tensor<T>) -> Var {
        let needs = t.requires_grad();
        self.push("leaf", t.clone(), Op::Leaf, needs)
    }

    /// Records a tensor that never receives a gradient.
    pub fn constant(&mut self, mut t: Tensor<T>) -> Var {
        t.set_requires_grad(false);
        self.push("constant", t, Op::Leaf, false)
    }

    /// `[.., k] x [k, n] -> [.., n]`
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sb.len() != 2 || sa.is_empty() || *sa.last().unwrap() != sb[0] {
            return Err(mismatch("matmul", &sa, &sb));
        }
        let k = sb[0];
        let n = sb[1];
        let m = self.value(a).len() / k.max(1);
        let mut out = vec![T::zero(); m * n];
        gemm_nn(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let mut shape = sa.clone();
        *shape.last_mut().unwrap() = n;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push("matmul", Tensor::new(&shape, out)?, Op::MatMul(a, b), needs))
    }

    /// Batched `[B, m, k] x [B, k, n]`, or `[B, m, k] x [B, n, k]^T` when
    /// `transpose_b`.
    pub fn bmm(&mut self, a: Var, b: Var, transpose_b: bool) -> Result<Var, TensorError> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] {
            return Err(mismatch("bmm", &sa, &sb));
        }
        let (bt, m, k) = (sa[0], sa[1], sa[2]);
        let (kb, n) = if transpose_b { (sb[2], sb[1]) } else { (sb[1], sb[2]) };
        if kb != k {
            return Err(mismatch("bmm", &sa, &sb));
        }
        let mut out = vec![T::zero(); bt * m * n];
        {
            let (da, db) = (self.value(a).data(), self.value(b).data());
            for i in 0..bt {
                let ai = &da[i * m * k..(i + 1) * m * k];
                let bi = &db[i * k * n..(i + 1) * k * n];
                let ci = &mut out[i * m * n..(i + 1) * m * n];
                if transpose_b {
                    gemm_nt(ai, bi, ci, m, k, n);
                } else {
                    gemm_nn(ai, bi, ci, m, k, n);
                }
            }
        }
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(
            "bmm",
            Tensor::new(&[bt, m, n], out)?,
            Op::BatchMatMul { a, b, transpose_b },
            needs,
        ))
    }

    /// Elementwise sum; `b` may match a trailing suffix of `a`'s shape and is
    /// then broadcast over the leading dimensions.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != sb[..] {
            return Err(mismatch("add", &sa, &sb));
        }
        let bd = self.value(b).data();
        let nb = bd.len();
        let out: Vec<T> = self
            .value(a)
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x + bd[i % nb])
            .collect();
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push("add", Tensor::new(&sa, out)?, Op::Add(a, b), needs))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa != sb {
            return Err(mismatch("mul", &sa, &sb));
        }
        let out: Vec<T> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x * y)
            .collect();
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push("mul", Tensor::new(&sa, out)?, Op::Mul(a, b), needs))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Result<Var, TensorError> {
        let t = self.value(a);
        let out = Tensor::new(t.shape(), t.data().iter().map(|&x| x * c).collect())?;
        let needs = self.needs(a);
        Ok(self.push("scale", out, Op::Scale(a, c), needs))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var, TensorError> {
        let s: T = self.value(a).data().iter().copied().sum();
        let needs = self.needs(a);
        Ok(self.push("sum", Tensor::scalar(s), Op::Sum(a), needs))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, TensorError> {
        let out = self.value(a).clone().reshape(shape)?;
        let needs = self.needs(a);
        Ok(self.push("reshape", out, Op::Reshape(a), needs))
    }

    /// Row-wise softmax over the last dimension, max-subtracted.
    pub fn softmax(&mut self, a: Var) -> Result<Var, TensorError> {
        let t = self.value(a);
        let d = t.last_dim();
        let mut out = t.data().to_vec();
        for row in out.chunks_mut(d) {
            softmax_in_place(row);
        }
        let out = Tensor::new(t.shape(), out)?;
        let needs = self.needs(a);
        Ok(self.push("softmax", out, Op::Softmax(a), needs))
    }

    /// Layer normalization over the last dimension with biased variance.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var, TensorError> {
        let sx = self.shape(x).to_vec();
        let d = *sx.last().unwrap_or(&0);
        for p in [gamma, beta] {
            if self.shape(p) != [d] {
                return Err(mismatch("layer_norm", &sx, self.shape(p)));
            }
        }
        let eps = T::of(eps);
        let dt = T::of(d as f64);
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let xs = self.value(x).data();
        let rows = xs.len() / d.max(1);
        let mut xhat = vec![T::zero(); xs.len()];
        let mut rstd = vec![T::zero(); rows];
        let mut out = vec![T::zero(); xs.len()];
        for r in 0..rows {
            let row = &xs[r * d..(r + 1) * d];
            let mean = row.iter().copied().sum::<T>() / dt;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dt;
            let rs = T::one() / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..d {
                let h = (row[j] - mean) * rs;
                xhat[r * d + j] = h;
                out[r * d + j] = h * g[j] + b[j];
            }
        }
        let needs = self.needs(x) || self.needs(gamma) || self.needs(beta);
        Ok(self.push(
            "layer_norm",
            Tensor::new(&sx, out)?,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            needs,
        ))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Result<Var, TensorError> {
        let t = self.value(a);
        let out = Tensor::new(t.shape(), t.data().iter().map(|&x| gelu(x)).collect())?;
        let needs = self.needs(a);
        Ok(self.push("gelu", out, Op::Gelu(a), needs))
    }

    /// Inverted dropout: kept units are scaled by `1 / (1 - p)`. Identity when
    /// `train` is false or `p == 0`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, a: Var, p: f64, train: bool, rng: &mut R) -> Result<Var, TensorError> {
        if !(0.0..1.0).contains(&p) {
            return Err(TensorError::InvalidProbability(p));
        }
        if !train || p == 0.0 {
            return Ok(a);
        }
        let keep = T::of(1.0 / (1.0 - p));
        let t = self.value(a);
        let mask: Vec<T> = (0..t.len())
            .map(|_| if rng.random::<f64>() < p { T::zero() } else { keep })
            .collect();
        let out = Tensor::new(
            t.shape(),
            t.data().iter().zip(&mask).map(|(&x, &m)| x * m).collect(),
        )?;
        let needs = self.needs(a);
        Ok(self.push("dropout", out, Op::Dropout { x: a, mask }, needs))
    }

    /// Gathers rows of a `[V, d]` table; output shape is `shape + [d]`.
    pub fn embedding(&mut self, table: Var, ids: &[u32], shape: &[usize]) -> Result<Var, TensorError> {
        let st = self.shape(table).to_vec();
        if st.len() != 2 || shape.iter().product::<usize>() != ids.len() {
            return Err(mismatch("embedding", &st, shape));
        }
        let (v, d) = (st[0], st[1]);
        let tab = self.value(table).data();
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            let id = id as usize;
            if id >= v {
                return Err(TensorError::IndexOutOfRange {
                    op: "embedding",
                    index: id,
                    bound: v,
                });
            }
            out.extend_from_slice(&tab[id * d..(id + 1) * d]);
        }
        let mut out_shape = shape.to_vec();
        out_shape.push(d);
        let needs = self.needs(table);
        Ok(self.push(
            "embedding",
            Tensor::new(&out_shape, out)?,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            needs,
        ))
    }

    /// `[B, L, C] -> [B*heads, L, head_dim]` reading columns
    /// `offset .. offset + heads*head_dim`.
    pub fn split_heads(&mut self, x: Var, heads: usize, head_dim: usize, offset: usize) -> Result<Var, TensorError> {
        let sx = self.shape(x).to_vec();
        if sx.len() != 3 || offset + heads * head_dim > sx[2] {
            return Err(mismatch("split_heads", &sx, &[heads, head_dim, offset]));
        }
        let (b, l, c) = (sx[0], sx[1], sx[2]);
        let src = self.value(x).data();
        let mut out = vec![T::zero(); b * heads * l * head_dim];
        for bi in 0..b {
            for li in 0..l {
                let row = &src[(bi * l + li) * c..(bi * l + li + 1) * c];
                for h in 0..heads {
                    let dst = ((bi * heads + h) * l + li) * head_dim;
                    let s = offset + h * head_dim;
                    out[dst..dst + head_dim].copy_from_slice(&row[s..s + head_dim]);
                }
            }
        }
        let needs = self.needs(x);
        Ok(self.push(
            "split_heads",
            Tensor::new(&[b * heads, l, head_dim], out)?,
            Op::SplitHeads { x, heads, offset },
            needs,
        ))
    }

    /// `[B*heads, L, head_dim] -> [B, L, heads*head_dim]`
    pub fn merge_heads(&mut self, x: Var, heads: usize) -> Result<Var, TensorError> {
        let sx = self.shape(x).to_vec();
        if sx.len() != 3 || heads == 0 || sx[0] % heads != 0 {
            return Err(mismatch("merge_heads", &sx, &[heads]));
        }
        let (bh, l, hd) = (sx[0], sx[1], sx[2]);
        let b = bh / heads;
        let c = heads * hd;
        let src = self.value(x).data();
        let mut out = vec![T::zero(); b * l * c];
        for bi in 0..b {
            for h in 0..heads {
                for li in 0..l {
                    let s = ((bi * heads + h) * l + li) * hd;
                    let d = (bi * l + li) * c + h * hd;
                    out[d..d + hd].copy_from_slice(&src[s..s + hd]);
                }
            }
        }
        let needs = self.needs(x);
        Ok(self.push(
            "merge_heads",
            Tensor::new(&[b, l, c], out)?,
            Op::MergeHeads { x, heads },
            needs,
        ))
    }

    /// Picks rows of `x` viewed as `[R, last_dim]`; output `[rows.len(), last_dim]`.
    pub fn select_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var, TensorError> {
        let t = self.value(x);
        let d = t.last_dim();
        let r = t.len() / d.max(1);
        let mut out = Vec::with_capacity(rows.len() * d);
        for &i in rows {
            if i >= r {
                return Err(TensorError::IndexOutOfRange {
                    op: "select_rows",
                    index: i,
                    bound: r,
                });
            }
            out.extend_from_slice(&t.data()[i * d..(i + 1) * d]);
        }
        let needs = self.needs(x);
        Ok(self.push(
            "select_rows",
            Tensor::new(&[rows.len(), d], out)?,
            Op::SelectRows {
                x,
                rows: rows.to_vec(),
            },
            needs,
        ))
    }

    /// Mean cross-entropy of `[N, C]` logits. Targets equal to
    /// [`IGNORE_INDEX`] are skipped. With class weights the mean is weighted:
    /// `sum w[y] * nll / sum w[y]`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[i64], class_weights: Option<&[T]>) -> Result<Var, TensorError> {
        let sl = self.shape(logits).to_vec();
        if sl.len() != 2 || sl[0] != targets.len() {
            return Err(mismatch("cross_entropy", &sl, &[targets.len()]));
        }
        let c = sl[1];
        if let Some(w) = class_weights {
            if w.len() != c {
                return Err(mismatch("cross_entropy", &sl, &[w.len()]));
            }
        }
        let z = self.value(logits).data();
        let mut probs = vec![T::zero(); z.len()];
        let mut weights = vec![T::zero(); targets.len()];
        let mut total = T::zero();
        let mut denom = T::zero();
        for (i, &y) in targets.iter().enumerate() {
            if y == IGNORE_INDEX {
                continue;
            }
            if y < 0 || y as usize >= c {
                return Err(TensorError::IndexOutOfRange {
                    op: "cross_entropy",
                    index: y.max(0) as usize,
                    bound: c,
                });
            }
            let row = &z[i * c..(i + 1) * c];
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let sum: T = row.iter().map(|&v| (v - max).exp()).sum();
            let lse = max + sum.ln();
            for j in 0..c {
                probs[i * c + j] = (row[j] - lse).exp();
            }
            let w = class_weights.map_or(T::one(), |w| w[y as usize]);
            weights[i] = w;
            total += w * (lse - row[y as usize]);
            denom += w;
        }
        if denom == T::zero() {
            return Err(TensorError::NoTargets("cross_entropy"));
        }
        let needs = self.needs(logits);
        Ok(self.push(
            "cross_entropy",
            Tensor::scalar(total / denom),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                weights,
                probs,
                denom,
            },
            needs,
        ))
    }

    /// Mean squared error over `[N, D]` predictions, averaging only the task
    /// columns where `task_mask` is true.
    pub fn mse(&mut self, pred: Var, target: &Tensor<T>, task_mask: &[bool]) -> Result<Var, TensorError> {
        let sp = self.shape(pred).to_vec();
        if sp != target.shape() || task_mask.len() != *sp.last().unwrap_or(&0) {
            return Err(mismatch("mse", &sp, target.shape()));
        }
        let d = task_mask.len();
        let active = task_mask.iter().filter(|&&m| m).count();
        let n = target.len() / d.max(1);
        if active == 0 || n == 0 {
            return Err(TensorError::NoTargets("mse"));
        }
        let count = T::of((active * n) as f64);
        let mut diff = vec![T::zero(); target.len()];
        let mut total = T::zero();
        for (i, (&p, &t)) in self.value(pred).data().iter().zip(target.data()).enumerate() {
            if task_mask[i % d] {
                let e = p - t;
                diff[i] = e;
                total += e * e;
            }
        }
        let needs = self.needs(pred);
        Ok(self.push(
            "mse",
            Tensor::scalar(total / count),
            Op::Mse {
                pred,
                diff,
                mask: task_mask.to_vec(),
                count,
            },
            needs,
        ))
    }

    /// Differentiates the scalar `loss` with respect to every leaf that
    /// requires grad. Gradients of tensors used several times are summed.
    pub fn backward(self, loss: Var) -> Result<Gradients<T>, TensorError> {
        if let Some(op) = self.fault {
            return Err(TensorError::NonFinite { op });
        }
        let loss_shape = self.shape(loss).to_vec();
        if self.value(loss).len() != 1 {
            return Err(TensorError::NotScalar(loss_shape));
        }
        if !self.needs(loss) {
            return Err(TensorError::Detached);
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<T>>> = (0..n).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        let mut leaves: Vec<Option<Tensor<T>>> = (0..n).map(|_| None).collect();

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if !node.needs_grad {
                continue;
            }
            let nodes = &self.nodes;
            let mut acc = |v: Var, f: &mut dyn FnMut(&mut [T])| {
                if !nodes[v.0].needs_grad {
                    return;
                }
                let buf = grads[v.0].get_or_insert_with(|| vec![T::zero(); nodes[v.0].value.len()]);
                f(buf);
            };
            match &node.op {
                Op::Leaf => {
                    leaves[id] = Some(Tensor::new(node.value.shape(), g)?);
                }
                Op::Reshape(a) => acc(*a, &mut |buf| add_into(buf, &g)),
                Op::MatMul(a, b) => {
                    let (va, vb) = (&nodes[a.0].value, &nodes[b.0].value);
                    let (k, nn) = (vb.shape()[0], vb.shape()[1]);
                    let m = va.len() / k.max(1);
                    acc(*a, &mut |buf| gemm_nt(&g, vb.data(), buf, m, nn, k));
                    acc(*b, &mut |buf| gemm_tn(va.data(), &g, buf, k, m, nn));
                }
                Op::BatchMatMul { a, b, transpose_b } => {
                    let (va, vb) = (&nodes[a.0].value, &nodes[b.0].value);
                    let (bt, m, k) = (va.shape()[0], va.shape()[1], va.shape()[2]);
                    let n_out = node.value.shape()[2];
                    let (sa, sb, sc) = (m * k, k * n_out, m * n_out);
                    acc(*a, &mut |buf| {
                        for i in 0..bt {
                            let gi = &g[i * sc..(i + 1) * sc];
                            let bi = &vb.data()[i * sb..(i + 1) * sb];
                            let out = &mut buf[i * sa..(i + 1) * sa];
                            if *transpose_b {
                                gemm_nn(gi, bi, out, m, n_out, k);
                            } else {
                                gemm_nt(gi, bi, out, m, n_out, k);
                            }
                        }
                    });
                    acc(*b, &mut |buf| {
                        for i in 0..bt {
                            let gi = &g[i * sc..(i + 1) * sc];
                            let ai = &va.data()[i * sa..(i + 1) * sa];
                            let out = &mut buf[i * sb..(i + 1) * sb];
                            if *transpose_b {
                                gemm_tn(gi, ai, out, n_out, m, k);
                            } else {
                                gemm_tn(ai, gi, out, k, m, n_out);
                            }
                        }
                    });
                }
                Op::Add(a, b) => {
                    acc(*a, &mut |buf| add_into(buf, &g));
                    acc(*b, &mut |buf| {
                        let nb = buf.len();
                        for (i, &gv) in g.iter().enumerate() {
                            buf[i % nb] += gv;
                        }
                    });
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (nodes[a.0].value.data(), nodes[b.0].value.data());
                    acc(*a, &mut |buf| {
                        for i in 0..buf.len() {
                            buf[i] += g[i] * vb[i];
                        }
                    });
                    acc(*b, &mut |buf| {
                        for i in 0..buf.len() {
                            buf[i] += g[i] * va[i];
                        }
                    });
                }
                Op::Scale(a, c) => acc(*a, &mut |buf| {
                    for (o, &gv) in buf.iter_mut().zip(&g) {
                        *o += gv * *c;
                    }
                }),
                Op::Sum(a) => acc(*a, &mut |buf| {
                    for o in buf.iter_mut() {
                        *o += g[0];
                    }
                }),
                Op::Softmax(a) => {
                    let y = node.value.data();
                    let d = node.value.last_dim();
                    acc(*a, &mut |buf| {
                        for r in 0..y.len() / d {
                            let (yr, gr) = (&y[r * d..(r + 1) * d], &g[r * d..(r + 1) * d]);
                            let dotp: T = yr.iter().zip(gr).map(|(&p, &q)| p * q).sum();
                            for j in 0..d {
                                buf[r * d + j] += yr[j] * (gr[j] - dotp);
                            }
                        }
                    });
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    rstd,
                } => {
                    let d = node.value.last_dim();
                    let rows = xhat.len() / d.max(1);
                    let gam = nodes[gamma.0].value.data();
                    acc(*gamma, &mut |buf| {
                        for r in 0..rows {
                            for j in 0..d {
                                buf[j] += g[r * d + j] * xhat[r * d + j];
                            }
                        }
                    });
                    acc(*beta, &mut |buf| {
                        for r in 0..rows {
                            for j in 0..d {
                                buf[j] += g[r * d + j];
                            }
                        }
                    });
                    let dt = T::of(d as f64);
                    acc(*x, &mut |buf| {
                        for r in 0..rows {
                            let mut mean_dh = T::zero();
                            let mut mean_dhx = T::zero();
                            for j in 0..d {
                                let dh = g[r * d + j] * gam[j];
                                mean_dh += dh;
                                mean_dhx += dh * xhat[r * d + j];
                            }
                            mean_dh /= dt;
                            mean_dhx /= dt;
                            for j in 0..d {
                                let dh = g[r * d + j] * gam[j];
                                buf[r * d + j] += rstd[r] * (dh - mean_dh - xhat[r * d + j] * mean_dhx);
                            }
                        }
                    });
                }
                Op::Gelu(a) => {
                    let xs = nodes[a.0].value.data();
                    acc(*a, &mut |buf| {
                        for i in 0..buf.len() {
                            buf[i] += g[i] * gelu_grad(xs[i]);
                        }
                    });
                }
                Op::Dropout { x, mask } => acc(*x, &mut |buf| {
                    for i in 0..buf.len() {
                        buf[i] += g[i] * mask[i];
                    }
                }),
                Op::Embedding { table, ids } => {
                    let d = nodes[table.0].value.shape()[1];
                    acc(*table, &mut |buf| {
                        for (i, &id) in ids.iter().enumerate() {
                            let row = &mut buf[id as usize * d..(id as usize + 1) * d];
                            add_into(row, &g[i * d..(i + 1) * d]);
                        }
                    });
                }
                Op::SplitHeads { x, heads, offset } => {
                    let sx = nodes[x.0].value.shape();
                    let (b, l, c) = (sx[0], sx[1], sx[2]);
                    let hd = node.value.shape()[2];
                    acc(*x, &mut |buf| {
                        for bi in 0..b {
                            for li in 0..l {
                                for h in 0..*heads {
                                    let s = ((bi * heads + h) * l + li) * hd;
                                    let d = (bi * l + li) * c + offset + h * hd;
                                    add_into(&mut buf[d..d + hd], &g[s..s + hd]);
                                }
                            }
                        }
                    });
                }
                Op::MergeHeads { x, heads } => {
                    let sx = nodes[x.0].value.shape();
                    let (bh, l, hd) = (sx[0], sx[1], sx[2]);
                    let c = heads * hd;
                    acc(*x, &mut |buf| {
                        for bi in 0..bh / heads {
                            for h in 0..*heads {
                                for li in 0..l {
                                    let s = ((bi * heads + h) * l + li) * hd;
                                    let d = (bi * l + li) * c + h * hd;
                                    add_into(&mut buf[s..s + hd], &g[d..d + hd]);
                                }
                            }
                        }
                    });
                }
                Op::SelectRows { x, rows } => {
                    let d = node.value.last_dim();
                    acc(*x, &mut |buf| {
                        for (i, &r) in rows.iter().enumerate() {
                            add_into(&mut buf[r * d..(r + 1) * d], &g[i * d..(i + 1) * d]);
                        }
                    });
                }
                Op::CrossEntropy {
                    logits,
                    targets,
                    weights,
                    probs,
                    denom,
                } => {
                    let c = nodes[logits.0].value.last_dim();
                    acc(*logits, &mut |buf| {
                        for (i, &y) in targets.iter().enumerate() {
                            if y == IGNORE_INDEX {
                                continue;
                            }
                            let s = g[0] * weights[i] / *denom;
                            for j in 0..c {
                                let onehot = if j as i64 == y { T::one() } else { T::zero() };
                                buf[i * c + j] += s * (probs[i * c + j] - onehot);
                            }
                        }
                    });
                }
                Op::Mse {
                    pred,
                    diff,
                    mask,
                    count,
                } => {
                    let d = mask.len();
                    let two = T::of(2.0);
                    acc(*pred, &mut |buf| {
                        for i in 0..buf.len() {
                            if mask[i % d] {
                                buf[i] += g[0] * two * diff[i] / *count;
                            }
                        }
                    });
                }
            }
        }
        Ok(Gradients { grads: leaves })
    }
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

pub(crate) fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

fn gelu_consts<T: Scalar>() -> (T, T) {
    (T::of((2.0 / std::f64::consts::PI).sqrt()), T::of(0.044715))
}

// 0.5 * (1 + tanh(u)) == sigmoid(2u)
fn gelu_gate<T: Scalar>(x: T) -> T {
    let (s, c) = gelu_consts::<T>();
    let u = s * (x + c * x * x * x);
    T::one() / (T::one() + (-(u + u)).exp())
}

fn gelu<T: Scalar>(x: T) -> T {
    x * gelu_gate(x)
}

fn gelu_grad<T: Scalar>(x: T) -> T {
    let (s, c) = gelu_consts::<T>();
    let g = gelu_gate(x);
    let two = T::of(2.0);
    g + two * x * g * (T::one() - g) * s * (T::one() + T::of(3.0) * c * x * x)
}

/// Leaf gradients produced by [`Tape::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of a leaf; `None` if it does not require grad or does not
    /// influence the loss.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}
