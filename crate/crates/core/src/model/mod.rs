//! RoBERTa-style pre-norm encoder with masked-token, multi-task regression
//! and finetune heads.

mod config;

pub use config::ModelConfig;

use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::tensor::{Gradients, Tape, Tensor, TensorError, Var, IGNORE_INDEX};
use crate::tokenizer::{TokenSeq, MAX_SEQ_LEN};
use crate::Scalar;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("batch has no masked positions")]
    SkipBatch,
    #[error("expected {expected} task columns, got {got}")]
    TaskMismatch { expected: usize, got: usize },
    #[error("sequence of length {0} exceeds {MAX_SEQ_LEN}")]
    SequenceTooLong(usize),
    #[error("empty batch")]
    EmptyBatch,
    #[error("no finetune head attached")]
    NoHead,
}

const INIT_STD: f64 = 0.02;
const LN_EPS: f64 = 1e-5;
const MASK_FILL: f64 = -1e9;
const PER_LAYER: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    Regression,
    Binary,
}

impl TaskKind {
    pub fn outputs(self) -> usize {
        match self {
            TaskKind::Regression => 1,
            TaskKind::Binary => 2,
        }
    }
}

/// Parameter names in checkpoint order.
pub fn param_names(cfg: &ModelConfig) -> Vec<String> {
    let mut names = vec!["embeddings.word".to_string(), "embeddings.position".to_string()];
    for l in 0..cfg.num_hidden_layers {
        for suffix in [
            "attn_norm.gamma",
            "attn_norm.beta",
            "attn.qkv.weight",
            "attn.qkv.bias",
            "attn.out.weight",
            "attn.out.bias",
            "ffn_norm.gamma",
            "ffn_norm.beta",
            "ffn.in.weight",
            "ffn.in.bias",
            "ffn.out.weight",
            "ffn.out.bias",
        ] {
            names.push(format!("layer.{l}.{suffix}"));
        }
    }
    for n in [
        "final_norm.gamma",
        "final_norm.beta",
        "mlm_head.weight",
        "mlm_head.bias",
        "mtr_head.weight",
        "mtr_head.bias",
    ] {
        names.push(n.to_string());
    }
    names
}

/// Shapes matching [`param_names`].
pub fn param_shapes(cfg: &ModelConfig) -> Vec<Vec<usize>> {
    let (h, i, v, d) = (cfg.hidden_size, cfg.intermediate_size, cfg.vocab_size, cfg.mtr_task_count);
    let mut shapes = vec![vec![v, h], vec![cfg.max_position, h]];
    for _ in 0..cfg.num_hidden_layers {
        shapes.extend([
            vec![h],
            vec![h],
            vec![h, 3 * h],
            vec![3 * h],
            vec![h, h],
            vec![h],
            vec![h],
            vec![h],
            vec![h, i],
            vec![i],
            vec![i, h],
            vec![h],
        ]);
    }
    shapes.extend([vec![h], vec![h], vec![h, v], vec![v], vec![h, d], vec![d]]);
    shapes
}

fn truncated_normal<T: Scalar, R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<T> {
    (0..n)
        .map(|_| loop {
            let z: f64 = rng.sample(StandardNormal);
            if z.abs() <= 2.0 {
                break T::of(z * INIT_STD);
            }
        })
        .collect()
}

fn init_tensor<T: Scalar, R: Rng + ?Sized>(name: &str, shape: &[usize], rng: &mut R) -> Tensor<T> {
    let n = shape.iter().product();
    let data = if name.ends_with("gamma") {
        vec![T::one(); n]
    } else if name.ends_with("beta") || name.ends_with("bias") {
        vec![T::zero(); n]
    } else {
        truncated_normal(rng, n)
    };
    Tensor::new(shape, data).expect("shape product").with_grad()
}

/// Named, ordered model tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    config: ModelConfig,
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    head: Option<TaskKind>,
}

/// Padded token batch.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderInput {
    pub ids: Vec<u32>,
    pub mask: Vec<u8>,
    pub batch: usize,
    pub len: usize,
}

impl EncoderInput {
    /// Pads every sequence to the longest one in the batch.
    pub fn from_seqs(seqs: &[TokenSeq]) -> Result<Self, ModelError> {
        if seqs.is_empty() {
            return Err(ModelError::EmptyBatch);
        }
        let len = seqs.iter().map(TokenSeq::len).max().unwrap_or(0);
        if len > MAX_SEQ_LEN {
            return Err(ModelError::SequenceTooLong(len));
        }
        let mut ids = Vec::with_capacity(seqs.len() * len);
        let mut mask = Vec::with_capacity(seqs.len() * len);
        for s in seqs {
            let mut s = s.clone();
            s.pad_to(len);
            ids.extend_from_slice(&s.ids);
            mask.extend_from_slice(&s.attention_mask);
        }
        Ok(EncoderInput {
            ids,
            mask,
            batch: seqs.len(),
            len,
        })
    }

    /// Row indices of the CLS positions in the flattened `[batch*len]` view.
    pub fn cls_rows(&self) -> Vec<usize> {
        (0..self.batch).map(|b| b * self.len).collect()
    }
}

/// Parameters registered on a tape.
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

impl<T: Scalar> ModelParams<T> {
    pub fn init<R: Rng + ?Sized>(config: &ModelConfig, rng: &mut R) -> Result<Self, ModelError> {
        config.validate()?;
        let names = param_names(config);
        let tensors = names
            .iter()
            .zip(param_shapes(config))
            .map(|(n, s)| init_tensor(n, &s, rng))
            .collect();
        Ok(ModelParams {
            config: config.clone(),
            names,
            tensors,
            head: None,
        })
    }

    /// Rebuilds from tensors in name order, checking every shape.
    pub fn from_tensors(config: &ModelConfig, tensors: Vec<(String, Tensor<T>)>) -> Result<Self, ModelError> {
        config.validate()?;
        let names = param_names(config);
        let shapes = param_shapes(config);
        let mut head = None;
        let n = names.len();
        if tensors.len() != n && tensors.len() != n + 2 {
            return Err(ModelError::Config(format!("expected {n} tensors, got {}", tensors.len())));
        }
        let mut out = Vec::with_capacity(tensors.len());
        let mut all_names = names.clone();
        for (i, (name, mut t)) in tensors.into_iter().enumerate() {
            if i < n {
                if name != names[i] || t.shape() != shapes[i].as_slice() {
                    return Err(ModelError::Config(format!(
                        "tensor {i}: got '{name}' {:?}, expected '{}' {:?}",
                        t.shape(),
                        names[i],
                        shapes[i]
                    )));
                }
            } else {
                let k = *t.shape().last().unwrap_or(&0);
                let kind = match k {
                    1 => TaskKind::Regression,
                    2 => TaskKind::Binary,
                    _ => return Err(ModelError::Config(format!("finetune head width {k}"))),
                };
                head = Some(kind);
                all_names.push(name);
            }
            t.set_requires_grad(true);
            out.push(t);
        }
        if let Some(kind) = head {
            let h = config.hidden_size;
            let k = kind.outputs();
            if out[n].shape() != [h, k] || out[n + 1].shape() != [k] {
                return Err(ModelError::Config("finetune head shape".into()));
            }
        }
        Ok(ModelParams {
            config: config.clone(),
            names: all_names,
            tensors: out,
            head,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn head(&self) -> Option<TaskKind> {
        self.head
    }

    /// Total number of scalars held, including any finetune head.
    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Attaches a freshly initialized finetune head, replacing any existing
    /// one. Other tensors are untouched.
    pub fn attach_head<R: Rng + ?Sized>(&mut self, kind: TaskKind, rng: &mut R) {
        let base = param_names(&self.config).len();
        self.names.truncate(base);
        self.tensors.truncate(base);
        let h = self.config.hidden_size;
        let k = kind.outputs();
        self.names.push("finetune_head.weight".into());
        self.tensors.push(init_tensor("weight", &[h, k], rng));
        self.names.push("finetune_head.bias".into());
        self.tensors.push(init_tensor("bias", &[k], rng));
        self.head = Some(kind);
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        ModelParams {
            config: self.config.clone(),
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
            head: self.head,
        }
    }

    pub fn bind(&self, tape: &mut Tape<T>) -> Bound {
        Bound {
            vars: self.tensors.iter().map(|t| tape.leaf(t)).collect(),
        }
    }

    /// Gradients in parameter order, as consumed by the optimizer.
    pub fn collect_grads(&self, bound: &Bound, grads: &mut Gradients<T>) -> Vec<Option<Tensor<T>>> {
        bound.vars.iter().map(|&v| grads.take(v)).collect()
    }

    /// Final-norm hidden states, shape `[batch, len, hidden]`.
    pub fn encode<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<T>,
        p: &Bound,
        input: &EncoderInput,
        train: bool,
        rng: &mut R,
    ) -> Result<Var, ModelError> {
        let cfg = &self.config;
        let (b, l) = (input.batch, input.len);
        if b == 0 || l == 0 {
            return Err(ModelError::EmptyBatch);
        }
        if l > cfg.max_position {
            return Err(ModelError::SequenceTooLong(l));
        }
        let (h, heads) = (cfg.hidden_size, cfg.num_attention_heads);
        let hd = cfg.head_dim();
        let v = &p.vars;
        let drop = cfg.dropout;

        let tok = tape.embedding(v[0], &input.ids, &[b, l])?;
        let positions: Vec<u32> = (0..b).flat_map(|_| 0..l as u32).collect();
        let pos = tape.embedding(v[1], &positions, &[b, l])?;
        let mut x = tape.add(tok, pos)?;
        x = tape.dropout(x, drop, train, rng)?;

        let mut mask = Vec::with_capacity(b * heads * l * l);
        for bi in 0..b {
            let keys = &input.mask[bi * l..(bi + 1) * l];
            for _ in 0..heads * l {
                mask.extend(keys.iter().map(|&m| if m == 1 { T::zero() } else { T::of(MASK_FILL) }));
            }
        }
        let mask = tape.constant(Tensor::new(&[b * heads, l, l], mask)?);
        let scale = T::one() / T::of(hd as f64).sqrt();

        for layer in 0..cfg.num_hidden_layers {
            let w = &v[2 + layer * PER_LAYER..2 + (layer + 1) * PER_LAYER];
            let n = tape.layer_norm(x, w[0], w[1], LN_EPS)?;
            let qkv = tape.matmul(n, w[2])?;
            let qkv = tape.add(qkv, w[3])?;
            let q = tape.split_heads(qkv, heads, hd, 0)?;
            let k = tape.split_heads(qkv, heads, hd, h)?;
            let val = tape.split_heads(qkv, heads, hd, 2 * h)?;
            let s = tape.bmm(q, k, true)?;
            let s = tape.scale(s, scale)?;
            let s = tape.add(s, mask)?;
            let a = tape.softmax(s)?;
            let o = tape.bmm(a, val, false)?;
            let o = tape.merge_heads(o, heads)?;
            let o = tape.matmul(o, w[4])?;
            let o = tape.add(o, w[5])?;
            let o = tape.dropout(o, drop, train, rng)?;
            x = tape.add(x, o)?;

            let n = tape.layer_norm(x, w[6], w[7], LN_EPS)?;
            let f = tape.matmul(n, w[8])?;
            let f = tape.add(f, w[9])?;
            let f = tape.gelu(f)?;
            let f = tape.matmul(f, w[10])?;
            let f = tape.add(f, w[11])?;
            let f = tape.dropout(f, drop, train, rng)?;
            x = tape.add(x, f)?;
        }
        let fi = 2 + cfg.num_hidden_layers * PER_LAYER;
        Ok(tape.layer_norm(x, v[fi], v[fi + 1], LN_EPS)?)
    }

    fn head_index(&self) -> usize {
        2 + self.config.num_hidden_layers * PER_LAYER + 2
    }

    /// Mean cross-entropy over positions whose label is not
    /// [`IGNORE_INDEX`]. `labels` is laid out like `input.ids`.
    pub fn mlm_loss(&self, tape: &mut Tape<T>, p: &Bound, hidden: Var, labels: &[i64]) -> Result<Var, ModelError> {
        let rows: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] != IGNORE_INDEX).collect();
        if rows.is_empty() {
            return Err(ModelError::SkipBatch);
        }
        let targets: Vec<i64> = rows.iter().map(|&i| labels[i]).collect();
        let flat = self.flatten(tape, hidden)?;
        let sel = tape.select_rows(flat, &rows)?;
        let hi = self.head_index();
        let logits = tape.matmul(sel, p.vars[hi])?;
        let logits = tape.add(logits, p.vars[hi + 1])?;
        Ok(tape.cross_entropy(logits, &targets, None)?)
    }

    fn flatten(&self, tape: &mut Tape<T>, hidden: Var) -> Result<Var, ModelError> {
        let s = tape.shape(hidden).to_vec();
        Ok(tape.reshape(hidden, &[s[0] * s[1], s[2]])?)
    }

    fn pooled(&self, tape: &mut Tape<T>, hidden: Var, input: &EncoderInput) -> Result<Var, ModelError> {
        let flat = self.flatten(tape, hidden)?;
        Ok(tape.select_rows(flat, &input.cls_rows())?)
    }

    /// MTR predictions `[batch, D]` from the CLS state.
    pub fn mtr_predict(&self, tape: &mut Tape<T>, p: &Bound, hidden: Var, input: &EncoderInput) -> Result<Var, ModelError> {
        let cls = self.pooled(tape, hidden, input)?;
        let hi = self.head_index() + 2;
        let y = tape.matmul(cls, p.vars[hi])?;
        Ok(tape.add(y, p.vars[hi + 1])?)
    }

    /// Mean squared error against normalized `[batch, D]` labels, averaged
    /// over the tasks where `active` is true.
    pub fn mtr_loss(
        &self,
        tape: &mut Tape<T>,
        p: &Bound,
        hidden: Var,
        input: &EncoderInput,
        labels: &Tensor<T>,
        active: &[bool],
    ) -> Result<Var, ModelError> {
        let d = self.config.mtr_task_count;
        let got = labels.last_dim();
        if got != d || active.len() != d || labels.len() != input.batch * d {
            return Err(ModelError::TaskMismatch { expected: d, got });
        }
        let y = self.mtr_predict(tape, p, hidden, input)?;
        Ok(tape.mse(y, labels, active)?)
    }

    /// Finetune head output: `[batch, 1]` for regression, `[batch, 2]`
    /// logits for binary tasks.
    pub fn finetune_predict(&self, tape: &mut Tape<T>, p: &Bound, hidden: Var, input: &EncoderInput) -> Result<Var, ModelError> {
        if self.head.is_none() {
            return Err(ModelError::NoHead);
        }
        let cls = self.pooled(tape, hidden, input)?;
        let hi = self.head_index() + 4;
        let y = tape.matmul(cls, p.vars[hi])?;
        Ok(tape.add(y, p.vars[hi + 1])?)
    }

    /// CLS hidden state per row, eval mode.
    pub fn embed(&self, input: &EncoderInput) -> Result<Tensor<T>, ModelError> {
        let mut tape = Tape::new().with_finite_check(false);
        let p = self.bind(&mut tape);
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let hidden = self.encode(&mut tape, &p, input, false, &mut rng)?;
        let cls = self.pooled(&mut tape, hidden, input)?;
        Ok(tape.value(cls).clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::grad_check_many;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn seq(ids: &[u32]) -> TokenSeq {
        let mut v = vec![2];
        v.extend_from_slice(ids);
        v.push(3);
        TokenSeq {
            attention_mask: vec![1; v.len()],
            ids: v,
            unk_count: 0,
            truncated: false,
        }
    }

    fn micro(vocab: usize) -> ModelConfig {
        ModelConfig {
            hidden_size: 8,
            num_attention_heads: 2,
            num_hidden_layers: 2,
            intermediate_size: 12,
            dropout: 0.0,
            max_position: 512,
            vocab_size: vocab,
            mtr_task_count: 3,
        }
    }

    #[test]
    fn param_count_matches_enumeration() {
        let cfg = ModelConfig::tiny(600, 12);
        let brute: usize = param_shapes(&cfg).iter().map(|s| s.iter().product::<usize>()).sum();
        assert_eq!(cfg.param_count(), brute);
        let p = ModelParams::<f32>::init(&cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(p.numel(), brute);
        assert_eq!(p.names().len(), param_shapes(&cfg).len());
    }

    #[test]
    fn init_statistics() {
        let cfg = ModelConfig::tiny(600, 12);
        let p = ModelParams::<f64>::init(&cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let w = p.get("embeddings.word").unwrap().data();
        assert!(w.iter().all(|v| v.abs() <= 2.0 * INIT_STD));
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        let sd = (w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / w.len() as f64).sqrt();
        // truncation at 2 sigma shrinks the spread to ~0.88 sigma
        assert!((sd / INIT_STD - 0.88).abs() < 0.03, "{sd}");
        assert!(p.get("layer.0.attn.qkv.bias").unwrap().data().iter().all(|&v| v == 0.0));
        assert!(p.get("final_norm.gamma").unwrap().data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn pad_positions_get_zero_attention_and_do_not_leak() {
        let cfg = micro(20);
        let p = ModelParams::<f64>::init(&cfg, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let short = seq(&[5, 6]);
        let a = EncoderInput::from_seqs(&[short.clone()]).unwrap();
        let b = EncoderInput::from_seqs(&[short, seq(&[7, 8, 9, 10, 11])]).unwrap();
        let ea = p.embed(&a).unwrap();
        let eb = p.embed(&b).unwrap();
        let h = cfg.hidden_size;
        let diff = ea.data().iter().zip(&eb.data()[..h]).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(diff < 1e-12, "{diff}");
    }

    #[test]
    fn eval_is_deterministic_and_batch_equivariant() {
        let cfg = micro(20);
        let p = ModelParams::<f32>::init(&cfg, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let s = [seq(&[5, 6, 7]), seq(&[9, 9]), seq(&[12])];
        let x = EncoderInput::from_seqs(&s).unwrap();
        assert_eq!(p.embed(&x).unwrap(), p.embed(&x).unwrap());
        let rev = EncoderInput::from_seqs(&[s[2].clone(), s[1].clone(), s[0].clone()]).unwrap();
        let (e, r) = (p.embed(&x).unwrap(), p.embed(&rev).unwrap());
        let h = cfg.hidden_size;
        for i in 0..3 {
            let d = e.data()[i * h..(i + 1) * h]
                .iter()
                .zip(&r.data()[(2 - i) * h..(3 - i) * h])
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f32, f32::max);
            assert!(d < 1e-5);
        }
    }

    #[test]
    fn initial_mlm_loss_is_near_uniform() {
        let cfg = ModelConfig::tiny(591, 12);
        let p = ModelParams::<f32>::init(&cfg, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let x = EncoderInput::from_seqs(&[seq(&[10, 20, 30, 40, 50, 60])]).unwrap();
        let labels: Vec<i64> = x.ids.iter().enumerate().map(|(i, &id)| if i % 2 == 1 { id as i64 } else { IGNORE_INDEX }).collect();
        let mut tape = Tape::new();
        let b = p.bind(&mut tape);
        let h = p.encode(&mut tape, &b, &x, false, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let l = p.mlm_loss(&mut tape, &b, h, &labels).unwrap();
        let v = tape.value(l).item() as f64;
        assert!((v - 591f64.ln()).abs() < 0.3, "{v}");
        let none = vec![IGNORE_INDEX; labels.len()];
        assert_eq!(p.mlm_loss(&mut tape, &b, h, &none), Err(ModelError::SkipBatch));
    }

    #[test]
    fn head_reinit_touches_only_head() {
        let cfg = micro(20);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut p = ModelParams::<f32>::init(&cfg, &mut rng).unwrap();
        let before = p.tensors().to_vec();
        p.attach_head(TaskKind::Binary, &mut rng);
        p.attach_head(TaskKind::Regression, &mut rng);
        assert_eq!(&p.tensors()[..before.len()], &before[..]);
        assert_eq!(p.tensors().len(), before.len() + 2);
        assert_eq!(p.head(), Some(TaskKind::Regression));
    }

    #[test]
    fn mlm_and_mtr_gradients_match_finite_differences() {
        let cfg = micro(16);
        let p = ModelParams::<f64>::init(&cfg, &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
        // larger weights so gradients sit well above the difference noise
        let mut p = p;
        let scales: Vec<f64> = p
            .names()
            .iter()
            .map(|n| if n.starts_with("embeddings") { 50.0 } else if n.ends_with("weight") { 10.0 } else { 1.0 })
            .collect();
        for (t, s) in p.tensors_mut().iter_mut().zip(scales) {
            for v in t.data_mut() {
                *v *= s;
            }
        }
        let x = EncoderInput::from_seqs(&[seq(&[5, 6, 7]), seq(&[8, 9])]).unwrap();
        let labels: Vec<i64> = x.ids.iter().enumerate().map(|(i, &id)| if i % 3 == 1 { id as i64 } else { IGNORE_INDEX }).collect();
        let y = Tensor::from_f64(&[2, 3], &[0.3, -1.2, 0.0, 1.1, 0.4, 0.0]).unwrap();
        let active = [true, true, false];
        let loss = |ts: &[Tensor<f64>], grads: bool| -> Result<(f64, Vec<Tensor<f64>>), ModelError> {
            let named = p.names().iter().cloned().zip(ts.iter().cloned()).collect();
            let q = ModelParams::from_tensors(&cfg, named)?;
            let mut tape = Tape::new().with_finite_check(true);
            let b = q.bind(&mut tape);
            let h = q.encode(&mut tape, &b, &x, false, &mut ChaCha8Rng::seed_from_u64(0))?;
            let m = q.mlm_loss(&mut tape, &b, h, &labels)?;
            let r = q.mtr_loss(&mut tape, &b, h, &x, &y, &active)?;
            let total = tape.add(m, r)?;
            let v = tape.value(total).item();
            if !grads {
                return Ok((v, vec![]));
            }
            let mut g = tape.backward(total)?;
            let gs = q
                .collect_grads(&b, &mut g)
                .into_iter()
                .zip(ts)
                .map(|(g, t)| g.unwrap_or_else(|| Tensor::zeros(t.shape())))
                .collect();
            Ok((v, gs))
        };
        let ts = p.tensors().to_vec();
        let (_, grads) = loss(&ts, true).unwrap();
        // position rows past the sequence length never influence the loss
        let l = x.len;
        let h = cfg.hidden_size;
        let mut xs = ts.clone();
        let mut gs = grads.clone();
        xs[1] = Tensor::new(&[l, h], ts[1].data()[..l * h].to_vec()).unwrap();
        gs[1] = Tensor::new(&[l, h], grads[1].data()[..l * h].to_vec()).unwrap();
        let report = grad_check_many(
            |xs| {
                let mut full = xs.to_vec();
                let mut pos = ts[1].clone();
                pos.data_mut()[..l * h].copy_from_slice(xs[1].data());
                full[1] = pos;
                loss(&full, false).map(|r| r.0).map_err(|e| match e {
                    ModelError::Tensor(t) => t,
                    other => TensorError::StateMismatch(other.to_string()),
                })
            },
            &xs,
            &gs,
        )
        .unwrap();
        assert!(report.passes(1e-4), "{report:?}");
    }
}
