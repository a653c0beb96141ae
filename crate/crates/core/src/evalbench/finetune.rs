//! Finetuning a pretrained encoder on a scaffold-split downstream task.
//!
//! Split directories hold `train.csv`, `valid.csv` and `test.csv`, each with a
//! `smiles` column and exactly one label column. Test labels are only read by
//! [`TestSet::score`].

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::{class_weights, rmse, roc_auc};
use super::EvalError;
use crate::featurize::NormStats;
use crate::model::{Bound, EncoderInput, ModelConfig, ModelError, ModelParams, TaskKind};
use crate::tensor::{AdamConfig, AdamState, Tape, Tensor, TensorError, Var};
use crate::tokenizer::{TokenSeq, Vocab};
use crate::train::{derive_seed, Checkpoint};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

const EVAL_BATCH: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskType {
    Regression,
    Binary,
}

impl TaskType {
    pub fn parse(s: &str) -> Result<Self, EvalError> {
        match s.to_ascii_lowercase().as_str() {
            "regression" => Ok(TaskType::Regression),
            "binary" | "classification" => Ok(TaskType::Binary),
            _ => Err(EvalError::Data(format!("unknown task type '{s}'"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TaskType::Regression => "regression",
            TaskType::Binary => "binary",
        }
    }

    pub fn metric(self) -> &'static str {
        match self {
            TaskType::Regression => "RMSE",
            TaskType::Binary => "ROC-AUC",
        }
    }

    fn kind(self) -> TaskKind {
        match self {
            TaskType::Regression => TaskKind::Regression,
            TaskType::Binary => TaskKind::Binary,
        }
    }

    fn parse_label(self, v: &str) -> Result<f64, EvalError> {
        let x: f64 = v.trim().parse().map_err(|_| EvalError::BadLabel(v.to_string()))?;
        match self {
            TaskType::Regression if x.is_finite() => Ok(x),
            TaskType::Binary if x == 0.0 || x == 1.0 => Ok(x),
            _ => Err(EvalError::BadLabel(v.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub lr: f64,
    pub seed: u64,
    pub batch_size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneGrid {
    pub lrs: Vec<f64>,
    pub seeds: Vec<u64>,
    pub batch_sizes: Vec<usize>,
}

impl Default for FinetuneGrid {
    fn default() -> Self {
        FinetuneGrid {
            lrs: vec![1e-5, 3e-5, 1e-4],
            seeds: vec![0, 1, 2],
            batch_sizes: vec![16, 32],
        }
    }
}

impl FinetuneGrid {
    pub fn single(lr: f64, seed: u64, batch_size: usize) -> Self {
        FinetuneGrid {
            lrs: vec![lr],
            seeds: vec![seed],
            batch_sizes: vec![batch_size],
        }
    }

    /// Every combination, learning rate outermost.
    pub fn points(&self) -> Vec<GridPoint> {
        let mut out = Vec::new();
        for &lr in &self.lrs {
            for &seed in &self.seeds {
                for &batch_size in &self.batch_sizes {
                    out.push(GridPoint { lr, seed, batch_size });
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneSpec {
    pub split_dir: PathBuf,
    pub task: TaskType,
    pub max_epochs: usize,
    /// Epochs without a validation improvement before stopping.
    pub patience_epochs: usize,
    pub grid: FinetuneGrid,
    pub dataset: String,
}

impl FinetuneSpec {
    pub fn new(split_dir: &Path, task: TaskType) -> Self {
        let dataset = split_dir
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        FinetuneSpec {
            split_dir: split_dir.to_path_buf(),
            task,
            max_epochs: 100,
            patience_epochs: 10,
            grid: FinetuneGrid::default(),
            dataset,
        }
    }
}

/// Encoder weights plus the vocabulary they were trained with.
#[derive(Debug, Clone)]
pub struct Encoder {
    pub params: ModelParams<f32>,
    pub vocab: Vocab,
    pub pretrain_loss: Option<f64>,
    pub source: String,
}

impl Encoder {
    /// Loads the best checkpoint of a pretraining run directory, falling back
    /// to the latest one.
    pub fn load(run_dir: &Path) -> Result<Encoder, EvalError> {
        let best = run_dir.join("best");
        let dir = if best.exists() { best } else { run_dir.join("latest") };
        let ck = Checkpoint::load(&dir)?;
        let vocab = Vocab::load(&run_dir.join("vocab.txt"))?;
        let loss = ck.state.best_val;
        Ok(Encoder {
            params: ck.params,
            vocab,
            pretrain_loss: loss.is_finite().then_some(loss),
            source: dir.display().to_string(),
        })
    }

    pub fn random(config: &ModelConfig, vocab: Vocab, seed: u64) -> Result<Encoder, EvalError> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "init"));
        Ok(Encoder {
            params: ModelParams::init(config, &mut rng)?,
            vocab,
            pretrain_loss: None,
            source: "random".into(),
        })
    }

    fn encode_all(&self, smiles: &[String]) -> Result<Vec<TokenSeq>, EvalError> {
        smiles.iter().map(|s| Ok(self.vocab.encode_smiles(s)?)).collect()
    }
}

fn header_columns(path: &Path) -> Result<(csv::Reader<std::fs::File>, usize, usize), EvalError> {
    let mut reader = csv::Reader::from_path(path)?;
    let header = reader.headers()?.clone();
    let smiles = header
        .iter()
        .position(|h| h == "smiles")
        .ok_or_else(|| EvalError::Data(format!("{}: no 'smiles' column", path.display())))?;
    if header.len() != 2 {
        return Err(EvalError::Data(format!(
            "{}: expected 'smiles' plus one label column, found {} columns",
            path.display(),
            header.len()
        )));
    }
    Ok((reader, smiles, 1 - smiles))
}

fn read_labeled(path: &Path, task: TaskType) -> Result<(Vec<String>, Vec<f64>), EvalError> {
    let (mut reader, sc, lc) = header_columns(path)?;
    let (mut smiles, mut labels) = (Vec::new(), Vec::new());
    for rec in reader.records() {
        let rec = rec?;
        smiles.push(rec[sc].to_string());
        labels.push(task.parse_label(&rec[lc])?);
    }
    Ok((smiles, labels))
}

/// Held-out rows whose labels stay on disk until scoring.
#[derive(Debug)]
pub struct TestSet {
    path: PathBuf,
    smiles: Vec<String>,
}

impl TestSet {
    pub fn open(path: &Path) -> Result<TestSet, EvalError> {
        let (mut reader, sc, _) = header_columns(path)?;
        let smiles = reader
            .records()
            .map(|r| r.map(|r| r[sc].to_string()))
            .collect::<Result<_, _>>()?;
        Ok(TestSet {
            path: path.to_path_buf(),
            smiles,
        })
    }

    pub fn smiles(&self) -> &[String] {
        &self.smiles
    }

    pub fn len(&self) -> usize {
        self.smiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.smiles.is_empty()
    }

    /// Reads the labels and scores predictions in original units: positive
    /// class scores for binary tasks, denormalized values for regression.
    pub fn score(self, predictions: &[f64], task: TaskType) -> Result<f64, EvalError> {
        let (smiles, labels) = read_labeled(&self.path, task)?;
        if smiles != self.smiles {
            return Err(EvalError::Data(format!("{} changed during finetuning", self.path.display())));
        }
        match task {
            TaskType::Regression => rmse(predictions, &labels),
            TaskType::Binary => {
                let l: Vec<u8> = labels.iter().map(|&v| v as u8).collect();
                roc_auc(predictions, &l)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub schema_version: u32,
    pub dataset: String,
    pub task: TaskType,
    pub metric: String,
    pub value: f64,
    pub train_size: usize,
    pub valid_size: usize,
    pub test_size: usize,
    pub config: GridPoint,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub valid_loss: f64,
    pub grid_points: usize,
    pub diverged_points: usize,
    pub encoder: String,
    pub pretrain_loss: Option<f64>,
}

/// Training-side view of the task: tokenized rows and targets.
struct TaskData {
    task: TaskType,
    train: Vec<TokenSeq>,
    train_y: Vec<f64>,
    valid: Vec<TokenSeq>,
    valid_y: Vec<f64>,
    weights: [f32; 2],
}

struct PointResult {
    params: ModelParams<f32>,
    valid_loss: f64,
    best_epoch: usize,
    epochs_run: usize,
}

fn batch_loss(
    params: &ModelParams<f32>,
    tape: &mut Tape<f32>,
    data: &TaskData,
    seqs: &[TokenSeq],
    ys: &[f64],
    train: bool,
    rng: &mut ChaCha8Rng,
) -> Result<(Var, f64, Bound), ModelError> {
    let input = EncoderInput::from_seqs(seqs)?;
    let bound = params.bind(tape);
    let hidden = params.encode(tape, &bound, &input, train, rng)?;
    let pred = params.finetune_predict(tape, &bound, hidden, &input)?;
    let (loss, weight) = match data.task {
        TaskType::Binary => {
            let targets: Vec<i64> = ys.iter().map(|&y| y as i64).collect();
            let w: f64 = targets.iter().map(|&t| data.weights[t as usize] as f64).sum();
            (tape.cross_entropy(pred, &targets, Some(&data.weights))?, w)
        }
        TaskType::Regression => {
            let target = Tensor::new(&[ys.len(), 1], ys.iter().map(|&y| y as f32).collect())?;
            (tape.mse(pred, &target, &[true])?, ys.len() as f64)
        }
    };
    Ok((loss, weight, bound))
}

fn valid_loss(params: &ModelParams<f32>, data: &TaskData) -> Result<f64, EvalError> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (mut total, mut weight) = (0.0, 0.0);
    for (seqs, ys) in data.valid.chunks(EVAL_BATCH).zip(data.valid_y.chunks(EVAL_BATCH)) {
        let mut tape = Tape::new().with_finite_check(false);
        let (loss, w, _) = batch_loss(params, &mut tape, data, seqs, ys, false, &mut rng)?;
        total += tape.value(loss).item() as f64 * w;
        weight += w;
    }
    Ok(total / weight)
}

fn train_step(
    params: &mut ModelParams<f32>,
    adam: &mut AdamState<f32>,
    cfg: &AdamConfig,
    data: &TaskData,
    idx: &[usize],
    rng: &mut ChaCha8Rng,
) -> Result<(), EvalError> {
    let seqs: Vec<TokenSeq> = idx.iter().map(|&i| data.train[i].clone()).collect();
    let ys: Vec<f64> = idx.iter().map(|&i| data.train_y[i]).collect();
    let mut tape = Tape::new().with_finite_check(true);
    let (loss, _, bound) = batch_loss(params, &mut tape, data, &seqs, &ys, true, rng)?;
    if let Some(op) = tape.fault() {
        return Err(EvalError::NonFinite(op.to_string()));
    }
    let mut grads = tape.backward(loss).map_err(|e| match e {
        TensorError::NonFinite { op } => EvalError::NonFinite(op.to_string()),
        e => e.into(),
    })?;
    let grads = params.collect_grads(&bound, &mut grads);
    adam.step(cfg, params.tensors_mut(), &grads)?;
    if params.tensors().iter().any(|t| !t.is_finite()) {
        return Err(EvalError::NonFinite("adam".into()));
    }
    Ok(())
}

fn run_point(
    encoder: &Encoder,
    data: &TaskData,
    point: GridPoint,
    spec: &FinetuneSpec,
) -> Result<PointResult, EvalError> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(point.seed, "finetune"));
    let mut params = encoder.params.clone();
    params.attach_head(spec.task.kind(), &mut rng);
    let mut adam = AdamState::new(params.tensors());
    let cfg = AdamConfig::with_lr(point.lr);
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut best = PointResult {
        params: params.clone(),
        valid_loss: f64::INFINITY,
        best_epoch: 0,
        epochs_run: 0,
    };
    for epoch in 1..=spec.max_epochs {
        order.shuffle(&mut rng);
        for idx in order.chunks(point.batch_size.max(1)) {
            train_step(&mut params, &mut adam, &cfg, data, idx, &mut rng)?;
        }
        let v = valid_loss(&params, data)?;
        if !v.is_finite() {
            return Err(EvalError::NonFinite("validation loss".into()));
        }
        best.epochs_run = epoch;
        if v < best.valid_loss {
            best.valid_loss = v;
            best.best_epoch = epoch;
            best.params = params.clone();
        } else if epoch - best.best_epoch >= spec.patience_epochs {
            break;
        }
    }
    Ok(best)
}

fn predict(params: &ModelParams<f32>, seqs: &[TokenSeq], task: TaskType, norm: Option<&NormStats>) -> Result<Vec<f64>, EvalError> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut out = Vec::with_capacity(seqs.len());
    for chunk in seqs.chunks(EVAL_BATCH) {
        let input = EncoderInput::from_seqs(chunk)?;
        let mut tape = Tape::new().with_finite_check(false);
        let bound = params.bind(&mut tape);
        let hidden = params.encode(&mut tape, &bound, &input, false, &mut rng)?;
        let pred = params.finetune_predict(&mut tape, &bound, hidden, &input)?;
        let v = tape.value(pred).data();
        match task {
            TaskType::Binary => {
                for row in v.chunks(2) {
                    // softmax probability of the positive class
                    let d = (row[0] - row[1]) as f64;
                    out.push(1.0 / (1.0 + d.exp()));
                }
            }
            TaskType::Regression => {
                let norm = norm.expect("regression carries statistics");
                out.extend(v.iter().map(|&x| norm.invert(&[x as f64])[0]));
            }
        }
    }
    Ok(out)
}

/// Runs every grid point with early stopping on validation loss, keeps the
/// point with the lowest validation loss and scores it on the test split.
/// Regression targets are standardized with statistics of the train split.
pub fn finetune(spec: &FinetuneSpec, encoder: &Encoder) -> Result<MetricReport, EvalError> {
    let dir = &spec.split_dir;
    let (train_smiles, train_y) = read_labeled(&dir.join("train.csv"), spec.task)?;
    let (valid_smiles, valid_y) = read_labeled(&dir.join("valid.csv"), spec.task)?;
    let test = TestSet::open(&dir.join("test.csv"))?;
    if train_smiles.is_empty() || valid_smiles.is_empty() || test.is_empty() {
        return Err(EvalError::Data(format!(
            "{}: train, valid and test splits must all be non-empty",
            dir.display()
        )));
    }
    let points = spec.grid.points();
    if points.is_empty() {
        return Err(EvalError::Data("empty finetune grid".into()));
    }
    let (norm, weights) = match spec.task {
        TaskType::Regression => {
            let rows: Vec<Vec<f64>> = train_y.iter().map(|&y| vec![y]).collect();
            (Some(NormStats::fit(&["label".to_string()], &rows)?), [1.0f32, 1.0])
        }
        TaskType::Binary => {
            let l: Vec<u8> = train_y.iter().map(|&y| y as u8).collect();
            let w = class_weights(&l)?;
            (None, [w[0] as f32, w[1] as f32])
        }
    };
    let scale = |ys: Vec<f64>| match &norm {
        Some(n) => ys.iter().map(|&y| n.apply(&[y])[0]).collect(),
        None => ys,
    };
    let data = TaskData {
        task: spec.task,
        train: encoder.encode_all(&train_smiles)?,
        train_y: scale(train_y),
        valid: encoder.encode_all(&valid_smiles)?,
        valid_y: scale(valid_y),
        weights,
    };

    let mut best: Option<(GridPoint, PointResult)> = None;
    let mut diverged = 0;
    for &point in &points {
        match run_point(encoder, &data, point, spec) {
            Ok(r) => {
                if best.as_ref().is_none_or(|(_, b)| r.valid_loss < b.valid_loss) {
                    best = Some((point, r));
                }
            }
            Err(e) if e.is_numerical() => {
                log::warn!("finetune grid point {point:?} diverged: {e}");
                diverged += 1;
            }
            Err(e) => return Err(e),
        }
    }
    let (point, result) = best.ok_or(EvalError::AllDiverged)?;
    let test_size = test.len();
    let preds = predict(&result.params, &encoder.encode_all(test.smiles())?, spec.task, norm.as_ref())?;
    let value = test.score(&preds, spec.task)?;
    Ok(MetricReport {
        schema_version: REPORT_SCHEMA_VERSION,
        dataset: spec.dataset.clone(),
        task: spec.task,
        metric: spec.task.metric().to_string(),
        value,
        train_size: data.train.len(),
        valid_size: data.valid.len(),
        test_size,
        config: point,
        best_epoch: result.best_epoch,
        epochs_run: result.epochs_run,
        valid_loss: result.valid_loss,
        grid_points: points.len(),
        diverged_points: diverged,
        encoder: encoder.source.clone(),
        pretrain_loss: encoder.pretrain_loss,
    })
}
