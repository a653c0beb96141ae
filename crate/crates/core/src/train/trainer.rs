//! The pretraining loop.
//!
//! Run directory layout:
//!
//! ```text
//! train_config.txt  vocab.txt  norm.csv (MTR)  train.csv  holdout.csv
//! log.jsonl  latest/  best/  diagnostic/ (only after a numerical failure)
//! ```

use std::fs::OpenOptions;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::{Checkpoint, TrainState};
use super::loader::{read_rows, shuffle_to_disk, Batches, Cursor, Row, StreamLoader};
use super::{derive_seed, mask_tokens, Objective, TrainConfig, TrainError};
use crate::featurize::NormStats;
use crate::model::{EncoderInput, ModelConfig, ModelError, ModelParams};
use crate::tensor::{AdamConfig, AdamState, Tape, Tensor, TensorError, IGNORE_INDEX};
use crate::tokenizer::{TokenSeq, Vocab};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub step: u64,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
    pub epoch: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    Patience,
    MaxSteps,
    Interrupted,
    AlreadyFinished,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub reason: StopReason,
    pub step: u64,
    pub best_val: f64,
    pub best_step: u64,
}

/// Fits normalization statistics on the label columns of a training file.
pub fn fit_norm_stats(train: &Path) -> Result<NormStats, TrainError> {
    let (names, rows, _) = read_rows(train)?;
    let labels: Vec<Vec<f64>> = rows.into_iter().map(|r| r.labels).collect();
    Ok(NormStats::fit(&names, &labels)?)
}

struct Batch {
    input: EncoderInput,
    mlm_labels: Vec<i64>,
    mtr_labels: Option<Tensor<f32>>,
    weight: f64,
}

pub struct Trainer {
    dir: PathBuf,
    cfg: TrainConfig,
    vocab: Vocab,
    norm: Option<NormStats>,
    loader: StreamLoader,
    holdout: Vec<Row>,
    ck: Checkpoint,
    patience: u64,
}

impl Trainer {
    /// Prepares `dir` for a fresh run: copies vocabulary and statistics,
    /// writes shuffled train and holdout files, initializes the model and
    /// saves a step-0 checkpoint.
    pub fn create(
        dir: &Path,
        model: &ModelConfig,
        cfg: &TrainConfig,
        train: &Path,
        holdout: &Path,
        vocab: &Vocab,
        norm: Option<&NormStats>,
    ) -> Result<Trainer, TrainError> {
        cfg.validate()?;
        model.validate()?;
        if model.vocab_size != vocab.len() {
            return Err(TrainError::Config(format!(
                "model vocab_size {} differs from vocabulary size {}",
                model.vocab_size,
                vocab.len()
            )));
        }
        if cfg.objective == Objective::Mtr {
            let norm = norm.ok_or_else(|| TrainError::Config("MTR training needs normalization statistics".into()))?;
            if norm.task_count() != model.mtr_task_count {
                return Err(ModelError::TaskMismatch {
                    expected: model.mtr_task_count,
                    got: norm.task_count(),
                }
                .into());
            }
        }
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("train_config.txt"), cfg.to_kv())?;
        vocab.save(&dir.join("vocab.txt"))?;
        if let Some(n) = norm {
            n.write_csv(std::fs::File::create(dir.join("norm.csv"))?)?;
        }
        let shuffled = shuffle_to_disk(train, &dir.join("train.csv"), derive_seed(cfg.seed, "shuffle"))?;
        if shuffled.rows == 0 {
            return Err(TrainError::Data("training file has no valid rows".into()));
        }
        shuffle_to_disk(holdout, &dir.join("holdout.csv"), derive_seed(cfg.seed, "holdout"))?;
        std::fs::write(dir.join("log.jsonl"), "")?;
        let params = ModelParams::init(model, &mut ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "init")))?;
        let ck = Checkpoint {
            adam: AdamState::new(params.tensors()),
            params,
            rng: ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "train")),
            state: TrainState::default(),
        };
        ck.save(&dir.join("latest"))?;
        Self::open(dir, ck)
    }

    /// Reopens a run directory at its latest checkpoint.
    pub fn resume(dir: &Path) -> Result<Trainer, TrainError> {
        let ck = Checkpoint::load(&dir.join("latest"))?;
        let t = Self::open(dir, ck)?;
        t.truncate_log()?;
        Ok(t)
    }

    fn open(dir: &Path, ck: Checkpoint) -> Result<Trainer, TrainError> {
        let cfg = TrainConfig::from_kv(&std::fs::read_to_string(dir.join("train_config.txt"))?)?;
        let vocab = Vocab::load(&dir.join("vocab.txt"))?;
        let norm = match cfg.objective {
            Objective::Mtr => Some(NormStats::read_csv(std::fs::File::open(dir.join("norm.csv"))?)?),
            Objective::Mlm => None,
        };
        let loader = StreamLoader::open(&dir.join("train.csv"), cfg.batch_size)?;
        let holdout_loader = StreamLoader::open(&dir.join("holdout.csv"), cfg.batch_size)?;
        let holdout: Vec<Row> = holdout_loader
            .batches_from(Cursor::default())?
            .map(|b| b.map(|(rows, _)| rows))
            .collect::<Result<Vec<_>, _>>()?
            .concat();
        if holdout.is_empty() {
            return Err(TrainError::Data("holdout set is empty".into()));
        }
        if let Some(n) = &norm {
            for names in [loader.label_names(), holdout_loader.label_names()] {
                if names != n.names.as_slice() {
                    return Err(TrainError::Data(format!(
                        "label columns {names:?} do not match normalization columns {:?}",
                        n.names
                    )));
                }
            }
        }
        let patience = if cfg.patience_steps == 0 {
            loader.batches_per_pass() as u64
        } else {
            cfg.patience_steps
        };
        Ok(Trainer {
            dir: dir.to_path_buf(),
            cfg,
            vocab,
            norm,
            loader,
            holdout,
            ck,
            patience,
        })
    }

    pub fn params(&self) -> &ModelParams<f32> {
        &self.ck.params
    }

    pub fn state(&self) -> &TrainState {
        &self.ck.state
    }

    pub fn patience(&self) -> u64 {
        self.patience
    }

    pub fn train_rows(&self) -> usize {
        self.loader.rows()
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn log(&self) -> Result<Vec<LogRecord>, TrainError> {
        read_log(&self.dir.join("log.jsonl"))
    }

    fn truncate_log(&self) -> Result<(), TrainError> {
        let path = self.dir.join("log.jsonl");
        let keep: Vec<LogRecord> = read_log(&path)?
            .into_iter()
            .filter(|r| r.step <= self.ck.state.step)
            .collect();
        let mut text = String::new();
        for r in keep {
            text.push_str(&serde_json::to_string(&r)?);
            text.push('\n');
        }
        std::fs::write(path, text)?;
        Ok(())
    }

    fn build_batch(&self, rows: &[Row], rng: &mut ChaCha8Rng) -> Result<Option<Batch>, TrainError> {
        let mut seqs: Vec<TokenSeq> = Vec::with_capacity(rows.len());
        let mut labels: Vec<Vec<i64>> = Vec::new();
        let mut targets: Vec<f32> = Vec::new();
        for r in rows {
            let s = self.vocab.encode_smiles(&r.smiles)?;
            match self.cfg.objective {
                Objective::Mlm => {
                    if let Some((m, l)) = mask_tokens(&s, self.cfg.mask_prob, self.vocab.len(), rng) {
                        seqs.push(m);
                        labels.push(l);
                    }
                }
                Objective::Mtr => {
                    let norm = self.norm.as_ref().expect("MTR runs carry statistics");
                    targets.extend(norm.apply(&r.labels).iter().map(|&v| v as f32));
                    seqs.push(s);
                }
            }
        }
        if seqs.is_empty() {
            return Ok(None);
        }
        let input = EncoderInput::from_seqs(&seqs)?;
        let mut mlm_labels = Vec::new();
        for l in &labels {
            mlm_labels.extend_from_slice(l);
            mlm_labels.extend(std::iter::repeat_n(IGNORE_INDEX, input.len - l.len()));
        }
        let weight = match self.cfg.objective {
            Objective::Mlm => mlm_labels.iter().filter(|&&l| l != IGNORE_INDEX).count() as f64,
            Objective::Mtr => seqs.len() as f64,
        };
        let mtr_labels = match self.cfg.objective {
            Objective::Mtr => Some(Tensor::new(&[seqs.len(), self.ck.params.config().mtr_task_count], targets)?),
            Objective::Mlm => None,
        };
        Ok(Some(Batch {
            input,
            mlm_labels,
            mtr_labels,
            weight,
        }))
    }

    fn loss(&self, tape: &mut Tape<f32>, batch: &Batch, train: bool, rng: &mut ChaCha8Rng) -> Result<(crate::tensor::Var, crate::model::Bound), ModelError> {
        let p = &self.ck.params;
        let bound = p.bind(tape);
        let hidden = p.encode(tape, &bound, &batch.input, train, rng)?;
        let loss = match self.cfg.objective {
            Objective::Mlm => p.mlm_loss(tape, &bound, hidden, &batch.mlm_labels)?,
            Objective::Mtr => {
                let active = self.norm.as_ref().expect("MTR runs carry statistics").active_tasks();
                p.mtr_loss(tape, &bound, hidden, &batch.input, batch.mtr_labels.as_ref().unwrap(), &active)?
            }
        };
        Ok((loss, bound))
    }

    /// Mean holdout loss in eval mode. MLM masks come from a fixed seed so
    /// every evaluation sees the same masked positions.
    pub fn evaluate(&self) -> Result<f64, TrainError> {
        let mut mask_rng = ChaCha8Rng::seed_from_u64(derive_seed(self.cfg.seed, "eval"));
        let (mut total, mut weight) = (0.0, 0.0);
        for rows in self.holdout.chunks(self.cfg.batch_size) {
            let Some(batch) = self.build_batch(rows, &mut mask_rng)? else {
                continue;
            };
            let mut tape = Tape::new().with_finite_check(false);
            let (loss, _) = self.loss(&mut tape, &batch, false, &mut mask_rng)?;
            total += tape.value(loss).item() as f64 * batch.weight;
            weight += batch.weight;
        }
        if weight == 0.0 {
            return Err(TrainError::Data("holdout set yields no targets".into()));
        }
        Ok(total / weight)
    }

    fn numerical_failure(&self, op: &str) -> TrainError {
        let step = self.ck.state.step;
        if let Err(e) = self.ck.save(&self.dir.join("diagnostic")) {
            log::error!("could not write diagnostic checkpoint: {e}");
        }
        TrainError::NonFinite { step, op: op.to_string() }
    }

    fn train_step(&mut self, batch: &Batch) -> Result<f64, TrainError> {
        let mut rng = self.ck.rng.clone();
        let mut tape = Tape::new().with_finite_check(true);
        let (loss, bound) = self.loss(&mut tape, batch, true, &mut rng)?;
        let value = tape.value(loss).item() as f64;
        if let Some(op) = tape.fault() {
            return Err(self.numerical_failure(op));
        }
        let mut grads = match tape.backward(loss) {
            Ok(g) => g,
            Err(TensorError::NonFinite { op }) => return Err(self.numerical_failure(op)),
            Err(e) => return Err(e.into()),
        };
        let grads = self.ck.params.collect_grads(&bound, &mut grads);
        if grads.iter().flatten().any(|g| !g.is_finite()) {
            return Err(self.numerical_failure("backward"));
        }
        self.ck.rng = rng;
        let adam = AdamConfig::with_lr(self.cfg.lr());
        self.ck.adam.step(&adam, self.ck.params.tensors_mut(), &grads)?;
        if self.ck.params.tensors().iter().any(|t| !t.is_finite()) {
            return Err(self.numerical_failure("adam"));
        }
        Ok(value)
    }

    fn append_log(&self, rec: &LogRecord) -> Result<(), TrainError> {
        let mut f = OpenOptions::new().append(true).create(true).open(self.dir.join("log.jsonl"))?;
        writeln!(f, "{}", serde_json::to_string(rec)?)?;
        Ok(())
    }

    /// Trains until early stopping, `max_steps`, or `stop_at` (an interruption
    /// point that leaves a resumable checkpoint).
    pub fn run(&mut self, stop_at: Option<u64>) -> Result<RunOutcome, TrainError> {
        if self.ck.state.finished {
            log::info!("run in {} already finished at step {}", self.dir.display(), self.ck.state.step);
            return Ok(self.outcome(StopReason::AlreadyFinished));
        }
        let mut batches: Option<Batches> = None;
        let mut reason = StopReason::MaxSteps;
        let mut empty_passes = 0;
        while !self.ck.state.finished {
            if stop_at.is_some_and(|s| self.ck.state.step >= s) {
                self.ck.save(&self.dir.join("latest"))?;
                return Ok(self.outcome(StopReason::Interrupted));
            }
            if batches.is_none() {
                batches = Some(self.loader.batches_from(self.ck.state.cursor)?);
            }
            let Some(next) = batches.as_mut().unwrap().next() else {
                batches = None;
                self.ck.state.cursor = Cursor {
                    pass: self.ck.state.cursor.pass + 1,
                    row: 0,
                };
                empty_passes += 1;
                if empty_passes > 1 {
                    return Err(TrainError::Data("no trainable batches in a full pass".into()));
                }
                continue;
            };
            let (rows, cursor) = next?;
            let mut rng = self.ck.rng.clone();
            let batch = self.build_batch(&rows, &mut rng)?;
            self.ck.rng = rng;
            self.ck.state.cursor = cursor;
            let Some(batch) = batch else { continue };
            empty_passes = 0;

            let loss = self.train_step(&batch)?;
            let st = &mut self.ck.state;
            st.step += 1;
            st.loss_sum += loss;
            st.loss_count += 1;
            let step = st.step;
            if step % self.cfg.eval_interval == 0 {
                let val = self.evaluate()?;
                let st = &mut self.ck.state;
                let rec = LogRecord {
                    step,
                    train_loss: st.loss_sum / st.loss_count as f64,
                    val_loss: val,
                    lr: self.cfg.lr(),
                    epoch: st.cursor.pass as f64 + st.cursor.row as f64 / self.loader.rows() as f64,
                };
                st.loss_sum = 0.0;
                st.loss_count = 0;
                let improved = val < st.best_val;
                if improved {
                    st.best_val = val;
                    st.best_step = step;
                }
                self.append_log(&rec)?;
                if improved {
                    self.ck.save(&self.dir.join("best"))?;
                }
            }
            let st = &mut self.ck.state;
            if st.best_val.is_finite() && step - st.best_step >= self.patience {
                st.finished = true;
                reason = StopReason::Patience;
            } else if step >= self.cfg.max_steps {
                st.finished = true;
                reason = StopReason::MaxSteps;
            }
            if st.finished || step % self.cfg.checkpoint_every == 0 {
                self.ck.save(&self.dir.join("latest"))?;
            }
        }
        Ok(self.outcome(reason))
    }

    fn outcome(&self, reason: StopReason) -> RunOutcome {
        RunOutcome {
            reason,
            step: self.ck.state.step,
            best_val: self.ck.state.best_val,
            best_step: self.ck.state.best_step,
        }
    }
}

pub fn read_log(path: &Path) -> Result<Vec<LogRecord>, TrainError> {
    if !path.exists() {
        return Ok(vec![]);
    }
    let mut out = Vec::new();
    for line in BufReader::new(std::fs::File::open(path)?).lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}
