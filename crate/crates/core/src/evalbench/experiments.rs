//! The pretraining analyses: MLM/MTR loss correlation across architectures,
//! loss against corpus size, and downstream metric against pretraining loss.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::metrics::{linear_fit, spearman};
use super::{EvalError, MetricReport};
use crate::featurize::{descriptors_for_smiles, write_descriptor_csv, NormStats, BASELINE_DESCRIPTORS};
use crate::model::ModelConfig;
use crate::splits::Reject;
use crate::tokenizer::Vocab;
use crate::train::{read_rows, HpConfig, Objective, TrainConfig, Trainer};

fn write_lines(path: &Path, rows: &[String]) -> Result<(), EvalError> {
    let mut f = std::io::BufWriter::new(File::create(path)?);
    for r in rows {
        writeln!(f, "{r}")?;
    }
    f.flush()?;
    Ok(())
}

/// Writes `smiles,<descriptors>` for the rows that parse; returns the rest.
fn write_descriptor_file(smiles: &[String], path: &Path) -> Result<Vec<Reject>, EvalError> {
    let names: Vec<String> = BASELINE_DESCRIPTORS.iter().map(|s| s.to_string()).collect();
    let mut rows = Vec::with_capacity(smiles.len());
    let mut rejects = Vec::new();
    for (i, s) in smiles.iter().enumerate() {
        match descriptors_for_smiles(s, false) {
            Ok(d) => rows.push((s.clone(), d.values)),
            Err(e) => rejects.push(Reject {
                row: i,
                smiles: s.clone(),
                reason: e.to_string(),
            }),
        }
    }
    write_descriptor_csv(File::create(path)?, &names, &rows)?;
    Ok(rejects)
}

/// A pretraining corpus prepared for both objectives: SMILES files for MLM,
/// descriptor-labeled CSVs and train-split statistics for MTR.
#[derive(Debug, Clone)]
pub struct PretrainData {
    pub train_smi: PathBuf,
    pub holdout_smi: PathBuf,
    pub mtr_train: PathBuf,
    pub mtr_holdout: PathBuf,
    pub vocab: Vocab,
    pub norm: NormStats,
    pub rejects: Vec<Reject>,
}

impl PretrainData {
    pub fn prepare(train: &[String], holdout: &[String], dir: &Path) -> Result<PretrainData, EvalError> {
        Self::prepare_with_vocab(train, holdout, dir, None)
    }

    /// As [`PretrainData::prepare`], reusing `vocab` instead of building one
    /// from `train`.
    pub fn prepare_with_vocab(
        train: &[String],
        holdout: &[String],
        dir: &Path,
        vocab: Option<&Vocab>,
    ) -> Result<PretrainData, EvalError> {
        std::fs::create_dir_all(dir)?;
        let train_smi = dir.join("train.smi");
        let holdout_smi = dir.join("holdout.smi");
        write_lines(&train_smi, train)?;
        write_lines(&holdout_smi, holdout)?;
        let mtr_train = dir.join("mtr_train.csv");
        let mtr_holdout = dir.join("mtr_holdout.csv");
        let mut rejects = write_descriptor_file(train, &mtr_train)?;
        rejects.extend(write_descriptor_file(holdout, &mtr_holdout)?);
        let norm = crate::train::fit_norm_stats(&mtr_train)?;
        let vocab = match vocab {
            Some(v) => v.clone(),
            None => Vocab::build(train.iter().map(String::as_str))?,
        };
        Ok(PretrainData {
            train_smi,
            holdout_smi,
            mtr_train,
            mtr_holdout,
            vocab,
            norm,
            rejects,
        })
    }

    fn files(&self, objective: Objective) -> (&Path, &Path) {
        match objective {
            Objective::Mlm => (&self.train_smi, &self.holdout_smi),
            Objective::Mtr => (&self.mtr_train, &self.mtr_holdout),
        }
    }
}

/// Trains (or resumes) one run to its stopping point and returns the best
/// holdout loss, or `None` if training diverged.
pub fn pretrain_run(
    dir: &Path,
    model: &ModelConfig,
    train: &TrainConfig,
    data: &PretrainData,
) -> Result<Option<f64>, EvalError> {
    let mut model = model.clone();
    model.vocab_size = data.vocab.len();
    model.mtr_task_count = data.norm.task_count();
    let (t, h) = data.files(train.objective);
    let norm = (train.objective == Objective::Mtr).then_some(&data.norm);
    let result = if dir.join("latest").exists() {
        Trainer::resume(dir).and_then(|mut tr| tr.run(None))
    } else {
        Trainer::create(dir, &model, train, t, h, &data.vocab, norm).and_then(|mut tr| tr.run(None))
    };
    match result {
        Ok(out) => Ok(out.best_val.is_finite().then_some(out.best_val)),
        Err(e) if e.is_numerical() => {
            log::warn!("run {} diverged: {e}", dir.display());
            Ok(None)
        }
        Err(e) => Err(e.into()),
    }
}

fn train_config(hp: &HpConfig, base: &TrainConfig, objective: Objective) -> TrainConfig {
    TrainConfig {
        objective,
        base_lr: hp.lr,
        base_batch_size: base.batch_size,
        ..base.clone()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationRow {
    pub index: usize,
    pub hidden_size: usize,
    pub num_attention_heads: usize,
    pub num_hidden_layers: usize,
    pub intermediate_size: usize,
    pub dropout: f64,
    pub lr: f64,
    pub param_count: usize,
    pub mlm_loss: Option<f64>,
    pub mtr_loss: Option<f64>,
}

impl CorrelationRow {
    fn new(index: usize, hp: &HpConfig) -> Self {
        let m = &hp.model;
        CorrelationRow {
            index,
            hidden_size: m.hidden_size,
            num_attention_heads: m.num_attention_heads,
            num_hidden_layers: m.num_hidden_layers,
            intermediate_size: m.intermediate_size,
            dropout: m.dropout,
            lr: hp.lr,
            param_count: m.param_count(),
            mlm_loss: None,
            mtr_loss: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationResult {
    pub rows: Vec<CorrelationRow>,
    /// Rank correlation over configs where both runs converged.
    pub spearman: Option<f64>,
    /// Configs with a diverged run.
    pub excluded: Vec<usize>,
}

impl CorrelationResult {
    pub fn write_csv(&self, path: &Path) -> Result<(), EvalError> {
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Trains every config under both objectives on the same corpus, run
/// directories `cfg<i>_mlm` and `cfg<i>_mtr` under `out_dir`. Existing run
/// directories are resumed, so an interrupted experiment can be restarted.
pub fn experiment_loss_correlation(
    configs: &[HpConfig],
    data: &PretrainData,
    base: &TrainConfig,
    out_dir: &Path,
) -> Result<CorrelationResult, EvalError> {
    if configs.len() < 5 {
        return Err(EvalError::Data(format!("need at least 5 configs, got {}", configs.len())));
    }
    let mut rows = Vec::with_capacity(configs.len());
    for (i, hp) in configs.iter().enumerate() {
        let mut row = CorrelationRow::new(i, hp);
        for obj in [Objective::Mlm, Objective::Mtr] {
            let dir = out_dir.join(format!("cfg{i:03}_{}", obj.name()));
            let loss = pretrain_run(&dir, &hp.model, &train_config(hp, base, obj), data)?;
            log::info!("config {i} {}: {loss:?}", obj.name());
            match obj {
                Objective::Mlm => row.mlm_loss = loss,
                Objective::Mtr => row.mtr_loss = loss,
            }
        }
        rows.push(row);
    }
    let (mut x, mut y, mut excluded) = (Vec::new(), Vec::new(), Vec::new());
    for r in &rows {
        match (r.mlm_loss, r.mtr_loss) {
            (Some(a), Some(b)) => {
                x.push(a);
                y.push(b);
            }
            _ => excluded.push(r.index),
        }
    }
    let rho = if x.len() >= 2 { spearman(&x, &y).ok() } else { None };
    Ok(CorrelationResult {
        rows,
        spearman: rho,
        excluded,
    })
}

fn row_hash(s: &str) -> [u8; 32] {
    Sha256::digest(s.as_bytes()).into()
}

/// Prefixes of `corpus` at each size, checked to be nested by hash
/// containment in the order given.
pub fn nested_subsets(corpus: &[String], sizes: &[usize]) -> Result<Vec<Vec<String>>, EvalError> {
    let mut out = Vec::with_capacity(sizes.len());
    for &n in sizes {
        if n == 0 || n > corpus.len() {
            return Err(EvalError::Data(format!("subset size {n} outside 1..={}", corpus.len())));
        }
        out.push(corpus[..n].to_vec());
    }
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by_key(|&i| sizes[i]);
    for w in order.windows(2) {
        let larger: HashSet<[u8; 32]> = out[w[1]].iter().map(|s| row_hash(s)).collect();
        if !out[w[0]].iter().all(|s| larger.contains(&row_hash(s))) {
            return Err(EvalError::Data(format!(
                "subset of size {} is not contained in size {}",
                sizes[w[0]], sizes[w[1]]
            )));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub config: usize,
    pub size: usize,
    pub val_loss: Option<f64>,
}

pub fn write_scaling_csv(rows: &[ScalingRow], path: &Path) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Trains each config on nested prefixes of `corpus` with identical settings
/// and a shared holdout and vocabulary (built from the largest subset).
/// Run directories are `size<n>/cfg<i>` under `out_dir`.
pub fn experiment_scaling(
    configs: &[HpConfig],
    corpus: &[String],
    sizes: &[usize],
    holdout: &[String],
    base: &TrainConfig,
    out_dir: &Path,
) -> Result<Vec<ScalingRow>, EvalError> {
    let subsets = nested_subsets(corpus, sizes)?;
    let largest = subsets.iter().max_by_key(|s| s.len()).expect("at least one size");
    let vocab = Vocab::build(largest.iter().map(String::as_str))?;
    let mut rows = Vec::new();
    for (subset, &size) in subsets.iter().zip(sizes) {
        let data = PretrainData::prepare_with_vocab(subset, holdout, &out_dir.join(format!("size{size}")), Some(&vocab))?;
        for (i, hp) in configs.iter().enumerate() {
            let dir = out_dir.join(format!("size{size}")).join(format!("cfg{i:03}"));
            let loss = pretrain_run(&dir, &hp.model, &train_config(hp, base, base.objective), &data)?;
            log::info!("config {i} at {size} rows: {loss:?}");
            rows.push(ScalingRow {
                config: i,
                size,
                val_loss: loss,
            });
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferRow {
    pub dataset: String,
    pub metric: String,
    pub encoder: String,
    pub pretrain_loss: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferFit {
    pub dataset: String,
    pub metric: String,
    pub points: usize,
    pub slope: Option<f64>,
    pub intercept: Option<f64>,
    pub r: Option<f64>,
}

/// Groups reports by dataset and metric and fits metric against pretraining
/// loss. Reports without a pretraining loss are skipped; groups that cannot be
/// fit keep empty fit fields.
pub fn experiment_transfer(reports: &[MetricReport]) -> (Vec<TransferRow>, Vec<TransferFit>) {
    let mut groups: BTreeMap<(String, String), Vec<TransferRow>> = BTreeMap::new();
    for r in reports {
        let Some(loss) = r.pretrain_loss else { continue };
        groups.entry((r.dataset.clone(), r.metric.clone())).or_default().push(TransferRow {
            dataset: r.dataset.clone(),
            metric: r.metric.clone(),
            encoder: r.encoder.clone(),
            pretrain_loss: loss,
            value: r.value,
        });
    }
    let mut rows = Vec::new();
    let mut fits = Vec::new();
    for ((dataset, metric), g) in groups {
        let x: Vec<f64> = g.iter().map(|r| r.pretrain_loss).collect();
        let y: Vec<f64> = g.iter().map(|r| r.value).collect();
        let fit = linear_fit(&x, &y).ok();
        fits.push(TransferFit {
            dataset,
            metric,
            points: g.len(),
            slope: fit.map(|f| f.slope),
            intercept: fit.map(|f| f.intercept),
            r: fit.map(|f| f.r),
        });
        rows.extend(g);
    }
    (rows, fits)
}

/// One line per point with its group's fit: `dataset,metric,encoder,
/// pretrain_loss,value,slope,intercept,r`.
pub fn write_transfer_csv(rows: &[TransferRow], fits: &[TransferFit], path: &Path) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["dataset", "metric", "encoder", "pretrain_loss", "value", "slope", "intercept", "r"])?;
    let opt = |v: Option<f64>| v.map(|v| format!("{v:?}")).unwrap_or_default();
    for r in rows {
        let f = fits
            .iter()
            .find(|f| f.dataset == r.dataset && f.metric == r.metric)
            .expect("every row belongs to a fit group");
        w.write_record([
            r.dataset.clone(),
            r.metric.clone(),
            r.encoder.clone(),
            format!("{:?}", r.pretrain_loss),
            format!("{:?}", r.value),
            opt(f.slope),
            opt(f.intercept),
            opt(f.r),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads JSON-lines reports, skipping blank lines.
pub fn read_reports(path: &Path) -> Result<Vec<MetricReport>, EvalError> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(EvalError::from))
        .collect()
}

/// Reads SMILES from a `.smi`/`.csv` file, dropping rows that fail to parse.
pub fn read_smiles(path: &Path) -> Result<(Vec<String>, Vec<Reject>), EvalError> {
    let (_, rows, rejects) = read_rows(path)?;
    Ok((rows.into_iter().map(|r| r.smiles).collect(), rejects))
}
