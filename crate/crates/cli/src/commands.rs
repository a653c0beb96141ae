use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use molpretrain::chem::{self, canonicalize, largest_fragment};
use molpretrain::evalbench::{
    self, experiment_loss_correlation, experiment_scaling, experiment_transfer, export_embeddings, finetune,
    pretrain_run, read_reports, read_smiles, write_scaling_csv, write_transfer_csv, EmbedMode, Encoder,
    FinetuneGrid, FinetuneSpec, PretrainData, TaskType,
};
use molpretrain::featurize::{descriptors_for_smiles, write_descriptor_csv, BASELINE_DESCRIPTORS};
use molpretrain::model::ModelConfig;
use molpretrain::splits::{split_csv_file, Fractions, Reject};
use molpretrain::tokenizer::{Vocab, MAX_VOCAB_SIZE};
use molpretrain::train::{
    derive_seed, fit_norm_stats, read_rows, sample_hyperparams, select_configs, HpConfig, Objective, SearchSpace,
    StopReason, TrainConfig, Trainer,
};
use serde::Serialize;

use crate::config::Config;
use crate::Numerical;

pub fn run(cfg: &Config) -> Result<()> {
    match cfg.command.as_str() {
        "canonicalize" => cmd_canonicalize(cfg),
        "tokenize" => cmd_tokenize(cfg),
        "vocab" => cmd_vocab(cfg),
        "descriptors" => cmd_descriptors(cfg),
        "split" => cmd_split(cfg),
        "pretrain" => cmd_pretrain(cfg),
        "resume" => cmd_resume(cfg),
        "hpsearch" => cmd_hpsearch(cfg),
        "finetune" => cmd_finetune(cfg),
        "experiment correlation" => cmd_correlation(cfg),
        "experiment scaling" => cmd_scaling(cfg),
        "experiment transfer" => cmd_transfer(cfg),
        "embed" => cmd_embed(cfg),
        other => bail!("unknown subcommand '{other}'"),
    }
}

/// First whitespace-separated field of every line, blank lines included so
/// row numbers match the file.
fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(text
        .lines()
        .map(|l| l.split_whitespace().next().unwrap_or("").to_string())
        .collect())
}

fn write_rejects(path: &Path, rejects: &[Reject]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["row", "smiles", "reason"])?;
    for r in rejects {
        w.write_record([r.row.to_string(), r.smiles.clone(), r.reason.clone()])?;
    }
    w.flush()?;
    Ok(())
}

fn reject(row: usize, smiles: &str, reason: impl ToString) -> Reject {
    Reject {
        row,
        smiles: smiles.to_string(),
        reason: reason.to_string(),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn cmd_canonicalize(cfg: &Config) -> Result<()> {
    let lines = read_lines(&cfg.required_path("in")?)?;
    let lf = cfg.flag("largest_fragment");
    let mut out = BufWriter::new(File::create(cfg.output("out"))?);
    let mut rejects = Vec::new();
    for (i, s) in lines.iter().enumerate() {
        match chem::parse_smiles(s) {
            Ok(mol) => {
                let mol = if lf { largest_fragment(&mol) } else { mol };
                writeln!(out, "{}", canonicalize(&mol))?;
            }
            Err(e) => rejects.push(reject(i, s, e)),
        }
    }
    out.flush()?;
    write_rejects(&cfg.out_dir.join("rejects.csv"), &rejects)?;
    eprintln!("{} canonical, {} rejected", lines.len() - rejects.len(), rejects.len());
    Ok(())
}

fn cmd_tokenize(cfg: &Config) -> Result<()> {
    let lines = read_lines(&cfg.required_path("in")?)?;
    let vocab = match cfg.path("vocab") {
        Some(p) => Vocab::load(&p)?,
        None => {
            let v = Vocab::build(lines.iter().filter(|l| !l.is_empty()))?;
            v.save(&cfg.out_dir.join("vocab.txt"))?;
            v
        }
    };
    let mut out = BufWriter::new(File::create(cfg.output("out"))?);
    let mut rejects = Vec::new();
    let (mut unk, mut truncated) = (0, 0);
    for (i, s) in lines.iter().enumerate() {
        if s.is_empty() {
            rejects.push(reject(i, s, "empty line"));
            continue;
        }
        match vocab.encode_smiles(s) {
            Ok(seq) => {
                unk += seq.unk_count;
                truncated += seq.truncated as usize;
                let ids: Vec<String> = seq.ids.iter().map(u32::to_string).collect();
                writeln!(out, "{}", ids.join(" "))?;
            }
            Err(e) => rejects.push(reject(i, s, e)),
        }
    }
    out.flush()?;
    write_rejects(&cfg.out_dir.join("rejects.csv"), &rejects)?;
    eprintln!(
        "{} sequences, {} rejected, {unk} unknown tokens, {truncated} truncated",
        lines.len() - rejects.len(),
        rejects.len()
    );
    Ok(())
}

fn cmd_vocab(cfg: &Config) -> Result<()> {
    let lines = read_lines(&cfg.required_path("in")?)?;
    let max: usize = cfg.parse("max_size")?;
    if max > MAX_VOCAB_SIZE {
        bail!("max_size {max} exceeds the cap of {MAX_VOCAB_SIZE}");
    }
    let vocab = Vocab::build_with_cap(lines.iter().filter(|l| !l.is_empty()), max)?;
    vocab.save(&cfg.output("out"))?;
    eprintln!("{} tokens", vocab.len());
    Ok(())
}

fn cmd_descriptors(cfg: &Config) -> Result<()> {
    let lines = read_lines(&cfg.required_path("in")?)?;
    let lf = cfg.flag("largest_fragment");
    let names: Vec<String> = BASELINE_DESCRIPTORS.iter().map(|s| s.to_string()).collect();
    let mut rows = Vec::new();
    let mut rejects = Vec::new();
    for (i, s) in lines.iter().enumerate() {
        match descriptors_for_smiles(s, lf) {
            Ok(d) => rows.push((s.clone(), d.select(&names)?.values)),
            Err(e) => rejects.push(reject(i, s, e)),
        }
    }
    write_descriptor_csv(File::create(cfg.output("out"))?, &names, &rows)?;
    write_rejects(&cfg.out_dir.join("rejects.csv"), &rejects)?;
    eprintln!("{} rows, {} rejected", rows.len(), rejects.len());
    Ok(())
}

fn cmd_split(cfg: &Config) -> Result<()> {
    let fractions = Fractions {
        train: cfg.parse("train_frac")?,
        valid: cfg.parse("valid_frac")?,
        test: cfg.parse("test_frac")?,
    };
    let s = split_csv_file(&cfg.required_path("in")?, &cfg.out_dir, fractions)?;
    eprintln!(
        "{} groups: train {}, valid {}, test {}, {} rejected",
        s.group_count,
        s.train,
        s.valid,
        s.test,
        s.rejects.len()
    );
    for w in &s.warnings {
        log::warn!("{w}");
    }
    Ok(())
}

fn train_config(cfg: &Config, objective: Objective) -> Result<TrainConfig> {
    let mut t = TrainConfig {
        objective,
        seed: cfg.parse("seed")?,
        ..TrainConfig::default()
    };
    for k in ["batch_size", "base_lr", "base_batch_size", "eval_interval", "max_steps", "checkpoint_every", "patience_steps", "mask_prob"] {
        t.set(k, cfg.str(k))?;
    }
    t.validate()?;
    Ok(t)
}

fn model_config(cfg: &Config, vocab_size: usize, tasks: usize) -> Result<ModelConfig> {
    let m = ModelConfig {
        hidden_size: cfg.parse("hidden_size")?,
        num_attention_heads: cfg.parse("num_attention_heads")?,
        num_hidden_layers: cfg.parse("num_hidden_layers")?,
        intermediate_size: cfg.parse("intermediate_size")?,
        dropout: cfg.parse("dropout")?,
        ..ModelConfig::tiny(vocab_size, tasks)
    };
    m.validate()?;
    Ok(m)
}

fn report_outcome(dir: &Path, out: &molpretrain::train::RunOutcome) {
    eprintln!(
        "{}: stopped at step {} ({:?}); best holdout loss {:.6} at step {}",
        dir.display(),
        out.step,
        out.reason,
        out.best_val,
        out.best_step
    );
}

fn numerical(e: molpretrain::train::TrainError) -> anyhow::Error {
    if e.is_numerical() {
        anyhow!(Numerical(e.to_string()))
    } else {
        e.into()
    }
}

fn cmd_pretrain(cfg: &Config) -> Result<()> {
    let dir = &cfg.out_dir;
    if dir.join("latest").exists() {
        bail!("{} already holds a run; use 'resume'", dir.display());
    }
    let objective = Objective::parse(cfg.str("objective"))?;
    let mut train = cfg.required_path("data")?;
    let mut holdout = cfg.required_path("holdout")?;
    let (names, rows, rejects) = read_rows(&train)?;
    if !rejects.is_empty() {
        log::warn!("{} training rows rejected", rejects.len());
    }
    let vocab = match cfg.path("vocab") {
        Some(p) => Vocab::load(&p)?,
        None => Vocab::build(rows.iter().map(|r| r.smiles.as_str()))?,
    };
    let norm = match objective {
        Objective::Mlm => None,
        Objective::Mtr if !names.is_empty() => Some(fit_norm_stats(&train)?),
        Objective::Mtr => {
            // no label columns: derive descriptor labels
            let smiles: Vec<String> = rows.into_iter().map(|r| r.smiles).collect();
            let (held, _) = read_smiles(&holdout)?;
            let data = PretrainData::prepare_with_vocab(&smiles, &held, &dir.join("data"), Some(&vocab))?;
            train = data.mtr_train;
            holdout = data.mtr_holdout;
            Some(data.norm)
        }
    };
    let tasks = norm.as_ref().map_or(1, |n| n.task_count());
    let model = model_config(cfg, vocab.len(), tasks)?;
    let tc = train_config(cfg, objective)?;
    let mut t = Trainer::create(dir, &model, &tc, &train, &holdout, &vocab, norm.as_ref())?;
    eprintln!("{} parameters, patience {} steps", model.param_count(), t.patience());
    let out = t.run(cfg.opt("stop_at")?).map_err(numerical)?;
    report_outcome(dir, &out);
    Ok(())
}

fn cmd_resume(cfg: &Config) -> Result<()> {
    let mut t = Trainer::resume(&cfg.out_dir)?;
    let out = t.run(cfg.opt("stop_at")?).map_err(numerical)?;
    if out.reason == StopReason::AlreadyFinished {
        eprintln!("run already finished");
    }
    report_outcome(&cfg.out_dir, &out);
    Ok(())
}

fn search_configs(cfg: &Config, n: usize, vocab: usize, tasks: usize) -> Result<Vec<HpConfig>> {
    let space = SearchSpace::from_kv(&cfg.group_kv("search_"))?;
    let seed = derive_seed(cfg.parse("seed")?, "hpsearch");
    Ok(sample_hyperparams(n, seed, &space, vocab, tasks)?)
}

fn prepare_data(cfg: &Config) -> Result<PretrainData> {
    let (train, r1) = read_smiles(&cfg.required_path("data")?)?;
    let (holdout, r2) = read_smiles(&cfg.required_path("holdout")?)?;
    if !r1.is_empty() || !r2.is_empty() {
        log::warn!("{} rows rejected", r1.len() + r2.len());
    }
    Ok(PretrainData::prepare(&train, &holdout, &cfg.out_dir.join("data"))?)
}

#[derive(Serialize)]
struct SearchRow {
    index: usize,
    hidden_size: usize,
    num_attention_heads: usize,
    num_hidden_layers: usize,
    intermediate_size: usize,
    dropout: f64,
    lr: f64,
    param_count: usize,
    val_loss: Option<f64>,
    selected: Option<usize>,
}

fn cmd_hpsearch(cfg: &Config) -> Result<()> {
    let objective = Objective::parse(cfg.str("objective"))?;
    let data = prepare_data(cfg)?;
    let n: usize = cfg.parse("n_configs")?;
    let configs = search_configs(cfg, n, data.vocab.len(), data.norm.task_count())?;
    let base = train_config(cfg, objective)?;
    let mut losses = Vec::with_capacity(n);
    for (i, hp) in configs.iter().enumerate() {
        let tc = TrainConfig {
            base_lr: hp.lr,
            base_batch_size: base.batch_size,
            ..base.clone()
        };
        let loss = pretrain_run(&cfg.out_dir.join(format!("runs/cfg{i:03}")), &hp.model, &tc, &data)?;
        eprintln!("config {i}: {}", loss.map_or("diverged".to_string(), |l| format!("{l:.6}")));
        losses.push(loss.unwrap_or(f64::NAN));
    }
    let selected = select_configs(&losses, cfg.parse("select")?);
    let mut w = csv::Writer::from_path(cfg.out_dir.join("hpsearch.csv"))?;
    for (i, hp) in configs.iter().enumerate() {
        let m = &hp.model;
        w.serialize(SearchRow {
            index: i,
            hidden_size: m.hidden_size,
            num_attention_heads: m.num_attention_heads,
            num_hidden_layers: m.num_hidden_layers,
            intermediate_size: m.intermediate_size,
            dropout: m.dropout,
            lr: hp.lr,
            param_count: m.param_count(),
            val_loss: losses[i].is_finite().then_some(losses[i]),
            selected: selected.iter().position(|&s| s == i),
        })?;
    }
    w.flush()?;
    let dirs: Vec<String> = selected.iter().map(|i| format!("runs/cfg{i:03}")).collect();
    std::fs::write(cfg.out_dir.join("selected.txt"), dirs.join("\n") + "\n")?;
    eprintln!("selected {selected:?}");
    Ok(())
}

fn cmd_finetune(cfg: &Config) -> Result<()> {
    let split_dir = cfg.required_path("split_dir")?;
    let task = TaskType::parse(cfg.str("task"))?;
    let seed: u64 = cfg.parse("seed")?;
    let encoder = match cfg.path("checkpoint") {
        Some(p) => Encoder::load(&p)?,
        None => {
            let (train, _) = read_smiles(&split_dir.join("train.csv"))?;
            let vocab = Vocab::build(train.iter())?;
            let model = model_config(cfg, vocab.len(), 1)?;
            Encoder::random(&model, vocab, seed)?
        }
    };
    let mut spec = FinetuneSpec::new(&split_dir, task);
    spec.max_epochs = cfg.parse("max_epochs")?;
    spec.patience_epochs = cfg.parse("patience_epochs")?;
    spec.grid = FinetuneGrid {
        lrs: cfg.list("lrs")?,
        seeds: cfg.list("seeds")?,
        batch_sizes: cfg.list("batch_sizes")?,
    };
    if !cfg.str("dataset").is_empty() {
        spec.dataset = cfg.str("dataset").to_string();
    }
    let report = finetune(&spec, &encoder).map_err(|e| {
        if e.is_numerical() {
            anyhow!(Numerical(e.to_string()))
        } else {
            e.into()
        }
    })?;
    let mut f = std::fs::OpenOptions::new().create(true).append(true).open(cfg.output("out"))?;
    writeln!(f, "{}", serde_json::to_string(&report)?)?;
    eprintln!("{} {} = {:.6} (config {:?})", report.dataset, report.metric, report.value, report.config);
    Ok(())
}

fn cmd_correlation(cfg: &Config) -> Result<()> {
    let data = prepare_data(cfg)?;
    let configs = search_configs(cfg, cfg.parse("n_configs")?, data.vocab.len(), data.norm.task_count())?;
    let base = train_config(cfg, Objective::Mlm)?;
    let res = experiment_loss_correlation(&configs, &data, &base, &cfg.out_dir.join("runs"))?;
    res.write_csv(&cfg.out_dir.join("correlation.csv"))?;
    write_json(&cfg.out_dir.join("correlation.json"), &res)?;
    match res.spearman {
        Some(r) => eprintln!("spearman rho = {r:.4} over {} configs", res.rows.len() - res.excluded.len()),
        None => eprintln!("too few converged configs for a rank correlation"),
    }
    Ok(())
}

fn cmd_scaling(cfg: &Config) -> Result<()> {
    let (corpus, _) = read_smiles(&cfg.required_path("data")?)?;
    let (holdout, _) = read_smiles(&cfg.required_path("holdout")?)?;
    let sizes: Vec<usize> = cfg.list("sizes")?;
    let largest = *sizes.iter().max().expect("non-empty");
    if largest > corpus.len() {
        bail!("size {largest} exceeds the corpus ({} rows)", corpus.len());
    }
    let vocab = Vocab::build(corpus[..largest].iter())?;
    let configs = search_configs(cfg, cfg.parse("n_configs")?, vocab.len(), BASELINE_DESCRIPTORS.len())?;
    let base = train_config(cfg, Objective::Mlm)?;
    let rows = experiment_scaling(&configs, &corpus, &sizes, &holdout, &base, &cfg.out_dir.join("runs"))?;
    write_scaling_csv(&rows, &cfg.out_dir.join("scaling.csv"))?;
    for r in &rows {
        eprintln!("config {} size {}: {:?}", r.config, r.size, r.val_loss);
    }
    Ok(())
}

fn cmd_transfer(cfg: &Config) -> Result<()> {
    let mut reports = Vec::new();
    for (_, path) in cfg.inputs().into_iter().filter(|(k, _)| k == "reports") {
        reports.extend(read_reports(&path)?);
    }
    let (rows, fits) = experiment_transfer(&reports);
    write_transfer_csv(&rows, &fits, &cfg.output("out"))?;
    for f in &fits {
        eprintln!("{} {}: n={} slope={:?} r={:?}", f.dataset, f.metric, f.points, f.slope, f.r);
    }
    Ok(())
}

fn cmd_embed(cfg: &Config) -> Result<()> {
    let mode = match cfg.str("mode") {
        "cls" => EmbedMode::Cls,
        "ecfp" => EmbedMode::Ecfp {
            radius: cfg.parse("radius")?,
            n_bits: cfg.parse("n_bits")?,
        },
        other => bail!("unknown embedding mode '{other}'"),
    };
    let encoder = cfg.path("checkpoint").map(|p| Encoder::load(&p)).transpose()?;
    let distances = cfg.flag("distances").then(|| cfg.out_dir.join("distances.csv"));
    let summary = export_embeddings(
        &cfg.required_path("in")?,
        mode,
        encoder.as_ref(),
        &cfg.output("out"),
        distances.as_deref(),
    )?;
    write_json(&cfg.out_dir.join("embed_summary.json"), &summary)?;
    eprintln!("{} rows x {}, {} rejected", summary.rows, summary.width, summary.rejects.len());
    Ok(())
}

/// Whether an error chain holds a numerical failure.
pub fn is_numerical(e: &anyhow::Error) -> bool {
    e.chain().any(|c| {
        c.is::<Numerical>()
            || c.downcast_ref::<evalbench::EvalError>().is_some_and(|e| e.is_numerical())
            || c.downcast_ref::<molpretrain::train::TrainError>().is_some_and(|e| e.is_numerical())
    })
}
