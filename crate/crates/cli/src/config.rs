//! Flat `key=value` configuration: per-subcommand key tables, file parsing and
//! the defaults < file < flags merge.

use std::collections::BTreeMap;
use std::path::{Component, Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use molpretrain::train::{SearchSpace, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    /// Plain value.
    Value,
    /// Path read by the run; hashed into the manifest.
    Input,
    /// File name inside the run directory.
    Output,
    /// `true`/`false`; also settable by a bare flag.
    Switch,
}

#[derive(Debug, Clone)]
pub struct Key {
    pub name: &'static str,
    pub kind: Kind,
    /// `None` means required.
    pub default: Option<String>,
    pub help: &'static str,
}

fn key(name: &'static str, kind: Kind, default: Option<&str>, help: &'static str) -> Key {
    Key {
        name,
        kind,
        default: default.map(str::to_string),
        help,
    }
}

fn input(name: &'static str, help: &'static str) -> Key {
    key(name, Kind::Input, None, help)
}

fn optional_input(name: &'static str, help: &'static str) -> Key {
    key(name, Kind::Input, Some(""), help)
}

fn output(name: &'static str, default: &str, help: &'static str) -> Key {
    key(name, Kind::Output, Some(default), help)
}

fn value(name: &'static str, default: &str, help: &'static str) -> Key {
    key(name, Kind::Value, Some(default), help)
}

fn switch(name: &'static str, default: bool, help: &'static str) -> Key {
    key(name, Kind::Switch, Some(if default { "true" } else { "false" }), help)
}

fn common() -> Vec<Key> {
    vec![
        value("seed", "0", "master seed; subsystem seeds are derived from it"),
        switch("deterministic", false, "single-threaded kernels"),
    ]
}

fn model_keys() -> Vec<Key> {
    vec![
        value("hidden_size", "64", "encoder width"),
        value("num_attention_heads", "4", "attention heads"),
        value("num_hidden_layers", "2", "encoder layers"),
        value("intermediate_size", "256", "feed-forward width"),
        value("dropout", "0.1", "dropout probability"),
    ]
}

const TRAIN_HELP: [(&str, &str); 8] = [
    ("batch_size", "rows per step"),
    ("base_lr", "learning rate at base_batch_size"),
    ("base_batch_size", "batch size the learning rate refers to"),
    ("eval_interval", "steps between holdout evaluations"),
    ("max_steps", "step budget"),
    ("checkpoint_every", "steps between checkpoints"),
    ("patience_steps", "steps without improvement before stopping; 0 = one pass"),
    ("mask_prob", "MLM masking rate"),
];

fn train_keys() -> Vec<Key> {
    let d = TrainConfig::default();
    let defaults: BTreeMap<&str, String> = d.pairs().into_iter().collect();
    TRAIN_HELP
        .iter()
        .map(|&(name, help)| key(name, Kind::Value, Some(&defaults[name]), help))
        .collect()
}

const SEARCH_KEYS: [(&str, &str); 8] = [
    ("search_hidden_size", "hidden size range lo..hi"),
    ("search_num_attention_heads", "head count range"),
    ("search_num_hidden_layers", "layer count range"),
    ("search_intermediate_size", "feed-forward width range"),
    ("search_dropout", "dropout range"),
    ("search_lr", "learning rate range, sampled log-uniformly"),
    ("search_min_params", "smallest accepted parameter count"),
    ("search_max_params", "largest accepted parameter count"),
];

fn search_keys() -> Vec<Key> {
    let text = SearchSpace::default().to_kv();
    let defaults: BTreeMap<&str, &str> = text.lines().filter_map(|l| l.split_once('=')).collect();
    SEARCH_KEYS
        .iter()
        .map(|&(name, help)| key(name, Kind::Value, Some(defaults[&name["search_".len()..]]), help))
        .collect()
}

/// Key table for a subcommand path such as `split` or `experiment scaling`.
pub fn keys_for(command: &str) -> Vec<Key> {
    let mut keys = common();
    match command {
        "canonicalize" => keys.extend([
            input("in", "SMILES file, one per line"),
            output("out", "canonical.smi", "canonical SMILES"),
            switch("largest_fragment", false, "keep only the largest fragment"),
        ]),
        "tokenize" => keys.extend([
            input("in", "SMILES file"),
            optional_input("vocab", "vocabulary file; built from the input when empty"),
            output("out", "tokens.txt", "token ids, one sequence per line"),
        ]),
        "vocab" => keys.extend([
            input("in", "SMILES corpus"),
            output("out", "vocab.txt", "vocabulary"),
            value("max_size", "591", "vocabulary cap including special tokens"),
        ]),
        "descriptors" => keys.extend([
            input("in", "SMILES file"),
            output("out", "descriptors.csv", "descriptor table"),
            switch("largest_fragment", false, "describe only the largest fragment"),
        ]),
        "split" => keys.extend([
            input("in", "CSV with a smiles column"),
            value("train_frac", "0.8", "train fraction"),
            value("valid_frac", "0.1", "validation fraction"),
            value("test_frac", "0.1", "test fraction"),
        ]),
        "pretrain" => {
            keys.extend([
                input("data", "training rows (.smi, or .csv with smiles and label columns)"),
                input("holdout", "holdout rows used for validation loss"),
                optional_input("vocab", "vocabulary file; built from the training rows when empty"),
                value("objective", "mlm", "mlm or mtr"),
                value("stop_at", "", "stop with a resumable checkpoint after this step"),
            ]);
            keys.extend(model_keys());
            keys.extend(train_keys());
        }
        "resume" => keys.push(value("stop_at", "", "stop with a resumable checkpoint after this step")),
        "hpsearch" => {
            keys.extend([
                input("data", "training SMILES"),
                input("holdout", "holdout SMILES"),
                value("objective", "mlm", "mlm or mtr"),
                value("n_configs", "50", "sampled configurations"),
                value("select", "5", "configurations kept at evenly spaced loss quantiles"),
            ]);
            keys.extend(search_keys());
            keys.extend(train_keys());
        }
        "finetune" => {
            keys.extend([
            input("split_dir", "directory with train.csv, valid.csv and test.csv"),
            value("task", "binary", "binary or regression"),
            optional_input("checkpoint", "pretraining run directory; random encoder when empty"),
            value("dataset", "", "dataset name in the report; split directory name when empty"),
            value("lrs", "1e-5,3e-5,1e-4", "learning rates"),
            value("seeds", "0,1,2", "seeds"),
            value("batch_sizes", "16,32", "batch sizes"),
            value("max_epochs", "100", "epoch budget per grid point"),
            value("patience_epochs", "10", "epochs without improvement before stopping"),
            output("out", "reports.jsonl", "metric report"),
            ]);
            // architecture of the random encoder used without a checkpoint
            keys.extend(model_keys());
        }
        "experiment correlation" => {
            keys.extend([
                input("data", "training SMILES"),
                input("holdout", "holdout SMILES"),
                value("n_configs", "5", "sampled configurations"),
            ]);
            keys.extend(search_keys());
            keys.extend(train_keys());
        }
        "experiment scaling" => {
            keys.extend([
                input("data", "corpus; subsets are its prefixes"),
                input("holdout", "holdout SMILES"),
                value("sizes", "1000,5000,20000", "subset sizes"),
                value("n_configs", "5", "sampled configurations"),
            ]);
            keys.extend(search_keys());
            keys.extend(train_keys());
        }
        "experiment transfer" => keys.extend([
            input("reports", "comma-separated JSONL report files"),
            output("out", "transfer.csv", "per-report rows with per-group fits"),
        ]),
        "embed" => keys.extend([
            input("in", ".smi or .csv (smiles column, optional label column)"),
            value("mode", "cls", "cls or ecfp"),
            optional_input("checkpoint", "pretraining run directory (cls mode)"),
            value("radius", "2", "ECFP radius"),
            value("n_bits", "2048", "ECFP width"),
            switch("distances", false, "also write the pairwise Jaccard distance matrix (ecfp)"),
            output("out", "embeddings.csv", "embedding table"),
        ]),
        other => panic!("no key table for '{other}'"),
    }
    keys
}

/// Parses `key=value` lines; `#` starts a comment, blank lines are skipped.
pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| anyhow!("config line {}: expected key=value, got '{raw}'", i + 1))?;
        let k = k.trim();
        if k.is_empty() {
            bail!("config line {}: empty key", i + 1);
        }
        if map.insert(k.to_string(), v.trim().to_string()).is_some() {
            bail!("config line {}: duplicate key '{k}'", i + 1);
        }
    }
    Ok(map)
}

pub fn render_config(map: &BTreeMap<String, String>) -> String {
    map.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
}

/// Resolved configuration for one run.
#[derive(Debug, Clone)]
pub struct Config {
    pub command: String,
    pub keys: Vec<Key>,
    pub values: BTreeMap<String, String>,
    pub out_dir: PathBuf,
}

impl Config {
    /// Merges defaults, then the config file, then flags. Unknown keys in the
    /// file are an error.
    pub fn resolve(
        command: &str,
        file: Option<&Path>,
        flags: BTreeMap<String, String>,
        out_dir: PathBuf,
    ) -> Result<Config> {
        let keys = keys_for(command);
        let mut values: BTreeMap<String, String> = keys
            .iter()
            .filter_map(|k| k.default.clone().map(|d| (k.name.to_string(), d)))
            .collect();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
            for (k, v) in parse_config(&text)? {
                if !keys.iter().any(|key| key.name == k) {
                    bail!("unknown config key '{k}' for '{command}'");
                }
                values.insert(k, v);
            }
        }
        values.extend(flags);
        for k in &keys {
            if !values.contains_key(k.name) {
                bail!("missing required key '{}' (--{})", k.name, k.name.replace('_', "-"));
            }
            if k.kind == Kind::Switch {
                parse_bool(k.name, &values[k.name])?;
            }
            if k.kind == Kind::Output {
                check_output_name(k.name, &values[k.name])?;
            }
        }
        Ok(Config {
            command: command.to_string(),
            keys,
            values,
            out_dir,
        })
    }

    pub fn str(&self, k: &str) -> &str {
        self.values.get(k).map(String::as_str).unwrap_or_else(|| panic!("undeclared key '{k}'"))
    }

    pub fn parse<V: std::str::FromStr>(&self, k: &str) -> Result<V> {
        let v = self.str(k);
        v.parse().map_err(|_| anyhow!("invalid value '{v}' for '{k}'"))
    }

    pub fn opt<V: std::str::FromStr>(&self, k: &str) -> Result<Option<V>> {
        if self.str(k).is_empty() {
            Ok(None)
        } else {
            self.parse(k).map(Some)
        }
    }

    pub fn list<V: std::str::FromStr>(&self, k: &str) -> Result<Vec<V>> {
        let v = self.str(k);
        let out = v
            .split(',')
            .map(|s| s.trim().parse().map_err(|_| anyhow!("invalid list item '{s}' in '{k}'")))
            .collect::<Result<Vec<V>>>()?;
        if out.is_empty() {
            bail!("'{k}' is empty");
        }
        Ok(out)
    }

    pub fn flag(&self, k: &str) -> bool {
        parse_bool(k, self.str(k)).expect("validated at resolve")
    }

    pub fn path(&self, k: &str) -> Option<PathBuf> {
        let v = self.str(k);
        (!v.is_empty()).then(|| PathBuf::from(v))
    }

    pub fn required_path(&self, k: &str) -> Result<PathBuf> {
        self.path(k).ok_or_else(|| anyhow!("'{k}' must be set"))
    }

    /// Output file inside the run directory.
    pub fn output(&self, k: &str) -> PathBuf {
        self.out_dir.join(self.str(k))
    }

    /// Input paths (comma lists split), for hashing.
    pub fn inputs(&self) -> Vec<(String, PathBuf)> {
        let mut out = Vec::new();
        for k in self.keys.iter().filter(|k| k.kind == Kind::Input) {
            for part in self.str(k.name).split(',').map(str::trim).filter(|p| !p.is_empty()) {
                out.push((k.name.to_string(), PathBuf::from(part)));
            }
        }
        out
    }

    /// `prefix`-stripped keys, for handing groups to core parsers.
    pub fn group_kv(&self, prefix: &str) -> String {
        self.values
            .iter()
            .filter_map(|(k, v)| k.strip_prefix(prefix).map(|k| format!("{k}={v}\n")))
            .collect()
    }
}

pub fn parse_bool(k: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => bail!("'{k}' expects true or false, got '{v}'"),
    }
}

/// Output names are relative paths that stay inside the run directory.
fn check_output_name(k: &str, v: &str) -> Result<()> {
    let p = Path::new(v);
    if v.is_empty() || !p.components().all(|c| matches!(c, Component::Normal(_))) {
        bail!("'{k}' must be a relative path inside the run directory, got '{v}'");
    }
    Ok(())
}
