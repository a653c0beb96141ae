//! `molpretrain`: the pipeline as subcommands. Every run writes into its
//! `--out-dir` together with a manifest and the resolved `config.txt`, which
//! can be passed back as `--config` to repeat the run.

mod commands;
mod config;
mod manifest;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Arg, ArgAction, ArgMatches, Command};

use config::{render_config, Config, Kind};
use manifest::{hash_path, manifest_path, now, InputHash, RunManifest, MANIFEST_SCHEMA_VERSION};

/// Leaf subcommands, `experiment` ones written with a space.
pub const COMMANDS: [&str; 13] = [
    "canonicalize",
    "tokenize",
    "vocab",
    "descriptors",
    "split",
    "pretrain",
    "resume",
    "hpsearch",
    "finetune",
    "experiment correlation",
    "experiment scaling",
    "experiment transfer",
    "embed",
];

/// Marker for failures reported with exit code 2.
#[derive(Debug)]
pub struct Numerical(pub String);

impl std::fmt::Display for Numerical {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "numerical failure: {}", self.0)
    }
}

impl std::error::Error for Numerical {}

fn flag_name(key: &str) -> String {
    key.replace('_', "-")
}

fn about(command: &str) -> &'static str {
    match command {
        "canonicalize" => "Write the canonical SMILES of every parsable line",
        "tokenize" => "Encode SMILES as token ids",
        "vocab" => "Build a token vocabulary from a corpus",
        "descriptors" => "Compute the baseline descriptor table",
        "split" => "Scaffold split a CSV into train/valid/test",
        "pretrain" => "Pretrain an encoder with the MLM or MTR objective",
        "resume" => "Continue a pretraining run from its latest checkpoint",
        "hpsearch" => "Pretrain sampled architectures and pick loss quantiles",
        "finetune" => "Finetune an encoder on a split dataset and report the test metric",
        "experiment correlation" => "MLM against MTR loss across sampled architectures",
        "experiment scaling" => "Holdout loss against pretraining corpus size",
        "experiment transfer" => "Fit downstream metric against pretraining loss",
        "embed" => "Export CLS embeddings or ECFP bits",
        _ => "",
    }
}

fn leaf(command: &str, name: &'static str) -> Command {
    let mut cmd = Command::new(name)
        .about(about(command))
        .arg(
            Arg::new("config")
                .long("config")
                .value_name("FILE")
                .help("key=value configuration file; flags override it"),
        )
        .arg(
            Arg::new("out-dir")
                .long("out-dir")
                .value_name("DIR")
                .required(true)
                .help("run directory; every output is written under it"),
        );
    for k in config::keys_for(command) {
        let arg = Arg::new(k.name).long(flag_name(k.name)).help(k.help);
        cmd = cmd.arg(match k.kind {
            Kind::Switch => arg.num_args(0..=1).default_missing_value("true").value_name("BOOL"),
            _ => arg.value_name("VALUE"),
        });
    }
    cmd
}

fn cli() -> Command {
    let mut root = Command::new("molpretrain")
        .version(env!("CARGO_PKG_VERSION"))
        .about("Molecular transformer pretraining pipeline")
        .subcommand_required(true);
    let mut experiment = Command::new("experiment")
        .about("Pretraining analyses")
        .subcommand_required(true);
    for c in COMMANDS {
        match c.strip_prefix("experiment ") {
            Some(sub) => {
                let name: &'static str = match sub {
                    "correlation" => "correlation",
                    "scaling" => "scaling",
                    _ => "transfer",
                };
                experiment = experiment.subcommand(leaf(c, name));
            }
            None => root = root.subcommand(leaf(c, c)),
        }
    }
    root.subcommand(experiment).arg(
        Arg::new("verbose")
            .short('v')
            .long("verbose")
            .action(ArgAction::Count)
            .global(true)
            .help("more log output"),
    )
}

fn resolve(matches: &ArgMatches) -> Result<Config> {
    let (name, sub) = matches.subcommand().expect("subcommand required");
    let (command, leaf) = match sub.subcommand() {
        Some((inner, m)) => (format!("{name} {inner}"), m),
        None => (name.to_string(), sub),
    };
    let mut flags = BTreeMap::new();
    for k in config::keys_for(&command) {
        if let Some(v) = leaf.get_one::<String>(k.name) {
            flags.insert(k.name.to_string(), v.clone());
        }
    }
    let out_dir = PathBuf::from(leaf.get_one::<String>("out-dir").expect("required"));
    let file = leaf.get_one::<String>("config").map(PathBuf::from);
    Config::resolve(&command, file.as_deref(), flags, out_dir)
}

fn configure_threads(cfg: &Config) -> Result<()> {
    let n = if cfg.flag("deterministic") {
        1
    } else if let Ok(v) = std::env::var("MOLPRETRAIN_THREADS") {
        v.parse().with_context(|| format!("MOLPRETRAIN_THREADS must be a positive integer, got '{v}'"))?
    } else {
        std::thread::available_parallelism().map_or(1, |n| n.get())
    };
    molpretrain::tensor::set_kernel_threads(n);
    Ok(())
}

fn execute(cfg: &Config) -> Result<()> {
    configure_threads(cfg)?;
    std::fs::create_dir_all(&cfg.out_dir).with_context(|| format!("creating {}", cfg.out_dir.display()))?;
    let mut inputs = Vec::new();
    for (key, path) in cfg.inputs() {
        inputs.push(InputHash {
            key,
            sha256: hash_path(&path)?,
            path: path.display().to_string(),
        });
    }
    let path = manifest_path(&cfg.out_dir);
    let mut m = RunManifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        subcommand: cfg.command.clone(),
        config: cfg.values.clone(),
        inputs,
        seed: cfg.parse("seed")?,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        started: now(),
        finished: None,
        exit_code: None,
    };
    m.write(&path)?;
    if cfg.command != "resume" {
        std::fs::write(cfg.out_dir.join("config.txt"), render_config(&cfg.values))?;
    }
    let result = commands::run(cfg);
    m.finished = Some(now());
    m.exit_code = Some(exit_code(&result));
    m.write(&path)?;
    result
}

fn exit_code(r: &Result<()>) -> i32 {
    match r {
        Ok(()) => 0,
        Err(e) if commands::is_numerical(e) => 2,
        Err(_) => 1,
    }
}

fn main() -> ExitCode {
    let matches = cli().get_matches();
    let level = match matches.get_count("verbose") {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = resolve(&matches).and_then(|cfg| execute(&cfg));
    if let Err(e) = &result {
        eprintln!("error: {e:#}");
    }
    ExitCode::from(exit_code(&result) as u8)
}
