use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::ModelError;
use crate::tokenizer::{MAX_SEQ_LEN, NUM_SPECIAL};

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub hidden_size: usize,
    pub num_attention_heads: usize,
    pub num_hidden_layers: usize,
    pub intermediate_size: usize,
    pub dropout: f64,
    pub max_position: usize,
    pub vocab_size: usize,
    pub mtr_task_count: usize,
}

const KEYS: [&str; 8] = [
    "hidden_size",
    "num_attention_heads",
    "num_hidden_layers",
    "intermediate_size",
    "dropout",
    "max_position",
    "vocab_size",
    "mtr_task_count",
];

impl ModelConfig {
    /// Hidden 64, 2 layers, 4 heads, intermediate 256.
    pub fn tiny(vocab_size: usize, mtr_task_count: usize) -> Self {
        ModelConfig {
            hidden_size: 64,
            num_attention_heads: 4,
            num_hidden_layers: 2,
            intermediate_size: 256,
            dropout: 0.0,
            max_position: MAX_SEQ_LEN,
            vocab_size,
            mtr_task_count,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_size / self.num_attention_heads
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::Config(m));
        if self.hidden_size == 0 || self.num_hidden_layers == 0 || self.intermediate_size == 0 {
            return bad("hidden_size, num_hidden_layers and intermediate_size must be positive".into());
        }
        if self.num_attention_heads == 0 || self.hidden_size % self.num_attention_heads != 0 {
            return bad(format!(
                "hidden_size {} is not divisible by num_attention_heads {}",
                self.hidden_size, self.num_attention_heads
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.max_position != MAX_SEQ_LEN {
            return bad(format!("max_position must be {MAX_SEQ_LEN}"));
        }
        if self.vocab_size <= NUM_SPECIAL {
            return bad(format!("vocab_size {} leaves no room past the special tokens", self.vocab_size));
        }
        if self.mtr_task_count == 0 {
            return bad("mtr_task_count must be positive".into());
        }
        Ok(())
    }

    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.pairs() {
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }

    pub fn pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            (KEYS[0], self.hidden_size.to_string()),
            (KEYS[1], self.num_attention_heads.to_string()),
            (KEYS[2], self.num_hidden_layers.to_string()),
            (KEYS[3], self.intermediate_size.to_string()),
            (KEYS[4], self.dropout.to_string()),
            (KEYS[5], self.max_position.to_string()),
            (KEYS[6], self.vocab_size.to_string()),
            (KEYS[7], self.mtr_task_count.to_string()),
        ]
    }

    /// Parses `key=value` lines; blank lines and `#` comments are skipped.
    /// Unknown or missing keys are errors.
    pub fn from_kv(text: &str) -> Result<Self, ModelError> {
        let mut map = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| ModelError::Config(format!("line {}: expected key=value", n + 1)))?;
            let k = k.trim();
            if !KEYS.contains(&k) {
                return Err(ModelError::Config(format!("unknown key '{k}'")));
            }
            map.insert(k.to_string(), v.trim().to_string());
        }
        let get = |k: &str| -> Result<&str, ModelError> {
            map.get(k)
                .map(String::as_str)
                .ok_or_else(|| ModelError::Config(format!("missing key '{k}'")))
        };
        let int = |k: &str| -> Result<usize, ModelError> {
            get(k)?
                .parse()
                .map_err(|_| ModelError::Config(format!("{k}: not an integer")))
        };
        let cfg = ModelConfig {
            hidden_size: int(KEYS[0])?,
            num_attention_heads: int(KEYS[1])?,
            num_hidden_layers: int(KEYS[2])?,
            intermediate_size: int(KEYS[3])?,
            dropout: get(KEYS[4])?
                .parse()
                .map_err(|_| ModelError::Config("dropout: not a number".into()))?,
            max_position: int(KEYS[5])?,
            vocab_size: int(KEYS[6])?,
            mtr_task_count: int(KEYS[7])?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Size of one encoder layer.
    pub fn layer_param_count(&self) -> usize {
        let (h, i) = (self.hidden_size, self.intermediate_size);
        4 * h * h + 2 * h * i + 9 * h + i
    }

    /// Encoder plus MLM and MTR heads, excluding any finetune head.
    pub fn param_count(&self) -> usize {
        let (h, v, d) = (self.hidden_size, self.vocab_size, self.mtr_task_count);
        v * h + self.max_position * h + self.num_hidden_layers * self.layer_param_count() + 2 * h + (h * v + v) + (h * d + d)
    }
}
