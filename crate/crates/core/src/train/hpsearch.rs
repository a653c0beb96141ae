//! Random architecture search and quantile selection of finished runs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::checkpoint::parse_kv;
use super::TrainError;
use crate::model::ModelConfig;
use crate::tokenizer::MAX_SEQ_LEN;

#[derive(Debug, Clone, PartialEq)]
pub struct SearchSpace {
    pub hidden_size: (usize, usize),
    pub num_attention_heads: (usize, usize),
    pub num_hidden_layers: (usize, usize),
    pub intermediate_size: (usize, usize),
    pub dropout: (f64, f64),
    pub lr: (f64, f64),
    pub min_params: usize,
    pub max_params: usize,
}

impl Default for SearchSpace {
    fn default() -> Self {
        SearchSpace {
            hidden_size: (32, 128),
            num_attention_heads: (1, 4),
            num_hidden_layers: (1, 3),
            intermediate_size: (64, 512),
            dropout: (0.0, 0.2),
            lr: (1e-4, 3e-3),
            min_params: 0,
            max_params: usize::MAX,
        }
    }
}

fn range<V: std::str::FromStr + PartialOrd>(k: &str, v: &str) -> Result<(V, V), TrainError> {
    let bad = || TrainError::Config(format!("{k}: expected 'lo..hi', got '{v}'"));
    let (a, b) = v.split_once("..").ok_or_else(bad)?;
    let (a, b): (V, V) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
    if a > b {
        return Err(bad());
    }
    Ok((a, b))
}

impl SearchSpace {
    /// `key=lo..hi` lines for the six searched quantities plus
    /// `min_params=` / `max_params=`.
    pub fn from_kv(text: &str) -> Result<Self, TrainError> {
        let mut s = SearchSpace::default();
        for (k, v) in parse_kv(text)? {
            match k.as_str() {
                "hidden_size" => s.hidden_size = range(&k, &v)?,
                "num_attention_heads" => s.num_attention_heads = range(&k, &v)?,
                "num_hidden_layers" => s.num_hidden_layers = range(&k, &v)?,
                "intermediate_size" => s.intermediate_size = range(&k, &v)?,
                "dropout" => s.dropout = range(&k, &v)?,
                "lr" => s.lr = range(&k, &v)?,
                "min_params" => s.min_params = v.parse().map_err(|_| TrainError::Config(format!("{k}: '{v}'")))?,
                "max_params" => s.max_params = v.parse().map_err(|_| TrainError::Config(format!("{k}: '{v}'")))?,
                _ => return Err(TrainError::Config(format!("unknown search key '{k}'"))),
            }
        }
        if s.lr.0 <= 0.0 || s.num_attention_heads.0 == 0 || s.num_hidden_layers.0 == 0 || s.dropout.1 >= 1.0 {
            return Err(TrainError::Config("search space bounds out of range".into()));
        }
        Ok(s)
    }

    pub fn to_kv(&self) -> String {
        format!(
            "hidden_size={}..{}\nnum_attention_heads={}..{}\nnum_hidden_layers={}..{}\nintermediate_size={}..{}\ndropout={:?}..{:?}\nlr={:?}..{:?}\nmin_params={}\nmax_params={}\n",
            self.hidden_size.0,
            self.hidden_size.1,
            self.num_attention_heads.0,
            self.num_attention_heads.1,
            self.num_hidden_layers.0,
            self.num_hidden_layers.1,
            self.intermediate_size.0,
            self.intermediate_size.1,
            self.dropout.0,
            self.dropout.1,
            self.lr.0,
            self.lr.1,
            self.min_params,
            self.max_params
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HpConfig {
    pub model: ModelConfig,
    pub lr: f64,
}

/// `n` independent draws: integers uniform on their ranges with hidden size
/// uniform over multiples of the drawn head count, dropout uniform, learning
/// rate log-uniform. Draws outside the parameter-count bounds are rejected.
pub fn sample_hyperparams(
    n: usize,
    seed: u64,
    space: &SearchSpace,
    vocab_size: usize,
    mtr_task_count: usize,
) -> Result<Vec<HpConfig>, TrainError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    let budget = n.max(1) * 1000;
    let mut tried = 0;
    while out.len() < n {
        if tried >= budget {
            return Err(TrainError::SpaceEmpty { tried });
        }
        tried += 1;
        let heads = rng.random_range(space.num_attention_heads.0..=space.num_attention_heads.1);
        let layers = rng.random_range(space.num_hidden_layers.0..=space.num_hidden_layers.1);
        let lo = space.hidden_size.0.div_ceil(heads).max(1);
        let hi = space.hidden_size.1 / heads;
        if lo > hi {
            continue;
        }
        let hidden = heads * rng.random_range(lo..=hi);
        let intermediate = rng.random_range(space.intermediate_size.0..=space.intermediate_size.1);
        let dropout = if space.dropout.0 == space.dropout.1 {
            space.dropout.0
        } else {
            rng.random_range(space.dropout.0..space.dropout.1)
        };
        let (l0, l1) = (space.lr.0.ln(), space.lr.1.ln());
        let lr = if l0 == l1 { space.lr.0 } else { rng.random_range(l0..l1).exp() };
        let model = ModelConfig {
            hidden_size: hidden,
            num_attention_heads: heads,
            num_hidden_layers: layers,
            intermediate_size: intermediate,
            dropout,
            max_position: MAX_SEQ_LEN,
            vocab_size,
            mtr_task_count,
        };
        if model.validate().is_err() {
            continue;
        }
        let count = model.param_count();
        if count < space.min_params || count > space.max_params {
            continue;
        }
        out.push(HpConfig { model, lr });
    }
    Ok(out)
}

/// Positions `round(q * (n - 1))` for `k` evenly spaced quantiles `q`.
pub fn quantile_positions(n: usize, k: usize) -> Vec<usize> {
    if n == 0 || k == 0 {
        return vec![];
    }
    if k == 1 {
        return vec![0];
    }
    (0..k)
        .map(|i| (i as f64 * (n - 1) as f64 / (k - 1) as f64).round() as usize)
        .collect()
}

/// Sorts runs by loss (non-finite losses last) and returns the original
/// indices at the quantile positions, best first.
pub fn select_configs(losses: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..losses.len()).collect();
    order.sort_by(|&a, &b| {
        let (x, y) = (losses[a], losses[b]);
        match (x.is_finite(), y.is_finite()) {
            (true, true) => x.total_cmp(&y),
            (true, false) => std::cmp::Ordering::Less,
            (false, true) => std::cmp::Ordering::Greater,
            (false, false) => std::cmp::Ordering::Equal,
        }
        .then(a.cmp(&b))
    });
    quantile_positions(losses.len(), k).into_iter().map(|p| order[p]).collect()
}
