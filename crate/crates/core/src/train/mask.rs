use rand::seq::index::sample;
use rand::Rng;

use crate::tensor::IGNORE_INDEX;
use crate::tokenizer::{TokenSeq, MASK_ID, NUM_SPECIAL};

pub const MASK_PROB: f64 = 0.15;

/// Number of positions selected out of `n` maskable ones.
pub fn mask_count(n: usize, p: f64) -> usize {
    if n == 0 {
        return 0;
    }
    ((p * n as f64).round() as usize).clamp(1, n)
}

/// BERT-style masking. Selects `round(p * n)` (at least one) of the non-special
/// positions; 80% become `<mask>`, 10% a uniformly random non-special token, 10%
/// stay unchanged. Labels hold the original id at selected positions and
/// [`IGNORE_INDEX`] elsewhere. `None` when nothing is maskable.
pub fn mask_tokens<R: Rng + ?Sized>(seq: &TokenSeq, p: f64, vocab_size: usize, rng: &mut R) -> Option<(TokenSeq, Vec<i64>)> {
    let candidates: Vec<usize> = (0..seq.len())
        .filter(|&i| seq.attention_mask[i] == 1 && seq.ids[i] as usize >= NUM_SPECIAL)
        .collect();
    if candidates.is_empty() {
        return None;
    }
    let k = mask_count(candidates.len(), p);
    let mut out = seq.clone();
    let mut labels = vec![IGNORE_INDEX; seq.len()];
    let mut chosen: Vec<usize> = sample(rng, candidates.len(), k).into_iter().map(|i| candidates[i]).collect();
    chosen.sort_unstable();
    for pos in chosen {
        labels[pos] = seq.ids[pos] as i64;
        let r: f64 = rng.random();
        if r < 0.8 {
            out.ids[pos] = MASK_ID;
        } else if r < 0.9 {
            out.ids[pos] = rng.random_range(NUM_SPECIAL as u32..vocab_size as u32);
        }
    }
    Some((out, labels))
}
