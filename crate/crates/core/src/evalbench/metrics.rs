//! Downstream metrics and small statistics.

use super::EvalError;

fn same_len(a: usize, b: usize) -> Result<(), EvalError> {
    if a != b {
        return Err(EvalError::LengthMismatch(a, b));
    }
    if a == 0 {
        return Err(EvalError::Empty);
    }
    Ok(())
}

fn finite(xs: &[f64], what: &str) -> Result<(), EvalError> {
    if xs.iter().any(|v| !v.is_finite()) {
        return Err(EvalError::NonFinite(what.to_string()));
    }
    Ok(())
}

/// Balanced weights `N / (2 * N_c)` for classes 0 and 1.
pub fn class_weights(labels: &[u8]) -> Result<[f64; 2], EvalError> {
    let n = labels.len();
    let ones = labels.iter().filter(|&&l| l == 1).count();
    if let Some(&bad) = labels.iter().find(|&&l| l > 1) {
        return Err(EvalError::BadLabel(bad.to_string()));
    }
    let zeros = n - ones;
    if ones == 0 || zeros == 0 {
        return Err(EvalError::SingleClass);
    }
    Ok([n as f64 / (2.0 * zeros as f64), n as f64 / (2.0 * ones as f64)])
}

pub fn rmse(pred: &[f64], label: &[f64]) -> Result<f64, EvalError> {
    same_len(pred.len(), label.len())?;
    let sse: f64 = pred.iter().zip(label).map(|(p, y)| (p - y) * (p - y)).sum();
    Ok((sse / pred.len() as f64).sqrt())
}

/// 1-based ranks with ties sharing their average rank.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        // positions i..=j hold ranks i+1..=j+1
        let avg = (i + j + 2) as f64 / 2.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Mann-Whitney statistic over positive/negative pairs, ties counting one
/// half. Rank sums are half-integers, so the count is exact.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<f64, EvalError> {
    same_len(scores.len(), labels.len())?;
    finite(scores, "scores")?;
    if let Some(&bad) = labels.iter().find(|&&l| l > 1) {
        return Err(EvalError::BadLabel(bad.to_string()));
    }
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(EvalError::SingleClass);
    }
    let ranks = average_ranks(scores);
    let rank_sum: f64 = ranks.iter().zip(labels).filter(|(_, &l)| l == 1).map(|(r, _)| r).sum();
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Ok(u / (pos as f64 * neg as f64))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r: f64,
}

fn centered(x: &[f64]) -> Vec<f64> {
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    x.iter().map(|v| v - mean).collect()
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, EvalError> {
    same_len(x.len(), y.len())?;
    finite(x, "x")?;
    finite(y, "y")?;
    let (dx, dy) = (centered(x), centered(y));
    let sxx: f64 = dx.iter().map(|v| v * v).sum();
    let syy: f64 = dy.iter().map(|v| v * v).sum();
    if sxx == 0.0 || syy == 0.0 {
        return Err(EvalError::Degenerate("zero variance".into()));
    }
    let sxy: f64 = dx.iter().zip(&dy).map(|(a, b)| a * b).sum();
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Ordinary least squares `y = slope * x + intercept` with Pearson `r`
/// (`r = 0` when `y` is constant).
pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<LinearFit, EvalError> {
    same_len(x.len(), y.len())?;
    if x.len() < 2 {
        return Err(EvalError::Degenerate("need at least two points".into()));
    }
    finite(x, "x")?;
    finite(y, "y")?;
    let (dx, dy) = (centered(x), centered(y));
    let sxx: f64 = dx.iter().map(|v| v * v).sum();
    if sxx == 0.0 {
        return Err(EvalError::Degenerate("all x values are equal".into()));
    }
    let sxy: f64 = dx.iter().zip(&dy).map(|(a, b)| a * b).sum();
    let syy: f64 = dy.iter().map(|v| v * v).sum();
    let slope = sxy / sxx;
    let mx = x.iter().sum::<f64>() / x.len() as f64;
    let my = y.iter().sum::<f64>() / y.len() as f64;
    let r = if syy == 0.0 { 0.0 } else { (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0) };
    Ok(LinearFit {
        slope,
        intercept: my - slope * mx,
        r,
    })
}

/// Pearson correlation of average ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64, EvalError> {
    same_len(x.len(), y.len())?;
    finite(x, "x")?;
    finite(y, "y")?;
    pearson(&average_ranks(x), &average_ranks(y))
}
