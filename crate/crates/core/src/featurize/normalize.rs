use std::io::{Read, Write};

use super::FeaturizeError;

/// Per-task mean and population standard deviation.
///
/// Columns with zero spread are flagged constant: `apply` and `invert` leave
/// them untouched and the regression loss skips them.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub names: Vec<String>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub constant: Vec<bool>,
}

impl NormStats {
    pub fn fit(names: &[String], rows: &[Vec<f64>]) -> Result<NormStats, FeaturizeError> {
        if rows.len() < 2 {
            return Err(FeaturizeError::TooFewRows(rows.len()));
        }
        let d = names.len();
        for (i, r) in rows.iter().enumerate() {
            if r.len() != d {
                return Err(FeaturizeError::Width {
                    row: i,
                    got: r.len(),
                    expected: d,
                });
            }
        }
        let n = rows.len() as f64;
        let mut mean = vec![0.0; d];
        let mut std = vec![0.0; d];
        let mut constant = vec![false; d];
        for j in 0..d {
            let first = rows[0][j];
            if !first.is_finite() || rows.iter().any(|r| !r[j].is_finite()) {
                return Err(FeaturizeError::NonFinite(names[j].clone()));
            }
            let m = rows.iter().map(|r| r[j]).sum::<f64>() / n;
            let var = rows.iter().map(|r| (r[j] - m) * (r[j] - m)).sum::<f64>() / n;
            mean[j] = m;
            std[j] = var.sqrt();
            constant[j] = rows.iter().all(|r| r[j] == first);
        }
        Ok(NormStats {
            names: names.to_vec(),
            mean,
            std,
            constant,
        })
    }

    pub fn task_count(&self) -> usize {
        self.mean.len()
    }

    /// `(x - mean) / std` per non-constant column.
    pub fn apply(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .enumerate()
            .map(|(j, &x)| {
                if self.constant[j] {
                    x
                } else {
                    (x - self.mean[j]) / self.std[j]
                }
            })
            .collect()
    }

    pub fn invert(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .enumerate()
            .map(|(j, &z)| {
                if self.constant[j] {
                    z
                } else {
                    z * self.std[j] + self.mean[j]
                }
            })
            .collect()
    }

    /// Loss mask: true for tasks that take part in the regression loss.
    pub fn active_tasks(&self) -> Vec<bool> {
        self.constant.iter().map(|c| !c).collect()
    }

    /// CSV with header `name,mean,std,constant`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), FeaturizeError> {
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(["name", "mean", "std", "constant"])?;
        for j in 0..self.task_count() {
            csv.write_record([
                self.names[j].clone(),
                self.mean[j].to_string(),
                self.std[j].to_string(),
                (self.constant[j] as u8).to_string(),
            ])?;
        }
        csv.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<NormStats, FeaturizeError> {
        let mut csv = csv::Reader::from_reader(r);
        let header = csv.headers()?.clone();
        if header.iter().collect::<Vec<_>>() != ["name", "mean", "std", "constant"] {
            return Err(FeaturizeError::Csv("expected header name,mean,std,constant".into()));
        }
        let mut stats = NormStats {
            names: Vec::new(),
            mean: Vec::new(),
            std: Vec::new(),
            constant: Vec::new(),
        };
        for rec in csv.records() {
            let rec = rec?;
            let num = |i: usize| {
                rec[i]
                    .parse::<f64>()
                    .map_err(|e| FeaturizeError::Csv(format!("{}: {e}", &rec[0])))
            };
            stats.names.push(rec[0].to_string());
            stats.mean.push(num(1)?);
            stats.std.push(num(2)?);
            stats.constant.push(&rec[3] == "1");
        }
        Ok(stats)
    }
}
