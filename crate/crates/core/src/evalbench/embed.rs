//! Per-molecule representations for external projection tools.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Encoder, EvalError};
use crate::chem::{self, canonicalize, largest_fragment};
use crate::featurize::{ecfp, jaccard_distance, Fingerprint};
use crate::model::EncoderInput;
use crate::splits::Reject;

/// Largest row count for which the O(n^2) distance matrix is written.
pub const MAX_DISTANCE_ROWS: usize = 5000;

const BATCH: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EmbedMode {
    Cls,
    Ecfp { radius: u32, n_bits: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedSummary {
    pub rows: usize,
    pub width: usize,
    pub rejects: Vec<Reject>,
}

struct InputRow {
    id: usize,
    smiles: String,
    label: String,
}

/// `.csv` input needs a `smiles` column and may carry one other column used as
/// the label; anything else is read as one SMILES per line.
fn read_input(path: &Path) -> Result<Vec<InputRow>, EvalError> {
    let is_csv = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    let mut rows = Vec::new();
    if is_csv {
        let mut reader = csv::Reader::from_path(path)?;
        let header = reader.headers()?.clone();
        let sc = header
            .iter()
            .position(|h| h == "smiles")
            .ok_or_else(|| EvalError::Data(format!("{}: no 'smiles' column", path.display())))?;
        let lc = (0..header.len()).find(|&i| i != sc);
        for (id, rec) in reader.records().enumerate() {
            let rec = rec?;
            rows.push(InputRow {
                id,
                smiles: rec[sc].to_string(),
                label: lc.map(|i| rec[i].to_string()).unwrap_or_default(),
            });
        }
    } else {
        for (id, line) in std::fs::read_to_string(path)?.lines().enumerate() {
            let smiles = line.split_whitespace().next().unwrap_or("").to_string();
            rows.push(InputRow {
                id,
                smiles,
                label: String::new(),
            });
        }
    }
    Ok(rows)
}

/// Writes `id,smiles,label,<features...>` rows to `out`, where `smiles` is the
/// canonical largest fragment the features were computed from. CLS mode needs
/// an encoder; ECFP mode can also write the pairwise Jaccard distance matrix.
pub fn export_embeddings(
    input: &Path,
    mode: EmbedMode,
    encoder: Option<&Encoder>,
    out: &Path,
    distances: Option<&Path>,
) -> Result<EmbedSummary, EvalError> {
    let mut rejects = Vec::new();
    let mut kept: Vec<(InputRow, String)> = Vec::new();
    for row in read_input(input)? {
        match chem::parse_smiles(&row.smiles) {
            Ok(mol) => {
                let frag = canonicalize(&largest_fragment(&mol));
                kept.push((row, frag));
            }
            Err(e) => rejects.push(Reject {
                row: row.id,
                smiles: row.smiles.clone(),
                reason: e.to_string(),
            }),
        }
    }
    if distances.is_some() {
        if !matches!(mode, EmbedMode::Ecfp { .. }) {
            return Err(EvalError::Data("distance matrix is only available in ecfp mode".into()));
        }
        if kept.len() > MAX_DISTANCE_ROWS {
            return Err(EvalError::TooManyRows {
                n: kept.len(),
                max: MAX_DISTANCE_ROWS,
            });
        }
    }

    let features: Vec<Vec<f64>> = match mode {
        EmbedMode::Cls => {
            let enc = encoder.ok_or_else(|| EvalError::Data("cls mode needs a checkpoint".into()))?;
            let mut feats = Vec::with_capacity(kept.len());
            for chunk in kept.chunks(BATCH) {
                let seqs = chunk
                    .iter()
                    .map(|(_, s)| enc.vocab.encode_smiles(s))
                    .collect::<Result<Vec<_>, _>>()?;
                let t = enc.params.embed(&EncoderInput::from_seqs(&seqs)?)?;
                let h = t.last_dim();
                feats.extend(t.data().chunks(h).map(|r| r.iter().map(|&v| v as f64).collect()));
            }
            feats
        }
        EmbedMode::Ecfp { radius, n_bits } => {
            let fps = kept
                .iter()
                .map(|(_, s)| ecfp(&chem::parse_smiles(s)?, radius, n_bits).map_err(EvalError::from))
                .collect::<Result<Vec<Fingerprint>, _>>()?;
            if let Some(path) = distances {
                write_distances(&fps, path)?;
            }
            fps.iter()
                .map(|fp| (0..fp.n_bits()).map(|b| if fp.get(b) { 1.0 } else { 0.0 }).collect())
                .collect()
        }
    };

    let width = match mode {
        EmbedMode::Cls => encoder.map(|e| e.params.config().hidden_size).unwrap_or(0),
        EmbedMode::Ecfp { n_bits, .. } => n_bits,
    };
    let prefix = if matches!(mode, EmbedMode::Cls) { "e" } else { "b" };
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(out)?));
    let mut header = vec!["id".to_string(), "smiles".to_string(), "label".to_string()];
    header.extend((0..width).map(|i| format!("{prefix}{i}")));
    w.write_record(&header)?;
    for ((row, frag), f) in kept.iter().zip(&features) {
        let mut rec = vec![row.id.to_string(), frag.clone(), row.label.clone()];
        rec.extend(f.iter().map(|v| match mode {
            EmbedMode::Cls => format!("{v:?}"),
            EmbedMode::Ecfp { .. } => format!("{v:.0}"),
        }));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(EmbedSummary {
        rows: kept.len(),
        width,
        rejects,
    })
}

fn write_distances(fps: &[Fingerprint], path: &Path) -> Result<(), EvalError> {
    let n = fps.len();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let v = jaccard_distance(&fps[i], &fps[j])?;
            d[i * n + j] = v;
            d[j * n + i] = v;
        }
    }
    let mut f = BufWriter::new(File::create(path)?);
    for row in d.chunks(n.max(1)).take(n) {
        let line: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        writeln!(f, "{}", line.join(","))?;
    }
    f.flush()?;
    Ok(())
}
