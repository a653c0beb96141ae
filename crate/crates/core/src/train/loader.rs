//! Streaming row loader with a seeded on-disk shuffle.
//!
//! Input is either newline SMILES (first whitespace field per line) or CSV
//! with a `smiles` column; every other CSV column is a numeric label. The
//! shuffle scatters validated rows into bucket files, shuffles each bucket in
//! memory, and concatenates them, so memory is bounded by one bucket.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::TrainError;
use crate::splits::Reject;
use crate::tokenizer::tokenize;

const BUCKET_BYTES: u64 = 32 << 20;
const MAX_BUCKETS: u64 = 4096;

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    /// 1-based line in the source file.
    pub line: usize,
    pub smiles: String,
    pub labels: Vec<f64>,
}

fn is_csv(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

fn check_row(smiles: &str, labels: &[String], width: usize) -> Result<Vec<f64>, String> {
    if smiles.is_empty() {
        return Err("empty SMILES".into());
    }
    tokenize(smiles).map_err(|e| e.to_string())?;
    if labels.len() != width {
        return Err(format!("expected {width} label columns, got {}", labels.len()));
    }
    labels
        .iter()
        .map(|s| match s.trim().parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => Err(format!("label '{s}' is not a finite number")),
        })
        .collect()
}

/// Streams validated rows from a source file, reporting rejects. Returns the
/// label column names.
pub fn scan_rows<F>(path: &Path, mut visit: F) -> Result<(Vec<String>, Vec<Reject>), TrainError>
where
    F: FnMut(Row) -> Result<(), TrainError>,
{
    let mut rejects = Vec::new();
    if is_csv(path) {
        let mut reader = csv::ReaderBuilder::new().flexible(true).from_path(path)?;
        let header = reader.headers()?.clone();
        let col = header
            .iter()
            .position(|h| h == "smiles")
            .ok_or_else(|| TrainError::Data(format!("{}: no 'smiles' column", path.display())))?;
        let names: Vec<String> = header
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != col)
            .map(|(_, h)| h.to_string())
            .collect();
        for (i, rec) in reader.records().enumerate() {
            let line = i + 2;
            let rec = match rec {
                Ok(r) => r,
                Err(e) => {
                    rejects.push(Reject {
                        row: line,
                        smiles: String::new(),
                        reason: e.to_string(),
                    });
                    continue;
                }
            };
            let smiles = rec.get(col).unwrap_or("").trim().to_string();
            let labels: Vec<String> = rec
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != col)
                .map(|(_, v)| v.to_string())
                .collect();
            match check_row(&smiles, &labels, names.len()) {
                Ok(labels) => visit(Row { line, smiles, labels })?,
                Err(reason) => rejects.push(Reject { row: line, smiles, reason }),
            }
        }
        Ok((names, rejects))
    } else {
        let reader = BufReader::new(File::open(path)?);
        for (i, l) in reader.lines().enumerate() {
            let l = l?;
            let smiles = l.split_whitespace().next().unwrap_or("").to_string();
            if smiles.is_empty() {
                continue;
            }
            match check_row(&smiles, &[], 0) {
                Ok(_) => visit(Row {
                    line: i + 1,
                    smiles,
                    labels: vec![],
                })?,
                Err(reason) => rejects.push(Reject {
                    row: i + 1,
                    smiles,
                    reason,
                }),
            }
        }
        Ok((vec![], rejects))
    }
}

/// Loads every valid row into memory.
pub fn read_rows(path: &Path) -> Result<(Vec<String>, Vec<Row>, Vec<Reject>), TrainError> {
    let mut rows = Vec::new();
    let (names, rejects) = scan_rows(path, |r| {
        rows.push(r);
        Ok(())
    })?;
    Ok((names, rows, rejects))
}

fn write_row<W: Write>(w: &mut csv::Writer<W>, row: &Row) -> Result<(), TrainError> {
    let mut rec = vec![row.line.to_string(), row.smiles.clone()];
    rec.extend(row.labels.iter().map(|v| format!("{v:?}")));
    w.write_record(&rec)?;
    Ok(())
}

fn parse_row(rec: &csv::StringRecord) -> Result<Row, TrainError> {
    let bad = || TrainError::Data("corrupt shuffled file".into());
    let line = rec.get(0).ok_or_else(bad)?.parse().map_err(|_| bad())?;
    let smiles = rec.get(1).ok_or_else(bad)?.to_string();
    let labels = rec
        .iter()
        .skip(2)
        .map(|v| v.parse::<f64>().map_err(|_| bad()))
        .collect::<Result<_, _>>()?;
    Ok(Row { line, smiles, labels })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShuffleSummary {
    pub rows: usize,
    pub label_names: Vec<String>,
    pub rejects: Vec<Reject>,
}

/// Writes a validated, shuffled copy of `input` to `output`.
pub fn shuffle_to_disk(input: &Path, output: &Path, seed: u64) -> Result<ShuffleSummary, TrainError> {
    let size = std::fs::metadata(input)?.len();
    let buckets = (size / BUCKET_BYTES + 1).min(MAX_BUCKETS) as usize;
    let tmp = output.with_extension("buckets");
    std::fs::create_dir_all(&tmp)?;
    let bucket_path = |b: usize| tmp.join(format!("{b}.csv"));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut writers = (0..buckets)
        .map(|b| {
            Ok(csv::WriterBuilder::new()
                .has_headers(false)
                .flexible(true)
                .from_writer(BufWriter::new(File::create(bucket_path(b))?)))
        })
        .collect::<Result<Vec<_>, TrainError>>()?;
    let mut rows = 0;
    let (label_names, rejects) = scan_rows(input, |row| {
        let b = if buckets == 1 { 0 } else { rng.random_range(0..buckets) };
        rows += 1;
        write_row(&mut writers[b], &row)
    })?;
    for mut w in writers {
        w.flush()?;
    }
    let mut out = csv::WriterBuilder::new()
        .flexible(true)
        .from_writer(BufWriter::new(File::create(output)?));
    let mut header = vec!["line".to_string(), "smiles".to_string()];
    header.extend(label_names.iter().cloned());
    out.write_record(&header)?;
    for b in 0..buckets {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .from_path(bucket_path(b))?;
        let mut chunk: Vec<Row> = reader
            .records()
            .map(|r| parse_row(&r?))
            .collect::<Result<_, _>>()?;
        chunk.shuffle(&mut rng);
        for row in &chunk {
            write_row(&mut out, row)?;
        }
    }
    out.flush()?;
    std::fs::remove_dir_all(&tmp)?;
    Ok(ShuffleSummary {
        rows,
        label_names,
        rejects,
    })
}

/// Position in the stream: `row` rows of pass `pass` have been consumed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Cursor {
    pub pass: u64,
    pub row: u64,
}

/// Batches over a shuffled file written by [`shuffle_to_disk`].
#[derive(Debug, Clone)]
pub struct StreamLoader {
    path: PathBuf,
    batch_size: usize,
    rows: usize,
    label_names: Vec<String>,
}

impl StreamLoader {
    pub fn open(path: &Path, batch_size: usize) -> Result<Self, TrainError> {
        if batch_size == 0 {
            return Err(TrainError::Config("batch_size must be at least 1".into()));
        }
        let mut reader = csv::ReaderBuilder::new().flexible(true).from_path(path)?;
        let header = reader.headers()?.clone();
        if header.get(0) != Some("line") || header.get(1) != Some("smiles") {
            return Err(TrainError::Data(format!("{}: not a shuffled data file", path.display())));
        }
        let label_names = header.iter().skip(2).map(str::to_string).collect();
        let mut rows = 0;
        let mut rec = csv::StringRecord::new();
        while reader.read_record(&mut rec)? {
            rows += 1;
        }
        Ok(StreamLoader {
            path: path.to_path_buf(),
            batch_size,
            rows,
            label_names,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    pub fn label_names(&self) -> &[String] {
        &self.label_names
    }

    /// Batches per pass.
    pub fn batches_per_pass(&self) -> usize {
        self.rows.div_ceil(self.batch_size)
    }

    /// Remaining batches of the cursor's pass, each paired with the cursor
    /// just after it.
    pub fn batches_from(&self, cursor: Cursor) -> Result<Batches, TrainError> {
        let mut reader = csv::ReaderBuilder::new().flexible(true).from_path(&self.path)?;
        let mut rec = csv::StringRecord::new();
        for _ in 0..cursor.row {
            if !reader.read_record(&mut rec)? {
                break;
            }
        }
        Ok(Batches {
            reader,
            cursor,
            batch_size: self.batch_size,
        })
    }
}

pub struct Batches {
    reader: csv::Reader<File>,
    cursor: Cursor,
    batch_size: usize,
}

impl Iterator for Batches {
    type Item = Result<(Vec<Row>, Cursor), TrainError>;

    fn next(&mut self) -> Option<Self::Item> {
        let mut batch = Vec::with_capacity(self.batch_size);
        let mut rec = csv::StringRecord::new();
        while batch.len() < self.batch_size {
            match self.reader.read_record(&mut rec) {
                Ok(true) => match parse_row(&rec) {
                    Ok(r) => batch.push(r),
                    Err(e) => return Some(Err(e)),
                },
                Ok(false) => break,
                Err(e) => return Some(Err(e.into())),
            }
        }
        if batch.is_empty() {
            return None;
        }
        self.cursor.row += batch.len() as u64;
        Some(Ok((batch, self.cursor)))
    }
}
