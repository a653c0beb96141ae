//! Bemis-Murcko scaffolds and deterministic scaffold splits.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chem::{self, ChemError, Molecule};

#[derive(Debug, Error)]
pub enum SplitError {
    #[error("split fractions must be non-negative and sum to 1, got {0:?}")]
    BadFractions([f64; 3]),
    #[error("dataset is empty")]
    Empty,
    #[error("input has no 'smiles' column")]
    MissingSmilesColumn,
    #[error("malformed CSV: {0}")]
    Csv(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl From<csv::Error> for SplitError {
    fn from(e: csv::Error) -> Self {
        SplitError::Csv(e.to_string())
    }
}

/// Canonical SMILES of the ring systems and linkers; empty for acyclic input.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ScaffoldKey(pub String);

impl ScaffoldKey {
    pub fn is_acyclic(&self) -> bool {
        self.0.is_empty()
    }
}

/// Strips side chains by repeatedly deleting non-ring atoms of degree <= 1.
pub fn murcko_scaffold(mol: &Molecule) -> ScaffoldKey {
    let n = mol.atom_count();
    let mut ring_atom = vec![false; n];
    for b in mol.bonds() {
        if b.in_ring {
            ring_atom[b.endpoints.0] = true;
            ring_atom[b.endpoints.1] = true;
        }
    }
    if !ring_atom.iter().any(|&r| r) {
        return ScaffoldKey(String::new());
    }
    let mut alive = vec![true; n];
    let mut degree: Vec<usize> = (0..n).map(|a| mol.degree(a)).collect();
    let mut queue: Vec<usize> = (0..n).filter(|&a| !ring_atom[a] && degree[a] <= 1).collect();
    while let Some(a) = queue.pop() {
        if !alive[a] {
            continue;
        }
        alive[a] = false;
        for &(nb, _) in mol.neighbors(a) {
            if alive[nb] {
                degree[nb] -= 1;
                if !ring_atom[nb] && degree[nb] <= 1 {
                    queue.push(nb);
                }
            }
        }
    }
    let keep: Vec<usize> = (0..n).filter(|&a| alive[a]).collect();
    let core = mol
        .subgraph(&keep)
        .expect("removing side chains cannot raise valence");
    ScaffoldKey(chem::canonicalize(&core))
}

pub fn scaffold_of_smiles(s: &str) -> Result<ScaffoldKey, ChemError> {
    Ok(murcko_scaffold(&chem::parse_smiles(s)?))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fractions {
    pub train: f64,
    pub valid: f64,
    pub test: f64,
}

impl Default for Fractions {
    fn default() -> Self {
        Fractions {
            train: 0.8,
            valid: 0.1,
            test: 0.1,
        }
    }
}

impl Fractions {
    pub fn validate(&self) -> Result<(), SplitError> {
        let f = [self.train, self.valid, self.test];
        if f.iter().any(|&x| !(0.0..=1.0).contains(&x)) || (f.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(SplitError::BadFractions(f));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reject {
    pub row: usize,
    pub smiles: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SplitAssignment {
    /// Row indices, ascending within each partition.
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
    pub test: Vec<usize>,
    pub rejects: Vec<Reject>,
    pub group_count: usize,
    /// Scaffold key of every accepted row.
    pub keys: BTreeMap<usize, ScaffoldKey>,
    pub warnings: Vec<String>,
}

impl SplitAssignment {
    /// True when every scaffold key appears in exactly one partition.
    pub fn leakage_free(&self) -> bool {
        let mut owner: BTreeMap<&ScaffoldKey, u8> = BTreeMap::new();
        for (part, rows) in [(0u8, &self.train), (1, &self.valid), (2, &self.test)] {
            for r in rows {
                let key = &self.keys[r];
                if *owner.entry(key).or_insert(part) != part {
                    return false;
                }
            }
        }
        true
    }
}

/// Groups rows by scaffold, orders groups by (size desc, key asc), and fills
/// train until it holds at least `train * N` rows, then valid until it holds at
/// least `valid * N`, then test. `N` counts accepted rows only.
pub fn scaffold_split<S: AsRef<str>>(smiles: &[S], fractions: Fractions) -> Result<SplitAssignment, SplitError> {
    fractions.validate()?;
    if smiles.is_empty() {
        return Err(SplitError::Empty);
    }
    let mut out = SplitAssignment::default();
    let mut groups: BTreeMap<ScaffoldKey, Vec<usize>> = BTreeMap::new();
    for (i, s) in smiles.iter().enumerate() {
        match scaffold_of_smiles(s.as_ref()) {
            Ok(key) => {
                out.keys.insert(i, key.clone());
                groups.entry(key).or_default().push(i);
            }
            Err(e) => out.rejects.push(Reject {
                row: i,
                smiles: s.as_ref().to_string(),
                reason: e.to_string(),
            }),
        }
    }
    let n = out.keys.len();
    if n == 0 {
        return Err(SplitError::Empty);
    }
    out.group_count = groups.len();
    let mut ordered: Vec<(ScaffoldKey, Vec<usize>)> = groups.into_iter().collect();
    ordered.sort_by(|a, b| b.1.len().cmp(&a.1.len()).then_with(|| a.0.cmp(&b.0)));

    let reached = |count: usize, frac: f64| count as f64 >= frac * n as f64 - 1e-9;
    for (_, rows) in ordered {
        let target = if !reached(out.train.len(), fractions.train) {
            &mut out.train
        } else if !reached(out.valid.len(), fractions.valid) {
            &mut out.valid
        } else {
            &mut out.test
        };
        target.extend(rows);
    }
    out.train.sort_unstable();
    out.valid.sort_unstable();
    out.test.sort_unstable();
    for (name, part, frac) in [("valid", &out.valid, fractions.valid), ("test", &out.test, fractions.test)] {
        if part.is_empty() && frac > 0.0 {
            out.warnings
                .push(format!("{name} partition is empty: whole scaffold groups overshot earlier partitions"));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub schema_version: u32,
    pub rows: usize,
    pub group_count: usize,
    pub train: usize,
    pub valid: usize,
    pub test: usize,
    pub rejects: Vec<Reject>,
    pub leakage_free: bool,
    pub warnings: Vec<String>,
}

/// Splits a CSV with a `smiles` column into `train.csv`, `valid.csv` and
/// `test.csv` under `out_dir` (input columns preserved) plus `summary.json`.
pub fn split_csv_file(input: &Path, out_dir: &Path, fractions: Fractions) -> Result<SplitSummary, SplitError> {
    let mut reader = csv::Reader::from_path(input)?;
    let header = reader.headers()?.clone();
    let col = header
        .iter()
        .position(|h| h == "smiles")
        .ok_or(SplitError::MissingSmilesColumn)?;
    let records: Vec<csv::StringRecord> = reader.records().collect::<Result<_, _>>()?;
    let smiles: Vec<&str> = records.iter().map(|r| r.get(col).unwrap_or("")).collect();
    let split = scaffold_split(&smiles, fractions)?;
    std::fs::create_dir_all(out_dir)?;
    for (name, rows) in [("train", &split.train), ("valid", &split.valid), ("test", &split.test)] {
        let mut w = csv::Writer::from_path(out_dir.join(format!("{name}.csv")))?;
        w.write_record(&header)?;
        for &r in rows {
            w.write_record(&records[r])?;
        }
        w.flush()?;
    }
    let summary = SplitSummary {
        schema_version: 1,
        rows: records.len(),
        group_count: split.group_count,
        train: split.train.len(),
        valid: split.valid.len(),
        test: split.test.len(),
        leakage_free: split.leakage_free(),
        rejects: split.rejects,
        warnings: split.warnings,
    };
    let mut f = BufWriter::new(File::create(out_dir.join("summary.json"))?);
    serde_json::to_writer_pretty(&mut f, &summary)?;
    writeln!(f)?;
    f.flush()?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn key(s: &str) -> String {
        scaffold_of_smiles(s).unwrap().0
    }

    #[test]
    fn scaffold_examples() {
        assert_eq!(key("Cc1ccccc1"), chem::canonicalize_smiles("c1ccccc1").unwrap());
        assert_eq!(key("CCO"), "");
        assert_eq!(key("c1ccccc1"), chem::canonicalize_smiles("c1ccccc1").unwrap());
        // linker kept, side chains dropped
        assert_eq!(
            key("CCc1ccc(CC(=O)Nc2ccncc2)cc1"),
            chem::canonicalize_smiles("c1ccc(CCNc2ccncc2)cc1").unwrap()
        );
        assert_eq!(key("Cc1cc[nH]c1"), chem::canonicalize_smiles("c1cc[nH]c1").unwrap());
    }

    #[test]
    fn ten_distinct_scaffolds() {
        let rings = ["C1CC1", "C1CCC1", "C1CCCC1", "C1CCCCC1", "C1CCCCCC1", "c1ccccc1", "c1ccncc1", "c1ccoc1", "c1ccsc1", "C1CCNCC1"];
        let split = scaffold_split(&rings, Fractions::default()).unwrap();
        assert_eq!((split.train.len(), split.valid.len(), split.test.len()), (8, 1, 1));
        assert!(split.leakage_free());
    }

    #[test]
    fn whole_groups_overshoot() {
        let mut rows: Vec<&str> = vec!["Cc1ccccc1"; 9];
        rows.push("C1CC1");
        let split = scaffold_split(&rows, Fractions::default()).unwrap();
        assert_eq!((split.train.len(), split.valid.len(), split.test.len()), (9, 1, 0));
        assert_eq!(split.warnings.len(), 1);
    }

    #[test]
    fn rejects_are_reported() {
        let split = scaffold_split(&["CCO", "C1CC", "c1ccccc1"], Fractions::default()).unwrap();
        assert_eq!(split.rejects.len(), 1);
        assert_eq!(split.rejects[0].row, 1);
        assert_eq!(split.train.len() + split.valid.len() + split.test.len(), 2);
    }

    #[test]
    fn bad_fractions() {
        let f = Fractions {
            train: 0.5,
            valid: 0.1,
            test: 0.1,
        };
        assert!(matches!(scaffold_split(&["C"], f), Err(SplitError::BadFractions(_))));
        assert!(matches!(scaffold_split::<&str>(&[], Fractions::default()), Err(SplitError::Empty)));
    }
}
