//! Closed-form graph descriptors used as regression labels.
//!
//! | name | definition |
//! |------|------------|
//! | `mol_weight` | sum of average atomic masses, implicit and explicit H included |
//! | `heavy_atom_count` | atoms other than hydrogen |
//! | `bond_count` | bonds between two heavy atoms |
//! | `circuit_rank` | bonds - atoms + connected components |
//! | `aromatic_atom_count` | lowercase atoms |
//! | `hbd` | N or O atoms carrying at least one hydrogen |
//! | `hba` | number of N plus O atoms |
//! | `rotatable_bonds` | non-ring single bonds whose ends both have heavy degree >= 2 |
//! | `fraction_csp3` | carbons with only single bonds / all carbons (0 without carbon) |
//! | `halogen_count` | F, Cl, Br, I |
//! | `net_formal_charge` | sum of formal charges |
//! | `heteroatom_count` | atoms other than C and H |
//!
//! Rotatable bonds exclude only ring and terminal bonds; amide C-N bonds count.

use std::io::{Read, Write};

use super::FeaturizeError;
use crate::chem::{self, BondOrder, Element, Molecule};

pub const BASELINE_DESCRIPTORS: [&str; 12] = [
    "mol_weight",
    "heavy_atom_count",
    "bond_count",
    "circuit_rank",
    "aromatic_atom_count",
    "hbd",
    "hba",
    "rotatable_bonds",
    "fraction_csp3",
    "halogen_count",
    "net_formal_charge",
    "heteroatom_count",
];

#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorVector {
    pub names: Vec<String>,
    pub values: Vec<f64>,
}

impl DescriptorVector {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|i| self.values[i])
    }

    /// Keeps only the named descriptors, in the given order.
    pub fn select(&self, names: &[String]) -> Result<DescriptorVector, FeaturizeError> {
        let values = names
            .iter()
            .map(|n| self.get(n).ok_or_else(|| FeaturizeError::UnknownDescriptor(n.clone())))
            .collect::<Result<_, _>>()?;
        Ok(DescriptorVector {
            names: names.to_vec(),
            values,
        })
    }
}

fn hydrogens(mol: &Molecule, atom: usize) -> u32 {
    let attached = mol
        .neighbors(atom)
        .iter()
        .filter(|&&(n, _)| mol.atoms()[n].element == Element::H)
        .count() as u32;
    mol.atoms()[atom].total_h() + attached
}

/// Computes the 12 baseline descriptors.
pub fn compute_descriptors(mol: &Molecule) -> DescriptorVector {
    let atoms = mol.atoms();
    let heavy = |i: usize| atoms[i].is_heavy();

    let heavy_atom_count = mol.heavy_atom_count();
    let bond_count = mol
        .bonds()
        .iter()
        .filter(|b| heavy(b.endpoints.0) && heavy(b.endpoints.1))
        .count();
    let circuit_rank = chem::ring_bonds(mol).total_circuit_rank();
    let aromatic = atoms.iter().filter(|a| a.aromatic).count();
    let is_no = |e: Element| e == Element::N || e == Element::O;
    let hbd = (0..atoms.len())
        .filter(|&i| is_no(atoms[i].element) && hydrogens(mol, i) > 0)
        .count();
    let hba = atoms.iter().filter(|a| is_no(a.element)).count();
    let rotatable = mol
        .bonds()
        .iter()
        .filter(|b| {
            b.order == BondOrder::Single
                && !b.in_ring
                && heavy(b.endpoints.0)
                && heavy(b.endpoints.1)
                && mol.heavy_degree(b.endpoints.0) >= 2
                && mol.heavy_degree(b.endpoints.1) >= 2
        })
        .count();
    let carbons: Vec<usize> = (0..atoms.len()).filter(|&i| atoms[i].element == Element::C).collect();
    let sp3 = carbons
        .iter()
        .filter(|&&i| {
            !atoms[i].aromatic
                && mol
                    .neighbors(i)
                    .iter()
                    .all(|&(_, b)| mol.bonds()[b].order == BondOrder::Single)
        })
        .count();
    let fraction_csp3 = if carbons.is_empty() {
        0.0
    } else {
        sp3 as f64 / carbons.len() as f64
    };
    let halogens = atoms.iter().filter(|a| a.element.is_halogen()).count();
    let charge: i32 = atoms.iter().map(|a| a.formal_charge).sum();
    let hetero = atoms
        .iter()
        .filter(|a| a.element != Element::C && a.element != Element::H)
        .count();

    let values = vec![
        mol.molecular_weight(),
        heavy_atom_count as f64,
        bond_count as f64,
        circuit_rank as f64,
        aromatic as f64,
        hbd as f64,
        hba as f64,
        rotatable as f64,
        fraction_csp3,
        halogens as f64,
        charge as f64,
        hetero as f64,
    ];
    DescriptorVector {
        names: BASELINE_DESCRIPTORS.iter().map(|s| s.to_string()).collect(),
        values,
    }
}

/// Parses, optionally keeps the largest fragment, and computes descriptors.
pub fn descriptors_for_smiles(s: &str, largest_fragment: bool) -> Result<DescriptorVector, FeaturizeError> {
    let mut mol = chem::parse_smiles(s)?;
    if largest_fragment {
        mol = chem::largest_fragment(&mol);
    }
    Ok(compute_descriptors(&mol))
}

/// Writes a descriptor cache: header `smiles,<names...>`, one row per molecule.
pub fn write_descriptor_csv<W: Write>(
    w: W,
    names: &[String],
    rows: &[(String, Vec<f64>)],
) -> Result<(), FeaturizeError> {
    let mut csv = csv::Writer::from_writer(w);
    let mut header = vec!["smiles".to_string()];
    header.extend(names.iter().cloned());
    csv.write_record(&header)?;
    for (smiles, values) in rows {
        let mut rec = vec![smiles.clone()];
        rec.extend(values.iter().map(|v| v.to_string()));
        csv.write_record(&rec)?;
    }
    csv.flush()?;
    Ok(())
}

/// Reads a descriptor cache written by [`write_descriptor_csv`].
pub fn read_descriptor_csv<R: Read>(r: R) -> Result<(Vec<String>, Vec<(String, Vec<f64>)>), FeaturizeError> {
    let mut csv = csv::Reader::from_reader(r);
    let header = csv.headers()?.clone();
    if header.get(0) != Some("smiles") {
        return Err(FeaturizeError::Csv("first column must be 'smiles'".into()));
    }
    let names: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let mut rows = Vec::new();
    for (i, rec) in csv.records().enumerate() {
        let rec = rec?;
        let values = rec
            .iter()
            .skip(1)
            .map(|v| v.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| FeaturizeError::Csv(format!("row {}: {e}", i + 2)))?;
        if values.len() != names.len() {
            return Err(FeaturizeError::Width {
                row: i + 2,
                got: values.len(),
                expected: names.len(),
            });
        }
        rows.push((rec[0].to_string(), values));
    }
    Ok((names, rows))
}
