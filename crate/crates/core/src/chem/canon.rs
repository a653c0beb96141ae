//! Canonical atom ranking and canonical SMILES.
//!
//! Atoms start from an invariant of (element, charge, heavy degree, hydrogen
//! count, aromatic, in_ring) and are refined Morgan-style by the sorted ranks of
//! their neighbors until the partition stops splitting. Remaining ties are
//! broken by trying each member of the first tied class, re-refining, and
//! keeping the lexicographically smallest SMILES. Interchangeable terminal atoms
//! on the same neighbor (e.g. the three F of CF3) and identical isolated atoms
//! are only tried once since swapping them is an automorphism.

use super::{parse_smiles, write_smiles, ChemError, Molecule};

/// Upper bound on completed labelings explored per molecule. Beyond it the
/// first candidate of each tied class is taken.
const LEAF_BUDGET: usize = 20_000;

pub fn canonicalize(mol: &Molecule) -> String {
    if mol.atom_count() == 0 {
        return String::new();
    }
    search(mol).0
}

/// Parses and canonicalizes in one step.
pub fn canonicalize_smiles(s: &str) -> Result<String, ChemError> {
    Ok(canonicalize(&parse_smiles(s)?))
}

/// Canonical rank of each atom (0 = written first).
pub fn canonical_ranks(mol: &Molecule) -> Vec<usize> {
    if mol.atom_count() == 0 {
        return Vec::new();
    }
    search(mol).1
}

fn search(mol: &Molecule) -> (String, Vec<usize>) {
    let ranks = refine(mol, initial_ranks(mol));
    let mut leaves = 0;
    let mut best: Option<(String, Vec<usize>)> = None;
    explore(mol, ranks, &mut leaves, &mut best);
    best.expect("at least one labeling")
}

fn explore(
    mol: &Molecule,
    ranks: Vec<usize>,
    leaves: &mut usize,
    best: &mut Option<(String, Vec<usize>)>,
) {
    let Some(class) = first_tied_class(&ranks) else {
        *leaves += 1;
        let s = write_smiles(mol, &ranks);
        if best.as_ref().is_none_or(|(b, _)| s < *b) {
            *best = Some((s, ranks));
        }
        return;
    };
    let members: Vec<usize> = (0..ranks.len()).filter(|&a| ranks[a] == class).collect();
    let candidates = prune_equivalent(mol, &members);
    for (i, &chosen) in candidates.iter().enumerate() {
        if i > 0 && *leaves >= LEAF_BUDGET {
            break;
        }
        let split = break_tie(&ranks, class, chosen);
        explore(mol, refine(mol, split), leaves, best);
    }
}

fn initial_ranks(mol: &Molecule) -> Vec<usize> {
    let mut in_ring = vec![false; mol.atom_count()];
    for b in mol.bonds() {
        if b.in_ring {
            in_ring[b.endpoints.0] = true;
            in_ring[b.endpoints.1] = true;
        }
    }
    let keys: Vec<_> = mol
        .atoms()
        .iter()
        .enumerate()
        .map(|(i, a)| {
            (
                a.element.atomic_number(),
                a.formal_charge,
                mol.heavy_degree(i),
                a.total_h(),
                a.aromatic,
                in_ring[i],
            )
        })
        .collect();
    dense_ranks(&keys)
}

fn dense_ranks<K: Ord>(keys: &[K]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..keys.len()).collect();
    idx.sort_by(|&a, &b| keys[a].cmp(&keys[b]));
    let mut ranks = vec![0; keys.len()];
    let mut r = 0;
    for w in 0..idx.len() {
        if w > 0 && keys[idx[w]] != keys[idx[w - 1]] {
            r += 1;
        }
        ranks[idx[w]] = r;
    }
    ranks
}

fn class_count(ranks: &[usize]) -> usize {
    ranks.iter().max().map_or(0, |m| m + 1)
}

fn refine(mol: &Molecule, mut ranks: Vec<usize>) -> Vec<usize> {
    let mut classes = class_count(&ranks);
    loop {
        let keys: Vec<(usize, Vec<(usize, u8)>)> = (0..mol.atom_count())
            .map(|a| {
                let mut nb: Vec<(usize, u8)> = mol
                    .neighbors(a)
                    .iter()
                    .map(|&(n, b)| (ranks[n], mol.bonds()[b].order.code()))
                    .collect();
                nb.sort_unstable();
                (ranks[a], nb)
            })
            .collect();
        let next = dense_ranks(&keys);
        let next_classes = class_count(&next);
        if next_classes == classes {
            return ranks;
        }
        classes = next_classes;
        ranks = next;
    }
}

fn first_tied_class(ranks: &[usize]) -> Option<usize> {
    let mut counts = vec![0usize; class_count(ranks)];
    for &r in ranks {
        counts[r] += 1;
    }
    counts.iter().position(|&c| c > 1)
}

fn break_tie(ranks: &[usize], class: usize, chosen: usize) -> Vec<usize> {
    let keys: Vec<(usize, bool)> = ranks
        .iter()
        .enumerate()
        .map(|(a, &r)| (r, r == class && a != chosen))
        .collect();
    dense_ranks(&keys)
}

/// Drops members that are interchangeable with an earlier member by a
/// transposition automorphism: terminal atoms on the same neighbor through the
/// same bond order, or isolated atoms (class members share all invariants).
fn prune_equivalent(mol: &Molecule, members: &[usize]) -> Vec<usize> {
    let mut seen: Vec<(usize, u8)> = Vec::new();
    let mut isolated_seen = false;
    let mut out = Vec::new();
    for &a in members {
        match mol.neighbors(a) {
            [] => {
                if isolated_seen {
                    continue;
                }
                isolated_seen = true;
            }
            [(n, b)] => {
                let key = (*n, mol.bonds()[*b].order.code());
                if seen.contains(&key) {
                    continue;
                }
                seen.push(key);
            }
            _ => {}
        }
        out.push(a);
    }
    out
}
