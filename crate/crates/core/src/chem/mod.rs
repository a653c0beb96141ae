//! Molecular graphs parsed from SMILES.
//!
//! Aromaticity is taken from the input syntax: lowercase atoms are aromatic and
//! no perception or kekulization is attempted. Stereo and isotope markers are
//! accepted by the parser and then dropped; [`Molecule::is_lossy`] records that
//! this happened.

mod canon;
mod element;
mod fragment;
mod parse;
mod ring;
mod valence;
mod write;

pub use canon::{canonical_ranks, canonicalize, canonicalize_smiles};
pub use element::Element;
pub use fragment::largest_fragment;
pub use parse::parse_smiles;
pub use ring::{ring_bonds, RingInfo};
pub use valence::implicit_hydrogens;
pub use write::{render_random, write_smiles};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ChemError {
    #[error("empty SMILES string")]
    Empty,
    #[error("non-ASCII byte at offset {offset}")]
    NonAscii { offset: usize },
    #[error("unexpected character '{ch}' at offset {offset}")]
    UnexpectedChar { ch: char, offset: usize },
    #[error("unclosed ring digit {digit} at offset {offset}")]
    UnclosedRing { digit: u32, offset: usize },
    #[error("unclosed branch opened at offset {offset}")]
    UnclosedBranch { offset: usize },
    #[error("unmatched ')' at offset {offset}")]
    UnmatchedBranchClose { offset: usize },
    #[error("empty branch at offset {offset}")]
    EmptyBranch { offset: usize },
    #[error("unknown element '{symbol}' at offset {offset}")]
    UnknownElement { symbol: String, offset: usize },
    #[error("malformed bracket atom at offset {offset}: {reason}")]
    MalformedBracket { offset: usize, reason: &'static str },
    #[error("empty fragment at offset {offset}")]
    EmptyFragment { offset: usize },
    #[error("bond symbol at offset {offset} is not followed by an atom")]
    DanglingBond { offset: usize },
    #[error("conflicting ring-closure bond symbols at offset {offset}")]
    ConflictingRingBond { offset: usize },
    #[error("duplicate bond at offset {offset}")]
    DuplicateBond { offset: usize },
    #[error("atom bonded to itself at offset {offset}")]
    SelfBond { offset: usize },
    #[error("hypervalent atom {symbol} (bond order sum {valence}) at offset {offset}")]
    Hypervalent {
        symbol: &'static str,
        valence: u32,
        offset: usize,
    },
    #[error("implicit hydrogens are only defined for non-bracket organic-subset atoms")]
    NotOrganicSubset,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BondOrder {
    Single,
    Double,
    Triple,
    Aromatic,
}

impl BondOrder {
    /// Integer valence contribution; aromatic bonds count 1 here and the
    /// aromatic atom adjustment lives in [`implicit_hydrogens`].
    pub fn valence(self) -> u32 {
        match self {
            BondOrder::Single | BondOrder::Aromatic => 1,
            BondOrder::Double => 2,
            BondOrder::Triple => 3,
        }
    }

    /// Bond order as a real number (aromatic = 1.5).
    pub fn order(self) -> f64 {
        match self {
            BondOrder::Single => 1.0,
            BondOrder::Double => 2.0,
            BondOrder::Triple => 3.0,
            BondOrder::Aromatic => 1.5,
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            BondOrder::Single => 1,
            BondOrder::Double => 2,
            BondOrder::Triple => 3,
            BondOrder::Aromatic => 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Atom {
    pub element: Element,
    pub aromatic: bool,
    pub formal_charge: i32,
    /// Hydrogen count written inside brackets, e.g. the 1 in `[nH]`.
    pub explicit_h: u32,
    /// Hydrogens implied by default valence (non-bracket atoms only).
    pub implicit_h: u32,
    pub bracket: bool,
}

impl Atom {
    pub fn organic(element: Element, aromatic: bool) -> Atom {
        Atom {
            element,
            aromatic,
            formal_charge: 0,
            explicit_h: 0,
            implicit_h: 0,
            bracket: false,
        }
    }

    pub fn total_h(&self) -> u32 {
        self.explicit_h + self.implicit_h
    }

    pub fn is_heavy(&self) -> bool {
        self.element != Element::H
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bond {
    pub endpoints: (usize, usize),
    pub order: BondOrder,
    pub in_ring: bool,
}

impl Bond {
    pub fn other(&self, atom: usize) -> usize {
        if self.endpoints.0 == atom {
            self.endpoints.1
        } else {
            self.endpoints.0
        }
    }
}

/// Immutable molecular graph. Construct through [`parse_smiles`] or
/// [`Molecule::new`]; both fill implicit hydrogens and ring flags.
#[derive(Debug, Clone, PartialEq)]
pub struct Molecule {
    atoms: Vec<Atom>,
    bonds: Vec<Bond>,
    adjacency: Vec<Vec<(usize, usize)>>,
    source: String,
    lossy: bool,
}

impl Molecule {
    /// Builds a molecule from atoms and bonds, recomputing implicit hydrogens
    /// of non-bracket atoms and the ring flag of every bond.
    ///
    /// Errors report the offending atom or bond index in the `offset` field.
    pub fn new(
        mut atoms: Vec<Atom>,
        mut bonds: Vec<Bond>,
        source: impl Into<String>,
        lossy: bool,
    ) -> Result<Molecule, ChemError> {
        let mut adjacency = vec![Vec::new(); atoms.len()];
        for (i, bond) in bonds.iter().enumerate() {
            let (a, b) = bond.endpoints;
            assert!(a < atoms.len() && b < atoms.len(), "bond endpoint out of range");
            if a == b {
                return Err(ChemError::SelfBond { offset: i });
            }
            if adjacency[a].iter().any(|&(n, _)| n == b) {
                return Err(ChemError::DuplicateBond { offset: i });
            }
            adjacency[a].push((b, i));
            adjacency[b].push((a, i));
        }
        for (i, atom) in atoms.iter_mut().enumerate() {
            if atom.bracket {
                atom.implicit_h = 0;
                continue;
            }
            let sum = adjacency[i]
                .iter()
                .map(|&(_, b)| bonds[b].order.valence())
                .sum();
            atom.implicit_h = match implicit_hydrogens(atom, sum) {
                Ok(h) => h,
                Err(ChemError::Hypervalent { symbol, valence, .. }) => {
                    return Err(ChemError::Hypervalent {
                        symbol,
                        valence,
                        offset: i,
                    })
                }
                Err(e) => return Err(e),
            };
        }
        let flags = ring::bridge_flags(atoms.len(), &adjacency, bonds.len());
        for (bond, in_ring) in bonds.iter_mut().zip(flags) {
            bond.in_ring = in_ring;
        }
        Ok(Molecule {
            atoms,
            bonds,
            adjacency,
            source: source.into(),
            lossy,
        })
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn bonds(&self) -> &[Bond] {
        &self.bonds
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    /// True when stereo or isotope information was dropped while parsing.
    pub fn is_lossy(&self) -> bool {
        self.lossy
    }

    pub fn atom_count(&self) -> usize {
        self.atoms.len()
    }

    pub fn heavy_atom_count(&self) -> usize {
        self.atoms.iter().filter(|a| a.is_heavy()).count()
    }

    /// `(neighbor, bond index)` pairs of an atom.
    pub fn neighbors(&self, atom: usize) -> &[(usize, usize)] {
        &self.adjacency[atom]
    }

    pub fn degree(&self, atom: usize) -> usize {
        self.adjacency[atom].len()
    }

    /// Number of bonded neighbors that are not hydrogen.
    pub fn heavy_degree(&self, atom: usize) -> usize {
        self.adjacency[atom]
            .iter()
            .filter(|&&(n, _)| self.atoms[n].is_heavy())
            .count()
    }

    pub fn bond_between(&self, a: usize, b: usize) -> Option<&Bond> {
        self.adjacency[a]
            .iter()
            .find(|&&(n, _)| n == b)
            .map(|&(_, i)| &self.bonds[i])
    }

    /// Connected components as sorted atom index lists, ordered by first atom.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let mut seen = vec![false; self.atoms.len()];
        let mut out = Vec::new();
        for start in 0..self.atoms.len() {
            if seen[start] {
                continue;
            }
            seen[start] = true;
            let mut stack = vec![start];
            let mut comp = Vec::new();
            while let Some(u) = stack.pop() {
                comp.push(u);
                for &(v, _) in &self.adjacency[u] {
                    if !seen[v] {
                        seen[v] = true;
                        stack.push(v);
                    }
                }
            }
            comp.sort_unstable();
            out.push(comp);
        }
        out
    }

    /// Induced subgraph on `keep` (in the given order). Implicit hydrogens of
    /// non-bracket atoms are recomputed for their remaining bonds; bracket atoms
    /// absorb the valence of removed bonds as explicit hydrogens.
    pub fn subgraph(&self, keep: &[usize]) -> Result<Molecule, ChemError> {
        let mut index = vec![usize::MAX; self.atoms.len()];
        for (new, &old) in keep.iter().enumerate() {
            index[old] = new;
        }
        let mut atoms: Vec<Atom> = keep.iter().map(|&i| self.atoms[i].clone()).collect();
        for (new, &old) in keep.iter().enumerate() {
            if atoms[new].bracket {
                let lost: u32 = self.adjacency[old]
                    .iter()
                    .filter(|&&(n, _)| index[n] == usize::MAX)
                    .map(|&(_, b)| self.bonds[b].order.valence())
                    .sum();
                atoms[new].explicit_h += lost;
            }
        }
        let bonds = self
            .bonds
            .iter()
            .filter(|b| index[b.endpoints.0] != usize::MAX && index[b.endpoints.1] != usize::MAX)
            .map(|b| Bond {
                endpoints: (index[b.endpoints.0], index[b.endpoints.1]),
                order: b.order,
                in_ring: false,
            })
            .collect();
        let mut mol = Molecule::new(atoms, bonds, String::new(), self.lossy)?;
        mol.source = write_smiles(&mol, &(0..mol.atom_count()).collect::<Vec<_>>());
        Ok(mol)
    }

    /// Relabels atoms so that old atom `i` becomes new atom `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Molecule {
        assert_eq!(perm.len(), self.atoms.len(), "permutation length mismatch");
        let mut atoms = vec![self.atoms[0].clone(); self.atoms.len()];
        for (old, &new) in perm.iter().enumerate() {
            atoms[new] = self.atoms[old].clone();
        }
        let bonds: Vec<Bond> = self
            .bonds
            .iter()
            .map(|b| Bond {
                endpoints: (perm[b.endpoints.0], perm[b.endpoints.1]),
                order: b.order,
                in_ring: b.in_ring,
            })
            .collect();
        let mut adjacency = vec![Vec::new(); atoms.len()];
        for (i, b) in bonds.iter().enumerate() {
            adjacency[b.endpoints.0].push((b.endpoints.1, i));
            adjacency[b.endpoints.1].push((b.endpoints.0, i));
        }
        Molecule {
            atoms,
            bonds,
            adjacency,
            source: self.source.clone(),
            lossy: self.lossy,
        }
    }

    /// Average molecular weight including implicit and explicit hydrogens.
    pub fn molecular_weight(&self) -> f64 {
        let h = Element::H.mass();
        self.atoms
            .iter()
            .map(|a| a.element.mass() + a.total_h() as f64 * h)
            .sum()
    }
}
