use std::collections::BTreeMap;

use super::{Atom, Bond, BondOrder, ChemError, Element, Molecule};

struct RingOpen {
    atom: usize,
    order: Option<BondOrder>,
    offset: usize,
}

struct Parser<'a> {
    bytes: &'a [u8],
    pos: usize,
    atoms: Vec<Atom>,
    atom_offsets: Vec<usize>,
    bonds: Vec<Bond>,
    bond_offsets: Vec<usize>,
    lossy: bool,
}

/// Parses a SMILES string into a [`Molecule`].
///
/// Supports organic-subset and bracket atoms, bond symbols `- = # :`,
/// branches, ring closures (`1`-`9`, `%nn`) and dot-separated fragments.
/// Stereo (`/ \ @`) and isotope labels are consumed and dropped.
pub fn parse_smiles(s: &str) -> Result<Molecule, ChemError> {
    if s.is_empty() {
        return Err(ChemError::Empty);
    }
    if let Some(offset) = s.bytes().position(|b| !b.is_ascii()) {
        return Err(ChemError::NonAscii { offset });
    }
    let mut p = Parser {
        bytes: s.as_bytes(),
        pos: 0,
        atoms: Vec::new(),
        atom_offsets: Vec::new(),
        bonds: Vec::new(),
        bond_offsets: Vec::new(),
        lossy: false,
    };
    p.run()?;
    let Parser {
        atoms,
        atom_offsets,
        bonds,
        bond_offsets,
        lossy,
        ..
    } = p;
    Molecule::new(atoms, bonds, s, lossy).map_err(|e| match e {
        ChemError::Hypervalent {
            symbol,
            valence,
            offset,
        } => ChemError::Hypervalent {
            symbol,
            valence,
            offset: atom_offsets[offset],
        },
        ChemError::DuplicateBond { offset } => ChemError::DuplicateBond {
            offset: bond_offsets[offset],
        },
        ChemError::SelfBond { offset } => ChemError::SelfBond {
            offset: bond_offsets[offset],
        },
        other => other,
    })
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<u8> {
        self.bytes.get(self.pos).copied()
    }

    fn run(&mut self) -> Result<(), ChemError> {
        let mut prev: Option<usize> = None;
        let mut pending: Option<(BondOrder, usize)> = None;
        let mut branches: Vec<(Option<usize>, usize)> = Vec::new();
        let mut rings: BTreeMap<u32, RingOpen> = BTreeMap::new();
        let mut just_opened_branch = false;
        let mut last_dot: Option<usize> = None;

        while let Some(c) = self.peek() {
            let offset = self.pos;
            match c {
                b'(' => {
                    if prev.is_none() || pending.is_some() {
                        return Err(ChemError::UnexpectedChar { ch: '(', offset });
                    }
                    branches.push((prev, offset));
                    self.pos += 1;
                    just_opened_branch = true;
                    continue;
                }
                b')' => {
                    if just_opened_branch {
                        return Err(ChemError::EmptyBranch { offset });
                    }
                    if let Some((_, bond_offset)) = pending {
                        return Err(ChemError::DanglingBond {
                            offset: bond_offset,
                        });
                    }
                    let (atom, _) = branches
                        .pop()
                        .ok_or(ChemError::UnmatchedBranchClose { offset })?;
                    prev = atom;
                    self.pos += 1;
                }
                b'-' | b'=' | b'#' | b':' | b'/' | b'\\' => {
                    if pending.is_some() || prev.is_none() {
                        return Err(ChemError::UnexpectedChar {
                            ch: c as char,
                            offset,
                        });
                    }
                    let order = match c {
                        b'=' => BondOrder::Double,
                        b'#' => BondOrder::Triple,
                        b':' => BondOrder::Aromatic,
                        b'/' | b'\\' => {
                            self.lossy = true;
                            BondOrder::Single
                        }
                        _ => BondOrder::Single,
                    };
                    pending = Some((order, offset));
                    self.pos += 1;
                    // Bond symbols may follow '(' directly; keep the flag so
                    // "C(=)" is still reported as an empty branch.
                    continue;
                }
                b'.' => {
                    if prev.is_none() {
                        return Err(ChemError::EmptyFragment { offset });
                    }
                    if let Some((_, bond_offset)) = pending {
                        return Err(ChemError::DanglingBond {
                            offset: bond_offset,
                        });
                    }
                    if !branches.is_empty() {
                        return Err(ChemError::UnexpectedChar { ch: '.', offset });
                    }
                    prev = None;
                    last_dot = Some(offset);
                    self.pos += 1;
                }
                b'0'..=b'9' | b'%' => {
                    let atom = prev.ok_or(ChemError::UnexpectedChar {
                        ch: c as char,
                        offset,
                    })?;
                    let digit = self.ring_number()?;
                    let order = pending.take().map(|(o, _)| o);
                    match rings.remove(&digit) {
                        Some(open) => {
                            let order = match (open.order, order) {
                                (Some(a), Some(b)) if a != b => {
                                    return Err(ChemError::ConflictingRingBond { offset })
                                }
                                (Some(a), _) | (None, Some(a)) => a,
                                (None, None) => self.default_order(open.atom, atom),
                            };
                            self.add_bond(open.atom, atom, order, offset);
                        }
                        None => {
                            rings.insert(
                                digit,
                                RingOpen {
                                    atom,
                                    order,
                                    offset,
                                },
                            );
                        }
                    }
                    continue;
                }
                b'[' => {
                    let atom = self.bracket_atom()?;
                    self.attach(atom, offset, &mut prev, &mut pending);
                }
                b'A'..=b'Z' | b'a'..=b'z' => {
                    let atom = self.organic_atom()?;
                    self.attach(atom, offset, &mut prev, &mut pending);
                }
                _ => {
                    return Err(ChemError::UnexpectedChar {
                        ch: c as char,
                        offset,
                    })
                }
            }
            just_opened_branch = false;
        }

        if let Some((_, offset)) = branches.first() {
            return Err(ChemError::UnclosedBranch { offset: *offset });
        }
        if let Some((_, offset)) = pending {
            return Err(ChemError::DanglingBond { offset });
        }
        if let Some(open) = rings.iter().min_by_key(|(_, o)| o.offset) {
            return Err(ChemError::UnclosedRing {
                digit: *open.0,
                offset: open.1.offset,
            });
        }
        if prev.is_none() {
            return Err(ChemError::EmptyFragment {
                offset: last_dot.unwrap_or(0),
            });
        }
        Ok(())
    }

    fn attach(
        &mut self,
        atom: Atom,
        offset: usize,
        prev: &mut Option<usize>,
        pending: &mut Option<(BondOrder, usize)>,
    ) {
        let idx = self.atoms.len();
        self.atoms.push(atom);
        self.atom_offsets.push(offset);
        if let Some(p) = *prev {
            let order = match pending.take() {
                Some((o, _)) => o,
                None => self.default_order(p, idx),
            };
            self.add_bond(p, idx, order, offset);
        }
        *prev = Some(idx);
    }

    fn default_order(&self, a: usize, b: usize) -> BondOrder {
        if self.atoms[a].aromatic && self.atoms[b].aromatic {
            BondOrder::Aromatic
        } else {
            BondOrder::Single
        }
    }

    fn add_bond(&mut self, a: usize, b: usize, order: BondOrder, offset: usize) {
        self.bonds.push(Bond {
            endpoints: (a, b),
            order,
            in_ring: false,
        });
        self.bond_offsets.push(offset);
    }

    fn ring_number(&mut self) -> Result<u32, ChemError> {
        let offset = self.pos;
        if self.peek() == Some(b'%') {
            let d = &self.bytes[offset + 1..];
            if d.len() < 2 || !d[0].is_ascii_digit() || !d[1].is_ascii_digit() {
                return Err(ChemError::UnexpectedChar { ch: '%', offset });
            }
            self.pos += 3;
            Ok(((d[0] - b'0') * 10 + (d[1] - b'0')) as u32)
        } else {
            self.pos += 1;
            Ok((self.bytes[offset] - b'0') as u32)
        }
    }

    fn organic_atom(&mut self) -> Result<Atom, ChemError> {
        let offset = self.pos;
        let c = self.bytes[offset];
        let next = self.bytes.get(offset + 1).copied();
        let (symbol, aromatic, len) = match (c, next) {
            (b'C', Some(b'l')) => ("Cl", false, 2),
            (b'B', Some(b'r')) => ("Br", false, 2),
            (b'B' | b'C' | b'N' | b'O' | b'P' | b'S' | b'F' | b'I', _) => {
                (std::str::from_utf8(&self.bytes[offset..offset + 1]).unwrap(), false, 1)
            }
            (b'b', _) => ("B", true, 1),
            (b'c', _) => ("C", true, 1),
            (b'n', _) => ("N", true, 1),
            (b'o', _) => ("O", true, 1),
            (b'p', _) => ("P", true, 1),
            (b's', _) => ("S", true, 1),
            _ => {
                let end = if next.is_some_and(|n| n.is_ascii_lowercase()) {
                    offset + 2
                } else {
                    offset + 1
                };
                return Err(ChemError::UnknownElement {
                    symbol: String::from_utf8_lossy(&self.bytes[offset..end]).into_owned(),
                    offset,
                });
            }
        };
        self.pos += len;
        let element = Element::from_symbol(symbol).expect("organic subset is in the table");
        Ok(Atom::organic(element, aromatic))
    }

    fn bracket_atom(&mut self) -> Result<Atom, ChemError> {
        let start = self.pos;
        let close = self.bytes[start..]
            .iter()
            .position(|&b| b == b']')
            .map(|p| start + p)
            .ok_or(ChemError::MalformedBracket {
                offset: start,
                reason: "missing ']'",
            })?;
        let body = &self.bytes[start + 1..close];
        let malformed = |reason| ChemError::MalformedBracket {
            offset: start,
            reason,
        };
        let mut i = 0;

        // isotope
        while i < body.len() && body[i].is_ascii_digit() {
            i += 1;
        }
        if i > 0 {
            self.lossy = true;
        }

        // element symbol
        let sym_start = i;
        let (element, aromatic) = match body.get(i) {
            Some(c) if c.is_ascii_uppercase() => {
                let two = body
                    .get(i + 1)
                    .filter(|n| n.is_ascii_lowercase())
                    .and_then(|_| Element::from_symbol(std::str::from_utf8(&body[i..i + 2]).ok()?));
                match two {
                    Some(e) => {
                        i += 2;
                        (e, false)
                    }
                    None => {
                        let sym = std::str::from_utf8(&body[i..i + 1]).unwrap();
                        let e = Element::from_symbol(sym).ok_or_else(|| ChemError::UnknownElement {
                            symbol: sym.to_string(),
                            offset: start + 1 + i,
                        })?;
                        i += 1;
                        (e, false)
                    }
                }
            }
            Some(c) if c.is_ascii_lowercase() => {
                let two = match body.get(i..i + 2) {
                    Some(b"se") => Some(Element::from_symbol("Se").unwrap()),
                    Some(b"as") => Some(Element::from_symbol("As").unwrap()),
                    _ => None,
                };
                match two {
                    Some(e) => {
                        i += 2;
                        (e, true)
                    }
                    None => {
                        let upper = (*c as char).to_ascii_uppercase().to_string();
                        let e = Element::from_symbol(&upper)
                            .filter(|e| e.can_be_aromatic())
                            .ok_or_else(|| ChemError::UnknownElement {
                                symbol: (*c as char).to_string(),
                                offset: start + 1 + i,
                            })?;
                        i += 1;
                        (e, true)
                    }
                }
            }
            _ => return Err(malformed("missing element symbol")),
        };
        debug_assert!(i > sym_start);

        // chirality: @, @@, @TH1, @AL2, @SP3, @TB10, @OH20 ...
        if body.get(i) == Some(&b'@') {
            self.lossy = true;
            i += 1;
            if body.get(i) == Some(&b'@') {
                i += 1;
            } else if body.get(i).is_some_and(|c| c.is_ascii_uppercase() && *c != b'H') {
                while i < body.len() && body[i].is_ascii_uppercase() {
                    i += 1;
                }
                while i < body.len() && body[i].is_ascii_digit() {
                    i += 1;
                }
            }
        }

        // hydrogen count
        let mut explicit_h = 0;
        if body.get(i) == Some(&b'H') {
            i += 1;
            let d0 = i;
            while i < body.len() && body[i].is_ascii_digit() {
                i += 1;
            }
            explicit_h = if i > d0 {
                std::str::from_utf8(&body[d0..i]).unwrap().parse().map_err(|_| malformed("bad H count"))?
            } else {
                1
            };
        }

        // charge
        let mut formal_charge = 0i32;
        if let Some(&sign) = body.get(i).filter(|&&c| c == b'+' || c == b'-') {
            let unit = if sign == b'+' { 1 } else { -1 };
            i += 1;
            let d0 = i;
            while i < body.len() && body[i].is_ascii_digit() {
                i += 1;
            }
            if i > d0 {
                let n: i32 = std::str::from_utf8(&body[d0..i])
                    .unwrap()
                    .parse()
                    .map_err(|_| malformed("bad charge"))?;
                formal_charge = unit * n;
            } else {
                formal_charge = unit;
                while body.get(i) == Some(&sign) {
                    formal_charge += unit;
                    i += 1;
                }
            }
        }

        // atom class
        if body.get(i) == Some(&b':') {
            i += 1;
            let d0 = i;
            while i < body.len() && body[i].is_ascii_digit() {
                i += 1;
            }
            if i == d0 {
                return Err(malformed("empty atom class"));
            }
        }

        if i != body.len() {
            return Err(malformed("unexpected trailing characters"));
        }
        self.pos = close + 1;
        Ok(Atom {
            element,
            aromatic,
            formal_charge,
            explicit_h,
            implicit_h: 0,
            bracket: true,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn h_counts(s: &str) -> Vec<u32> {
        parse_smiles(s).unwrap().atoms().iter().map(Atom::total_h).collect()
    }

    #[test]
    fn ethanol() {
        let m = parse_smiles("CCO").unwrap();
        assert_eq!(m.atom_count(), 3);
        assert_eq!(m.bonds().len(), 2);
        assert!(m.bonds().iter().all(|b| b.order == BondOrder::Single));
        assert_eq!(h_counts("CCO"), vec![3, 2, 1]);
    }

    #[test]
    fn benzene() {
        let m = parse_smiles("c1ccccc1").unwrap();
        assert_eq!(m.atom_count(), 6);
        assert!(m.atoms().iter().all(|a| a.aromatic && a.total_h() == 1));
        assert_eq!(m.bonds().len(), 6);
        assert!(m.bonds().iter().all(|b| b.order == BondOrder::Aromatic && b.in_ring));
    }

    #[test]
    fn unclosed_ring_reports_offset() {
        assert_eq!(
            parse_smiles("C1CC"),
            Err(ChemError::UnclosedRing { digit: 1, offset: 1 })
        );
    }

    #[test]
    fn error_cases() {
        assert!(matches!(parse_smiles("C(C"), Err(ChemError::UnclosedBranch { offset: 1 })));
        assert!(matches!(parse_smiles("CC)"), Err(ChemError::UnmatchedBranchClose { offset: 2 })));
        assert!(matches!(parse_smiles("CXC"), Err(ChemError::UnknownElement { offset: 1, .. })));
        assert!(matches!(parse_smiles("C[Xy]"), Err(ChemError::UnknownElement { .. })));
        assert!(matches!(parse_smiles("C..C"), Err(ChemError::EmptyFragment { offset: 2 })));
        assert!(matches!(parse_smiles(".C"), Err(ChemError::EmptyFragment { offset: 0 })));
        assert!(matches!(parse_smiles("C."), Err(ChemError::EmptyFragment { offset: 1 })));
        assert!(matches!(parse_smiles("C[NH4"), Err(ChemError::MalformedBracket { offset: 1, .. })));
        assert!(matches!(parse_smiles("C[N+x]"), Err(ChemError::MalformedBracket { .. })));
        assert!(matches!(parse_smiles("C(=C)(C)(C)(C)C"), Err(ChemError::Hypervalent { offset: 0, .. })));
        assert!(matches!(parse_smiles("C="), Err(ChemError::DanglingBond { offset: 1 })));
        assert!(matches!(parse_smiles("C()C"), Err(ChemError::EmptyBranch { offset: 2 })));
        assert!(matches!(parse_smiles("C11"), Err(ChemError::SelfBond { .. })));
        assert!(matches!(parse_smiles("C12CC12"), Err(ChemError::DuplicateBond { .. })));
        assert!(matches!(parse_smiles("C=1CC#1"), Err(ChemError::ConflictingRingBond { .. })));
        assert_eq!(parse_smiles(""), Err(ChemError::Empty));
        assert!(matches!(parse_smiles("Cé"), Err(ChemError::NonAscii { offset: 1 })));
    }

    #[test]
    fn bracket_atoms() {
        let m = parse_smiles("[NH4+]").unwrap();
        let a = &m.atoms()[0];
        assert_eq!((a.explicit_h, a.implicit_h, a.formal_charge), (4, 0, 1));
        let m = parse_smiles("[13CH3][O-]").unwrap();
        assert!(m.is_lossy());
        assert_eq!(m.atoms()[1].formal_charge, -1);
        assert_eq!(m.atoms()[1].total_h(), 0);
        let m = parse_smiles("[Fe++].[Cl-].[Cl-]").unwrap();
        assert_eq!(m.atoms()[0].formal_charge, 2);
        let m = parse_smiles("c1cc[nH]c1").unwrap();
        assert_eq!(m.atoms()[3].total_h(), 1);
        assert!(m.atoms()[3].aromatic);
        let m = parse_smiles("[C@@H](F)(Cl)Br").unwrap();
        assert!(m.is_lossy());
        assert_eq!(m.atoms()[0].total_h(), 1);
        let m = parse_smiles("[se]1cccc1").unwrap();
        assert_eq!(m.atoms()[0].element.symbol(), "Se");
        assert!(parse_smiles("[CH3:7]C").is_ok());
    }

    #[test]
    fn ring_closures_and_bonds() {
        let m = parse_smiles("C%10CC%10").unwrap();
        assert_eq!(m.bonds().len(), 3);
        let m = parse_smiles("C=1CCC1").unwrap();
        assert!(m.bonds().iter().any(|b| b.order == BondOrder::Double && b.in_ring));
        let m = parse_smiles("F/C=C/F").unwrap();
        assert!(m.is_lossy());
        assert_eq!(h_counts("C#N"), vec![1, 0]);
        assert_eq!(h_counts("c1ccccc1-c1ccccc1")[5], 0);
        assert_eq!(h_counts("Cn1cnc2c1c(=O)n(C)c(=O)n2C").iter().sum::<u32>(), 10);
        assert_eq!(h_counts("O=S(=O)(O)O"), vec![0, 0, 0, 1, 1]);
    }

    #[test]
    fn two_letter_halogens() {
        let m = parse_smiles("ClCBr").unwrap();
        let syms: Vec<_> = m.atoms().iter().map(|a| a.element.symbol()).collect();
        assert_eq!(syms, vec!["Cl", "C", "Br"]);
    }
}
