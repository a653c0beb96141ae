use super::{canonicalize, Molecule};

/// Keeps the fragment with the most heavy atoms. Ties go to the higher
/// molecular weight, then to the lexicographically smaller canonical SMILES.
pub fn largest_fragment(mol: &Molecule) -> Molecule {
    let components = mol.components();
    if components.len() <= 1 {
        return mol.clone();
    }
    let mut best: Option<(usize, f64, String, Molecule)> = None;
    for comp in components {
        let frag = mol
            .subgraph(&comp)
            .expect("a connected component keeps valid valences");
        let heavy = frag.heavy_atom_count();
        let weight = frag.molecular_weight();
        let better = match &best {
            None => true,
            Some((bh, bw, bc, _)) => {
                if heavy != *bh {
                    heavy > *bh
                } else if (weight - bw).abs() > 1e-9 {
                    weight > *bw
                } else {
                    canonicalize(&frag) < *bc
                }
            }
        };
        if better {
            let c = canonicalize(&frag);
            best = Some((heavy, weight, c, frag));
        }
    }
    best.unwrap().3
}
