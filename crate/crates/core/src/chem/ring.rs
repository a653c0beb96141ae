use super::Molecule;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RingInfo {
    /// `in_ring` flag per bond, aligned with [`Molecule::bonds`].
    pub in_ring: Vec<bool>,
    /// Circuit rank (independent cycle count) per connected component, in the
    /// order of [`Molecule::components`].
    pub circuit_rank: Vec<usize>,
}

impl RingInfo {
    pub fn total_circuit_rank(&self) -> usize {
        self.circuit_rank.iter().sum()
    }
}

/// Ring-bond flags (non-bridges) and per-component circuit rank.
pub fn ring_bonds(mol: &Molecule) -> RingInfo {
    let adjacency: Vec<Vec<(usize, usize)>> =
        (0..mol.atom_count()).map(|a| mol.neighbors(a).to_vec()).collect();
    let in_ring = bridge_flags(mol.atom_count(), &adjacency, mol.bonds().len());
    let circuit_rank = mol
        .components()
        .iter()
        .map(|comp| {
            let mut edges = 0;
            for &a in comp {
                edges += mol.degree(a);
            }
            edges / 2 + 1 - comp.len()
        })
        .collect();
    RingInfo {
        in_ring,
        circuit_rank,
    }
}

/// Marks every bond that is not a bridge. Iterative Tarjan lowpoint search.
pub(crate) fn bridge_flags(n: usize, adjacency: &[Vec<(usize, usize)>], n_bonds: usize) -> Vec<bool> {
    let mut in_ring = vec![true; n_bonds];
    let mut disc = vec![usize::MAX; n];
    let mut low = vec![0usize; n];
    let mut timer = 0;
    // (atom, bond used to enter, next neighbor slot)
    let mut stack: Vec<(usize, usize, usize)> = Vec::new();
    for root in 0..n {
        if disc[root] != usize::MAX {
            continue;
        }
        disc[root] = timer;
        low[root] = timer;
        timer += 1;
        stack.push((root, usize::MAX, 0));
        while let Some(frame) = stack.last_mut() {
            let (u, parent_bond, slot) = *frame;
            if slot < adjacency[u].len() {
                frame.2 += 1;
                let (v, b) = adjacency[u][slot];
                if b == parent_bond {
                    continue;
                }
                if disc[v] == usize::MAX {
                    disc[v] = timer;
                    low[v] = timer;
                    timer += 1;
                    stack.push((v, b, 0));
                } else {
                    low[u] = low[u].min(disc[v]);
                }
            } else {
                stack.pop();
                if let Some(&(p, _, _)) = stack.last() {
                    low[p] = low[p].min(low[u]);
                    if low[u] > disc[p] {
                        in_ring[parent_bond] = false;
                    }
                }
            }
        }
    }
    in_ring
}
