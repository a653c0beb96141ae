use rand::seq::SliceRandom;
use rand::Rng;

use super::{implicit_hydrogens, Atom, BondOrder, Molecule};

/// Writes SMILES by depth-first traversal. Each fragment starts at its
/// lowest-ranked atom and neighbors are visited in ascending rank. Ring-closure
/// digits take the lowest free number when the ring opens.
pub fn write_smiles(mol: &Molecule, ranks: &[usize]) -> String {
    assert_eq!(ranks.len(), mol.atom_count(), "one rank per atom");
    let n = mol.atom_count();
    let mut sorted_neighbors: Vec<Vec<(usize, usize)>> = (0..n)
        .map(|a| {
            let mut v = mol.neighbors(a).to_vec();
            v.sort_by_key(|&(nb, _)| ranks[nb]);
            v
        })
        .collect();

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&a| ranks[a]);

    let mut plan = Plan {
        visited: vec![false; n],
        bond_used: vec![false; mol.bonds().len()],
        children: vec![Vec::new(); n],
        ring_opens: vec![Vec::new(); n],
        ring_closes: vec![Vec::new(); n],
    };
    let mut out = String::new();
    for &start in &order {
        if plan.visited[start] {
            continue;
        }
        plan.explore(start, &mut sorted_neighbors);
        if !out.is_empty() {
            out.push('.');
        }
        let mut writer = Writer {
            mol,
            plan: &plan,
            digits: Vec::new(),
            bond_digit: vec![0; mol.bonds().len()],
            out: &mut out,
        };
        writer.write_from(start);
    }
    out
}

/// Renders the molecule with a random atom ranking, giving one of the many
/// valid non-canonical SMILES for the same graph.
pub fn render_random<R: Rng + ?Sized>(mol: &Molecule, rng: &mut R) -> String {
    let mut ranks: Vec<usize> = (0..mol.atom_count()).collect();
    ranks.shuffle(rng);
    write_smiles(mol, &ranks)
}

struct Plan {
    visited: Vec<bool>,
    bond_used: Vec<bool>,
    children: Vec<Vec<(usize, usize)>>,
    /// (bond, partner) pairs whose ring digit opens at this atom.
    ring_opens: Vec<Vec<(usize, usize)>>,
    ring_closes: Vec<Vec<usize>>,
}

impl Plan {
    fn explore(&mut self, start: usize, neighbors: &mut [Vec<(usize, usize)>]) {
        self.visited[start] = true;
        let mut stack: Vec<(usize, usize)> = vec![(start, 0)];
        while let Some(&mut (u, ref mut slot)) = stack.last_mut() {
            if *slot >= neighbors[u].len() {
                stack.pop();
                continue;
            }
            let (v, b) = neighbors[u][*slot];
            *slot += 1;
            if self.bond_used[b] {
                continue;
            }
            self.bond_used[b] = true;
            if self.visited[v] {
                // v is an ancestor on the current path: ring closure
                self.ring_opens[v].push((b, u));
                self.ring_closes[u].push(b);
            } else {
                self.visited[v] = true;
                self.children[u].push((v, b));
                stack.push((v, 0));
            }
        }
    }
}

struct Writer<'a> {
    mol: &'a Molecule,
    plan: &'a Plan,
    digits: Vec<bool>,
    bond_digit: Vec<usize>,
    out: &'a mut String,
}

impl Writer<'_> {
    fn write_from(&mut self, start: usize) {
        enum Step {
            Atom(usize),
            Text(&'static str),
            Bond(usize),
        }
        let mut stack = vec![Step::Atom(start)];
        while let Some(step) = stack.pop() {
            match step {
                Step::Text(t) => self.out.push_str(t),
                Step::Bond(b) => {
                    let sym = bond_symbol(self.mol, b);
                    self.out.push_str(sym);
                }
                Step::Atom(u) => {
                    write_atom(self.mol, u, self.out);
                    self.write_ring_digits(u);
                    let children = &self.plan.children[u];
                    // push in reverse so the first child is written first
                    for (i, &(v, b)) in children.iter().enumerate().rev() {
                        let last = i + 1 == children.len();
                        if !last {
                            stack.push(Step::Text(")"));
                        }
                        stack.push(Step::Atom(v));
                        stack.push(Step::Bond(b));
                        if !last {
                            stack.push(Step::Text("("));
                        }
                    }
                }
            }
        }
    }

    fn write_ring_digits(&mut self, u: usize) {
        let mut closing: Vec<usize> = self.plan.ring_closes[u]
            .iter()
            .map(|&b| self.bond_digit[b])
            .collect();
        closing.sort_unstable();
        for &d in &closing {
            push_digit(self.out, d);
        }
        for &(b, _) in &self.plan.ring_opens[u] {
            let d = (1..)
                .find(|&d| !self.digits.get(d).copied().unwrap_or(false) && !closing.contains(&d))
                .unwrap();
            if self.digits.len() <= d {
                self.digits.resize(d + 1, false);
            }
            self.digits[d] = true;
            self.bond_digit[b] = d;
            self.out.push_str(bond_symbol(self.mol, b));
            push_digit(self.out, d);
        }
        for d in closing {
            self.digits[d] = false;
        }
    }
}

fn push_digit(out: &mut String, d: usize) {
    if d < 10 {
        out.push((b'0' + d as u8) as char);
    } else {
        out.push('%');
        out.push_str(&d.to_string());
    }
}

fn bond_symbol(mol: &Molecule, b: usize) -> &'static str {
    let bond = &mol.bonds()[b];
    let both_aromatic =
        mol.atoms()[bond.endpoints.0].aromatic && mol.atoms()[bond.endpoints.1].aromatic;
    match bond.order {
        BondOrder::Single if both_aromatic => "-",
        BondOrder::Single => "",
        BondOrder::Double => "=",
        BondOrder::Triple => "#",
        BondOrder::Aromatic if both_aromatic => "",
        BondOrder::Aromatic => ":",
    }
}

fn write_atom(mol: &Molecule, idx: usize, out: &mut String) {
    let atom = &mol.atoms()[idx];
    if can_write_bare(mol, idx, atom) {
        push_symbol(atom, out);
        return;
    }
    out.push('[');
    push_symbol(atom, out);
    match atom.total_h() {
        0 => {}
        1 => out.push('H'),
        h => {
            out.push('H');
            out.push_str(&h.to_string());
        }
    }
    match atom.formal_charge {
        0 => {}
        1 => out.push('+'),
        -1 => out.push('-'),
        c if c > 0 => {
            out.push('+');
            out.push_str(&c.to_string());
        }
        c => {
            out.push('-');
            out.push_str(&(-c).to_string());
        }
    }
    out.push(']');
}

fn push_symbol(atom: &Atom, out: &mut String) {
    if atom.aromatic {
        out.push_str(&atom.element.symbol().to_ascii_lowercase());
    } else {
        out.push_str(atom.element.symbol());
    }
}

/// An atom can drop its brackets when re-parsing would restore the same
/// hydrogen count from default valence.
fn can_write_bare(mol: &Molecule, idx: usize, atom: &Atom) -> bool {
    if atom.formal_charge != 0 || !atom.element.is_organic_subset() {
        return false;
    }
    if atom.aromatic && !matches!(atom.element.symbol(), "B" | "C" | "N" | "O" | "P" | "S") {
        return false;
    }
    let sum = mol
        .neighbors(idx)
        .iter()
        .map(|&(_, b)| mol.bonds()[b].order.valence())
        .sum();
    let bare = Atom::organic(atom.element, atom.aromatic);
    implicit_hydrogens(&bare, sum) == Ok(atom.total_h())
}
