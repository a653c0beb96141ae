//! Brute-force descriptor reference. Walks the SMILES string itself instead of
//! going through the library parser, then derives every descriptor from plain
//! edge lists: ring bonds by deleting each bond and testing reachability,
//! components by flood fill.

use std::collections::HashMap;

#[derive(Debug, Clone)]
pub struct Atom {
    pub symbol: String,
    pub aromatic: bool,
    pub charge: i32,
    /// `Some` for bracket atoms.
    pub bracket_h: Option<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Order {
    Single,
    Double,
    Triple,
    Aromatic,
}

impl Order {
    fn units(self) -> u32 {
        match self {
            Order::Single | Order::Aromatic => 1,
            Order::Double => 2,
            Order::Triple => 3,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Graph {
    pub atoms: Vec<Atom>,
    pub bonds: Vec<(usize, usize, Order)>,
}

pub fn mass(symbol: &str) -> f64 {
    match symbol {
        "H" => 1.008,
        "B" => 10.811,
        "C" => 12.011,
        "N" => 14.007,
        "O" => 15.999,
        "F" => 18.998,
        "Na" => 22.990,
        "P" => 30.974,
        "S" => 32.065,
        "Cl" => 35.453,
        "K" => 39.098,
        "Br" => 79.904,
        "I" => 126.904,
        other => panic!("no mass for {other}"),
    }
}

fn valence_tiers(symbol: &str) -> &'static [u32] {
    match symbol {
        "B" => &[3],
        "C" => &[4],
        "N" => &[3, 5],
        "O" => &[2],
        "P" => &[3, 5],
        "S" => &[2, 4, 6],
        "F" | "Cl" | "Br" | "I" => &[1],
        other => panic!("{other} is not an organic-subset element"),
    }
}

fn bond_symbol(c: char) -> Option<Order> {
    match c {
        '-' | '/' | '\\' => Some(Order::Single),
        '=' => Some(Order::Double),
        '#' => Some(Order::Triple),
        ':' => Some(Order::Aromatic),
        _ => None,
    }
}

fn bracket(body: &str) -> Atom {
    let b: Vec<char> = body.chars().collect();
    let mut i = 0;
    while i < b.len() && b[i].is_ascii_digit() {
        i += 1;
    }
    let start = i;
    i += 1;
    if i < b.len() && b[i].is_ascii_lowercase() {
        let two: String = b[start..=i].iter().collect();
        if ["Cl", "Br", "Na", "se", "as"].contains(&two.as_str()) {
            i += 1;
        }
    }
    let raw: String = b[start..i].iter().collect();
    let aromatic = raw.chars().next().unwrap().is_ascii_lowercase();
    let mut symbol = raw.clone();
    if aromatic {
        symbol[..1].make_ascii_uppercase();
    }
    while i < b.len() && b[i] == '@' {
        i += 1;
    }
    let mut h = 0;
    if i < b.len() && b[i] == 'H' {
        i += 1;
        h = 1;
        if i < b.len() && b[i].is_ascii_digit() {
            h = b[i].to_digit(10).unwrap();
            i += 1;
        }
    }
    let mut charge = 0;
    while i < b.len() && (b[i] == '+' || b[i] == '-') {
        let sign = if b[i] == '+' { 1 } else { -1 };
        i += 1;
        if i < b.len() && b[i].is_ascii_digit() {
            charge += sign * b[i].to_digit(10).unwrap() as i32;
            i += 1;
        } else {
            charge += sign;
        }
    }
    Atom {
        symbol,
        aromatic,
        charge,
        bracket_h: Some(h),
    }
}

/// Reads a SMILES string into atoms and bonds in order of appearance.
pub fn walk(s: &str) -> Graph {
    let c: Vec<char> = s.chars().collect();
    let mut g = Graph::default();
    let mut prev: Option<usize> = None;
    let mut stack = Vec::new();
    let mut pending: Option<Order> = None;
    let mut rings: HashMap<u32, (usize, Option<Order>)> = HashMap::new();
    let mut i = 0;
    let connect = |g: &mut Graph, a: usize, b: usize, explicit: Option<Order>| {
        let order = explicit.unwrap_or(if g.atoms[a].aromatic && g.atoms[b].aromatic {
            Order::Aromatic
        } else {
            Order::Single
        });
        g.bonds.push((a, b, order));
    };
    while i < c.len() {
        let ch = c[i];
        if let Some(o) = bond_symbol(ch) {
            pending = Some(o);
            i += 1;
            continue;
        }
        match ch {
            '(' => {
                stack.push(prev);
                i += 1;
                continue;
            }
            ')' => {
                prev = stack.pop().unwrap();
                i += 1;
                continue;
            }
            '.' => {
                prev = None;
                i += 1;
                continue;
            }
            _ => {}
        }
        if ch.is_ascii_digit() || ch == '%' {
            let (label, used) = if ch == '%' {
                (c[i + 1].to_digit(10).unwrap() * 10 + c[i + 2].to_digit(10).unwrap(), 3)
            } else {
                (ch.to_digit(10).unwrap(), 1)
            };
            i += used;
            let here = prev.unwrap();
            match rings.remove(&label) {
                Some((other, order)) => connect(&mut g, other, here, pending.or(order)),
                None => {
                    rings.insert(label, (here, pending));
                }
            }
            pending = None;
            continue;
        }
        let atom = if ch == '[' {
            let end = i + c[i..].iter().position(|&x| x == ']').unwrap();
            let body: String = c[i + 1..end].iter().collect();
            i = end + 1;
            bracket(&body)
        } else {
            let two: String = c[i..(i + 2).min(c.len())].iter().collect();
            let symbol = if two == "Cl" || two == "Br" {
                i += 2;
                two
            } else {
                i += 1;
                ch.to_ascii_uppercase().to_string()
            };
            Atom {
                symbol,
                aromatic: ch.is_ascii_lowercase(),
                charge: 0,
                bracket_h: None,
            }
        };
        g.atoms.push(atom);
        let idx = g.atoms.len() - 1;
        if let Some(p) = prev {
            connect(&mut g, p, idx, pending);
        }
        pending = None;
        prev = Some(idx);
    }
    assert!(rings.is_empty(), "unclosed ring in {s}");
    g
}

impl Graph {
    fn neighbors(&self, a: usize) -> Vec<(usize, usize)> {
        self.bonds
            .iter()
            .enumerate()
            .filter_map(|(k, &(x, y, _))| {
                if x == a {
                    Some((y, k))
                } else if y == a {
                    Some((x, k))
                } else {
                    None
                }
            })
            .collect()
    }

    fn reachable(&self, from: usize, to: usize, skip: usize) -> bool {
        let mut seen = vec![false; self.atoms.len()];
        let mut todo = vec![from];
        seen[from] = true;
        while let Some(a) = todo.pop() {
            if a == to {
                return true;
            }
            for (n, k) in self.neighbors(a) {
                if k != skip && !seen[n] {
                    seen[n] = true;
                    todo.push(n);
                }
            }
        }
        false
    }

    fn in_ring(&self, k: usize) -> bool {
        let (a, b, _) = self.bonds[k];
        self.reachable(a, b, k)
    }

    fn components(&self) -> usize {
        let mut seen = vec![false; self.atoms.len()];
        let mut count = 0;
        for s in 0..self.atoms.len() {
            if seen[s] {
                continue;
            }
            count += 1;
            let mut todo = vec![s];
            seen[s] = true;
            while let Some(a) = todo.pop() {
                for (n, _) in self.neighbors(a) {
                    if !seen[n] {
                        seen[n] = true;
                        todo.push(n);
                    }
                }
            }
        }
        count
    }

    fn heavy(&self, a: usize) -> bool {
        self.atoms[a].symbol != "H"
    }

    /// Implied plus bracket hydrogens, not counting explicit H atoms.
    fn own_h(&self, a: usize) -> u32 {
        let atom = &self.atoms[a];
        if let Some(h) = atom.bracket_h {
            return h;
        }
        let sum: u32 = self.neighbors(a).iter().map(|&(_, k)| self.bonds[k].2.units()).sum();
        let tiers = valence_tiers(&atom.symbol);
        if atom.aromatic {
            return tiers[0].saturating_sub(sum + 1);
        }
        tiers.iter().find(|&&v| v >= sum).map_or(0, |v| v - sum)
    }

    fn hydrogens(&self, a: usize) -> u32 {
        let attached = self.neighbors(a).iter().filter(|&&(n, _)| !self.heavy(n)).count() as u32;
        self.own_h(a) + attached
    }

    fn heavy_degree(&self, a: usize) -> usize {
        self.neighbors(a).iter().filter(|&&(n, _)| self.heavy(n)).count()
    }

    /// The twelve descriptors in table order.
    pub fn descriptors(&self) -> Vec<f64> {
        let n = self.atoms.len();
        let mut weight = 0.0;
        for a in 0..n {
            weight += mass(&self.atoms[a].symbol) + self.own_h(a) as f64 * mass("H");
        }
        let heavy_atoms = (0..n).filter(|&a| self.heavy(a)).count();
        let heavy_bonds = self.bonds.iter().filter(|&&(a, b, _)| self.heavy(a) && self.heavy(b)).count();
        let circuit_rank = self.bonds.len() + self.components() - n;
        let aromatic = self.atoms.iter().filter(|a| a.aromatic).count();
        let no = |a: usize| matches!(self.atoms[a].symbol.as_str(), "N" | "O");
        let hbd = (0..n).filter(|&a| no(a) && self.hydrogens(a) > 0).count();
        let hba = (0..n).filter(|&a| no(a)).count();
        let rotatable = (0..self.bonds.len())
            .filter(|&k| {
                let (a, b, o) = self.bonds[k];
                o == Order::Single
                    && !self.in_ring(k)
                    && self.heavy(a)
                    && self.heavy(b)
                    && self.heavy_degree(a) >= 2
                    && self.heavy_degree(b) >= 2
            })
            .count();
        let carbons: Vec<usize> = (0..n).filter(|&a| self.atoms[a].symbol == "C").collect();
        let sp3 = carbons
            .iter()
            .filter(|&&a| !self.atoms[a].aromatic && self.neighbors(a).iter().all(|&(_, k)| self.bonds[k].2 == Order::Single))
            .count();
        let fsp3 = if carbons.is_empty() { 0.0 } else { sp3 as f64 / carbons.len() as f64 };
        let halogens = self
            .atoms
            .iter()
            .filter(|a| matches!(a.symbol.as_str(), "F" | "Cl" | "Br" | "I"))
            .count();
        let charge: i32 = self.atoms.iter().map(|a| a.charge).sum();
        let hetero = self.atoms.iter().filter(|a| a.symbol != "C" && a.symbol != "H").count();
        vec![
            weight,
            heavy_atoms as f64,
            heavy_bonds as f64,
            circuit_rank as f64,
            aromatic as f64,
            hbd as f64,
            hba as f64,
            rotatable as f64,
            fsp3,
            halogens as f64,
            charge as f64,
            hetero as f64,
        ]
    }
}
