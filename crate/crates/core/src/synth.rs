//! Deterministic drug-like SMILES generator for tests and desk-scale runs.
//!
//! Molecules are `[substituent] ring [linker ring]` compositions or short
//! acyclic chains, with a few marketed drugs mixed in. `{B}` in a ring
//! template is an optional branch.

use std::collections::HashSet;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const RINGS: [&str; 18] = [
    "c1ccc{B}cc1",
    "c1ccnc{B}c1",
    "c1cc{B}ncc1",
    "C1CCN{B}CC1",
    "C1CC{B}CC1",
    "C1CCOCC1",
    "c1ccoc1",
    "c1ccsc1",
    "c1cc[nH]c1",
    "C1CC1",
    "C1CCC{B}1",
    "c1ccc2ccccc2c1",
    "c1ccc2[nH]ccc2c1",
    "c1cncnc1",
    "C1CN{B}CCN1",
    "c1ccc2occc2c1",
    "C1CCCCC1",
    "c1cnn{B}c1",
];

const SUBSTITUENTS: [&str; 18] = [
    "C", "CC", "O", "N", "Cl", "F", "Br", "C(=O)O", "C(=O)N", "OC", "C#N", "CC(C)C", "N(C)C", "S(=O)(=O)N", "CCO", "C(F)(F)F", "OCC", "C(C)=O",
];

const PREFIXES: [&str; 18] = [
    "C", "CC", "O", "N", "Cl", "F", "Br", "OC(=O)", "NC(=O)", "CO", "N#C", "CC(C)C", "CN(C)", "NS(=O)(=O)", "OCC", "FC(F)(F)", "CCO", "CC(=O)",
];

const LINKERS: [&str; 12] = ["", "C", "CC", "O", "N", "C(=O)N", "NC(=O)", "S(=O)(=O)", "OCC", "C=C", "CN", "C(=O)"];

const DRUGS: [&str; 8] = [
    "CC(=O)Oc1ccccc1C(=O)O",
    "Cn1cnc2c1c(=O)n(C)c(=O)n2C",
    "CC(C)Cc1ccc(cc1)C(C)C(=O)O",
    "CC(=O)Nc1ccc(O)cc1",
    "CN1CCCC1c1cccnc1",
    "CC(=O)[O-].[Na+]",
    "OC(=O)CC(O)(CC(=O)O)C(=O)O",
    "Clc1ccc(cc1)C(c1ccccc1)N1CCN(CC1)CCOCC(=O)O",
];

fn ring<R: Rng>(rng: &mut R) -> String {
    let t = *RINGS.choose(rng).unwrap();
    let branch = if t.contains("{B}") && rng.random_bool(0.5) {
        format!("({})", SUBSTITUENTS.choose(rng).unwrap())
    } else {
        String::new()
    };
    t.replace("{B}", &branch)
}

fn chain<R: Rng>(rng: &mut R) -> String {
    let n = rng.random_range(2..=4);
    let parts: Vec<&str> = (0..n).map(|_| ["C", "CC", "O", "N", "C(C)", "C(=O)", "C(Cl)"].choose(rng).copied().unwrap()).collect();
    let mut s: String = parts.concat();
    // avoid peroxides and hydrazines from adjacent heteroatoms
    while s.contains("OO") || s.contains("NN") || s.contains("ON") || s.contains("NO") {
        s = s.replacen("OO", "OCO", 1).replacen("NN", "NCN", 1).replacen("ON", "OCN", 1).replacen("NO", "NCO", 1);
    }
    if s.ends_with("C(=O)") {
        s.push('O');
    }
    s
}

fn one<R: Rng>(rng: &mut R) -> String {
    let r: f64 = rng.random();
    if r < 0.02 {
        return DRUGS.choose(rng).unwrap().to_string();
    }
    if r < 0.12 {
        return chain(rng);
    }
    let mut s = String::new();
    if rng.random_bool(0.6) {
        s.push_str(PREFIXES.choose(rng).unwrap());
    }
    s.push_str(&ring(rng));
    if rng.random_bool(0.6) {
        s.push_str(LINKERS.choose(rng).unwrap());
        s.push_str(&ring(rng));
    }
    s
}

/// `n` distinct SMILES strings; a prefix of `generate(m, seed)` for `m > n`
/// equals `generate(n, seed)`.
pub fn generate(n: usize, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(n);
    let mut stale = 0;
    while out.len() < n {
        let s = one(&mut rng);
        if seen.insert(s.clone()) {
            out.push(s);
            stale = 0;
        } else {
            stale += 1;
            assert!(stale < 100_000, "generator exhausted at {} molecules", out.len());
        }
    }
    out
}
