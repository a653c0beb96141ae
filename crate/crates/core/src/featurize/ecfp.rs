//! Extended-connectivity fingerprints.
//!
//! Identifiers are 64-bit FNV-1a hashes over little-endian `u64` words:
//! radius 0 hashes `[atomic number, heavy degree, charge, H count, in_ring,
//! aromatic]`; iteration `r` hashes `[r, own id, (bond code, neighbor id)...]`
//! with the pairs sorted. Every identifier from radius 0 through `radius` sets
//! bit `id mod n_bits`.

use super::FeaturizeError;
use crate::chem::Molecule;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn fnv1a_words(words: &[u64]) -> u64 {
    let mut h = FNV_OFFSET;
    for w in words {
        for byte in w.to_le_bytes() {
            h ^= byte as u64;
            h = h.wrapping_mul(FNV_PRIME);
        }
    }
    h
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Fingerprint {
    words: Vec<u64>,
    n_bits: usize,
    radius: u32,
}

impl Fingerprint {
    pub fn empty(n_bits: usize, radius: u32) -> Result<Fingerprint, FeaturizeError> {
        if !n_bits.is_power_of_two() {
            return Err(FeaturizeError::BadBitCount(n_bits));
        }
        Ok(Fingerprint {
            words: vec![0; n_bits.div_ceil(64)],
            n_bits,
            radius,
        })
    }

    pub fn from_indices(n_bits: usize, bits: &[usize]) -> Result<Fingerprint, FeaturizeError> {
        let mut fp = Self::empty(n_bits, 0)?;
        for &b in bits {
            fp.set(b % n_bits);
        }
        Ok(fp)
    }

    pub fn set(&mut self, bit: usize) {
        self.words[bit / 64] |= 1 << (bit % 64);
    }

    pub fn get(&self, bit: usize) -> bool {
        self.words[bit / 64] >> (bit % 64) & 1 == 1
    }

    pub fn n_bits(&self) -> usize {
        self.n_bits
    }

    pub fn radius(&self) -> u32 {
        self.radius
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn ones(&self) -> Vec<usize> {
        (0..self.n_bits).filter(|&b| self.get(b)).collect()
    }

    /// `0`/`1` string, bit 0 first.
    pub fn to_bit_string(&self) -> String {
        (0..self.n_bits).map(|b| if self.get(b) { '1' } else { '0' }).collect()
    }
}

pub fn ecfp(mol: &Molecule, radius: u32, n_bits: usize) -> Result<Fingerprint, FeaturizeError> {
    let mut fp = Fingerprint::empty(n_bits, radius)?;
    let n = mol.atom_count();
    let mut in_ring = vec![false; n];
    for b in mol.bonds() {
        if b.in_ring {
            in_ring[b.endpoints.0] = true;
            in_ring[b.endpoints.1] = true;
        }
    }
    let mut ids: Vec<u64> = (0..n)
        .map(|i| {
            let a = &mol.atoms()[i];
            fnv1a_words(&[
                a.element.atomic_number() as u64,
                mol.heavy_degree(i) as u64,
                a.formal_charge as i64 as u64,
                a.total_h() as u64,
                in_ring[i] as u64,
                a.aromatic as u64,
            ])
        })
        .collect();
    for &id in &ids {
        fp.set((id % n_bits as u64) as usize);
    }
    for r in 1..=radius {
        let next: Vec<u64> = (0..n)
            .map(|i| {
                let mut pairs: Vec<(u64, u64)> = mol
                    .neighbors(i)
                    .iter()
                    .map(|&(nb, b)| (mol.bonds()[b].order.code() as u64, ids[nb]))
                    .collect();
                pairs.sort_unstable();
                let mut words = Vec::with_capacity(2 + 2 * pairs.len());
                words.push(r as u64);
                words.push(ids[i]);
                for (o, id) in pairs {
                    words.push(o);
                    words.push(id);
                }
                fnv1a_words(&words)
            })
            .collect();
        ids = next;
        for &id in &ids {
            fp.set((id % n_bits as u64) as usize);
        }
    }
    Ok(fp)
}

/// `1 - |a & b| / |a | b|`, and 0 when both are empty.
pub fn jaccard_distance(a: &Fingerprint, b: &Fingerprint) -> Result<f64, FeaturizeError> {
    if a.n_bits != b.n_bits {
        return Err(FeaturizeError::MismatchedBits(a.n_bits, b.n_bits));
    }
    let (mut inter, mut union) = (0u64, 0u64);
    for (x, y) in a.words.iter().zip(&b.words) {
        inter += (x & y).count_ones() as u64;
        union += (x | y).count_ones() as u64;
    }
    if union == 0 {
        return Ok(0.0);
    }
    Ok(1.0 - inter as f64 / union as f64)
}
