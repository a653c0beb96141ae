//! Bundled periodic table subset with average atomic masses.

use std::fmt;

/// An element from the bundled table, identified by atomic number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Element(u8);

struct ElementData {
    number: u8,
    symbol: &'static str,
    mass: f64,
}

const fn el(number: u8, symbol: &'static str, mass: f64) -> ElementData {
    ElementData {
        number,
        symbol,
        mass,
    }
}

// Average atomic masses (IUPAC conventional values, 3 decimals).
static TABLE: &[ElementData] = &[
    el(1, "H", 1.008),
    el(2, "He", 4.003),
    el(3, "Li", 6.941),
    el(4, "Be", 9.012),
    el(5, "B", 10.811),
    el(6, "C", 12.011),
    el(7, "N", 14.007),
    el(8, "O", 15.999),
    el(9, "F", 18.998),
    el(10, "Ne", 20.180),
    el(11, "Na", 22.990),
    el(12, "Mg", 24.305),
    el(13, "Al", 26.982),
    el(14, "Si", 28.086),
    el(15, "P", 30.974),
    el(16, "S", 32.065),
    el(17, "Cl", 35.453),
    el(18, "Ar", 39.948),
    el(19, "K", 39.098),
    el(20, "Ca", 40.078),
    el(22, "Ti", 47.867),
    el(24, "Cr", 51.996),
    el(25, "Mn", 54.938),
    el(26, "Fe", 55.845),
    el(27, "Co", 58.933),
    el(28, "Ni", 58.693),
    el(29, "Cu", 63.546),
    el(30, "Zn", 65.380),
    el(31, "Ga", 69.723),
    el(32, "Ge", 72.630),
    el(33, "As", 74.922),
    el(34, "Se", 78.971),
    el(35, "Br", 79.904),
    el(37, "Rb", 85.468),
    el(38, "Sr", 87.620),
    el(47, "Ag", 107.868),
    el(48, "Cd", 112.414),
    el(50, "Sn", 118.710),
    el(51, "Sb", 121.760),
    el(52, "Te", 127.600),
    el(53, "I", 126.904),
    el(55, "Cs", 132.905),
    el(56, "Ba", 137.327),
    el(78, "Pt", 195.084),
    el(79, "Au", 196.967),
    el(80, "Hg", 200.592),
    el(82, "Pb", 207.200),
    el(83, "Bi", 208.980),
];

impl Element {
    pub const H: Element = Element(1);
    pub const B: Element = Element(5);
    pub const C: Element = Element(6);
    pub const N: Element = Element(7);
    pub const O: Element = Element(8);
    pub const F: Element = Element(9);
    pub const P: Element = Element(15);
    pub const S: Element = Element(16);
    pub const CL: Element = Element(17);
    pub const BR: Element = Element(35);
    pub const I: Element = Element(53);

    pub fn from_symbol(symbol: &str) -> Option<Element> {
        TABLE
            .iter()
            .find(|e| e.symbol == symbol)
            .map(|e| Element(e.number))
    }

    pub fn from_atomic_number(number: u8) -> Option<Element> {
        TABLE
            .iter()
            .find(|e| e.number == number)
            .map(|e| Element(e.number))
    }

    fn data(self) -> &'static ElementData {
        // Construction only goes through the table, so the lookup cannot fail.
        TABLE.iter().find(|e| e.number == self.0).unwrap()
    }

    pub fn atomic_number(self) -> u8 {
        self.0
    }

    pub fn symbol(self) -> &'static str {
        self.data().symbol
    }

    pub fn mass(self) -> f64 {
        self.data().mass
    }

    /// Elements writable without brackets.
    pub fn is_organic_subset(self) -> bool {
        matches!(self.0, 5 | 6 | 7 | 8 | 9 | 15 | 16 | 17 | 35 | 53)
    }

    /// Elements that may be written in lowercase (aromatic) form.
    pub fn can_be_aromatic(self) -> bool {
        matches!(self.0, 5 | 6 | 7 | 8 | 15 | 16 | 33 | 34)
    }

    pub fn is_halogen(self) -> bool {
        matches!(self.0, 9 | 17 | 35 | 53)
    }

    /// Default valence tiers for organic-subset atoms, ascending.
    pub fn default_valences(self) -> &'static [u32] {
        match self.0 {
            5 => &[3],
            6 => &[4],
            7 => &[3, 5],
            8 => &[2],
            15 => &[3, 5],
            16 => &[2, 4, 6],
            9 | 17 | 35 | 53 => &[1],
            _ => &[],
        }
    }
}

impl fmt::Display for Element {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}
