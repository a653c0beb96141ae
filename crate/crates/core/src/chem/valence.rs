use super::{Atom, ChemError};

/// Implicit hydrogen count of a non-bracket organic-subset atom.
///
/// `bond_order_sum` counts single and aromatic bonds as 1, double as 2 and
/// triple as 3. The count is the smallest default valence that is at least the
/// bond sum, minus the bond sum. Aromatic (lowercase) atoms use their lowest
/// valence tier and reserve one unit for the ring pi bond, clamped at zero, so
/// benzene carbons get one hydrogen while fused carbons, pyridine nitrogen and
/// furan oxygen get none.
pub fn implicit_hydrogens(atom: &Atom, bond_order_sum: u32) -> Result<u32, ChemError> {
    if atom.bracket || !atom.element.is_organic_subset() {
        return Err(ChemError::NotOrganicSubset);
    }
    let tiers = atom.element.default_valences();
    let max = *tiers.last().expect("organic subset atoms have valences");
    if bond_order_sum > max {
        return Err(ChemError::Hypervalent {
            symbol: atom.element.symbol(),
            valence: bond_order_sum,
            offset: 0,
        });
    }
    if atom.aromatic {
        return Ok(tiers[0].saturating_sub(bond_order_sum + 1));
    }
    let target = tiers
        .iter()
        .copied()
        .find(|&v| v >= bond_order_sum)
        .unwrap_or(max);
    Ok(target - bond_order_sum)
}
