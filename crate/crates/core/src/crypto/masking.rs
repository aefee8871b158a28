use std::collections::BTreeMap;

use super::{expand_mask, CryptoError, FieldElement, Seed};
use crate::UserId;

/// Pairwise masking: `y = x + Σ_{j>self} PRG(s) − Σ_{j<self} PRG(s)`.
///
/// Summed over every user of a graph, the masks cancel exactly.
pub fn mask_input(
    x: &[FieldElement],
    self_id: UserId,
    neighbor_seeds: &BTreeMap<UserId, Seed>,
) -> Result<Vec<FieldElement>, CryptoError> {
    if neighbor_seeds.contains_key(&self_id) {
        return Err(CryptoError::SelfPairing(self_id));
    }
    let mut y = x.to_vec();
    for (&peer, seed) in neighbor_seeds {
        let mask = expand_mask(seed, x.len());
        if mask.len() != y.len() {
            return Err(CryptoError::DimensionMismatch { expected: y.len(), got: mask.len() });
        }
        if peer > self_id {
            y.iter_mut().zip(&mask).for_each(|(a, m)| *a += *m);
        } else {
            y.iter_mut().zip(&mask).for_each(|(a, m)| *a -= *m);
        }
    }
    Ok(y)
}
