//! Simulated pairwise seed agreement and mask expansion.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

use super::{CryptoError, FieldElement};
use crate::UserId;

/// Key of the keyed hash standing in for pairwise key exchange.
const AGREEMENT_KEY: &[u8] = b"secfu/simulated-key-agreement/v1";
const MASK_DOMAIN: &[u8] = b"secfu/mask-prg/v1";

/// Number of field limbs a seed is split into for secret sharing.
pub const SEED_LIMBS: usize = 3;
const LIMB_BITS: u32 = 43;

/// 128-bit pairwise seed `s_{i,j}`.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Seed(pub [u8; 16]);

impl std::fmt::Debug for Seed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Seed(")?;
        for b in self.0 {
            write!(f, "{b:02x}")?;
        }
        write!(f, ")")
    }
}

impl Seed {
    pub fn as_u128(&self) -> u128 {
        u128::from_le_bytes(self.0)
    }

    pub fn from_u128(v: u128) -> Self {
        Seed(v.to_le_bytes())
    }

    /// Splits the seed into three 43-bit limbs, each a field element.
    pub fn to_limbs(&self) -> [FieldElement; SEED_LIMBS] {
        let v = self.as_u128();
        let mask = (1u128 << LIMB_BITS) - 1;
        std::array::from_fn(|i| FieldElement::new(((v >> (i as u32 * LIMB_BITS)) & mask) as u64))
    }

    pub fn from_limbs(limbs: &[FieldElement; SEED_LIMBS]) -> Self {
        let v =
            limbs.iter().enumerate().fold(0u128, |acc, (i, l)| acc | ((l.value() as u128) << (i as u32 * LIMB_BITS)));
        Seed::from_u128(v)
    }
}

/// Seed for the pair `{i, j}` in session `nonce`. Symmetric in `i` and `j`.
pub fn agree_seed(i: UserId, j: UserId, nonce: u128) -> Result<Seed, CryptoError> {
    if i == j {
        return Err(CryptoError::SelfPairing(i));
    }
    let (lo, hi) = (i.min(j) as u64, i.max(j) as u64);
    let mut h = Sha256::new();
    h.update(AGREEMENT_KEY);
    h.update(lo.to_le_bytes());
    h.update(hi.to_le_bytes());
    h.update(nonce.to_le_bytes());
    let digest = h.finalize();
    let mut out = [0u8; 16];
    out.copy_from_slice(&digest[..16]);
    Ok(Seed(out))
}

/// Expands a seed into `dim` uniform field elements.
pub fn expand_mask(seed: &Seed, dim: usize) -> Vec<FieldElement> {
    let mut h = Sha256::new();
    h.update(MASK_DOMAIN);
    h.update(seed.0);
    let mut rng = ChaCha20Rng::from_seed(h.finalize().into());
    (0..dim).map(|_| FieldElement::random(&mut rng)).collect()
}
