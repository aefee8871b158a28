//! `t`-out-of-`k` Shamir sharing over `GF(P)`.

use std::collections::BTreeSet;

use rand::RngCore;

use super::{CryptoError, Fp};

/// One evaluation `(x, f(x))` of the sharing polynomial.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ShamirShare<const P: u64> {
    pub x: Fp<P>,
    pub y: Fp<P>,
}

/// Splits `secret` into `k` shares, any `t` of which reconstruct it.
///
/// Shares are the evaluations at `x = 1..=k` of a uniformly random polynomial
/// of degree `t − 1` with constant term `secret`.
pub fn shamir_share<const P: u64, R: RngCore + ?Sized>(
    secret: Fp<P>,
    t: usize,
    k: usize,
    rng: &mut R,
) -> Result<Vec<ShamirShare<P>>, CryptoError> {
    let coeffs: Vec<Fp<P>> = (1..t).map(|_| Fp::random(rng)).collect();
    share_with_coefficients(secret, t, k, &coeffs)
}

/// Sharing with caller-chosen higher coefficients (`coeffs[i]` multiplies
/// `x^(i+1)`), so fixed polynomials can be checked by hand.
pub fn share_with_coefficients<const P: u64>(
    secret: Fp<P>,
    t: usize,
    k: usize,
    coeffs: &[Fp<P>],
) -> Result<Vec<ShamirShare<P>>, CryptoError> {
    if t == 0 || t > k || k as u64 >= P || coeffs.len() + 1 != t {
        return Err(CryptoError::InvalidThreshold { t, k });
    }
    Ok((1..=k as u64)
        .map(|x| {
            let x = Fp::new(x);
            let y = coeffs.iter().rev().fold(Fp::ZERO, |acc, c| (acc + *c) * x) + secret;
            ShamirShare { x, y }
        })
        .collect())
}

/// Lagrange interpolation at zero over the first `t` shares.
///
/// Every provided share must have a distinct, nonzero evaluation point.
pub fn shamir_reconstruct<const P: u64>(shares: &[ShamirShare<P>], t: usize) -> Result<Fp<P>, CryptoError> {
    if t == 0 {
        return Err(CryptoError::InvalidThreshold { t, k: shares.len() });
    }
    if shares.len() < t {
        return Err(CryptoError::InsufficientShares { needed: t, got: shares.len() });
    }
    let mut points = BTreeSet::new();
    for s in shares {
        if s.x == Fp::ZERO {
            return Err(CryptoError::MalformedShares("evaluation point zero".into()));
        }
        if !points.insert(s.x) {
            return Err(CryptoError::MalformedShares(format!("duplicate evaluation point {}", s.x)));
        }
    }
    let used = &shares[..t];
    let mut acc = Fp::ZERO;
    for (i, si) in used.iter().enumerate() {
        let mut num = Fp::ONE;
        let mut den = Fp::ONE;
        for (j, sj) in used.iter().enumerate() {
            if i != j {
                num *= sj.x;
                den *= sj.x - si.x;
            }
        }
        let inv = den.inverse().expect("distinct points give a nonzero denominator");
        acc += si.y * num * inv;
    }
    Ok(acc)
}
