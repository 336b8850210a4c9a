//! Shamir t-of-n secret sharing over `F_p`, used to escrow private mask keys.

use std::collections::HashSet;

use num_bigint::{BigUint, RandBigInt};
use num_traits::{One, Zero};
use rand::RngCore;

use crate::error::{Error, Result};
use crate::group_math::{mod_inverse, to_fixed_be};
use crate::UserId;

/// Share of `owner`'s secret held by `holder`, evaluated at `x = holder`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KeyShare {
    pub owner: UserId,
    pub holder: UserId,
    pub x: u64,
    pub y: BigUint,
}

impl KeyShare {
    /// `owner(4B) || holder(4B) || y` with `y` padded to `ceil(log2 p / 8)` bytes.
    pub fn to_bytes(&self, p: &BigUint) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + share_value_bytes(p));
        out.extend_from_slice(&self.owner.0.to_be_bytes());
        out.extend_from_slice(&self.holder.0.to_be_bytes());
        out.extend(to_fixed_be(&self.y, share_value_bytes(p)));
        out
    }

    pub fn from_bytes(bytes: &[u8], p: &BigUint) -> Result<Self> {
        if bytes.len() != encoded_len(p) {
            return Err(Error::Decode(format!(
                "share must be {} bytes, got {}",
                encoded_len(p),
                bytes.len()
            )));
        }
        let owner = UserId(u32::from_be_bytes(bytes[0..4].try_into().unwrap()));
        let holder = UserId(u32::from_be_bytes(bytes[4..8].try_into().unwrap()));
        let y = BigUint::from_bytes_be(&bytes[8..]);
        if &y >= p {
            return Err(Error::Decode("share value exceeds field".into()));
        }
        Ok(KeyShare { owner, holder, x: u64::from(holder.0), y })
    }
}

pub fn share_value_bytes(p: &BigUint) -> usize {
    (p.bits() as usize).div_ceil(8)
}

/// Encoded length of one [`KeyShare`].
pub fn encoded_len(p: &BigUint) -> usize {
    8 + share_value_bytes(p)
}

/// Splits `secret` into one share per holder using a random polynomial of
/// degree `t - 1`.
pub fn share(
    owner: UserId,
    secret: &BigUint,
    t: usize,
    holders: &[UserId],
    p: &BigUint,
    rng: &mut impl RngCore,
) -> Result<Vec<KeyShare>> {
    check_share_args(secret, t, holders, p)?;
    let mut coeffs = Vec::with_capacity(t);
    coeffs.push(secret.clone());
    coeffs.extend((1..t).map(|_| rng.gen_biguint_below(p)));
    share_with_polynomial(owner, &coeffs, holders, p)
}

/// Evaluates the polynomial with the given coefficients (constant term first)
/// at each holder's index.
pub fn share_with_polynomial(
    owner: UserId,
    coeffs: &[BigUint],
    holders: &[UserId],
    p: &BigUint,
) -> Result<Vec<KeyShare>> {
    let secret = coeffs.first().ok_or_else(|| Error::InvalidParameter("empty polynomial".into()))?;
    check_share_args(secret, coeffs.len(), holders, p)?;
    Ok(holders
        .iter()
        .map(|&holder| {
            let x = BigUint::from(holder.0);
            // Horner
            let y = coeffs.iter().rev().fold(BigUint::zero(), |acc, c| (acc * &x + c) % p);
            KeyShare { owner, holder, x: u64::from(holder.0), y }
        })
        .collect())
}

fn check_share_args(secret: &BigUint, t: usize, holders: &[UserId], p: &BigUint) -> Result<()> {
    let n = holders.len();
    if t == 0 || t > n {
        return Err(Error::InvalidParameter(format!("threshold {t} must be in [1, {n}]")));
    }
    if secret >= p {
        return Err(Error::InvalidParameter("secret must be below the field prime".into()));
    }
    let mut seen = HashSet::new();
    for h in holders {
        if h.0 == 0 || BigUint::from(h.0) >= *p {
            return Err(Error::InvalidParameter(format!("holder index {} outside F_p*", h.0)));
        }
        if !seen.insert(h.0) {
            return Err(Error::DuplicateSharePoint(u64::from(h.0)));
        }
    }
    if BigUint::from(n) >= *p {
        return Err(Error::InvalidParameter("share count must be below p".into()));
    }
    Ok(())
}

/// Lagrange interpolation at `x = 0` over all supplied shares.
pub fn reconstruct(shares: &[KeyShare], t: usize, p: &BigUint) -> Result<BigUint> {
    if shares.len() < t || shares.is_empty() {
        return Err(Error::InsufficientShares { needed: t.max(1), got: shares.len() });
    }
    let owner = shares[0].owner;
    let mut seen = HashSet::new();
    for s in shares {
        if s.owner != owner {
            return Err(Error::MixedShareOwners(owner, s.owner));
        }
        if !seen.insert(s.x) {
            return Err(Error::DuplicateSharePoint(s.x));
        }
    }
    let xs: Vec<BigUint> = shares.iter().map(|s| BigUint::from(s.x) % p).collect();
    let mut secret = BigUint::zero();
    for (i, share) in shares.iter().enumerate() {
        let mut num = BigUint::one();
        let mut den = BigUint::one();
        for (j, xj) in xs.iter().enumerate() {
            if i == j {
                continue;
            }
            num = num * xj % p;
            den = den * ((xj + p - &xs[i]) % p) % p;
        }
        let inv = mod_inverse(&den, p)
            .ok_or_else(|| Error::InvalidParameter("field modulus is not prime".into()))?;
        secret = (secret + &share.y * num % p * inv) % p;
    }
    Ok(secret)
}
