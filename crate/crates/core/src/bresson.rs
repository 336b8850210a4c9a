//! Bresson's additively homomorphic cryptosystem over `Z*_{N^2}`.
//!
//! `Enc(m; r) = (g^r, (1 + mN) pub^r)` and decryption divides out `c1^pri`,
//! leaving `1 + mN`. Multiplying ciphertexts componentwise adds plaintexts
//! modulo `N`. The same key pairs provide Diffie-Hellman key agreement.

use num_bigint::{BigUint, RandBigInt};
use num_traits::{One, Zero};
use rand::RngCore;

use crate::error::{Error, Result};
use crate::group_math::{mod_exp, mod_inverse, rand_unit, GroupParams};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KeyPair {
    pub private: BigUint,
    pub public: BigUint,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Ciphertext {
    pub c1: BigUint,
    pub c2: BigUint,
}

impl Ciphertext {
    /// Two big-endian integers, each padded to the group element width.
    pub fn to_bytes(&self, params: &GroupParams) -> Vec<u8> {
        let mut out = params.encode_element(&self.c1);
        out.extend(params.encode_element(&self.c2));
        out
    }

    pub fn from_bytes(params: &GroupParams, bytes: &[u8]) -> Result<Self> {
        let w = params.element_bytes();
        if bytes.len() != 2 * w {
            return Err(Error::Decode(format!("ciphertext must be {} bytes, got {}", 2 * w, bytes.len())));
        }
        Ok(Ciphertext { c1: BigUint::from_bytes_be(&bytes[..w]), c2: BigUint::from_bytes_be(&bytes[w..]) })
    }
}

/// Private key uniform in `[1, ord_g)`, public key `g^pri mod N^2`.
pub fn key_gen(params: &GroupParams, rng: &mut impl RngCore) -> KeyPair {
    let private = rng.gen_biguint_range(&BigUint::one(), &params.ord_g);
    key_pair_from_private(params, private)
}

pub fn key_pair_from_private(params: &GroupParams, private: BigUint) -> KeyPair {
    let public = mod_exp(&params.g, &private, &params.n2);
    KeyPair { private, public }
}

/// Encrypts with a fresh `r` drawn from `Z*_N`.
pub fn encrypt(
    params: &GroupParams,
    public: &BigUint,
    m: &BigUint,
    rng: &mut impl RngCore,
) -> Result<Ciphertext> {
    let r = rand_unit(&params.n, rng);
    encrypt_with(params, public, m, &r)
}

pub fn encrypt_with(params: &GroupParams, public: &BigUint, m: &BigUint, r: &BigUint) -> Result<Ciphertext> {
    if m >= &params.n {
        return Err(Error::PlaintextOutOfRange);
    }
    let c1 = mod_exp(&params.g, r, &params.n2);
    let c2 = (plaintext_slot(params, m) * mod_exp(public, r, &params.n2)) % &params.n2;
    Ok(Ciphertext { c1, c2 })
}

pub fn decrypt(params: &GroupParams, private: &BigUint, ct: &Ciphertext) -> Result<BigUint> {
    let blind = mod_exp(&ct.c1, private, &params.n2);
    let unblind = mod_inverse(&blind, &params.n2).ok_or(Error::MalformedCiphertext)?;
    let slot = (&ct.c2 * unblind) % &params.n2;
    open_plaintext_slot(params, &slot).ok_or(Error::MalformedCiphertext)
}

pub fn add_ciphertexts(params: &GroupParams, a: &Ciphertext, b: &Ciphertext) -> Ciphertext {
    Ciphertext { c1: (&a.c1 * &b.c1) % &params.n2, c2: (&a.c2 * &b.c2) % &params.n2 }
}

/// `their_pub^my_pri mod N^2`.
pub fn key_agree(params: &GroupParams, my_private: &BigUint, their_public: &BigUint) -> BigUint {
    mod_exp(their_public, my_private, &params.n2)
}

/// `1 + mN mod N^2`.
pub fn plaintext_slot(params: &GroupParams, m: &BigUint) -> BigUint {
    (BigUint::one() + m * &params.n) % &params.n2
}

/// Inverse of [`plaintext_slot`]: `(v - 1) / N` when `v = 1 + mN`.
pub fn open_plaintext_slot(params: &GroupParams, v: &BigUint) -> Option<BigUint> {
    if v.is_zero() {
        return None;
    }
    let shifted = v - 1u32;
    if !(&shifted % &params.n).is_zero() {
        return None;
    }
    Some(shifted / &params.n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::group_math::generate_group;
    use crate::seeded_rng;

    /// q1 = 59, q2 = 83, g = N^2 - 2^{2N} mod N^2 (full order 2378).
    fn fixture() -> GroupParams {
        GroupParams {
            q1: 59u32.into(),
            q2: 83u32.into(),
            n: 4897u32.into(),
            n2: 23980609u32.into(),
            g: 17523056u32.into(),
            ord_g: 2378u32.into(),
            p: 4759u32.into(),
            sec_param: 13,
        }
    }

    #[test]
    fn fixture_matches_hand_evaluation() {
        let params = fixture();
        let keys = key_pair_from_private(&params, 17u32.into());
        assert_eq!(keys.public, BigUint::from(6686864u32));
        let ct = encrypt_with(&params, &keys.public, &7u32.into(), &5u32.into()).unwrap();
        assert_eq!(ct.c1, BigUint::from(22196973u32));
        assert_eq!(ct.c2, BigUint::from(19592438u32));
        assert_eq!(decrypt(&params, &keys.private, &ct).unwrap(), BigUint::from(7u32));

        let top = encrypt_with(&params, &keys.public, &4896u32.into(), &5u32.into()).unwrap();
        assert_eq!(top.c2, BigUint::from(13593613u32));
        assert_eq!(decrypt(&params, &keys.private, &top).unwrap(), BigUint::from(4896u32));
    }

    #[test]
    fn zero_plaintext() {
        let params = fixture();
        let keys = key_pair_from_private(&params, 101u32.into());
        let r = BigUint::from(33u32);
        let ct = encrypt_with(&params, &keys.public, &BigUint::zero(), &r).unwrap();
        assert_eq!(ct.c2, mod_exp(&keys.public, &r, &params.n2));
        assert!(decrypt(&params, &keys.private, &ct).unwrap().is_zero());
    }

    #[test]
    fn out_of_range_plaintext() {
        let params = fixture();
        let keys = key_gen(&params, &mut seeded_rng(0));
        let err = encrypt(&params, &keys.public, &params.n, &mut seeded_rng(1));
        assert!(matches!(err, Err(Error::PlaintextOutOfRange)));
    }

    #[test]
    fn roundtrip_and_shift() {
        let params = generate_group(16, &mut seeded_rng(1)).unwrap();
        let mut rng = seeded_rng(2);
        let keys = key_gen(&params, &mut rng);
        for _ in 0..1000 {
            let m = rng.gen_biguint_below(&params.n);
            let ct = encrypt(&params, &keys.public, &m, &mut rng).unwrap();
            assert_eq!(decrypt(&params, &keys.private, &ct).unwrap(), m);
            let shifted =
                Ciphertext { c1: ct.c1.clone(), c2: (&ct.c2 * (BigUint::one() + &params.n)) % &params.n2 };
            let expect = (&m + 1u32) % &params.n;
            assert_eq!(decrypt(&params, &keys.private, &shifted).unwrap(), expect);
        }
    }

    #[test]
    fn homomorphic_addition() {
        let params = generate_group(16, &mut seeded_rng(3)).unwrap();
        let mut rng = seeded_rng(4);
        let keys = key_gen(&params, &mut rng);
        let enc = |m: u32, rng: &mut _| encrypt(&params, &keys.public, &m.into(), rng).unwrap();
        let sum = add_ciphertexts(&params, &enc(3, &mut rng), &enc(4, &mut rng));
        assert_eq!(decrypt(&params, &keys.private, &sum).unwrap(), BigUint::from(7u32));
        let id = add_ciphertexts(&params, &enc(11, &mut rng), &enc(0, &mut rng));
        assert_eq!(decrypt(&params, &keys.private, &id).unwrap(), BigUint::from(11u32));

        let mut acc = enc(1, &mut rng);
        for _ in 1..500 {
            acc = add_ciphertexts(&params, &acc, &enc(1, &mut rng));
        }
        assert_eq!(decrypt(&params, &keys.private, &acc).unwrap(), BigUint::from(500u32));
    }

    #[test]
    fn wrong_key_on_masked_value_is_malformed() {
        let params = generate_group(16, &mut seeded_rng(5)).unwrap();
        let mut rng = seeded_rng(6);
        let keys = key_gen(&params, &mut rng);
        let mut malformed = 0;
        for _ in 0..200 {
            let m = rng.gen_biguint_below(&params.n);
            let ct = encrypt(&params, &keys.public, &m, &mut rng).unwrap();
            let wrong = key_gen(&params, &mut rng);
            if wrong.private == keys.private {
                continue;
            }
            if matches!(decrypt(&params, &wrong.private, &ct), Err(Error::MalformedCiphertext)) {
                malformed += 1;
            }
        }
        assert!(malformed >= 195, "{malformed}");
    }

    #[test]
    fn encryption_is_randomised() {
        let params = generate_group(32, &mut seeded_rng(7)).unwrap();
        let mut rng = seeded_rng(8);
        let keys = key_gen(&params, &mut rng);
        let m = BigUint::from(42u32);
        let a = encrypt(&params, &keys.public, &m, &mut rng).unwrap();
        let b = encrypt(&params, &keys.public, &m, &mut rng).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn key_agreement_symmetry() {
        let params = generate_group(16, &mut seeded_rng(9)).unwrap();
        let mut rng = seeded_rng(10);
        for _ in 0..100 {
            let a = key_gen(&params, &mut rng);
            let b = key_gen(&params, &mut rng);
            assert_eq!(key_agree(&params, &a.private, &b.public), key_agree(&params, &b.private, &a.public));
            assert!(a.private < params.ord_g && !a.private.is_zero());
        }
        let a = key_gen(&params, &mut rng);
        assert_eq!(key_agree(&params, &a.private, &params.g), a.public);
    }

    #[test]
    fn ciphertext_wire_width() {
        let params = generate_group(16, &mut seeded_rng(11)).unwrap();
        let keys = key_gen(&params, &mut seeded_rng(12));
        let ct = encrypt(&params, &keys.public, &5u32.into(), &mut seeded_rng(13)).unwrap();
        let bytes = ct.to_bytes(&params);
        assert_eq!(bytes.len(), 8);
        assert_eq!(Ciphertext::from_bytes(&params, &bytes).unwrap(), ct);
    }
}
