//! Big-integer modular arithmetic and generation of the public group.
//!
//! The group lives in `Z*_{N^2}` with `N = q1 * q2` for safe primes
//! `q1 = 2 q1' + 1`, `q2 = 2 q2' + 1`. The generator has order
//! `(q1 - 1)(q2 - 1) / 2`, and the Shamir field prime `p` is the smallest
//! prime above twice that order so every private key fits in `F_p`.

use num_bigint::{BigInt, BigUint, RandBigInt};
use num_integer::Integer;
use num_traits::{One, Zero};
use rand::RngCore;

use crate::error::{Error, Result};

/// Miller-Rabin rounds used for every prime that ends up in [`GroupParams`].
pub const MR_ROUNDS: usize = 40;

/// Smallest accepted bit length of `N`.
pub const MIN_SEC_PARAM: u32 = 16;

/// Default number of random restarts before generation gives up.
pub const DEFAULT_ATTEMPT_BUDGET: usize = 4096;

const SMALL_PRIMES: [u32; 54] = [
    3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89, 97, 101, 103,
    107, 109, 113, 127, 131, 137, 139, 149, 151, 157, 163, 167, 173, 179, 181, 191, 193, 197, 199, 211, 223,
    227, 229, 233, 239, 241, 251, 257,
];

/// Public cyclic group plus the Shamir field prime.
///
/// `q1` and `q2` are the factorisation of `N`; only the key-generation center
/// role is meant to hold them. Everything else is public.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GroupParams {
    pub q1: BigUint,
    pub q2: BigUint,
    pub n: BigUint,
    pub n2: BigUint,
    pub g: BigUint,
    pub ord_g: BigUint,
    pub p: BigUint,
    pub sec_param: u32,
}

impl GroupParams {
    /// Builds parameters from two caller-supplied safe primes. Used for
    /// fixtures; [`generate_group`] is the normal entry point.
    pub fn from_safe_primes(q1: BigUint, q2: BigUint, rng: &mut impl RngCore) -> Result<Self> {
        let two = BigUint::from(2u32);
        for q in [&q1, &q2] {
            if q < &BigUint::from(5u32) || !is_probable_prime(q, MR_ROUNDS, rng) {
                return Err(Error::InvalidParameter(format!("{q} is not an odd prime")));
            }
            let sophie = (q - 1u32) / &two;
            if !is_probable_prime(&sophie, MR_ROUNDS, rng) {
                return Err(Error::InvalidParameter(format!("{q} is not a safe prime")));
            }
        }
        if q1 == q2 {
            return Err(Error::InvalidParameter("q1 and q2 must differ".into()));
        }
        if (&q1 - 1u32) / &two == q2 || (&q2 - 1u32) / &two == q1 {
            return Err(Error::InvalidParameter("q1' and q2' must differ from q1 and q2".into()));
        }
        let n = &q1 * &q2;
        let n2 = &n * &n;
        let ord_g = group_order(&q1, &q2);
        let g = find_generator(&n, &n2, &q1, &q2, &ord_g, rng)?;
        let p = next_prime(&(&ord_g * &two + 1u32), rng);
        Ok(GroupParams { sec_param: n.bits() as u32, q1, q2, n, n2, g, ord_g, p })
    }

    /// Bytes of one `Z*_{N^2}` element on the wire: `ceil(2l / 8)`.
    pub fn element_bytes(&self) -> usize {
        (2 * self.sec_param as usize).div_ceil(8)
    }

    /// Bytes of one Shamir share value: `ceil(log2 p / 8)`.
    pub fn share_bytes(&self) -> usize {
        (self.p.bits() as usize).div_ceil(8)
    }

    /// Fixed-width big-endian encoding of a group element.
    pub fn encode_element(&self, x: &BigUint) -> Vec<u8> {
        to_fixed_be(x, self.element_bytes())
    }

    /// Checks every structural invariant, with `rounds` Miller-Rabin rounds
    /// per prime.
    pub fn validate(&self, rounds: usize, rng: &mut impl RngCore) -> Result<()> {
        let two = BigUint::from(2u32);
        let q1s = (&self.q1 - 1u32) / &two;
        let q2s = (&self.q2 - 1u32) / &two;
        let primes = [&self.q1, &self.q2, &q1s, &q2s, &self.p];
        if !primes.iter().all(|q| is_probable_prime(q, rounds, rng)) {
            return Err(Error::InvalidParameter("composite group component".into()));
        }
        if self.n != &self.q1 * &self.q2 || self.n2 != &self.n * &self.n {
            return Err(Error::InvalidParameter("N or N^2 inconsistent".into()));
        }
        if self.ord_g != &q1s * &q2s * &two {
            return Err(Error::InvalidParameter("ord_g inconsistent".into()));
        }
        if !has_full_order(&self.g, &self.n2, &self.ord_g, &[&q1s, &q2s, &two]) {
            return Err(Error::InvalidParameter("g is not a generator of order ord_g".into()));
        }
        if self.p <= self.ord_g {
            return Err(Error::InvalidParameter("p must exceed ord_g".into()));
        }
        Ok(())
    }

    /// Canonical encoding: magic, `sec_param` (u32), then each field as a
    /// u32 length prefix followed by big-endian bytes.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(b"FXGP");
        out.extend_from_slice(&self.sec_param.to_be_bytes());
        for field in self.fields() {
            let bytes = field.to_bytes_be();
            out.extend_from_slice(&(bytes.len() as u32).to_be_bytes());
            out.extend_from_slice(&bytes);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Decode(format!("group params: {m}"));
        if bytes.len() < 8 || &bytes[..4] != b"FXGP" {
            return Err(bad("missing magic"));
        }
        let sec_param = u32::from_be_bytes(bytes[4..8].try_into().unwrap());
        let mut rest = &bytes[8..];
        let mut fields = Vec::with_capacity(7);
        for _ in 0..7 {
            if rest.len() < 4 {
                return Err(bad("truncated length"));
            }
            let len = u32::from_be_bytes(rest[..4].try_into().unwrap()) as usize;
            rest = &rest[4..];
            if rest.len() < len {
                return Err(bad("truncated field"));
            }
            fields.push(BigUint::from_bytes_be(&rest[..len]));
            rest = &rest[len..];
        }
        if !rest.is_empty() {
            return Err(bad("trailing bytes"));
        }
        let mut it = fields.into_iter();
        let mut next = || it.next().unwrap();
        Ok(GroupParams {
            q1: next(),
            q2: next(),
            n: next(),
            n2: next(),
            g: next(),
            ord_g: next(),
            p: next(),
            sec_param,
        })
    }

    fn fields(&self) -> [&BigUint; 7] {
        [&self.q1, &self.q2, &self.n, &self.n2, &self.g, &self.ord_g, &self.p]
    }
}

/// `(q1 - 1)(q2 - 1) / 2`.
pub fn group_order(q1: &BigUint, q2: &BigUint) -> BigUint {
    ((q1 - 1u32) * (q2 - 1u32)) >> 1
}

/// Samples a fresh group whose modulus `N` has exactly `sec_param` bits.
pub fn generate_group(sec_param: u32, rng: &mut impl RngCore) -> Result<GroupParams> {
    generate_group_with_budget(sec_param, DEFAULT_ATTEMPT_BUDGET, rng)
}

pub fn generate_group_with_budget(
    sec_param: u32,
    attempt_budget: usize,
    rng: &mut impl RngCore,
) -> Result<GroupParams> {
    if sec_param < MIN_SEC_PARAM {
        return Err(Error::InvalidParameter(format!(
            "sec_param must be at least {MIN_SEC_PARAM}, got {sec_param}"
        )));
    }
    let lo_bits = sec_param / 2;
    let hi_bits = sec_param - lo_bits;
    let mut attempts = 0usize;
    while attempts < attempt_budget {
        let (q1, used1) = random_safe_prime(hi_bits, attempt_budget - attempts, rng)?;
        attempts += used1;
        let (q2, used2) = random_safe_prime(lo_bits, attempt_budget.saturating_sub(attempts).max(1), rng)?;
        attempts += used2;
        let linked = (&q1 >> 1) == q2 || (&q2 >> 1) == q1;
        if q1 == q2 || linked || (&q1 * &q2).bits() != u64::from(sec_param) {
            attempts += 1;
            continue;
        }
        return GroupParams::from_safe_primes(q1, q2, rng);
    }
    Err(Error::GenerationFailed { attempts })
}

/// Incremental search for a safe prime `q = 2q' + 1` of exactly `bits` bits,
/// starting from a random odd `q'`. Returns the prime and the number of
/// random restarts consumed.
fn random_safe_prime(bits: u32, budget: usize, rng: &mut impl RngCore) -> Result<(BigUint, usize)> {
    let sophie_bits = u64::from(bits - 1);
    let mut restarts = 0;
    while restarts < budget {
        restarts += 1;
        let mut sophie = rng.gen_biguint(sophie_bits);
        sophie.set_bit(sophie_bits - 1, true);
        sophie.set_bit(0, true);
        while sophie.bits() == sophie_bits {
            let q = &sophie * 2u32 + 1u32;
            if passes_sieve(&sophie)
                && passes_sieve(&q)
                && is_probable_prime(&sophie, MR_ROUNDS, rng)
                && is_probable_prime(&q, MR_ROUNDS, rng)
            {
                return Ok((q, restarts));
            }
            sophie += 2u32;
        }
    }
    Err(Error::GenerationFailed { attempts: restarts })
}

fn passes_sieve(x: &BigUint) -> bool {
    SMALL_PRIMES.iter().all(|&sp| {
        let sp_big = BigUint::from(sp);
        x == &sp_big || !(x % sp).is_zero()
    })
}

fn find_generator(
    n: &BigUint,
    n2: &BigUint,
    q1: &BigUint,
    q2: &BigUint,
    ord_g: &BigUint,
    rng: &mut impl RngCore,
) -> Result<BigUint> {
    let two = BigUint::from(2u32);
    let q1s = (q1 - 1u32) / &two;
    let q2s = (q2 - 1u32) / &two;
    let two_n = n * &two;
    for _ in 0..DEFAULT_ATTEMPT_BUDGET {
        let a = rng.gen_biguint_range(&two, n);
        if !a.gcd(n).is_one() {
            continue;
        }
        // -(a^{2N}) kills the order-N component and has order dividing 2 q1' q2'.
        let g = n2 - a.modpow(&two_n, n2);
        if has_full_order(&g, n2, ord_g, &[&q1s, &q2s, &two]) {
            return Ok(g);
        }
    }
    Err(Error::GenerationFailed { attempts: DEFAULT_ATTEMPT_BUDGET })
}

fn has_full_order(g: &BigUint, n2: &BigUint, ord: &BigUint, prime_factors: &[&BigUint]) -> bool {
    if !g.modpow(ord, n2).is_one() {
        return false;
    }
    prime_factors.iter().all(|f| !g.modpow(&(ord / *f), n2).is_one())
}

pub fn mod_exp(base: &BigUint, exponent: &BigUint, modulus: &BigUint) -> BigUint {
    assert!(modulus > &BigUint::one(), "modulus must exceed 1");
    base.modpow(exponent, modulus)
}

/// Uniform element of `Z*_modulus`.
pub fn rand_unit(modulus: &BigUint, rng: &mut impl RngCore) -> BigUint {
    assert!(modulus >= &BigUint::from(2u32), "modulus must be at least 2");
    loop {
        let v = rng.gen_biguint_range(&BigUint::one(), modulus);
        if v.gcd(modulus).is_one() {
            return v;
        }
    }
}

/// Modular inverse by the extended Euclidean algorithm.
pub fn mod_inverse(a: &BigUint, modulus: &BigUint) -> Option<BigUint> {
    let m = BigInt::from(modulus.clone());
    let (mut old_r, mut r) = (BigInt::from(a % modulus), m.clone());
    let (mut old_s, mut s) = (BigInt::one(), BigInt::zero());
    while !r.is_zero() {
        let q = &old_r / &r;
        let next_r = &old_r - &q * &r;
        old_r = std::mem::replace(&mut r, next_r);
        let next_s = &old_s - &q * &s;
        old_s = std::mem::replace(&mut s, next_s);
    }
    if !old_r.is_one() {
        return None;
    }
    old_s.mod_floor(&m).to_biguint()
}

pub fn is_probable_prime(n: &BigUint, rounds: usize, rng: &mut impl RngCore) -> bool {
    let two = BigUint::from(2u32);
    if n < &two {
        return false;
    }
    for &sp in SMALL_PRIMES.iter().chain(std::iter::once(&2)) {
        if n == &BigUint::from(sp) {
            return true;
        }
        if (n % sp).is_zero() {
            return false;
        }
    }
    let n_minus_1 = n - 1u32;
    let s = n_minus_1.trailing_zeros().unwrap_or(0);
    let d = &n_minus_1 >> s;
    'witness: for _ in 0..rounds {
        let a = rng.gen_biguint_range(&two, &n_minus_1);
        let mut x = a.modpow(&d, n);
        if x.is_one() || x == n_minus_1 {
            continue;
        }
        for _ in 1..s {
            x = (&x * &x) % n;
            if x == n_minus_1 {
                continue 'witness;
            }
        }
        return false;
    }
    true
}

/// Smallest prime `>= from`.
pub fn next_prime(from: &BigUint, rng: &mut impl RngCore) -> BigUint {
    let mut c = from.clone();
    if c <= BigUint::from(2u32) {
        return BigUint::from(2u32);
    }
    if c.is_even() {
        c += 1u32;
    }
    while !is_probable_prime(&c, MR_ROUNDS, rng) {
        c += 2u32;
    }
    c
}

/// Big-endian encoding left-padded to `len` bytes.
pub fn to_fixed_be(x: &BigUint, len: usize) -> Vec<u8> {
    let raw = x.to_bytes_be();
    assert!(raw.len() <= len, "value does not fit in {len} bytes");
    let mut out = vec![0u8; len - raw.len()];
    out.extend_from_slice(&raw);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeded_rng;

    fn trial_division_prime(n: u64) -> bool {
        n >= 2 && (2..).take_while(|d| d * d <= n).all(|d| !n.is_multiple_of(d))
    }

    #[test]
    fn mod_exp_examples() {
        let m = BigUint::from(1000u32);
        assert_eq!(mod_exp(&BigUint::from(2u32), &BigUint::from(10u32), &m), BigUint::from(24u32));
        assert!(mod_exp(&BigUint::from(7u32), &BigUint::zero(), &m).is_one());
    }

    #[test]
    fn toy_group_is_safe_and_sixteen_bits() {
        let params = generate_group(16, &mut seeded_rng(1)).unwrap();
        assert_eq!(params.n.bits(), 16);
        for q in [&params.q1, &params.q2] {
            let q = u64::try_from(q).unwrap();
            assert!(trial_division_prime(q));
            assert!(trial_division_prime((q - 1) / 2), "{q} not safe");
        }
        assert_eq!(params.n, &params.q1 * &params.q2);
        assert!(mod_exp(&params.g, &params.ord_g, &params.n2).is_one());
        assert!(params.p > params.ord_g);
        params.validate(MR_ROUNDS, &mut seeded_rng(2)).unwrap();
    }

    #[test]
    fn order_formula() {
        assert_eq!(group_order(&11u32.into(), &23u32.into()), BigUint::from(110u32));
    }

    #[test]
    fn linked_safe_primes_rejected() {
        // 23 = 2 * 11 + 1, so q2' = q1 and no generator of full order exists
        let err = GroupParams::from_safe_primes(11u32.into(), 23u32.into(), &mut seeded_rng(0));
        assert!(matches!(err, Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn fixture_params() {
        let params = GroupParams::from_safe_primes(59u32.into(), 83u32.into(), &mut seeded_rng(0)).unwrap();
        assert_eq!(params.n, BigUint::from(4897u32));
        assert_eq!(params.ord_g, BigUint::from(2378u32));
        // smallest prime above 2 * 2378
        assert_eq!(params.p, BigUint::from(4759u32));
        params.validate(MR_ROUNDS, &mut seeded_rng(1)).unwrap();
    }

    #[test]
    fn rejects_unsafe_primes() {
        let err = GroupParams::from_safe_primes(13u32.into(), 23u32.into(), &mut seeded_rng(0));
        assert!(err.is_err());
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_group(64, &mut seeded_rng(9)).unwrap();
        let b = generate_group(64, &mut seeded_rng(9)).unwrap();
        assert_eq!(a.to_bytes(), b.to_bytes());
        assert_eq!(GroupParams::from_bytes(&a.to_bytes()).unwrap(), a);
    }

    #[test]
    fn too_small_sec_param_rejected() {
        assert!(matches!(generate_group(8, &mut seeded_rng(0)), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn tiny_budget_fails() {
        assert!(matches!(
            generate_group_with_budget(256, 1, &mut seeded_rng(3)),
            Err(Error::GenerationFailed { .. })
        ));
    }

    #[test]
    fn rand_unit_is_coprime_and_deterministic() {
        let n = BigUint::from(1081u32);
        let xs: Vec<_> = (0..50).map(|_| rand_unit(&n, &mut seeded_rng(4))).collect();
        let mut rng = seeded_rng(5);
        for _ in 0..200 {
            assert!(rand_unit(&n, &mut rng).gcd(&n).is_one());
        }
        assert!(xs.windows(2).all(|w| w[0] == w[1]));
        assert!(rand_unit(&BigUint::from(2u32), &mut rng).is_one());
    }

    #[test]
    fn inverse_matches_brute_force() {
        let m = 1081u32;
        for a in 1..m {
            let inv = mod_inverse(&BigUint::from(a), &BigUint::from(m));
            let brute = (1..m).find(|b| (a as u64 * *b as u64) % m as u64 == 1);
            assert_eq!(inv, brute.map(BigUint::from));
        }
    }

    #[test]
    fn miller_rabin_agrees_with_trial_division() {
        let mut rng = seeded_rng(6);
        for n in 0u64..5000 {
            assert_eq!(is_probable_prime(&BigUint::from(n), 10, &mut rng), trial_division_prime(n), "{n}");
        }
    }

    #[test]
    fn exponent_addition_homomorphism() {
        let params = generate_group(32, &mut seeded_rng(11)).unwrap();
        let mut rng = seeded_rng(12);
        for _ in 0..100 {
            let a = rng.gen_biguint(40);
            let b = rng.gen_biguint(40);
            let lhs = (mod_exp(&params.g, &a, &params.n2) * mod_exp(&params.g, &b, &params.n2)) % &params.n2;
            assert_eq!(lhs, mod_exp(&params.g, &(a + b), &params.n2));
        }
    }
}
