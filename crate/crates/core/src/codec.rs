//! Fixed-point encoding of reals into `Z_N`.
//!
//! Negative values wrap to the top half of `Z_N`, so sums of encodings decode
//! to the sum of the inputs as long as the true sum stays inside
//! `(-N/2, N/2)` after scaling.

use num_bigint::{BigInt, BigUint, Sign};
use num_traits::{Signed, ToPrimitive, Zero};

use crate::error::{Error, Result};

pub const DEFAULT_FRAC_BITS: u32 = 20;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FixedPointConfig {
    pub frac_bits: u32,
    pub modulus: BigUint,
    half: BigUint,
}

impl FixedPointConfig {
    pub fn new(frac_bits: u32, modulus: BigUint) -> Self {
        let half = &modulus >> 1;
        FixedPointConfig { frac_bits, modulus, half }
    }

    /// Verifies that an aggregate of magnitude up to `max_abs` has room:
    /// `max_abs * 2^frac_bits < N / 2`.
    pub fn check_headroom(&self, max_abs: f64) -> Result<()> {
        let scaled = BigUint::from((max_abs.abs().ceil() as u128).max(1)) << self.frac_bits;
        if scaled >= self.half {
            return Err(Error::InvalidParameter(format!(
                "fixed-point range too small: |x| <= {max_abs} at {} fractional bits needs N > 2^{}",
                self.frac_bits,
                scaled.bits() + 1
            )));
        }
        Ok(())
    }

    /// Largest magnitude that [`encode`] accepts.
    pub fn max_abs(&self) -> f64 {
        self.half.to_f64().unwrap_or(f64::INFINITY) / 2f64.powi(self.frac_bits as i32)
    }

    /// Half-step quantisation error bound `2^-(frac_bits + 1)`.
    pub fn resolution(&self) -> f64 {
        2f64.powi(-(self.frac_bits as i32) - 1)
    }
}

/// `round(x * 2^frac_bits) mod N`.
pub fn encode(x: f64, cfg: &FixedPointConfig) -> Result<BigUint> {
    if !x.is_finite() {
        return Err(Error::CodecRange { value: x });
    }
    let scaled = (x * 2f64.powi(cfg.frac_bits as i32)).round();
    let magnitude = BigInt::from(scaled.abs() as u128).to_biguint().expect("non-negative");
    if scaled.abs() >= 2f64.powi(126) || magnitude >= cfg.half {
        return Err(Error::CodecRange { value: x });
    }
    if scaled < 0.0 && !magnitude.is_zero() {
        Ok(&cfg.modulus - magnitude)
    } else {
        Ok(magnitude)
    }
}

/// Signed integer represented by `v`: values above `N/2` are negative.
pub fn decode_int(v: &BigUint, cfg: &FixedPointConfig) -> BigInt {
    let v = v % &cfg.modulus;
    if v > cfg.half {
        -BigInt::from_biguint(Sign::Plus, &cfg.modulus - v)
    } else {
        BigInt::from(v)
    }
}

pub fn decode(v: &BigUint, cfg: &FixedPointConfig) -> f64 {
    let signed = decode_int(v, cfg);
    let magnitude = signed.abs().to_f64().unwrap_or(f64::INFINITY);
    let value = magnitude / 2f64.powi(cfg.frac_bits as i32);
    if signed.is_negative() {
        -value
    } else {
        value
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeded_rng;
    use rand::Rng;

    fn cfg(bits: u32) -> FixedPointConfig {
        // 2^61 - 1 is prime and comfortably wide; the codec only needs an odd modulus
        FixedPointConfig::new(bits, BigUint::from((1u64 << 61) - 1))
    }

    #[test]
    fn definitional_values() {
        let c = cfg(16);
        assert!(encode(0.0, &c).unwrap().is_zero());
        assert_eq!(encode(-1.5, &c).unwrap(), &c.modulus - BigUint::from(98_304u32));
        assert_eq!(decode(&encode(-1.5, &c).unwrap(), &c), -1.5);
    }

    #[test]
    fn roundtrip_within_half_step() {
        let c = cfg(16);
        let mut rng = seeded_rng(1);
        for _ in 0..10_000 {
            let x: f64 = rng.gen_range(-100.0..100.0);
            let back = decode(&encode(x, &c).unwrap(), &c);
            assert!((back - x).abs() <= 2f64.powi(-17), "{x} -> {back}");
        }
    }

    #[test]
    fn sums_decode_to_sum() {
        let c = cfg(20);
        let mut rng = seeded_rng(2);
        for k in [1usize, 5, 50] {
            let xs: Vec<f64> = (0..k).map(|_| rng.gen_range(-10.0..10.0)).collect();
            let total =
                xs.iter().fold(BigUint::zero(), |acc, &x| (acc + encode(x, &c).unwrap()) % &c.modulus);
            let exact: f64 = xs.iter().sum();
            assert!((decode(&total, &c) - exact).abs() <= k as f64 * c.resolution() + 1e-12);
        }
    }

    #[test]
    fn overflow_rejected() {
        let c = FixedPointConfig::new(8, BigUint::from(65_521u32));
        assert!(encode(127.0, &c).is_ok());
        assert!(matches!(encode(128.0, &c), Err(Error::CodecRange { .. })));
        assert!(matches!(encode(f64::NAN, &c), Err(Error::CodecRange { .. })));
        assert!(c.check_headroom(100.0).is_ok());
        assert!(c.check_headroom(200.0).is_err());
    }
}
