//! Shared-key transport encryption for secret shares, and the keyed
//! pseudo-random function used to derive pairwise masks.

use aes_gcm::aead::{Aead, KeyInit};
use aes_gcm::{Aes128Gcm, Nonce as GcmNonce};
use num_bigint::BigUint;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::group_math::GroupParams;

pub const NONCE_LEN: usize = 12;
pub const TAG_LEN: usize = 16;

/// 128-bit AES-GCM key.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct SymKey(pub [u8; 16]);

impl std::fmt::Debug for SymKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("SymKey(..)")
    }
}

/// Truncated SHA-256 of the fixed-width encoding of a key-agreement output.
pub fn derive_sym_key(params: &GroupParams, shared: &BigUint) -> SymKey {
    let digest =
        Sha256::new().chain_update(b"fedxgb-aead-key").chain_update(params.encode_element(shared)).finalize();
    let mut key = [0u8; 16];
    key.copy_from_slice(&digest[..16]);
    SymKey(key)
}

/// `round || sender || counter`, 4 bytes each.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Nonce(pub [u8; NONCE_LEN]);

impl Nonce {
    pub fn new(round: u32, sender: u32, counter: u32) -> Self {
        let mut n = [0u8; NONCE_LEN];
        n[0..4].copy_from_slice(&round.to_be_bytes());
        n[4..8].copy_from_slice(&sender.to_be_bytes());
        n[8..12].copy_from_slice(&counter.to_be_bytes());
        Nonce(n)
    }
}

/// Output layout: `nonce(12) || body || tag(16)`.
pub fn aead_encrypt(key: &SymKey, plaintext: &[u8], nonce: Nonce) -> Vec<u8> {
    let cipher = Aes128Gcm::new(&key.0.into());
    let body = cipher
        .encrypt(GcmNonce::from_slice(&nonce.0), plaintext)
        .expect("AES-GCM encryption of an in-memory buffer cannot fail");
    let mut out = Vec::with_capacity(NONCE_LEN + body.len());
    out.extend_from_slice(&nonce.0);
    out.extend(body);
    out
}

pub fn aead_decrypt(key: &SymKey, ciphertext: &[u8]) -> Result<Vec<u8>> {
    if ciphertext.len() < NONCE_LEN + TAG_LEN {
        return Err(Error::AuthenticationFailed);
    }
    let (nonce, body) = ciphertext.split_at(NONCE_LEN);
    Aes128Gcm::new(&key.0.into())
        .decrypt(GcmNonce::from_slice(nonce), body)
        .map_err(|_| Error::AuthenticationFailed)
}

/// Length of [`aead_encrypt`]'s output for a plaintext of `len` bytes.
pub fn sealed_len(len: usize) -> usize {
    NONCE_LEN + len + TAG_LEN
}

/// Keyed PRF with outputs reduced modulo a chosen modulus.
///
/// The key is SHA-256 of the input bytes; output `index` is read from a
/// ChaCha20 keystream at a fixed offset, so single evaluations and
/// [`Prf::stream`] agree. Each output draws 16 bytes beyond the modulus width
/// before reduction, keeping the bias below `2^-128`.
#[derive(Clone)]
pub struct Prf {
    key: [u8; 32],
}

impl Prf {
    pub fn new(input: &[u8]) -> Self {
        let digest = Sha256::new().chain_update(b"fedxgb-prf").chain_update(input).finalize();
        Prf { key: digest.into() }
    }

    pub fn eval(&self, index: u64, modulus: &BigUint) -> BigUint {
        let width = output_width(modulus);
        let mut rng = ChaCha20Rng::from_seed(self.key);
        rng.set_word_pos(u128::from(index) * (width as u128 / 4));
        let mut buf = vec![0u8; width];
        rng.fill_bytes(&mut buf);
        BigUint::from_bytes_be(&buf) % modulus
    }

    /// Outputs `0..count`, identical to calling [`Prf::eval`] on each index.
    pub fn stream(&self, count: usize, modulus: &BigUint) -> Vec<BigUint> {
        let width = output_width(modulus);
        let mut rng = ChaCha20Rng::from_seed(self.key);
        let mut buf = vec![0u8; width];
        (0..count)
            .map(|_| {
                rng.fill_bytes(&mut buf);
                BigUint::from_bytes_be(&buf) % modulus
            })
            .collect()
    }
}

fn output_width(modulus: &BigUint) -> usize {
    ((modulus.bits() as usize).div_ceil(8) + 16).next_multiple_of(4)
}

pub fn prf(input: &[u8], index: u64, modulus: &BigUint) -> BigUint {
    Prf::new(input).eval(index, modulus)
}
