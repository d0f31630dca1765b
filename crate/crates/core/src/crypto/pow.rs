//! Sender-side proof of work.
//!
//! The dedup hash `H` never covers the nonce. Work is proven by the digest
//! `SHA-512(H || nonce)` having at least `difficulty_bits` leading zero bits.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha512};

use super::{CryptoError, MessageHash};

pub const NONCE_LEN: usize = 3;
/// Keeps expected work (2^bits) far below the 2^24 nonce space.
pub const MAX_DIFFICULTY_BITS: u8 = 20;
/// "2 leading zeros" read as two zero bytes.
pub const DEFAULT_DIFFICULTY_BITS: u8 = 16;

pub type Nonce = [u8; NONCE_LEN];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct PowParams {
    difficulty_bits: u8,
}

impl PowParams {
    pub fn new(difficulty_bits: u8) -> Result<Self, CryptoError> {
        if difficulty_bits > MAX_DIFFICULTY_BITS {
            return Err(CryptoError::DifficultyTooHigh(difficulty_bits));
        }
        Ok(PowParams { difficulty_bits })
    }

    pub fn difficulty_bits(&self) -> u8 {
        self.difficulty_bits
    }
}

impl Default for PowParams {
    fn default() -> Self {
        PowParams {
            difficulty_bits: DEFAULT_DIFFICULTY_BITS,
        }
    }
}

impl TryFrom<u8> for PowParams {
    type Error = CryptoError;

    fn try_from(bits: u8) -> Result<Self, Self::Error> {
        PowParams::new(bits)
    }
}

impl From<PowParams> for u8 {
    fn from(p: PowParams) -> u8 {
        p.difficulty_bits
    }
}

pub fn leading_zero_bits(bytes: &[u8]) -> u32 {
    let mut count = 0;
    for &b in bytes {
        if b == 0 {
            count += 8;
        } else {
            return count + b.leading_zeros();
        }
    }
    count
}

fn work_digest(hash: &MessageHash, nonce: &Nonce) -> [u8; 64] {
    Sha512::new().chain_update(hash).chain_update(nonce).finalize().into()
}

/// Leading zero bits of the work digest for `(hash, nonce)`.
pub fn work_bits(hash: &MessageHash, nonce: &Nonce) -> u32 {
    leading_zero_bits(&work_digest(hash, nonce))
}

pub fn pow_check(hash: &MessageHash, nonce: &Nonce, params: PowParams) -> bool {
    if params.difficulty_bits == 0 {
        return true;
    }
    leading_zero_bits(&work_digest(hash, nonce)) >= u32::from(params.difficulty_bits)
}

/// Smallest nonce, as a big-endian integer counted up from zero, that passes
/// [`pow_check`]. Attempts taken are `u32::from_be_bytes` of the result plus one.
pub fn mine_nonce(hash: &MessageHash, params: PowParams) -> Result<Nonce, CryptoError> {
    if params.difficulty_bits > MAX_DIFFICULTY_BITS {
        return Err(CryptoError::DifficultyTooHigh(params.difficulty_bits));
    }
    (0u32..1 << 24)
        .map(nonce_from_u32)
        .find(|nonce| pow_check(hash, nonce, params))
        .ok_or(CryptoError::NonceExhausted)
}

pub fn nonce_from_u32(n: u32) -> Nonce {
    let b = n.to_be_bytes();
    [b[1], b[2], b[3]]
}

pub fn nonce_to_u32(nonce: &Nonce) -> u32 {
    u32::from_be_bytes([0, nonce[0], nonce[1], nonce[2]])
}
