//! Pluggable public-key primitives used by the relay pipeline.
//!
//! Two suites share one size contract: 256-byte ciphertext blobs, 256-byte
//! signatures and 64-byte message hashes.
//!
//! * [`CipherSuiteId::ReferenceRsa2048Sha512`]: RSA-2048 with PKCS#1 v1.5
//!   encryption padding (245-byte plaintext ceiling) and PKCS#1 v1.5
//!   signatures over SHA-512.
//! * [`CipherSuiteId::MockFixedSize`]: a keyed, deterministic and **insecure**
//!   construction with the same field sizes. Signatures can be forged by
//!   anyone holding the public key. It exists so that simulations with
//!   thousands of deliveries do not pay for RSA.

mod mock;
pub mod pow;
mod reference;

use rand::{CryptoRng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha512};
use thiserror::Error;

pub use pow::{leading_zero_bits, mine_nonce, pow_check, work_bits, Nonce, PowParams, MAX_DIFFICULTY_BITS};

/// Size of every encrypted blob.
pub const BLOB_LEN: usize = 256;
/// Size of every signature.
pub const SIGNATURE_LEN: usize = 256;
/// Size of the dedup hash (SHA-512).
pub const HASH_LEN: usize = 64;
/// Smallest plaintext accepted by `encrypt`: the fixed payload header.
pub const MIN_PLAINTEXT_LEN: usize = 29;
/// Largest plaintext that fits a 2048-bit modulus with 11 bytes of padding.
pub const MAX_PLAINTEXT_LEN: usize = 245;

pub type Blob = [u8; BLOB_LEN];
pub type Signature = [u8; SIGNATURE_LEN];
pub type MessageHash = [u8; HASH_LEN];

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CipherSuiteId {
    #[default]
    ReferenceRsa2048Sha512,
    MockFixedSize,
}

impl std::fmt::Display for CipherSuiteId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CipherSuiteId::ReferenceRsa2048Sha512 => f.write_str("reference_rsa2048_sha512"),
            CipherSuiteId::MockFixedSize => f.write_str("mock_fixed_size"),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CryptoError {
    #[error("key generation failed: {0}")]
    KeyGen(String),
    #[error("the mock suite requires an explicit seed")]
    MissingSeed,
    #[error("plaintext of {0} bytes exceeds the {MAX_PLAINTEXT_LEN}-byte limit")]
    PlaintextTooLong(usize),
    #[error("plaintext of {0} bytes is below the {MIN_PLAINTEXT_LEN}-byte minimum")]
    PlaintextTooShort(usize),
    #[error("signing failed: {0}")]
    Sign(String),
    #[error("cannot sign empty data")]
    EmptySignData,
    #[error("invalid {suite} key material: {reason}")]
    InvalidKey { suite: CipherSuiteId, reason: String },
    #[error("all 2^24 nonces exhausted without meeting the difficulty")]
    NonceExhausted,
    #[error("difficulty of {0} bits exceeds the maximum of {MAX_DIFFICULTY_BITS}")]
    DifficultyTooHigh(u8),
}

/// Why a blob could not be opened.
#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum DecryptError {
    #[error("encrypted blob must be {BLOB_LEN} bytes, got {0}")]
    WrongLength(usize),
    /// The blob was not addressed to this key. Every relay attempts
    /// decryption, so this is the common case rather than a fault.
    #[error("decryption failed")]
    Failure,
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum PublicInner {
    Reference(Box<rsa::RsaPublicKey>),
    Mock(mock::MockPublicKey),
}

#[derive(Clone, PartialEq, Eq)]
enum PrivateInner {
    Reference(Box<rsa::RsaPrivateKey>),
    Mock(mock::MockPrivateKey),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PublicKey(PublicInner);

#[derive(Clone, PartialEq, Eq)]
pub struct PrivateKey(PrivateInner);

impl std::fmt::Debug for PrivateKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "PrivateKey({}, ..)", self.suite())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KeyPair {
    pub public: PublicKey,
    pub private: PrivateKey,
}

impl KeyPair {
    /// Generates a key pair. With a seed the result is reproducible; the
    /// mock suite refuses to run without one.
    pub fn generate(suite: CipherSuiteId, seed: Option<[u8; 32]>) -> Result<Self, CryptoError> {
        match (suite, seed) {
            (CipherSuiteId::MockFixedSize, None) => Err(CryptoError::MissingSeed),
            (CipherSuiteId::MockFixedSize, Some(seed)) => Ok(mock::generate(seed)),
            (CipherSuiteId::ReferenceRsa2048Sha512, Some(seed)) => {
                reference::generate(&mut ChaCha20Rng::from_seed(seed))
            }
            (CipherSuiteId::ReferenceRsa2048Sha512, None) => reference::generate(&mut rand::rngs::OsRng),
        }
    }

    /// Generates a key pair from a caller-supplied generator.
    pub fn generate_with_rng<R: RngCore + CryptoRng>(suite: CipherSuiteId, rng: &mut R) -> Result<Self, CryptoError> {
        let mut seed = [0u8; 32];
        rng.fill_bytes(&mut seed);
        match suite {
            CipherSuiteId::MockFixedSize => Ok(mock::generate(seed)),
            CipherSuiteId::ReferenceRsa2048Sha512 => reference::generate(rng),
        }
    }

    pub fn suite(&self) -> CipherSuiteId {
        self.public.suite()
    }

    /// Rebuilds a pair from serialized halves, checking that they belong together.
    pub fn from_bytes(suite: CipherSuiteId, public: &[u8], private: &[u8]) -> Result<Self, CryptoError> {
        let public = PublicKey::from_bytes(suite, public)?;
        let private = PrivateKey::from_bytes(suite, private)?;
        if private.public_key() != public {
            return Err(CryptoError::InvalidKey {
                suite,
                reason: "public and private halves do not match".into(),
            });
        }
        Ok(KeyPair { public, private })
    }
}

impl PublicKey {
    pub fn suite(&self) -> CipherSuiteId {
        match &self.0 {
            PublicInner::Reference(_) => CipherSuiteId::ReferenceRsa2048Sha512,
            PublicInner::Mock(_) => CipherSuiteId::MockFixedSize,
        }
    }

    /// PKCS#1 DER for the reference suite, raw 32 bytes for the mock suite.
    pub fn to_bytes(&self) -> Vec<u8> {
        match &self.0 {
            PublicInner::Reference(key) => reference::public_to_der(key),
            PublicInner::Mock(key) => key.as_bytes().to_vec(),
        }
    }

    pub fn from_bytes(suite: CipherSuiteId, bytes: &[u8]) -> Result<Self, CryptoError> {
        let inner = match suite {
            CipherSuiteId::ReferenceRsa2048Sha512 => {
                PublicInner::Reference(Box::new(reference::public_from_der(bytes)?))
            }
            CipherSuiteId::MockFixedSize => PublicInner::Mock(mock::MockPublicKey::from_bytes(bytes)?),
        };
        Ok(PublicKey(inner))
    }

    /// Modulus length in bytes for RSA keys, key length for mock keys.
    pub fn modulus_len(&self) -> usize {
        match &self.0 {
            PublicInner::Reference(key) => rsa::traits::PublicKeyParts::size(key.as_ref()),
            PublicInner::Mock(key) => key.as_bytes().len(),
        }
    }

    /// Encrypts a plaintext of 29..=245 bytes into a 256-byte blob.
    ///
    /// The reference suite draws padding randomness from `rng`; the mock
    /// suite is deterministic and ignores it.
    pub fn encrypt<R: RngCore + CryptoRng>(&self, rng: &mut R, plaintext: &[u8]) -> Result<Blob, CryptoError> {
        if plaintext.len() > MAX_PLAINTEXT_LEN {
            return Err(CryptoError::PlaintextTooLong(plaintext.len()));
        }
        if plaintext.len() < MIN_PLAINTEXT_LEN {
            return Err(CryptoError::PlaintextTooShort(plaintext.len()));
        }
        match &self.0 {
            PublicInner::Reference(key) => reference::encrypt(key, rng, plaintext),
            PublicInner::Mock(key) => Ok(mock::encrypt(key, plaintext)),
        }
    }

    /// Malformed or mismatched signatures yield `false`, never an error.
    pub fn verify(&self, data: &[u8], signature: &[u8]) -> bool {
        if signature.len() != SIGNATURE_LEN {
            return false;
        }
        match &self.0 {
            PublicInner::Reference(key) => reference::verify(key, data, signature),
            PublicInner::Mock(key) => mock::verify(key, data, signature),
        }
    }
}

impl PrivateKey {
    pub fn suite(&self) -> CipherSuiteId {
        match &self.0 {
            PrivateInner::Reference(_) => CipherSuiteId::ReferenceRsa2048Sha512,
            PrivateInner::Mock(_) => CipherSuiteId::MockFixedSize,
        }
    }

    pub fn public_key(&self) -> PublicKey {
        match &self.0 {
            PrivateInner::Reference(key) => PublicKey(PublicInner::Reference(Box::new(key.to_public_key()))),
            PrivateInner::Mock(key) => PublicKey(PublicInner::Mock(key.public_key())),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        match &self.0 {
            PrivateInner::Reference(key) => reference::private_to_der(key),
            PrivateInner::Mock(key) => key.as_bytes().to_vec(),
        }
    }

    pub fn from_bytes(suite: CipherSuiteId, bytes: &[u8]) -> Result<Self, CryptoError> {
        let inner = match suite {
            CipherSuiteId::ReferenceRsa2048Sha512 => {
                PrivateInner::Reference(Box::new(reference::private_from_der(bytes)?))
            }
            CipherSuiteId::MockFixedSize => PrivateInner::Mock(mock::MockPrivateKey::from_bytes(bytes)?),
        };
        Ok(PrivateKey(inner))
    }

    /// Recovers the exact plaintext, or [`DecryptError::Failure`] when the
    /// blob was produced for another key.
    pub fn decrypt(&self, blob: &[u8]) -> Result<Vec<u8>, DecryptError> {
        if blob.len() != BLOB_LEN {
            return Err(DecryptError::WrongLength(blob.len()));
        }
        match &self.0 {
            PrivateInner::Reference(key) => reference::decrypt(key, blob),
            PrivateInner::Mock(key) => mock::decrypt(key, blob),
        }
    }

    /// Deterministic 256-byte signature over `data`.
    pub fn sign(&self, data: &[u8]) -> Result<Signature, CryptoError> {
        if data.is_empty() {
            return Err(CryptoError::EmptySignData);
        }
        match &self.0 {
            PrivateInner::Reference(key) => reference::sign(key, data),
            PrivateInner::Mock(key) => Ok(mock::sign(key, data)),
        }
    }
}

/// Dedup hash: SHA-512 over `blob || signature`. The nonce is not part of it.
pub fn hash_message(blob: &Blob, signature: &Signature) -> MessageHash {
    let mut hasher = Sha512::new();
    hasher.update(blob);
    hasher.update(signature);
    hasher.finalize().into()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn mock_pair(tag: u8) -> KeyPair {
        KeyPair::generate(CipherSuiteId::MockFixedSize, Some([tag; 32])).unwrap()
    }

    fn reference_pair(tag: u8) -> KeyPair {
        KeyPair::generate(CipherSuiteId::ReferenceRsa2048Sha512, Some([tag; 32])).unwrap()
    }

    #[test]
    fn mock_keygen_is_deterministic_and_needs_seed() {
        assert_eq!(mock_pair(0), mock_pair(0));
        assert_ne!(mock_pair(0).public, mock_pair(1).public);
        assert_eq!(
            KeyPair::generate(CipherSuiteId::MockFixedSize, None),
            Err(CryptoError::MissingSeed)
        );
    }

    #[test]
    fn reference_modulus_is_256_bytes() {
        let pair = KeyPair::generate(CipherSuiteId::ReferenceRsa2048Sha512, None).unwrap();
        assert_eq!(pair.public.modulus_len(), 256);
        assert_eq!(pair.suite(), CipherSuiteId::ReferenceRsa2048Sha512);
    }

    #[test]
    fn seeded_reference_keygen_is_reproducible() {
        assert_eq!(reference_pair(3), reference_pair(3));
    }

    #[test]
    fn plaintext_bounds_are_enforced() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        for pair in [mock_pair(1), reference_pair(1)] {
            assert_eq!(pair.public.encrypt(&mut rng, &[7u8; 245]).unwrap().len(), 256);
            assert_eq!(pair.public.encrypt(&mut rng, &[7u8; 29]).unwrap().len(), 256);
            assert_eq!(
                pair.public.encrypt(&mut rng, &[7u8; 246]),
                Err(CryptoError::PlaintextTooLong(246))
            );
            assert_eq!(
                pair.public.encrypt(&mut rng, &[7u8; 28]),
                Err(CryptoError::PlaintextTooShort(28))
            );
        }
    }

    #[test]
    fn round_trip_preserves_length_both_suites() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        for pair in [mock_pair(2), reference_pair(2)] {
            for len in [29, 30, 100, 244, 245] {
                let plaintext: Vec<u8> = (0..len).map(|_| rng.gen()).collect();
                let blob = pair.public.encrypt(&mut rng, &plaintext).unwrap();
                assert_eq!(pair.private.decrypt(&blob).unwrap(), plaintext);
            }
        }
    }

    #[test]
    fn short_blob_is_a_precondition_error() {
        let pair = mock_pair(4);
        assert_eq!(pair.private.decrypt(&[0u8; 255]), Err(DecryptError::WrongLength(255)));
    }

    #[test]
    fn wrong_key_decryption_fails_mock_1000_trials() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        for i in 0..1000u32 {
            let mut seed_a = [0u8; 32];
            let mut seed_b = [0u8; 32];
            rng.fill_bytes(&mut seed_a);
            rng.fill_bytes(&mut seed_b);
            let a = KeyPair::generate(CipherSuiteId::MockFixedSize, Some(seed_a)).unwrap();
            let b = KeyPair::generate(CipherSuiteId::MockFixedSize, Some(seed_b)).unwrap();
            let len = rng.gen_range(29..=245);
            let plaintext: Vec<u8> = (0..len).map(|_| rng.gen()).collect();
            let blob = a.public.encrypt(&mut rng, &plaintext).unwrap();
            assert_eq!(b.private.decrypt(&blob), Err(DecryptError::Failure), "trial {i}");
        }
    }

    #[test]
    fn wrong_key_decryption_fails_reference_1000_trials() {
        let mut rng = ChaCha20Rng::seed_from_u64(6);
        let keys: Vec<KeyPair> = (0..4).map(|i| reference_pair(100 + i)).collect();
        for i in 0..1000usize {
            let to = &keys[i % 4];
            let other = &keys[(i + 1 + i / 4 % 3) % 4];
            let len = rng.gen_range(29..=245);
            let plaintext: Vec<u8> = (0..len).map(|_| rng.gen()).collect();
            let blob = to.public.encrypt(&mut rng, &plaintext).unwrap();
            assert_eq!(other.private.decrypt(&blob), Err(DecryptError::Failure), "trial {i}");
        }
    }

    #[test]
    fn signatures_are_deterministic_and_sized() {
        for pair in [mock_pair(7), reference_pair(7)] {
            let data = [0x5au8; 245];
            let first = pair.private.sign(&data).unwrap();
            assert_eq!(first.len(), 256);
            assert_eq!(first, pair.private.sign(&data).unwrap());
            assert!(pair.public.verify(&data, &first));
            assert!(!pair.public.verify(&data, &[0u8; 256]));
            assert!(!pair.public.verify(&data, &first[..255]));
            assert_eq!(pair.private.sign(&[]), Err(CryptoError::EmptySignData));
        }
    }

    #[test]
    fn signature_fails_under_every_single_byte_flip() {
        for pair in [mock_pair(8), reference_pair(8)] {
            let data: Vec<u8> = (0..64u8).collect();
            let sig = pair.private.sign(&data).unwrap();
            for i in 0..data.len() {
                let mut bad = data.clone();
                bad[i] ^= 0x01;
                assert!(!pair.public.verify(&bad, &sig), "data byte {i}");
            }
            for i in 0..SIGNATURE_LEN {
                let mut bad = sig;
                bad[i] ^= 0x80;
                assert!(!pair.public.verify(&data, &bad), "signature byte {i}");
            }
        }
    }

    #[test]
    fn wrong_key_verification_fails_1000_trials() {
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        for _ in 0..1000 {
            let mut s1 = [0u8; 32];
            let mut s2 = [0u8; 32];
            rng.fill_bytes(&mut s1);
            rng.fill_bytes(&mut s2);
            let k1 = KeyPair::generate(CipherSuiteId::MockFixedSize, Some(s1)).unwrap();
            let k2 = KeyPair::generate(CipherSuiteId::MockFixedSize, Some(s2)).unwrap();
            let data: Vec<u8> = (0..rng.gen_range(1..300)).map(|_| rng.gen()).collect();
            assert!(!k2.public.verify(&data, &k1.private.sign(&data).unwrap()));
        }
        let keys: Vec<KeyPair> = (0..3).map(|i| reference_pair(200 + i)).collect();
        for i in 0..1000usize {
            let data: Vec<u8> = (0..rng.gen_range(1..300)).map(|_| rng.gen()).collect();
            let sig = keys[i % 3].private.sign(&data).unwrap();
            assert!(!keys[(i + 1) % 3].public.verify(&data, &sig));
        }
    }

    #[test]
    fn hash_is_64_bytes_deterministic_and_sensitive() {
        let mut rng = ChaCha20Rng::seed_from_u64(10);
        let mut blob = [0u8; BLOB_LEN];
        let mut sig = [0u8; SIGNATURE_LEN];
        rng.fill_bytes(&mut blob);
        rng.fill_bytes(&mut sig);
        let digest = hash_message(&blob, &sig);
        assert_eq!(digest.len(), 64);
        assert_eq!(digest, hash_message(&blob, &sig));
        let mut seen = std::collections::HashSet::new();
        seen.insert(digest);
        for _ in 0..1000 {
            let mut perturbed = blob;
            let pos = rng.gen_range(0..BLOB_LEN);
            perturbed[pos] ^= rng.gen_range(1..=255u8);
            let d = hash_message(&perturbed, &sig);
            assert_ne!(d, digest);
            seen.insert(d);
        }
    }

    #[test]
    fn key_bytes_round_trip() {
        for pair in [mock_pair(11), reference_pair(11)] {
            let suite = pair.suite();
            let back = KeyPair::from_bytes(suite, &pair.public.to_bytes(), &pair.private.to_bytes()).unwrap();
            assert_eq!(back, pair);
        }
        let a = mock_pair(12);
        let b = mock_pair(13);
        assert!(KeyPair::from_bytes(
            CipherSuiteId::MockFixedSize,
            &a.public.to_bytes(),
            &b.private.to_bytes()
        )
        .is_err());
        assert!(PublicKey::from_bytes(CipherSuiteId::ReferenceRsa2048Sha512, b"junk").is_err());
    }
}
