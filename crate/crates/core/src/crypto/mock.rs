//! Insecure stand-in suite with the reference suite's sizes.
//!
//! Blob layout: `tag (10) || (len (1) || plaintext || zero fill) ^ keystream`.
//! The tag is a keyed digest of the plaintext and also seeds the keystream,
//! so a wrong key fails the tag check with probability 1 - 2^-80.
//! Signatures are a digest expansion keyed by the public key: anyone can
//! forge them. Simulation and tests only.

use sha2::{Digest, Sha512};

use super::{
    Blob, CipherSuiteId, CryptoError, DecryptError, KeyPair, PrivateInner, PrivateKey, PublicInner, PublicKey,
    Signature, BLOB_LEN, MAX_PLAINTEXT_LEN, MIN_PLAINTEXT_LEN, SIGNATURE_LEN,
};

const KEY_LEN: usize = 32;
const TAG_LEN: usize = 10;

#[derive(Clone, Debug, PartialEq, Eq)]
pub(super) struct MockPublicKey([u8; KEY_LEN]);

#[derive(Clone, PartialEq, Eq)]
pub(super) struct MockPrivateKey([u8; KEY_LEN]);

fn derive_public(secret: &[u8; KEY_LEN]) -> MockPublicKey {
    let digest = Sha512::new()
        .chain_update(b"efpix-mock-public")
        .chain_update(secret)
        .finalize();
    MockPublicKey(digest[..KEY_LEN].try_into().unwrap())
}

fn wrong_size(len: usize) -> CryptoError {
    CryptoError::InvalidKey {
        suite: CipherSuiteId::MockFixedSize,
        reason: format!("expected {KEY_LEN} bytes, got {len}"),
    }
}

impl MockPublicKey {
    pub(super) fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub(super) fn from_bytes(bytes: &[u8]) -> Result<Self, CryptoError> {
        bytes.try_into().map(MockPublicKey).map_err(|_| wrong_size(bytes.len()))
    }
}

impl MockPrivateKey {
    pub(super) fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub(super) fn from_bytes(bytes: &[u8]) -> Result<Self, CryptoError> {
        bytes
            .try_into()
            .map(MockPrivateKey)
            .map_err(|_| wrong_size(bytes.len()))
    }

    pub(super) fn public_key(&self) -> MockPublicKey {
        derive_public(&self.0)
    }
}

pub(super) fn generate(seed: [u8; 32]) -> KeyPair {
    let private = MockPrivateKey(seed);
    KeyPair {
        public: PublicKey(PublicInner::Mock(private.public_key())),
        private: PrivateKey(PrivateInner::Mock(private)),
    }
}

fn tag(key: &MockPublicKey, plaintext: &[u8]) -> [u8; TAG_LEN] {
    let digest = Sha512::new()
        .chain_update(b"efpix-mock-tag")
        .chain_update(key.0)
        .chain_update(plaintext)
        .finalize();
    digest[..TAG_LEN].try_into().unwrap()
}

fn apply_keystream(key: &MockPublicKey, tag: &[u8], body: &mut [u8]) {
    for (counter, chunk) in body.chunks_mut(64).enumerate() {
        let block = Sha512::new()
            .chain_update(b"efpix-mock-stream")
            .chain_update(key.0)
            .chain_update(tag)
            .chain_update((counter as u32).to_be_bytes())
            .finalize();
        chunk.iter_mut().zip(block.iter()).for_each(|(b, k)| *b ^= k);
    }
}

pub(super) fn encrypt(key: &MockPublicKey, plaintext: &[u8]) -> Blob {
    debug_assert!((MIN_PLAINTEXT_LEN..=MAX_PLAINTEXT_LEN).contains(&plaintext.len()));
    let tag = tag(key, plaintext);
    let mut blob = [0u8; BLOB_LEN];
    blob[..TAG_LEN].copy_from_slice(&tag);
    blob[TAG_LEN] = plaintext.len() as u8;
    blob[TAG_LEN + 1..TAG_LEN + 1 + plaintext.len()].copy_from_slice(plaintext);
    apply_keystream(key, &tag, &mut blob[TAG_LEN..]);
    blob
}

pub(super) fn decrypt(key: &MockPrivateKey, blob: &[u8]) -> Result<Vec<u8>, DecryptError> {
    let public = key.public_key();
    let (tag, body) = blob.split_at(TAG_LEN);
    let mut body = body.to_vec();
    apply_keystream(&public, tag, &mut body);
    let len = body[0] as usize;
    if !(MIN_PLAINTEXT_LEN..=MAX_PLAINTEXT_LEN).contains(&len) {
        return Err(DecryptError::Failure);
    }
    let plaintext = &body[1..1 + len];
    if body[1 + len..].iter().any(|&b| b != 0) || self::tag(&public, plaintext) != tag {
        return Err(DecryptError::Failure);
    }
    Ok(plaintext.to_vec())
}

fn expand_signature(key: &MockPublicKey, data: &[u8]) -> Signature {
    let data_digest = Sha512::digest(data);
    let mut sig = [0u8; SIGNATURE_LEN];
    for (counter, chunk) in sig.chunks_mut(64).enumerate() {
        let block = Sha512::new()
            .chain_update(b"efpix-mock-sig")
            .chain_update([counter as u8])
            .chain_update(key.0)
            .chain_update(data_digest)
            .finalize();
        chunk.copy_from_slice(&block);
    }
    sig
}

pub(super) fn sign(key: &MockPrivateKey, data: &[u8]) -> Signature {
    expand_signature(&key.public_key(), data)
}

pub(super) fn verify(key: &MockPublicKey, data: &[u8], signature: &[u8]) -> bool {
    expand_signature(key, data)[..] == *signature
}
