use rand::{CryptoRng, RngCore};
use rsa::pkcs1::{DecodeRsaPrivateKey, DecodeRsaPublicKey, EncodeRsaPrivateKey, EncodeRsaPublicKey};
use rsa::pkcs1v15::{SigningKey, VerifyingKey};
use rsa::signature::{SignatureEncoding, Signer, Verifier};
use rsa::traits::PublicKeyParts;
use rsa::{Pkcs1v15Encrypt, RsaPrivateKey, RsaPublicKey};
use sha2::Sha512;

use super::{
    Blob, CipherSuiteId, CryptoError, DecryptError, KeyPair, PrivateInner, PrivateKey, PublicInner, PublicKey,
    Signature, BLOB_LEN, MIN_PLAINTEXT_LEN, SIGNATURE_LEN,
};

const MODULUS_BITS: usize = 2048;
const SUITE: CipherSuiteId = CipherSuiteId::ReferenceRsa2048Sha512;

fn invalid(reason: impl ToString) -> CryptoError {
    CryptoError::InvalidKey {
        suite: SUITE,
        reason: reason.to_string(),
    }
}

pub(super) fn generate<R: RngCore + CryptoRng>(rng: &mut R) -> Result<KeyPair, CryptoError> {
    let private = RsaPrivateKey::new(rng, MODULUS_BITS).map_err(|e| CryptoError::KeyGen(e.to_string()))?;
    let public = private.to_public_key();
    Ok(KeyPair {
        public: PublicKey(PublicInner::Reference(Box::new(public))),
        private: PrivateKey(PrivateInner::Reference(Box::new(private))),
    })
}

pub(super) fn public_to_der(key: &RsaPublicKey) -> Vec<u8> {
    key.to_pkcs1_der().expect("RSA public key encodes").into_vec()
}

pub(super) fn private_to_der(key: &RsaPrivateKey) -> Vec<u8> {
    key.to_pkcs1_der().expect("RSA private key encodes").as_bytes().to_vec()
}

pub(super) fn public_from_der(bytes: &[u8]) -> Result<RsaPublicKey, CryptoError> {
    let key = RsaPublicKey::from_pkcs1_der(bytes).map_err(invalid)?;
    if key.size() != BLOB_LEN {
        return Err(invalid(format!("modulus is {} bytes, expected {BLOB_LEN}", key.size())));
    }
    Ok(key)
}

pub(super) fn private_from_der(bytes: &[u8]) -> Result<RsaPrivateKey, CryptoError> {
    let key = RsaPrivateKey::from_pkcs1_der(bytes).map_err(invalid)?;
    if key.size() != BLOB_LEN {
        return Err(invalid(format!("modulus is {} bytes, expected {BLOB_LEN}", key.size())));
    }
    key.validate().map_err(invalid)?;
    Ok(key)
}

pub(super) fn encrypt<R: RngCore + CryptoRng>(
    key: &RsaPublicKey,
    rng: &mut R,
    plaintext: &[u8],
) -> Result<Blob, CryptoError> {
    let out = key
        .encrypt(rng, Pkcs1v15Encrypt, plaintext)
        .map_err(|_| CryptoError::PlaintextTooLong(plaintext.len()))?;
    Ok(out.try_into().expect("2048-bit modulus yields 256-byte ciphertext"))
}

pub(super) fn decrypt(key: &RsaPrivateKey, blob: &[u8]) -> Result<Vec<u8>, DecryptError> {
    let plaintext = key.decrypt(Pkcs1v15Encrypt, blob).map_err(|_| DecryptError::Failure)?;
    // A foreign key passes the v1.5 padding check about once in 2^16 tries;
    // anything shorter than a payload header cannot be ours.
    if plaintext.len() < MIN_PLAINTEXT_LEN {
        return Err(DecryptError::Failure);
    }
    Ok(plaintext)
}

pub(super) fn sign(key: &RsaPrivateKey, data: &[u8]) -> Result<Signature, CryptoError> {
    let signer = SigningKey::<Sha512>::new(key.clone());
    let sig = signer.try_sign(data).map_err(|e| CryptoError::Sign(e.to_string()))?;
    sig.to_vec()
        .try_into()
        .map_err(|v: Vec<u8>| CryptoError::Sign(format!("signature is {} bytes, expected {SIGNATURE_LEN}", v.len())))
}

pub(super) fn verify(key: &RsaPublicKey, data: &[u8], signature: &[u8]) -> bool {
    let Ok(sig) = rsa::pkcs1v15::Signature::try_from(signature) else {
        return false;
    };
    VerifyingKey::<Sha512>::new(key.clone()).verify(data, &sig).is_ok()
}
