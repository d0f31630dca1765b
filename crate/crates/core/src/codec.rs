//! Fixed-layout encodings for the plaintext payload and the 580-byte wire frame.
//!
//! Payload (29..=245 bytes):
//!
//! ```text
//! created_at (9, BE µs since epoch) | sender alias (16, zero padded) | internal address (4, BE) | message (0..=216)
//! ```
//!
//! Frame (580 bytes):
//!
//! ```text
//! version (1) | hash (64) | nonce (3) | encrypted blob (256) | signature (256)
//! ```
//!
//! The payload carries no length field: the cipher suites preserve plaintext
//! length, so the message length is whatever is left after the header.

use std::fmt;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::pow::NONCE_LEN;
use crate::crypto::{Blob, MessageHash, Nonce, Signature, BLOB_LEN, HASH_LEN, SIGNATURE_LEN};

pub const TIMESTAMP_LEN: usize = 9;
pub const ALIAS_LEN: usize = 16;
pub const ADDRESS_LEN: usize = 4;
pub const HEADER_LEN: usize = TIMESTAMP_LEN + ALIAS_LEN + ADDRESS_LEN;
pub const MAX_MESSAGE_LEN: usize = 216;
pub const MAX_PAYLOAD_LEN: usize = HEADER_LEN + MAX_MESSAGE_LEN;

pub const VERSION: u8 = 0x01;
pub const FRAME_LEN: usize = 580;
pub const HASH_OFFSET: usize = 1;
pub const NONCE_OFFSET: usize = HASH_OFFSET + HASH_LEN;
pub const BLOB_OFFSET: usize = NONCE_OFFSET + NONCE_LEN;
pub const SIGNATURE_OFFSET: usize = BLOB_OFFSET + BLOB_LEN;

const _: () = assert!(SIGNATURE_OFFSET + SIGNATURE_LEN == FRAME_LEN);
const _: () = assert!(MAX_PAYLOAD_LEN == crate::crypto::MAX_PLAINTEXT_LEN);

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CodecError {
    #[error("alias is {0} bytes, limit is {ALIAS_LEN}")]
    AliasTooLong(usize),
    #[error("invalid alias: {0}")]
    InvalidAlias(&'static str),
    #[error("message is {0} bytes, limit is {MAX_MESSAGE_LEN}")]
    MessageTooLong(usize),
    #[error("timestamp exceeds 72 bits")]
    TimestampOverflow,
    #[error("malformed payload: {0}")]
    MalformedPayload(String),
    #[error("frame must be {FRAME_LEN} bytes, got {0}")]
    MalformedMessage(usize),
    #[error("unsupported frame version {0:#04x}")]
    UnsupportedVersion(u8),
}

/// Microseconds since the Unix epoch, limited to 72 bits.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Timestamp(u128);

impl Timestamp {
    pub const MAX: Timestamp = Timestamp((1 << 72) - 1);

    pub fn from_micros(micros: u64) -> Self {
        Timestamp(u128::from(micros))
    }

    pub fn try_from_micros(micros: u128) -> Result<Self, CodecError> {
        if micros > Self::MAX.0 {
            return Err(CodecError::TimestampOverflow);
        }
        Ok(Timestamp(micros))
    }

    pub fn now() -> Self {
        let since = SystemTime::now().duration_since(UNIX_EPOCH).unwrap_or_default();
        Timestamp(since.as_micros())
    }

    pub fn as_micros(&self) -> u128 {
        self.0
    }

    fn to_bytes(self) -> [u8; TIMESTAMP_LEN] {
        self.0.to_be_bytes()[16 - TIMESTAMP_LEN..].try_into().unwrap()
    }

    fn from_bytes(bytes: &[u8; TIMESTAMP_LEN]) -> Self {
        let mut wide = [0u8; 16];
        wide[16 - TIMESTAMP_LEN..].copy_from_slice(bytes);
        Timestamp(u128::from_be_bytes(wide))
    }
}

/// A correspondent alias: 1 to 16 bytes of UTF-8 without zero bytes.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Alias(String);

impl Alias {
    pub fn new(alias: impl Into<String>) -> Result<Self, CodecError> {
        let alias = alias.into();
        if alias.is_empty() {
            return Err(CodecError::InvalidAlias("empty"));
        }
        if alias.len() > ALIAS_LEN {
            return Err(CodecError::AliasTooLong(alias.len()));
        }
        if alias.bytes().any(|b| b == 0) {
            return Err(CodecError::InvalidAlias("contains a zero byte"));
        }
        Ok(Alias(alias))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    fn to_field(&self) -> [u8; ALIAS_LEN] {
        let mut field = [0u8; ALIAS_LEN];
        field[..self.0.len()].copy_from_slice(self.0.as_bytes());
        field
    }

    fn from_field(field: &[u8]) -> Result<Self, CodecError> {
        let end = field.iter().rposition(|&b| b != 0).map_or(0, |i| i + 1);
        let text = std::str::from_utf8(&field[..end])
            .map_err(|_| CodecError::MalformedPayload("alias is not valid UTF-8".into()))?;
        Alias::new(text).map_err(|e| CodecError::MalformedPayload(e.to_string()))
    }
}

impl fmt::Display for Alias {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl TryFrom<String> for Alias {
    type Error = CodecError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        Alias::new(s)
    }
}

impl TryFrom<&str> for Alias {
    type Error = CodecError;

    fn try_from(s: &str) -> Result<Self, Self::Error> {
        Alias::new(s)
    }
}

impl From<Alias> for String {
    fn from(a: Alias) -> String {
        a.0
    }
}

impl std::borrow::Borrow<str> for Alias {
    fn borrow(&self) -> &str {
        &self.0
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PlainPayload {
    pub created_at: Timestamp,
    pub sender_alias: Alias,
    pub internal_address: u32,
    pub message: Vec<u8>,
}

impl PlainPayload {
    pub fn serialize(&self) -> Result<Vec<u8>, CodecError> {
        if self.message.len() > MAX_MESSAGE_LEN {
            return Err(CodecError::MessageTooLong(self.message.len()));
        }
        if self.created_at > Timestamp::MAX {
            return Err(CodecError::TimestampOverflow);
        }
        let mut out = Vec::with_capacity(HEADER_LEN + self.message.len());
        out.extend_from_slice(&self.created_at.to_bytes());
        out.extend_from_slice(&self.sender_alias.to_field());
        out.extend_from_slice(&self.internal_address.to_be_bytes());
        out.extend_from_slice(&self.message);
        Ok(out)
    }

    pub fn parse(bytes: &[u8]) -> Result<Self, CodecError> {
        if !(HEADER_LEN..=MAX_PAYLOAD_LEN).contains(&bytes.len()) {
            return Err(CodecError::MalformedPayload(format!(
                "length {} outside {HEADER_LEN}..={MAX_PAYLOAD_LEN}",
                bytes.len()
            )));
        }
        let (ts, rest) = bytes.split_at(TIMESTAMP_LEN);
        let (alias, rest) = rest.split_at(ALIAS_LEN);
        let (addr, message) = rest.split_at(ADDRESS_LEN);
        Ok(PlainPayload {
            created_at: Timestamp::from_bytes(ts.try_into().unwrap()),
            sender_alias: Alias::from_field(alias)?,
            internal_address: u32::from_be_bytes(addr.try_into().unwrap()),
            message: message.to_vec(),
        })
    }
}

#[derive(Clone, PartialEq, Eq)]
pub struct EncodedMessage {
    pub version: u8,
    pub hash: MessageHash,
    pub nonce: Nonce,
    pub blob: Blob,
    pub signature: Signature,
}

impl fmt::Debug for EncodedMessage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("EncodedMessage")
            .field("version", &self.version)
            .field("hash", &hex::encode(&self.hash[..8]))
            .field("nonce", &hex::encode(self.nonce))
            .finish_non_exhaustive()
    }
}

impl EncodedMessage {
    pub fn serialize(&self) -> [u8; FRAME_LEN] {
        let mut out = [0u8; FRAME_LEN];
        out[0] = self.version;
        out[HASH_OFFSET..NONCE_OFFSET].copy_from_slice(&self.hash);
        out[NONCE_OFFSET..BLOB_OFFSET].copy_from_slice(&self.nonce);
        out[BLOB_OFFSET..SIGNATURE_OFFSET].copy_from_slice(&self.blob);
        out[SIGNATURE_OFFSET..].copy_from_slice(&self.signature);
        out
    }

    /// Structural parse only; hash and proof of work are checked by the relay.
    pub fn parse(bytes: &[u8]) -> Result<Self, CodecError> {
        if bytes.len() != FRAME_LEN {
            return Err(CodecError::MalformedMessage(bytes.len()));
        }
        if bytes[0] != VERSION {
            return Err(CodecError::UnsupportedVersion(bytes[0]));
        }
        Ok(EncodedMessage {
            version: bytes[0],
            hash: bytes[HASH_OFFSET..NONCE_OFFSET].try_into().unwrap(),
            nonce: bytes[NONCE_OFFSET..BLOB_OFFSET].try_into().unwrap(),
            blob: bytes[BLOB_OFFSET..SIGNATURE_OFFSET].try_into().unwrap(),
            signature: bytes[SIGNATURE_OFFSET..].try_into().unwrap(),
        })
    }
}
