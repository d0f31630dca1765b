//! Encrypted flood relay messaging.
//!
//! Every frame is a fixed 580 bytes, flooded to all neighbors, deduplicated
//! by a hash over its ciphertext and signature, and readable only by the
//! holder of the recipient key. The [`sim`] module runs whole networks of
//! [`relay::Node`]s on a simulated clock.

pub mod codec;
pub mod crypto;
pub mod identity;
pub mod relay;
pub mod sim;

pub use codec::{Alias, CodecError, EncodedMessage, PlainPayload, Timestamp, FRAME_LEN};
pub use crypto::{CipherSuiteId, CryptoError, KeyPair, PowParams, PrivateKey, PublicKey};
pub use identity::{Contact, ContactBook, IdentityError};
pub use relay::{
    create_message, Authenticity, DecodeOutcome, DecodedResult, DropReason, LinkId, Node, NodeConfig, Reception,
    RejectReason, RelayDecision, RelayError,
};
