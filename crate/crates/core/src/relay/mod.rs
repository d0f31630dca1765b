//! The per-node protocol state machine.
//!
//! Sending: serialize payload, sign it, encrypt it to the recipient, hash
//! `blob || signature`, mine the nonce, assemble the frame.
//!
//! Receiving: parse, check hash and proof of work, dedup, relay, then try to
//! decrypt, verify and age-check. A frame that survives the dedup stage is
//! always relayed, whatever happens at the later stages.

mod seen;

use std::collections::BTreeSet;
use std::sync::Arc;
use std::time::Duration;

use rand::{CryptoRng, Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{Alias, CodecError, EncodedMessage, PlainPayload, Timestamp, MAX_MESSAGE_LEN, VERSION};
use crate::crypto::{hash_message, mine_nonce, pow_check, Blob, CryptoError, KeyPair, PowParams, Signature};
use crate::identity::ContactBook;

pub use seen::SeenHashStore;

#[derive(Debug, Error)]
pub enum RelayError {
    #[error("no contact with alias {0:?}")]
    UnknownRecipient(String),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
    #[error("dummy traffic is disabled (dummy_rate = 0)")]
    DummyTrafficDisabled,
    #[error("invalid node configuration: {0}")]
    InvalidConfig(String),
}

mod duration_ms {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        u64::deserialize(d).map(Duration::from_millis)
    }
}

/// Per-node tunables. Durations are (de)serialized as integer milliseconds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NodeConfig {
    #[serde(rename = "pow_difficulty_bits")]
    pub pow: PowParams,
    #[serde(rename = "max_message_age_ms", with = "duration_ms")]
    pub max_message_age: Duration,
    #[serde(rename = "future_skew_tolerance_ms", with = "duration_ms")]
    pub future_skew_tolerance: Duration,
    pub seen_capacity: usize,
    #[serde(rename = "seen_retention_ms", with = "duration_ms")]
    pub seen_retention: Duration,
    #[serde(rename = "relay_delay_max_ms", with = "duration_ms")]
    pub relay_delay_max: Duration,
    /// Dummy messages per second; 0 disables them.
    pub dummy_rate: f64,
    /// Skip the link a frame arrived on when relaying it.
    pub echo_suppression: bool,
}

const DAY: Duration = Duration::from_secs(24 * 60 * 60);

impl Default for NodeConfig {
    fn default() -> Self {
        NodeConfig {
            pow: PowParams::default(),
            max_message_age: DAY,
            future_skew_tolerance: Duration::from_secs(120),
            seen_capacity: 1 << 20,
            seen_retention: DAY,
            relay_delay_max: Duration::ZERO,
            dummy_rate: 0.0,
            echo_suppression: true,
        }
    }
}

impl NodeConfig {
    pub fn validate(&self) -> Result<(), RelayError> {
        if self.seen_capacity == 0 {
            return Err(RelayError::InvalidConfig("seen_capacity must be positive".into()));
        }
        if self.max_message_age > self.seen_retention {
            return Err(RelayError::InvalidConfig(
                "max_message_age must not exceed seen_retention".into(),
            ));
        }
        if !(self.dummy_rate.is_finite() && self.dummy_rate >= 0.0) {
            return Err(RelayError::InvalidConfig(
                "dummy_rate must be a non-negative number".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    Malformed,
    BadVersion,
    BadHash,
    BadPow,
    Duplicate,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelayDecision {
    Relay,
    Drop(DropReason),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Authenticity {
    Verified,
    Anonymous,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    BadSignature,
    TooOld,
    FromFuture,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DecodedResult {
    pub message: Vec<u8>,
    pub received_at: Timestamp,
    pub created_at: Timestamp,
    pub sender_alias: Alias,
    pub internal_address: u32,
    pub authenticity: Authenticity,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum DecodeOutcome {
    NotForMe,
    Delivered(DecodedResult),
    Rejected(RejectReason),
}

/// What a node did with one incoming frame. `outcome` is `None` exactly when
/// the frame was dropped before the decryption stage.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Reception {
    pub decision: RelayDecision,
    pub outcome: Option<DecodeOutcome>,
}

impl Reception {
    fn dropped(reason: DropReason) -> Self {
        Reception {
            decision: RelayDecision::Drop(reason),
            outcome: None,
        }
    }

    fn relayed(outcome: DecodeOutcome) -> Self {
        Reception {
            decision: RelayDecision::Relay,
            outcome: Some(outcome),
        }
    }
}

/// Opaque handle for one neighbor connection.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LinkId(pub u64);

fn assemble(blob: Blob, signature: Signature, pow: PowParams) -> Result<EncodedMessage, RelayError> {
    let hash = hash_message(&blob, &signature);
    let nonce = mine_nonce(&hash, pow)?;
    Ok(EncodedMessage {
        version: VERSION,
        hash,
        nonce,
        blob,
        signature,
    })
}

/// Builds a wire message from this book's owner to `recipient_alias`.
pub fn create_message<R: RngCore + CryptoRng>(
    book: &ContactBook,
    recipient_alias: &str,
    internal_address: u32,
    message: &[u8],
    created_at: Timestamp,
    pow: PowParams,
    rng: &mut R,
) -> Result<EncodedMessage, RelayError> {
    let contact = book
        .lookup_sender(recipient_alias)
        .ok_or_else(|| RelayError::UnknownRecipient(recipient_alias.to_string()))?;
    if message.len() > MAX_MESSAGE_LEN {
        return Err(CodecError::MessageTooLong(message.len()).into());
    }
    let payload = PlainPayload {
        created_at,
        sender_alias: contact.my_alias_for_them.clone(),
        internal_address,
        message: message.to_vec(),
    }
    .serialize()?;
    let signature = book.own_keypair().private.sign(&payload)?;
    let blob = contact.their_public_key.encrypt(rng, &payload)?;
    assemble(blob, signature, pow)
}

pub struct Node {
    config: NodeConfig,
    book: Arc<ContactBook>,
    seen: SeenHashStore,
    neighbors: BTreeSet<LinkId>,
    rng: ChaCha20Rng,
}

impl std::fmt::Debug for Node {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Node")
            .field("config", &self.config)
            .field("contacts", &self.book.len())
            .field("seen", &self.seen.len())
            .field("neighbors", &self.neighbors)
            .finish()
    }
}

impl Node {
    /// `seed` drives encryption padding, dummy traffic and relay delays.
    pub fn new(config: NodeConfig, book: impl Into<Arc<ContactBook>>, seed: [u8; 32]) -> Result<Self, RelayError> {
        config.validate()?;
        Ok(Node {
            seen: SeenHashStore::new(config.seen_capacity, config.seen_retention),
            config,
            book: book.into(),
            neighbors: BTreeSet::new(),
            rng: ChaCha20Rng::from_seed(seed),
        })
    }

    pub fn with_entropy(config: NodeConfig, book: impl Into<Arc<ContactBook>>) -> Result<Self, RelayError> {
        let mut seed = [0u8; 32];
        rand::rngs::OsRng.fill_bytes(&mut seed);
        Node::new(config, book, seed)
    }

    pub fn config(&self) -> &NodeConfig {
        &self.config
    }

    pub fn book(&self) -> &Arc<ContactBook> {
        &self.book
    }

    /// Swaps in a new contact snapshot; receives in progress keep the old one.
    pub fn set_book(&mut self, book: Arc<ContactBook>) {
        self.book = book;
    }

    pub fn seen(&self) -> &SeenHashStore {
        &self.seen
    }

    pub fn add_link(&mut self, link: LinkId) {
        self.neighbors.insert(link);
    }

    pub fn remove_link(&mut self, link: LinkId) -> bool {
        self.neighbors.remove(&link)
    }

    pub fn neighbors(&self) -> impl Iterator<Item = LinkId> + '_ {
        self.neighbors.iter().copied()
    }

    /// Runs one frame through the dedup, relay and decode stages.
    pub fn on_receive(&mut self, wire: &[u8], received_at: Timestamp) -> Reception {
        let msg = match EncodedMessage::parse(wire) {
            Ok(m) => m,
            Err(CodecError::UnsupportedVersion(_)) => return Reception::dropped(DropReason::BadVersion),
            Err(_) => return Reception::dropped(DropReason::Malformed),
        };
        if hash_message(&msg.blob, &msg.signature) != msg.hash {
            return Reception::dropped(DropReason::BadHash);
        }
        if !pow_check(&msg.hash, &msg.nonce, self.config.pow) {
            return Reception::dropped(DropReason::BadPow);
        }
        self.seen.evict(received_at);
        if self.seen.contains(&msg.hash) {
            return Reception::dropped(DropReason::Duplicate);
        }
        self.seen.insert(msg.hash, received_at);
        Reception::relayed(self.decode(&msg, received_at))
    }

    fn decode(&self, msg: &EncodedMessage, received_at: Timestamp) -> DecodeOutcome {
        let Ok(plaintext) = self.book.own_keypair().private.decrypt(&msg.blob) else {
            return DecodeOutcome::NotForMe;
        };
        // A plaintext that is not a payload came from a foreign key that
        // happened to pass the padding check.
        let Ok(payload) = PlainPayload::parse(&plaintext) else {
            return DecodeOutcome::NotForMe;
        };
        let authenticity = match self.book.lookup_sender(payload.sender_alias.as_str()) {
            None => Authenticity::Anonymous,
            Some(contact) => {
                if !contact.their_public_key.verify(&plaintext, &msg.signature) {
                    return DecodeOutcome::Rejected(RejectReason::BadSignature);
                }
                Authenticity::Verified
            }
        };
        let created = payload.created_at.as_micros();
        let received = received_at.as_micros();
        if received.saturating_sub(created) >= self.config.max_message_age.as_micros() {
            return DecodeOutcome::Rejected(RejectReason::TooOld);
        }
        if created > received + self.config.future_skew_tolerance.as_micros() {
            return DecodeOutcome::Rejected(RejectReason::FromFuture);
        }
        DecodeOutcome::Delivered(DecodedResult {
            message: payload.message,
            received_at,
            created_at: payload.created_at,
            sender_alias: payload.sender_alias,
            internal_address: payload.internal_address,
            authenticity,
        })
    }

    /// Links a relayed frame goes out on. `None` marks a locally created frame.
    pub fn relay_targets(&self, arrival: Option<LinkId>) -> Vec<LinkId> {
        self.neighbors
            .iter()
            .copied()
            .filter(|&l| !(self.config.echo_suppression && Some(l) == arrival))
            .collect()
    }

    /// Marks a locally created frame as seen and returns the links to flood it on.
    pub fn originate(&mut self, msg: &EncodedMessage, now: Timestamp) -> Vec<LinkId> {
        self.seen.insert(msg.hash, now);
        self.relay_targets(None)
    }

    /// [`create_message`] with this node's book and generator, followed by [`Node::originate`].
    pub fn send(
        &mut self,
        recipient_alias: &str,
        internal_address: u32,
        message: &[u8],
        now: Timestamp,
    ) -> Result<(EncodedMessage, Vec<LinkId>), RelayError> {
        let msg = create_message(
            &self.book,
            recipient_alias,
            internal_address,
            message,
            now,
            self.config.pow,
            &mut self.rng,
        )?;
        let targets = self.originate(&msg, now);
        Ok((msg, targets))
    }

    /// A wire-valid frame sealed to a throwaway key nobody holds.
    pub fn make_dummy(&mut self, now: Timestamp) -> Result<EncodedMessage, RelayError> {
        if self.config.dummy_rate <= 0.0 {
            return Err(RelayError::DummyTrafficDisabled);
        }
        let suite = self.book.own_keypair().suite();
        let throwaway = KeyPair::generate_with_rng(suite, &mut self.rng)?;
        let alias: String = (0..self.rng.gen_range(4..=12))
            .map(|_| char::from(b"abcdefghijklmnopqrstuvwxyz0123456789"[self.rng.gen_range(0..36)]))
            .collect();
        let len = self.rng.gen_range(0..=MAX_MESSAGE_LEN);
        let mut message = vec![0u8; len];
        self.rng.fill_bytes(&mut message);
        let payload = PlainPayload {
            created_at: now,
            sender_alias: Alias::new(alias)?,
            internal_address: self.rng.gen(),
            message,
        }
        .serialize()?;
        let signature = throwaway.private.sign(&payload)?;
        let blob = throwaway.public.encrypt(&mut self.rng, &payload)?;
        assemble(blob, signature, self.config.pow)
    }

    /// Uniform in `[0, relay_delay_max]`.
    pub fn sample_relay_delay(&mut self) -> Duration {
        let max = self.config.relay_delay_max.as_micros() as u64;
        if max == 0 {
            return Duration::ZERO;
        }
        Duration::from_micros(self.rng.gen_range(0..=max))
    }

    /// Mean gap between dummy messages, if dummy traffic is on.
    pub fn dummy_interval(&self) -> Option<Duration> {
        (self.config.dummy_rate > 0.0).then(|| Duration::from_secs_f64(1.0 / self.config.dummy_rate))
    }

    pub fn rng(&mut self) -> &mut ChaCha20Rng {
        &mut self.rng
    }
}

#[cfg(test)]
mod tests;
