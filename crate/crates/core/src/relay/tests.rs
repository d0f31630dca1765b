use super::*;
use crate::codec::{BLOB_OFFSET, FRAME_LEN, NONCE_OFFSET};
use crate::crypto::CipherSuiteId;
use crate::identity::Contact;
use proptest::prelude::*;

const SEC: u64 = 1_000_000;

fn keys(tag: u8) -> KeyPair {
    KeyPair::generate(CipherSuiteId::MockFixedSize, Some([tag; 32])).unwrap()
}

fn config() -> NodeConfig {
    NodeConfig {
        pow: PowParams::new(8).unwrap(),
        max_message_age: Duration::from_secs(3600),
        seen_retention: Duration::from_secs(3600),
        ..NodeConfig::default()
    }
}

/// alice and bob know each other; carol knows nobody.
struct World {
    alice: ContactBook,
    bob: ContactBook,
    carol: ContactBook,
}

fn world() -> World {
    let (a, b, c) = (keys(1), keys(2), keys(3));
    let mut alice = ContactBook::new(a.clone());
    alice
        .add_contact(Contact::new("bob", b.public.clone(), "alice").unwrap(), false)
        .unwrap();
    alice
        .add_contact(Contact::new("carol", c.public.clone(), "stranger").unwrap(), false)
        .unwrap();
    let mut bob = ContactBook::new(b);
    bob.add_contact(Contact::new("alice", a.public, "bob").unwrap(), false)
        .unwrap();
    World {
        alice,
        bob,
        carol: ContactBook::new(c),
    }
}

fn node(book: &ContactBook) -> Node {
    Node::new(config(), book.clone(), [7; 32]).unwrap()
}

fn message(w: &World, to: &str, body: &[u8], at: u64) -> [u8; FRAME_LEN] {
    let mut rng = ChaCha20Rng::seed_from_u64(at);
    create_message(
        &w.alice,
        to,
        42,
        body,
        Timestamp::from_micros(at),
        config().pow,
        &mut rng,
    )
    .unwrap()
    .serialize()
}

fn delivered(r: &Reception) -> &DecodedResult {
    match &r.outcome {
        Some(DecodeOutcome::Delivered(d)) => d,
        other => panic!("expected delivery, got {other:?}"),
    }
}

#[test]
fn fresh_message_is_delivered_verified() {
    let w = world();
    let wire = message(&w, "bob", b"hello bob", 10 * SEC);
    let r = node(&w.bob).on_receive(&wire, Timestamp::from_micros(11 * SEC));
    assert_eq!(r.decision, RelayDecision::Relay);
    let d = delivered(&r);
    assert_eq!(d.message, b"hello bob");
    assert_eq!(d.sender_alias.as_str(), "alice");
    assert_eq!(d.internal_address, 42);
    assert_eq!(d.created_at, Timestamp::from_micros(10 * SEC));
    assert_eq!(d.received_at, Timestamp::from_micros(11 * SEC));
    assert_eq!(d.authenticity, Authenticity::Verified);
}

#[test]
fn second_copy_is_duplicate() {
    let w = world();
    let wire = message(&w, "bob", b"x", 0);
    let mut bob = node(&w.bob);
    assert_eq!(
        bob.on_receive(&wire, Timestamp::from_micros(1)).decision,
        RelayDecision::Relay
    );
    let r = bob.on_receive(&wire, Timestamp::from_micros(2));
    assert_eq!(r, Reception::dropped(DropReason::Duplicate));
}

#[test]
fn exactly_once_over_many_copies() {
    let w = world();
    let wire = message(&w, "bob", b"x", 0);
    let mut n = node(&w.carol);
    let decisions: Vec<_> = (0..25)
        .map(|i| n.on_receive(&wire, Timestamp::from_micros(i)).decision)
        .collect();
    assert_eq!(decisions.iter().filter(|d| **d == RelayDecision::Relay).count(), 1);
    assert_eq!(
        decisions
            .iter()
            .filter(|d| **d == RelayDecision::Drop(DropReason::Duplicate))
            .count(),
        24
    );
}

#[test]
fn message_for_someone_else_is_relayed_not_for_me() {
    let w = world();
    let wire = message(&w, "bob", b"secret", 0);
    let r = node(&w.carol).on_receive(&wire, Timestamp::from_micros(1));
    assert_eq!(r, Reception::relayed(DecodeOutcome::NotForMe));
}

#[test]
fn flipped_blob_byte_is_bad_hash() {
    let w = world();
    let mut wire = message(&w, "bob", b"x", 0);
    wire[BLOB_OFFSET + 17] ^= 0x01;
    assert_eq!(
        node(&w.bob).on_receive(&wire, Timestamp::from_micros(1)),
        Reception::dropped(DropReason::BadHash)
    );
}

#[test]
fn bad_nonce_is_bad_pow() {
    let w = world();
    let msg = EncodedMessage::parse(&message(&w, "bob", b"x", 0)).unwrap();
    let bad = (0u32..1 << 24)
        .map(crate::crypto::pow::nonce_from_u32)
        .find(|n| !pow_check(&msg.hash, n, config().pow))
        .unwrap();
    let mut wire = msg.serialize();
    wire[NONCE_OFFSET..NONCE_OFFSET + 3].copy_from_slice(&bad);
    assert_eq!(
        node(&w.bob).on_receive(&wire, Timestamp::from_micros(1)),
        Reception::dropped(DropReason::BadPow)
    );
}

#[test]
fn structural_failures() {
    let w = world();
    let mut bob = node(&w.bob);
    assert_eq!(
        bob.on_receive(&[1u8; 579], Timestamp::default()),
        Reception::dropped(DropReason::Malformed)
    );
    let mut wire = message(&w, "bob", b"x", 0);
    wire[0] = 2;
    assert_eq!(
        bob.on_receive(&wire, Timestamp::default()),
        Reception::dropped(DropReason::BadVersion)
    );
}

#[test]
fn aging_rules() {
    let w = world();
    let max_age = config().max_message_age.as_micros() as u64;
    let wire = message(&w, "bob", b"x", SEC);
    let r = node(&w.bob).on_receive(&wire, Timestamp::from_micros(SEC + max_age));
    assert_eq!(r, Reception::relayed(DecodeOutcome::Rejected(RejectReason::TooOld)));
    let r = node(&w.bob).on_receive(&wire, Timestamp::from_micros(SEC + max_age - 1));
    delivered(&r);

    let skew = config().future_skew_tolerance.as_micros() as u64;
    let future = message(&w, "bob", b"x", 1000 * SEC);
    let r = node(&w.bob).on_receive(&future, Timestamp::from_micros(1000 * SEC - skew - 1));
    assert_eq!(r, Reception::relayed(DecodeOutcome::Rejected(RejectReason::FromFuture)));
    let r = node(&w.bob).on_receive(&future, Timestamp::from_micros(1000 * SEC - skew));
    delivered(&r);
}

#[test]
fn unknown_sender_is_anonymous() {
    let w = world();
    // carol's book is empty, so "stranger" resolves to nobody
    let wire = message(&w, "carol", b"who am i", 0);
    let r = node(&w.carol).on_receive(&wire, Timestamp::from_micros(1));
    let d = delivered(&r);
    assert_eq!(d.authenticity, Authenticity::Anonymous);
    assert_eq!(d.sender_alias.as_str(), "stranger");
    assert_eq!(d.message, b"who am i");
}

#[test]
fn forged_signature_with_recomputed_hash_is_rejected() {
    let w = world();
    let mut msg = EncodedMessage::parse(&message(&w, "bob", b"x", 0)).unwrap();
    msg.signature[100] ^= 0x40;
    let forged = assemble(msg.blob, msg.signature, config().pow).unwrap();
    let r = node(&w.bob).on_receive(&forged.serialize(), Timestamp::from_micros(1));
    assert_eq!(
        r,
        Reception::relayed(DecodeOutcome::Rejected(RejectReason::BadSignature))
    );
}

#[test]
fn replay_after_eviction_is_too_old() {
    let w = world();
    let wire = message(&w, "bob", b"x", 0);
    let mut bob = node(&w.bob);
    delivered(&bob.on_receive(&wire, Timestamp::from_micros(1)));
    let retention = config().seen_retention.as_micros() as u64;
    let r = bob.on_receive(&wire, Timestamp::from_micros(1 + retention + SEC));
    assert_eq!(r, Reception::relayed(DecodeOutcome::Rejected(RejectReason::TooOld)));
}

#[test]
fn create_message_errors() {
    let w = world();
    let mut rng = ChaCha20Rng::seed_from_u64(0);
    let at = Timestamp::from_micros(0);
    assert!(matches!(
        create_message(&w.alice, "dave", 0, b"", at, config().pow, &mut rng),
        Err(RelayError::UnknownRecipient(_))
    ));
    assert!(matches!(
        create_message(&w.alice, "bob", 0, &[0; 217], at, config().pow, &mut rng),
        Err(RelayError::Codec(CodecError::MessageTooLong(217)))
    ));
    let empty = create_message(&w.alice, "bob", 0, b"", at, config().pow, &mut rng).unwrap();
    assert_eq!(empty.serialize().len(), 580);
    assert!(delivered(&node(&w.bob).on_receive(&empty.serialize(), at))
        .message
        .is_empty());
}

#[test]
fn relay_targets_and_echo_suppression() {
    let w = world();
    let mut n = node(&w.carol);
    assert!(n.relay_targets(None).is_empty());
    for l in [1, 2, 3] {
        n.add_link(LinkId(l));
    }
    assert_eq!(n.relay_targets(Some(LinkId(1))), vec![LinkId(2), LinkId(3)]);
    assert_eq!(n.relay_targets(None), vec![LinkId(1), LinkId(2), LinkId(3)]);
    let mut strict = Node::new(
        NodeConfig {
            echo_suppression: false,
            ..config()
        },
        w.carol.clone(),
        [0; 32],
    )
    .unwrap();
    strict.add_link(LinkId(1));
    strict.add_link(LinkId(2));
    assert_eq!(strict.relay_targets(Some(LinkId(1))), vec![LinkId(1), LinkId(2)]);
}

#[test]
fn originate_suppresses_own_echo() {
    let w = world();
    let mut alice = node(&w.alice);
    alice.add_link(LinkId(9));
    let (msg, targets) = alice.send("bob", 1, b"hi", Timestamp::from_micros(5)).unwrap();
    assert_eq!(targets, vec![LinkId(9)]);
    assert_eq!(
        alice.on_receive(&msg.serialize(), Timestamp::from_micros(6)).decision,
        RelayDecision::Drop(DropReason::Duplicate)
    );
}

#[test]
fn dummies_are_valid_but_unreadable() {
    let w = world();
    let mut n = Node::new(
        NodeConfig {
            dummy_rate: 1.0,
            ..config()
        },
        w.carol.clone(),
        [1; 32],
    )
    .unwrap();
    let d1 = n.make_dummy(Timestamp::from_micros(1)).unwrap();
    let d2 = n.make_dummy(Timestamp::from_micros(1)).unwrap();
    assert_ne!(d1.hash, d2.hash);
    for book in [&w.alice, &w.bob, &w.carol] {
        let r = node(book).on_receive(&d1.serialize(), Timestamp::from_micros(2));
        assert_eq!(r, Reception::relayed(DecodeOutcome::NotForMe));
    }
    assert!(matches!(
        node(&w.bob).make_dummy(Timestamp::default()),
        Err(RelayError::DummyTrafficDisabled)
    ));
}

#[test]
fn config_validation() {
    let bad = NodeConfig {
        max_message_age: Duration::from_secs(10),
        seen_retention: Duration::from_secs(5),
        ..NodeConfig::default()
    };
    assert!(bad.validate().is_err());
    assert!(NodeConfig {
        seen_capacity: 0,
        ..NodeConfig::default()
    }
    .validate()
    .is_err());
    let json = r#"{"pow_difficulty_bits": 12, "max_message_age_ms": 1000, "seen_retention_ms": 2000}"#;
    let parsed: NodeConfig = serde_json::from_str(json).unwrap();
    assert_eq!(parsed.pow.difficulty_bits(), 12);
    assert_eq!(parsed.max_message_age, Duration::from_secs(1));
    assert_eq!(parsed.seen_capacity, 1 << 20);
}

#[test]
fn relay_delay_is_bounded() {
    let w = world();
    let mut n = Node::new(
        NodeConfig {
            relay_delay_max: Duration::from_millis(500),
            ..config()
        },
        w.carol.clone(),
        [2; 32],
    )
    .unwrap();
    for _ in 0..100 {
        assert!(n.sample_relay_delay() <= Duration::from_millis(500));
    }
    assert_eq!(node(&w.carol).sample_relay_delay(), Duration::ZERO);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn on_receive_is_total(bytes in prop::collection::vec(any::<u8>(), 0..700)) {
        let w = world();
        let r = node(&w.bob).on_receive(&bytes, Timestamp::from_micros(0));
        prop_assert!(r.outcome.is_none() || r.decision == RelayDecision::Relay);
    }

    #[test]
    fn valid_version_random_bodies_never_deliver(body in prop::collection::vec(any::<u8>(), 579)) {
        let w = world();
        let mut wire = vec![VERSION];
        wire.extend_from_slice(&body);
        let r = node(&w.bob).on_receive(&wire, Timestamp::from_micros(0));
        prop_assert_eq!(r.decision, RelayDecision::Drop(DropReason::BadHash));
    }

    #[test]
    fn end_to_end_round_trip(
        body in prop::collection::vec(any::<u8>(), 0..=216),
        addr in any::<u32>(),
        at in 0u64..1 << 50,
    ) {
        let w = world();
        let mut rng = ChaCha20Rng::seed_from_u64(at);
        let msg = create_message(&w.alice, "bob", addr, &body, Timestamp::from_micros(at), config().pow, &mut rng).unwrap();
        let r = node(&w.bob).on_receive(&msg.serialize(), Timestamp::from_micros(at));
        let d = delivered(&r);
        prop_assert_eq!(&d.message, &body);
        prop_assert_eq!(d.internal_address, addr);
        prop_assert_eq!(d.created_at, Timestamp::from_micros(at));
        prop_assert_eq!(d.sender_alias.as_str(), "alice");
    }
}
