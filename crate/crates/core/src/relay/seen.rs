use std::collections::{HashMap, VecDeque};
use std::time::Duration;

use crate::codec::Timestamp;
use crate::crypto::MessageHash;

/// Bounded FIFO record of relayed-message hashes.
///
/// Entries leave in insertion order, either when capacity is reached or when
/// they are older than the retention window.
#[derive(Debug, Clone)]
pub struct SeenHashStore {
    first_seen: HashMap<MessageHash, Timestamp>,
    order: VecDeque<MessageHash>,
    capacity: usize,
    retention: Duration,
}

impl SeenHashStore {
    pub fn new(capacity: usize, retention: Duration) -> Self {
        assert!(capacity > 0, "seen store capacity must be positive");
        SeenHashStore {
            first_seen: HashMap::new(),
            order: VecDeque::new(),
            capacity,
            retention,
        }
    }

    pub fn contains(&self, hash: &MessageHash) -> bool {
        self.first_seen.contains_key(hash)
    }

    /// Records `hash`; a hash already present keeps its original timestamp.
    pub fn insert(&mut self, hash: MessageHash, now: Timestamp) {
        if self.first_seen.contains_key(&hash) {
            return;
        }
        while self.order.len() >= self.capacity {
            self.pop_oldest();
        }
        self.first_seen.insert(hash, now);
        self.order.push_back(hash);
    }

    /// Drops every entry older than the retention window.
    pub fn evict(&mut self, now: Timestamp) -> usize {
        let retention = self.retention.as_micros();
        let mut evicted = 0;
        while let Some(oldest) = self.order.front() {
            let seen_at = self.first_seen[oldest];
            if now.as_micros().saturating_sub(seen_at.as_micros()) <= retention {
                break;
            }
            self.pop_oldest();
            evicted += 1;
        }
        evicted
    }

    fn pop_oldest(&mut self) {
        if let Some(h) = self.order.pop_front() {
            self.first_seen.remove(&h);
        }
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }
}
