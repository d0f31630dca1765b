//! Adversarial scenarios built on top of [`run_simulation`].

use std::collections::{BTreeMap, BTreeSet, HashSet, VecDeque};

use serde::{Deserialize, Serialize};

use super::{
    run_simulation, EventKind, NodeRole, ReplayReceipt, Scenario, ScenarioError, ScenarioEvent, SimConfig, SimMetrics,
    Topology,
};
use crate::codec::{EncodedMessage, FRAME_LEN};
use crate::crypto::hash_message;

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObserverReport {
    pub observers: usize,
    pub frames_checked: usize,
    pub distinct_frames: usize,
    pub distinct_pairs: usize,
    /// Frame sizes seen per `sender->receiver` pair, plus `dummy`.
    pub sizes_by_origin: BTreeMap<String, BTreeSet<usize>>,
    pub failures: Vec<String>,
    pub passed: bool,
}

/// Checks that every frame recorded by an observer is a well-formed 580-byte
/// frame and that no 4-byte window of any sent message or sender alias shows
/// up in the clear.
pub fn assert_observer_blindness(metrics: &SimMetrics, scenario: &Scenario) -> ObserverReport {
    let mut report = ObserverReport {
        observers: metrics.observer_log.len(),
        ..ObserverReport::default()
    };
    let sends: Vec<(&str, &str, &[u8])> = scenario
        .events
        .iter()
        .filter_map(|e| match &e.kind {
            EventKind::Send { from, to, message, .. } => Some((from.as_str(), to.as_str(), message.as_bytes())),
            _ => None,
        })
        .collect();
    let pairs: BTreeSet<(&str, &str)> = sends.iter().map(|&(f, t, _)| (f, t)).collect();
    report.distinct_pairs = pairs.len();
    if report.observers == 0 {
        report.failures.push("scenario has no observer".into());
    }
    if pairs.len() < 2 {
        report
            .failures
            .push("fewer than two distinct sender/receiver pairs".into());
    }

    let origin_by_hash: BTreeMap<&str, String> = metrics
        .messages
        .iter()
        .filter(|m| m.sent)
        .map(|m| (m.hash.as_str(), format!("{}->{}", m.from, m.to)))
        .chain(metrics.dummy_hashes.iter().map(|h| (h.as_str(), "dummy".to_string())))
        .collect();

    let mut distinct: HashSet<Vec<u8>> = HashSet::new();
    for (observer, log) in &metrics.observer_log {
        for entry in log {
            report.frames_checked += 1;
            let Ok(frame) = hex::decode(&entry.frame) else {
                report
                    .failures
                    .push(format!("{observer}: frame at {} is not hex", entry.time_us));
                continue;
            };
            if frame.len() != FRAME_LEN {
                report.failures.push(format!(
                    "{observer}: frame at {} is {} bytes",
                    entry.time_us,
                    frame.len()
                ));
            }
            match EncodedMessage::parse(&frame) {
                Ok(m) if hash_message(&m.blob, &m.signature) == m.hash => {
                    let origin = origin_by_hash
                        .get(hex::encode(m.hash).as_str())
                        .cloned()
                        .unwrap_or_else(|| "unknown".into());
                    report.sizes_by_origin.entry(origin).or_default().insert(frame.len());
                }
                Ok(_) => report
                    .failures
                    .push(format!("{observer}: frame at {} has a bad hash", entry.time_us)),
                Err(e) => report
                    .failures
                    .push(format!("{observer}: frame at {}: {e}", entry.time_us)),
            }
            distinct.insert(frame);
        }
    }
    report.distinct_frames = distinct.len();

    let windows: HashSet<&[u8]> = distinct.iter().flat_map(|f| f.windows(4)).collect();
    for (from, to, message) in &sends {
        for (label, bytes) in [("message", *message), ("sender alias", from.as_bytes())] {
            if let Some(w) = bytes.windows(4).find(|w| windows.contains(w)) {
                report.failures.push(format!(
                    "{label} bytes {} of {from}->{to} visible in a frame",
                    hex::encode(w)
                ));
            }
        }
    }

    for (origin, sizes) in &report.sizes_by_origin {
        if sizes.iter().any(|&s| s != FRAME_LEN) {
            report.failures.push(format!("{origin} frames have sizes {sizes:?}"));
        }
    }
    report.passed = report.failures.is_empty();
    report
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSummary {
    pub receipts: usize,
    pub duplicate_drops: usize,
    pub relays: usize,
    pub deliveries: usize,
    pub too_old: usize,
}

impl WindowSummary {
    fn add(&mut self, r: &ReplayReceipt) {
        self.receipts += 1;
        if r.decision == "drop:duplicate" {
            self.duplicate_drops += 1;
        }
        if r.decision == "relay" {
            self.relays += 1;
        }
        match r.outcome.as_deref() {
            Some("delivered") => self.deliveries += 1,
            Some("rejected:too_old") => self.too_old += 1,
            _ => {}
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub replayer: Option<String>,
    pub sender: String,
    pub receiver: String,
    pub original_delivered: bool,
    pub in_window_delay_ms: u64,
    pub post_window_delay_ms: u64,
    pub in_window: WindowSummary,
    pub post_window: WindowSummary,
    pub receiver_post_window_outcomes: Vec<String>,
    pub passed: bool,
}

const REPLAY_SEND_AT_MS: u64 = 1_000;

/// Floods one message past a replayer that re-broadcasts it once inside the
/// dedup window (after 1 s) and once after every node has forgotten the hash
/// and the message has aged out.
///
/// The sender and receiver are the first and last non-replayer, non-dropper
/// nodes in topology order.
pub fn run_replay_attack(topology: &Topology, config: &SimConfig, seed: u64) -> Result<ReplayReport, ScenarioError> {
    let Some(replayer) = topology
        .nodes
        .iter()
        .find(|n| matches!(n.role, NodeRole::Replayer { .. }))
    else {
        return Ok(ReplayReport {
            passed: true,
            ..ReplayReport::default()
        });
    };
    let honest: Vec<&str> = topology
        .nodes
        .iter()
        .filter(|n| matches!(n.role, NodeRole::Honest | NodeRole::Observer))
        .map(|n| n.id.as_str())
        .collect();
    let (Some(&sender), Some(&receiver)) = (honest.first(), honest.last()) else {
        return Err(ScenarioError::Invalid("replay attack needs two honest nodes".into()));
    };
    if sender == receiver {
        return Err(ScenarioError::Invalid("replay attack needs two honest nodes".into()));
    }

    let longest_memory = topology
        .nodes
        .iter()
        .map(|n| n.config.as_ref().unwrap_or(&config.node))
        .map(|c| c.seen_retention.max(c.max_message_age))
        .max()
        .unwrap_or_default();
    let in_window_ms = 1_000;
    let post_window_ms = longest_memory.as_millis() as u64 + 10_000;

    let mut topology = topology.clone();
    let replayer_id = replayer.id.clone();
    topology.node_mut(&replayer_id).unwrap().role = NodeRole::Replayer {
        delays_ms: vec![in_window_ms, post_window_ms],
    };
    let events = vec![ScenarioEvent::send(REPLAY_SEND_AT_MS, sender, receiver, "replay me")];
    let metrics = run_simulation(&topology, &events, seed, config)?;

    let boundary_us = (REPLAY_SEND_AT_MS + post_window_ms) * 1_000;
    let mut report = ReplayReport {
        replayer: Some(replayer_id),
        sender: sender.into(),
        receiver: receiver.into(),
        original_delivered: metrics.messages[0].delivered,
        in_window_delay_ms: in_window_ms,
        post_window_delay_ms: post_window_ms,
        ..ReplayReport::default()
    };
    for r in &metrics.replay_receipts {
        if r.time_us < boundary_us {
            report.in_window.add(r);
        } else {
            report.post_window.add(r);
            if r.node == receiver {
                if let Some(o) = &r.outcome {
                    report.receiver_post_window_outcomes.push(o.clone());
                }
            }
        }
    }
    report.passed = report.original_delivered
        && report.in_window.receipts > 0
        && report.in_window.receipts == report.in_window.duplicate_drops
        && report.in_window.deliveries == 0
        && report.post_window.deliveries == 0
        && report
            .receiver_post_window_outcomes
            .iter()
            .any(|o| o == "rejected:too_old");
    Ok(report)
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChokePointReport {
    pub dropper: String,
    pub sender: String,
    pub receiver: String,
    /// Whether removing the dropper disconnects sender from receiver.
    pub dropper_is_choke_point: bool,
    pub delivered_with_dropper: bool,
    pub delivered_control: bool,
    pub passed: bool,
}

fn reachable(topology: &Topology, from: &str, to: &str, excluded: &str) -> bool {
    let mut seen = BTreeSet::from([from]);
    let mut queue = VecDeque::from([from]);
    while let Some(n) = queue.pop_front() {
        if n == to {
            return true;
        }
        for e in &topology.edges {
            let next = if e.a == n {
                e.b.as_str()
            } else if e.b == n {
                e.a.as_str()
            } else {
                continue;
            };
            if next != excluded && seen.insert(next) {
                queue.push_back(next);
            }
        }
    }
    false
}

/// Sends one message with `dropper` misbehaving, then again with it honest.
/// Passes when delivery with the dropper matches whether an alternate path
/// exists, and the control run delivers.
pub fn run_choke_point(
    topology: &Topology,
    dropper: &str,
    sender: &str,
    receiver: &str,
    config: &SimConfig,
    seed: u64,
) -> Result<ChokePointReport, ScenarioError> {
    for id in [dropper, sender, receiver] {
        if topology.node(id).is_none() {
            return Err(ScenarioError::UnknownNode(id.into()));
        }
    }
    let events = vec![ScenarioEvent::send(
        REPLAY_SEND_AT_MS,
        sender,
        receiver,
        "through the choke",
    )];
    let run = |role: NodeRole| -> Result<bool, ScenarioError> {
        let mut t = topology.clone();
        t.node_mut(dropper).unwrap().role = role;
        Ok(run_simulation(&t, &events, seed, config)?.messages[0].delivered)
    };
    let delivered_with_dropper = run(NodeRole::Dropper)?;
    let delivered_control = run(NodeRole::Honest)?;
    let dropper_is_choke_point = !reachable(topology, sender, receiver, dropper);
    Ok(ChokePointReport {
        dropper: dropper.into(),
        sender: sender.into(),
        receiver: receiver.into(),
        dropper_is_choke_point,
        delivered_with_dropper,
        delivered_control,
        passed: delivered_control && delivered_with_dropper != dropper_is_choke_point,
    })
}
