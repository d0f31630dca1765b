//! Seeded discrete-event simulation of a network of relay nodes.
//!
//! A run is a pure function of `(topology, events, seed, config)`: every
//! random draw comes from one ChaCha stream, ties in the event queue break
//! on insertion order, and all reported collections are ordered maps.
//!
//! Scenario files are JSON:
//!
//! ```json
//! {
//!   "seed": 7,
//!   "config": { "suite": "mock_fixed_size", "node": { "pow_difficulty_bits": 8 } },
//!   "topology": {
//!     "nodes": [ { "id": "a" }, { "id": "m", "role": "dropper" }, { "id": "b" } ],
//!     "edges": [ { "a": "a", "b": "m", "latency": { "fixed_ms": 5 } }, { "a": "m", "b": "b" } ]
//!   },
//!   "events": [ { "at_ms": 100, "type": "send", "from": "a", "to": "b", "message": "hi" } ],
//!   "assertions": [ { "type": "not_delivered", "message": 0 } ]
//! }
//! ```

mod attacks;
mod engine;
pub mod generate;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::CipherSuiteId;
use crate::relay::{NodeConfig, RelayError};

pub use attacks::{
    assert_observer_blindness, run_choke_point, run_replay_attack, ChokePointReport, ObserverReport, ReplayReport,
    WindowSummary,
};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("unknown node {0:?}")]
    UnknownNode(String),
    #[error("duplicate node id {0:?}")]
    DuplicateNode(String),
    #[error("node id {0:?} is not a valid alias (1-16 bytes, no NUL)")]
    InvalidNodeId(String),
    #[error("invalid edge {0}-{1}: {2}")]
    InvalidEdge(String, String, &'static str),
    #[error("no edge between {0:?} and {1:?}")]
    UnknownEdge(String, String),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("node setup failed: {0}")]
    Node(#[from] RelayError),
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeRole {
    #[default]
    Honest,
    /// Processes frames but never transmits anything.
    Dropper,
    /// Relays honestly and re-broadcasts every new frame after each delay.
    Replayer { delays_ms: Vec<u64> },
    /// Relays honestly and records every frame it receives.
    Observer,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    pub id: String,
    #[serde(default)]
    pub role: NodeRole,
    /// Replaces the global node config for this node.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<NodeConfig>,
    /// Restricts the contact book to these ids; everyone else is anonymous.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub knows: Option<Vec<String>>,
    #[serde(default = "yes")]
    pub initially_active: bool,
}

fn yes() -> bool {
    true
}

impl NodeSpec {
    pub fn new(id: impl Into<String>) -> Self {
        NodeSpec {
            id: id.into(),
            role: NodeRole::Honest,
            config: None,
            knows: None,
            initially_active: true,
        }
    }

    pub fn with_role(mut self, role: NodeRole) -> Self {
        self.role = role;
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Latency {
    FixedMs(u64),
    /// Inclusive range, sampled per transmission.
    UniformMs(u64, u64),
}

impl Default for Latency {
    fn default() -> Self {
        Latency::FixedMs(10)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeSpec {
    pub a: String,
    pub b: String,
    #[serde(default)]
    pub latency: Latency,
}

impl EdgeSpec {
    pub fn new(a: impl Into<String>, b: impl Into<String>) -> Self {
        EdgeSpec {
            a: a.into(),
            b: b.into(),
            latency: Latency::default(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Topology {
    pub nodes: Vec<NodeSpec>,
    pub edges: Vec<EdgeSpec>,
}

impl Topology {
    pub fn node(&self, id: &str) -> Option<&NodeSpec> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn node_mut(&mut self, id: &str) -> Option<&mut NodeSpec> {
        self.nodes.iter_mut().find(|n| n.id == id)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum EventKind {
    Send {
        from: String,
        to: String,
        message: String,
        #[serde(default)]
        internal_address: u32,
    },
    LinkDown {
        a: String,
        b: String,
    },
    LinkUp {
        a: String,
        b: String,
    },
    NodeJoin {
        node: String,
    },
    NodeLeave {
        node: String,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioEvent {
    pub at_ms: u64,
    #[serde(flatten)]
    pub kind: EventKind,
}

impl ScenarioEvent {
    pub fn send(at_ms: u64, from: &str, to: &str, message: &str) -> Self {
        ScenarioEvent {
            at_ms,
            kind: EventKind::Send {
                from: from.into(),
                to: to.into(),
                message: message.into(),
                internal_address: 0,
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub suite: CipherSuiteId,
    pub node: NodeConfig,
    /// Wall-clock time that simulated time zero maps to.
    pub epoch_ms: u64,
    /// Dummy traffic stops after this time; defaults to the last scenario event.
    pub dummy_horizon_ms: Option<u64>,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            suite: CipherSuiteId::MockFixedSize,
            node: NodeConfig::default(),
            epoch_ms: 1_700_000_000_000,
            dummy_horizon_ms: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub config: SimConfig,
    pub topology: Topology,
    #[serde(default)]
    pub events: Vec<ScenarioEvent>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub assertions: Vec<Assertion>,
}

impl Scenario {
    pub fn run(&self, seed: u64) -> Result<SimMetrics, ScenarioError> {
        run_simulation(&self.topology, &self.events, seed, &self.config)
    }

    /// Evaluates the embedded assertions; returns one line per failure.
    pub fn check(&self, metrics: &SimMetrics) -> Vec<String> {
        self.assertions
            .iter()
            .filter_map(|a| a.check(metrics, self).err())
            .collect()
    }
}

/// Checks embedded in a scenario file. `message` indexes the send events in
/// file order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Assertion {
    Delivered {
        message: usize,
    },
    NotDelivered {
        message: usize,
    },
    MaxTransmissions {
        message: usize,
        limit: u64,
    },
    /// Every node in the topology relayed the message exactly once.
    RelayedOnceEach {
        message: usize,
    },
    ObserverBlindness,
}

impl Assertion {
    fn check(&self, metrics: &SimMetrics, scenario: &Scenario) -> Result<(), String> {
        let msg = |i: usize| metrics.messages.get(i).ok_or_else(|| format!("no message {i}"));
        match *self {
            Assertion::Delivered { message } if !msg(message)?.delivered => {
                Err(format!("message {message} was not delivered"))
            }
            Assertion::NotDelivered { message } if msg(message)?.delivered => {
                Err(format!("message {message} was delivered"))
            }
            Assertion::MaxTransmissions { message, limit } => {
                let t = msg(message)?.transmissions;
                match t > limit {
                    true => Err(format!("message {message} took {t} transmissions, limit {limit}")),
                    false => Ok(()),
                }
            }
            Assertion::RelayedOnceEach { message } => {
                let m = msg(message)?;
                let bad: Vec<&String> = m.relay_counts.iter().filter(|(_, &c)| c != 1).map(|(n, _)| n).collect();
                match bad.is_empty() && !m.relay_counts.is_empty() {
                    true => Ok(()),
                    false => Err(format!("message {message} not relayed exactly once by {bad:?}")),
                }
            }
            Assertion::ObserverBlindness => {
                let r = assert_observer_blindness(metrics, scenario);
                match r.passed {
                    true => Ok(()),
                    false => Err(format!("observer blindness: {}", r.failures.join("; "))),
                }
            }
            _ => Ok(()),
        }
    }
}

/// Runs the scenario to event-queue exhaustion.
pub fn run_simulation(
    topology: &Topology,
    events: &[ScenarioEvent],
    seed: u64,
    config: &SimConfig,
) -> Result<SimMetrics, ScenarioError> {
    engine::Engine::new(topology, events, seed, config)?.run()
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutcomeCounts {
    pub not_for_me: u64,
    pub delivered: u64,
    pub bad_signature: u64,
    pub too_old: u64,
    pub from_future: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MessageReport {
    pub index: usize,
    pub from: String,
    pub to: String,
    pub sent_at_us: u64,
    /// False when the sender was offline at send time.
    pub sent: bool,
    pub hash: String,
    pub delivered: bool,
    pub delivered_at_us: Option<u64>,
    pub latency_us: Option<u64>,
    pub transmissions: u64,
    /// How many times each node flooded this message (origination included).
    pub relay_counts: BTreeMap<String, u64>,
    /// Decode outcomes at nodes other than the recipient.
    pub bystander_outcomes: OutcomeCounts,
    pub recipient_outcomes: OutcomeCounts,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObservedFrame {
    pub time_us: u64,
    pub from: String,
    pub frame: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayReceipt {
    pub time_us: u64,
    pub node: String,
    /// `relay` or `drop:<reason>`.
    pub decision: String,
    /// `not_for_me`, `delivered` or `rejected:<reason>`; absent for drops.
    pub outcome: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimMetrics {
    pub seed: u64,
    pub end_time_us: u64,
    pub messages: Vec<MessageReport>,
    pub transmissions: u64,
    pub dummy_transmissions: u64,
    pub replay_transmissions: u64,
    pub dummies_created: u64,
    pub lost_in_flight: u64,
    pub duplicate_drops: u64,
    pub drops: BTreeMap<String, u64>,
    pub relay_count: BTreeMap<String, u64>,
    pub outcomes: BTreeMap<String, OutcomeCounts>,
    pub observer_log: BTreeMap<String, Vec<ObservedFrame>>,
    pub dummy_hashes: Vec<String>,
    pub replay_receipts: Vec<ReplayReceipt>,
}

impl SimMetrics {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metrics serialize")
    }

    /// One row per scenario message.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "index",
            "from",
            "to",
            "sent_at_us",
            "sent",
            "delivered",
            "latency_us",
            "transmissions",
            "hash",
        ])
        .expect("in-memory csv");
        for m in &self.messages {
            w.write_record([
                m.index.to_string(),
                m.from.clone(),
                m.to.clone(),
                m.sent_at_us.to_string(),
                m.sent.to_string(),
                m.delivered.to_string(),
                m.latency_us.map(|l| l.to_string()).unwrap_or_default(),
                m.transmissions.to_string(),
                m.hash.clone(),
            ])
            .expect("in-memory csv");
        }
        String::from_utf8(w.into_inner().expect("in-memory csv")).expect("csv is utf-8")
    }
}
