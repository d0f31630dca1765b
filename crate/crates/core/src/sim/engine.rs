use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap, HashSet};
use std::rc::Rc;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use super::{
    EventKind, Latency, MessageReport, NodeRole, ObservedFrame, OutcomeCounts, ReplayReceipt, ScenarioError,
    ScenarioEvent, SimConfig, SimMetrics, Topology,
};
use crate::codec::{Alias, Timestamp, FRAME_LEN, HASH_OFFSET, NONCE_OFFSET};
use crate::crypto::{KeyPair, MessageHash};
use crate::identity::{Contact, ContactBook};
use crate::relay::{DecodeOutcome, LinkId, Node, RelayDecision};

type Frame = Rc<[u8; FRAME_LEN]>;

const MS: u64 = 1_000;

enum Action {
    Scenario(usize),
    Arrive {
        to: usize,
        link: usize,
        frame: Frame,
        replay: bool,
    },
    Forward {
        node: usize,
        arrival: Option<usize>,
        frame: Frame,
        replay: bool,
    },
    Replay {
        node: usize,
        frame: Frame,
    },
    DummyTick {
        node: usize,
    },
}

struct Queued {
    at: u64,
    seq: u64,
    action: Action,
}

impl PartialEq for Queued {
    fn eq(&self, other: &Self) -> bool {
        (self.at, self.seq) == (other.at, other.seq)
    }
}

impl Eq for Queued {}

impl PartialOrd for Queued {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

// Reversed so the max-heap pops the earliest (time, seq).
impl Ord for Queued {
    fn cmp(&self, other: &Self) -> Ordering {
        (other.at, other.seq).cmp(&(self.at, self.seq))
    }
}

struct SimNode {
    id: String,
    role: NodeRole,
    node: Node,
    active: bool,
    links: Vec<usize>,
}

struct SimLink {
    ends: [usize; 2],
    latency: Latency,
    up: bool,
}

impl SimLink {
    fn other(&self, n: usize) -> usize {
        if self.ends[0] == n {
            self.ends[1]
        } else {
            self.ends[0]
        }
    }
}

#[derive(Clone, Copy)]
enum FrameKind {
    Message(usize),
    Dummy,
}

pub(super) struct Engine<'a> {
    events: &'a [ScenarioEvent],
    config: &'a SimConfig,
    nodes: Vec<SimNode>,
    links: Vec<SimLink>,
    index: HashMap<String, usize>,
    queue: BinaryHeap<Queued>,
    seq: u64,
    now: u64,
    rng: ChaCha20Rng,
    kinds: HashMap<MessageHash, FrameKind>,
    replayed: HashSet<(usize, MessageHash)>,
    recipients: Vec<usize>,
    dummy_horizon: u64,
    metrics: SimMetrics,
}

fn hash_of(frame: &[u8; FRAME_LEN]) -> MessageHash {
    frame[HASH_OFFSET..NONCE_OFFSET].try_into().unwrap()
}

impl<'a> Engine<'a> {
    pub(super) fn new(
        topology: &'a Topology,
        events: &'a [ScenarioEvent],
        seed: u64,
        config: &'a SimConfig,
    ) -> Result<Self, ScenarioError> {
        let mut index = HashMap::new();
        for (i, spec) in topology.nodes.iter().enumerate() {
            Alias::new(spec.id.as_str()).map_err(|_| ScenarioError::InvalidNodeId(spec.id.clone()))?;
            if index.insert(spec.id.clone(), i).is_some() {
                return Err(ScenarioError::DuplicateNode(spec.id.clone()));
            }
        }
        let lookup = |id: &str| {
            index
                .get(id)
                .copied()
                .ok_or_else(|| ScenarioError::UnknownNode(id.to_string()))
        };

        let mut links = Vec::with_capacity(topology.edges.len());
        let mut pairs = HashSet::new();
        for edge in &topology.edges {
            let (a, b) = (lookup(&edge.a)?, lookup(&edge.b)?);
            if a == b {
                return Err(ScenarioError::InvalidEdge(edge.a.clone(), edge.b.clone(), "self-loop"));
            }
            if !pairs.insert((a.min(b), a.max(b))) {
                return Err(ScenarioError::InvalidEdge(
                    edge.a.clone(),
                    edge.b.clone(),
                    "parallel edge",
                ));
            }
            if let Latency::UniformMs(lo, hi) = edge.latency {
                if lo > hi {
                    return Err(ScenarioError::InvalidEdge(
                        edge.a.clone(),
                        edge.b.clone(),
                        "empty latency range",
                    ));
                }
            }
            links.push(SimLink {
                ends: [a, b],
                latency: edge.latency,
                up: true,
            });
        }

        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut keys = Vec::with_capacity(topology.nodes.len());
        let mut node_seeds = Vec::with_capacity(topology.nodes.len());
        for _ in &topology.nodes {
            let mut key_seed = [0u8; 32];
            let mut node_seed = [0u8; 32];
            rng.fill_bytes(&mut key_seed);
            rng.fill_bytes(&mut node_seed);
            keys.push(KeyPair::generate(config.suite, Some(key_seed)).map_err(crate::relay::RelayError::from)?);
            node_seeds.push(node_seed);
        }

        let mut nodes = Vec::with_capacity(topology.nodes.len());
        for (i, spec) in topology.nodes.iter().enumerate() {
            let mut book = ContactBook::new(keys[i].clone());
            let known: Vec<usize> = match &spec.knows {
                Some(ids) => ids.iter().map(|id| lookup(id)).collect::<Result<_, _>>()?,
                None => (0..topology.nodes.len()).collect(),
            };
            for j in known.into_iter().filter(|&j| j != i) {
                let other = &topology.nodes[j].id;
                let contact = Contact::new(other, keys[j].public.clone(), &spec.id)
                    .map_err(|e| ScenarioError::Invalid(e.to_string()))?;
                book.add_contact(contact, true).expect("replace allowed");
            }
            let node_config = spec.config.clone().unwrap_or_else(|| config.node.clone());
            nodes.push(SimNode {
                id: spec.id.clone(),
                role: spec.role.clone(),
                node: Node::new(node_config, book, node_seeds[i])?,
                active: spec.initially_active,
                links: Vec::new(),
            });
        }
        for (l, link) in links.iter().enumerate() {
            for &end in &link.ends {
                nodes[end].links.push(l);
            }
        }

        for ev in events {
            match &ev.kind {
                EventKind::Send { from, to, message, .. } => {
                    let (f, _) = (lookup(from)?, lookup(to)?);
                    if nodes[f].node.book().lookup_sender(to).is_none() {
                        return Err(ScenarioError::Invalid(format!("{from} has no contact {to}")));
                    }
                    if message.len() > crate::codec::MAX_MESSAGE_LEN {
                        return Err(ScenarioError::Invalid(format!("message from {from} exceeds 216 bytes")));
                    }
                }
                EventKind::LinkDown { a, b } | EventKind::LinkUp { a, b } => {
                    let (x, y) = (lookup(a)?, lookup(b)?);
                    if !pairs.contains(&(x.min(y), x.max(y))) {
                        return Err(ScenarioError::UnknownEdge(a.clone(), b.clone()));
                    }
                }
                EventKind::NodeJoin { node } | EventKind::NodeLeave { node } => {
                    lookup(node)?;
                }
            }
        }

        let last_event = events.iter().map(|e| e.at_ms).max().unwrap_or(0);
        let metrics = SimMetrics {
            seed,
            relay_count: nodes.iter().map(|n| (n.id.clone(), 0)).collect(),
            outcomes: nodes.iter().map(|n| (n.id.clone(), OutcomeCounts::default())).collect(),
            observer_log: nodes
                .iter()
                .filter(|n| n.role == NodeRole::Observer)
                .map(|n| (n.id.clone(), Vec::new()))
                .collect(),
            ..SimMetrics::default()
        };
        let mut engine = Engine {
            events,
            config,
            nodes,
            links,
            index,
            queue: BinaryHeap::new(),
            seq: 0,
            now: 0,
            rng,
            kinds: HashMap::new(),
            replayed: HashSet::new(),
            recipients: Vec::new(),
            dummy_horizon: config.dummy_horizon_ms.unwrap_or(last_event) * MS,
            metrics,
        };
        for i in 0..engine.nodes.len() {
            if engine.nodes[i].active {
                engine.attach(i);
            }
        }
        Ok(engine)
    }

    fn schedule(&mut self, at: u64, action: Action) {
        self.seq += 1;
        self.queue.push(Queued {
            at,
            seq: self.seq,
            action,
        });
    }

    fn timestamp(&self) -> Timestamp {
        Timestamp::from_micros(self.config.epoch_ms * MS + self.now)
    }

    pub(super) fn run(mut self) -> Result<SimMetrics, ScenarioError> {
        let mut order: Vec<usize> = (0..self.events.len()).collect();
        order.sort_by_key(|&i| self.events[i].at_ms);
        for i in order {
            self.schedule(self.events[i].at_ms * MS, Action::Scenario(i));
        }
        for i in 0..self.nodes.len() {
            if let Some(interval) = self.nodes[i].node.dummy_interval() {
                if self.nodes[i].role != NodeRole::Dropper {
                    let first = self.rng.gen_range(0..=interval.as_micros() as u64);
                    self.schedule(first, Action::DummyTick { node: i });
                }
            }
        }

        while let Some(Queued { at, action, .. }) = self.queue.pop() {
            debug_assert!(at >= self.now, "simulated time moved backwards");
            self.now = at;
            match action {
                Action::Scenario(i) => self.scenario_event(i)?,
                Action::Arrive {
                    to,
                    link,
                    frame,
                    replay,
                } => self.arrive(to, link, frame, replay),
                Action::Forward {
                    node,
                    arrival,
                    frame,
                    replay,
                } => self.forward(node, arrival, &frame, replay),
                Action::Replay { node, frame } => {
                    if self.nodes[node].active {
                        self.flood(node, None, &frame, true);
                    }
                }
                Action::DummyTick { node } => self.dummy_tick(node)?,
            }
        }
        self.metrics.end_time_us = self.now;
        Ok(self.metrics)
    }

    fn link_usable(&self, l: usize) -> bool {
        let link = &self.links[l];
        link.up && link.ends.iter().all(|&n| self.nodes[n].active)
    }

    /// Re-derives neighbor sets for `n` and its peers after a state change.
    fn attach(&mut self, n: usize) {
        for &l in &self.nodes[n].links.clone() {
            let usable = self.link_usable(l);
            for end in self.links[l].ends {
                if usable {
                    self.nodes[end].node.add_link(LinkId(l as u64));
                } else {
                    self.nodes[end].node.remove_link(LinkId(l as u64));
                }
            }
        }
    }

    fn scenario_event(&mut self, i: usize) -> Result<(), ScenarioError> {
        match &self.events[i].kind {
            EventKind::Send {
                from,
                to,
                message,
                internal_address,
            } => {
                let f = self.index[from];
                let idx = self.metrics.messages.len();
                self.recipients.push(self.index[to]);
                let mut report = MessageReport {
                    index: idx,
                    from: from.clone(),
                    to: to.clone(),
                    sent_at_us: self.now,
                    sent: false,
                    hash: String::new(),
                    delivered: false,
                    delivered_at_us: None,
                    latency_us: None,
                    transmissions: 0,
                    relay_counts: self.nodes.iter().map(|n| (n.id.clone(), 0)).collect(),
                    bystander_outcomes: OutcomeCounts::default(),
                    recipient_outcomes: OutcomeCounts::default(),
                };
                if !self.nodes[f].active {
                    self.metrics.messages.push(report);
                    return Ok(());
                }
                let now = self.timestamp();
                let (msg, _) = self.nodes[f]
                    .node
                    .send(to, *internal_address, message.as_bytes(), now)?;
                report.sent = true;
                report.hash = hex::encode(msg.hash);
                *report.relay_counts.get_mut(from).unwrap() += 1;
                self.metrics.messages.push(report);
                self.kinds.insert(msg.hash, FrameKind::Message(idx));
                *self.metrics.relay_count.get_mut(from).unwrap() += 1;
                if self.nodes[f].role != NodeRole::Dropper {
                    self.flood(f, None, &Rc::new(msg.serialize()), false);
                }
            }
            EventKind::LinkDown { a, b } | EventKind::LinkUp { a, b } => {
                let up = matches!(self.events[i].kind, EventKind::LinkUp { .. });
                let (x, y) = (self.index[a], self.index[b]);
                let l = self.nodes[x]
                    .links
                    .iter()
                    .copied()
                    .find(|&l| self.links[l].other(x) == y)
                    .expect("validated edge");
                self.links[l].up = up;
                self.attach(x);
            }
            EventKind::NodeJoin { node } | EventKind::NodeLeave { node } => {
                let n = self.index[node];
                self.nodes[n].active = matches!(self.events[i].kind, EventKind::NodeJoin { .. });
                self.attach(n);
            }
        }
        Ok(())
    }

    fn sample_latency(&mut self, l: usize) -> u64 {
        match self.links[l].latency {
            Latency::FixedMs(ms) => ms * MS,
            Latency::UniformMs(lo, hi) => self.rng.gen_range(lo * MS..=hi * MS),
        }
    }

    /// Sends `frame` from `n` on every relay target.
    fn flood(&mut self, n: usize, arrival: Option<usize>, frame: &Frame, replay: bool) {
        let targets = self.nodes[n].node.relay_targets(arrival.map(|l| LinkId(l as u64)));
        let kind = self.kinds.get(&hash_of(frame)).copied();
        for LinkId(l) in targets {
            let l = l as usize;
            let to = self.links[l].other(n);
            let delay = self.sample_latency(l);
            self.metrics.transmissions += 1;
            if replay {
                self.metrics.replay_transmissions += 1;
            }
            match kind {
                Some(FrameKind::Message(idx)) => self.metrics.messages[idx].transmissions += 1,
                Some(FrameKind::Dummy) => self.metrics.dummy_transmissions += 1,
                None => {}
            }
            self.schedule(
                self.now + delay,
                Action::Arrive {
                    to,
                    link: l,
                    frame: frame.clone(),
                    replay,
                },
            );
        }
    }

    fn forward(&mut self, n: usize, arrival: Option<usize>, frame: &Frame, replay: bool) {
        if self.nodes[n].active {
            self.flood(n, arrival, frame, replay);
        }
    }

    fn arrive(&mut self, to: usize, link: usize, frame: Frame, replay: bool) {
        if !self.link_usable(link) {
            self.metrics.lost_in_flight += 1;
            return;
        }
        let now = self.timestamp();
        let from = self.links[link].other(to);
        if self.nodes[to].role == NodeRole::Observer {
            let entry = ObservedFrame {
                time_us: self.now,
                from: self.nodes[from].id.clone(),
                frame: hex::encode(&frame[..]),
            };
            self.metrics
                .observer_log
                .get_mut(&self.nodes[to].id)
                .unwrap()
                .push(entry);
        }
        let reception = self.nodes[to].node.on_receive(&frame[..], now);
        let hash = hash_of(&frame);
        let kind = self.kinds.get(&hash).copied();
        let id = self.nodes[to].id.clone();

        let decision = match reception.decision {
            RelayDecision::Relay => "relay".to_string(),
            RelayDecision::Drop(reason) => {
                let name = serde_json::to_value(reason).unwrap().as_str().unwrap().to_string();
                *self.metrics.drops.entry(name.clone()).or_default() += 1;
                if reason == crate::relay::DropReason::Duplicate {
                    self.metrics.duplicate_drops += 1;
                }
                format!("drop:{name}")
            }
        };

        if reception.decision == RelayDecision::Relay && self.nodes[to].role != NodeRole::Dropper {
            *self.metrics.relay_count.get_mut(&id).unwrap() += 1;
            if let Some(FrameKind::Message(idx)) = kind {
                *self.metrics.messages[idx].relay_counts.get_mut(&id).unwrap() += 1;
            }
            let delay = self.nodes[to].node.sample_relay_delay().as_micros() as u64;
            self.schedule(
                self.now + delay,
                Action::Forward {
                    node: to,
                    arrival: Some(link),
                    frame: frame.clone(),
                    replay,
                },
            );
            if let NodeRole::Replayer { delays_ms } = &self.nodes[to].role {
                if self.replayed.insert((to, hash)) {
                    for d in delays_ms.clone() {
                        self.schedule(
                            self.now + d * MS,
                            Action::Replay {
                                node: to,
                                frame: frame.clone(),
                            },
                        );
                    }
                }
            }
        }

        let outcome_name = reception.outcome.as_ref().map(|o| self.record_outcome(to, kind, o));
        if replay {
            self.metrics.replay_receipts.push(ReplayReceipt {
                time_us: self.now,
                node: id,
                decision,
                outcome: outcome_name,
            });
        }
    }

    fn record_outcome(&mut self, node: usize, kind: Option<FrameKind>, outcome: &DecodeOutcome) -> String {
        let id = &self.nodes[node].id;
        let (name, bump): (String, fn(&mut OutcomeCounts)) = match outcome {
            DecodeOutcome::NotForMe => ("not_for_me".into(), |c| c.not_for_me += 1),
            DecodeOutcome::Delivered(_) => ("delivered".into(), |c| c.delivered += 1),
            DecodeOutcome::Rejected(r) => {
                let bump: fn(&mut OutcomeCounts) = match r {
                    crate::relay::RejectReason::BadSignature => |c| c.bad_signature += 1,
                    crate::relay::RejectReason::TooOld => |c| c.too_old += 1,
                    crate::relay::RejectReason::FromFuture => |c| c.from_future += 1,
                };
                let name = serde_json::to_value(r).unwrap().as_str().unwrap().to_string();
                (format!("rejected:{name}"), bump)
            }
        };
        bump(self.metrics.outcomes.get_mut(id).unwrap());
        if let Some(FrameKind::Message(idx)) = kind {
            let is_recipient = self.recipients[idx] == node;
            let report = &mut self.metrics.messages[idx];
            if is_recipient {
                bump(&mut report.recipient_outcomes);
                if matches!(outcome, DecodeOutcome::Delivered(_)) && !report.delivered {
                    report.delivered = true;
                    report.delivered_at_us = Some(self.now);
                    report.latency_us = Some(self.now - report.sent_at_us);
                }
            } else {
                bump(&mut report.bystander_outcomes);
            }
        }
        name
    }

    fn dummy_tick(&mut self, n: usize) -> Result<(), ScenarioError> {
        if self.now > self.dummy_horizon {
            return Ok(());
        }
        if self.nodes[n].active {
            let now = self.timestamp();
            let dummy = self.nodes[n].node.make_dummy(now)?;
            self.kinds.insert(dummy.hash, FrameKind::Dummy);
            self.metrics.dummies_created += 1;
            self.metrics.dummy_hashes.push(hex::encode(dummy.hash));
            self.nodes[n].node.originate(&dummy, now);
            self.flood(n, None, &Rc::new(dummy.serialize()), false);
        }
        let interval = self.nodes[n]
            .node
            .dummy_interval()
            .expect("dummy traffic on")
            .as_micros() as u64;
        let next = self.now + self.rng.gen_range(interval / 2..=interval + interval / 2).max(1);
        if next <= self.dummy_horizon {
            self.schedule(next, Action::DummyTick { node: n });
        }
        Ok(())
    }
}
