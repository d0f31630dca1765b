//! TCP relay daemon: one reader task per connection feeding a shared
//! [`Node`], one writer task per connection draining a bounded queue.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use anyhow::{bail, Context};
use efpix_core::{
    Authenticity, ContactBook, DecodeOutcome, DecodedResult, LinkId, Node, NodeConfig, RelayDecision, Timestamp,
};
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::mpsc;

use crate::framing::{frame_read, frame_write, Frame};

pub const KEYSTORE_ENV: &str = "EFPIX_KEYSTORE";

#[derive(Clone, Debug, PartialEq)]
pub struct DaemonConfig {
    pub listen: Option<String>,
    pub peers: Vec<String>,
    pub keystore: PathBuf,
    pub node: NodeConfig,
    pub queue_capacity: usize,
    pub redial: Duration,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    listen: Option<String>,
    #[serde(default)]
    peers: Vec<String>,
    keystore: Option<PathBuf>,
    #[serde(default)]
    node: serde_json::Map<String, Value>,
    #[serde(default = "default_queue")]
    queue_capacity: usize,
    #[serde(default = "default_redial")]
    redial_ms: u64,
}

fn default_queue() -> usize {
    1024
}

fn default_redial() -> u64 {
    500
}

/// Node settings a daemon starts from before applying the config file.
pub fn daemon_node_defaults() -> NodeConfig {
    NodeConfig {
        relay_delay_max: Duration::from_millis(500),
        ..NodeConfig::default()
    }
}

impl DaemonConfig {
    /// `keystore_override` wins over the file's `keystore` entry.
    pub fn from_json(text: &str, keystore_override: Option<PathBuf>) -> anyhow::Result<Self> {
        let raw: RawConfig = serde_json::from_str(text).context("invalid daemon config")?;
        let mut node = match serde_json::to_value(daemon_node_defaults())? {
            Value::Object(m) => m,
            _ => unreachable!("node config serializes to an object"),
        };
        node.extend(raw.node);
        let node: NodeConfig = serde_json::from_value(Value::Object(node)).context("invalid node config")?;
        let Some(keystore) = keystore_override.or(raw.keystore) else {
            bail!("no keystore configured (set \"keystore\" or {KEYSTORE_ENV})");
        };
        let config = DaemonConfig {
            listen: raw.listen,
            peers: raw.peers,
            keystore,
            node,
            queue_capacity: raw.queue_capacity,
            redial: Duration::from_millis(raw.redial_ms),
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if self.listen.is_none() && self.peers.is_empty() {
            bail!("daemon needs a listen address or at least one peer");
        }
        if self.queue_capacity == 0 {
            bail!("queue_capacity must be positive");
        }
        self.node.validate()?;
        Ok(())
    }
}

/// One stdout line per delivered message.
#[derive(Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct DeliveredLine {
    pub message: String,
    /// `utf8` or `hex`.
    pub message_encoding: String,
    pub sender_alias: String,
    pub authenticity: Authenticity,
    pub internal_address: u32,
    pub created_at: Timestamp,
    pub received_at: Timestamp,
}

impl From<&DecodedResult> for DeliveredLine {
    fn from(d: &DecodedResult) -> Self {
        let (message, message_encoding) = match std::str::from_utf8(&d.message) {
            Ok(s) => (s.to_string(), "utf8"),
            Err(_) => (hex::encode(&d.message), "hex"),
        };
        DeliveredLine {
            message,
            message_encoding: message_encoding.into(),
            sender_alias: d.sender_alias.as_str().into(),
            authenticity: d.authenticity,
            internal_address: d.internal_address,
            created_at: d.created_at,
            received_at: d.received_at,
        }
    }
}

fn log(event: &str, fields: Value) {
    let mut line = json!({ "event": event });
    if let (Value::Object(l), Value::Object(f)) = (&mut line, fields) {
        l.extend(f);
    }
    eprintln!("{line}");
}

struct Shared {
    node: Mutex<Node>,
    links: Mutex<HashMap<LinkId, mpsc::Sender<Arc<Frame>>>>,
    next_link: AtomicU64,
    overflow: AtomicU64,
    queue_capacity: usize,
}

impl Shared {
    fn dispatch(&self, targets: &[LinkId], frame: &Arc<Frame>) {
        let links = self.links.lock().unwrap();
        for link in targets {
            let Some(tx) = links.get(link) else { continue };
            if let Err(mpsc::error::TrySendError::Full(_)) = tx.try_send(frame.clone()) {
                let n = self.overflow.fetch_add(1, Ordering::Relaxed) + 1;
                log("queue_overflow", json!({ "link": link.0, "dropped_total": n }));
            }
        }
    }

    fn handle(self: &Arc<Self>, link: LinkId, frame: Box<Frame>) {
        let reception = self.node.lock().unwrap().on_receive(&frame[..], Timestamp::now());
        match reception.decision {
            RelayDecision::Relay => self.relay_later(link, Arc::from(frame)),
            RelayDecision::Drop(reason) => log("drop", json!({ "link": link.0, "reason": reason })),
        }
        match reception.outcome {
            Some(DecodeOutcome::Delivered(d)) => {
                let line = serde_json::to_string(&DeliveredLine::from(&d)).expect("delivered line serializes");
                println!("{line}");
            }
            Some(DecodeOutcome::Rejected(reason)) => log("rejected", json!({ "link": link.0, "reason": reason })),
            _ => {}
        }
    }

    fn relay_later(self: &Arc<Self>, arrival: LinkId, frame: Arc<Frame>) {
        let delay = self.node.lock().unwrap().sample_relay_delay();
        let shared = self.clone();
        tokio::spawn(async move {
            if !delay.is_zero() {
                tokio::time::sleep(delay).await;
            }
            let targets = shared.node.lock().unwrap().relay_targets(Some(arrival));
            shared.dispatch(&targets, &frame);
        });
    }

    async fn serve(self: Arc<Self>, stream: TcpStream, peer: String) {
        stream.set_nodelay(true).ok();
        let (mut rd, mut wr) = stream.into_split();
        let (tx, mut rx) = mpsc::channel::<Arc<Frame>>(self.queue_capacity);
        let link = LinkId(self.next_link.fetch_add(1, Ordering::Relaxed));
        self.links.lock().unwrap().insert(link, tx);
        self.node.lock().unwrap().add_link(link);
        log("peer_up", json!({ "link": link.0, "peer": peer }));

        let writer = tokio::spawn(async move {
            while let Some(frame) = rx.recv().await {
                if frame_write(&mut wr, &frame).await.is_err() {
                    break;
                }
            }
        });
        let reason = loop {
            match frame_read(&mut rd).await {
                Ok(Some(frame)) => self.handle(link, frame),
                Ok(None) => break "closed".to_string(),
                Err(e) => break e.to_string(),
            }
        };
        self.links.lock().unwrap().remove(&link);
        self.node.lock().unwrap().remove_link(link);
        writer.abort();
        log("peer_down", json!({ "link": link.0, "peer": peer, "reason": reason }));
    }

    async fn dial(self: Arc<Self>, addr: String, redial: Duration) {
        loop {
            match TcpStream::connect(&addr).await {
                Ok(s) => self.clone().serve(s, addr.clone()).await,
                Err(e) => log("dial_failed", json!({ "peer": addr, "error": e.to_string() })),
            }
            tokio::time::sleep(redial).await;
        }
    }

    async fn dummies(self: Arc<Self>, mean: Duration) {
        loop {
            let gap = {
                let mut node = self.node.lock().unwrap();
                let u: f64 = node.rng().gen_range(f64::EPSILON..1.0);
                mean.mul_f64(-u.ln())
            };
            tokio::time::sleep(gap).await;
            let sent = {
                let mut node = self.node.lock().unwrap();
                let now = Timestamp::now();
                node.make_dummy(now).map(|m| (node.originate(&m, now), m.serialize()))
            };
            match sent {
                Ok((targets, frame)) => self.dispatch(&targets, &Arc::new(frame)),
                Err(e) => log("dummy_failed", json!({ "error": e.to_string() })),
            }
        }
    }
}

/// Runs until interrupted.
pub async fn run(config: DaemonConfig) -> anyhow::Result<()> {
    let book = ContactBook::load(&config.keystore)
        .with_context(|| format!("cannot load keystore {}", config.keystore.display()))?;
    let node = Node::with_entropy(config.node.clone(), book)?;
    let dummy_mean = node.dummy_interval();
    let shared = Arc::new(Shared {
        node: Mutex::new(node),
        links: Mutex::new(HashMap::new()),
        next_link: AtomicU64::new(0),
        overflow: AtomicU64::new(0),
        queue_capacity: config.queue_capacity,
    });

    if let Some(addr) = &config.listen {
        let listener = TcpListener::bind(addr)
            .await
            .with_context(|| format!("cannot listen on {addr}"))?;
        log("listening", json!({ "address": listener.local_addr()?.to_string() }));
        let shared = shared.clone();
        tokio::spawn(async move {
            loop {
                match listener.accept().await {
                    Ok((stream, peer)) => {
                        tokio::spawn(shared.clone().serve(stream, peer.to_string()));
                    }
                    Err(e) => log("accept_failed", json!({ "error": e.to_string() })),
                }
            }
        });
    }
    for peer in &config.peers {
        tokio::spawn(shared.clone().dial(peer.clone(), config.redial));
    }
    if let Some(mean) = dummy_mean {
        tokio::spawn(shared.clone().dummies(mean));
    }

    tokio::signal::ctrl_c().await?;
    log(
        "shutdown",
        json!({ "queue_overflow": shared.overflow.load(Ordering::Relaxed) }),
    );
    Ok(())
}
