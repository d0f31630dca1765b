#![allow(dead_code)]

use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};
use std::sync::mpsc::{channel, Receiver, RecvTimeoutError};
use std::thread;
use std::time::{Duration, Instant};

use serde_json::Value;

pub const BIN: &str = env!("CARGO_BIN_EXE_efpix");

pub fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(name)
}

pub fn efpix(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env_remove("EFPIX_KEYSTORE")
        .output()
        .expect("spawn efpix")
}

/// Runs efpix and parses its single stdout JSON line; panics on failure.
pub fn efpix_ok(args: &[&str]) -> Value {
    let out = efpix(args);
    assert!(
        out.status.success(),
        "efpix {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8(out.stdout).unwrap();
    serde_json::from_str(stdout.lines().next().unwrap_or("null")).unwrap()
}

/// A keystore with an exported public key, created through the CLI.
pub struct Identity {
    pub keystore: PathBuf,
    pub public: PathBuf,
}

impl Identity {
    pub fn new(dir: &Path, name: &str, suite: &str) -> Self {
        let keystore = dir.join(format!("{name}.keystore.json"));
        let public = dir.join(format!("{name}.pub.json"));
        let mut args = vec!["keygen", "--out", keystore.to_str().unwrap(), "--suite", suite];
        let seed = hex::encode([name.len() as u8; 32]);
        if suite == "mock" {
            args.extend(["--seed", &seed]);
        }
        efpix_ok(&args);
        efpix_ok(&[
            "export-key",
            "--keystore",
            keystore.to_str().unwrap(),
            "--out",
            public.to_str().unwrap(),
        ]);
        Identity { keystore, public }
    }

    pub fn add(&self, alias: &str, other: &Identity, my_alias: &str) {
        efpix_ok(&[
            "contact",
            "add",
            "--keystore",
            self.keystore.to_str().unwrap(),
            "--alias",
            alias,
            "--key",
            other.public.to_str().unwrap(),
            "--my-alias",
            my_alias,
        ]);
    }
}

pub enum Line {
    Out(Value),
    Err(Value),
}

pub struct Daemon {
    child: Child,
    lines: Receiver<Line>,
    pub address: String,
    pub stderr_seen: Vec<Value>,
    stdout_pending: std::collections::VecDeque<Value>,
}

fn pump<R: std::io::Read + Send + 'static>(r: R, tx: std::sync::mpsc::Sender<Line>, stdout: bool) {
    thread::spawn(move || {
        for line in BufReader::new(r).lines().map_while(Result::ok) {
            let v = serde_json::from_str(&line).unwrap_or(Value::String(line));
            let msg = if stdout { Line::Out(v) } else { Line::Err(v) };
            if tx.send(msg).is_err() {
                break;
            }
        }
    });
}

impl Daemon {
    /// Starts `efpix run` listening on an ephemeral loopback port.
    pub fn start(dir: &Path, name: &str, keystore: &Path, peers: &[&str], difficulty: u8) -> Daemon {
        let config = dir.join(format!("{name}.daemon.json"));
        let body = serde_json::json!({
            "listen": "127.0.0.1:0",
            "peers": peers,
            "node": { "pow_difficulty_bits": difficulty },
            "redial_ms": 100,
        });
        std::fs::write(&config, body.to_string()).unwrap();
        let mut child = Command::new(BIN)
            .args(["run", "--config", config.to_str().unwrap()])
            .env("EFPIX_KEYSTORE", keystore)
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .expect("spawn daemon");
        let (tx, lines) = channel();
        pump(child.stdout.take().unwrap(), tx.clone(), true);
        pump(child.stderr.take().unwrap(), tx, false);
        let mut d = Daemon {
            child,
            lines,
            address: String::new(),
            stderr_seen: Vec::new(),
            stdout_pending: Default::default(),
        };
        let ev = d
            .wait_event(Duration::from_secs(10), |v| v["event"] == "listening")
            .unwrap_or_else(|| panic!("{name} never listened: {:?}", d.stderr_seen));
        d.address = ev["address"].as_str().unwrap().to_string();
        d
    }

    fn next(&mut self, deadline: Instant) -> Option<Line> {
        let left = deadline.saturating_duration_since(Instant::now());
        match self.lines.recv_timeout(left) {
            Ok(Line::Err(v)) => {
                self.stderr_seen.push(v.clone());
                Some(Line::Err(v))
            }
            Ok(Line::Out(v)) => {
                self.stdout_pending.push_back(v.clone());
                Some(Line::Out(v))
            }
            Err(RecvTimeoutError::Timeout | RecvTimeoutError::Disconnected) => None,
        }
    }

    /// Waits for a stderr event matching `pred`.
    pub fn wait_event(&mut self, timeout: Duration, pred: impl Fn(&Value) -> bool) -> Option<Value> {
        let deadline = Instant::now() + timeout;
        if let Some(v) = self.stderr_seen.iter().find(|v| pred(v)) {
            return Some(v.clone());
        }
        loop {
            match self.next(deadline)? {
                Line::Err(v) if pred(&v) => return Some(v),
                _ => {}
            }
        }
    }

    /// Waits until `n` peer connections are up.
    pub fn wait_peers(&mut self, n: usize, timeout: Duration) -> bool {
        let deadline = Instant::now() + timeout;
        loop {
            let up = self.stderr_seen.iter().filter(|v| v["event"] == "peer_up").count();
            if up >= n {
                return true;
            }
            if self.next(deadline).is_none() {
                return false;
            }
        }
    }

    /// Next stdout line within `timeout`.
    pub fn wait_delivery(&mut self, timeout: Duration) -> Option<Value> {
        let deadline = Instant::now() + timeout;
        while self.stdout_pending.is_empty() {
            self.next(deadline)?;
        }
        self.stdout_pending.pop_front()
    }
}

impl Drop for Daemon {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}
