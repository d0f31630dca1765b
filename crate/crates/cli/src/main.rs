mod daemon;
mod framing;

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use efpix_core::crypto::pow::nonce_to_u32;
use efpix_core::crypto::{hash_message, pow_check, work_bits};
use efpix_core::identity::PublicKeyFile;
use efpix_core::sim::Scenario;
use efpix_core::{
    create_message, CipherSuiteId, Contact, ContactBook, EncodedMessage, KeyPair, PowParams, Timestamp, FRAME_LEN,
};
use rand::rngs::OsRng;
use serde_json::json;
use tokio::io::AsyncWriteExt;
use tokio::net::TcpStream;

use daemon::{DaemonConfig, KEYSTORE_ENV};

#[derive(Parser)]
#[command(name = "efpix", version, about = "Encrypted flood-relay node and tools")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct KeystoreArg {
    /// Keystore file.
    #[arg(long, env = KEYSTORE_ENV)]
    keystore: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Create a keystore with a fresh keypair.
    Keygen {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Suite::Reference)]
        suite: Suite,
        /// 32-byte hex seed (required for the mock suite).
        #[arg(long)]
        seed: Option<String>,
        /// Overwrite an existing file.
        #[arg(long)]
        force: bool,
    },
    /// Write this keystore's public key to a file others can import.
    ExportKey {
        #[command(flatten)]
        keystore: KeystoreArg,
        #[arg(long)]
        out: PathBuf,
    },
    #[command(subcommand)]
    Contact(ContactCommand),
    /// Build a frame for a contact and write it to a file or inject it into a daemon.
    Send {
        #[command(flatten)]
        keystore: KeystoreArg,
        #[arg(long)]
        to: String,
        /// Internal address delivered alongside the message.
        #[arg(long, default_value_t = 0)]
        addr: u32,
        #[arg(long, conflicts_with = "message_file", required_unless_present = "message_file")]
        message: Option<String>,
        #[arg(long)]
        message_file: Option<PathBuf>,
        #[arg(long, default_value_t = 16)]
        difficulty: u8,
        #[arg(long, conflicts_with = "peer", required_unless_present = "peer")]
        out: Option<PathBuf>,
        /// Daemon address (host:port) to inject the frame into.
        #[arg(long)]
        peer: Option<String>,
    },
    /// Run a relay daemon.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's listen address.
        #[arg(long)]
        listen: Option<String>,
        /// Replaces the config's peer list; repeatable.
        #[arg(long)]
        peer: Vec<String>,
    },
    /// Run a scenario file through the simulator.
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
        /// Overrides the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Per-message CSV instead of the JSON metrics.
        #[arg(long)]
        csv: bool,
    },
    /// Check a frame's hash and proof of work without decrypting it.
    Inspect {
        file: PathBuf,
        #[arg(long, default_value_t = 16)]
        difficulty: u8,
    },
}

#[derive(Subcommand)]
enum ContactCommand {
    /// Add a contact from an exported key file.
    Add {
        #[command(flatten)]
        keystore: KeystoreArg,
        #[arg(long)]
        alias: String,
        #[arg(long)]
        key: PathBuf,
        /// The alias this contact knows you by.
        #[arg(long)]
        my_alias: String,
        #[arg(long)]
        replace: bool,
    },
    Remove {
        #[command(flatten)]
        keystore: KeystoreArg,
        #[arg(long)]
        alias: String,
    },
    List {
        #[command(flatten)]
        keystore: KeystoreArg,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Suite {
    Reference,
    Mock,
}

impl From<Suite> for CipherSuiteId {
    fn from(s: Suite) -> Self {
        match s {
            Suite::Reference => CipherSuiteId::ReferenceRsa2048Sha512,
            Suite::Mock => CipherSuiteId::MockFixedSize,
        }
    }
}

struct Failure {
    kind: &'static str,
    error: anyhow::Error,
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let line = json!({ "error": self.kind, "message": format!("{:#}", self.error) });
        write!(f, "{line}")
    }
}

trait Kind<T> {
    fn kind(self, kind: &'static str) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Kind<T> for Result<T, E> {
    fn kind(self, kind: &'static str) -> Result<T, Failure> {
        self.map_err(|e| Failure { kind, error: e.into() })
    }
}

fn fail(kind: &'static str, error: anyhow::Error) -> Failure {
    Failure { kind, error }
}

fn print_json(value: &serde_json::Value) {
    println!("{value}");
}

fn load_book(k: &KeystoreArg) -> Result<ContactBook, Failure> {
    ContactBook::load(&k.keystore)
        .with_context(|| format!("keystore {}", k.keystore.display()))
        .kind("keystore")
}

fn save_book(book: &ContactBook, path: &Path) -> Result<(), Failure> {
    book.save(path)
        .with_context(|| format!("keystore {}", path.display()))
        .kind("keystore")
}

fn keygen(out: &Path, suite: Suite, seed: Option<&str>, force: bool) -> Result<(), Failure> {
    if out.exists() && !force {
        return Err(fail(
            "io",
            anyhow!("{} exists; pass --force to overwrite", out.display()),
        ));
    }
    let seed = seed
        .map(|s| -> anyhow::Result<[u8; 32]> {
            let bytes = hex::decode(s)?;
            bytes.try_into().map_err(|_| anyhow!("seed must be 32 bytes"))
        })
        .transpose()
        .kind("usage")?;
    let keys = KeyPair::generate(suite.into(), seed).kind("crypto")?;
    let suite = keys.suite();
    save_book(&ContactBook::new(keys), out)?;
    print_json(&json!({ "keystore": out, "suite": suite }));
    Ok(())
}

fn contact(cmd: ContactCommand) -> Result<(), Failure> {
    match cmd {
        ContactCommand::Add {
            keystore,
            alias,
            key,
            my_alias,
            replace,
        } => {
            let mut book = load_book(&keystore)?;
            let key = PublicKeyFile::load(&key)
                .with_context(|| format!("key file {}", key.display()))
                .kind("key")?;
            let c = Contact::new(&alias, key, &my_alias).kind("contact")?;
            book.add_contact(c, replace).kind("contact")?;
            save_book(&book, &keystore.keystore)?;
            print_json(&json!({ "added": alias, "my_alias": my_alias }));
        }
        ContactCommand::Remove { keystore, alias } => {
            let mut book = load_book(&keystore)?;
            if book.remove_contact(&alias).is_none() {
                return Err(fail("contact", anyhow!("no contact {alias:?}")));
            }
            save_book(&book, &keystore.keystore)?;
            print_json(&json!({ "removed": alias }));
        }
        ContactCommand::List { keystore } => {
            for c in load_book(&keystore)?.contacts() {
                print_json(&json!({
                    "alias": c.their_alias.as_str(),
                    "my_alias": c.my_alias_for_them.as_str(),
                    "suite": c.their_public_key.suite(),
                }));
            }
        }
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
async fn send(
    keystore: &KeystoreArg,
    to: &str,
    addr: u32,
    message: Option<String>,
    message_file: Option<PathBuf>,
    difficulty: u8,
    out: Option<PathBuf>,
    peer: Option<String>,
) -> Result<(), Failure> {
    let book = load_book(keystore)?;
    let body = match (message, message_file) {
        (Some(m), _) => m.into_bytes(),
        (None, Some(path)) => std::fs::read(&path)
            .with_context(|| format!("message file {}", path.display()))
            .kind("io")?,
        (None, None) => unreachable!("clap requires one message source"),
    };
    let pow = PowParams::new(difficulty).kind("usage")?;
    let msg = create_message(&book, to, addr, &body, Timestamp::now(), pow, &mut OsRng).kind("send")?;
    let frame = msg.serialize();
    let hash = hex::encode(msg.hash);
    if let Some(path) = out {
        std::fs::write(&path, frame)
            .with_context(|| format!("cannot write {}", path.display()))
            .kind("io")?;
        print_json(&json!({ "hash": hash, "out": path }));
    } else if let Some(peer) = peer {
        let mut stream = TcpStream::connect(&peer)
            .await
            .with_context(|| format!("cannot connect to {peer}"))
            .kind("network")?;
        framing::frame_write(&mut stream, &frame).await.kind("network")?;
        stream.shutdown().await.kind("network")?;
        print_json(&json!({ "hash": hash, "peer": peer }));
    }
    Ok(())
}

async fn run(config: &Path, listen: Option<String>, peers: Vec<String>) -> Result<(), Failure> {
    let text = std::fs::read_to_string(config)
        .with_context(|| format!("config {}", config.display()))
        .kind("config")?;
    let keystore = std::env::var_os(KEYSTORE_ENV).map(PathBuf::from);
    let mut config = DaemonConfig::from_json(&text, keystore).kind("config")?;
    if listen.is_some() {
        config.listen = listen;
    }
    if !peers.is_empty() {
        config.peers = peers;
    }
    config.validate().kind("config")?;
    daemon::run(config).await.kind("daemon")
}

fn simulate(path: &Path, seed: Option<u64>, csv: bool) -> Result<(), Failure> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("scenario {}", path.display()))
        .kind("scenario")?;
    let scenario: Scenario = serde_json::from_str(&text)
        .context("invalid scenario")
        .kind("scenario")?;
    let metrics = scenario.run(seed.unwrap_or(scenario.seed)).kind("scenario")?;
    match csv {
        true => print!("{}", metrics.to_csv()),
        false => println!("{}", metrics.to_json()),
    }
    let failures = scenario.check(&metrics);
    if !failures.is_empty() {
        return Err(fail("assertion", anyhow!("{}", failures.join("; "))));
    }
    Ok(())
}

fn inspect(path: &Path, difficulty: u8) -> Result<(), Failure> {
    let bytes = std::fs::read(path)
        .with_context(|| format!("cannot read {}", path.display()))
        .kind("io")?;
    let pow = PowParams::new(difficulty).kind("usage")?;
    if bytes.len() != FRAME_LEN {
        return Err(fail(
            "malformed",
            anyhow!("frame is {} bytes, expected {FRAME_LEN}", bytes.len()),
        ));
    }
    let m = EncodedMessage::parse(&bytes).kind("malformed")?;
    let computed = hash_message(&m.blob, &m.signature);
    let hash_valid = computed == m.hash;
    let pow_valid = pow_check(&m.hash, &m.nonce, pow);
    print_json(&json!({
        "version": m.version,
        "hash": hex::encode(m.hash),
        "computed_hash": hex::encode(computed),
        "hash_valid": hash_valid,
        "nonce": hex::encode(m.nonce),
        "nonce_value": nonce_to_u32(&m.nonce),
        "work_bits": work_bits(&m.hash, &m.nonce),
        "difficulty_bits": difficulty,
        "pow_valid": pow_valid,
    }));
    match (hash_valid, pow_valid) {
        (false, _) => Err(fail("tampered", anyhow!("hash mismatch"))),
        (true, false) => Err(fail("tampered", anyhow!("proof of work below {difficulty} bits"))),
        (true, true) => Ok(()),
    }
}

async fn dispatch(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Keygen {
            out,
            suite,
            seed,
            force,
        } => keygen(&out, suite, seed.as_deref(), force),
        Command::ExportKey { keystore, out } => {
            let book = load_book(&keystore)?;
            PublicKeyFile::new(&book.own_keypair().public)
                .save(&out)
                .with_context(|| format!("cannot write {}", out.display()))
                .kind("io")?;
            print_json(&json!({ "out": out }));
            Ok(())
        }
        Command::Contact(cmd) => contact(cmd),
        Command::Send {
            keystore,
            to,
            addr,
            message,
            message_file,
            difficulty,
            out,
            peer,
        } => send(&keystore, &to, addr, message, message_file, difficulty, out, peer).await,
        Command::Run { config, listen, peer } => run(&config, listen, peer).await,
        Command::Simulate { scenario, seed, csv } => simulate(&scenario, seed, csv),
        Command::Inspect { file, difficulty } => inspect(&file, difficulty),
    }
}

#[tokio::main]
async fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let message = e.to_string();
            let first = message.lines().next().unwrap_or_default().trim_start_matches("error: ");
            eprintln!("{}", json!({ "error": "usage", "message": first }));
            return ExitCode::from(2);
        }
    };
    match dispatch(cli).await {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{f}");
            ExitCode::FAILURE
        }
    }
}
