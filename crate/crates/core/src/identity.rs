//! Own key pair plus the map from a correspondent's alias to their public key
//! and the alias we present to them.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::Path;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{Alias, CodecError};
use crate::crypto::{CipherSuiteId, CryptoError, KeyPair, PublicKey};

const KEYSTORE_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum IdentityError {
    #[error("alias {0:?} already present")]
    DuplicateAlias(String),
    #[error("invalid alias: {0}")]
    InvalidAlias(#[from] CodecError),
    #[error("keystore not found: {0}")]
    NotFound(String),
    #[error("keystore corrupt: {0}")]
    KeystoreCorrupt(String),
    #[error("keystore i/o: {0}")]
    Io(#[from] io::Error),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Contact {
    pub their_alias: Alias,
    pub their_public_key: PublicKey,
    pub my_alias_for_them: Alias,
}

impl Contact {
    pub fn new(their_alias: &str, their_public_key: PublicKey, my_alias_for_them: &str) -> Result<Self, IdentityError> {
        Ok(Contact {
            their_alias: Alias::new(their_alias)?,
            their_public_key,
            my_alias_for_them: Alias::new(my_alias_for_them)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ContactBook {
    own: KeyPair,
    contacts: BTreeMap<Alias, Contact>,
}

impl ContactBook {
    pub fn new(own: KeyPair) -> Self {
        ContactBook {
            own,
            contacts: BTreeMap::new(),
        }
    }

    pub fn own_keypair(&self) -> &KeyPair {
        &self.own
    }

    pub fn add_contact(&mut self, contact: Contact, replace: bool) -> Result<(), IdentityError> {
        if !replace && self.contacts.contains_key(&contact.their_alias) {
            return Err(IdentityError::DuplicateAlias(contact.their_alias.to_string()));
        }
        self.contacts.insert(contact.their_alias.clone(), contact);
        Ok(())
    }

    pub fn remove_contact(&mut self, alias: &str) -> Option<Contact> {
        self.contacts.remove(alias)
    }

    /// Exact-match lookup. `None` means the sender is anonymous to us.
    pub fn lookup_sender(&self, alias: &str) -> Option<&Contact> {
        self.contacts.get(alias)
    }

    pub fn contacts(&self) -> impl Iterator<Item = &Contact> {
        self.contacts.values()
    }

    pub fn len(&self) -> usize {
        self.contacts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.contacts.is_empty()
    }

    /// Writes the keystore as JSON, readable by the owner only.
    pub fn save(&self, path: &Path) -> Result<(), IdentityError> {
        let file = KeystoreFile::from(self);
        let json = serde_json::to_vec_pretty(&file).expect("keystore serializes");
        write_private(path, &json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, IdentityError> {
        let bytes = match fs::read(path) {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::NotFound => {
                return Err(IdentityError::NotFound(path.display().to_string()))
            }
            Err(e) => return Err(e.into()),
        };
        let file: KeystoreFile =
            serde_json::from_slice(&bytes).map_err(|e| IdentityError::KeystoreCorrupt(e.to_string()))?;
        file.try_into()
    }
}

#[cfg(unix)]
fn write_private(path: &Path, bytes: &[u8]) -> io::Result<()> {
    use std::io::Write;
    use std::os::unix::fs::{OpenOptionsExt, PermissionsExt};
    let mut f = fs::OpenOptions::new()
        .write(true)
        .create(true)
        .truncate(true)
        .mode(0o600)
        .open(path)?;
    f.set_permissions(fs::Permissions::from_mode(0o600))?;
    f.write_all(bytes)
}

#[cfg(not(unix))]
fn write_private(path: &Path, bytes: &[u8]) -> io::Result<()> {
    fs::write(path, bytes)
}

/// On-disk keystore layout. Key blobs are base64 of the suite's byte encoding
/// (PKCS#1 DER for RSA).
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct KeystoreFile {
    version: u32,
    suite: CipherSuiteId,
    public_key: String,
    private_key: String,
    contacts: Vec<ContactEntry>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ContactEntry {
    alias: Alias,
    suite: CipherSuiteId,
    public_key: String,
    my_alias: Alias,
}

impl From<&ContactBook> for KeystoreFile {
    fn from(book: &ContactBook) -> Self {
        KeystoreFile {
            version: KEYSTORE_VERSION,
            suite: book.own.suite(),
            public_key: B64.encode(book.own.public.to_bytes()),
            private_key: B64.encode(book.own.private.to_bytes()),
            contacts: book
                .contacts()
                .map(|c| ContactEntry {
                    alias: c.their_alias.clone(),
                    suite: c.their_public_key.suite(),
                    public_key: B64.encode(c.their_public_key.to_bytes()),
                    my_alias: c.my_alias_for_them.clone(),
                })
                .collect(),
        }
    }
}

fn corrupt(e: impl ToString) -> IdentityError {
    IdentityError::KeystoreCorrupt(e.to_string())
}

fn decode_public(suite: CipherSuiteId, b64: &str) -> Result<PublicKey, IdentityError> {
    let bytes = B64.decode(b64).map_err(corrupt)?;
    PublicKey::from_bytes(suite, &bytes).map_err(|e: CryptoError| corrupt(e))
}

impl TryFrom<KeystoreFile> for ContactBook {
    type Error = IdentityError;

    fn try_from(file: KeystoreFile) -> Result<Self, Self::Error> {
        if file.version != KEYSTORE_VERSION {
            return Err(corrupt(format!("unsupported keystore version {}", file.version)));
        }
        let public = B64.decode(&file.public_key).map_err(corrupt)?;
        let private = B64.decode(&file.private_key).map_err(corrupt)?;
        let own = KeyPair::from_bytes(file.suite, &public, &private).map_err(corrupt)?;
        let mut book = ContactBook::new(own);
        for entry in file.contacts {
            let contact = Contact {
                their_public_key: decode_public(entry.suite, &entry.public_key)?,
                their_alias: entry.alias,
                my_alias_for_them: entry.my_alias,
            };
            book.add_contact(contact, false).map_err(corrupt)?;
        }
        Ok(book)
    }
}

/// Standalone public key file, used to hand a key to a correspondent.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PublicKeyFile {
    pub suite: CipherSuiteId,
    pub public_key: String,
}

impl PublicKeyFile {
    pub fn new(key: &PublicKey) -> Self {
        PublicKeyFile {
            suite: key.suite(),
            public_key: B64.encode(key.to_bytes()),
        }
    }

    pub fn to_key(&self) -> Result<PublicKey, IdentityError> {
        decode_public(self.suite, &self.public_key)
    }

    pub fn load(path: &Path) -> Result<PublicKey, IdentityError> {
        let bytes = fs::read(path).map_err(|e| match e.kind() {
            io::ErrorKind::NotFound => IdentityError::NotFound(path.display().to_string()),
            _ => e.into(),
        })?;
        let file: PublicKeyFile = serde_json::from_slice(&bytes).map_err(corrupt)?;
        file.to_key()
    }

    pub fn save(&self, path: &Path) -> Result<(), IdentityError> {
        fs::write(path, serde_json::to_vec_pretty(self).expect("key file serializes"))?;
        Ok(())
    }
}
