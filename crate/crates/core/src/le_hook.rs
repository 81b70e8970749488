//! Escrow of the identifier under a law-enforcement key.
//!
//! X25519 key agreement with an ephemeral key, HKDF-SHA256, then
//! ChaCha20-Poly1305. The operator only ever holds [`LePublicKey`].

use std::fs::{File, OpenOptions};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use chacha20poly1305::aead::{Aead, KeyInit};
use chacha20poly1305::{ChaCha20Poly1305, Key, Nonce};
use hkdf::Hkdf;
use rand::CryptoRng;
use sha2::Sha256;
use x25519_dalek::{PublicKey, StaticSecret};

use crate::encoding::Pei;
use crate::psm::Decision;
use crate::registry::ListKind;
use crate::Error;

const KDF_INFO: &[u8] = b"peipsm escrow v1";
/// ephemeral public key + sealed 8-byte identifier + tag
pub const LE_CIPHERTEXT_LEN: usize = 32 + 8 + 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LePublicKey(pub [u8; 32]);

pub struct LeSecretKey(StaticSecret);

impl std::fmt::Debug for LeSecretKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("LeSecretKey(..)")
    }
}

impl LeSecretKey {
    pub fn to_bytes(&self) -> [u8; 32] {
        self.0.to_bytes()
    }

    pub fn from_bytes(b: [u8; 32]) -> Self {
        LeSecretKey(StaticSecret::from(b))
    }

    pub fn public(&self) -> LePublicKey {
        LePublicKey(PublicKey::from(&self.0).to_bytes())
    }
}

pub struct LeKeyPair {
    pub public: LePublicKey,
    pub secret: LeSecretKey,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LeCiphertext(pub Vec<u8>);

pub fn le_keygen<R: CryptoRng + ?Sized>(rng: &mut R) -> LeKeyPair {
    let secret = LeSecretKey(StaticSecret::random_from_rng(rng));
    LeKeyPair {
        public: secret.public(),
        secret,
    }
}

fn cipher_for(shared: &[u8; 32], eph: &[u8; 32], recipient: &[u8; 32]) -> (ChaCha20Poly1305, Nonce) {
    let mut salt = [0u8; 64];
    salt[..32].copy_from_slice(eph);
    salt[32..].copy_from_slice(recipient);
    let hk = Hkdf::<Sha256>::new(Some(&salt), shared);
    let mut okm = [0u8; 44];
    hk.expand(KDF_INFO, &mut okm).expect("44 bytes is a valid output length");
    let key = Key::try_from(&okm[..32]).unwrap();
    let nonce = Nonce::try_from(&okm[32..]).unwrap();
    (ChaCha20Poly1305::new(&key), nonce)
}

pub fn le_encrypt<R: CryptoRng + ?Sized>(p: Pei, pk: &LePublicKey, rng: &mut R) -> LeCiphertext {
    let eph = StaticSecret::random_from_rng(rng);
    let eph_pub = PublicKey::from(&eph).to_bytes();
    let shared = eph.diffie_hellman(&PublicKey::from(pk.0));
    let (aead, nonce) = cipher_for(shared.as_bytes(), &eph_pub, &pk.0);
    let sealed = aead
        .encrypt(&nonce, p.value().to_le_bytes().as_slice())
        .expect("in-memory encryption cannot fail");
    let mut out = Vec::with_capacity(LE_CIPHERTEXT_LEN);
    out.extend_from_slice(&eph_pub);
    out.extend_from_slice(&sealed);
    LeCiphertext(out)
}

pub fn le_decrypt(ct: &LeCiphertext, sk: &LeSecretKey) -> Result<Pei, Error> {
    if ct.0.len() != LE_CIPHERTEXT_LEN {
        return Err(Error::Integrity("escrow ciphertext has the wrong length".into()));
    }
    let eph_pub: [u8; 32] = ct.0[..32].try_into().unwrap();
    let shared = sk.0.diffie_hellman(&PublicKey::from(eph_pub));
    let (aead, nonce) = cipher_for(shared.as_bytes(), &eph_pub, &sk.public().0);
    let plain = aead
        .decrypt(&nonce, &ct.0[32..])
        .map_err(|_| Error::Integrity("escrow ciphertext failed authentication".into()))?;
    Pei::new(u64::from_le_bytes(plain.as_slice().try_into().unwrap()))
        .map_err(|_| Error::Integrity("escrow plaintext is not an identifier".into()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Trigger {
    GreylistMatch,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AuditRecord {
    pub session_id: [u8; 16],
    pub timestamp: u64,
    pub le_ct: LeCiphertext,
    pub trigger: Trigger,
}

impl AuditRecord {
    fn payload(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 8 + 1 + self.le_ct.0.len());
        out.extend_from_slice(&self.session_id);
        out.extend_from_slice(&self.timestamp.to_le_bytes());
        out.push(match self.trigger {
            Trigger::GreylistMatch => 1,
        });
        out.extend_from_slice(&self.le_ct.0);
        out
    }

    fn from_payload(p: &[u8]) -> Result<Self, Error> {
        if p.len() < 25 {
            return Err(Error::Integrity("audit record too short".into()));
        }
        let trigger = match p[24] {
            1 => Trigger::GreylistMatch,
            other => return Err(Error::Integrity(format!("unknown audit trigger {other}"))),
        };
        Ok(AuditRecord {
            session_id: p[..16].try_into().unwrap(),
            timestamp: u64::from_le_bytes(p[16..24].try_into().unwrap()),
            trigger,
            le_ct: LeCiphertext(p[25..].to_vec()),
        })
    }
}

pub const AUDIT_MAGIC: &[u8; 7] = b"PSMAUD1";

/// Append-only audit log; appends are serialized through one writer.
#[derive(Debug)]
pub struct AuditLog {
    sink: Mutex<Sink>,
}

#[derive(Debug)]
enum Sink {
    Memory(Vec<AuditRecord>),
    File { path: PathBuf, file: File, count: usize },
}

impl AuditLog {
    pub fn in_memory() -> Self {
        AuditLog {
            sink: Mutex::new(Sink::Memory(Vec::new())),
        }
    }

    /// Opens or creates a log file, validating any existing contents.
    pub fn open(path: &Path) -> Result<Self, Error> {
        let io = |e: std::io::Error| Error::Io(format!("{}: {e}", path.display()));
        let count = if path.exists() { read_audit_log(path)?.len() } else { 0 };
        let mut file = OpenOptions::new().create(true).append(true).open(path).map_err(io)?;
        if count == 0 && file.metadata().map_err(io)?.len() == 0 {
            file.write_all(AUDIT_MAGIC).map_err(io)?;
        }
        Ok(AuditLog {
            sink: Mutex::new(Sink::File {
                path: path.to_path_buf(),
                file,
                count,
            }),
        })
    }

    pub fn append(&self, rec: AuditRecord) -> Result<(), Error> {
        let mut sink = self.sink.lock().unwrap_or_else(|e| e.into_inner());
        match &mut *sink {
            Sink::Memory(v) => v.push(rec),
            Sink::File { path, file, count } => {
                let payload = rec.payload();
                let mut buf = Vec::with_capacity(payload.len() + 8);
                buf.extend_from_slice(&(payload.len() as u32).to_le_bytes());
                buf.extend_from_slice(&payload);
                buf.extend_from_slice(&crc32fast::hash(&payload).to_le_bytes());
                file.write_all(&buf)
                    .and_then(|_| file.flush())
                    .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
                *count += 1;
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        match &*self.sink.lock().unwrap_or_else(|e| e.into_inner()) {
            Sink::Memory(v) => v.len(),
            Sink::File { count, .. } => *count,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn records(&self) -> Result<Vec<AuditRecord>, Error> {
        match &*self.sink.lock().unwrap_or_else(|e| e.into_inner()) {
            Sink::Memory(v) => Ok(v.clone()),
            Sink::File { path, .. } => read_audit_log(path),
        }
    }
}

pub fn read_audit_log(path: &Path) -> Result<Vec<AuditRecord>, Error> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    if bytes.is_empty() {
        return Ok(Vec::new());
    }
    if !bytes.starts_with(AUDIT_MAGIC) {
        return Err(Error::Integrity("audit log has a bad header".into()));
    }
    let mut pos = AUDIT_MAGIC.len();
    let mut out = Vec::new();
    while pos < bytes.len() {
        if bytes.len() - pos < 8 {
            return Err(Error::Integrity(format!("truncated audit record at offset {pos}")));
        }
        let len = u32::from_le_bytes(bytes[pos..pos + 4].try_into().unwrap()) as usize;
        if bytes.len() - pos - 8 < len {
            return Err(Error::Integrity(format!("truncated audit record at offset {pos}")));
        }
        let payload = &bytes[pos + 4..pos + 4 + len];
        let crc = u32::from_le_bytes(bytes[pos + 4 + len..pos + 8 + len].try_into().unwrap());
        if crc32fast::hash(payload) != crc {
            return Err(Error::Integrity(format!("checksum mismatch at offset {pos}")));
        }
        out.push(AuditRecord::from_payload(payload)?);
        pos += 8 + len;
    }
    Ok(out)
}

/// Appends a record exactly when the decision is a greylist hit.
pub fn forward_on_greylist(
    decision: Decision,
    le_ct: &LeCiphertext,
    session_id: [u8; 16],
    log: &AuditLog,
) -> Result<Option<AuditRecord>, Error> {
    if decision != Decision::Listed(ListKind::Greylist) {
        return Ok(None);
    }
    let timestamp = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let rec = AuditRecord {
        session_id,
        timestamp,
        le_ct: le_ct.clone(),
        trigger: Trigger::GreylistMatch,
    };
    log.append(rec.clone())?;
    Ok(Some(rec))
}
