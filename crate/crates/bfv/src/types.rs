//! Plaintexts, ciphertexts, keys and their byte encodings.

use crate::HeError;

/// Format version for every serialized HE object.
pub const FORMAT_VERSION: u8 = 1;

/// A vector of `N` slot values in `[0, t)`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct PlainVec(pub Vec<u64>);

impl PlainVec {
    pub fn zeros(slots: usize) -> Self {
        PlainVec(vec![0; slots])
    }

    pub fn constant(slots: usize, value: u64) -> Self {
        PlainVec(vec![value; slots])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[u64] {
        &self.0
    }
}

impl From<Vec<u64>> for PlainVec {
    fn from(v: Vec<u64>) -> Self {
        PlainVec(v)
    }
}

/// A slot vector pre-encoded for ciphertext-plaintext multiplication:
/// centered lift of the batched polynomial into every ciphertext prime, in
/// NTT form.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Plaintext {
    pub(crate) context_id: u64,
    pub(crate) residues: Vec<u64>,
}

impl Plaintext {
    /// Heap bytes held by the encoded residues.
    pub fn byte_size(&self) -> usize {
        self.residues.len() * 8
    }
}

/// A BFV ciphertext. Components are flat `level * N` residue arrays.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Cipher {
    pub(crate) context_id: u64,
    pub(crate) level: usize,
    pub(crate) ntt_form: bool,
    pub(crate) polys: Vec<Vec<u64>>,
    /// Present while `polys[1]` is still the seed expansion of a fresh
    /// symmetric encryption.
    pub(crate) seed: Option<[u8; 32]>,
    pub(crate) depth: u32,
}

impl Cipher {
    /// Number of ciphertext primes still in use.
    pub fn level(&self) -> usize {
        self.level
    }

    /// Number of polynomial components (2 after relinearization).
    pub fn size(&self) -> usize {
        self.polys.len()
    }

    /// Ciphertext-ciphertext multiplications along the deepest path.
    pub fn multiplicative_depth(&self) -> u32 {
        self.depth
    }

    pub fn context_id(&self) -> u64 {
        self.context_id
    }

    pub fn is_seeded(&self) -> bool {
        self.seed.is_some()
    }

    /// Length-prefixed, versioned encoding. Seeded ciphertexts carry the
    /// 32-byte seed instead of their second component.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.u64(self.context_id);
        w.u8(self.level as u8);
        w.u8(self.polys.len() as u8);
        let flags = self.ntt_form as u8 | (self.seed.is_some() as u8) << 1;
        w.u8(flags);
        w.u32(self.depth);
        let degree = self.polys[0].len() / self.level;
        w.u32(degree as u32);
        match &self.seed {
            Some(seed) => {
                w.words(&self.polys[0]);
                w.bytes(seed);
            }
            None => {
                for p in &self.polys {
                    w.words(p);
                }
            }
        }
        w.finish()
    }

    /// Size of [`Cipher::to_bytes`] without materializing it.
    pub fn serialized_len(&self) -> usize {
        let header = 4 + 1 + 8 + 1 + 1 + 1 + 4 + 4;
        let words: usize = match self.seed {
            Some(_) => self.polys[0].len() * 8 + 32,
            None => self.polys.iter().map(|p| p.len() * 8).sum(),
        };
        header + words
    }
}

/// Raw fields of a decoded ciphertext; seeded ones are expanded by the
/// context.
pub(crate) struct CipherParts {
    pub context_id: u64,
    pub level: usize,
    pub size: usize,
    pub ntt_form: bool,
    pub depth: u32,
    pub degree: usize,
    pub polys: Vec<Vec<u64>>,
    pub seed: Option<[u8; 32]>,
}

pub(crate) fn decode_cipher(bytes: &[u8]) -> Result<(CipherParts, usize), HeError> {
    let (body, used) = unframe(bytes)?;
    let mut r = Reader::new(body);
    let context_id = r.u64()?;
    let level = r.u8()? as usize;
    let size = r.u8()? as usize;
    let flags = r.u8()?;
    let depth = r.u32()?;
    let degree = r.u32()? as usize;
    if level == 0 || size == 0 || degree == 0 || !degree.is_power_of_two() {
        return Err(HeError::Serialization("malformed ciphertext header".into()));
    }
    let ntt_form = flags & 1 == 1;
    let seeded = flags & 2 == 2;
    let words = level * degree;
    let (polys, seed) = if seeded {
        if size != 2 {
            return Err(HeError::Serialization("seeded ciphertext must have two components".into()));
        }
        let c0 = r.words(words)?;
        let mut seed = [0u8; 32];
        seed.copy_from_slice(r.bytes(32)?);
        (vec![c0], Some(seed))
    } else {
        let mut polys = Vec::with_capacity(size);
        for _ in 0..size {
            polys.push(r.words(words)?);
        }
        (polys, None)
    };
    r.expect_end()?;
    Ok((
        CipherParts {
            context_id,
            level,
            size,
            ntt_form,
            depth,
            degree,
            polys,
            seed,
        },
        used,
    ))
}

/// Ternary secret key. Kept in NTT form over the ciphertext primes followed
/// by the special prime.
#[derive(Clone)]
pub struct SecretKey {
    pub(crate) context_id: u64,
    pub(crate) coeffs: Vec<i8>,
    pub(crate) ntt: Vec<u64>,
}

impl std::fmt::Debug for SecretKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SecretKey").field("context_id", &self.context_id).finish_non_exhaustive()
    }
}

impl SecretKey {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.u64(self.context_id);
        w.u32(self.coeffs.len() as u32);
        w.bytes(&self.coeffs.iter().map(|&c| c as u8).collect::<Vec<_>>());
        w.finish()
    }
}

pub(crate) fn decode_secret(bytes: &[u8]) -> Result<(u64, Vec<i8>), HeError> {
    let (body, _) = unframe(bytes)?;
    let mut r = Reader::new(body);
    let id = r.u64()?;
    let n = r.u32()? as usize;
    let coeffs: Vec<i8> = r.bytes(n)?.iter().map(|&b| b as i8).collect();
    r.expect_end()?;
    if coeffs.iter().any(|c| !(-1..=1).contains(c)) {
        return Err(HeError::Serialization("secret key is not ternary".into()));
    }
    Ok((id, coeffs))
}

/// Public encryption key `(b, a) = (-a s + e, a)` in NTT form over the
/// ciphertext primes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PublicKey {
    pub(crate) context_id: u64,
    pub(crate) b: Vec<u64>,
    pub(crate) a: Vec<u64>,
}

impl PublicKey {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.u64(self.context_id);
        w.u32(self.b.len() as u32);
        w.words(&self.b);
        w.words(&self.a);
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<(Self, usize), HeError> {
        let (body, used) = unframe(bytes)?;
        let mut r = Reader::new(body);
        let context_id = r.u64()?;
        let len = r.u32()? as usize;
        let b = r.words(len)?;
        let a = r.words(len)?;
        r.expect_end()?;
        Ok((PublicKey { context_id, b, a }, used))
    }

    pub fn context_id(&self) -> u64 {
        self.context_id
    }
}

/// Relinearization keys, one pair per ciphertext prime, in NTT form over
/// the ciphertext primes plus the special prime.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RelinKey {
    pub(crate) context_id: u64,
    pub(crate) pairs: Vec<(Vec<u64>, Vec<u64>)>,
}

impl RelinKey {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.u64(self.context_id);
        w.u32(self.pairs.len() as u32);
        w.u32(self.pairs.first().map_or(0, |p| p.0.len()) as u32);
        for (b, a) in &self.pairs {
            w.words(b);
            w.words(a);
        }
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<(Self, usize), HeError> {
        let (body, used) = unframe(bytes)?;
        let mut r = Reader::new(body);
        let context_id = r.u64()?;
        let count = r.u32()? as usize;
        let len = r.u32()? as usize;
        let mut pairs = Vec::with_capacity(count);
        for _ in 0..count {
            let b = r.words(len)?;
            let a = r.words(len)?;
            pairs.push((b, a));
        }
        r.expect_end()?;
        Ok((RelinKey { context_id, pairs }, used))
    }

    pub fn context_id(&self) -> u64 {
        self.context_id
    }
}

/// Everything the evaluating party needs: no secret material.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ServerKeys {
    pub public: PublicKey,
    pub relin: RelinKey,
}

impl ServerKeys {
    /// SHA-free fingerprint for caching setup per client.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ self.public.context_id;
        for &w in self.public.a.iter().take(64).chain(self.public.b.iter().take(64)) {
            h ^= w;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        h
    }
}

/// Client-side key bundle.
#[derive(Clone, Debug)]
pub struct KeyMaterial {
    pub secret: SecretKey,
    pub public: PublicKey,
    pub relin: RelinKey,
}

impl KeyMaterial {
    pub fn server_keys(&self) -> ServerKeys {
        ServerKeys {
            public: self.public.clone(),
            relin: self.relin.clone(),
        }
    }

    pub fn context_id(&self) -> u64 {
        self.public.context_id
    }
}

pub(crate) fn frame(body: Vec<u8>) -> Vec<u8> {
    let mut out = Vec::with_capacity(body.len() + 5);
    out.extend_from_slice(&((body.len() + 1) as u32).to_le_bytes());
    out.push(FORMAT_VERSION);
    out.extend_from_slice(&body);
    out
}

/// Splits one framed blob off the front of `bytes`, returning its body and
/// the total bytes consumed.
pub(crate) fn unframe(bytes: &[u8]) -> Result<(&[u8], usize), HeError> {
    if bytes.len() < 5 {
        return Err(HeError::Serialization("truncated blob header".into()));
    }
    let len = u32::from_le_bytes(bytes[..4].try_into().unwrap()) as usize;
    if len == 0 || bytes.len() < 4 + len {
        return Err(HeError::Serialization("truncated blob".into()));
    }
    if bytes[4] != FORMAT_VERSION {
        return Err(HeError::Serialization(format!("unsupported format version {}", bytes[4])));
    }
    Ok((&bytes[5..4 + len], 4 + len))
}

#[derive(Default)]
pub(crate) struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    pub fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }
    pub fn words(&mut self, ws: &[u64]) {
        self.buf.reserve(ws.len() * 8);
        for w in ws {
            self.buf.extend_from_slice(&w.to_le_bytes());
        }
    }
    pub fn finish(self) -> Vec<u8> {
        frame(self.buf)
    }
}

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }
    pub fn bytes(&mut self, n: usize) -> Result<&'a [u8], HeError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| HeError::Serialization("unexpected end of blob".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    pub fn u8(&mut self) -> Result<u8, HeError> {
        Ok(self.bytes(1)?[0])
    }
    pub fn u32(&mut self) -> Result<u32, HeError> {
        Ok(u32::from_le_bytes(self.bytes(4)?.try_into().unwrap()))
    }
    pub fn u64(&mut self) -> Result<u64, HeError> {
        Ok(u64::from_le_bytes(self.bytes(8)?.try_into().unwrap()))
    }
    pub fn words(&mut self, n: usize) -> Result<Vec<u64>, HeError> {
        let raw = self.bytes(n.checked_mul(8).ok_or_else(|| HeError::Serialization("length overflow".into()))?)?;
        Ok(raw.chunks_exact(8).map(|c| u64::from_le_bytes(c.try_into().unwrap())).collect())
    }
    pub fn expect_end(&self) -> Result<(), HeError> {
        if self.pos == self.buf.len() {
            Ok(())
        } else {
            Err(HeError::Serialization("trailing bytes in blob".into()))
        }
    }
}
