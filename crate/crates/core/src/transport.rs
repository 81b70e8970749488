//! Framed wire protocol, per-session state machines for both roles, and a
//! TCP server/client pair.
//!
//! Frame: version `u8`, tag `u8`, payload length `u32` LE, payload.
//! Ciphertexts travel as opaque length-prefixed blobs so framing never
//! needs a BFV context.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::thread;
use std::time::Instant;

use peipsm_bfv::{HeContext, HeParams, KeyMaterial, Profile, PublicKey, RelinKey, ServerKeys};
use rand::CryptoRng;

use crate::encoding::{CwcParams, PbhParams, Pei};
use crate::le_hook::{forward_on_greylist, AuditLog, LeCiphertext, LePublicKey, LE_CIPHERTEXT_LEN};
use crate::psm::{
    build_query, client_aggregate, decide, demask, psi_sum, sample_masks, Decision, MaskRange, MaskingState,
    PreparedList, Query, SlotSum, DEFAULT_PREPARE_BUDGET,
};
use crate::registry::{ListKind, Registry};
use crate::{par, Error};

pub const WIRE_VERSION: u8 = 1;
pub const HEADER_LEN: usize = 6;
/// Largest accepted payload. A baseline request is about 15 MB.
pub const MAX_PAYLOAD: usize = 1 << 28;
pub const SUM_REPORT_PAYLOAD: usize = 2 * SlotSum::BYTES;

const TAG_SETUP: u8 = 1;
const TAG_VERIFY_REQUEST: u8 = 2;
const TAG_MASKED_RESPONSE: u8 = 3;
const TAG_SUM_REPORT: u8 = 4;
const TAG_DECISION_NOTICE: u8 = 5;

/// Public parameters and evaluation keys, sent by the client.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Setup {
    pub params: HeParams,
    pub pbh: PbhParams,
    pub cwc: CwcParams,
    pub public: PublicKey,
    pub relin: RelinKey,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Message {
    Setup(Box<Setup>),
    /// Serialized [`Query`] and the escrow ciphertext.
    VerifyRequest { query: Vec<u8>, le_ct: Vec<u8> },
    /// One blinded ciphertext per list.
    MaskedResponse { black: Vec<u8>, grey: Vec<u8> },
    SumReport { black: SlotSum, grey: SlotSum },
    DecisionNotice(Decision),
}

impl Message {
    pub fn tag(&self) -> u8 {
        match self {
            Message::Setup(_) => TAG_SETUP,
            Message::VerifyRequest { .. } => TAG_VERIFY_REQUEST,
            Message::MaskedResponse { .. } => TAG_MASKED_RESPONSE,
            Message::SumReport { .. } => TAG_SUM_REPORT,
            Message::DecisionNotice(_) => TAG_DECISION_NOTICE,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Message::Setup(_) => "Setup",
            Message::VerifyRequest { .. } => "VerifyRequest",
            Message::MaskedResponse { .. } => "MaskedResponse",
            Message::SumReport { .. } => "SumReport",
            Message::DecisionNotice(_) => "DecisionNotice",
        }
    }

    fn payload(&self) -> Vec<u8> {
        let mut w = Vec::new();
        match self {
            Message::Setup(s) => {
                put_params(&mut w, &s.params);
                w.extend_from_slice(&(s.pbh.slots() as u32).to_le_bytes());
                w.push(s.pbh.lambda() as u8);
                w.extend_from_slice(&s.pbh.perm_key());
                w.push(s.cwc.h as u8);
                w.push(s.cwc.lambda_bar as u8);
                w.extend_from_slice(&s.cwc.l.to_le_bytes());
                put_blob(&mut w, &s.public.to_bytes());
                put_blob(&mut w, &s.relin.to_bytes());
            }
            Message::VerifyRequest { query, le_ct } => {
                put_blob(&mut w, query);
                put_blob(&mut w, le_ct);
            }
            Message::MaskedResponse { black, grey } => {
                put_blob(&mut w, black);
                put_blob(&mut w, grey);
            }
            Message::SumReport { black, grey } => {
                w.extend_from_slice(&black.to_bytes());
                w.extend_from_slice(&grey.to_bytes());
            }
            Message::DecisionNotice(d) => w.push(match d {
                Decision::NotListed => 0,
                Decision::Listed(ListKind::Blacklist) => 1,
                Decision::Listed(ListKind::Greylist) => 2,
                Decision::NonEvaluable => 3,
            }),
        }
        w
    }

    /// Length of [`Message::to_frame`] without building it.
    pub fn frame_len(&self) -> usize {
        HEADER_LEN
            + match self {
                Message::Setup(s) => {
                    let p = &s.params;
                    4 + 8 + 1 + 8 * p.coeff_modulus.len() + 8 + 4 + 1 + 4 + 1 + 16 + 1 + 1 + 8
                        + 4
                        + s.public.to_bytes().len()
                        + 4
                        + s.relin.to_bytes().len()
                }
                Message::VerifyRequest { query, le_ct } => 8 + query.len() + le_ct.len(),
                Message::MaskedResponse { black, grey } => 8 + black.len() + grey.len(),
                Message::SumReport { .. } => SUM_REPORT_PAYLOAD,
                Message::DecisionNotice(_) => 1,
            }
    }

    pub fn to_frame(&self) -> Vec<u8> {
        let payload = self.payload();
        let mut out = Vec::with_capacity(HEADER_LEN + payload.len());
        out.push(WIRE_VERSION);
        out.push(self.tag());
        out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
        out.extend_from_slice(&payload);
        out
    }

    /// Parses one frame from the front of `bytes`; returns the message and
    /// the number of bytes consumed.
    pub fn from_frame(bytes: &[u8]) -> Result<(Message, usize), Error> {
        let (version, tag, len) = parse_header(bytes, 0)?;
        if bytes.len() < HEADER_LEN + len {
            return Err(wire_err(bytes.len(), format!("truncated frame: need {} payload bytes", len)));
        }
        let m = Message::from_payload(version, tag, &bytes[HEADER_LEN..HEADER_LEN + len])?;
        Ok((m, HEADER_LEN + len))
    }

    fn from_payload(version: u8, tag: u8, p: &[u8]) -> Result<Message, Error> {
        debug_assert_eq!(version, WIRE_VERSION);
        let mut r = Cursor { buf: p, pos: 0, base: HEADER_LEN };
        let m = match tag {
            TAG_SETUP => {
                let params = get_params(&mut r)?;
                let slots = r.u32()? as usize;
                let lambda = r.u8()? as u32;
                let key: [u8; 16] = r.take(16)?.try_into().unwrap();
                let pbh = PbhParams::new(slots, lambda, key).map_err(|e| r.err(e.to_string()))?;
                let h = r.u8()? as u32;
                let lambda_bar = r.u8()? as u32;
                let l = r.u64()?;
                let cwc = CwcParams { h, l, lambda_bar };
                if CwcParams::minimal(lambda_bar, h).ok() != Some(cwc) {
                    return Err(r.err("codeword parameters are not minimal".into()));
                }
                let (public, _) = PublicKey::from_bytes(r.blob()?)?;
                let (relin, _) = RelinKey::from_bytes(r.blob()?)?;
                Message::Setup(Box::new(Setup {
                    params,
                    pbh,
                    cwc,
                    public,
                    relin,
                }))
            }
            TAG_VERIFY_REQUEST => Message::VerifyRequest {
                query: r.blob()?.to_vec(),
                le_ct: r.blob()?.to_vec(),
            },
            TAG_MASKED_RESPONSE => Message::MaskedResponse {
                black: r.blob()?.to_vec(),
                grey: r.blob()?.to_vec(),
            },
            TAG_SUM_REPORT => Message::SumReport {
                black: SlotSum::from_bytes(r.take(8)?.try_into().unwrap()),
                grey: SlotSum::from_bytes(r.take(8)?.try_into().unwrap()),
            },
            TAG_DECISION_NOTICE => Message::DecisionNotice(match r.u8()? {
                0 => Decision::NotListed,
                1 => Decision::Listed(ListKind::Blacklist),
                2 => Decision::Listed(ListKind::Greylist),
                3 => Decision::NonEvaluable,
                d => return Err(r.err(format!("unknown decision code {d}"))),
            }),
            _ => unreachable!("tag checked in header"),
        };
        if r.pos != p.len() {
            return Err(r.err(format!("{} trailing payload bytes", p.len() - r.pos)));
        }
        Ok(m)
    }
}

/// Splits a byte stream into messages, failing at the first bad frame with
/// its offset.
pub fn decode_stream(bytes: &[u8]) -> Result<Vec<Message>, Error> {
    let mut out = Vec::new();
    let mut pos = 0;
    while pos < bytes.len() {
        let (m, used) = Message::from_frame(&bytes[pos..]).map_err(|e| match e {
            Error::Wire(msg) => Error::Wire(format!("frame at offset {pos}: {msg}")),
            other => other,
        })?;
        out.push(m);
        pos += used;
    }
    Ok(out)
}

fn wire_err(offset: usize, msg: String) -> Error {
    Error::Wire(format!("offset {offset}: {msg}"))
}

fn parse_header(bytes: &[u8], offset: usize) -> Result<(u8, u8, usize), Error> {
    if bytes.len() < HEADER_LEN {
        return Err(wire_err(offset + bytes.len(), "truncated header".into()));
    }
    if bytes[0] != WIRE_VERSION {
        return Err(wire_err(offset, format!("unsupported version {}", bytes[0])));
    }
    if !(TAG_SETUP..=TAG_DECISION_NOTICE).contains(&bytes[1]) {
        return Err(wire_err(offset + 1, format!("unknown tag {}", bytes[1])));
    }
    let len = u32::from_le_bytes(bytes[2..6].try_into().unwrap()) as usize;
    if len > MAX_PAYLOAD {
        return Err(wire_err(offset + 2, format!("payload length {len} exceeds limit")));
    }
    if bytes[1] == TAG_SUM_REPORT && len != SUM_REPORT_PAYLOAD {
        return Err(wire_err(offset + 2, format!("sum report payload must be {SUM_REPORT_PAYLOAD} bytes")));
    }
    Ok((bytes[0], bytes[1], len))
}

fn put_blob(w: &mut Vec<u8>, b: &[u8]) {
    w.extend_from_slice(&(b.len() as u32).to_le_bytes());
    w.extend_from_slice(b);
}

fn put_params(w: &mut Vec<u8>, p: &HeParams) {
    w.extend_from_slice(&(p.poly_degree as u32).to_le_bytes());
    w.extend_from_slice(&p.plain_modulus.to_le_bytes());
    w.push(p.coeff_modulus.len() as u8);
    for q in &p.coeff_modulus {
        w.extend_from_slice(&q.to_le_bytes());
    }
    w.extend_from_slice(&p.special_modulus.to_le_bytes());
    w.extend_from_slice(&p.security_level.to_le_bytes());
    w.push(match p.profile {
        Profile::PaperOriginal => 0,
        Profile::DefaultSafe => 1,
        Profile::Custom => 2,
    });
}

fn get_params(r: &mut Cursor<'_>) -> Result<HeParams, Error> {
    let poly_degree = r.u32()? as usize;
    let plain_modulus = r.u64()?;
    let k = r.u8()? as usize;
    let coeff_modulus = (0..k).map(|_| r.u64()).collect::<Result<Vec<_>, _>>()?;
    let special_modulus = r.u64()?;
    let security_level = r.u32()?;
    let profile = match r.u8()? {
        0 => Profile::PaperOriginal,
        1 => Profile::DefaultSafe,
        2 => Profile::Custom,
        p => return Err(r.err(format!("unknown profile code {p}"))),
    };
    let params = HeParams {
        poly_degree,
        plain_modulus,
        coeff_modulus,
        special_modulus,
        security_level,
        profile,
    };
    params.validate()?;
    Ok(params)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
    /// offset of `buf` within the frame, for diagnostics
    base: usize,
}

impl<'a> Cursor<'a> {
    fn err(&self, msg: String) -> Error {
        wire_err(self.base + self.pos, msg)
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], Error> {
        if self.buf.len() - self.pos < n {
            return Err(self.err(format!("truncated payload: need {n} bytes")));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, Error> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, Error> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, Error> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn blob(&mut self) -> Result<&'a [u8], Error> {
        let n = self.u32()? as usize;
        self.take(n)
    }
}

/// Framed bytes per direction for one session.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ByteCounter {
    pub client_to_server: usize,
    pub server_to_client: usize,
}

/// The seven per-session figures. Byte counts are payload sizes of the
/// protocol values (query, blinded ciphertexts, sums), not frame totals;
/// see [`ByteCounter`] for the latter.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SessionMetrics {
    pub client_request_bytes: usize,
    pub server_response_bytes: usize,
    pub client_response_bytes: usize,
    pub ue_offline_ms: f64,
    pub mno_offline_ms: f64,
    pub ue_online_ms: f64,
    pub mno_online_ms: f64,
}

/// What the server recorded about one finished session.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MnoStats {
    pub session_id: [u8; 16],
    pub decision: Decision,
    pub server_response_bytes: usize,
    pub offline_ms: f64,
    pub online_ms: f64,
    pub bytes: ByteCounter,
}

/// What the client recorded about one finished session.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UeStats {
    pub decision: Decision,
    pub client_request_bytes: usize,
    pub client_response_bytes: usize,
    pub offline_ms: f64,
    pub online_ms: f64,
    pub bytes: ByteCounter,
}

pub fn measure(ue: &UeStats, mno: &MnoStats) -> SessionMetrics {
    SessionMetrics {
        client_request_bytes: ue.client_request_bytes,
        server_response_bytes: mno.server_response_bytes,
        client_response_bytes: ue.client_response_bytes,
        ue_offline_ms: ue.offline_ms,
        mno_offline_ms: mno.offline_ms,
        ue_online_ms: ue.online_ms,
        mno_online_ms: mno.online_ms,
    }
}

fn ms_since(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

// ----------------------------------------------------------------- server

#[derive(Clone, Copy, Debug)]
pub struct ServerConfig {
    pub mask_range: MaskRange,
    /// Bytes of encoded plaintexts kept in memory per list.
    pub prepare_budget: usize,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig {
            mask_range: MaskRange::Bounded,
            prepare_budget: DEFAULT_PREPARE_BUDGET,
        }
    }
}

/// Both lists as prepared at one point in time. Sessions hold an `Arc` to
/// the snapshot they started with.
#[derive(Debug)]
pub struct ListSnapshot {
    pub black: PreparedList,
    pub grey: PreparedList,
}

/// Operator state shared by all connections.
pub struct MnoServer {
    params: HeParams,
    pbh: PbhParams,
    cwc: CwcParams,
    config: ServerConfig,
    contexts: Mutex<HashMap<u64, Arc<HeContext>>>,
    lists: RwLock<Arc<ListSnapshot>>,
    audit: Arc<AuditLog>,
    finished: Mutex<Vec<MnoStats>>,
}

impl MnoServer {
    pub fn new(ctx: Arc<HeContext>, registry: &Registry, audit: Arc<AuditLog>, config: ServerConfig) -> Result<Self, Error> {
        let pbh = registry.encoded(ListKind::Blacklist).pbh().clone();
        let cwc = *registry.encoded(ListKind::Blacklist).cwc();
        let snapshot = prepare(&ctx, registry, config.prepare_budget)?;
        let mut contexts = HashMap::new();
        contexts.insert(ctx.params().fingerprint(), ctx.clone());
        Ok(MnoServer {
            params: ctx.params().clone(),
            pbh,
            cwc,
            config,
            contexts: Mutex::new(contexts),
            lists: RwLock::new(Arc::new(snapshot)),
            audit,
            finished: Mutex::new(Vec::new()),
        })
    }

    pub fn context(&self) -> Arc<HeContext> {
        self.contexts.lock().unwrap()[&self.params.fingerprint()].clone()
    }

    /// Replaces the list snapshot; sessions already evaluating keep theirs.
    pub fn install(&self, registry: &Registry) -> Result<(), Error> {
        let snapshot = prepare(&self.context(), registry, self.config.prepare_budget)?;
        *self.lists.write().unwrap() = Arc::new(snapshot);
        Ok(())
    }

    pub fn snapshot(&self) -> Arc<ListSnapshot> {
        self.lists.read().unwrap().clone()
    }

    pub fn audit_log(&self) -> &AuditLog {
        &self.audit
    }

    /// Stats of every session that reached `Done`, in completion order.
    pub fn finished_sessions(&self) -> Vec<MnoStats> {
        self.finished.lock().unwrap().clone()
    }

    pub fn session(&self) -> MnoSession<'_> {
        MnoSession {
            server: self,
            keys: None,
            state: SessionState::AwaitSetup,
            bytes: ByteCounter::default(),
            completed: None,
        }
    }

    fn accept_setup(&self, s: &Setup) -> Result<(Arc<HeContext>, ServerKeys), Error> {
        if s.params != self.params {
            return Err(Error::Protocol("client parameters differ from the operator's".into()));
        }
        if s.pbh != self.pbh || s.cwc != self.cwc {
            return Err(Error::Protocol("client encoding parameters differ from the operator's".into()));
        }
        let ctx = self
            .contexts
            .lock()
            .unwrap()
            .entry(s.params.fingerprint())
            .or_insert_with(|| Arc::new(HeContext::new(s.params.clone()).expect("validated parameters")))
            .clone();
        if s.public.context_id() != ctx.id() || s.relin.context_id() != ctx.id() {
            return Err(Error::Protocol("keys were generated for other parameters".into()));
        }
        Ok((
            ctx,
            ServerKeys {
                public: s.public.clone(),
                relin: s.relin.clone(),
            },
        ))
    }
}

fn prepare(ctx: &HeContext, registry: &Registry, budget: usize) -> Result<ListSnapshot, Error> {
    let prep = |kind| PreparedList::new(ctx, kind, Arc::new(registry.encoded(kind).clone()), budget);
    let (black, grey) = par::join(|| prep(ListKind::Blacklist), || prep(ListKind::Greylist));
    Ok(ListSnapshot {
        black: black?,
        grey: grey?,
    })
}

enum SessionState {
    AwaitSetup,
    AwaitRequest,
    AwaitSum(Box<Pending>),
    Done,
}

struct Pending {
    session_id: [u8; 16],
    black: MaskingState,
    grey: MaskingState,
    le_ct: LeCiphertext,
    offline_ms: f64,
    online_ms: f64,
    response_bytes: usize,
}

impl SessionState {
    fn name(&self) -> &'static str {
        match self {
            SessionState::AwaitSetup => "AwaitSetup",
            SessionState::AwaitRequest => "AwaitRequest",
            SessionState::AwaitSum(_) => "AwaitSum",
            SessionState::Done => "Done",
        }
    }
}

/// Server side of one connection: a Setup followed by any number of
/// request/response/sum/notice sessions.
pub struct MnoSession<'a> {
    server: &'a MnoServer,
    keys: Option<(Arc<HeContext>, ServerKeys)>,
    state: SessionState,
    bytes: ByteCounter,
    completed: Option<MnoStats>,
}

impl MnoSession<'_> {
    /// Advances the state machine by one client message that arrived as a
    /// frame of `inbound` bytes. An error means the session is aborted; the
    /// caller should answer with `DecisionNotice(NonEvaluable)` and drop the
    /// connection.
    pub fn handle<R: CryptoRng + ?Sized>(
        &mut self,
        msg: Message,
        inbound: usize,
        rng: &mut R,
    ) -> Result<Option<Message>, Error> {
        let reply = self.step(msg, rng)?;
        self.bytes.client_to_server += inbound;
        if let Some(r) = &reply {
            self.bytes.server_to_client += r.frame_len();
        }
        if let Some(mut stats) = self.completed.take() {
            stats.bytes = self.bytes;
            self.server.finished.lock().unwrap().push(stats);
        }
        Ok(reply)
    }

    fn step<R: CryptoRng + ?Sized>(&mut self, msg: Message, rng: &mut R) -> Result<Option<Message>, Error> {
        let state = std::mem::replace(&mut self.state, SessionState::Done);
        match (state, msg) {
            (SessionState::AwaitSetup, Message::Setup(s)) => {
                self.keys = Some(self.server.accept_setup(&s)?);
                self.state = SessionState::AwaitRequest;
                Ok(None)
            }
            (SessionState::AwaitRequest | SessionState::Done, Message::VerifyRequest { query, le_ct }) => {
                let pending = self.evaluate(&query, le_ct, rng)?;
                let reply = Message::MaskedResponse {
                    black: pending.1,
                    grey: pending.2,
                };
                self.state = SessionState::AwaitSum(Box::new(pending.0));
                Ok(Some(reply))
            }
            (SessionState::AwaitSum(p), Message::SumReport { black, grey }) => {
                let start = Instant::now();
                let decision = decide(demask(black, &p.black), demask(grey, &p.grey));
                let online_ms = p.online_ms + ms_since(start);
                forward_on_greylist(decision, &p.le_ct, p.session_id, &self.server.audit)?;
                self.completed = Some(MnoStats {
                    session_id: p.session_id,
                    decision,
                    server_response_bytes: p.response_bytes,
                    offline_ms: p.offline_ms,
                    online_ms,
                    bytes: ByteCounter::default(),
                });
                self.state = SessionState::Done;
                Ok(Some(Message::DecisionNotice(decision)))
            }
            (state, msg) => Err(Error::Protocol(format!("unexpected {} in state {}", msg.name(), state.name()))),
        }
    }

    fn evaluate<R: CryptoRng + ?Sized>(
        &mut self,
        query: &[u8],
        le_ct: Vec<u8>,
        rng: &mut R,
    ) -> Result<(Pending, Vec<u8>, Vec<u8>), Error> {
        let (ctx, keys) = self.keys.as_ref().expect("setup precedes requests");
        if le_ct.len() != LE_CIPHERTEXT_LEN {
            return Err(Error::Protocol(format!("escrow ciphertext has {} bytes", le_ct.len())));
        }
        let (q, used) = Query::from_bytes(ctx, query)?;
        if used != query.len() {
            return Err(Error::Protocol("trailing bytes after query".into()));
        }
        let snapshot = self.server.snapshot();

        let start = Instant::now();
        let t = ctx.plain_modulus();
        let slots = ctx.slot_count();
        let black_ms = sample_masks(t, slots, self.server.config.mask_range, rng);
        let grey_ms = sample_masks(t, slots, self.server.config.mask_range, rng);
        let mut session_id = [0u8; 16];
        rng.fill_bytes(&mut session_id);
        let offline_ms = ms_since(start);

        let start = Instant::now();
        let eval = |list: &PreparedList, ms: &MaskingState| psi_sum(ctx, &q, list, ms, &keys.relin, &keys.public);
        let (black, grey) = par::join(|| eval(&snapshot.black, &black_ms), || eval(&snapshot.grey, &grey_ms));
        let (black, grey) = (black?.ct.to_bytes(), grey?.ct.to_bytes());
        let online_ms = ms_since(start);

        self.bytes = ByteCounter::default();
        let pending = Pending {
            session_id,
            black: black_ms,
            grey: grey_ms,
            le_ct: LeCiphertext(le_ct),
            offline_ms,
            online_ms,
            response_bytes: black.len() + grey.len(),
        };
        Ok((pending, black, grey))
    }
}

// ----------------------------------------------------------------- client

/// Everything a device keeps between sessions.
pub struct UeClient {
    ctx: Arc<HeContext>,
    keys: KeyMaterial,
    pbh: PbhParams,
    cwc: CwcParams,
    le_public: LePublicKey,
}

/// Client state between sending a request and receiving the response.
pub struct UeSession<'a> {
    client: &'a UeClient,
    offline_ms: f64,
    online_ms: f64,
    request_bytes: usize,
    state: UeState,
}

enum UeState {
    AwaitResponse,
    AwaitNotice,
    Done(Decision),
}

impl UeClient {
    pub fn new(ctx: Arc<HeContext>, keys: KeyMaterial, pbh: PbhParams, cwc: CwcParams, le_public: LePublicKey) -> Self {
        UeClient {
            ctx,
            keys,
            pbh,
            cwc,
            le_public,
        }
    }

    pub fn context(&self) -> &HeContext {
        &self.ctx
    }

    pub fn setup(&self) -> Message {
        Message::Setup(Box::new(Setup {
            params: self.ctx.params().clone(),
            pbh: self.pbh.clone(),
            cwc: self.cwc,
            public: self.keys.public.clone(),
            relin: self.keys.relin.clone(),
        }))
    }

    /// Builds the request for `pei`. Query construction counts as the
    /// client's offline phase.
    pub fn start<R: CryptoRng + ?Sized>(&self, pei: Pei, rng: &mut R) -> Result<(UeSession<'_>, Message), Error> {
        let start = Instant::now();
        let query = build_query(&self.ctx, &self.keys.secret, &self.pbh, &self.cwc, pei, rng)?.to_bytes();
        let le_ct = crate::le_hook::le_encrypt(pei, &self.le_public, rng).0;
        let offline_ms = ms_since(start);
        let session = UeSession {
            client: self,
            offline_ms,
            online_ms: 0.0,
            request_bytes: query.len(),
            state: UeState::AwaitResponse,
        };
        Ok((session, Message::VerifyRequest { query, le_ct }))
    }
}

impl UeSession<'_> {
    /// Feeds one server message; returns the reply to send, if any.
    pub fn handle(&mut self, msg: Message) -> Result<Option<Message>, Error> {
        match (&self.state, msg) {
            (UeState::AwaitResponse, Message::MaskedResponse { black, grey }) => {
                let start = Instant::now();
                let ctx = &self.client.ctx;
                let sum = |bytes: &[u8]| -> Result<SlotSum, Error> {
                    let (ct, used) = ctx.cipher_from_bytes(bytes)?;
                    if used != bytes.len() {
                        return Err(Error::Protocol("trailing bytes after response".into()));
                    }
                    let y = ctx.decrypt(&ct, &self.client.keys.secret)?;
                    Ok(client_aggregate(&y, ctx.plain_modulus()))
                };
                let reply = Message::SumReport {
                    black: sum(&black)?,
                    grey: sum(&grey)?,
                };
                self.online_ms = ms_since(start);
                self.state = UeState::AwaitNotice;
                Ok(Some(reply))
            }
            (UeState::AwaitNotice | UeState::AwaitResponse, Message::DecisionNotice(d)) => {
                self.state = UeState::Done(d);
                Ok(None)
            }
            (_, msg) => Err(Error::Protocol(format!("client did not expect {}", msg.name()))),
        }
    }

    pub fn decision(&self) -> Option<Decision> {
        match self.state {
            UeState::Done(d) => Some(d),
            _ => None,
        }
    }

    pub fn stats(&self, bytes: ByteCounter) -> Option<UeStats> {
        Some(UeStats {
            decision: self.decision()?,
            client_request_bytes: self.request_bytes,
            client_response_bytes: SUM_REPORT_PAYLOAD,
            offline_ms: self.offline_ms,
            online_ms: self.online_ms,
            bytes,
        })
    }
}

/// Runs one full session in-process, passing every message through its
/// wire encoding.
pub fn run_local_session<R: CryptoRng + ?Sized>(
    server: &MnoServer,
    client: &UeClient,
    pei: Pei,
    rng: &mut R,
) -> Result<(Decision, SessionMetrics), Error> {
    let wire = |m: &Message| -> Result<(Message, usize), Error> { Message::from_frame(&m.to_frame()) };
    let mut mno = server.session();
    let (setup, n) = wire(&client.setup())?;
    mno.handle(setup, n, rng)?;

    let mut bytes = ByteCounter::default();
    let (mut ue, request) = client.start(pei, rng)?;
    let mut outbound = Some(request);
    while let Some(m) = outbound.take() {
        let (m, inbound) = wire(&m)?;
        bytes.client_to_server += inbound;
        let reply = mno.handle(m, inbound, rng)?.expect("requests and sums are answered");
        let (reply, out) = wire(&reply)?;
        bytes.server_to_client += out;
        outbound = ue.handle(reply)?;
    }
    let stats = ue.stats(bytes).ok_or_else(|| Error::Protocol("session ended without a decision".into()))?;
    let mno_stats = *server.finished.lock().unwrap().last().expect("session finished");
    Ok((stats.decision, measure(&stats, &mno_stats)))
}

// -------------------------------------------------------------------- tcp

fn write_message(stream: &mut TcpStream, m: &Message) -> Result<usize, Error> {
    let frame = m.to_frame();
    stream.write_all(&frame).map_err(io_err)?;
    Ok(frame.len())
}

/// Reads one frame; `Ok(None)` on a clean end of stream.
fn read_message(stream: &mut TcpStream) -> Result<Option<(Message, usize)>, Error> {
    let mut header = [0u8; HEADER_LEN];
    let mut got = 0;
    while got < HEADER_LEN {
        match stream.read(&mut header[got..]).map_err(io_err)? {
            0 if got == 0 => return Ok(None),
            0 => return Err(wire_err(got, "connection closed inside a header".into())),
            n => got += n,
        }
    }
    let (_, _, len) = parse_header(&header, 0)?;
    let mut frame = header.to_vec();
    frame.resize(HEADER_LEN + len, 0);
    stream
        .read_exact(&mut frame[HEADER_LEN..])
        .map_err(|e| wire_err(HEADER_LEN, format!("truncated frame: {e}")))?;
    Message::from_frame(&frame).map(Some)
}

fn io_err(e: std::io::Error) -> Error {
    Error::Io(e.to_string())
}

fn serve_connection(mut stream: TcpStream, server: &MnoServer) -> Result<(), Error> {
    let mut rng = rand::rng();
    let mut session = server.session();
    while let Some((msg, inbound)) = read_message(&mut stream)? {
        match session.handle(msg, inbound, &mut rng) {
            Ok(Some(reply)) => {
                write_message(&mut stream, &reply)?;
            }
            Ok(None) => {}
            Err(e) => {
                let _ = write_message(&mut stream, &Message::DecisionNotice(Decision::NonEvaluable));
                return Err(e);
            }
        }
    }
    Ok(())
}

/// Accepts connections until `stop` is set, one thread per connection.
pub fn run_server(listener: TcpListener, server: Arc<MnoServer>, stop: Arc<AtomicBool>) -> Result<(), Error> {
    for conn in listener.incoming() {
        if stop.load(Ordering::SeqCst) {
            break;
        }
        let stream = match conn {
            Ok(s) => s,
            Err(_) => continue,
        };
        let server = server.clone();
        thread::spawn(move || {
            let peer = stream.peer_addr().ok();
            if let Err(e) = serve_connection(stream, &server) {
                eprintln!("session with {peer:?} aborted: {e}");
            }
        });
    }
    Ok(())
}

/// A server on a background thread, for tests and benchmarks.
pub struct ServerHandle {
    pub addr: SocketAddr,
    stop: Arc<AtomicBool>,
    thread: Option<thread::JoinHandle<Result<(), Error>>>,
}

impl ServerHandle {
    pub fn spawn(addr: impl ToSocketAddrs, server: Arc<MnoServer>) -> Result<Self, Error> {
        let listener = TcpListener::bind(addr).map_err(io_err)?;
        let addr = listener.local_addr().map_err(io_err)?;
        let stop = Arc::new(AtomicBool::new(false));
        let flag = stop.clone();
        let thread = thread::spawn(move || run_server(listener, server, flag));
        Ok(ServerHandle {
            addr,
            stop,
            thread: Some(thread),
        })
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // wake the accept loop
        let _ = TcpStream::connect(self.addr);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

/// A client connection that has completed Setup.
pub struct UeConnection<'a> {
    client: &'a UeClient,
    stream: TcpStream,
}

impl<'a> UeConnection<'a> {
    pub fn connect(addr: impl ToSocketAddrs, client: &'a UeClient) -> Result<Self, Error> {
        let mut stream = TcpStream::connect(addr).map_err(io_err)?;
        stream.set_nodelay(true).map_err(io_err)?;
        write_message(&mut stream, &client.setup())?;
        Ok(UeConnection { client, stream })
    }

    /// One verification session over this connection.
    pub fn verify<R: CryptoRng + ?Sized>(&mut self, pei: Pei, rng: &mut R) -> Result<UeStats, Error> {
        let mut bytes = ByteCounter::default();
        let (mut session, request) = self.client.start(pei, rng)?;
        bytes.client_to_server += write_message(&mut self.stream, &request)?;
        while session.decision().is_none() {
            let (msg, n) = read_message(&mut self.stream)?
                .ok_or_else(|| Error::Protocol("server closed the connection".into()))?;
            bytes.server_to_client += n;
            if let Some(reply) = session.handle(msg)? {
                bytes.client_to_server += write_message(&mut self.stream, &reply)?;
            }
        }
        Ok(session.stats(bytes).expect("decided"))
    }

    /// Sends an arbitrary message, for exercising the server's checks.
    pub fn send_raw(&mut self, m: &Message) -> Result<(), Error> {
        write_message(&mut self.stream, m).map(|_| ())
    }

    pub fn receive(&mut self) -> Result<Option<Message>, Error> {
        Ok(read_message(&mut self.stream)?.map(|(m, _)| m))
    }
}

/// Connects, runs one session, and disconnects.
pub fn run_client<R: CryptoRng + ?Sized>(
    addr: impl ToSocketAddrs,
    client: &UeClient,
    pei: Pei,
    rng: &mut R,
) -> Result<UeStats, Error> {
    UeConnection::connect(addr, client)?.verify(pei, rng)
}
