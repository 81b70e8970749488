//! Encrypted queries, the equality circuit, masking and demasking.

use std::borrow::Cow;
use std::fmt;
use std::sync::Arc;

use peipsm_bfv::modulus::Modulus;
use peipsm_bfv::{uniform_below, Cipher, HeContext, PlainVec, Plaintext, PublicKey, RelinKey, SecretKey};
use rand::CryptoRng;

use crate::encoding::{CwcParams, PbhParams, Pei};
use crate::registry::{EncodedList, ListKind};
use crate::{par, Error};

/// `l` ciphertexts; plane `j` holds codeword bit `j` in the client's slot
/// and zero elsewhere.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Query {
    pub bits: Vec<Cipher>,
}

impl Query {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.serialized_len());
        out.extend_from_slice(&(self.bits.len() as u32).to_le_bytes());
        for c in &self.bits {
            out.extend_from_slice(&c.to_bytes());
        }
        out
    }

    pub fn serialized_len(&self) -> usize {
        4 + self.bits.iter().map(Cipher::serialized_len).sum::<usize>()
    }

    pub fn from_bytes(ctx: &HeContext, bytes: &[u8]) -> Result<(Self, usize), Error> {
        if bytes.len() < 4 {
            return Err(Error::Wire("truncated query".into()));
        }
        let count = u32::from_le_bytes(bytes[..4].try_into().unwrap()) as usize;
        let mut pos = 4;
        let mut bits = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let (c, used) = ctx.cipher_from_bytes(&bytes[pos..])?;
            pos += used;
            bits.push(c);
        }
        Ok((Query { bits }, pos))
    }
}

/// Encrypts the client's codeword, one ciphertext per bit position.
pub fn build_query<R: CryptoRng + ?Sized>(
    ctx: &HeContext,
    sk: &SecretKey,
    pbh: &PbhParams,
    cwc: &CwcParams,
    pei: Pei,
    rng: &mut R,
) -> Result<Query, Error> {
    check_slots(ctx, pbh)?;
    let (slot, res) = pbh.map(pei.value())?;
    let cw = cwc.encode(res)?;
    let n = ctx.slot_count();
    let bits = cw
        .bits()
        .iter()
        .map(|&b| {
            let mut v = vec![0u64; n];
            v[slot] = b as u64;
            ctx.encrypt_symmetric(&PlainVec(v), sk, rng)
        })
        .collect::<Result<_, _>>()?;
    Ok(Query { bits })
}

fn check_slots(ctx: &HeContext, pbh: &PbhParams) -> Result<(), Error> {
    if ctx.slot_count() != pbh.slots() {
        return Err(Error::Params(format!(
            "hashing uses {} slots but the ciphertexts have {}",
            pbh.slots(),
            ctx.slot_count()
        )));
    }
    Ok(())
}

/// A list's bit-planes ready for ciphertext-plaintext products.
///
/// Planes are encoded up front when they fit in the memory budget and on
/// demand otherwise; all-zero planes are skipped either way.
#[derive(Debug)]
pub struct PreparedList {
    kind: ListKind,
    encoded: Arc<EncodedList>,
    /// `planes[row][j]`, `None` for all-zero planes
    planes: Option<Vec<Vec<Option<Plaintext>>>>,
}

/// Default cap on eagerly encoded planes, in bytes.
pub const DEFAULT_PREPARE_BUDGET: usize = 1 << 30;

impl PreparedList {
    pub fn new(ctx: &HeContext, kind: ListKind, encoded: Arc<EncodedList>, budget: usize) -> Result<Self, Error> {
        check_slots(ctx, encoded.pbh())?;
        let plane_bytes = ctx.max_level() * ctx.slot_count() * 8;
        let total = encoded.row_count() * encoded.cwc().l as usize * plane_bytes;
        let planes = if total <= budget {
            Some(par::map_indices(encoded.row_count(), |r| encode_row(ctx, &encoded, r)))
        } else {
            None
        };
        Ok(PreparedList { kind, encoded, planes })
    }

    pub fn kind(&self) -> ListKind {
        self.kind
    }

    pub fn encoded(&self) -> &Arc<EncodedList> {
        &self.encoded
    }

    pub fn row_count(&self) -> usize {
        self.encoded.row_count()
    }

    pub fn is_eager(&self) -> bool {
        self.planes.is_some()
    }

    /// Swaps in a refreshed encoding, re-encoding only `rows`.
    pub fn update(&mut self, ctx: &HeContext, encoded: Arc<EncodedList>, rows: &[usize]) {
        if let Some(planes) = &mut self.planes {
            planes.truncate(encoded.row_count());
            while planes.len() < encoded.row_count() {
                planes.push(Vec::new());
            }
            let fresh = par::map_indices(rows.len(), |i| encode_row(ctx, &encoded, rows[i]));
            for (&r, p) in rows.iter().zip(fresh) {
                planes[r] = p;
            }
        }
        self.encoded = encoded;
    }

    fn row(&self, ctx: &HeContext, r: usize) -> Cow<'_, [Option<Plaintext>]> {
        match &self.planes {
            Some(p) => Cow::Borrowed(&p[r]),
            None => Cow::Owned(encode_row(ctx, &self.encoded, r)),
        }
    }
}

fn encode_row(ctx: &HeContext, enc: &EncodedList, r: usize) -> Vec<Option<Plaintext>> {
    (0..enc.cwc().l as usize)
        .map(|j| {
            let plane = enc.plane(r, j);
            if plane.iter().all(|&b| b == 0) {
                None
            } else {
                Some(ctx.encode(&PlainVec(plane)).expect("0/1 planes are valid plaintexts"))
            }
        })
        .collect()
}

/// `sum_j bits_j * plane_j`; `None` when every plane is zero.
fn inner_product(ctx: &HeContext, q: &Query, planes: &[Option<Plaintext>]) -> Result<Option<Cipher>, Error> {
    let mut cts = Vec::new();
    let mut pts = Vec::new();
    for (c, p) in q.bits.iter().zip(planes) {
        if let Some(p) = p {
            cts.push(c.clone());
            pts.push(p);
        }
    }
    if cts.is_empty() {
        return Ok(None);
    }
    Ok(Some(ctx.dot_plain(&cts, &pts)?))
}

fn factorial_inverse(t: u64, h: u32) -> Result<u64, Error> {
    let m = Modulus::new(t);
    let f = (1..=h as u64).fold(1u64, |a, k| m.mul(a, k % t));
    m.inv(f).filter(|_| f != 0).ok_or_else(|| Error::Params(format!("{h}! is not invertible modulo {t}")))
}

/// Balanced product; only the final multiplication skips relinearization.
fn product_tree(ctx: &HeContext, mut layer: Vec<Cipher>, rk: &RelinKey) -> Result<Cipher, Error> {
    while layer.len() > 1 {
        let last_level = layer.len() == 2;
        let mut next = Vec::with_capacity(layer.len().div_ceil(2));
        let mut it = layer.chunks(2);
        for pair in &mut it {
            match pair {
                [a, b] if last_level => next.push(ctx.mul_no_relin(a, b)?),
                [a, b] => next.push(ctx.multiply(a, b, rk)?),
                [a] => next.push(a.clone()),
                _ => unreachable!(),
            }
        }
        layer = next;
    }
    Ok(layer.pop().expect("non-empty product"))
}

/// `prod_{k<h} (x - k)`, possibly left unrelinearized.
///
/// For even `h` the factors pair up as `(x - k)(x - (h-1-k)) = y + k(h-1-k)`
/// with `y = x^2 - (h-1)x`, and pairs of those share `z = y^2`. At `h = 8`
/// this needs three ciphertext products.
fn falling_factorial(ctx: &HeContext, x: &Cipher, h: u32, rk: &RelinKey) -> Result<Cipher, Error> {
    let t = ctx.plain_modulus();
    let shift = |c: &Cipher, k: u64| ctx.add_scalar(c, (t - k % t) % t);
    if h == 1 {
        return Ok(x.clone());
    }
    if h % 2 == 1 || h == 2 {
        let factors = (0..h as u64).map(|k| shift(x, k)).collect::<Result<Vec<_>, _>>()?;
        return product_tree(ctx, factors, rk);
    }
    let h = h as u64;
    let sq = ctx.square(x, rk)?;
    let y = ctx.sub(&sq, &ctx.mul_scalar(x, h - 1)?)?;
    let consts: Vec<u64> = (0..h / 2).map(|k| k * (h - 1 - k) % t).collect();
    let quads = consts.len() / 2;
    let leftover = consts.len() % 2 == 1;
    let add_quad = |z: &Cipher, a: u64, b: u64| -> Result<Cipher, Error> {
        let lin = ctx.mul_scalar(&y, (a + b) % t)?;
        Ok(ctx.add_scalar(&ctx.add(z, &lin)?, a * b % t)?)
    };
    if quads == 1 && !leftover {
        let z = ctx.mul_no_relin(&y, &y)?;
        return add_quad(&z, consts[0], consts[1]);
    }
    let z = ctx.square(&y, rk)?;
    let mut factors = Vec::with_capacity(quads + 1);
    for pair in consts.chunks_exact(2) {
        factors.push(add_quad(&z, pair[0], pair[1])?);
    }
    if leftover {
        factors.push(ctx.add_scalar(&y, *consts.last().unwrap())?);
    }
    product_tree(ctx, factors, rk)
}

/// Equality indicator for one row: slot `s` decrypts to 1 exactly when the
/// query's codeword sits in `s` and equals the row's codeword there.
pub fn eval_equality_row(
    ctx: &HeContext,
    q: &Query,
    row_planes: &[PlainVec],
    cwc: &CwcParams,
    rk: &RelinKey,
) -> Result<Cipher, Error> {
    if row_planes.len() != q.bits.len() || q.bits.len() as u64 != cwc.l {
        return Err(Error::Params("plane count does not match codeword length".into()));
    }
    let planes = row_planes
        .iter()
        .map(|p| {
            if p.0.iter().all(|&v| v == 0) {
                Ok(None)
            } else {
                ctx.encode(p).map(Some)
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    let x = match inner_product(ctx, q, &planes)? {
        Some(x) => x,
        None => ctx.mul_scalar(&q.bits[0], 0)?,
    };
    let num = falling_factorial(ctx, &x, cwc.h, rk)?;
    let num = ctx.relinearize(&num, rk)?;
    Ok(ctx.mul_scalar(&num, factorial_inverse(ctx.plain_modulus(), cwc.h)?)?)
}

/// How the server draws its masks.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MaskRange {
    /// `r1` in `[1, t/2 - 1]`, `r2_i` in `[0, t/2 - 1]`
    Bounded,
    /// `r1` in `[1, t - 1]`, `r2_i` in `[0, t - 1]`
    Full,
}

/// Per-query blinding secrets. Never leaves the server.
#[derive(Clone)]
pub struct MaskingState {
    t: u64,
    r1: u64,
    r2: Vec<u64>,
    big_r2: u64,
}

impl fmt::Debug for MaskingState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MaskingState").field("t", &self.t).finish_non_exhaustive()
    }
}

impl MaskingState {
    /// Builds a state from explicit values; `R2` is derived.
    pub fn from_parts(t: u64, r1: u64, r2: Vec<u64>) -> Self {
        let big_r2 = r2.iter().fold(0u64, |a, &v| (a + v) % t);
        MaskingState { t, r1, r2, big_r2 }
    }

    pub fn r1(&self) -> u64 {
        self.r1
    }

    pub fn r2(&self) -> &[u64] {
        &self.r2
    }

    pub fn big_r2(&self) -> u64 {
        self.big_r2
    }

    pub fn plain_modulus(&self) -> u64 {
        self.t
    }
}

/// Size of the multiplicative mask space under bounded sampling.
pub fn t_eff(t: u64) -> u64 {
    t / 2 - 1
}

pub fn sample_masks<R: CryptoRng + ?Sized>(t: u64, slots: usize, range: MaskRange, rng: &mut R) -> MaskingState {
    let (r1_span, r2_span) = match range {
        MaskRange::Bounded => (t_eff(t), t / 2),
        MaskRange::Full => (t - 1, t),
    };
    let r1 = 1 + uniform_below(rng, r1_span);
    let r2 = (0..slots).map(|_| uniform_below(rng, r2_span)).collect();
    MaskingState::from_parts(t, r1, r2)
}

/// Blinded per-slot results for one list.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskedResult {
    pub ct: Cipher,
}

/// Server evaluation for one list: sum of row indicators, scaled by `r1`,
/// shifted by `r2`, reduced to the smallest modulus.
pub fn psi_sum(
    ctx: &HeContext,
    q: &Query,
    list: &PreparedList,
    ms: &MaskingState,
    rk: &RelinKey,
    pk: &PublicKey,
) -> Result<MaskedResult, Error> {
    let cwc = *list.encoded().cwc();
    if q.bits.len() as u64 != cwc.l {
        return Err(Error::Params(format!("query has {} planes, expected {}", q.bits.len(), cwc.l)));
    }
    if ms.t != ctx.plain_modulus() || ms.r2.len() != ctx.slot_count() {
        return Err(Error::Params("masking state does not match parameters".into()));
    }
    let rows = par::map_indices(list.row_count(), |r| -> Result<Option<Cipher>, Error> {
        let planes = list.row(ctx, r);
        match inner_product(ctx, q, &planes)? {
            Some(x) => Ok(Some(falling_factorial(ctx, &x, cwc.h, rk)?)),
            None => Ok(None),
        }
    });
    let mut acc: Option<Cipher> = None;
    for row in rows {
        if let Some(c) = row? {
            match &mut acc {
                None => acc = Some(c),
                Some(a) => ctx.add_assign(a, &c)?,
            }
        }
    }
    let sum = match acc {
        Some(a) => ctx.relinearize(&a, rk)?,
        // nothing listed: a fresh encryption of zero keeps the response well formed
        None => ctx.encrypt(&PlainVec::zeros(ctx.slot_count()), pk, &mut rand::rng())?,
    };
    let scale = Modulus::new(ctx.plain_modulus()).mul(ms.r1, factorial_inverse(ctx.plain_modulus(), cwc.h)?);
    let scaled = ctx.mul_scalar(&sum, scale)?;
    let masked = ctx.add_plain(&scaled, &PlainVec(ms.r2.clone()))?;
    let mut low = ctx.mod_switch_to_last(&masked)?;
    ctx.to_coeff(&mut low);
    Ok(MaskedResult { ct: low })
}

/// The client's single reply value for one list.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SlotSum(pub u64);

impl SlotSum {
    pub const BYTES: usize = 8;

    pub fn to_bytes(self) -> [u8; 8] {
        self.0.to_le_bytes()
    }

    pub fn from_bytes(b: [u8; 8]) -> Self {
        SlotSum(u64::from_le_bytes(b))
    }
}

/// `sum_i y'_i mod t`. Plain 64-bit accumulation is exact for `N * t < 2^64`.
pub fn client_aggregate(y: &PlainVec, t: u64) -> SlotSum {
    SlotSum(y.0.iter().sum::<u64>() % t)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Outcome {
    Match,
    NoMatch,
    ProtocolDeviation,
}

pub fn demask(s: SlotSum, ms: &MaskingState) -> Outcome {
    let t = ms.t;
    if s.0 >= t {
        return Outcome::ProtocolDeviation;
    }
    let d = (s.0 + t - ms.big_r2) % t;
    if d == 0 {
        Outcome::NoMatch
    } else if d == ms.r1 {
        Outcome::Match
    } else {
        Outcome::ProtocolDeviation
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Decision {
    NotListed,
    Listed(ListKind),
    NonEvaluable,
}

impl Decision {
    /// Process exit status used by the command-line client.
    pub fn exit_code(self) -> i32 {
        match self {
            Decision::NotListed => 0,
            Decision::Listed(_) => 2,
            Decision::NonEvaluable => 3,
        }
    }

    pub fn grants_access(self) -> bool {
        matches!(self, Decision::NotListed | Decision::Listed(ListKind::Greylist))
    }
}

impl fmt::Display for Decision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Decision::NotListed => f.write_str("not listed"),
            Decision::Listed(k) => write!(f, "listed ({k})"),
            Decision::NonEvaluable => f.write_str("non-evaluable"),
        }
    }
}

pub fn decide(black: Outcome, grey: Outcome) -> Decision {
    use Outcome::*;
    match (black, grey) {
        (ProtocolDeviation, _) | (_, ProtocolDeviation) => Decision::NonEvaluable,
        (Match, _) => Decision::Listed(ListKind::Blacklist),
        (NoMatch, Match) => Decision::Listed(ListKind::Greylist),
        (NoMatch, NoMatch) => Decision::NotListed,
    }
}

/// Probability that at least one of `attempts` uniform guesses of `r1`
/// succeeds, by the union bound.
pub fn forgery_success_bound(t: u64, attempts: u64) -> f64 {
    (attempts as f64 / t_eff(t) as f64).min(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{rngs::StdRng, SeedableRng};

    #[test]
    fn mask_ranges() {
        let t = 1_032_193;
        let mut rng = StdRng::seed_from_u64(1);
        for _ in 0..200 {
            let ms = sample_masks(t, 64, MaskRange::Bounded, &mut rng);
            assert!(ms.r1 >= 1 && ms.r1 <= t / 2 - 1);
            assert!(ms.r2.iter().all(|&r| r <= t / 2 - 1 && ms.r1 + r < t));
        }
        let a = sample_masks(t, 8, MaskRange::Bounded, &mut rng);
        let b = sample_masks(t, 8, MaskRange::Bounded, &mut rng);
        assert_ne!((a.r1, a.r2), (b.r1, b.r2));
    }

    #[test]
    fn aggregation_algebra() {
        let t = 97;
        assert_eq!(client_aggregate(&PlainVec::zeros(8), t), SlotSum(0));
        let ms = MaskingState::from_parts(t, 5, vec![40, 3, 90, 0, 11, 12, 13, 14]);
        let y = PlainVec(ms.r2.clone());
        assert_eq!(client_aggregate(&y, t), SlotSum(ms.big_r2));
        let mut shifted = y.clone();
        shifted.0[2] = (shifted.0[2] + ms.r1) % t;
        assert_eq!(client_aggregate(&shifted, t), SlotSum((ms.big_r2 + ms.r1) % t));
    }

    #[test]
    fn demask_cases() {
        let t = 1_032_193;
        let ms = MaskingState::from_parts(t, 1234, vec![500_000, 400_000, 3]);
        let r2 = ms.big_r2;
        assert_eq!(demask(SlotSum(r2), &ms), Outcome::NoMatch);
        assert_eq!(demask(SlotSum((r2 + 1234) % t), &ms), Outcome::Match);
        assert_eq!(demask(SlotSum((r2 + 1235) % t), &ms), Outcome::ProtocolDeviation);
        assert_eq!(demask(SlotSum(t + r2), &ms), Outcome::ProtocolDeviation);
    }

    #[test]
    fn decision_table() {
        use Outcome::*;
        assert_eq!(decide(NoMatch, NoMatch), Decision::NotListed);
        assert_eq!(decide(Match, NoMatch), Decision::Listed(ListKind::Blacklist));
        assert_eq!(decide(NoMatch, Match), Decision::Listed(ListKind::Greylist));
        assert_eq!(decide(NoMatch, ProtocolDeviation), Decision::NonEvaluable);
        assert_eq!(decide(ProtocolDeviation, Match), Decision::NonEvaluable);
        assert_eq!(decide(Match, ProtocolDeviation), Decision::NonEvaluable);
        assert_eq!(Decision::NotListed.exit_code(), 0);
        assert_eq!(Decision::Listed(ListKind::Blacklist).exit_code(), 2);
        assert_eq!(Decision::NonEvaluable.exit_code(), 3);
    }

    #[test]
    fn forgery_numbers() {
        let t = 1_032_193;
        assert_eq!(t_eff(t), 516_095);
        assert!((forgery_success_bound(t, 1) - 1.0 / 516_095.0).abs() < 1e-15);
        assert!((forgery_success_bound(t, 1) - 1.94e-6).abs() < 0.01e-6);
        assert!((forgery_success_bound(t, 1825) - 3.54e-3).abs() < 0.005e-3);
        assert_eq!(forgery_success_bound(t, 0), 0.0);
        assert_eq!(forgery_success_bound(t, 10_000_000), 1.0);
    }

    #[test]
    fn factorial_inverse_at_deployed_modulus() {
        let t = 1_032_193u64;
        let inv = factorial_inverse(t, 8).unwrap();
        assert_eq!(inv as u128 * 40320 % t as u128, 1);
    }
}
