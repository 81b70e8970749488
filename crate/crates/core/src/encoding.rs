//! Identifier canonicalization, permutation-based hashing and
//! constant-weight codewords.

use std::fmt;
use std::str::FromStr;

use aes::cipher::{BlockCipherEncrypt, KeyInit};
use aes::Aes128;
use num_bigint::BigUint;

use crate::Error;

/// Bit length of a canonical identifier; `10^14 < 2^47`.
pub const PEI_BITS: u32 = 47;
pub const PEI_DIGITS: usize = 14;
const PEI_LIMIT: u64 = 100_000_000_000_000;

/// 14-digit equipment identifier without check digit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Pei(u64);

impl Pei {
    pub fn new(value: u64) -> Result<Self, Error> {
        if value >= PEI_LIMIT {
            return Err(Error::Encoding(format!("identifier value {value} exceeds 14 digits")));
        }
        Ok(Pei(value))
    }

    pub fn value(self) -> u64 {
        self.0
    }
}

impl FromStr for Pei {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        if s.len() != PEI_DIGITS || !s.bytes().all(|b| b.is_ascii_digit()) {
            return Err(Error::Encoding(format!("expected {PEI_DIGITS} decimal digits, got {s:?}")));
        }
        Ok(Pei(s.parse().expect("validated digits")))
    }
}

impl fmt::Display for Pei {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:014}", self.0)
    }
}

pub fn pei_to_int(p: &str) -> Result<u64, Error> {
    Ok(p.parse::<Pei>()?.value())
}

/// Permutation-based hashing: the top `log2 N` bits select a slot after
/// being XORed with a keyed PRF of the low bits, which are kept as the
/// residual.
#[derive(Clone, Debug)]
pub struct PbhParams {
    slot_bits: u32,
    lambda: u32,
    perm_key: [u8; 16],
    prf: Aes128,
}

impl PbhParams {
    pub fn new(slots: usize, lambda: u32, perm_key: [u8; 16]) -> Result<Self, Error> {
        if !slots.is_power_of_two() || slots < 2 {
            return Err(Error::Encoding(format!("slot count {slots} is not a power of two")));
        }
        let slot_bits = slots.trailing_zeros();
        if lambda <= slot_bits || lambda > 63 {
            return Err(Error::Encoding(format!(
                "input length {lambda} leaves no residual for {slots} slots"
            )));
        }
        Ok(PbhParams {
            slot_bits,
            lambda,
            perm_key,
            prf: Aes128::new(&perm_key.into()),
        })
    }

    /// Standard 47-bit identifiers.
    pub fn for_pei(slots: usize, perm_key: [u8; 16]) -> Result<Self, Error> {
        Self::new(slots, PEI_BITS, perm_key)
    }

    pub fn slots(&self) -> usize {
        1 << self.slot_bits
    }

    pub fn lambda(&self) -> u32 {
        self.lambda
    }

    pub fn lambda_bar(&self) -> u32 {
        self.lambda - self.slot_bits
    }

    pub fn perm_key(&self) -> [u8; 16] {
        self.perm_key
    }

    fn prf(&self, lo: u64) -> u64 {
        let mut block = [0u8; 16];
        block[..8].copy_from_slice(&lo.to_le_bytes());
        let mut block = block.into();
        self.prf.encrypt_block(&mut block);
        let out: [u8; 16] = block.into();
        u64::from_le_bytes(out[..8].try_into().unwrap())
    }

    pub fn map(&self, x: u64) -> Result<(usize, u64), Error> {
        if x >> self.lambda != 0 {
            return Err(Error::Encoding(format!("value {x} exceeds {} bits", self.lambda)));
        }
        let lb = self.lambda_bar();
        let lo = x & ((1u64 << lb) - 1);
        let hi = x >> lb;
        let mask = (1u64 << self.slot_bits) - 1;
        Ok(((hi ^ (self.prf(lo) & mask)) as usize, lo))
    }

    pub fn invert(&self, slot: usize, residual: u64) -> u64 {
        let mask = (1u64 << self.slot_bits) - 1;
        let hi = (slot as u64 ^ self.prf(residual)) & mask;
        (hi << self.lambda_bar()) | residual
    }
}

impl PartialEq for PbhParams {
    fn eq(&self, other: &Self) -> bool {
        (self.slot_bits, self.lambda, self.perm_key) == (other.slot_bits, other.lambda, other.perm_key)
    }
}

impl Eq for PbhParams {}

/// Exact binomial coefficient.
pub fn binomial(n: u64, k: u64) -> BigUint {
    if k > n {
        return BigUint::ZERO;
    }
    let k = k.min(n - k);
    let mut acc = BigUint::from(1u32);
    for i in 0..k {
        acc *= n - i;
        acc /= i + 1;
    }
    acc
}

/// Binomial that saturates at `u128::MAX`.
fn binomial_u128(n: u64, k: u64) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k as u128 {
        // acc * (n - i) / (i + 1) is exact at every step
        let num = match acc.checked_mul(n as u128 - i) {
            Some(v) => v,
            None => return u128::MAX,
        };
        acc = num / (i + 1);
    }
    acc
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct CwcParams {
    pub h: u32,
    pub l: u64,
    pub lambda_bar: u32,
}

/// Largest codeword length `encode` will materialize.
pub const MAX_CODEWORD_LEN: u64 = 1 << 16;

impl CwcParams {
    /// Smallest `l` with `C(l, h) >= 2^lambda_bar`, without any plaintext
    /// modulus constraint.
    pub fn minimal(lambda_bar: u32, h: u32) -> Result<Self, Error> {
        if h == 0 || lambda_bar == 0 {
            return Err(Error::Encoding("weight and residual length must be positive".into()));
        }
        let target = BigUint::from(1u32) << lambda_bar;
        let h64 = h as u64;
        let mut lo = h64; // C(h, h) = 1 < 2^lambda_bar
        let mut hi = h64.max(1);
        while binomial(hi, h64) < target {
            lo = hi;
            hi *= 2;
        }
        while hi - lo > 1 {
            let mid = lo + (hi - lo) / 2;
            if binomial(mid, h64) >= target {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Ok(CwcParams { h, l: hi, lambda_bar })
    }

    /// Minimal parameters for plaintext modulus `t`; `h!` must be a unit.
    pub fn for_modulus(lambda_bar: u32, h: u32, t: u64) -> Result<Self, Error> {
        let fact: u128 = (1..=h as u128).try_fold(1u128, |a, k| a.checked_mul(k)).unwrap_or(u128::MAX);
        if fact >= t as u128 {
            return Err(Error::Encoding(format!("{h}! is not invertible modulo {t}")));
        }
        Self::minimal(lambda_bar, h)
    }

    pub fn capacity(&self) -> BigUint {
        binomial(self.l, self.h as u64)
    }

    pub fn encode(&self, residual: u64) -> Result<Codeword, Error> {
        if self.lambda_bar < 64 && residual >> self.lambda_bar != 0 {
            return Err(Error::Encoding(format!("residual {residual} exceeds {} bits", self.lambda_bar)));
        }
        if self.l > MAX_CODEWORD_LEN {
            return Err(Error::Encoding(format!("codeword length {} is too large to materialize", self.l)));
        }
        let mut rank = residual as u128;
        let mut remaining = self.h as u64;
        let mut bits = vec![false; self.l as usize];
        for (pos, bit) in bits.iter_mut().enumerate() {
            if remaining == 0 {
                break;
            }
            let rest = self.l - pos as u64 - 1;
            // words with a zero here come first
            let with_zero = binomial_u128(rest, remaining);
            if rank >= with_zero {
                rank -= with_zero;
                *bit = true;
                remaining -= 1;
            }
        }
        Ok(Codeword { bits })
    }

    pub fn decode(&self, cw: &Codeword) -> Result<u64, Error> {
        if cw.bits.len() as u64 != self.l {
            return Err(Error::Encoding(format!("codeword length {} != {}", cw.bits.len(), self.l)));
        }
        if cw.weight() != self.h as usize {
            return Err(Error::Encoding(format!("codeword weight {} != {}", cw.weight(), self.h)));
        }
        let mut rank: u128 = 0;
        let mut remaining = self.h as u64;
        for (pos, &bit) in cw.bits.iter().enumerate() {
            if bit {
                rank += binomial_u128(self.l - pos as u64 - 1, remaining);
                remaining -= 1;
            }
        }
        if self.lambda_bar < 64 && rank >> self.lambda_bar != 0 {
            return Err(Error::Encoding("codeword rank outside residual range".into()));
        }
        Ok(rank as u64)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Codeword {
    bits: Vec<bool>,
}

impl Codeword {
    pub fn from_bits(bits: Vec<bool>) -> Self {
        Codeword { bits }
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn weight(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

impl fmt::Display for Codeword {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &b in &self.bits {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}
