use std::fmt;

use crate::modulus::{generate_primes, is_prime, MAX_MODULUS_BITS};
use crate::HeError;

/// Largest total modulus bit size (ciphertext chain plus key-switching prime)
/// that keeps ~128-bit classical security for a ternary secret, per the
/// homomorphic encryption standard tables.
pub fn max_modulus_bits_128(degree: usize) -> Option<u32> {
    match degree {
        1024 => Some(27),
        2048 => Some(54),
        4096 => Some(109),
        8192 => Some(218),
        16384 => Some(438),
        32768 => Some(881),
        _ => None,
    }
}

/// Named coefficient-modulus chains.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Profile {
    /// A reconstructed ~204-bit chain at N = 8192 whose budget runs out
    /// before the membership circuit completes.
    PaperOriginal,
    /// The full 128-bit-secure modulus budget for N.
    DefaultSafe,
    /// Hand-built parameters (tests, toy instances).
    Custom,
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Profile::PaperOriginal => "paper_original",
            Profile::DefaultSafe => "default_safe",
            Profile::Custom => "custom",
        })
    }
}

impl std::str::FromStr for Profile {
    type Err = HeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "paper_original" => Ok(Profile::PaperOriginal),
            "default_safe" => Ok(Profile::DefaultSafe),
            other => Err(HeError::InvalidParams(format!("unknown profile {other:?}"))),
        }
    }
}

/// Encryption parameters. Immutable once built.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HeParams {
    pub poly_degree: usize,
    pub plain_modulus: u64,
    /// Ciphertext modulus primes `q_0 .. q_{k-1}`.
    pub coeff_modulus: Vec<u64>,
    /// Extra prime used only inside relinearization keys.
    pub special_modulus: u64,
    /// Claimed classical security; 0 for toy parameters.
    pub security_level: u32,
    pub profile: Profile,
}

/// Plaintext modulus for the production degrees.
fn plain_modulus_for(degree: usize) -> Option<u64> {
    if degree == 8192 {
        return Some(1_032_193);
    }
    let step = 2 * degree as u64;
    let mut p = (1u64 << 19).div_ceil(step) * step + 1;
    while p < (1 << 20) {
        if is_prime(p) {
            return Some(p);
        }
        p += step;
    }
    None
}

fn chain_bits(profile: Profile, degree: usize) -> Option<(Vec<u32>, u32)> {
    let chain = match (profile, degree) {
        (Profile::DefaultSafe, 4096) => (vec![36, 36], 37),
        (Profile::DefaultSafe, 8192) => (vec![62, 62, 62], 32),
        (Profile::DefaultSafe, 16384) => (vec![58; 7], 32),
        (Profile::PaperOriginal, 4096) => (vec![34, 34], 34),
        (Profile::PaperOriginal, 8192) => (vec![41, 41, 41, 41], 40),
        (Profile::PaperOriginal, 16384) => (vec![54; 7], 32),
        _ => return None,
    };
    Some(chain)
}

impl HeParams {
    /// Standard parameter sets for `N` in {2^12, 2^13, 2^14}.
    pub fn generate(profile: Profile, degree: usize) -> Result<Self, HeError> {
        let (bits, special_bits) =
            chain_bits(profile, degree).ok_or(HeError::UnsupportedDegree(degree))?;
        let plain = plain_modulus_for(degree).ok_or(HeError::UnsupportedDegree(degree))?;
        let mut params = Self::build(degree, plain, &bits, special_bits, 128)?;
        params.profile = profile;
        Ok(params)
    }

    /// Parameters with an explicit chain. `security_level` 0 skips the
    /// security-table check.
    pub fn custom(
        degree: usize,
        plain_modulus: u64,
        coeff_bits: &[u32],
        special_bits: u32,
        security_level: u32,
    ) -> Result<Self, HeError> {
        Self::build(degree, plain_modulus, coeff_bits, special_bits, security_level)
    }

    fn build(
        degree: usize,
        plain_modulus: u64,
        coeff_bits: &[u32],
        special_bits: u32,
        security_level: u32,
    ) -> Result<Self, HeError> {
        if !degree.is_power_of_two() || degree < 8 {
            return Err(HeError::UnsupportedDegree(degree));
        }
        if coeff_bits.is_empty() {
            return Err(HeError::InvalidParams("empty coefficient modulus".into()));
        }
        let step = 2 * degree as u64;
        let mut used: Vec<u64> = Vec::new();
        let mut coeff_modulus = Vec::with_capacity(coeff_bits.len());
        for &b in coeff_bits {
            let p = generate_primes(b, step, 1, &used).ok_or_else(|| {
                HeError::InvalidParams(format!("no {b}-bit NTT prime for N = {degree}"))
            })?[0];
            used.push(p);
            coeff_modulus.push(p);
        }
        let special_modulus = generate_primes(special_bits, step, 1, &used).ok_or_else(|| {
            HeError::InvalidParams(format!("no {special_bits}-bit special prime for N = {degree}"))
        })?[0];
        let params = HeParams {
            poly_degree: degree,
            plain_modulus,
            coeff_modulus,
            special_modulus,
            security_level,
            profile: Profile::Custom,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<(), HeError> {
        let n = self.poly_degree;
        if !n.is_power_of_two() || n < 8 {
            return Err(HeError::UnsupportedDegree(n));
        }
        let t = self.plain_modulus;
        if !is_prime(t) || t >= 1 << 31 {
            return Err(HeError::InvalidParams(format!("plain modulus {t} must be a prime below 2^31")));
        }
        if t % (2 * n as u64) != 1 {
            return Err(HeError::InvalidParams(format!(
                "plain modulus {t} is not 1 mod 2N = {}; slot batching unavailable",
                2 * n
            )));
        }
        let mut all = self.coeff_modulus.clone();
        all.push(self.special_modulus);
        for &q in &all {
            if !is_prime(q) || q % (2 * n as u64) != 1 || 64 - q.leading_zeros() > MAX_MODULUS_BITS {
                return Err(HeError::InvalidParams(format!("modulus {q} is not an NTT prime for N = {n}")));
            }
            if q <= t {
                return Err(HeError::InvalidParams(format!("modulus {q} must exceed plain modulus")));
            }
        }
        let mut sorted = all.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != all.len() {
            return Err(HeError::InvalidParams("duplicate moduli".into()));
        }
        if self.security_level > 0 {
            let bound = max_modulus_bits_128(n).ok_or(HeError::UnsupportedDegree(n))?;
            if self.total_modulus_bits() > bound {
                return Err(HeError::InvalidParams(format!(
                    "total modulus {} bits exceeds the {bound}-bit bound for N = {n}",
                    self.total_modulus_bits()
                )));
            }
        }
        Ok(())
    }

    /// Bit sizes of the ciphertext primes.
    pub fn coeff_bits(&self) -> Vec<u32> {
        self.coeff_modulus.iter().map(|q| 64 - q.leading_zeros()).collect()
    }

    /// Exact bit length of `Q = prod q_i`.
    pub fn ciphertext_modulus_bits(&self) -> u32 {
        let q: num_bigint::BigUint = self.coeff_modulus.iter().map(|&q| num_bigint::BigUint::from(q)).product();
        q.bits() as u32
    }

    /// Bit length of `Q * p_special`, the quantity bounded by security tables.
    pub fn total_modulus_bits(&self) -> u32 {
        let q: num_bigint::BigUint = self
            .coeff_modulus
            .iter()
            .chain(std::iter::once(&self.special_modulus))
            .map(|&q| num_bigint::BigUint::from(q))
            .product();
        q.bits() as u32
    }

    /// Stable fingerprint used to detect mixing of incompatible objects.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |v: u64| {
            for b in v.to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        };
        eat(self.poly_degree as u64);
        eat(self.plain_modulus);
        for &q in &self.coeff_modulus {
            eat(q);
        }
        eat(self.special_modulus);
        h
    }
}
