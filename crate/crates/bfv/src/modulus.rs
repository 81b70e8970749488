//! Word-sized prime moduli with Barrett and Shoup reduction.
//!
//! All moduli are below 2^62 so that lazy NTT butterflies can keep values in
//! `[0, 4q)` without overflowing a `u64`.

/// Largest supported modulus bit size.
pub const MAX_MODULUS_BITS: u32 = 62;

#[inline(always)]
fn mul_hi(a: u64, b: u64) -> u64 {
    ((a as u128 * b as u128) >> 64) as u64
}

/// An odd prime modulus below 2^62 with precomputed reduction constants.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Modulus {
    value: u64,
    ratio_hi: u64,
    ratio_lo: u64,
}

impl Modulus {
    pub fn new(value: u64) -> Self {
        assert!(value > 2 && value < (1u64 << MAX_MODULUS_BITS), "modulus out of range");
        let ratio = u128::MAX / value as u128;
        Modulus {
            value,
            ratio_hi: (ratio >> 64) as u64,
            ratio_lo: ratio as u64,
        }
    }

    #[inline(always)]
    pub fn value(&self) -> u64 {
        self.value
    }

    pub fn bits(&self) -> u32 {
        64 - self.value.leading_zeros()
    }

    /// Barrett reduction of a full 128-bit value.
    #[inline(always)]
    pub fn reduce_u128(&self, a: u128) -> u64 {
        let a_lo = a as u64;
        let a_hi = (a >> 64) as u64;
        let t1 = a_lo as u128 * self.ratio_hi as u128 + mul_hi(a_lo, self.ratio_lo) as u128;
        let t2 = a_hi as u128 * self.ratio_lo as u128 + (t1 as u64) as u128;
        let est = a_hi
            .wrapping_mul(self.ratio_hi)
            .wrapping_add((t1 >> 64) as u64)
            .wrapping_add((t2 >> 64) as u64);
        let mut r = a_lo.wrapping_sub(est.wrapping_mul(self.value));
        while r >= self.value {
            r -= self.value;
        }
        r
    }

    #[inline(always)]
    pub fn reduce(&self, a: u64) -> u64 {
        if a < self.value {
            a
        } else {
            self.reduce_u128(a as u128)
        }
    }

    /// Reduces a signed value into `[0, q)`.
    #[inline]
    pub fn reduce_i64(&self, a: i64) -> u64 {
        if a >= 0 {
            self.reduce(a as u64)
        } else {
            let r = self.reduce(a.unsigned_abs());
            if r == 0 {
                0
            } else {
                self.value - r
            }
        }
    }

    /// Reduces a signed 128-bit value into `[0, q)`.
    pub fn reduce_i128(&self, a: i128) -> u64 {
        let r = self.reduce_u128(a.unsigned_abs());
        if a < 0 && r != 0 {
            self.value - r
        } else {
            r
        }
    }

    #[inline(always)]
    pub fn add(&self, a: u64, b: u64) -> u64 {
        let s = a + b;
        if s >= self.value {
            s - self.value
        } else {
            s
        }
    }

    #[inline(always)]
    pub fn sub(&self, a: u64, b: u64) -> u64 {
        if a >= b {
            a - b
        } else {
            a + self.value - b
        }
    }

    #[inline(always)]
    pub fn neg(&self, a: u64) -> u64 {
        if a == 0 {
            0
        } else {
            self.value - a
        }
    }

    #[inline(always)]
    pub fn mul(&self, a: u64, b: u64) -> u64 {
        self.reduce_u128(a as u128 * b as u128)
    }

    /// Precomputes `floor(w * 2^64 / q)` for repeated multiplication by `w`.
    #[inline]
    pub fn shoup(&self, w: u64) -> u64 {
        debug_assert!(w < self.value);
        (((w as u128) << 64) / self.value as u128) as u64
    }

    /// `x * w mod q` in `[0, 2q)`.
    #[inline(always)]
    pub fn mul_shoup_lazy(&self, x: u64, w: u64, w_shoup: u64) -> u64 {
        let q = mul_hi(x, w_shoup);
        x.wrapping_mul(w).wrapping_sub(q.wrapping_mul(self.value))
    }

    #[inline(always)]
    pub fn mul_shoup(&self, x: u64, w: u64, w_shoup: u64) -> u64 {
        let r = self.mul_shoup_lazy(x, w, w_shoup);
        if r >= self.value {
            r - self.value
        } else {
            r
        }
    }

    pub fn pow(&self, mut base: u64, mut exp: u64) -> u64 {
        base = self.reduce(base);
        let mut acc = 1u64;
        while exp > 0 {
            if exp & 1 == 1 {
                acc = self.mul(acc, base);
            }
            base = self.mul(base, base);
            exp >>= 1;
        }
        acc
    }

    /// Modular inverse via Fermat; `a` must be nonzero mod q.
    pub fn inv(&self, a: u64) -> Option<u64> {
        let a = self.reduce(a);
        if a == 0 {
            None
        } else {
            Some(self.pow(a, self.value - 2))
        }
    }

    /// Centered representative in `(-q/2, q/2]`.
    #[inline(always)]
    pub fn center(&self, a: u64) -> i64 {
        if a > self.value / 2 {
            a as i64 - self.value as i64
        } else {
            a as i64
        }
    }

    /// Smallest primitive `order`-th root of unity, where `order | q - 1` is a
    /// power of two.
    pub fn primitive_root(&self, order: u64) -> Option<u64> {
        let q = self.value;
        if order == 0 || (q - 1) % order != 0 || !order.is_power_of_two() {
            return None;
        }
        let cofactor = (q - 1) / order;
        (2..q.min(1 << 20)).find_map(|g| {
            let root = self.pow(g, cofactor);
            (self.pow(root, order / 2) == q - 1).then_some(root)
        })
    }
}

/// Deterministic Miller-Rabin for 64-bit integers.
pub fn is_prime(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    const SMALL: [u64; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];
    for p in SMALL {
        if n % p == 0 {
            return n == p;
        }
    }
    let mulmod = |a: u64, b: u64| ((a as u128 * b as u128) % n as u128) as u64;
    let powmod = |mut b: u64, mut e: u64| {
        let mut acc = 1u64;
        while e > 0 {
            if e & 1 == 1 {
                acc = mulmod(acc, b);
            }
            b = mulmod(b, b);
            e >>= 1;
        }
        acc
    };
    let mut d = n - 1;
    let mut s = 0;
    while d % 2 == 0 {
        d /= 2;
        s += 1;
    }
    'witness: for a in SMALL {
        let mut x = powmod(a, d);
        if x == 1 || x == n - 1 {
            continue;
        }
        for _ in 1..s {
            x = mulmod(x, x);
            if x == n - 1 {
                continue 'witness;
            }
        }
        return false;
    }
    true
}

/// Returns the largest primes of exactly `bits` bits that are `1 mod step`,
/// skipping any value in `exclude`.
pub fn generate_primes(bits: u32, step: u64, count: usize, exclude: &[u64]) -> Option<Vec<u64>> {
    if !(2..=MAX_MODULUS_BITS).contains(&bits) {
        return None;
    }
    let upper = 1u64 << bits;
    let lower = 1u64 << (bits - 1);
    let mut out = Vec::with_capacity(count);
    let mut candidate = ((upper - 1) / step) * step + 1;
    if candidate >= upper {
        candidate = candidate.checked_sub(step)?;
    }
    while out.len() < count {
        if candidate < lower {
            return None;
        }
        if is_prime(candidate) && !exclude.contains(&candidate) {
            out.push(candidate);
        }
        candidate = candidate.checked_sub(step)?;
    }
    Some(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn primality() {
        assert!(is_prime(1_032_193));
        assert!(is_prime(97));
        assert!(!is_prime(1_032_195));
        assert!(!is_prime(561));
        assert!(is_prime((1u64 << 61) - 1));
    }

    #[test]
    fn generated_primes_have_requested_shape() {
        let ps = generate_primes(58, 1 << 14, 3, &[]).unwrap();
        for p in &ps {
            assert_eq!(64 - p.leading_zeros(), 58);
            assert_eq!(p % (1 << 14), 1);
            assert!(is_prime(*p));
        }
        let more = generate_primes(58, 1 << 14, 2, &ps).unwrap();
        assert!(more.iter().all(|p| !ps.contains(p)));
    }

    #[test]
    fn primitive_root_has_exact_order() {
        let m = Modulus::new(1_032_193);
        let r = m.primitive_root(1 << 14).unwrap();
        assert_eq!(m.pow(r, 1 << 14), 1);
        assert_eq!(m.pow(r, 1 << 13), 1_032_192);
    }

    proptest! {
        #[test]
        fn barrett_matches_u128_remainder(a in any::<u128>(), q in 3u64..(1 << 62)) {
            let m = Modulus::new(q | 1);
            prop_assert_eq!(m.reduce_u128(a) as u128, a % (q | 1) as u128);
        }

        #[test]
        fn shoup_matches_mul(x in any::<u64>(), w in any::<u64>(), q in 3u64..(1 << 62)) {
            let m = Modulus::new(q | 1);
            let w = w % m.value();
            let expect = ((x as u128 * w as u128) % m.value() as u128) as u64;
            prop_assert_eq!(m.mul_shoup(m.reduce(x), w, m.shoup(w)), expect);
            prop_assert!(m.mul_shoup_lazy(x, w, m.shoup(w)) < 2 * m.value());
        }
    }
}
