//! Negacyclic number-theoretic transform over `Z_q[X]/(X^N + 1)`.
//!
//! Forward transform takes natural-order coefficients to bit-reversed
//! evaluations; the inverse undoes it. Butterflies are Harvey-style with lazy
//! reduction.

use crate::modulus::Modulus;

#[derive(Clone, Debug)]
pub struct NttTable {
    modulus: Modulus,
    degree: usize,
    roots: Vec<u64>,
    roots_shoup: Vec<u64>,
    inv_roots: Vec<u64>,
    inv_roots_shoup: Vec<u64>,
    inv_degree: u64,
    inv_degree_shoup: u64,
}

fn bit_reverse(x: usize, bits: u32) -> usize {
    if bits == 0 {
        0
    } else {
        x.reverse_bits() >> (usize::BITS - bits)
    }
}

/// Cooley-Tukey butterfly on lazy values in `[0, 4q)`.
#[inline(always)]
fn butterfly(x: u64, y: u64, w: u64, ws: u64, q: u64, two_q: u64) -> (u64, u64) {
    let u = x - (two_q & 0u64.wrapping_sub((x >= two_q) as u64));
    let qt = ((y as u128 * ws as u128) >> 64) as u64;
    let v = y.wrapping_mul(w).wrapping_sub(qt.wrapping_mul(q));
    (u + v, u + two_q - v)
}

impl NttTable {
    /// Returns `None` when `q` has no primitive `2N`-th root of unity.
    pub fn new(modulus: Modulus, degree: usize) -> Option<Self> {
        assert!(degree.is_power_of_two() && degree >= 2);
        let psi = modulus.primitive_root(2 * degree as u64)?;
        let psi_inv = modulus.inv(psi)?;
        let log_n = degree.trailing_zeros();
        let mut roots = vec![0u64; degree];
        let mut inv_roots = vec![0u64; degree];
        let (mut pw, mut ipw) = (1u64, 1u64);
        for i in 0..degree {
            let r = bit_reverse(i, log_n);
            roots[r] = pw;
            inv_roots[r] = ipw;
            pw = modulus.mul(pw, psi);
            ipw = modulus.mul(ipw, psi_inv);
        }
        let roots_shoup = roots.iter().map(|&w| modulus.shoup(w)).collect();
        let inv_roots_shoup = inv_roots.iter().map(|&w| modulus.shoup(w)).collect();
        let inv_degree = modulus.inv(degree as u64)?;
        Some(NttTable {
            modulus,
            degree,
            roots,
            roots_shoup,
            inv_roots,
            inv_roots_shoup,
            inv_degree,
            inv_degree_shoup: modulus.shoup(inv_degree),
        })
    }

    pub fn modulus(&self) -> &Modulus {
        &self.modulus
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    /// In-place forward transform; input in `[0, q)`, output in `[0, q)`.
    pub fn forward(&self, a: &mut [u64]) {
        assert_eq!(a.len(), self.degree);
        let q = self.modulus.value();
        let two_q = 2 * q;
        let n = self.degree;
        let mut t = n >> 1;
        let mut m = 1;
        while m < n {
            if t >= 4 {
                for i in 0..m {
                    let w = self.roots[m + i];
                    let ws = self.roots_shoup[m + i];
                    let start = 2 * i * t;
                    let (lo, hi) = a[start..start + 2 * t].split_at_mut(t);
                    for (x, y) in lo.iter_mut().zip(hi.iter_mut()) {
                        let (u, v) = butterfly(*x, *y, w, ws, q, two_q);
                        *x = u;
                        *y = v;
                    }
                }
            } else {
                for (i, chunk) in a.chunks_exact_mut(2 * t).enumerate() {
                    let w = self.roots[m + i];
                    let ws = self.roots_shoup[m + i];
                    let (lo, hi) = chunk.split_at_mut(t);
                    for (x, y) in lo.iter_mut().zip(hi.iter_mut()) {
                        let (u, v) = butterfly(*x, *y, w, ws, q, two_q);
                        *x = u;
                        *y = v;
                    }
                }
            }
            m <<= 1;
            t >>= 1;
        }
        for x in a.iter_mut() {
            let mut v = *x;
            v -= two_q & 0u64.wrapping_sub((v >= two_q) as u64);
            v -= q & 0u64.wrapping_sub((v >= q) as u64);
            *x = v;
        }
    }

    /// In-place inverse transform; input in `[0, q)`, output in `[0, q)`.
    pub fn inverse(&self, a: &mut [u64]) {
        debug_assert_eq!(a.len(), self.degree);
        let q = self.modulus.value();
        let two_q = 2 * q;
        let n = self.degree;
        let mut t = 1;
        let mut m = n;
        while m > 1 {
            let h = m >> 1;
            for i in 0..h {
                let w = self.inv_roots[h + i];
                let ws = self.inv_roots_shoup[h + i];
                let start = 2 * i * t;
                let (lo, hi) = a[start..start + 2 * t].split_at_mut(t);
                for (x, y) in lo.iter_mut().zip(hi.iter_mut()) {
                    let u = *x;
                    let v = *y;
                    let mut s = u + v;
                    if s >= two_q {
                        s -= two_q;
                    }
                    *x = s;
                    *y = self.modulus.mul_shoup_lazy(u + two_q - v, w, ws);
                }
            }
            t <<= 1;
            m = h;
        }
        for x in a.iter_mut() {
            *x = self.modulus.mul_shoup(*x, self.inv_degree, self.inv_degree_shoup);
        }
    }
}
