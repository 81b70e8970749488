use rand::{CryptoRng, Rng};

use crate::modulus::Modulus;

/// Centered binomial with 21 coin pairs (standard deviation ~3.24).
pub(crate) fn cbd<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<i64> {
    (0..n)
        .map(|_| {
            let bits = rng.next_u64();
            let a = (bits & 0x1f_ffff).count_ones() as i64;
            let b = ((bits >> 21) & 0x1f_ffff).count_ones() as i64;
            a - b
        })
        .collect()
}

/// Uniform ternary coefficients.
pub(crate) fn ternary<R: CryptoRng + ?Sized>(rng: &mut R, n: usize) -> Vec<i64> {
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let byte = (rng.next_u32() & 0xff) as u8;
        // 255 = 3 * 85; reject the tail for an unbiased draw
        if byte < 255 {
            out.push((byte % 3) as i64 - 1);
        }
    }
    out
}

/// Uniform value in `[0, q)` by rejection.
#[inline]
pub(crate) fn uniform_mod<R: Rng + ?Sized>(rng: &mut R, m: &Modulus) -> u64 {
    let q = m.value();
    let mask = u64::MAX >> q.leading_zeros();
    loop {
        let v = rng.next_u64() & mask;
        if v < q {
            return v;
        }
    }
}

/// Uniform value in `[0, bound)`; `bound > 0`.
pub fn uniform_below<R: Rng + ?Sized>(rng: &mut R, bound: u64) -> u64 {
    assert!(bound > 0);
    if bound.is_power_of_two() {
        return rng.next_u64() & (bound - 1);
    }
    let mask = u64::MAX >> bound.leading_zeros();
    loop {
        let v = rng.next_u64() & mask;
        if v < bound {
            return v;
        }
    }
}

/// Flat residues of a small signed polynomial over the given moduli.
pub(crate) fn small_to_residues(coeffs: &[i64], moduli: &[Modulus]) -> Vec<u64> {
    let n = coeffs.len();
    let mut out = vec![0u64; n * moduli.len()];
    for (i, m) in moduli.iter().enumerate() {
        for (d, &c) in out[i * n..(i + 1) * n].iter_mut().zip(coeffs) {
            *d = m.reduce_i64(c);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{rngs::StdRng, SeedableRng};

    #[test]
    fn cbd_moments() {
        let mut rng = StdRng::seed_from_u64(1);
        let xs = cbd(&mut rng, 200_000);
        let mean = xs.iter().sum::<i64>() as f64 / xs.len() as f64;
        let var = xs.iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / xs.len() as f64;
        assert!(mean.abs() < 0.05);
        assert!((var - 10.5).abs() < 0.2);
    }

    #[test]
    fn ternary_is_balanced() {
        let mut rng = StdRng::seed_from_u64(2);
        let xs = ternary(&mut rng, 90_000);
        for v in [-1i64, 0, 1] {
            let c = xs.iter().filter(|&&x| x == v).count();
            assert!((c as i64 - 30_000).abs() < 900);
        }
    }

    #[test]
    fn uniform_below_stays_in_range() {
        let mut rng = StdRng::seed_from_u64(3);
        for bound in [1u64, 2, 3, 516_095, 1 << 40] {
            for _ in 0..1000 {
                assert!(uniform_below(&mut rng, bound) < bound);
            }
        }
    }
}
