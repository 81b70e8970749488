//! Residue number system bases and the conversions BFV multiplication needs.

use num_bigint::BigUint;
use num_traits::{ToPrimitive, Zero};

use crate::modulus::Modulus;
use crate::ntt::NttTable;

/// A set of pairwise-coprime NTT-friendly primes.
#[derive(Clone, Debug)]
pub struct RnsBasis {
    degree: usize,
    moduli: Vec<Modulus>,
    tables: Vec<NttTable>,
    product: BigUint,
    /// `(Q / q_i)^{-1} mod q_i`
    hat_inv: Vec<u64>,
    hat_inv_shoup: Vec<u64>,
    /// `Q / q_i` as exact integers
    hat: Vec<BigUint>,
}

impl RnsBasis {
    pub fn new(primes: &[u64], degree: usize) -> Option<Self> {
        let moduli: Vec<Modulus> = primes.iter().map(|&p| Modulus::new(p)).collect();
        let tables = moduli
            .iter()
            .map(|&m| NttTable::new(m, degree))
            .collect::<Option<Vec<_>>>()?;
        let product: BigUint = primes.iter().map(|&p| BigUint::from(p)).product();
        let hat: Vec<BigUint> = primes.iter().map(|&p| &product / p).collect();
        let hat_inv: Vec<u64> = moduli
            .iter()
            .zip(&hat)
            .map(|(m, h)| m.inv((h % m.value()).to_u64().unwrap()))
            .collect::<Option<Vec<_>>>()?;
        let hat_inv_shoup = moduli.iter().zip(&hat_inv).map(|(m, &w)| m.shoup(w)).collect();
        Some(RnsBasis {
            degree,
            moduli,
            tables,
            product,
            hat_inv,
            hat_inv_shoup,
            hat,
        })
    }

    pub fn len(&self) -> usize {
        self.moduli.len()
    }

    pub fn is_empty(&self) -> bool {
        self.moduli.is_empty()
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn moduli(&self) -> &[Modulus] {
        &self.moduli
    }

    pub fn modulus(&self, i: usize) -> &Modulus {
        &self.moduli[i]
    }

    pub fn table(&self, i: usize) -> &NttTable {
        &self.tables[i]
    }

    pub fn product(&self) -> &BigUint {
        &self.product
    }

    /// Forward NTT on every residue of a flat `len * N` polynomial.
    pub fn forward(&self, data: &mut [u64]) {
        crate::par::for_each_residue(data, self.degree, |i, r| self.tables[i].forward(r));
    }

    pub fn inverse(&self, data: &mut [u64]) {
        crate::par::for_each_residue(data, self.degree, |i, r| self.tables[i].inverse(r));
    }

    /// Exact CRT composition of one coefficient, in `[0, Q)`.
    pub fn compose(&self, residues: impl Iterator<Item = u64>) -> BigUint {
        let mut acc = BigUint::zero();
        for (i, r) in residues.enumerate() {
            let y = self.moduli[i].mul_shoup(r, self.hat_inv[i], self.hat_inv_shoup[i]);
            acc += &self.hat[i] * y;
        }
        acc % &self.product
    }

    /// Residues of an arbitrary big integer.
    pub fn decompose(&self, value: &BigUint) -> Vec<u64> {
        self.moduli.iter().map(|m| (value % m.value()).to_u64().unwrap()).collect()
    }

    pub(crate) fn hat_inv(&self, i: usize) -> (u64, u64) {
        (self.hat_inv[i], self.hat_inv_shoup[i])
    }
}

/// Fast base conversion `from -> to` for coefficients in centered form.
///
/// The quotient estimate uses doubles; it is exact unless a coefficient lies
/// within ~2^-50 Q of +-Q/2.
#[derive(Clone, Debug)]
pub struct BaseConverter {
    from_len: usize,
    to: Vec<Modulus>,
    inv_from_f64: Vec<f64>,
    /// `[Q / q_i]_{p_j}`, indexed `[j][i]`
    hat_mod_to: Vec<Vec<u64>>,
    /// `[Q]_{p_j}`
    product_mod_to: Vec<u64>,
    from_moduli: Vec<Modulus>,
    hat_inv: Vec<(u64, u64)>,
}

impl BaseConverter {
    pub fn new(from: &RnsBasis, to: &RnsBasis) -> Self {
        let hat_mod_to = to
            .moduli()
            .iter()
            .map(|p| from.hat.iter().map(|h| (h % p.value()).to_u64().unwrap()).collect())
            .collect();
        let product_mod_to = to
            .moduli()
            .iter()
            .map(|p| (from.product() % p.value()).to_u64().unwrap())
            .collect();
        BaseConverter {
            from_len: from.len(),
            to: to.moduli().to_vec(),
            inv_from_f64: from.moduli().iter().map(|m| 1.0 / m.value() as f64).collect(),
            hat_mod_to,
            product_mod_to,
            from_moduli: from.moduli().to_vec(),
            hat_inv: (0..from.len()).map(|i| from.hat_inv(i)).collect(),
        }
    }

    /// Converts a coefficient-form polynomial; `input` is `from.len() * N`,
    /// `output` is `to.len() * N`.
    pub fn convert(&self, input: &[u64], output: &mut [u64], degree: usize) {
        let k = self.from_len;
        debug_assert_eq!(input.len(), k * degree);
        debug_assert_eq!(output.len(), self.to.len() * degree);
        let mut y = vec![0u64; k * degree];
        let mut v = vec![0u64; degree];
        for i in 0..k {
            let m = &self.from_moduli[i];
            let (w, ws) = self.hat_inv[i];
            let src = &input[i * degree..(i + 1) * degree];
            let dst = &mut y[i * degree..(i + 1) * degree];
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = m.mul_shoup(s, w, ws);
            }
        }
        for (c, vc) in v.iter_mut().enumerate() {
            let mut f = 0.0f64;
            for i in 0..k {
                f += y[i * degree + c] as f64 * self.inv_from_f64[i];
            }
            *vc = f.round() as u64;
        }
        for (j, p) in self.to.iter().enumerate() {
            let hats = &self.hat_mod_to[j];
            let qmod = self.product_mod_to[j];
            let dst = &mut output[j * degree..(j + 1) * degree];
            for (c, d) in dst.iter_mut().enumerate() {
                let mut acc: u128 = 0;
                for i in 0..k {
                    acc += y[i * degree + c] as u128 * hats[i] as u128;
                }
                let sum = p.reduce_u128(acc);
                let corr = p.reduce_u128(v[c] as u128 * qmod as u128);
                *d = p.sub(sum, corr);
            }
        }
    }
}

/// Computes `round(t * X / Q)` for `X` given in the joint basis `Q u P`,
/// returning the result in `Q`. Requires `|t X / Q| < P / 2`.
#[derive(Clone, Debug)]
pub struct Scaler {
    q_moduli: Vec<Modulus>,
    p_moduli: Vec<Modulus>,
    /// `(QP / q_i)^{-1} mod q_i` with Shoup constant
    qp_hat_inv: Vec<(u64, u64)>,
    /// fractional part of `t P / q_i` as 62-bit fixed point
    theta: Vec<u64>,
    /// `floor(t P / q_i) mod p_j`, indexed `[j][i]`
    omega: Vec<Vec<u64>>,
    /// `t Q^{-1} mod p_j` with Shoup constant
    t_q_inv: Vec<(u64, u64)>,
    back: BaseConverter,
}

const FRAC_BITS: u32 = 62;

impl Scaler {
    pub fn new(q: &RnsBasis, p: &RnsBasis, t: u64) -> Self {
        let big_q = q.product();
        let big_p = p.product();
        let qp = big_q * big_p;
        let t_big = BigUint::from(t);
        let qp_hat_inv = q
            .moduli()
            .iter()
            .map(|m| {
                let hat = (&qp / m.value()) % m.value();
                let w = m.inv(hat.to_u64().unwrap()).unwrap();
                (w, m.shoup(w))
            })
            .collect();
        let mut theta = Vec::new();
        let mut omega_cols: Vec<BigUint> = Vec::new();
        for m in q.moduli() {
            let num = &t_big * big_p;
            let whole = &num / m.value();
            let rem = &num % m.value();
            let frac = (rem << FRAC_BITS) / m.value();
            theta.push(frac.to_u64().unwrap());
            omega_cols.push(whole);
        }
        let omega = p
            .moduli()
            .iter()
            .map(|pj| omega_cols.iter().map(|w| (w % pj.value()).to_u64().unwrap()).collect())
            .collect();
        let t_q_inv = p
            .moduli()
            .iter()
            .map(|pj| {
                let qm = (big_q % pj.value()).to_u64().unwrap();
                let w = pj.mul(pj.reduce(t), pj.inv(qm).unwrap());
                (w, pj.shoup(w))
            })
            .collect();
        Scaler {
            q_moduli: q.moduli().to_vec(),
            p_moduli: p.moduli().to_vec(),
            qp_hat_inv,
            theta,
            omega,
            t_q_inv,
            back: BaseConverter::new(p, q),
        }
    }

    /// `x_q` is `|Q| * N`, `x_p` is `|P| * N`, both coefficient form. Output is
    /// `|Q| * N`.
    pub fn scale(&self, x_q: &[u64], x_p: &[u64], out: &mut [u64], degree: usize) {
        let k = self.q_moduli.len();
        let kp = self.p_moduli.len();
        let mut tilde = vec![0u64; k * degree];
        for i in 0..k {
            let m = &self.q_moduli[i];
            let (w, ws) = self.qp_hat_inv[i];
            for c in 0..degree {
                tilde[i * degree + c] = m.mul_shoup(x_q[i * degree + c], w, ws);
            }
        }
        let half = 1u128 << (FRAC_BITS - 1);
        let rounded: Vec<u64> = (0..degree)
            .map(|c| {
                let mut acc: u128 = 0;
                for i in 0..k {
                    acc += tilde[i * degree + c] as u128 * self.theta[i] as u128;
                }
                ((acc + half) >> FRAC_BITS) as u64
            })
            .collect();
        let mut in_p = vec![0u64; kp * degree];
        for j in 0..kp {
            let pj = &self.p_moduli[j];
            let om = &self.omega[j];
            let (w, ws) = self.t_q_inv[j];
            for c in 0..degree {
                let mut acc: u128 = rounded[c] as u128;
                for i in 0..k {
                    acc += tilde[i * degree + c] as u128 * om[i] as u128;
                }
                let s = pj.reduce_u128(acc);
                let own = pj.mul_shoup(x_p[j * degree + c], w, ws);
                in_p[j * degree + c] = pj.add(s, own);
            }
        }
        self.back.convert(&in_p, out, degree);
    }
}

/// Number of bits in `value`, treating zero as zero bits.
pub(crate) fn bit_len(value: &BigUint) -> u64 {
    if value.is_zero() {
        0
    } else {
        value.bits()
    }
}
