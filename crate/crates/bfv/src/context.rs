//! Precomputed tables and every homomorphic operation.

use num_bigint::BigUint;
use num_traits::ToPrimitive;
use rand::{rngs::ChaCha20Rng, CryptoRng, SeedableRng};

use crate::modulus::{generate_primes, Modulus};
use crate::ntt::NttTable;
use crate::params::HeParams;
use crate::rns::{bit_len, BaseConverter, RnsBasis, Scaler};
use crate::sample::{cbd, small_to_residues, ternary, uniform_mod};
use crate::types::{
    decode_cipher, decode_secret, Cipher, KeyMaterial, PlainVec, Plaintext, PublicKey, RelinKey, SecretKey,
};
use crate::HeError;

/// Per-level constants for scaling messages by `Delta = floor(Q_L / t)`.
#[derive(Debug)]
struct LevelConsts {
    /// `floor(Q_L / t) mod q_i`
    delta: Vec<u64>,
    /// `Q_L mod t`
    q_mod_t: u64,
    /// `q_{L-1}^{-1} mod q_i` for `i < L - 1`, used when dropping the last prime
    last_inv: Vec<(u64, u64)>,
}

/// All precomputation for one parameter set. Immutable and `Sync`.
#[derive(Debug)]
pub struct HeContext {
    params: HeParams,
    id: u64,
    degree: usize,
    plain: Modulus,
    plain_ntt: NttTable,
    /// `levels[L - 1]` holds the first `L` ciphertext primes.
    levels: Vec<RnsBasis>,
    consts: Vec<LevelConsts>,
    ext: RnsBasis,
    lift: BaseConverter,
    scaler: Scaler,
    /// Ciphertext primes followed by the special prime.
    ks: RnsBasis,
    /// `p^{-1} mod q_i`
    special_inv: Vec<(u64, u64)>,
}

impl HeContext {
    pub fn new(params: HeParams) -> Result<Self, HeError> {
        params.validate()?;
        let n = params.poly_degree;
        let t = params.plain_modulus;
        let plain = Modulus::new(t);
        let plain_ntt = NttTable::new(plain, n)
            .ok_or_else(|| HeError::InvalidParams("plain modulus lacks a 2N-th root of unity".into()))?;
        let k = params.coeff_modulus.len();
        let bad = || HeError::InvalidParams("coefficient modulus is not NTT friendly".into());
        let levels: Vec<RnsBasis> = (1..=k)
            .map(|l| RnsBasis::new(&params.coeff_modulus[..l], n).ok_or_else(bad))
            .collect::<Result<_, _>>()?;
        let consts = levels
            .iter()
            .map(|b| {
                let q = b.product();
                let delta_big = q / t;
                let delta = b.decompose(&delta_big);
                let q_mod_t = (q % t).to_u64().unwrap();
                let l = b.len();
                let last_inv = if l > 1 {
                    let last = b.modulus(l - 1).value();
                    (0..l - 1)
                        .map(|i| {
                            let m = b.modulus(i);
                            let w = m.inv(last).unwrap();
                            (w, m.shoup(w))
                        })
                        .collect()
                } else {
                    Vec::new()
                };
                LevelConsts { delta, q_mod_t, last_inv }
            })
            .collect();
        let top = &levels[k - 1];

        // Extension basis must hold round(t * X / Q) for tensor coefficients X,
        // |X| <= N * Q^2 / 2.
        let need_bits = 64 - t.leading_zeros() + n.trailing_zeros() + top.product().bits() as u32 + 4;
        let p_count = need_bits.div_ceil(60) as usize;
        let mut exclude = params.coeff_modulus.clone();
        exclude.push(params.special_modulus);
        let ext_primes = generate_primes(61, 2 * n as u64, p_count, &exclude)
            .ok_or_else(|| HeError::InvalidParams("not enough extension primes".into()))?;
        let ext = RnsBasis::new(&ext_primes, n).ok_or_else(bad)?;
        let lift = BaseConverter::new(top, &ext);
        let scaler = Scaler::new(top, &ext, t);

        let mut ks_primes = params.coeff_modulus.clone();
        ks_primes.push(params.special_modulus);
        let ks = RnsBasis::new(&ks_primes, n).ok_or_else(bad)?;
        let special = params.special_modulus;
        let special_inv = top
            .moduli()
            .iter()
            .map(|m| {
                let w = m.inv(special).unwrap();
                (w, m.shoup(w))
            })
            .collect();

        Ok(HeContext {
            id: params.fingerprint(),
            degree: n,
            params,
            plain,
            plain_ntt,
            levels,
            consts,
            ext,
            lift,
            scaler,
            ks,
            special_inv,
        })
    }

    pub fn params(&self) -> &HeParams {
        &self.params
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn slot_count(&self) -> usize {
        self.degree
    }

    pub fn plain_modulus(&self) -> u64 {
        self.plain.value()
    }

    pub fn max_level(&self) -> usize {
        self.levels.len()
    }

    fn basis(&self, level: usize) -> &RnsBasis {
        &self.levels[level - 1]
    }

    fn check(&self, id: u64) -> Result<(), HeError> {
        if id == self.id {
            Ok(())
        } else {
            Err(HeError::ContextMismatch)
        }
    }

    fn check_slots(&self, p: &PlainVec) -> Result<(), HeError> {
        if p.len() != self.degree {
            return Err(HeError::LengthMismatch {
                expected: self.degree,
                got: p.len(),
            });
        }
        let t = self.plain.value();
        if let Some(&bad) = p.0.iter().find(|&&v| v >= t) {
            return Err(HeError::PlainOutOfRange(bad));
        }
        Ok(())
    }

    /// Slot values to batched polynomial coefficients in `[0, t)`.
    fn slots_to_coeffs(&self, p: &PlainVec) -> Vec<u64> {
        let mut c = p.0.clone();
        self.plain_ntt.inverse(&mut c);
        c
    }

    /// Residues of `round(Q_L * m / t)` for coefficients `m` in `[0, t)`.
    fn scale_message(&self, coeffs: &[u64], level: usize) -> Vec<u64> {
        let n = coeffs.len();
        let basis = self.basis(level);
        let lc = &self.consts[level - 1];
        let t = self.plain.value();
        let mut out = vec![0u64; level * n];
        let fix: Vec<u64> = coeffs
            .iter()
            .map(|&m| ((lc.q_mod_t as u128 * m as u128 + (t as u128 >> 1)) / t as u128) as u64)
            .collect();
        for i in 0..level {
            let q = basis.modulus(i);
            let d = lc.delta[i];
            let ds = q.shoup(d);
            for c in 0..n {
                let v = q.mul_shoup(q.reduce(coeffs[c]), d, ds);
                out[i * n + c] = q.add(v, q.reduce(fix[c]));
            }
        }
        out
    }

    fn secret_ntt_at(&self, sk: &SecretKey, level: usize) -> Vec<u64> {
        sk.ntt[..level * self.degree].to_vec()
    }

    // ---------------------------------------------------------------- keys

    pub fn keygen<R: CryptoRng + ?Sized>(&self, rng: &mut R) -> KeyMaterial {
        let n = self.degree;
        let s = ternary(rng, n);
        let secret = self.secret_from_coeffs(s.iter().map(|&c| c as i8).collect());
        let top = self.max_level();
        let q = self.basis(top);

        let mut a = vec![0u64; top * n];
        for i in 0..top {
            let m = q.modulus(i);
            for v in &mut a[i * n..(i + 1) * n] {
                *v = uniform_mod(rng, m);
            }
        }
        let mut b = small_to_residues(&cbd(rng, n), q.moduli());
        q.forward(&mut b);
        for i in 0..top {
            let m = q.modulus(i);
            for c in 0..n {
                let j = i * n + c;
                b[j] = m.sub(b[j], m.mul(a[j], secret.ntt[j]));
            }
        }
        let public = PublicKey {
            context_id: self.id,
            b,
            a,
        };

        // s^2 over the key-switching basis
        let kn = self.ks.len();
        let s2: Vec<u64> = (0..kn * n)
            .map(|j| self.ks.modulus(j / n).mul(secret.ntt[j], secret.ntt[j]))
            .collect();
        let special = self.params.special_modulus;
        let pairs = (0..top)
            .map(|digit| {
                let mut a = vec![0u64; kn * n];
                for i in 0..kn {
                    let m = self.ks.modulus(i);
                    for v in &mut a[i * n..(i + 1) * n] {
                        *v = uniform_mod(rng, m);
                    }
                }
                let mut b = small_to_residues(&cbd(rng, n), self.ks.moduli());
                self.ks.forward(&mut b);
                for i in 0..kn {
                    let m = self.ks.modulus(i);
                    let gadget = if i == digit { m.reduce(special) } else { 0 };
                    for c in 0..n {
                        let j = i * n + c;
                        let mut v = m.sub(b[j], m.mul(a[j], secret.ntt[j]));
                        if gadget != 0 {
                            v = m.add(v, m.mul(gadget, s2[j]));
                        }
                        b[j] = v;
                    }
                }
                (b, a)
            })
            .collect();
        KeyMaterial {
            secret,
            public,
            relin: RelinKey {
                context_id: self.id,
                pairs,
            },
        }
    }

    fn secret_from_coeffs(&self, coeffs: Vec<i8>) -> SecretKey {
        let wide: Vec<i64> = coeffs.iter().map(|&c| c as i64).collect();
        let mut ntt = small_to_residues(&wide, self.ks.moduli());
        self.ks.forward(&mut ntt);
        SecretKey {
            context_id: self.id,
            coeffs,
            ntt,
        }
    }

    pub fn secret_key_from_bytes(&self, bytes: &[u8]) -> Result<SecretKey, HeError> {
        let (id, coeffs) = decode_secret(bytes)?;
        self.check(id)?;
        if coeffs.len() != self.degree {
            return Err(HeError::Serialization("secret key length mismatch".into()));
        }
        Ok(self.secret_from_coeffs(coeffs))
    }

    // ------------------------------------------------------------ encoding

    /// Encodes slots for multiplication: centered lift of the batched
    /// polynomial, NTT form at the top level.
    pub fn encode(&self, p: &PlainVec) -> Result<Plaintext, HeError> {
        self.check_slots(p)?;
        let coeffs = self.slots_to_coeffs(p);
        let centered: Vec<i64> = coeffs.iter().map(|&c| self.plain.center(c)).collect();
        let top = self.basis(self.max_level());
        let mut residues = small_to_residues(&centered, top.moduli());
        top.forward(&mut residues);
        Ok(Plaintext {
            context_id: self.id,
            residues,
        })
    }

    // ---------------------------------------------------------- encryption

    /// Public-key encryption.
    pub fn encrypt<R: CryptoRng + ?Sized>(&self, p: &PlainVec, pk: &PublicKey, rng: &mut R) -> Result<Cipher, HeError> {
        self.check(pk.context_id)?;
        self.check_slots(p)?;
        let n = self.degree;
        let level = self.max_level();
        let q = self.basis(level);
        let mut u = small_to_residues(&ternary(rng, n), q.moduli());
        q.forward(&mut u);
        let msg = self.scale_message(&self.slots_to_coeffs(p), level);
        let mut c0 = small_to_residues(&cbd(rng, n), q.moduli());
        for i in 0..level {
            let m = q.modulus(i);
            for c in 0..n {
                let j = i * n + c;
                c0[j] = m.add(c0[j], msg[j]);
            }
        }
        q.forward(&mut c0);
        let mut c1 = small_to_residues(&cbd(rng, n), q.moduli());
        q.forward(&mut c1);
        for i in 0..level {
            let m = q.modulus(i);
            for c in 0..n {
                let j = i * n + c;
                c0[j] = m.add(c0[j], m.mul(pk.b[j], u[j]));
                c1[j] = m.add(c1[j], m.mul(pk.a[j], u[j]));
            }
        }
        Ok(Cipher {
            context_id: self.id,
            level,
            ntt_form: true,
            polys: vec![c0, c1],
            seed: None,
            depth: 0,
        })
    }

    fn expand_seed(&self, seed: &[u8; 32], level: usize) -> Vec<u64> {
        let n = self.degree;
        let q = self.basis(level);
        let mut rng = ChaCha20Rng::from_seed(*seed);
        let mut a = vec![0u64; level * n];
        for i in 0..level {
            let m = q.modulus(i);
            for v in &mut a[i * n..(i + 1) * n] {
                *v = uniform_mod(&mut rng, m);
            }
        }
        a
    }

    /// Secret-key encryption. The second component is derived from a 32-byte
    /// seed, so the serialized form is roughly half the size.
    pub fn encrypt_symmetric<R: CryptoRng + ?Sized>(
        &self,
        p: &PlainVec,
        sk: &SecretKey,
        rng: &mut R,
    ) -> Result<Cipher, HeError> {
        self.check(sk.context_id)?;
        self.check_slots(p)?;
        let n = self.degree;
        let level = self.max_level();
        let q = self.basis(level);
        let mut seed = [0u8; 32];
        rng.fill_bytes(&mut seed);
        let a = self.expand_seed(&seed, level);
        let msg = self.scale_message(&self.slots_to_coeffs(p), level);
        let mut c0 = small_to_residues(&cbd(rng, n), q.moduli());
        for i in 0..level {
            let m = q.modulus(i);
            for c in 0..n {
                let j = i * n + c;
                c0[j] = m.add(c0[j], msg[j]);
            }
        }
        q.forward(&mut c0);
        for i in 0..level {
            let m = q.modulus(i);
            for c in 0..n {
                let j = i * n + c;
                c0[j] = m.sub(c0[j], m.mul(a[j], sk.ntt[j]));
            }
        }
        Ok(Cipher {
            context_id: self.id,
            level,
            ntt_form: true,
            polys: vec![c0, a],
            seed: Some(seed),
            depth: 0,
        })
    }

    pub fn cipher_from_bytes(&self, bytes: &[u8]) -> Result<(Cipher, usize), HeError> {
        let (parts, used) = decode_cipher(bytes)?;
        self.check(parts.context_id)?;
        if parts.degree != self.degree || parts.level > self.max_level() {
            return Err(HeError::Serialization("ciphertext shape does not match parameters".into()));
        }
        let basis = self.basis(parts.level);
        for p in &parts.polys {
            for i in 0..parts.level {
                let q = basis.modulus(i).value();
                if p[i * self.degree..(i + 1) * self.degree].iter().any(|&v| v >= q) {
                    return Err(HeError::Serialization("residue out of range".into()));
                }
            }
        }
        let mut polys = parts.polys;
        if let Some(seed) = &parts.seed {
            if !parts.ntt_form {
                return Err(HeError::Serialization("seeded ciphertext must be in NTT form".into()));
            }
            polys.push(self.expand_seed(seed, parts.level));
        }
        debug_assert_eq!(polys.len(), parts.size);
        Ok((
            Cipher {
                context_id: parts.context_id,
                level: parts.level,
                ntt_form: parts.ntt_form,
                polys,
                seed: parts.seed,
                depth: parts.depth,
            },
            used,
        ))
    }

    // ---------------------------------------------------------- decryption

    /// `c_0 + c_1 s + c_2 s^2 + ...` in coefficient form.
    fn dot_secret(&self, c: &Cipher, sk: &SecretKey) -> Vec<u64> {
        let n = self.degree;
        let level = c.level;
        let q = self.basis(level);
        let s = self.secret_ntt_at(sk, level);
        let polys: Vec<Vec<u64>> = if c.ntt_form {
            c.polys.clone()
        } else {
            c.polys
                .iter()
                .map(|p| {
                    let mut p = p.clone();
                    q.forward(&mut p);
                    p
                })
                .collect()
        };
        // Horner: ((c_k s + c_{k-1}) s + ...) + c_0
        let mut acc = polys[polys.len() - 1].clone();
        for p in polys.iter().rev().skip(1) {
            for i in 0..level {
                let m = q.modulus(i);
                for c in 0..n {
                    let j = i * n + c;
                    acc[j] = m.add(m.mul(acc[j], s[j]), p[j]);
                }
            }
        }
        q.inverse(&mut acc);
        acc
    }

    pub fn decrypt(&self, c: &Cipher, sk: &SecretKey) -> Result<PlainVec, HeError> {
        self.check(c.context_id)?;
        self.check(sk.context_id)?;
        let n = self.degree;
        let level = c.level;
        let q = self.basis(level);
        let w = self.dot_secret(c, sk);
        let t = self.plain.value();
        let mut coeffs = vec![0u64; n];
        for (col, out) in coeffs.iter_mut().enumerate() {
            let mut whole: u64 = 0;
            let mut frac = 0.0f64;
            for i in 0..level {
                let m = q.modulus(i);
                let (h, hs) = q.hat_inv(i);
                let y = m.mul_shoup(w[i * n + col], h, hs);
                let prod = y as u128 * t as u128;
                let qi = m.value() as u128;
                whole = (whole + ((prod / qi) % t as u128) as u64) % t;
                frac += (prod % qi) as f64 / m.value() as f64;
            }
            *out = (whole + (frac.round() as u64 % t)) % t;
        }
        self.plain_ntt.forward(&mut coeffs);
        Ok(PlainVec(coeffs))
    }

    /// Invariant noise budget in bits: `log2(Q) - log2(|t (c . s) mod Q|) - 1`,
    /// clamped at zero. Zero means decryption is no longer reliable.
    pub fn noise_budget(&self, c: &Cipher, sk: &SecretKey) -> Result<u32, HeError> {
        self.check(c.context_id)?;
        self.check(sk.context_id)?;
        let n = self.degree;
        let level = c.level;
        let q = self.basis(level);
        let w = self.dot_secret(c, sk);
        let big_q = q.product();
        let half = big_q >> 1u32;
        let t = BigUint::from(self.plain.value());
        let mut max_norm = BigUint::default();
        for col in 0..n {
            let v = q.compose((0..level).map(|i| w[i * n + col]));
            let v = (v * &t) % big_q;
            let norm = if v > half { big_q - v } else { v };
            if norm > max_norm {
                max_norm = norm;
            }
        }
        let budget = big_q.bits() as i64 - bit_len(&max_norm) as i64 - 1;
        Ok(budget.max(0) as u32)
    }

    // ---------------------------------------------------------- representation

    pub fn to_ntt(&self, c: &mut Cipher) {
        if !c.ntt_form {
            let q = self.basis(c.level);
            for p in &mut c.polys {
                q.forward(p);
            }
            c.ntt_form = true;
        }
    }

    pub fn to_coeff(&self, c: &mut Cipher) {
        if c.ntt_form {
            let q = self.basis(c.level);
            for p in &mut c.polys {
                q.inverse(p);
            }
            c.ntt_form = false;
        }
    }

    fn same_shape(&self, a: &Cipher, b: &Cipher) -> Result<(), HeError> {
        self.check(a.context_id)?;
        self.check(b.context_id)?;
        if a.level != b.level {
            return Err(HeError::LevelMismatch(a.level, b.level));
        }
        Ok(())
    }

    // ---------------------------------------------------------- arithmetic

    pub fn add(&self, a: &Cipher, b: &Cipher) -> Result<Cipher, HeError> {
        let mut out = a.clone();
        self.add_assign(&mut out, b)?;
        Ok(out)
    }

    pub fn add_assign(&self, a: &mut Cipher, b: &Cipher) -> Result<(), HeError> {
        self.same_shape(a, b)?;
        let mut b_conv;
        let b = if a.ntt_form != b.ntt_form {
            b_conv = b.clone();
            if a.ntt_form {
                self.to_ntt(&mut b_conv);
            } else {
                self.to_coeff(&mut b_conv);
            }
            &b_conv
        } else {
            b
        };
        let n = self.degree;
        let q = self.basis(a.level);
        while a.polys.len() < b.polys.len() {
            a.polys.push(vec![0u64; a.level * n]);
        }
        for (pa, pb) in a.polys.iter_mut().zip(&b.polys) {
            for i in 0..a.level {
                let m = q.modulus(i);
                for (x, y) in pa[i * n..(i + 1) * n].iter_mut().zip(&pb[i * n..(i + 1) * n]) {
                    *x = m.add(*x, *y);
                }
            }
        }
        a.seed = None;
        a.depth = a.depth.max(b.depth);
        Ok(())
    }

    pub fn sub(&self, a: &Cipher, b: &Cipher) -> Result<Cipher, HeError> {
        let neg = self.negate(b)?;
        self.add(a, &neg)
    }

    pub fn negate(&self, a: &Cipher) -> Result<Cipher, HeError> {
        self.check(a.context_id)?;
        let n = self.degree;
        let q = self.basis(a.level);
        let mut out = a.clone();
        for p in &mut out.polys {
            for i in 0..a.level {
                let m = q.modulus(i);
                for x in &mut p[i * n..(i + 1) * n] {
                    *x = m.neg(*x);
                }
            }
        }
        out.seed = None;
        Ok(out)
    }

    /// Adds a plaintext slot vector.
    pub fn add_plain(&self, a: &Cipher, p: &PlainVec) -> Result<Cipher, HeError> {
        self.check(a.context_id)?;
        self.check_slots(p)?;
        let mut msg = self.scale_message(&self.slots_to_coeffs(p), a.level);
        let q = self.basis(a.level);
        if a.ntt_form {
            q.forward(&mut msg);
        }
        let n = self.degree;
        let mut out = a.clone();
        for i in 0..a.level {
            let m = q.modulus(i);
            for (x, y) in out.polys[0][i * n..(i + 1) * n].iter_mut().zip(&msg[i * n..(i + 1) * n]) {
                *x = m.add(*x, *y);
            }
        }
        Ok(out)
    }

    /// Adds the same value to every slot.
    pub fn add_scalar(&self, a: &Cipher, value: u64) -> Result<Cipher, HeError> {
        self.check(a.context_id)?;
        let t = self.plain.value();
        let value = value % t;
        let n = self.degree;
        let q = self.basis(a.level);
        let scaled = self.scale_message(&[value], a.level);
        let mut out = a.clone();
        for i in 0..a.level {
            let m = q.modulus(i);
            let s = scaled[i];
            let p = &mut out.polys[0][i * n..(i + 1) * n];
            if a.ntt_form {
                for x in p.iter_mut() {
                    *x = m.add(*x, s);
                }
            } else {
                p[0] = m.add(p[0], s);
            }
        }
        Ok(out)
    }

    /// Multiplies every slot by `value`, using its centered representative.
    pub fn mul_scalar(&self, a: &Cipher, value: u64) -> Result<Cipher, HeError> {
        self.check(a.context_id)?;
        let c = self.plain.center(value % self.plain.value());
        let n = self.degree;
        let q = self.basis(a.level);
        let mut out = a.clone();
        for p in &mut out.polys {
            for i in 0..a.level {
                let m = q.modulus(i);
                let w = m.reduce_i64(c);
                let ws = m.shoup(w);
                for x in &mut p[i * n..(i + 1) * n] {
                    *x = m.mul_shoup(*x, w, ws);
                }
            }
        }
        out.seed = None;
        Ok(out)
    }

    /// Ciphertext-plaintext multiplication with a pre-encoded plaintext.
    pub fn mul_plain(&self, a: &Cipher, p: &Plaintext) -> Result<Cipher, HeError> {
        self.check(a.context_id)?;
        self.check(p.context_id)?;
        let mut out = a.clone();
        self.to_ntt(&mut out);
        let n = self.degree;
        let q = self.basis(a.level);
        for poly in &mut out.polys {
            for i in 0..a.level {
                let m = q.modulus(i);
                let pr = &p.residues[i * n..(i + 1) * n];
                for (x, y) in poly[i * n..(i + 1) * n].iter_mut().zip(pr) {
                    *x = m.mul(*x, *y);
                }
            }
        }
        out.seed = None;
        Ok(out)
    }

    pub fn mul_plain_vec(&self, a: &Cipher, p: &PlainVec) -> Result<Cipher, HeError> {
        let encoded = self.encode(p)?;
        self.mul_plain(a, &encoded)
    }

    /// `sum_j a_j * p_j` with one modular reduction per coefficient. All
    /// inputs must share a level; ciphertexts must be in NTT form.
    pub fn dot_plain(&self, cts: &[Cipher], pts: &[&Plaintext]) -> Result<Cipher, HeError> {
        if cts.is_empty() || cts.len() != pts.len() {
            return Err(HeError::LengthMismatch {
                expected: cts.len(),
                got: pts.len(),
            });
        }
        let level = cts[0].level;
        for c in cts {
            self.check(c.context_id)?;
            if c.level != level {
                return Err(HeError::LevelMismatch(level, c.level));
            }
            if !c.ntt_form || c.size() != 2 {
                return Err(HeError::InvalidParams("dot_plain expects two-component NTT-form ciphertexts".into()));
            }
        }
        for p in pts {
            self.check(p.context_id)?;
        }
        let n = self.degree;
        let q = self.basis(level);
        let mut out = vec![vec![0u64; level * n]; 2];
        for (comp, dst) in out.iter_mut().enumerate() {
            for i in 0..level {
                let m = q.modulus(i);
                // products are below 2^(2 * bits); keep the u128 sum from overflowing
                let chunk = 1usize << (127 - 2 * m.bits()).min(20);
                let dst_i = &mut dst[i * n..(i + 1) * n];
                let mut acc = vec![0u128; n];
                for (chunk_cts, chunk_pts) in cts.chunks(chunk).zip(pts.chunks(chunk)) {
                    for (c, p) in chunk_cts.iter().zip(chunk_pts) {
                        let x = &c.polys[comp][i * n..(i + 1) * n];
                        let y = &p.residues[i * n..(i + 1) * n];
                        for ((a, &xv), &yv) in acc.iter_mut().zip(x).zip(y) {
                            *a += xv as u128 * yv as u128;
                        }
                    }
                    for a in acc.iter_mut() {
                        *a = m.reduce_u128(*a) as u128;
                    }
                }
                for (d, a) in dst_i.iter_mut().zip(&acc) {
                    *d = *a as u64;
                }
            }
        }
        Ok(Cipher {
            context_id: self.id,
            level,
            ntt_form: true,
            polys: out,
            seed: None,
            depth: cts.iter().map(|c| c.depth).max().unwrap_or(0),
        })
    }

    // ---------------------------------------------------------- multiplication

    /// Lifts a top-level coefficient-form polynomial to NTT form over `Q` and
    /// the extension basis.
    fn lift(&self, coeff: &[u64], ntt_q: Option<&[u64]>) -> (Vec<u64>, Vec<u64>) {
        let n = self.degree;
        let q = self.basis(self.max_level());
        let q_part = match ntt_q {
            Some(v) => v.to_vec(),
            None => {
                let mut v = coeff.to_vec();
                q.forward(&mut v);
                v
            }
        };
        let mut p_part = vec![0u64; self.ext.len() * n];
        self.lift.convert(coeff, &mut p_part, n);
        self.ext.forward(&mut p_part);
        (q_part, p_part)
    }

    fn tensor_components(
        &self,
        a: &[(Vec<u64>, Vec<u64>)],
        b: Option<&[(Vec<u64>, Vec<u64>)]>,
    ) -> Vec<(Vec<u64>, Vec<u64>)> {
        let n = self.degree;
        let q = self.basis(self.max_level());
        let size = a.len() + b.map_or(a.len(), |b| b.len()) - 1;
        let mut out: Vec<(Vec<u64>, Vec<u64>)> = (0..size)
            .map(|_| (vec![0u64; q.len() * n], vec![0u64; self.ext.len() * n]))
            .collect();
        let mul_into = |moduli: &[Modulus], x: &[u64], y: &[u64], dst: &mut [u64]| {
            for (i, m) in moduli.iter().enumerate() {
                let r = i * n..(i + 1) * n;
                for ((d, &xv), &yv) in dst[r.clone()].iter_mut().zip(&x[r.clone()]).zip(&y[r]) {
                    *d = m.add(*d, m.mul(xv, yv));
                }
            }
        };
        let rhs = b.unwrap_or(a);
        for (i, (aq, ap)) in a.iter().enumerate() {
            for (j, (bq, bp)) in rhs.iter().enumerate() {
                let (dq, dp) = &mut out[i + j];
                mul_into(q.moduli(), aq, bq, dq);
                mul_into(self.ext.moduli(), ap, bp, dp);
            }
        }
        out
    }

    /// Tensor product scaled by `t/Q`, without relinearization. Inputs must
    /// be at the top level; the result has `a.size() + b.size() - 1`
    /// components in coefficient form.
    pub fn mul_no_relin(&self, a: &Cipher, b: &Cipher) -> Result<Cipher, HeError> {
        self.same_shape(a, b)?;
        if a.level != self.max_level() {
            return Err(HeError::LevelMismatch(self.max_level(), a.level));
        }
        let same = std::ptr::eq(a, b);
        let lifted_a = self.lift_cipher(a);
        let lifted_b = if same { None } else { Some(self.lift_cipher(b)) };
        let tensor = self.tensor_components(&lifted_a, lifted_b.as_deref());
        let n = self.degree;
        let q = self.basis(self.max_level());
        let polys = crate::par::map_indices(tensor.len(), |idx| {
            let (mut dq, mut dp) = tensor[idx].clone();
            q.inverse(&mut dq);
            self.ext.inverse(&mut dp);
            let mut out = vec![0u64; q.len() * n];
            self.scaler.scale(&dq, &dp, &mut out, n);
            out
        });
        Ok(Cipher {
            context_id: self.id,
            level: a.level,
            ntt_form: false,
            polys,
            seed: None,
            depth: a.depth.max(b.depth) + 1,
        })
    }

    fn lift_cipher(&self, c: &Cipher) -> Vec<(Vec<u64>, Vec<u64>)> {
        let q = self.basis(c.level);
        c.polys
            .iter()
            .map(|p| {
                if c.ntt_form {
                    let mut coeff = p.clone();
                    q.inverse(&mut coeff);
                    self.lift(&coeff, Some(p))
                } else {
                    self.lift(p, None)
                }
            })
            .collect()
    }

    /// Homomorphic multiplication followed by relinearization.
    pub fn multiply(&self, a: &Cipher, b: &Cipher, rk: &RelinKey) -> Result<Cipher, HeError> {
        let prod = self.mul_no_relin(a, b)?;
        self.relinearize(&prod, rk)
    }

    pub fn square(&self, a: &Cipher, rk: &RelinKey) -> Result<Cipher, HeError> {
        self.multiply(a, a, rk)
    }

    /// Reduces a three-component ciphertext to two components using the
    /// special-prime key-switching key.
    pub fn relinearize(&self, c: &Cipher, rk: &RelinKey) -> Result<Cipher, HeError> {
        self.check(c.context_id)?;
        self.check(rk.context_id)?;
        match c.size() {
            2 => return Ok(c.clone()),
            3 => {}
            s => return Err(HeError::InvalidParams(format!("cannot relinearize a size-{s} ciphertext"))),
        }
        if c.level != self.max_level() {
            return Err(HeError::LevelMismatch(self.max_level(), c.level));
        }
        let n = self.degree;
        let level = c.level;
        let q = self.basis(level);
        let mut work = c.clone();
        self.to_coeff(&mut work);
        let c2 = &work.polys[2];
        let kn = self.ks.len();
        let mut acc0 = vec![0u128; kn * n];
        let mut acc1 = vec![0u128; kn * n];
        for digit in 0..level {
            let src = &c2[digit * n..(digit + 1) * n];
            let mut d = vec![0u64; kn * n];
            for (i, m) in self.ks.moduli().iter().enumerate() {
                for (x, &s) in d[i * n..(i + 1) * n].iter_mut().zip(src) {
                    *x = m.reduce(s);
                }
            }
            self.ks.forward(&mut d);
            let (kb, ka) = &rk.pairs[digit];
            for j in 0..kn * n {
                acc0[j] += d[j] as u128 * kb[j] as u128;
                acc1[j] += d[j] as u128 * ka[j] as u128;
            }
        }
        let mut r0: Vec<u64> = acc0.iter().enumerate().map(|(j, &v)| self.ks.modulus(j / n).reduce_u128(v)).collect();
        let mut r1: Vec<u64> = acc1.iter().enumerate().map(|(j, &v)| self.ks.modulus(j / n).reduce_u128(v)).collect();
        self.ks.inverse(&mut r0);
        self.ks.inverse(&mut r1);
        let sp = self.ks.modulus(kn - 1);
        let mut out = work;
        out.polys.truncate(2);
        for (dst, r) in out.polys.iter_mut().zip([&r0, &r1]) {
            let tail = &r[level * n..(level + 1) * n];
            for i in 0..level {
                let m = q.modulus(i);
                let (w, ws) = self.special_inv[i];
                for c in 0..n {
                    let down = m.sub(r[i * n + c], m.reduce_i64(sp.center(tail[c])));
                    let v = m.mul_shoup(down, w, ws);
                    dst[i * n + c] = m.add(dst[i * n + c], v);
                }
            }
        }
        out.seed = None;
        Ok(out)
    }

    // ---------------------------------------------------------- modulus switching

    /// Drops the last ciphertext prime, rescaling so the message is preserved.
    pub fn mod_switch_to_next(&self, c: &Cipher) -> Result<Cipher, HeError> {
        self.check(c.context_id)?;
        if c.level <= 1 {
            return Err(HeError::LevelMismatch(2, c.level));
        }
        let n = self.degree;
        let level = c.level;
        let q = self.basis(level);
        let lc = &self.consts[level - 1];
        let mut work = c.clone();
        self.to_coeff(&mut work);
        let last = q.modulus(level - 1);
        for p in &mut work.polys {
            let tail: Vec<i64> = p[(level - 1) * n..level * n].iter().map(|&v| last.center(v)).collect();
            for i in 0..level - 1 {
                let m = q.modulus(i);
                let (w, ws) = lc.last_inv[i];
                for (x, &tv) in p[i * n..(i + 1) * n].iter_mut().zip(&tail) {
                    *x = m.mul_shoup(m.sub(*x, m.reduce_i64(tv)), w, ws);
                }
            }
            p.truncate((level - 1) * n);
        }
        work.level = level - 1;
        work.seed = None;
        Ok(work)
    }

    pub fn mod_switch_to_last(&self, c: &Cipher) -> Result<Cipher, HeError> {
        let mut cur = c.clone();
        while cur.level > 1 {
            cur = self.mod_switch_to_next(&cur)?;
        }
        Ok(cur)
    }
}
