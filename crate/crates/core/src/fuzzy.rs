//! Shortened binary BCH codes and the fuzzy-commitment key reconstruction
//! built on them.
//!
//! Codeword bit `i` of a length-`L` shortened codeword is the coefficient of
//! `x^(L-1-i)`: the message occupies the high-degree end, parity the low end.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bits::Bits;
use crate::challenge::ChallengeConfig;
use crate::error::{Error, Result};
use crate::keygen::{CalibrationProfile, Puf};
use crate::metrics::SeedSchedule;

pub const HELPER_SCHEMA: &str = "rosspuf.helper/1";
/// Largest supported field extension degree.
pub const MAX_M: u32 = 16;

/// Primitive polynomials for GF(2^m), bit `i` = coefficient of `x^i`.
const PRIMITIVE: [u32; 17] = [
    0, 0, 0x7, 0xB, 0x13, 0x25, 0x43, 0x89, 0x11D, 0x211, 0x409, 0x805, 0x1053, 0x201B, 0x4443, 0x8003, 0x1100B,
];

/// GF(2^m) arithmetic by log/antilog tables.
#[derive(Clone, Debug)]
pub struct Gf {
    pub m: u32,
    /// Multiplicative group order `2^m - 1`.
    pub n: usize,
    exp: Vec<u16>,
    log: Vec<u16>,
}

impl Gf {
    pub fn new(m: u32) -> Result<Self> {
        if !(2..=MAX_M).contains(&m) {
            return Err(Error::CodeParameter(format!("field degree {m} outside [2, {MAX_M}]")));
        }
        let n = (1usize << m) - 1;
        let poly = PRIMITIVE[m as usize];
        let mut exp = vec![0u16; 2 * n];
        let mut log = vec![0u16; n + 1];
        let mut x = 1u32;
        for i in 0..n {
            exp[i] = x as u16;
            log[x as usize] = i as u16;
            x <<= 1;
            if x & (1 << m) != 0 {
                x ^= poly;
            }
        }
        for i in n..2 * n {
            exp[i] = exp[i - n];
        }
        Ok(Self { m, n, exp, log })
    }

    /// `alpha^e` for any non-negative exponent.
    #[inline]
    pub fn alpha(&self, e: usize) -> u16 {
        self.exp[e % self.n]
    }

    #[inline]
    pub fn mul(&self, a: u16, b: u16) -> u16 {
        if a == 0 || b == 0 {
            0
        } else {
            self.exp[self.log[a as usize] as usize + self.log[b as usize] as usize]
        }
    }

    #[inline]
    pub fn inv(&self, a: u16) -> u16 {
        assert!(a != 0, "zero has no inverse");
        self.exp[(self.n - self.log[a as usize] as usize) % self.n]
    }

    #[inline]
    pub fn div(&self, a: u16, b: u16) -> u16 {
        self.mul(a, self.inv(b))
    }
}

/// Product of two GF(2) polynomials, coefficients low to high.
fn poly2_mul(a: &[u8], b: &[u8]) -> Vec<u8> {
    let mut out = vec![0u8; a.len() + b.len() - 1];
    for (i, &x) in a.iter().enumerate() {
        if x != 0 {
            for (j, &y) in b.iter().enumerate() {
                out[i + j] ^= y;
            }
        }
    }
    out
}

/// Minimal polynomial of `alpha^i` over GF(2).
fn minimal_poly(gf: &Gf, i: usize) -> Vec<u8> {
    let mut coset = vec![i % gf.n];
    loop {
        let next = (coset.last().unwrap() * 2) % gf.n;
        if next == coset[0] {
            break;
        }
        coset.push(next);
    }
    // Product of (x + alpha^c) with field coefficients, which collapse to {0, 1}.
    let mut p: Vec<u16> = vec![1];
    for &c in &coset {
        let root = gf.alpha(c);
        let mut q = vec![0u16; p.len() + 1];
        for (k, &a) in p.iter().enumerate() {
            q[k + 1] ^= a;
            q[k] ^= gf.mul(a, root);
        }
        p = q;
    }
    p.into_iter()
        .map(|c| {
            debug_assert!(c <= 1);
            c as u8
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BchCode {
    pub m: u32,
    /// Natural length `2^m - 1`.
    pub n: usize,
    /// Natural message length.
    pub k: usize,
    pub t: u32,
    /// Message bits removed by shortening; the shortened message is `k - shortening`.
    pub shortening: usize,
    /// Generator coefficients, low to high; degree equals the parity length.
    pub generator: Vec<u8>,
}

impl BchCode {
    pub fn parity_bits(&self) -> usize {
        self.n - self.k
    }

    pub fn message_len(&self) -> usize {
        self.k - self.shortening
    }

    pub fn codeword_len(&self) -> usize {
        self.n - self.shortening
    }

    fn field(&self) -> Gf {
        Gf::new(self.m).expect("code built from a valid field")
    }
}

/// Narrow-sense BCH code of capacity `t`, shortened to `key_len` message bits,
/// over the smallest field with `2^m - 1 >= key_len + m t`.
pub fn bch_build(key_len: usize, t: u32) -> Result<BchCode> {
    if key_len == 0 || t == 0 {
        return Err(Error::CodeParameter("key length and t must be at least 1".into()));
    }
    let m = (2..=MAX_M)
        .find(|&m| (1usize << m) > key_len + m as usize * t as usize)
        .ok_or_else(|| Error::CodeParameter(format!("no field up to GF(2^{MAX_M}) fits {key_len} bits with t = {t}")))?;
    let gf = Gf::new(m)?;
    let mut seen = vec![false; gf.n];
    let mut generator = vec![1u8];
    for i in 1..=2 * t as usize {
        let r = i % gf.n;
        if seen[r] {
            continue;
        }
        let mut c = r;
        loop {
            seen[c] = true;
            c = (c * 2) % gf.n;
            if c == r {
                break;
            }
        }
        generator = poly2_mul(&generator, &minimal_poly(&gf, r));
    }
    let parity = generator.len() - 1;
    let k = gf.n - parity;
    if k < key_len {
        return Err(Error::CodeParameter(format!("parity {parity} leaves {k} < {key_len} message bits")));
    }
    Ok(BchCode {
        m,
        n: gf.n,
        k,
        t,
        shortening: k - key_len,
        generator,
    })
}

/// Remainder of `message(x) * x^r` modulo the generator, as `r` parity bits
/// in codeword order.
fn parity_of(code: &BchCode, message: &Bits) -> Bits {
    let r = code.parity_bits();
    let words = r.div_ceil(64);
    let mut g = vec![0u64; words];
    for (j, &c) in code.generator[..r].iter().enumerate() {
        if c != 0 {
            g[j / 64] |= 1 << (j % 64);
        }
    }
    let top_word = (r - 1) / 64;
    let top_bit = (r - 1) % 64;
    let top_mask = if r.is_multiple_of(64) { u64::MAX } else { (1u64 << (r % 64)) - 1 };
    let mut rem = vec![0u64; words];
    for b in message.iter() {
        let fb = b ^ ((rem[top_word] >> top_bit) & 1 == 1);
        for w in (1..words).rev() {
            rem[w] = (rem[w] << 1) | (rem[w - 1] >> 63);
        }
        rem[0] <<= 1;
        rem[top_word] &= top_mask;
        if fb {
            for (a, b) in rem.iter_mut().zip(&g) {
                *a ^= b;
            }
        }
    }
    (0..r).rev().map(|j| (rem[j / 64] >> (j % 64)) & 1 == 1).collect()
}

pub fn bch_encode(code: &BchCode, message: &Bits) -> Result<Bits> {
    if message.len() != code.message_len() {
        return Err(Error::LengthMismatch {
            expected: code.message_len(),
            got: message.len(),
        });
    }
    let mut out = message.clone();
    out.extend(&parity_of(code, message));
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Decoded {
    pub message: Bits,
    /// Codeword indices that were flipped.
    pub corrected: Vec<usize>,
}

/// Syndromes `S_1..S_2t` of a received word.
fn syndromes(gf: &Gf, code: &BchCode, received: &Bits) -> Vec<u16> {
    let len = received.len();
    let two_t = 2 * code.t as usize;
    let mut s = vec![0u16; two_t];
    for (i, bit) in received.iter().enumerate() {
        if bit {
            let e = len - 1 - i;
            for (j, sj) in s.iter_mut().enumerate() {
                *sj ^= gf.alpha((j + 1) * e);
            }
        }
    }
    s
}

/// Berlekamp-Massey: error locator `Lambda(x)`, coefficients low to high.
fn berlekamp_massey(gf: &Gf, s: &[u16]) -> Vec<u16> {
    let mut c = vec![1u16];
    let mut b = vec![1u16];
    let mut l = 0usize;
    let mut shift = 1usize;
    let mut last = 1u16;
    for k in 0..s.len() {
        let mut d = s[k];
        for i in 1..=l.min(c.len() - 1) {
            d ^= gf.mul(c[i], s[k - i]);
        }
        if d == 0 {
            shift += 1;
            continue;
        }
        let coef = gf.div(d, last);
        let mut next = c.clone();
        if next.len() < b.len() + shift {
            next.resize(b.len() + shift, 0);
        }
        for (i, &bi) in b.iter().enumerate() {
            next[i + shift] ^= gf.mul(coef, bi);
        }
        if 2 * l <= k {
            b = c;
            l = k + 1 - l;
            last = d;
            shift = 1;
        } else {
            shift += 1;
        }
        c = next;
    }
    while c.len() > 1 && *c.last().unwrap() == 0 {
        c.pop();
    }
    if c.len() - 1 != l {
        // Degree below the register length: no consistent locator.
        c.resize(l + 1, 0);
    }
    c
}

/// Corrects up to `t` errors or returns [`Error::Uncorrectable`].
pub fn bch_decode(code: &BchCode, received: &Bits) -> Result<Decoded> {
    let len = code.codeword_len();
    if received.len() != len {
        return Err(Error::LengthMismatch {
            expected: len,
            got: received.len(),
        });
    }
    let gf = code.field();
    let s = syndromes(&gf, code, received);
    let mut word = received.clone();
    let mut corrected = Vec::new();
    if s.iter().any(|&v| v != 0) {
        let lambda = berlekamp_massey(&gf, &s);
        let deg = lambda.len() - 1;
        if deg > code.t as usize || lambda[deg] == 0 {
            return Err(Error::Uncorrectable);
        }
        // Chien search over the exponents present in the shortened word.
        for e in 0..len {
            let inv = (gf.n - e % gf.n) % gf.n;
            let mut acc = 0u16;
            for (i, &li) in lambda.iter().enumerate() {
                if li != 0 {
                    acc ^= gf.mul(li, gf.alpha(i * inv));
                }
            }
            if acc == 0 {
                corrected.push(len - 1 - e);
            }
        }
        if corrected.len() != deg {
            return Err(Error::Uncorrectable);
        }
        corrected.sort_unstable();
        for &i in &corrected {
            word.flip(i);
        }
    }
    Ok(Decoded {
        message: word.slice(0, code.message_len()),
        corrected,
    })
}

/// Public reconstruction data: the BCH parity of the enrolled key and a
/// digest used only to verify the reconstruction.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HelperData {
    pub schema: String,
    pub key_len: usize,
    pub t: u32,
    pub m: u32,
    pub parity: Bits,
    /// Hex SHA-256 of the enrolled key bytes.
    pub digest: String,
}

fn key_digest(key: &Bits) -> String {
    let mut h = Sha256::new();
    h.update((key.len() as u64).to_le_bytes());
    h.update(key.to_msb_bytes());
    hex::encode(h.finalize())
}

impl HelperData {
    pub fn parity_bits(&self) -> usize {
        self.parity.len()
    }

    pub fn code(&self) -> Result<BchCode> {
        if self.schema != HELPER_SCHEMA {
            return Err(Error::Input(format!("unsupported helper schema {:?}", self.schema)));
        }
        let code = bch_build(self.key_len, self.t)?;
        if code.m != self.m || code.parity_bits() != self.parity.len() {
            return Err(Error::Input("helper data does not match its code parameters".into()));
        }
        Ok(code)
    }
}

pub fn enroll(key: &Bits, code: &BchCode) -> Result<(HelperData, Bits)> {
    let cw = bch_encode(code, key)?;
    let helper = HelperData {
        schema: HELPER_SCHEMA.into(),
        key_len: key.len(),
        t: code.t,
        m: code.m,
        parity: cw.slice(key.len(), cw.len()),
        digest: key_digest(key),
    };
    Ok((helper, key.clone()))
}

/// [`reconstruct`] with a prebuilt code.
pub fn reconstruct_with(code: &BchCode, helper: &HelperData, noisy: &Bits) -> Result<Bits> {
    if noisy.len() != helper.key_len {
        return Err(Error::LengthMismatch {
            expected: helper.key_len,
            got: noisy.len(),
        });
    }
    let mut word = noisy.clone();
    word.extend(&helper.parity);
    let key = bch_decode(code, &word)?.message;
    if key_digest(&key) != helper.digest {
        return Err(Error::Rejected("reconstructed key fails the integrity digest".into()));
    }
    Ok(key)
}

pub fn reconstruct(helper: &HelperData, noisy: &Bits) -> Result<Bits> {
    reconstruct_with(&helper.code()?, helper, noisy)
}

/// Keys gathered for an ECC sweep: one enrolled reference, noisy repeats of
/// the same challenge, and responses to other challenges.
#[derive(Clone, Debug)]
pub struct EccKeys {
    pub reference: Bits,
    pub intra: Vec<Bits>,
    pub inter: Vec<Bits>,
}

impl EccKeys {
    /// Reference from intra noise seed 0, repeats from seeds `1..=trials`,
    /// inter keys from the first `trials` inter challenges.
    pub fn collect(
        puf: &Puf,
        challenges: &ChallengeConfig,
        schedule: SeedSchedule,
        profile: &CalibrationProfile,
        trials: usize,
    ) -> Result<Self> {
        let key = |c: &crate::challenge::Challenge, noise: u64| -> Result<Bits> {
            Ok(puf.respond(c, noise, profile)?.key.expect("respond sets the key").bits)
        };
        let intra_c = challenges.make(schedule.intra_challenge())?;
        let reference = key(&intra_c, schedule.intra_noise(0))?;
        let intra = (1..=trials as u64)
            .into_par_iter()
            .map(|i| key(&intra_c, schedule.intra_noise(i)))
            .collect::<Result<Vec<_>>>()?;
        let inter = (0..trials as u64)
            .into_par_iter()
            .map(|i| key(&challenges.make(schedule.inter_challenge(i))?, schedule.inter_noise(i)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { reference, intra, inter })
    }

    pub fn intra_flips(&self) -> Result<Vec<usize>> {
        self.intra.iter().map(|k| self.reference.hamming(k)).collect()
    }

    pub fn inter_flips(&self) -> Result<Vec<usize>> {
        self.inter.iter().map(|k| self.reference.hamming(k)).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EccRow {
    pub t: u32,
    pub m: u32,
    pub parity_bits: usize,
    /// Fraction of intra repeats reconstructed to the enrolled key.
    pub intra_corrected: f64,
    /// Fraction of inter keys (wrongly) reconstructed to the enrolled key.
    pub inter_accepted: f64,
    pub intra_max_flips: usize,
    pub inter_min_flips: usize,
}

/// Correction rates per capacity; `t = 0` means no code (exact match only).
pub fn ecc_sweep(keys: &EccKeys, t_range: &[u32]) -> Result<Vec<EccRow>> {
    if keys.intra.is_empty() || keys.inter.is_empty() {
        return Err(Error::Input("ECC sweep needs intra and inter keys".into()));
    }
    let intra_flips = keys.intra_flips()?;
    let inter_flips = keys.inter_flips()?;
    let rate = |ok: usize, n: usize| ok as f64 / n as f64;
    t_range
        .iter()
        .map(|&t| {
            let (m, parity_bits, accepts): (u32, usize, Box<dyn Fn(&Bits) -> bool + Sync>) = if t == 0 {
                (0, 0, Box::new(|k: &Bits| *k == keys.reference))
            } else {
                let code = bch_build(keys.reference.len(), t)?;
                let (helper, _) = enroll(&keys.reference, &code)?;
                let (m, p) = (code.m, code.parity_bits());
                (
                    m,
                    p,
                    Box::new(move |k: &Bits| reconstruct_with(&code, &helper, k).is_ok_and(|r| r == keys.reference)),
                )
            };
            let intra_ok = keys.intra.par_iter().filter(|k| accepts(k)).count();
            let inter_ok = keys.inter.par_iter().filter(|k| accepts(k)).count();
            Ok(EccRow {
                t,
                m,
                parity_bits,
                intra_corrected: rate(intra_ok, keys.intra.len()),
                inter_accepted: rate(inter_ok, keys.inter.len()),
                intra_max_flips: *intra_flips.iter().max().unwrap(),
                inter_min_flips: *inter_flips.iter().min().unwrap(),
            })
        })
        .collect()
}
