//! Nine tests of the NIST SP 800-22 suite, multi-sequence aggregation,
//! corpus extension by key permutation, and bitstream export.
//!
//! The raw statistic functions (`frequency`, `runs`, ...) accept any length;
//! [`nist_test`] applies the suite's minimum-length rules first.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use rustfft::{num_complex::Complex64, FftPlanner};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use statrs::function::gamma::gamma_ur;

use crate::bits::Bits;
use crate::challenge::ChallengeConfig;
use crate::error::{Error, Result};
use crate::keygen::{normal_cdf, CalibrationProfile, Puf};
use crate::metrics::SeedSchedule;
use crate::seeds;

/// Upper regularized incomplete gamma, `igamc` in the reference code.
fn igamc(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        1.0
    } else {
        gamma_ur(a, x).clamp(0.0, 1.0)
    }
}

fn ones_pm(bits: &Bits) -> impl Iterator<Item = i64> + '_ {
    bits.iter().map(|b| if b { 1 } else { -1 })
}

pub fn frequency(bits: &Bits) -> f64 {
    let n = bits.len() as f64;
    let s: i64 = ones_pm(bits).sum();
    erfc(s.abs() as f64 / n.sqrt() / std::f64::consts::SQRT_2)
}

pub fn block_frequency(bits: &Bits, m: usize) -> f64 {
    let blocks = bits.len() / m;
    let chi2: f64 = (0..blocks)
        .map(|b| {
            let ones = (b * m..(b + 1) * m).filter(|&i| bits.get(i)).count();
            let pi = ones as f64 / m as f64;
            (pi - 0.5).powi(2)
        })
        .sum::<f64>()
        * 4.0
        * m as f64;
    igamc(blocks as f64 / 2.0, chi2 / 2.0)
}

fn cusum_p(n: i64, z: i64) -> f64 {
    let nf = n as f64;
    let zf = z as f64;
    let mut s1 = 0.0;
    let mut k = (-n / z + 1) / 4;
    while k <= (n / z - 1) / 4 {
        s1 += normal_cdf((4 * k + 1) as f64 * zf / nf.sqrt()) - normal_cdf((4 * k - 1) as f64 * zf / nf.sqrt());
        k += 1;
    }
    let mut s2 = 0.0;
    let mut k = (-n / z - 3) / 4;
    while k <= (n / z - 1) / 4 {
        s2 += normal_cdf((4 * k + 3) as f64 * zf / nf.sqrt()) - normal_cdf((4 * k + 1) as f64 * zf / nf.sqrt());
        k += 1;
    }
    (1.0 - s1 + s2).clamp(0.0, 1.0)
}

/// `(forward, reverse)`.
pub fn cumulative_sums(bits: &Bits) -> (f64, f64) {
    let n = bits.len() as i64;
    let mut s = 0i64;
    let (mut sup, mut inf) = (0i64, 0i64);
    for x in ones_pm(bits) {
        s += x;
        sup = sup.max(s);
        inf = inf.min(s);
    }
    let forward = sup.max(-inf);
    let reverse = (s - inf).max(sup - s);
    (cusum_p(n, forward.max(1)), cusum_p(n, reverse.max(1)))
}

pub fn runs(bits: &Bits) -> f64 {
    let n = bits.len() as f64;
    let pi = bits.count_ones() as f64 / n;
    if (pi - 0.5).abs() >= 2.0 / n.sqrt() {
        return 0.0;
    }
    let v = 1 + (1..bits.len()).filter(|&i| bits.get(i) != bits.get(i - 1)).count();
    let num = (v as f64 - 2.0 * n * pi * (1.0 - pi)).abs();
    erfc(num / (2.0 * (2.0 * n).sqrt() * pi * (1.0 - pi)))
}

/// Longest run of ones in a block. Block size and class table follow the
/// sequence length (8, 128 or 10^4 bits).
pub fn longest_run(bits: &Bits) -> f64 {
    let n = bits.len();
    let (m, lo, pi): (usize, usize, &[f64]) = if n < 6272 {
        (8, 1, &[0.21484375, 0.3671875, 0.23046875, 0.1875])
    } else if n < 750_000 {
        (128, 4, &[0.1174035788, 0.242955959, 0.249363483, 0.17517706, 0.102701071, 0.112398847])
    } else {
        (10_000, 10, &[0.0882, 0.2092, 0.2483, 0.1933, 0.1208, 0.0675, 0.0727])
    };
    let k = pi.len() - 1;
    let blocks = n / m;
    let mut v = vec![0usize; pi.len()];
    for b in 0..blocks {
        let (mut run, mut best) = (0usize, 0usize);
        for i in b * m..(b + 1) * m {
            if bits.get(i) {
                run += 1;
                best = best.max(run);
            } else {
                run = 0;
            }
        }
        v[best.clamp(lo, lo + k) - lo] += 1;
    }
    let nb = blocks as f64;
    let chi2: f64 = v.iter().zip(pi).map(|(&o, &p)| (o as f64 - nb * p).powi(2) / (nb * p)).sum();
    igamc(k as f64 / 2.0, chi2 / 2.0)
}

fn gf2_rank(rows: &mut [u32]) -> usize {
    let mut rank = 0;
    for col in (0..32).rev() {
        let bit = 1u32 << col;
        if let Some(p) = (rank..rows.len()).find(|&r| rows[r] & bit != 0) {
            rows.swap(rank, p);
            for r in 0..rows.len() {
                if r != rank && rows[r] & bit != 0 {
                    rows[r] ^= rows[rank];
                }
            }
            rank += 1;
        }
    }
    rank
}

/// Probability that a random 32x32 binary matrix has rank `r`.
fn rank_probability(r: i32) -> f64 {
    let (m, q) = (32i32, 32i32);
    let mut p = 2f64.powi(r * (q + m - r) - m * q);
    for i in 0..r {
        p *= (1.0 - 2f64.powi(i - q)) * (1.0 - 2f64.powi(i - m)) / (1.0 - 2f64.powi(i - r));
    }
    p
}

pub fn rank(bits: &Bits) -> f64 {
    let count = bits.len() / 1024;
    let mut f = [0usize; 3];
    for k in 0..count {
        let mut rows: Vec<u32> = (0..32)
            .map(|r| {
                (0..32).fold(0u32, |acc, c| (acc << 1) | bits.get(k * 1024 + r * 32 + c) as u32)
            })
            .collect();
        match gf2_rank(&mut rows) {
            32 => f[0] += 1,
            31 => f[1] += 1,
            _ => f[2] += 1,
        }
    }
    let p32 = rank_probability(32);
    let p31 = rank_probability(31);
    let probs = [p32, p31, 1.0 - p32 - p31];
    let n = count as f64;
    let chi2: f64 = f.iter().zip(probs).map(|(&o, p)| (o as f64 - n * p).powi(2) / (n * p)).sum();
    (-chi2 / 2.0).exp()
}

pub fn spectral(bits: &Bits) -> f64 {
    let n = bits.len();
    let mut x: Vec<Complex64> = ones_pm(bits).map(|v| Complex64::new(v as f64, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut x);
    let t = ((1.0f64 / 0.05).ln() * n as f64).sqrt();
    let n0 = 0.95 * n as f64 / 2.0;
    let n1 = x[..n / 2].iter().filter(|c| c.norm() < t).count() as f64;
    let d = (n1 - n0) / (n as f64 * 0.95 * 0.05 / 4.0).sqrt();
    erfc(d.abs() / std::f64::consts::SQRT_2)
}

/// Counts of every overlapping (wrap-around) `m`-bit pattern.
fn pattern_counts(bits: &Bits, m: usize) -> Vec<u64> {
    let n = bits.len();
    let mut counts = vec![0u64; 1 << m];
    if m == 0 {
        counts[0] = n as u64;
        return counts;
    }
    let mask = (1usize << m) - 1;
    let mut w = 0usize;
    for i in 0..m - 1 {
        w = (w << 1) | bits.get(i % n) as usize;
    }
    for i in 0..n {
        w = ((w << 1) | bits.get((i + m - 1) % n) as usize) & mask;
        counts[w] += 1;
    }
    counts
}

pub fn approximate_entropy(bits: &Bits, m: usize) -> f64 {
    let n = bits.len() as f64;
    let phi = |k: usize| -> f64 {
        pattern_counts(bits, k)
            .into_iter()
            .filter(|&c| c > 0)
            .map(|c| {
                let p = c as f64 / n;
                p * p.ln()
            })
            .sum()
    };
    let apen = phi(m) - phi(m + 1);
    let chi2 = 2.0 * n * (std::f64::consts::LN_2 - apen);
    igamc(2f64.powi(m as i32 - 1), chi2 / 2.0)
}

/// `(p1, p2)` for pattern length `m >= 2`.
pub fn serial(bits: &Bits, m: usize) -> (f64, f64) {
    let n = bits.len() as f64;
    let psi = |k: isize| -> f64 {
        if k <= 0 {
            return 0.0;
        }
        let s: f64 = pattern_counts(bits, k as usize).into_iter().map(|c| (c as f64).powi(2)).sum();
        2f64.powi(k as i32) / n * s - n
    };
    let m = m as isize;
    let (a, b, c) = (psi(m), psi(m - 1), psi(m - 2));
    let d1 = a - b;
    let d2 = a - 2.0 * b + c;
    (
        igamc(2f64.powi(m as i32 - 2), d1 / 2.0),
        igamc(2f64.powi(m as i32 - 3), d2 / 2.0),
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TestKind {
    Frequency,
    BlockFrequency,
    CumulativeSums,
    Runs,
    LongestRun,
    Rank,
    Fft,
    ApproximateEntropy,
    Serial,
}

impl TestKind {
    pub const ALL: [TestKind; 9] = [
        TestKind::Frequency,
        TestKind::BlockFrequency,
        TestKind::CumulativeSums,
        TestKind::Runs,
        TestKind::LongestRun,
        TestKind::Rank,
        TestKind::Fft,
        TestKind::ApproximateEntropy,
        TestKind::Serial,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TestKind::Frequency => "Frequency",
            TestKind::BlockFrequency => "BlockFrequency",
            TestKind::CumulativeSums => "CumulativeSums",
            TestKind::Runs => "Runs",
            TestKind::LongestRun => "LongestRun",
            TestKind::Rank => "Rank",
            TestKind::Fft => "FFT",
            TestKind::ApproximateEntropy => "ApproximateEntropy",
            TestKind::Serial => "Serial",
        }
    }

    /// Names of the p-values the test emits.
    pub fn outputs(self) -> &'static [&'static str] {
        match self {
            TestKind::CumulativeSums => &["CumulativeSums (forward)", "CumulativeSums (reverse)"],
            TestKind::Serial => &["Serial (1)", "Serial (2)"],
            k => match k {
                TestKind::Frequency => &["Frequency"],
                TestKind::BlockFrequency => &["BlockFrequency"],
                TestKind::Runs => &["Runs"],
                TestKind::LongestRun => &["LongestRun"],
                TestKind::Rank => &["Rank"],
                TestKind::Fft => &["FFT"],
                _ => &["ApproximateEntropy"],
            },
        }
    }
}

/// Block and pattern sizes; `None` picks a length-dependent default.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TestParams {
    pub block_frequency_m: Option<usize>,
    pub approximate_entropy_m: Option<usize>,
    pub serial_m: Option<usize>,
}

fn log2_floor(n: usize) -> usize {
    (usize::BITS - 1 - n.leading_zeros()) as usize
}

impl TestParams {
    /// At least 128 bits per block and fewer than 100 blocks.
    pub fn block_frequency_m(&self, n: usize) -> usize {
        self.block_frequency_m.unwrap_or_else(|| 128.max(n.div_ceil(99)).min(n / 2).max(20))
    }

    /// 10, or the largest `m < floor(log2 n) - 5`.
    pub fn approximate_entropy_m(&self, n: usize) -> usize {
        self.approximate_entropy_m.unwrap_or_else(|| 10.min(log2_floor(n).saturating_sub(6)))
    }

    /// 16, or the largest `m < floor(log2 n) - 2`.
    pub fn serial_m(&self, n: usize) -> usize {
        self.serial_m.unwrap_or_else(|| 16.min(log2_floor(n).saturating_sub(3)))
    }
}

/// Runs one test after checking the length requirements.
pub fn nist_test(kind: TestKind, bits: &Bits, params: &TestParams) -> Result<Vec<f64>> {
    let n = bits.len();
    let need = |min: usize| {
        if n < min {
            Err(Error::NotApplicable {
                test: kind.name(),
                min,
                len: n,
            })
        } else {
            Ok(())
        }
    };
    Ok(match kind {
        TestKind::Frequency => {
            need(100)?;
            vec![frequency(bits)]
        }
        TestKind::BlockFrequency => {
            need(100)?;
            let m = params.block_frequency_m(n);
            if m < 20 || m > n || m * 100 <= n {
                return Err(Error::NotApplicable {
                    test: kind.name(),
                    min: m * 100 / 99 + 1,
                    len: n,
                });
            }
            vec![block_frequency(bits, m)]
        }
        TestKind::CumulativeSums => {
            need(100)?;
            let (a, b) = cumulative_sums(bits);
            vec![a, b]
        }
        TestKind::Runs => {
            need(100)?;
            vec![runs(bits)]
        }
        TestKind::LongestRun => {
            need(128)?;
            vec![longest_run(bits)]
        }
        TestKind::Rank => {
            need(38 * 1024)?;
            vec![rank(bits)]
        }
        TestKind::Fft => {
            need(1000)?;
            vec![spectral(bits)]
        }
        TestKind::ApproximateEntropy => {
            let m = params.approximate_entropy_m(n);
            need(1 << (m + 6))?;
            if m == 0 {
                return Err(Error::NotApplicable { test: kind.name(), min: 128, len: n });
            }
            vec![approximate_entropy(bits, m)]
        }
        TestKind::Serial => {
            let m = params.serial_m(n);
            need(1 << (m + 3))?;
            if m < 2 {
                return Err(Error::NotApplicable { test: kind.name(), min: 32, len: n });
            }
            let (a, b) = serial(bits, m);
            vec![a, b]
        }
    })
}

/// Minimum passing proportion `p - 3 sqrt(p (1 - p) / m)` and its mirror, `p = 1 - alpha`.
pub fn proportion_band(alpha: f64, sequences: usize) -> (f64, f64) {
    let p = 1.0 - alpha;
    let w = 3.0 * (p * (1.0 - p) / sequences as f64).sqrt();
    (p - w, (p + w).min(1.0))
}

/// Sequences needed before the p-value uniformity check is meaningful.
pub const UNIFORMITY_MIN_SEQUENCES: usize = 55;
pub const UNIFORMITY_THRESHOLD: f64 = 1e-4;

/// Chi-square p-value of the p-values over ten equal bins.
pub fn uniformity_p(p_values: &[f64]) -> f64 {
    let mut bins = [0usize; 10];
    for &p in p_values {
        bins[((p * 10.0) as usize).min(9)] += 1;
    }
    let e = p_values.len() as f64 / 10.0;
    let chi2: f64 = bins.iter().map(|&b| (b as f64 - e).powi(2) / e).sum();
    igamc(4.5, chi2 / 2.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub name: String,
    pub p_values: Vec<f64>,
    /// Sequences the test could not run on.
    pub not_applicable: usize,
    pub passed_sequences: usize,
    pub proportion: f64,
    pub band: (f64, f64),
    /// `None` below [`UNIFORMITY_MIN_SEQUENCES`].
    pub uniformity_p: Option<f64>,
    /// Ten-bin histogram of the p-values.
    pub histogram: [usize; 10],
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatteryReport {
    pub alpha: f64,
    pub sequences: usize,
    pub sequence_len: usize,
    pub params: TestParams,
    pub results: Vec<TestResult>,
}

impl BatteryReport {
    pub fn all_passed(&self) -> bool {
        self.results.iter().all(|r| r.passed)
    }

    pub fn result(&self, name: &str) -> Option<&TestResult> {
        self.results.iter().find(|r| r.name == name)
    }

    /// Fixed-width table: p-value histogram, uniformity p, proportion, test.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:>4}{:>4}{:>4}{:>4}{:>4}{:>4}{:>4}{:>4}{:>4}{:>4}  {:>9}  {:>11}  {:<26}  RESULT",
            "C1", "C2", "C3", "C4", "C5", "C6", "C7", "C8", "C9", "C10", "P-VALUE", "PROPORTION", "STATISTICAL TEST"
        );
        for r in &self.results {
            for h in r.histogram {
                let _ = write!(s, "{h:>4}");
            }
            let up = r.uniformity_p.map_or_else(|| "-".to_string(), |p| format!("{p:.6}"));
            let prop = format!("{}/{}", r.passed_sequences, r.p_values.len());
            let _ = writeln!(
                s,
                "  {up:>9}  {prop:>11}  {:<26}  {}",
                r.name,
                match (r.passed, r.p_values.is_empty()) {
                    (true, _) => "PASS",
                    (false, true) => "N/A (sequences too short)",
                    (false, false) => "FAIL",
                }
            );
        }
        let (lo, _) = proportion_band(self.alpha, self.sequences);
        let _ = writeln!(
            s,
            "alpha={} sequences={} length={} minimum proportion={:.4}",
            self.alpha, self.sequences, self.sequence_len, lo
        );
        s
    }
}

/// Runs every test on every sequence and aggregates per p-value output.
pub fn run_battery(sequences: &[Bits], alpha: f64, params: &TestParams) -> Result<BatteryReport> {
    if sequences.len() < 2 {
        return Err(Error::Input("the battery needs at least two sequences".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Config(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let per_seq: Vec<Vec<Result<Vec<f64>>>> = sequences
        .par_iter()
        .map(|s| TestKind::ALL.iter().map(|&k| nist_test(k, s, params)).collect())
        .collect();
    let mut results = Vec::new();
    for (ki, kind) in TestKind::ALL.iter().enumerate() {
        for (oi, name) in kind.outputs().iter().enumerate() {
            let mut p_values = Vec::new();
            let mut not_applicable = 0;
            for seq in &per_seq {
                match &seq[ki] {
                    Ok(ps) => p_values.push(ps[oi]),
                    Err(Error::NotApplicable { .. }) => not_applicable += 1,
                    Err(e) => return Err(Error::Numerical(format!("{name}: {e}"))),
                }
            }
            let m = p_values.len();
            let passed_sequences = p_values.iter().filter(|&&p| p >= alpha).count();
            let band = proportion_band(alpha, m.max(1));
            let proportion = if m > 0 { passed_sequences as f64 / m as f64 } else { 0.0 };
            let uniformity_p = (m >= UNIFORMITY_MIN_SEQUENCES).then(|| uniformity_p(&p_values));
            let mut histogram = [0usize; 10];
            for &p in &p_values {
                histogram[((p * 10.0) as usize).min(9)] += 1;
            }
            let passed = m > 0 && proportion >= band.0 && uniformity_p.is_none_or(|u| u >= UNIFORMITY_THRESHOLD);
            results.push(TestResult {
                name: name.to_string(),
                p_values,
                not_applicable,
                passed_sequences,
                proportion,
                band,
                uniformity_p,
                histogram,
                passed,
            });
        }
    }
    Ok(BatteryReport {
        alpha,
        sequences: sequences.len(),
        sequence_len: sequences.iter().map(Bits::len).min().unwrap_or(0),
        params: params.clone(),
        results,
    })
}

/// Splits a corpus into consecutive sequences of `len` bits; a short tail is dropped.
pub fn split_sequences(corpus: &Bits, len: usize) -> Result<Vec<Bits>> {
    if len == 0 || corpus.len() < len {
        return Err(Error::Input(format!("corpus of {} bits holds no {len}-bit sequence", corpus.len())));
    }
    Ok((0..corpus.len() / len).map(|i| corpus.slice(i * len, (i + 1) * len)).collect())
}

pub fn concat(blocks: &[Bits]) -> Bits {
    let mut out = Bits::with_capacity(blocks.iter().map(Bits::len).sum());
    for b in blocks {
        out.extend(b);
    }
    out
}

/// `blocks` followed by a seeded permutation of the same blocks.
pub fn permute_extend(blocks: &[Bits], seed: u64) -> Result<Bits> {
    if blocks.is_empty() {
        return Err(Error::Input("empty dataset".into()));
    }
    let mut order: Vec<usize> = (0..blocks.len()).collect();
    order.shuffle(&mut seeds::rng(seeds::derive(seed, seeds::PERMUTATION, 0)));
    let mut out = concat(blocks);
    for i in order {
        out.extend(&blocks[i]);
    }
    Ok(out)
}

/// Keys for the first `count` inter challenges of a schedule, in order.
pub fn key_corpus(
    puf: &Puf,
    challenges: &ChallengeConfig,
    schedule: SeedSchedule,
    profile: &CalibrationProfile,
    count: usize,
) -> Result<Vec<Bits>> {
    (0..count as u64)
        .into_par_iter()
        .map(|i| {
            let c = challenges.make(schedule.inter_challenge(i))?;
            Ok(puf.respond(&c, schedule.inter_noise(i), profile)?.key.expect("respond sets the key").bits)
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BitFormat {
    Ascii01,
    Packed,
}

impl std::str::FromStr for BitFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ascii01" => Ok(BitFormat::Ascii01),
            "packed" => Ok(BitFormat::Packed),
            _ => Err(Error::Config(format!("unknown bit format {s:?} (ascii01 | packed)"))),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    len: usize,
    format: BitFormat,
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Writes the bits and, for the packed format, a `<path>.json` length sidecar.
pub fn export_bits(bits: &Bits, path: &Path, format: BitFormat) -> Result<()> {
    match format {
        BitFormat::Ascii01 => std::fs::write(path, bits.to_ascii01())?,
        BitFormat::Packed => {
            std::fs::write(path, bits.to_msb_bytes())?;
            let side = Sidecar { len: bits.len(), format };
            std::fs::write(sidecar_path(path), serde_json::to_string_pretty(&side)? + "\n")?;
        }
    }
    Ok(())
}

pub fn import_bits(path: &Path, format: BitFormat) -> Result<Bits> {
    match format {
        BitFormat::Ascii01 => Bits::from_ascii01(&std::fs::read_to_string(path)?),
        BitFormat::Packed => {
            let side: Sidecar = serde_json::from_str(&std::fs::read_to_string(sidecar_path(path))?)?;
            Bits::from_msb_bytes(&std::fs::read(path)?, side.len)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_bigint::BigUint;
    use rand::Rng;

    const PI_100: &str = "1100100100001111110110101010001000100001011010001100001000110100110001001100011001100010100010111000";
    const LONGEST_128: &str = "11001100000101010110110001001100111000000000001001001101010100010001001111010110100000001101011111001100111001101101100010110010";

    fn b(s: &str) -> Bits {
        Bits::from_ascii01(s).unwrap()
    }

    fn close(got: f64, want: f64) {
        assert!((got - want).abs() < 1e-4, "{got} vs {want}");
    }

    /// Binary expansion of e, integer part "10" first, `n` bits in total.
    fn e_bits(n: usize) -> Bits {
        let prec = n + 64;
        let one = BigUint::from(1u8) << prec;
        let mut term = one.clone();
        let mut sum = one.clone();
        let mut k = 1u32;
        while term > BigUint::ZERO {
            term /= k;
            sum += &term;
            k += 1;
        }
        let sum = sum >> 64usize;
        let digits = sum.to_str_radix(2);
        Bits::from_ascii01(&digits[..n]).unwrap()
    }

    #[test]
    fn frequency_examples() {
        close(frequency(&b("1011010101")), 0.527089);
        close(frequency(&b(PI_100)), 0.109599);
        assert!(frequency(&Bits::zeros(100)) < 1e-20);
    }

    #[test]
    fn block_frequency_examples() {
        close(block_frequency(&b("0110011010"), 3), 0.801252);
        close(block_frequency(&b(PI_100), 10), 0.706438);
    }

    #[test]
    fn cusum_examples() {
        close(cumulative_sums(&b("1011010111")).0, 0.4116588);
        let (f, r) = cumulative_sums(&b(PI_100));
        close(f, 0.219194);
        close(r, 0.114866);
    }

    #[test]
    fn runs_examples() {
        close(runs(&b("1001101011")), 0.147232);
        close(runs(&b(PI_100)), 0.500798);
    }

    #[test]
    fn longest_run_example() {
        close(longest_run(&b(LONGEST_128)), 0.180609);
    }

    #[test]
    fn spectral_examples() {
        close(spectral(&b(PI_100)), 0.646355);
    }

    #[test]
    fn approximate_entropy_examples() {
        close(approximate_entropy(&b("0100110101"), 3), 0.261961);
        close(approximate_entropy(&b(PI_100), 2), 0.235301);
    }

    #[test]
    fn serial_small_example() {
        let (p1, p2) = serial(&b("0011011101"), 3);
        close(p1, 0.808792);
        close(p2, 0.670320);
    }

    #[test]
    fn e_expansion_prefix() {
        // e = 10.101101111110000101010001011000101...
        assert_eq!(e_bits(34).to_ascii01(), "1010110111111000010101000101100010");
    }

    #[test]
    fn rank_example_on_e() {
        close(rank(&e_bits(100_000)), 0.532069);
    }

    #[test]
    fn serial_example_on_e() {
        let (p1, p2) = serial(&e_bits(1_000_000), 2);
        close(p1, 0.843764);
        close(p2, 0.561915);
    }

    #[test]
    fn rank_probabilities() {
        close(rank_probability(32), 0.2888);
        close(rank_probability(31), 0.5776);
        let rest = 1.0 - rank_probability(32) - rank_probability(31);
        close(rest, 0.1336);
    }

    #[test]
    fn gf2_rank_reference() {
        let mut id: Vec<u32> = (0..32).map(|i| 1 << i).collect();
        assert_eq!(gf2_rank(&mut id), 32);
        let mut dup: Vec<u32> = (0..32).map(|i| 1 << (i / 2)).collect();
        assert_eq!(gf2_rank(&mut dup), 16);
        assert_eq!(gf2_rank(&mut [0u32; 32]), 0);
    }

    #[test]
    fn alternating_fails_runs_but_passes_frequency() {
        let alt: Bits = (0..1000).map(|i| i % 2 == 1).collect();
        assert!(frequency(&alt) > 0.01);
        assert!(runs(&alt) < 0.01);
    }

    #[test]
    fn short_sequences_are_not_applicable() {
        let p = TestParams::default();
        assert!(matches!(
            nist_test(TestKind::Rank, &Bits::zeros(1000), &p),
            Err(Error::NotApplicable { test: "Rank", .. })
        ));
        assert!(nist_test(TestKind::Frequency, &Bits::zeros(100), &p).is_ok());
    }

    #[test]
    fn auto_parameters_respect_length_rules() {
        let p = TestParams::default();
        assert_eq!(p.approximate_entropy_m(1_000_000), 10);
        assert_eq!(p.approximate_entropy_m(50_000), 9);
        assert_eq!(p.serial_m(1_000_000), 16);
        assert_eq!(p.serial_m(100_000), 13);
        let m = p.block_frequency_m(1_000_000);
        assert!(1_000_000 / m < 100 && m >= 128);
    }

    #[test]
    fn proportion_band_for_1000() {
        let (lo, _) = proportion_band(0.01, 1000);
        assert!((lo - 0.980561).abs() < 1e-6);
    }

    #[test]
    fn control_generator_passes_and_constant_fails() {
        let mut rng = seeds::rng(24);
        let good: Vec<Bits> = (0..100).map(|_| (0..100_000).map(|_| rng.random::<bool>()).collect()).collect();
        let r = run_battery(&good, 0.01, &TestParams::default()).unwrap();
        assert_eq!(r.results.len(), 11);
        for t in &r.results {
            assert!(t.p_values.iter().all(|p| (0.0..=1.0).contains(p)));
            assert!(t.passed, "{}: {}/{} uniformity {:?}", t.name, t.passed_sequences, t.p_values.len(), t.uniformity_p);
        }
        let zeros = vec![Bits::zeros(100_000); 3];
        let r = run_battery(&zeros, 0.01, &TestParams::default()).unwrap();
        assert_eq!(r.result("Frequency").unwrap().passed_sequences, 0);
        assert!(!r.all_passed());
        assert!(r.to_table().contains("Frequency"));
    }

    #[test]
    fn false_rejection_rate_is_near_alpha() {
        let mut rng = seeds::rng(31);
        let seqs: Vec<Bits> = (0..2000).map(|_| (0..10_000).map(|_| rng.random::<bool>()).collect()).collect();
        let rate = |f: &dyn Fn(&Bits) -> f64| seqs.iter().filter(|s| f(s) < 0.01).count() as f64 / 2000.0;
        for r in [rate(&frequency), rate(&|s| cumulative_sums(s).0), rate(&runs), rate(&longest_run)] {
            assert!((0.003..0.02).contains(&r), "{r}");
        }
    }

    #[test]
    fn single_block_extends_to_itself() {
        let x = b("1011001110");
        assert_eq!(permute_extend(std::slice::from_ref(&x), 5).unwrap().to_ascii01(), "10110011101011001110");
    }

    #[test]
    fn export_packed_bit_order_and_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("k.bin");
        let x = b("10110001");
        export_bits(&x, &path, BitFormat::Packed).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), vec![0xB1]);
        let y = b("1011000111");
        for f in [BitFormat::Packed, BitFormat::Ascii01] {
            export_bits(&y, &path, f).unwrap();
            assert_eq!(import_bits(&path, f).unwrap(), y);
        }
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(64))]

        #[test]
        fn extension_conserves_counts(seed in proptest::prelude::any::<u64>(), blocks in 1usize..20, len in 1usize..80) {
            let mut rng = seeds::rng(seed);
            let data: Vec<Bits> = (0..blocks).map(|_| (0..len).map(|_| rng.random::<bool>()).collect()).collect();
            let ext = permute_extend(&data, seed).unwrap();
            let orig = concat(&data);
            proptest::prop_assert_eq!(ext.len(), 2 * orig.len());
            proptest::prop_assert_eq!(ext.count_ones(), 2 * orig.count_ones());
            let mut first: Vec<Bits> = split_sequences(&ext.slice(orig.len(), ext.len()), len).unwrap();
            let mut want = data.clone();
            first.sort_by_key(|b| b.to_ascii01());
            want.sort_by_key(|b| b.to_ascii01());
            proptest::prop_assert_eq!(first, want);
        }
    }
}
