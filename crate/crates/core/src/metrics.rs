//! Hamming statistics, Gaussian-tail EER and the sweep harnesses.

use std::io::Write;

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::challenge::{Challenge, ChallengeConfig};
use crate::error::{Error, Result};
use crate::keygen::{self, BinaryKey, Encoding, Puf};
use crate::photonics::{fabricate, DetectionConfig, NominalConfig};
use crate::readout::RidgeConfig;
use crate::seeds;

/// Histogram bins over `[0, 1]`.
pub const HIST_BINS: usize = 100;
/// All-pairs statistics up to this many pairs, uniform subsampling beyond.
pub const MAX_PAIRS: usize = 1_000_000;
/// Highest ADC resolution available at 40 GSa/s.
pub const ADC_FEASIBLE_BITS: u32 = 10;

pub fn hamming_frac(a: &BinaryKey, b: &BinaryKey) -> Result<f64> {
    if a.is_empty() {
        return Err(Error::Input("empty key".into()));
    }
    Ok(a.bits.hamming(&b.bits)? as f64 / a.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HammingStats {
    pub mean: f64,
    /// Sample standard deviation.
    pub std: f64,
    pub min: f64,
    pub max: f64,
    pub count: usize,
    /// `HIST_BINS` equal bins over `[0, 1]`; the last bin is closed.
    pub histogram: Vec<u64>,
}

impl HammingStats {
    pub fn from_fractions(v: &[f64]) -> Result<Self> {
        if v.is_empty() {
            return Err(Error::UndefinedMetric("no Hamming samples".into()));
        }
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let std = if v.len() > 1 {
            (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        let mut histogram = vec![0u64; HIST_BINS];
        for &x in v {
            histogram[((x * HIST_BINS as f64) as usize).min(HIST_BINS - 1)] += 1;
        }
        Ok(Self {
            mean,
            std,
            min: v.iter().copied().fold(f64::INFINITY, f64::min),
            max: v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            count: v.len(),
            histogram,
        })
    }

    /// `(bin_left, count)` rows.
    pub fn histogram_rows(&self) -> Vec<(f64, u64)> {
        self.histogram
            .iter()
            .enumerate()
            .map(|(i, &c)| (i as f64 / HIST_BINS as f64, c))
            .collect()
    }
}

/// Fractional distances over all key pairs, or `MAX_PAIRS` pairs drawn
/// uniformly (seeded) when there are more.
pub fn pairwise_fractions(keys: &[BinaryKey], seed: u64) -> Result<Vec<f64>> {
    let n = keys.len();
    if n < 2 {
        return Err(Error::Input("need at least two keys".into()));
    }
    let total = n * (n - 1) / 2;
    let pair = |k: usize| {
        // Row-major index into the strict upper triangle.
        let mut i = 0;
        let mut rem = k;
        while rem >= n - 1 - i {
            rem -= n - 1 - i;
            i += 1;
        }
        (i, i + 1 + rem)
    };
    let picks: Vec<usize> = if total <= MAX_PAIRS {
        (0..total).collect()
    } else {
        let mut p = index::sample(&mut seeds::rng(seed), total, MAX_PAIRS).into_vec();
        p.sort_unstable();
        p
    };
    picks
        .into_par_iter()
        .map(|k| {
            let (i, j) = pair(k);
            hamming_frac(&keys[i], &keys[j])
        })
        .collect()
}

pub fn pair_stats(keys: &[BinaryKey], seed: u64) -> Result<HammingStats> {
    HammingStats::from_fractions(&pairwise_fractions(keys, seed)?)
}

/// Standard normal upper tail.
#[inline]
pub fn q_function(z: f64) -> f64 {
    0.5 * erfc(z / std::f64::consts::SQRT_2)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EerReport {
    pub intra: HammingStats,
    pub inter: HammingStats,
    pub threshold: f64,
    pub eer: f64,
    /// A class had zero spread; `eer` is 0 or 0.5 by convention.
    pub degenerate: bool,
    /// `eer` is below what the sample sizes could resolve empirically.
    pub below_empirical_floor: bool,
}

/// Equal-variance-weighted crossing of two normals: `(threshold, eer)`.
pub fn eer_from_params(mu_i: f64, sigma_i: f64, mu_e: f64, sigma_e: f64) -> Result<(f64, f64)> {
    if !(sigma_i > 0.0 && sigma_e > 0.0) {
        return Err(Error::DegenerateFit(format!("zero spread (sigma_i={sigma_i}, sigma_e={sigma_e})")));
    }
    let tau = (mu_i * sigma_e + mu_e * sigma_i) / (sigma_i + sigma_e);
    Ok((tau, q_function((tau - mu_i) / sigma_i)))
}

pub fn eer_fit(intra: &HammingStats, inter: &HammingStats) -> Result<EerReport> {
    let (threshold, eer) = eer_from_params(intra.mean, intra.std, inter.mean, inter.std)?;
    let floor = 1.0 / intra.count.min(inter.count) as f64;
    Ok(EerReport {
        intra: intra.clone(),
        inter: inter.clone(),
        threshold,
        eer,
        degenerate: false,
        below_empirical_floor: eer < floor,
    })
}

/// [`eer_fit`], falling back to the flagged convention when a class has no spread.
pub fn eer_fit_lenient(intra: &HammingStats, inter: &HammingStats) -> EerReport {
    eer_fit(intra, inter).unwrap_or_else(|_| {
        let separated = intra.mean != inter.mean;
        EerReport {
            intra: intra.clone(),
            inter: inter.clone(),
            threshold: (intra.mean + inter.mean) / 2.0,
            eer: if separated { 0.0 } else { 0.5 },
            degenerate: true,
            below_empirical_floor: separated,
        }
    })
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(Error::UndefinedMetric("need at least two points".into()));
    }
    let rank = |v: &[f64]| {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0;
            for &k in &idx[i..=j] {
                r[k] = avg;
            }
            i = j + 1;
        }
        r
    };
    let (rx, ry) = (rank(x), rank(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        return Err(Error::UndefinedMetric("constant ranks".into()));
    }
    Ok(cov / (vx * vy).sqrt())
}

/// Sizes of one intra/inter/calibration campaign.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepBudget {
    pub calibration_crps: usize,
    /// Noise-seed repeats of the single intra challenge.
    pub intra_trials: usize,
    /// Distinct challenges for the inter statistics.
    pub inter_challenges: usize,
}

impl Default for SweepBudget {
    fn default() -> Self {
        Self {
            calibration_crps: 1000,
            intra_trials: 100,
            inter_challenges: 500,
        }
    }
}

/// Deterministic seed derivation for a sweep.
///
/// | stream              | seed                                           |
/// |---------------------|------------------------------------------------|
/// | calibration         | `derive(master, "calibration", 0)`, then CRP `i` via [`keygen::calibration_seeds`] |
/// | intra challenge     | `derive(master, "intra", 0)`                   |
/// | intra noise, trial i| `derive(master, "intra", 1 + i)`               |
/// | inter challenge i   | `derive(master, "challenge", i)`               |
/// | inter noise i       | `derive(master, "noise", i)`                   |
/// | pair subsampling    | `derive(master, "sweep", 0)`                   |
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedSchedule {
    pub master: u64,
}

impl SeedSchedule {
    pub fn calibration(&self) -> u64 {
        seeds::derive(self.master, seeds::CALIBRATION, 0)
    }

    pub fn intra_challenge(&self) -> u64 {
        seeds::derive(self.master, seeds::INTRA, 0)
    }

    pub fn intra_noise(&self, trial: u64) -> u64 {
        seeds::derive(self.master, seeds::INTRA, 1 + trial)
    }

    pub fn inter_challenge(&self, i: u64) -> u64 {
        seeds::derive(self.master, seeds::CHALLENGE, i)
    }

    pub fn inter_noise(&self, i: u64) -> u64 {
        seeds::derive(self.master, seeds::NOISE, i)
    }

    pub fn pairs(&self) -> u64 {
        seeds::derive(self.master, seeds::SWEEP, 0)
    }
}

pub fn collect_intra(
    puf: &Puf,
    challenge: &Challenge,
    noise_seeds: &[u64],
    profile: &keygen::CalibrationProfile,
    pair_seed: u64,
) -> Result<HammingStats> {
    if noise_seeds.len() < 2 {
        return Err(Error::Input("need at least two trials".into()));
    }
    let keys = noise_seeds
        .par_iter()
        .map(|&s| Ok(puf.respond(challenge, s, profile)?.key.expect("respond sets the key")))
        .collect::<Result<Vec<_>>>()?;
    pair_stats(&keys, pair_seed)
}

/// One response per `(challenge seed, noise seed)` entry.
pub fn collect_inter(
    puf: &Puf,
    challenges: &ChallengeConfig,
    crps: &[(u64, u64)],
    profile: &keygen::CalibrationProfile,
    pair_seed: u64,
) -> Result<HammingStats> {
    if crps.len() < 2 {
        return Err(Error::Input("need at least two challenges".into()));
    }
    let keys = crps
        .par_iter()
        .map(|&(cs, ns)| Ok(puf.respond(&challenges.make(cs)?, ns, profile)?.key.expect("respond sets the key")))
        .collect::<Result<Vec<_>>>()?;
    pair_stats(&keys, pair_seed)
}

/// Readout weights of every campaign CRP at each requested ADC resolution.
/// The detector runs once per CRP; only digitization and training repeat.
#[derive(Clone, Debug)]
pub struct WeightCampaign {
    pub m_bits: Vec<u32>,
    /// `[crp][m_bit index]`
    pub calibration: Vec<Vec<Vec<f64>>>,
    pub intra: Vec<Vec<Vec<f64>>>,
    pub inter: Vec<Vec<Vec<f64>>>,
    pub nmse: Vec<f64>,
}

impl WeightCampaign {
    pub fn run(
        puf: &Puf,
        challenges: &ChallengeConfig,
        schedule: SeedSchedule,
        budget: &SweepBudget,
        m_bits: &[u32],
    ) -> Result<Self> {
        if budget.intra_trials < 2 || budget.inter_challenges < 2 || budget.calibration_crps < 2 {
            return Err(Error::Config("sweep budget needs at least two CRPs per class".into()));
        }
        if m_bits.is_empty() {
            return Err(Error::Config("empty m_bit range".into()));
        }
        let weights = |c: &Challenge, noise: u64| -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
            let analog = puf.analog(c, noise)?;
            let mut ws = Vec::with_capacity(m_bits.len());
            let mut nm = Vec::with_capacity(m_bits.len());
            for &m in m_bits {
                let r = puf.train_analog(&analog, c, m)?;
                nm.push(r.nmse);
                ws.push(r.weights);
            }
            Ok((ws, nm))
        };
        let cal_seed = schedule.calibration();
        let calibration = (0..budget.calibration_crps as u64)
            .into_par_iter()
            .map(|i| {
                let (cs, ns) = keygen::calibration_seeds(cal_seed, i);
                Ok(weights(&challenges.make(cs)?, ns)?.0)
            })
            .collect::<Result<Vec<_>>>()?;
        let intra_c = challenges.make(schedule.intra_challenge())?;
        let intra = (0..budget.intra_trials as u64)
            .into_par_iter()
            .map(|i| Ok(weights(&intra_c, schedule.intra_noise(i))?.0))
            .collect::<Result<Vec<_>>>()?;
        let inter_runs = (0..budget.inter_challenges as u64)
            .into_par_iter()
            .map(|i| weights(&challenges.make(schedule.inter_challenge(i))?, schedule.inter_noise(i)))
            .collect::<Result<Vec<_>>>()?;
        let nmse = (0..m_bits.len())
            .map(|k| inter_runs.iter().map(|(_, nm)| nm[k]).sum::<f64>() / inter_runs.len() as f64)
            .collect();
        Ok(Self {
            m_bits: m_bits.to_vec(),
            calibration,
            intra,
            inter: inter_runs.into_iter().map(|(w, _)| w).collect(),
            nmse,
        })
    }

    fn index(&self, m_bit: u32) -> Result<usize> {
        self.m_bits
            .iter()
            .position(|&m| m == m_bit)
            .ok_or_else(|| Error::Config(format!("m_bit {m_bit} not in campaign")))
    }

    pub fn profile(&self, m_bit: u32, n_bit: u32, encoding: Encoding) -> Result<keygen::CalibrationProfile> {
        let k = self.index(m_bit)?;
        let ens: Vec<Vec<f64>> = self.calibration.iter().map(|w| w[k].clone()).collect();
        keygen::calibrate(&ens, n_bit, encoding)
    }

    /// `(intra keys, inter keys)` at one operating point.
    pub fn keys(&self, m_bit: u32, profile: &keygen::CalibrationProfile) -> Result<(Vec<BinaryKey>, Vec<BinaryKey>)> {
        let k = self.index(m_bit)?;
        let to_keys = |set: &[Vec<Vec<f64>>]| {
            set.iter()
                .map(|w| keygen::key_from_weights(&w[k], profile))
                .collect::<Result<Vec<_>>>()
        };
        Ok((to_keys(&self.intra)?, to_keys(&self.inter)?))
    }

    pub fn cell(&self, m_bit: u32, n_bit: u32, encoding: Encoding, pair_seed: u64) -> Result<BitGridCell> {
        let profile = self.profile(m_bit, n_bit, encoding)?;
        let (ki, ke) = self.keys(m_bit, &profile)?;
        let report = eer_fit_lenient(&pair_stats(&ki, pair_seed)?, &pair_stats(&ke, pair_seed)?);
        Ok(BitGridCell::new(m_bit, n_bit, ki[0].len(), &report))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BitGridCell {
    pub m_bit: u32,
    pub n_bit: u32,
    pub key_bits: usize,
    pub intra_mean: f64,
    pub intra_std: f64,
    pub intra_max: f64,
    pub inter_mean: f64,
    pub inter_std: f64,
    pub inter_min: f64,
    pub threshold: f64,
    pub eer: f64,
    pub eer_degenerate: bool,
    pub eer_below_floor: bool,
    /// ADC resolution reachable at 40 GSa/s.
    pub feasible: bool,
}

impl BitGridCell {
    fn new(m_bit: u32, n_bit: u32, key_bits: usize, r: &EerReport) -> Self {
        Self {
            m_bit,
            n_bit,
            key_bits,
            intra_mean: r.intra.mean,
            intra_std: r.intra.std,
            intra_max: r.intra.max,
            inter_mean: r.inter.mean,
            inter_std: r.inter.std,
            inter_min: r.inter.min,
            threshold: r.threshold,
            eer: r.eer,
            eer_degenerate: r.degenerate,
            eer_below_floor: r.below_empirical_floor,
            feasible: m_bit <= ADC_FEASIBLE_BITS,
        }
    }
}

fn check_bits(name: &str, range: &[u32]) -> Result<()> {
    if range.is_empty() || range.iter().any(|b| !(1..=16).contains(b)) {
        return Err(Error::Config(format!("{name} values must lie in [1, 16]")));
    }
    Ok(())
}

/// Intra/inter/EER for every `(m_bit, n_bit)` cell, row-major in `m_bit`.
pub fn sweep_bit_grid(
    puf: &Puf,
    challenges: &ChallengeConfig,
    schedule: SeedSchedule,
    budget: &SweepBudget,
    m_bits: &[u32],
    n_bits: &[u32],
    encoding: Encoding,
) -> Result<Vec<BitGridCell>> {
    check_bits("m_bit", m_bits)?;
    check_bits("n_bit", n_bits)?;
    let campaign = WeightCampaign::run(puf, challenges, schedule, budget, m_bits)?;
    let mut out = Vec::with_capacity(m_bits.len() * n_bits.len());
    for &m in m_bits {
        for &n in n_bits {
            out.push(campaign.cell(m, n, encoding, schedule.pairs())?);
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MrrCountRow {
    pub mrrs_per_node: usize,
    pub channels: usize,
    pub key_bits: usize,
    pub intra_mean: f64,
    pub intra_std: f64,
    pub inter_mean: f64,
    pub inter_std: f64,
    pub eer: f64,
    pub eer_degenerate: bool,
}

/// Everything a sweep needs besides its grid.
#[derive(Clone, Debug)]
pub struct SweepSetup {
    pub nominal: NominalConfig,
    pub fab_seed: u64,
    pub detection: DetectionConfig,
    pub ridge: RidgeConfig,
    pub challenges: ChallengeConfig,
    pub schedule: SeedSchedule,
    pub budget: SweepBudget,
    pub encoding: Encoding,
}

impl SweepSetup {
    /// Fabricates the device and fixes its ADC full scale.
    pub fn puf(&self, nominal: &NominalConfig) -> Result<Puf> {
        let device = fabricate(nominal, self.fab_seed)?;
        let mut puf = Puf::new(device, self.challenges.length, self.detection.clone(), self.ridge.clone())?;
        puf.calibrate_adc_seeded(&self.challenges, self.fab_seed)?;
        Ok(puf)
    }
}

/// Devices with `count` rings per node, same fabrication seed, one operating point.
pub fn sweep_mrr_count(setup: &SweepSetup, counts: &[usize], m_bit: u32, n_bit: u32) -> Result<Vec<MrrCountRow>> {
    if counts.is_empty() || counts.contains(&0) {
        return Err(Error::Config("ring counts must be at least 1".into()));
    }
    counts
        .iter()
        .map(|&count| {
            let nominal = NominalConfig {
                mrrs_per_node: count,
                ..setup.nominal.clone()
            };
            let puf = setup.puf(&nominal)?;
            let campaign = WeightCampaign::run(&puf, &setup.challenges, setup.schedule, &setup.budget, &[m_bit])?;
            let cell = campaign.cell(m_bit, n_bit, setup.encoding, setup.schedule.pairs())?;
            Ok(MrrCountRow {
                mrrs_per_node: count,
                channels: puf.channels(),
                key_bits: cell.key_bits,
                intra_mean: cell.intra_mean,
                intra_std: cell.intra_std,
                inter_mean: cell.inter_mean,
                inter_std: cell.inter_std,
                eer: cell.eer,
                eer_degenerate: cell.eer_degenerate,
            })
        })
        .collect()
}

/// Writes `# key=value` comment lines followed by a headed CSV table.
pub fn write_csv<W: Write, R: Serialize>(mut out: W, header: &[(String, String)], rows: &[R]) -> Result<()> {
    for (k, v) in header {
        writeln!(out, "# {k}={v}")?;
    }
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistogramRow {
    pub bin_left: f64,
    pub count: u64,
}

pub fn histogram_rows(stats: &HammingStats) -> Vec<HistogramRow> {
    stats
        .histogram_rows()
        .into_iter()
        .map(|(bin_left, count)| HistogramRow { bin_left, count })
        .collect()
}
