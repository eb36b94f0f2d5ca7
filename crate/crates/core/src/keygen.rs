//! Readout weights to key bits: normal CDF against calibrated ensemble
//! statistics, then uniform quantization. Also the end-to-end [`Puf`].

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::bits::Bits;
use crate::challenge::{Challenge, ChallengeConfig};
use crate::error::{Error, Result};
use crate::photonics::{AnalogStates, DetectionConfig, DeviceProfile, Simulator};
use crate::readout::{self, RidgeConfig, Response};
use crate::seeds;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Encoding {
    #[default]
    Natural,
    Gray,
}

impl Encoding {
    #[inline]
    pub fn encode(self, bin: u32) -> u32 {
        match self {
            Encoding::Natural => bin,
            Encoding::Gray => bin ^ (bin >> 1),
        }
    }
}

impl std::str::FromStr for Encoding {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "natural" => Ok(Encoding::Natural),
            "gray" => Ok(Encoding::Gray),
            _ => Err(Error::Config(format!("unknown encoding {s:?} (natural | gray)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationProfile {
    pub mu: f64,
    pub sigma: f64,
    pub n_bit: u32,
    pub encoding: Encoding,
    /// CRPs pooled into the statistics.
    pub ensemble_size: usize,
}

impl CalibrationProfile {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0) || !self.mu.is_finite() || !self.sigma.is_finite() {
            return Err(Error::Calibration(format!("invalid statistics mu={} sigma={}", self.mu, self.sigma)));
        }
        check_n_bit(self.n_bit)
    }

    pub fn with_n_bit(&self, n_bit: u32) -> Self {
        Self { n_bit, ..self.clone() }
    }
}

fn check_n_bit(n_bit: u32) -> Result<()> {
    if !(1..=16).contains(&n_bit) {
        return Err(Error::Config(format!("n_bit must lie in [1, 16], got {n_bit}")));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinaryKey {
    pub bits: Bits,
    pub bits_per_weight: u32,
    pub weight_count: usize,
}

impl BinaryKey {
    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }
}

/// Pooled mean and sample standard deviation of an ensemble of weight vectors.
pub fn calibrate(ensemble: &[Vec<f64>], n_bit: u32, encoding: Encoding) -> Result<CalibrationProfile> {
    check_n_bit(n_bit)?;
    if ensemble.len() < 2 {
        return Err(Error::Calibration("need weight vectors from at least two CRPs".into()));
    }
    let n: usize = ensemble.iter().map(Vec::len).sum();
    let mean = ensemble.iter().flatten().sum::<f64>() / n as f64;
    let var = ensemble.iter().flatten().map(|w| (w - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let sigma = var.sqrt();
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::Calibration(format!("degenerate weight ensemble (sigma = {sigma})")));
    }
    Ok(CalibrationProfile {
        mu: mean,
        sigma,
        n_bit,
        encoding,
        ensemble_size: ensemble.len(),
    })
}

/// Standard normal CDF.
#[inline]
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

pub fn to_uniform(weights: &[f64], profile: &CalibrationProfile) -> Vec<f64> {
    weights
        .iter()
        .map(|w| normal_cdf((w - profile.mu) / profile.sigma))
        .collect()
}

pub fn quantize_bits(u: &[f64], n_bit: u32, encoding: Encoding) -> Result<BinaryKey> {
    check_n_bit(n_bit)?;
    let top = (1u32 << n_bit) - 1;
    let mut bits = Bits::with_capacity(u.len() * n_bit as usize);
    for (i, &v) in u.iter().enumerate() {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::Input(format!("value {i} = {v} outside [0, 1]")));
        }
        let bin = ((v * (1u64 << n_bit) as f64).floor() as u32).min(top);
        bits.push_word(encoding.encode(bin), n_bit);
    }
    Ok(BinaryKey {
        bits,
        bits_per_weight: n_bit,
        weight_count: u.len(),
    })
}

pub fn key_from_weights(weights: &[f64], profile: &CalibrationProfile) -> Result<BinaryKey> {
    profile.validate()?;
    quantize_bits(&to_uniform(weights, profile), profile.n_bit, profile.encoding)
}

/// Full challenge to key pipeline on a one-shot simulator; noise comes from
/// `det_cfg.noise_seed`.
pub fn respond(
    device: &DeviceProfile,
    challenge: &Challenge,
    det_cfg: &DetectionConfig,
    ridge_cfg: &RidgeConfig,
    profile: &CalibrationProfile,
) -> Result<Response> {
    let puf = Puf::new(device.clone(), challenge.length, det_cfg.clone(), ridge_cfg.clone())?;
    puf.respond(challenge, det_cfg.noise_seed, profile)
}

/// Seeds of calibration CRP `i` under a calibration seed: `(challenge, noise)`.
pub fn calibration_seeds(calibration_seed: u64, i: u64) -> (u64, u64) {
    (
        seeds::derive(calibration_seed, seeds::CHALLENGE, i),
        seeds::derive(calibration_seed, seeds::NOISE, i),
    )
}

/// A device wired to a fixed simulation grid, detector and readout.
#[derive(Debug)]
pub struct Puf {
    sim: Simulator,
    det: DetectionConfig,
    ridge: RidgeConfig,
}

impl Puf {
    pub fn new(device: DeviceProfile, challenge_len: usize, det: DetectionConfig, ridge: RidgeConfig) -> Result<Self> {
        ridge.validate()?;
        let sim = Simulator::new(device, challenge_len, &det)?;
        Ok(Self { sim, det, ridge })
    }

    pub fn device(&self) -> &DeviceProfile {
        self.sim.device()
    }

    pub fn detection(&self) -> &DetectionConfig {
        &self.det
    }

    pub fn ridge(&self) -> &RidgeConfig {
        &self.ridge
    }

    pub fn channels(&self) -> usize {
        self.sim.channels()
    }

    pub fn weight_count(&self) -> usize {
        self.ridge.weight_count(self.channels())
    }

    /// Fixes the ADC full scale from one noisy pass over the given input
    /// (already in the modulator's `[0, 1]` domain).
    pub fn calibrate_adc(&mut self, x: &[f64], noise_seed: u64) -> Result<Vec<[f64; 2]>> {
        let cfg = self.det.clone().with_noise_seed(noise_seed);
        self.sim.calibrate_adc(x, &cfg)
    }

    /// ADC full scale from a noisy pass over the challenge derived from `seed`.
    pub fn calibrate_adc_seeded(&mut self, challenges: &ChallengeConfig, seed: u64) -> Result<Vec<[f64; 2]>> {
        let c = challenges.make(seeds::derive(seed, seeds::ADC, 0))?;
        self.calibrate_adc(&c.modulator_input(), seeds::derive(seed, seeds::ADC, 1))
    }

    /// Detector samples before the ADC.
    pub fn analog(&self, challenge: &Challenge, noise_seed: u64) -> Result<AnalogStates> {
        let cfg = self.det.clone().with_noise_seed(noise_seed);
        self.sim.analog_states(&challenge.modulator_input(), &cfg)
    }

    /// Readout trained on already detected samples, digitized at `adc_bits`.
    pub fn train_analog(&self, analog: &AnalogStates, challenge: &Challenge, adc_bits: u32) -> Result<Response> {
        let states = self.sim.digitize(analog, adc_bits, &self.det)?;
        readout::train(&states, &challenge.x_in, &challenge.y_out, &self.ridge)
    }

    pub fn train(&self, challenge: &Challenge, noise_seed: u64) -> Result<Response> {
        let analog = self.analog(challenge, noise_seed)?;
        self.train_analog(&analog, challenge, self.det.adc_bits)
    }

    pub fn respond(&self, challenge: &Challenge, noise_seed: u64, profile: &CalibrationProfile) -> Result<Response> {
        let mut resp = self.train(challenge, noise_seed)?;
        resp.key = Some(key_from_weights(&resp.weights, profile)?);
        Ok(resp)
    }

    /// Calibrates on `ensemble_size` CRPs whose seeds hang off `calibration_seed`.
    pub fn calibrate(
        &self,
        challenges: &ChallengeConfig,
        calibration_seed: u64,
        ensemble_size: usize,
        n_bit: u32,
        encoding: Encoding,
    ) -> Result<CalibrationProfile> {
        let ensemble = (0..ensemble_size as u64)
            .into_par_iter()
            .map(|i| {
                let (cs, ns) = calibration_seeds(calibration_seed, i);
                Ok(self.train(&challenges.make(cs)?, ns)?.weights)
            })
            .collect::<Result<Vec<_>>>()?;
        calibrate(&ensemble, n_bit, encoding)
    }
}
