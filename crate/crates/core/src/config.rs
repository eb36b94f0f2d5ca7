//! One serializable description of an experiment. A config file plus the
//! code version determines every output byte.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::challenge::ChallengeConfig;
use crate::error::{Error, Result};
use crate::keygen::{Encoding, Puf};
use crate::metrics::{SeedSchedule, SweepBudget};
use crate::photonics::{fabricate, DetectionConfig, DeviceProfile, NominalConfig};
use crate::randtests::TestParams;
use crate::readout::RidgeConfig;
use crate::seeds;

pub const EXPERIMENT_SCHEMA: &str = "rosspuf.experiment/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KeygenConfig {
    pub n_bit: u32,
    pub encoding: Encoding,
    pub calibration_crps: usize,
}

impl Default for KeygenConfig {
    fn default() -> Self {
        Self {
            n_bit: 4,
            encoding: Encoding::Natural,
            calibration_crps: 1000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub m_bits: Vec<u32>,
    pub n_bits: Vec<u32>,
    pub budget: SweepBudget,
    pub mrr_counts: Vec<usize>,
    /// Operating point of the ring-count sweep.
    pub mrr_m_bit: u32,
    pub mrr_n_bit: u32,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            m_bits: (1..=16).collect(),
            n_bits: (1..=8).collect(),
            budget: SweepBudget::default(),
            mrr_counts: (1..=8).collect(),
            mrr_m_bit: 3,
            mrr_n_bit: 4,
        }
    }
}

/// Operating point for key reconstruction. Stronger regularization keeps
/// repeated responses within a few flips of each other.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EccConfig {
    pub m_bit: u32,
    pub n_bit: u32,
    pub lambda: f64,
    pub encoding: Encoding,
    /// Intra repeats and inter keys, each.
    pub trials: usize,
    pub t_values: Vec<u32>,
}

impl Default for EccConfig {
    fn default() -> Self {
        Self {
            m_bit: 16,
            n_bit: 4,
            lambda: 1e3,
            encoding: Encoding::Natural,
            trials: 200,
            t_values: (0..=48).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NistConfig {
    /// Keys concatenated into the corpus.
    pub keys: usize,
    pub sequence_len: usize,
    pub alpha: f64,
    /// Append a permutation of the keys before splitting.
    pub extend: bool,
    pub params: TestParams,
}

impl Default for NistConfig {
    fn default() -> Self {
        Self {
            keys: 1000,
            sequence_len: 100_000,
            alpha: 0.01,
            extend: true,
            params: TestParams::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub schema: String,
    pub master_seed: u64,
    /// Defaults to a seed derived from `master_seed`.
    pub fab_seed: Option<u64>,
    pub device: NominalConfig,
    pub detection: DetectionConfig,
    pub ridge: RidgeConfig,
    pub challenge: ChallengeConfig,
    pub keygen: KeygenConfig,
    pub sweep: SweepConfig,
    pub ecc: EccConfig,
    pub nist: NistConfig,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            schema: EXPERIMENT_SCHEMA.into(),
            master_seed: 1,
            fab_seed: None,
            device: NominalConfig::default(),
            detection: DetectionConfig::default(),
            ridge: RidgeConfig::default(),
            challenge: ChallengeConfig::default(),
            keygen: KeygenConfig::default(),
            sweep: SweepConfig::default(),
            ecc: EccConfig::default(),
            nist: NistConfig::default(),
            output_dir: PathBuf::from("out"),
        }
    }
}

fn check_bits(name: &str, b: u32) -> Result<()> {
    if !(1..=16).contains(&b) {
        return Err(Error::Config(format!("{name} must lie in [1, 16], got {b}")));
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let cfg: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema != EXPERIMENT_SCHEMA {
            return Err(Error::Config(format!("unsupported config schema {:?}", self.schema)));
        }
        self.device.validate()?;
        self.detection.validate()?;
        self.ridge.validate()?;
        check_bits("detection.adc_bits", self.detection.adc_bits)?;
        check_bits("keygen.n_bit", self.keygen.n_bit)?;
        check_bits("ecc.m_bit", self.ecc.m_bit)?;
        check_bits("ecc.n_bit", self.ecc.n_bit)?;
        check_bits("sweep.mrr_m_bit", self.sweep.mrr_m_bit)?;
        check_bits("sweep.mrr_n_bit", self.sweep.mrr_n_bit)?;
        for &b in self.sweep.m_bits.iter().chain(&self.sweep.n_bits) {
            check_bits("sweep grid entry", b)?;
        }
        if self.keygen.calibration_crps < 2 {
            return Err(Error::Config("calibration needs at least two CRPs".into()));
        }
        if !(self.nist.alpha > 0.0 && self.nist.alpha < 1.0) {
            return Err(Error::Config("nist.alpha must lie in (0, 1)".into()));
        }
        if !(self.ecc.lambda >= 0.0) {
            return Err(Error::Config("ecc.lambda must be non-negative".into()));
        }
        Ok(())
    }

    /// Hex SHA-256 of the compact JSON encoding.
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(bytes))
    }

    pub fn fab_seed(&self) -> u64 {
        self.fab_seed
            .unwrap_or_else(|| seeds::derive(self.master_seed, seeds::FABRICATION, 0))
    }

    pub fn schedule(&self) -> SeedSchedule {
        SeedSchedule {
            master: self.master_seed,
        }
    }

    /// Fabricated device with its ADC full scale fixed by a calibration pass.
    pub fn fabricate(&self, nominal: &NominalConfig, fab_seed: u64) -> Result<DeviceProfile> {
        let device = fabricate(nominal, fab_seed)?;
        let mut puf = Puf::new(device, self.challenge.length, self.detection.clone(), self.ridge.clone())?;
        puf.calibrate_adc_seeded(&self.challenge, fab_seed)?;
        Ok(puf.device().clone())
    }

    pub fn default_device(&self) -> Result<DeviceProfile> {
        self.fabricate(&self.device, self.fab_seed())
    }

    /// A PUF at the configured detector and readout.
    pub fn puf(&self, device: DeviceProfile) -> Result<Puf> {
        Puf::new(device, self.challenge.length, self.detection.clone(), self.ridge.clone())
    }

    /// A PUF at the ECC operating point.
    pub fn ecc_puf(&self, device: DeviceProfile) -> Result<Puf> {
        let det = DetectionConfig {
            adc_bits: self.ecc.m_bit,
            ..self.detection.clone()
        };
        let ridge = RidgeConfig {
            lambda: self.ecc.lambda,
            ..self.ridge.clone()
        };
        Puf::new(device, self.challenge.length, det, ridge)
    }
}

/// Provenance stamped into every artifact.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunMeta {
    pub config_digest: String,
    pub master_seed: u64,
}

impl RunMeta {
    pub fn of(cfg: &ExperimentConfig) -> Self {
        Self {
            config_digest: cfg.digest(),
            master_seed: cfg.master_seed,
        }
    }

    pub fn csv_header(&self) -> Vec<(String, String)> {
        vec![
            ("config_digest".into(), self.config_digest.clone()),
            ("master_seed".into(), self.master_seed.to_string()),
        ]
    }
}

/// An artifact body with its provenance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Artifact<T> {
    pub meta: RunMeta,
    pub data: T,
}

impl<T: Serialize + for<'de> Deserialize<'de>> Artifact<T> {
    pub fn new(cfg: &ExperimentConfig, data: T) -> Self {
        Self {
            meta: RunMeta::of(cfg),
            data,
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}
