//! Nominal design, fabrication sampling, and the device profile record.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{MrrParams, RossNode, SPEED_OF_LIGHT};
use crate::error::{Error, Result};
use crate::seeds;

pub const DEVICE_SCHEMA: &str = "rosspuf.device/1";

/// Design values of a chip before fabrication variation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NominalConfig {
    pub nodes: usize,
    pub mrrs_per_node: usize,
    pub carrier_wavelength: f64,
    pub mean_power_dbm: f64,
    pub splitter_ways: usize,
    pub kappa: f64,
    pub radius: f64,
    pub n_eff: f64,
    pub n_g: f64,
    pub alpha: f64,
    pub feedback_strength: f64,
    pub loop_delay: f64,
    pub inter_mrr_delay: f64,
    /// Spacing of the target resonance plan, Hz.
    pub detuning_spacing: f64,
    /// Mean of the sampled inter-ring connection amplitude.
    pub coupling_mean: f64,
    pub coupling_sigma: f64,
    /// Standard deviation of the per-ring resonance jitter, Hz.
    pub resonance_jitter_sigma: f64,
    /// Half width of the uniform effective-index deviation.
    pub delta_neff_half_width: f64,
}

impl Default for NominalConfig {
    fn default() -> Self {
        Self {
            nodes: 4,
            mrrs_per_node: 6,
            carrier_wavelength: 1556e-9,
            mean_power_dbm: 10.0,
            splitter_ways: 4,
            kappa: 0.25,
            radius: 55e-6,
            n_eff: 3.4,
            n_g: 4.2,
            alpha: 10.0,
            feedback_strength: 0.9,
            loop_delay: 25e-12,
            inter_mrr_delay: 2.5e-12,
            detuning_spacing: 1e9,
            coupling_mean: 0.97,
            coupling_sigma: 0.1,
            resonance_jitter_sigma: 0.1e9,
            delta_neff_half_width: 0.015,
        }
    }
}

impl NominalConfig {
    /// Nominal design with every deviation width set to zero.
    pub fn ideal(self) -> Self {
        Self {
            coupling_sigma: 0.0,
            resonance_jitter_sigma: 0.0,
            delta_neff_half_width: 0.0,
            ..self
        }
    }

    pub fn channels(&self) -> usize {
        self.nodes * self.mrrs_per_node
    }

    pub fn carrier_frequency(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_wavelength
    }

    pub fn mean_power_watts(&self) -> f64 {
        1e-3 * 10f64.powf(self.mean_power_dbm / 10.0)
    }

    /// Target resonance of global channel `c`: the plan is centered on the carrier.
    pub fn target_detuning(&self, channel: usize) -> f64 {
        (channel as f64 - (self.channels() as f64 - 1.0) / 2.0) * self.detuning_spacing
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.nodes == 0 || self.mrrs_per_node == 0 {
            return bad("device needs at least one node with one ring".into());
        }
        if self.splitter_ways == 0 {
            return bad("splitter needs at least one output".into());
        }
        if !(self.kappa > 0.0 && self.kappa < 1.0) {
            return bad(format!("kappa must lie in (0, 1), got {}", self.kappa));
        }
        if !(self.radius > 0.0) || !(self.n_g > 0.0) || !(self.n_eff > 0.0) {
            return bad("radius and refractive indices must be positive".into());
        }
        if !(self.alpha >= 0.0) {
            return bad(format!("loss must be non-negative, got {}", self.alpha));
        }
        if !(0.0..1.0).contains(&self.feedback_strength) {
            return bad(format!("feedback strength must lie in [0, 1), got {}", self.feedback_strength));
        }
        if !(self.loop_delay >= 0.0) || !(self.inter_mrr_delay >= 0.0) {
            return bad("delays must be non-negative".into());
        }
        if !(self.carrier_wavelength > 0.0) {
            return bad("carrier wavelength must be positive".into());
        }
        if !(self.coupling_mean > 0.0 && self.coupling_mean <= 1.0) {
            return bad(format!("coupling mean must lie in (0, 1], got {}", self.coupling_mean));
        }
        if !(self.coupling_sigma >= 0.0) || !(self.resonance_jitter_sigma >= 0.0) || !(self.delta_neff_half_width >= 0.0) {
            return bad("deviation widths must be non-negative".into());
        }
        if !self.mean_power_dbm.is_finite() || !self.detuning_spacing.is_finite() {
            return bad("power and detuning spacing must be finite".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MrrDeviation {
    pub delta_neff: f64,
    /// `f_c * delta_neff / n_g`, folded into `[-FSR/2, FSR/2]`.
    pub folded_shift: f64,
    pub resonance_jitter: f64,
    pub coupling_strength: f64,
    /// Index deviation of the waveguide leading to the next ring.
    pub segment_delta_neff: f64,
    pub segment_phase_bias: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeDeviation {
    pub loop_delta_neff: f64,
    pub loop_phase_bias: f64,
    pub mrrs: Vec<MrrDeviation>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeviationRecord {
    pub nodes: Vec<NodeDeviation>,
}

impl DeviationRecord {
    pub fn delta_neff_samples(&self) -> impl Iterator<Item = f64> + '_ {
        self.nodes.iter().flat_map(|n| {
            std::iter::once(n.loop_delta_neff)
                .chain(n.mrrs.iter().flat_map(|m| [m.delta_neff, m.segment_delta_neff]))
        })
    }
}

/// One fabricated chip. Serializes to a self-contained record: the nodes are
/// stored as built, so loading a profile never re-samples anything.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeviceProfile {
    pub schema: String,
    pub nominal: NominalConfig,
    pub fab_seed: u64,
    pub carrier_wavelength: f64,
    pub mean_power: f64,
    pub splitter_ways: usize,
    pub deviation_record: DeviationRecord,
    pub nodes: Vec<RossNode>,
    /// Per-channel ADC full scale `[lo, hi]` fixed by a calibration pass.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adc_full_scale: Option<Vec<[f64; 2]>>,
}

impl DeviceProfile {
    pub fn channels(&self) -> usize {
        self.nodes.iter().map(|n| n.mrrs.len()).sum()
    }

    /// `(node, ring)` for every detector channel, in state-matrix column order.
    pub fn channel_map(&self) -> Vec<(usize, usize)> {
        self.nodes
            .iter()
            .enumerate()
            .flat_map(|(i, n)| (0..n.mrrs.len()).map(move |k| (i, k)))
            .collect()
    }

    pub fn carrier_frequency(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_wavelength
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let p: DeviceProfile = serde_json::from_str(s)?;
        if p.schema != DEVICE_SCHEMA {
            return Err(Error::Config(format!("unsupported device schema {:?}", p.schema)));
        }
        for node in &p.nodes {
            node.validate()?;
        }
        Ok(p)
    }
}

fn fold(shift: f64, period: f64) -> f64 {
    shift - period * (shift / period).round()
}

fn wrap_phase(phase: f64) -> f64 {
    phase.rem_euclid(2.0 * PI)
}

/// Samples one chip from the nominal design.
///
/// Draw order per node: loop index deviation, then per ring its index
/// deviation, resonance jitter, connection amplitude and the following
/// waveguide segment's index deviation. The stream is seeded from
/// `fab_seed` alone.
pub fn fabricate(nominal: &NominalConfig, fab_seed: u64) -> Result<DeviceProfile> {
    nominal.validate()?;
    let mut rng = seeds::rng(seeds::derive(fab_seed, seeds::FABRICATION, 0));
    let f_c = nominal.carrier_frequency();
    let w = nominal.delta_neff_half_width;
    let uniform_dn = |rng: &mut rand_chacha::ChaCha8Rng| if w > 0.0 { rng.random_range(-w..=w) } else { 0.0 };
    let jitter = (nominal.resonance_jitter_sigma > 0.0)
        .then(|| Normal::new(0.0, nominal.resonance_jitter_sigma).expect("finite sigma"));
    let coupling = (nominal.coupling_sigma > 0.0)
        .then(|| Normal::new(nominal.coupling_mean, nominal.coupling_sigma).expect("finite sigma"));

    // Phase bias a waveguide of group delay `delay` picks up from an index deviation.
    let phase_bias = |dn: f64, delay: f64| wrap_phase(2.0 * PI * f_c * dn * delay / nominal.n_g);

    let mut node_devs = Vec::with_capacity(nominal.nodes);
    let mut nodes = Vec::with_capacity(nominal.nodes);
    for node_idx in 0..nominal.nodes {
        let loop_dn = uniform_dn(&mut rng);
        let mut mrr_devs = Vec::with_capacity(nominal.mrrs_per_node);
        let mut mrrs = Vec::with_capacity(nominal.mrrs_per_node);
        let mut segment_biases = Vec::with_capacity(nominal.mrrs_per_node);
        for ring_idx in 0..nominal.mrrs_per_node {
            let dn = uniform_dn(&mut rng);
            let j = jitter.map_or(0.0, |d| d.sample(&mut rng));
            let c = coupling.map_or(nominal.coupling_mean, |d| d.sample(&mut rng)).clamp(1e-3, 1.0);
            let seg_dn = uniform_dn(&mut rng);

            let mut ring = MrrParams {
                kappa: nominal.kappa,
                radius: nominal.radius,
                n_eff: nominal.n_eff + dn,
                n_g: nominal.n_g,
                alpha: nominal.alpha,
                resonance_offset: 0.0,
                coupling_strength: c,
            };
            let shift = fold(f_c * dn / nominal.n_g, ring.fsr());
            let channel = node_idx * nominal.mrrs_per_node + ring_idx;
            ring.resonance_offset = nominal.target_detuning(channel) + j + shift;
            let seg_bias = phase_bias(seg_dn, nominal.inter_mrr_delay);

            mrr_devs.push(MrrDeviation {
                delta_neff: dn,
                folded_shift: shift,
                resonance_jitter: j,
                coupling_strength: c,
                segment_delta_neff: seg_dn,
                segment_phase_bias: seg_bias,
            });
            mrrs.push(ring);
            segment_biases.push(seg_bias);
        }
        let loop_bias = phase_bias(loop_dn, nominal.loop_delay);
        node_devs.push(NodeDeviation {
            loop_delta_neff: loop_dn,
            loop_phase_bias: loop_bias,
            mrrs: mrr_devs,
        });
        let node = RossNode {
            mrrs,
            loop_delay: nominal.loop_delay,
            feedback_strength: nominal.feedback_strength,
            inter_mrr_delay: nominal.inter_mrr_delay,
            loop_phase_bias: loop_bias,
            segment_phase_biases: segment_biases,
        };
        node.validate()?;
        nodes.push(node);
    }

    Ok(DeviceProfile {
        schema: DEVICE_SCHEMA.to_string(),
        nominal: nominal.clone(),
        fab_seed,
        carrier_wavelength: nominal.carrier_wavelength,
        mean_power: nominal.mean_power_watts(),
        splitter_ways: nominal.splitter_ways,
        deviation_record: DeviationRecord { nodes: node_devs },
        nodes,
        adc_full_scale: None,
    })
}
