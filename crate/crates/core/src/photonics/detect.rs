//! Modulation, spectral slicing, square-law detection, and digitization.

use std::sync::Arc;

use num_complex::Complex64;
use rand_distr::{Distribution, StandardNormal};
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::{node_transfer, DeviceProfile, ELECTRON_CHARGE};
use crate::error::{Error, Result};
use crate::seeds;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectionConfig {
    /// Photodiode bandwidth, Hz.
    pub pd_bandwidth: f64,
    /// A/W.
    pub responsivity: f64,
    /// Thermal noise current density, A/sqrt(Hz).
    pub thermal_noise_density: f64,
    pub shot_noise_enabled: bool,
    /// ADC resolution `m_bit`.
    pub adc_bits: u32,
    pub samples_per_symbol: usize,
    /// Symbols per second.
    pub symbol_rate: f64,
    /// Intensity is proportional to `bias + depth * x`.
    pub modulation_bias: f64,
    pub modulation_depth: f64,
    pub noise_seed: u64,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        Self {
            pd_bandwidth: 40e9,
            responsivity: 1.0,
            thermal_noise_density: 3e-14,
            shot_noise_enabled: false,
            adc_bits: 16,
            samples_per_symbol: 16,
            symbol_rate: 40e9,
            modulation_bias: 0.0,
            modulation_depth: 1.0,
            noise_seed: 0,
        }
    }
}

impl DetectionConfig {
    pub fn noiseless(self) -> Self {
        Self {
            thermal_noise_density: 0.0,
            shot_noise_enabled: false,
            ..self
        }
    }

    pub fn with_adc_bits(self, adc_bits: u32) -> Self {
        Self { adc_bits, ..self }
    }

    pub fn with_noise_seed(self, noise_seed: u64) -> Self {
        Self { noise_seed, ..self }
    }

    pub fn noise_enabled(&self) -> bool {
        self.thermal_noise_density > 0.0 || self.shot_noise_enabled
    }

    pub fn sample_rate(&self) -> f64 {
        self.symbol_rate * self.samples_per_symbol as f64
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=16).contains(&self.adc_bits) {
            return Err(Error::Config(format!("adc_bits must lie in [1, 16], got {}", self.adc_bits)));
        }
        if self.samples_per_symbol < 4 {
            return Err(Error::Config("at least 4 samples per symbol required".into()));
        }
        if !(self.pd_bandwidth > 0.0 && self.symbol_rate > 0.0 && self.responsivity > 0.0) {
            return Err(Error::Config("bandwidth, symbol rate and responsivity must be positive".into()));
        }
        if !(self.thermal_noise_density >= 0.0) {
            return Err(Error::Config("thermal noise density must be non-negative".into()));
        }
        if !(self.modulation_bias >= 0.0 && self.modulation_depth >= 0.0) || self.modulation_bias + self.modulation_depth <= 0.0 {
            return Err(Error::Config("modulation bias and depth must be non-negative and not both zero".into()));
        }
        Ok(())
    }
}

/// Rectangular-pulse intensity modulation of the carrier, returned as the
/// oversampled complex baseband field (sqrt(W)).
///
/// The intensity of symbol `s` is `bias + depth * x[s]`, scaled so the batch
/// mean power equals the device's mean power. A dark batch stays dark.
pub fn modulate(x: &[f64], cfg: &DetectionConfig, device: &DeviceProfile) -> Result<Vec<Complex64>> {
    if x.is_empty() {
        return Err(Error::Input("empty input series".into()));
    }
    if let Some(i) = x.iter().position(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::Input(format!("input sample {i} = {} outside [0, 1]", x[i])));
    }
    let level = |v: f64| cfg.modulation_bias + cfg.modulation_depth * v;
    let mean_level = x.iter().map(|&v| level(v)).sum::<f64>() / x.len() as f64;
    let scale = if mean_level > 0.0 { device.mean_power / mean_level } else { 0.0 };
    let sps = cfg.samples_per_symbol;
    let mut field = Vec::with_capacity(x.len() * sps);
    for &v in x {
        let amp = Complex64::new((scale * level(v)).sqrt(), 0.0);
        field.extend(std::iter::repeat_n(amp, sps));
    }
    Ok(field)
}

/// Detector samples at symbol centers before the ADC, row-major `[symbol][channel]`.
#[derive(Clone, Debug, PartialEq)]
pub struct AnalogStates {
    pub n_symbols: usize,
    pub n_channels: usize,
    pub samples: Vec<f64>,
}

impl AnalogStates {
    #[inline]
    pub fn get(&self, symbol: usize, channel: usize) -> f64 {
        self.samples[symbol * self.n_channels + channel]
    }

    pub fn channel(&self, c: usize) -> impl Iterator<Item = f64> + '_ {
        (0..self.n_symbols).map(move |s| self.get(s, c))
    }

    /// Per-channel `[min, max]` over all symbols.
    pub fn observed_range(&self) -> Vec<[f64; 2]> {
        (0..self.n_channels)
            .map(|c| {
                self.channel(c)
                    .fold([f64::INFINITY, f64::NEG_INFINITY], |[lo, hi], v| [lo.min(v), hi.max(v)])
            })
            .collect()
    }
}

/// Digitized states `S`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateMatrix {
    pub n_symbols: usize,
    pub n_channels: usize,
    /// Row-major ADC codes mapped to bin centers in `(0, 1)`.
    pub samples: Vec<f64>,
    pub channel_map: Vec<(usize, usize)>,
    pub symbol_rate: f64,
    pub adc_bits: u32,
}

impl StateMatrix {
    #[inline]
    pub fn get(&self, symbol: usize, channel: usize) -> f64 {
        self.samples[symbol * self.n_channels + channel]
    }
}

/// Uniform `bits`-bit quantizer over `[lo, hi]`; out-of-range samples clip.
#[inline]
pub fn adc_code(v: f64, lo: f64, hi: f64, bits: u32) -> u32 {
    let levels = 1u32 << bits;
    let span = hi - lo;
    if !(span > 0.0) {
        return 0;
    }
    let q = ((v - lo) / span * levels as f64).floor();
    q.clamp(0.0, (levels - 1) as f64) as u32
}

pub fn digitize(
    analog: &AnalogStates,
    full_scale: &[[f64; 2]],
    bits: u32,
    channel_map: Vec<(usize, usize)>,
    symbol_rate: f64,
) -> Result<StateMatrix> {
    if !(1..=16).contains(&bits) {
        return Err(Error::Config(format!("adc_bits must lie in [1, 16], got {bits}")));
    }
    if full_scale.len() != analog.n_channels {
        return Err(Error::LengthMismatch {
            expected: analog.n_channels,
            got: full_scale.len(),
        });
    }
    let levels = (1u32 << bits) as f64;
    let samples = analog
        .samples
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let [lo, hi] = full_scale[i % analog.n_channels];
            (adc_code(v, lo, hi, bits) as f64 + 0.5) / levels
        })
        .collect();
    Ok(StateMatrix {
        n_symbols: analog.n_symbols,
        n_channels: analog.n_channels,
        samples,
        channel_map,
        symbol_rate,
        adc_bits: bits,
    })
}

/// A device with its transfer tables precomputed for one simulation grid.
/// Immutable after construction and shareable across threads.
pub struct Simulator {
    device: DeviceProfile,
    n_symbols: usize,
    n_fft: usize,
    sample_rate: f64,
    /// `[channel][frequency]` in FFT bin order, including the splitter loss.
    transfers: Vec<Vec<Complex64>>,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Simulator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Simulator")
            .field("fab_seed", &self.device.fab_seed)
            .field("n_symbols", &self.n_symbols)
            .field("n_fft", &self.n_fft)
            .finish()
    }
}

/// FFT bin frequencies for an `n`-point grid at `fs`.
pub fn fft_frequencies(n: usize, fs: f64) -> Vec<f64> {
    (0..n)
        .map(|k| if k < n / 2 { k as f64 } else { k as f64 - n as f64 } * fs / n as f64)
        .collect()
}

impl Simulator {
    pub fn new(device: DeviceProfile, n_symbols: usize, cfg: &DetectionConfig) -> Result<Self> {
        cfg.validate()?;
        if n_symbols == 0 {
            return Err(Error::Input("simulation needs at least one symbol".into()));
        }
        let n_fft = (n_symbols * cfg.samples_per_symbol).next_power_of_two();
        let sample_rate = cfg.sample_rate();
        let freq = fft_frequencies(n_fft, sample_rate);
        let split = 1.0 / (device.splitter_ways as f64).sqrt();
        let mut transfers = Vec::with_capacity(device.channels());
        for node in &device.nodes {
            for mut t in node_transfer(node, &freq)? {
                t.iter_mut().for_each(|v| *v *= split);
                transfers.push(t);
            }
        }
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(n_fft);
        let inv = planner.plan_fft_inverse(n_fft);
        Ok(Self {
            device,
            n_symbols,
            n_fft,
            sample_rate,
            transfers,
            fwd,
            inv,
        })
    }

    pub fn device(&self) -> &DeviceProfile {
        &self.device
    }

    pub fn device_mut(&mut self) -> &mut DeviceProfile {
        &mut self.device
    }

    pub fn n_symbols(&self) -> usize {
        self.n_symbols
    }

    pub fn n_fft(&self) -> usize {
        self.n_fft
    }

    pub fn channels(&self) -> usize {
        self.transfers.len()
    }

    fn check_cfg(&self, cfg: &DetectionConfig) -> Result<()> {
        cfg.validate()?;
        if cfg.sample_rate() != self.sample_rate {
            return Err(Error::Config("detection config does not match the simulator grid".into()));
        }
        Ok(())
    }

    /// Detector samples for an arbitrary input field of `n_symbols * sps` samples.
    pub fn detect_field(&self, field: &[Complex64], cfg: &DetectionConfig) -> Result<AnalogStates> {
        self.check_cfg(cfg)?;
        let sps = cfg.samples_per_symbol;
        if field.len() != self.n_symbols * sps {
            return Err(Error::LengthMismatch {
                expected: self.n_symbols * sps,
                got: field.len(),
            });
        }
        if field.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::Numerical("non-finite optical field".into()));
        }
        let mut spectrum = vec![Complex64::default(); self.n_fft];
        spectrum[..field.len()].copy_from_slice(field);
        self.fwd.process(&mut spectrum);

        let n_ch = self.channels();
        let mut samples = vec![0.0; self.n_symbols * n_ch];
        let beta = 1.0 - (-2.0 * std::f64::consts::PI * cfg.pd_bandwidth / self.sample_rate).exp();
        let thermal_var = cfg.thermal_noise_density.powi(2) * cfg.pd_bandwidth;
        let mut rng = seeds::rng(seeds::derive(cfg.noise_seed, seeds::NOISE, 0));
        let norm = 1.0 / self.n_fft as f64;
        let mut buf = vec![Complex64::default(); self.n_fft];
        let mut scratch = vec![Complex64::default(); self.inv.get_inplace_scratch_len()];

        for (c, h) in self.transfers.iter().enumerate() {
            for ((b, s), t) in buf.iter_mut().zip(&spectrum).zip(h) {
                *b = s * t;
            }
            self.inv.process_with_scratch(&mut buf, &mut scratch);
            let mut lp = cfg.responsivity * buf[0].norm_sqr() * norm * norm;
            let mut sym = 0;
            for (i, v) in buf.iter().enumerate().take(self.n_symbols * sps) {
                let current = cfg.responsivity * v.norm_sqr() * norm * norm;
                lp += beta * (current - lp);
                if i == sym * sps + sps / 2 {
                    let mut sample = lp;
                    if cfg.noise_enabled() {
                        let shot_var = if cfg.shot_noise_enabled {
                            2.0 * ELECTRON_CHARGE * lp.max(0.0) * cfg.pd_bandwidth
                        } else {
                            0.0
                        };
                        let z: f64 = StandardNormal.sample(&mut rng);
                        sample += z * (thermal_var + shot_var).sqrt();
                    }
                    samples[sym * n_ch + c] = sample;
                    sym += 1;
                }
            }
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite detector sample".into()));
        }
        Ok(AnalogStates {
            n_symbols: self.n_symbols,
            n_channels: n_ch,
            samples,
        })
    }

    pub fn analog_states(&self, x: &[f64], cfg: &DetectionConfig) -> Result<AnalogStates> {
        if x.len() != self.n_symbols {
            return Err(Error::LengthMismatch {
                expected: self.n_symbols,
                got: x.len(),
            });
        }
        let field = modulate(x, cfg, &self.device)?;
        self.detect_field(&field, cfg)
    }

    /// Full scale used for digitization: the device's calibrated range when
    /// present, otherwise the range observed in this run.
    pub fn full_scale_for(&self, analog: &AnalogStates) -> Vec<[f64; 2]> {
        match &self.device.adc_full_scale {
            Some(fs) if fs.len() == analog.n_channels => fs.clone(),
            _ => analog.observed_range(),
        }
    }

    pub fn digitize(&self, analog: &AnalogStates, bits: u32, cfg: &DetectionConfig) -> Result<StateMatrix> {
        let fs = self.full_scale_for(analog);
        digitize(analog, &fs, bits, self.device.channel_map(), cfg.symbol_rate)
    }

    pub fn states(&self, x: &[f64], cfg: &DetectionConfig) -> Result<StateMatrix> {
        let analog = self.analog_states(x, cfg)?;
        self.digitize(&analog, cfg.adc_bits, cfg)
    }

    /// Fixes the ADC full scale from one calibration pass over `x`.
    pub fn calibrate_adc(&mut self, x: &[f64], cfg: &DetectionConfig) -> Result<Vec<[f64; 2]>> {
        let analog = self.analog_states(x, cfg)?;
        let range = analog.observed_range();
        self.device.adc_full_scale = Some(range.clone());
        Ok(range)
    }
}

/// One-shot simulation: modulate, slice, detect, digitize.
pub fn simulate_states(device: &DeviceProfile, x: &[f64], cfg: &DetectionConfig) -> Result<StateMatrix> {
    Simulator::new(device.clone(), x.len(), cfg)?.states(x, cfg)
}
