//! Add/drop micro-ring resonator.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::SPEED_OF_LIGHT;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MrrParams {
    /// Field coupling coefficient of both bus couplers.
    pub kappa: f64,
    /// Ring radius in meters.
    pub radius: f64,
    pub n_eff: f64,
    pub n_g: f64,
    /// Power propagation loss in 1/m.
    pub alpha: f64,
    /// Resonance position relative to the carrier, Hz.
    pub resonance_offset: f64,
    /// Field amplitude of the connection to the next ring in the chain.
    pub coupling_strength: f64,
}

impl MrrParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.kappa > 0.0 && self.kappa < 1.0) {
            return Err(Error::Config(format!("kappa must lie in (0, 1), got {}", self.kappa)));
        }
        if !(self.radius > 0.0) {
            return Err(Error::Config(format!("ring radius must be positive, got {}", self.radius)));
        }
        if !(self.alpha >= 0.0) {
            return Err(Error::Config(format!("loss must be non-negative, got {}", self.alpha)));
        }
        if !(self.n_g > 0.0 && self.n_eff > 0.0) {
            return Err(Error::Config("refractive indices must be positive".into()));
        }
        if !(self.coupling_strength > 0.0 && self.coupling_strength <= 1.0) {
            return Err(Error::Config(format!(
                "coupling strength must lie in (0, 1], got {}",
                self.coupling_strength
            )));
        }
        if !self.resonance_offset.is_finite() {
            return Err(Error::Config("resonance offset must be finite".into()));
        }
        Ok(())
    }

    pub fn circumference(&self) -> f64 {
        2.0 * PI * self.radius
    }

    pub fn fsr(&self) -> f64 {
        SPEED_OF_LIGHT / (self.n_g * self.circumference())
    }

    /// Round-trip field amplitude `exp(-alpha L / 2)`.
    pub fn round_trip_amplitude(&self) -> f64 {
        (-self.alpha * self.circumference() / 2.0).exp()
    }

    pub fn self_coupling(&self) -> f64 {
        (1.0 - self.kappa * self.kappa).sqrt()
    }

    /// Analytic full width at half maximum of the drop resonance, Hz.
    pub fn linewidth_estimate(&self) -> f64 {
        let r = self.self_coupling();
        let x = r * r * self.round_trip_amplitude();
        (1.0 - x) * self.fsr() / (PI * x.sqrt())
    }

    /// Through and drop field transfer at baseband offset `f` (Hz from the carrier).
    ///
    /// Round-trip phase is `2 pi n_g L (f - f_res) / c`, so resonances sit at
    /// `resonance_offset + k * FSR`.
    #[inline]
    pub fn response_at(&self, f: f64) -> (Complex64, Complex64) {
        let r = self.self_coupling();
        let a = self.round_trip_amplitude();
        let phi = 2.0 * PI * self.n_g * self.circumference() * (f - self.resonance_offset) / SPEED_OF_LIGHT;
        let e = Complex64::from_polar(1.0, phi);
        let denom = Complex64::new(1.0, 0.0) - r * r * a * e;
        let thru = (r - r * a * e) / denom;
        let drop = -(self.kappa * self.kappa) * a.sqrt() * Complex64::from_polar(1.0, phi / 2.0) / denom;
        (thru, drop)
    }
}

/// Evaluates the ring on a frequency grid; returns `(through, drop)`.
pub fn mrr_response(mrr: &MrrParams, freq_grid: &[f64]) -> (Vec<Complex64>, Vec<Complex64>) {
    freq_grid.iter().map(|&f| mrr.response_at(f)).unzip()
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn table1_ring() -> MrrParams {
        MrrParams {
            kappa: 0.25,
            radius: 55e-6,
            n_eff: 3.4,
            n_g: 4.2,
            alpha: 10.0,
            resonance_offset: 0.0,
            coupling_strength: 0.97,
        }
    }

    fn grid(lo: f64, hi: f64, step: f64) -> Vec<f64> {
        let n = ((hi - lo) / step).round() as usize + 1;
        (0..n).map(|i| lo + i as f64 * step).collect()
    }

    #[test]
    fn lossless_resonance_is_extremal() {
        let ring = MrrParams {
            alpha: 0.0,
            resonance_offset: 3e9,
            ..table1_ring()
        };
        let g = grid(-20e9, 20e9, 0.05e9);
        let (thru, drop) = mrr_response(&ring, &g);
        let at = g.iter().position(|&f| (f - 3e9).abs() < 1.0).unwrap();
        let dmax = drop.iter().map(|d| d.norm()).fold(0.0, f64::max);
        let tmin = thru.iter().map(|t| t.norm()).fold(f64::INFINITY, f64::min);
        assert_eq!(drop[at].norm(), dmax);
        assert_eq!(thru[at].norm(), tmin);
        // Lossless and symmetric: full transfer to the drop port.
        assert!((drop[at].norm() - 1.0).abs() < 1e-12);
        assert!(thru[at].norm() < 1e-12);
    }

    #[test]
    fn passive_everywhere() {
        for &(kappa, alpha, off) in &[(0.25, 10.0, 0.0), (0.05, 0.0, 7e9), (0.9, 500.0, -30e9), (0.5, 0.0, 0.0)] {
            let ring = MrrParams {
                kappa,
                alpha,
                resonance_offset: off,
                ..table1_ring()
            };
            for f in grid(-320e9, 320e9, 0.1e9) {
                let (t, d) = ring.response_at(f);
                assert!(t.norm_sqr() + d.norm_sqr() <= 1.0 + 1e-12);
            }
        }
    }

    #[test]
    fn resonances_repeat_every_fsr() {
        let ring = table1_ring();
        let fsr = ring.fsr();
        let (_, d0) = ring.response_at(0.0);
        let (_, d1) = ring.response_at(fsr);
        assert!((d0.norm() - d1.norm()).abs() < 1e-12);
        assert!((fsr - 206.5e9).abs() < 0.5e9, "fsr {fsr}");
    }

    /// Drop-port -3 dB full width measured on a 1 MHz grid. The frozen value
    /// is the regression reference for kappa=0.25, R=55 um, alpha=10/m, n_g=4.2.
    #[test]
    fn drop_linewidth_scan() {
        let ring = table1_ring();
        let g = grid(-10e9, 10e9, 1e6);
        let (_, drop) = mrr_response(&ring, &g);
        let p: Vec<f64> = drop.iter().map(|d| d.norm_sqr()).collect();
        let peak = p.iter().cloned().fold(0.0, f64::max);
        let above: Vec<f64> = g.iter().zip(&p).filter(|(_, &v)| v >= peak / 2.0).map(|(&f, _)| f).collect();
        let width = above.last().unwrap() - above.first().unwrap();
        assert!((width - ring.linewidth_estimate()).abs() < 5e6, "scan {width} vs analytic {}", ring.linewidth_estimate());
        assert!((width - LINEWIDTH_HZ).abs() <= 1e6, "measured {width}");
    }

    const LINEWIDTH_HZ: f64 = 4.358e9;
}
