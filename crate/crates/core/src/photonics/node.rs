//! Recurrent spectrum-slicing node: rings in series inside a feedback loop.
//!
//! Light enters the loop through a 3 dB coupler and walks the ring chain.
//! Every ring taps its drop port out to a photodiode; the through-port
//! cascade returns to the loop input, attenuated by the feedback strength.
//! Because the loop is linear its response is the closed geometric series
//!
//! ```text
//! G(f) = 1 / (1 - F_str * F(f) * exp(-i (2 pi f T_d + theta_loop)))
//! F(f) = prod_m C_m * H_thru,m(f) * exp(-i (2 pi f T_MRR + theta_m))
//! ```
//!
//! and channel `k` sees `c_io * H_drop,k * prod_{m<k}[...] * G(f)`.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::MrrParams;
use crate::error::{Error, Result};

/// Field amplitude through the 3 dB input coupler.
pub const IO_COUPLER_AMPLITUDE: f64 = FRAC_1_SQRT_2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RossNode {
    pub mrrs: Vec<MrrParams>,
    /// Loop delay T_d, seconds.
    pub loop_delay: f64,
    pub feedback_strength: f64,
    /// Delay of each inter-ring segment T_MRR, seconds.
    pub inter_mrr_delay: f64,
    /// Static phase of the loop waveguide, radians.
    #[serde(default)]
    pub loop_phase_bias: f64,
    /// Static phase of the segment following each ring, radians.
    #[serde(default)]
    pub segment_phase_biases: Vec<f64>,
}

impl RossNode {
    pub fn validate(&self) -> Result<()> {
        if self.mrrs.is_empty() {
            return Err(Error::Config("node has no rings".into()));
        }
        if !(0.0..1.0).contains(&self.feedback_strength) {
            return Err(Error::Config(format!(
                "feedback strength must lie in [0, 1), got {}",
                self.feedback_strength
            )));
        }
        if !(self.loop_delay >= 0.0) || !(self.inter_mrr_delay >= 0.0) {
            return Err(Error::Config("delays must be non-negative".into()));
        }
        if !self.segment_phase_biases.is_empty() && self.segment_phase_biases.len() != self.mrrs.len() {
            return Err(Error::Config("one segment phase per ring expected".into()));
        }
        self.mrrs.iter().try_for_each(MrrParams::validate)
    }

    fn segment_phase(&self, m: usize) -> f64 {
        self.segment_phase_biases.get(m).copied().unwrap_or(0.0)
    }

    /// Ring `m`'s through port followed by its outgoing segment.
    #[inline]
    pub fn stage(&self, m: usize, thru: Complex64, f: f64) -> Complex64 {
        let ring = &self.mrrs[m];
        ring.coupling_strength
            * thru
            * Complex64::from_polar(1.0, -(2.0 * PI * f * self.inter_mrr_delay + self.segment_phase(m)))
    }

    #[inline]
    pub fn loop_phasor(&self, f: f64) -> Complex64 {
        Complex64::from_polar(1.0, -(2.0 * PI * f * self.loop_delay + self.loop_phase_bias))
    }
}

/// Per-channel complex transfer of a node, laid out `[ring][frequency]`.
pub fn node_transfer(node: &RossNode, freq_grid: &[f64]) -> Result<Vec<Vec<Complex64>>> {
    node.validate()?;
    let n = node.mrrs.len();
    let mut out = vec![Vec::with_capacity(freq_grid.len()); n];
    let mut drops = vec![Complex64::default(); n];
    let mut prefix = vec![Complex64::default(); n];
    for &f in freq_grid {
        let mut acc = Complex64::new(1.0, 0.0);
        for (m, ring) in node.mrrs.iter().enumerate() {
            let (thru, drop) = ring.response_at(f);
            drops[m] = drop;
            prefix[m] = acc;
            acc *= node.stage(m, thru, f);
        }
        let round_trip = node.feedback_strength * acc * node.loop_phasor(f);
        if round_trip.norm() >= 1.0 {
            return Err(Error::Model(format!(
                "loop gain {:.6} at {f:.3e} Hz does not converge",
                round_trip.norm()
            )));
        }
        let g = (Complex64::new(1.0, 0.0) - round_trip).inv();
        for k in 0..n {
            out[k].push(IO_COUPLER_AMPLITUDE * drops[k] * prefix[k] * g);
        }
    }
    Ok(out)
}
