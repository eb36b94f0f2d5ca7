//! Frequency-domain model of the recurrent spectrum-slicing device.
//!
//! The optical path is linear, so each node is a closed-form transfer
//! function applied to the modulated field in the Fourier domain. All of the
//! nonlinearity enters at the square-law photodiodes.

mod detect;
mod device;
mod mrr;
mod node;

pub use detect::{
    adc_code, digitize, fft_frequencies, modulate, simulate_states, AnalogStates, DetectionConfig, Simulator,
    StateMatrix,
};
pub use device::{
    fabricate, DeviationRecord, DeviceProfile, MrrDeviation, NodeDeviation, NominalConfig, DEVICE_SCHEMA,
};
pub use mrr::{mrr_response, MrrParams};
pub use node::{node_transfer, RossNode, IO_COUPLER_AMPLITUDE};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
pub const ELECTRON_CHARGE: f64 = 1.602_176_634e-19;
