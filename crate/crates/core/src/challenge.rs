//! Challenges: a seeded uniform input series and its NARMA target.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeds;

pub const CHALLENGE_SCHEMA: &str = "rosspuf.challenge/1";
pub const DEFAULT_LENGTH: usize = 2000;
const MAX_ATTEMPTS: u32 = 16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NarmaParams {
    pub a1: f64,
    pub a2: f64,
    pub b: f64,
    pub c: f64,
    /// Memory order.
    pub m: usize,
    pub divergence_bound: f64,
}

impl Default for NarmaParams {
    fn default() -> Self {
        Self {
            a1: 0.3,
            a2: 0.05,
            b: 1.5,
            c: 0.1,
            m: 10,
            divergence_bound: 10.0,
        }
    }
}

impl NarmaParams {
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(Error::Config("NARMA memory order must be at least 1".into()));
        }
        if ![self.a1, self.a2, self.b, self.c, self.divergence_bound].iter().all(|v| v.is_finite()) {
            return Err(Error::Config("NARMA coefficients must be finite".into()));
        }
        Ok(())
    }
}

/// Range of the uniform series that drives the recursion. The modulator sees
/// the same series mapped affinely onto `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputRange {
    pub lo: f64,
    pub hi: f64,
}

impl Default for InputRange {
    fn default() -> Self {
        Self { lo: 0.0, hi: 0.5 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Challenge {
    /// Seed the caller asked for.
    pub seed: u64,
    /// Sub-seed that produced a bounded target (equal to `seed` unless re-seeded).
    pub used_seed: u64,
    pub length: usize,
    pub params: NarmaParams,
    pub range: InputRange,
    pub x_in: Vec<f64>,
    pub y_out: Vec<f64>,
}

impl Challenge {
    /// Input mapped onto the modulator's `[0, 1]` domain.
    pub fn modulator_input(&self) -> Vec<f64> {
        let span = self.range.hi - self.range.lo;
        self.x_in
            .iter()
            .map(|&v| ((v - self.range.lo) / span).clamp(0.0, 1.0))
            .collect()
    }
}

/// `n` i.i.d. samples uniform on `[lo, hi)`.
pub fn gen_input(seed: u64, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    let mut rng = seeds::rng(seed);
    (0..n).map(|_| lo + (hi - lo) * rng.random::<f64>()).collect()
}

/// NARMA-m target for input `x`.
///
/// `y_out[t]` is the recursion value produced from inputs up to `x[t]`:
///
/// ```text
/// y_out[t] = a1 y[t] + a2 y[t] sum_{i<m} y[t-i] + b x[t-m+1] x[t] + c,   y[t] = y_out[t-1]
/// ```
///
/// with zero history before the series starts.
pub fn narma_target(x: &[f64], params: &NarmaParams) -> Result<Vec<f64>> {
    params.validate()?;
    if let Some(i) = x.iter().position(|v| !v.is_finite()) {
        return Err(Error::Input(format!("input sample {i} is not finite")));
    }
    let m = params.m;
    let mut y: Vec<f64> = Vec::with_capacity(x.len());
    let mut window = 0.0; // sum of the last m values of y (the recursion's y[t-i], i < m)
    for t in 0..x.len() {
        let prev = if t > 0 { y[t - 1] } else { 0.0 };
        let lagged = if t + 1 >= m { x[t + 1 - m] } else { 0.0 };
        let next = params.a1 * prev + params.a2 * prev * window + params.b * lagged * x[t] + params.c;
        if !next.is_finite() || next.abs() > params.divergence_bound {
            return Err(Error::Diverged { index: t });
        }
        y.push(next);
        window += next;
        if t >= m {
            window -= y[t - m];
        }
    }
    Ok(y)
}

pub fn make_challenge(seed: u64, n: usize, params: &NarmaParams, range: InputRange) -> Result<Challenge> {
    params.validate()?;
    if n < params.m + 1 {
        return Err(Error::Input(format!("challenge length {n} shorter than memory order + 1")));
    }
    if !(range.lo < range.hi) {
        return Err(Error::Config(format!("empty input range [{}, {}]", range.lo, range.hi)));
    }
    for attempt in 0..MAX_ATTEMPTS {
        let sub = if attempt == 0 {
            seed
        } else {
            seeds::derive(seed, "challenge-retry", attempt as u64)
        };
        let x_in = gen_input(sub, n, range.lo, range.hi);
        match narma_target(&x_in, params) {
            Ok(y_out) => {
                return Ok(Challenge {
                    seed,
                    used_seed: sub,
                    length: n,
                    params: params.clone(),
                    range,
                    x_in,
                    y_out,
                })
            }
            Err(Error::Diverged { .. }) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(Error::ChallengeGeneration {
        seed,
        attempts: MAX_ATTEMPTS,
    })
}

/// Everything besides the seed that fixes a challenge.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChallengeConfig {
    pub length: usize,
    pub params: NarmaParams,
    pub range: InputRange,
}

impl Default for ChallengeConfig {
    fn default() -> Self {
        Self {
            length: DEFAULT_LENGTH,
            params: NarmaParams::default(),
            range: InputRange::default(),
        }
    }
}

impl ChallengeConfig {
    pub fn make(&self, seed: u64) -> Result<Challenge> {
        make_challenge(seed, self.length, &self.params, self.range)
    }
}

/// Challenge file: seeds suffice to regenerate, series are optional.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChallengeFile {
    pub schema: String,
    pub seed: u64,
    pub length: usize,
    pub params: NarmaParams,
    pub range: InputRange,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_in: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y_out: Option<Vec<f64>>,
}

impl ChallengeFile {
    pub fn from_challenge(c: &Challenge, inline_series: bool) -> Self {
        Self {
            schema: CHALLENGE_SCHEMA.into(),
            seed: c.seed,
            length: c.length,
            params: c.params.clone(),
            range: c.range,
            x_in: inline_series.then(|| c.x_in.clone()),
            y_out: inline_series.then(|| c.y_out.clone()),
        }
    }

    pub fn regenerate(&self) -> Result<Challenge> {
        if self.schema != CHALLENGE_SCHEMA {
            return Err(Error::Config(format!("unsupported challenge schema {:?}", self.schema)));
        }
        make_challenge(self.seed, self.length, &self.params, self.range)
    }
}
