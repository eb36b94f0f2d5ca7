//! Tapped-delay features over the detector states and the ridge readout.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::keygen::BinaryKey;
use crate::photonics::StateMatrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RidgeConfig {
    pub lambda: f64,
    pub taps: usize,
    /// Leading symbols dropped while the tap history fills.
    pub washout: usize,
    /// Standardize feature columns before fitting.
    pub standardize: bool,
}

impl Default for RidgeConfig {
    fn default() -> Self {
        Self {
            lambda: 1e-6,
            taps: 11,
            washout: 20,
            standardize: true,
        }
    }
}

impl RidgeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::Config(format!("lambda must be finite and non-negative, got {}", self.lambda)));
        }
        if self.taps == 0 {
            return Err(Error::Config("at least one tap required".into()));
        }
        if self.washout + 1 < self.taps {
            return Err(Error::Config(format!(
                "washout {} shorter than the tap history {}",
                self.washout,
                self.taps - 1
            )));
        }
        Ok(())
    }

    /// Readout weights for `channels` detector channels, direct input included.
    pub fn weight_count(&self, channels: usize) -> usize {
        channels * self.taps + 1
    }
}

/// Row-major regression matrix.
///
/// Column `c * taps + d` holds channel `c` delayed by `d` symbols; the last
/// column is the direct input `x_in[t]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    pub rows: usize,
    pub cols: usize,
    pub taps: usize,
    /// Symbol index of the first row.
    pub first_symbol: usize,
    pub data: Vec<f64>,
}

impl FeatureMatrix {
    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }
}

pub fn build_features(states: &StateMatrix, x_in: &[f64], cfg: &RidgeConfig) -> Result<FeatureMatrix> {
    cfg.validate()?;
    if states.n_symbols != x_in.len() {
        return Err(Error::LengthMismatch {
            expected: states.n_symbols,
            got: x_in.len(),
        });
    }
    if states.n_symbols <= cfg.washout {
        return Err(Error::Input(format!(
            "{} symbols do not exceed the washout of {}",
            states.n_symbols, cfg.washout
        )));
    }
    let taps = cfg.taps;
    let n_ch = states.n_channels;
    let cols = n_ch * taps + 1;
    let rows = states.n_symbols - cfg.washout;
    let mut data = Vec::with_capacity(rows * cols);
    for t in cfg.washout..states.n_symbols {
        for c in 0..n_ch {
            for d in 0..taps {
                data.push(states.get(t - d, c));
            }
        }
        data.push(x_in[t]);
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite feature".into()));
    }
    Ok(FeatureMatrix {
        rows,
        cols,
        taps,
        first_symbol: cfg.washout,
        data,
    })
}

/// Per-column affine transform fitted on a training matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    /// Population standard deviation; 1 for constant columns.
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(f: &FeatureMatrix) -> Self {
        let n = f.rows as f64;
        let mut mean = vec![0.0; f.cols];
        for r in 0..f.rows {
            for (m, v) in mean.iter_mut().zip(f.row(r)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; f.cols];
        for r in 0..f.rows {
            for ((s, v), m) in var.iter_mut().zip(f.row(r)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let scale = var
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, scale }
    }

    pub fn identity(cols: usize) -> Self {
        Self {
            mean: vec![0.0; cols],
            scale: vec![1.0; cols],
        }
    }

    pub fn apply(&self, f: &FeatureMatrix) -> Result<FeatureMatrix> {
        if f.cols != self.mean.len() {
            return Err(Error::LengthMismatch {
                expected: self.mean.len(),
                got: f.cols,
            });
        }
        let mut out = f.clone();
        for row in out.data.chunks_mut(f.cols) {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.scale) {
                *v = (*v - m) / s;
            }
        }
        Ok(out)
    }
}

/// Solves `(F^T F + lambda I) w = F^T y` by Cholesky factorization.
pub fn ridge_fit(features: &FeatureMatrix, targets: &[f64], lambda: f64) -> Result<Vec<f64>> {
    if targets.len() != features.rows {
        return Err(Error::LengthMismatch {
            expected: features.rows,
            got: targets.len(),
        });
    }
    if !(lambda >= 0.0) {
        return Err(Error::Config(format!("lambda must be non-negative, got {lambda}")));
    }
    let f = features.to_matrix();
    let y = DVector::from_column_slice(targets);
    // `tr_mul` takes a slow path for dynamic matrices; an explicit transpose goes through gemm.
    let ft = f.transpose();
    let mut gram = &ft * &f;
    for i in 0..gram.nrows() {
        gram[(i, i)] += lambda;
    }
    let rhs = &ft * &y;
    let chol = gram.cholesky().ok_or_else(|| {
        Error::Numerical(format!(
            "normal equations are singular at lambda = {lambda}; use lambda > 0"
        ))
    })?;
    let w = chol.solve(&rhs);
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite ridge weights".into()));
    }
    Ok(w.iter().copied().collect())
}

/// `mean((pred - target)^2) / var(target)`, population variance.
pub fn nmse(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(Error::LengthMismatch {
            expected: target.len(),
            got: pred.len(),
        });
    }
    if target.is_empty() {
        return Err(Error::UndefinedMetric("empty target".into()));
    }
    let n = target.len() as f64;
    let mean = target.iter().sum::<f64>() / n;
    let var = target.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / n;
    if !(var > 0.0) {
        return Err(Error::UndefinedMetric("target has zero variance".into()));
    }
    let mse = pred.iter().zip(target).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / n;
    Ok(mse / var)
}

/// A trained readout. `weights` act on standardized features; the target
/// mean is carried separately as `intercept`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub nmse: f64,
    pub standardizer: Standardizer,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key: Option<BinaryKey>,
}

impl Response {
    pub fn predict(&self, features: &FeatureMatrix) -> Result<Vec<f64>> {
        let z = self.standardizer.apply(features)?;
        Ok((0..z.rows)
            .map(|r| self.intercept + z.row(r).iter().zip(&self.weights).map(|(a, b)| a * b).sum::<f64>())
            .collect())
    }
}

/// Fits the readout on one challenge and reports its training NMSE.
pub fn train(states: &StateMatrix, x_in: &[f64], y_out: &[f64], cfg: &RidgeConfig) -> Result<Response> {
    if y_out.len() != x_in.len() {
        return Err(Error::LengthMismatch {
            expected: x_in.len(),
            got: y_out.len(),
        });
    }
    let raw = build_features(states, x_in, cfg)?;
    let standardizer = if cfg.standardize {
        Standardizer::fit(&raw)
    } else {
        Standardizer::identity(raw.cols)
    };
    let z = standardizer.apply(&raw)?;
    let target = &y_out[cfg.washout..];
    let intercept = target.iter().sum::<f64>() / target.len() as f64;
    let centered: Vec<f64> = target.iter().map(|y| y - intercept).collect();
    let weights = ridge_fit(&z, &centered, cfg.lambda)?;
    let mut resp = Response {
        weights,
        intercept,
        nmse: f64::NAN,
        standardizer,
        key: None,
    };
    let pred = resp.predict(&raw)?;
    resp.nmse = nmse(&pred, target)?;
    Ok(resp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn states(n_symbols: usize, n_channels: usize, f: impl Fn(usize, usize) -> f64) -> StateMatrix {
        let mut samples = Vec::with_capacity(n_symbols * n_channels);
        for t in 0..n_symbols {
            for c in 0..n_channels {
                samples.push(f(t, c));
            }
        }
        StateMatrix {
            n_symbols,
            n_channels,
            samples,
            channel_map: (0..n_channels).map(|c| (0, c)).collect(),
            symbol_rate: 40e9,
            adc_bits: 16,
        }
    }

    fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> FeatureMatrix {
        FeatureMatrix {
            rows,
            cols,
            taps: 1,
            first_symbol: 0,
            data,
        }
    }

    fn random_matrix(seed: u64, rows: usize, cols: usize) -> FeatureMatrix {
        let mut rng = crate::seeds::rng(seed);
        matrix(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    /// Dense Gaussian elimination with partial pivoting.
    fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
        let n = b.len();
        for col in 0..n {
            let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
            a.swap(col, piv);
            b.swap(col, piv);
            for r in col + 1..n {
                let f = a[r][col] / a[col][col];
                for c in col..n {
                    a[r][c] -= f * a[col][c];
                }
                b[r] -= f * b[col];
            }
        }
        let mut x = vec![0.0; n];
        for r in (0..n).rev() {
            let s: f64 = (r + 1..n).map(|c| a[r][c] * x[c]).sum();
            x[r] = (b[r] - s) / a[r][r];
        }
        x
    }

    #[test]
    fn default_device_has_265_columns() {
        let s = states(100, 24, |t, c| (t * c) as f64);
        let f = build_features(&s, &vec![0.0; 100], &RidgeConfig::default()).unwrap();
        assert_eq!(f.cols, 265);
        assert_eq!(f.rows, 80);
        assert_eq!(RidgeConfig::default().weight_count(24), 265);
    }

    #[test]
    fn single_tap_single_channel() {
        let cfg = RidgeConfig {
            taps: 1,
            washout: 0,
            ..Default::default()
        };
        let s = states(5, 1, |t, _| t as f64);
        let f = build_features(&s, &[9.0; 5], &cfg).unwrap();
        assert_eq!(f.cols, 2);
        assert_eq!(f.row(3), &[3.0, 9.0]);
    }

    #[test]
    fn features_follow_index_pattern() {
        let cfg = RidgeConfig {
            taps: 4,
            washout: 5,
            ..Default::default()
        };
        let s = states(30, 3, |t, c| (c + t) as f64 + 1000.0 * c as f64);
        let x: Vec<f64> = (0..30).map(|t| -(t as f64)).collect();
        let f = build_features(&s, &x, &cfg).unwrap();
        for r in 0..f.rows {
            let t = r + 5;
            for c in 0..3 {
                for d in 0..4 {
                    assert_eq!(f.get(r, c * 4 + d), (c + t - d) as f64 + 1000.0 * c as f64);
                }
            }
            assert_eq!(f.get(r, 12), -(t as f64));
        }
    }

    #[test]
    fn length_mismatch_rejected() {
        let s = states(50, 2, |_, _| 0.0);
        assert!(matches!(
            build_features(&s, &[0.0; 49], &RidgeConfig::default()),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn identity_fit_returns_targets() {
        let mut data = vec![0.0; 25];
        for i in 0..5 {
            data[i * 6] = 1.0;
        }
        let y = [1.0, -2.0, 3.5, 0.0, 7.0];
        let w = ridge_fit(&matrix(5, 5, data), &y, 0.0).unwrap();
        for (a, b) in w.iter().zip(&y) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn huge_lambda_shrinks_to_zero() {
        let f = random_matrix(1, 50, 10);
        let y: Vec<f64> = (0..50).map(|i| (i as f64 * 0.3).sin()).collect();
        let w = ridge_fit(&f, &y, 1e12).unwrap();
        assert!(w.iter().map(|v| v * v).sum::<f64>().sqrt() < 1e-6);
    }

    #[test]
    fn singular_system_needs_regularization() {
        let f = matrix(3, 2, vec![1.0, 1.0, 2.0, 2.0, 3.0, 3.0]);
        assert!(matches!(ridge_fit(&f, &[1.0, 2.0, 3.0], 0.0), Err(Error::Numerical(_))));
        assert!(ridge_fit(&f, &[1.0, 2.0, 3.0], 1e-3).is_ok());
    }

    #[test]
    fn matches_dense_normal_equation_solve() {
        let f = random_matrix(2, 50, 10);
        let mut rng = crate::seeds::rng(3);
        let y: Vec<f64> = (0..50).map(|_| rng.random_range(-1.0..1.0)).collect();
        let lambda = 0.37;
        let mut a = vec![vec![0.0; 10]; 10];
        let mut b = vec![0.0; 10];
        for r in 0..50 {
            for i in 0..10 {
                b[i] += f.get(r, i) * y[r];
                for j in 0..10 {
                    a[i][j] += f.get(r, i) * f.get(r, j);
                }
            }
        }
        for (i, row) in a.iter_mut().enumerate() {
            row[i] += lambda;
        }
        let want = gauss_solve(a, b);
        let got = ridge_fit(&f, &y, lambda).unwrap();
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-8, "{g} vs {w}");
        }
    }

    #[test]
    fn nmse_reference_points() {
        let t = [1.0, 2.0, 4.0, 7.0];
        assert_eq!(nmse(&t, &t).unwrap(), 0.0);
        assert!((nmse(&[3.5; 4], &t).unwrap() - 1.0).abs() < 1e-12);
        assert!(matches!(nmse(&[1.0; 3], &[2.0; 3]), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn training_is_deterministic_and_recovers_linear_targets() {
        let s = states(200, 3, |t, c| ((t * (c + 2)) as f64 * 0.37).sin());
        let x: Vec<f64> = (0..200).map(|t| (t as f64 * 0.11).cos()).collect();
        let y: Vec<f64> = (0..200)
            .map(|t| if t >= 1 { 0.5 * s.get(t, 0) - 2.0 * s.get(t - 1, 2) + 0.25 * x[t] + 3.0 } else { 0.0 })
            .collect();
        let cfg = RidgeConfig {
            lambda: 0.0,
            taps: 2,
            washout: 4,
            ..Default::default()
        };
        let a = train(&s, &x, &y, &cfg).unwrap();
        let b = train(&s, &x, &y, &cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.nmse < 1e-16, "{}", a.nmse);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn exact_linear_recovery(seed in any::<u64>()) {
            let f = random_matrix(seed, 40, 6);
            let mut rng = crate::seeds::rng(seed ^ 1);
            let w: Vec<f64> = (0..6).map(|_| rng.random_range(-3.0..3.0)).collect();
            let y: Vec<f64> = (0..40).map(|r| f.row(r).iter().zip(&w).map(|(a, b)| a * b).sum()).collect();
            let got = ridge_fit(&f, &y, 0.0).unwrap();
            for r in 0..40 {
                let p: f64 = f.row(r).iter().zip(&got).map(|(a, b)| a * b).sum();
                prop_assert!((p - y[r]).abs() < 1e-8);
            }
        }

        #[test]
        fn shrinkage_is_monotone(seed in any::<u64>(), l1 in 1e-6f64..10.0, factor in 1.01f64..100.0) {
            let f = random_matrix(seed, 30, 8);
            let mut rng = crate::seeds::rng(seed ^ 2);
            let y: Vec<f64> = (0..30).map(|_| rng.random_range(-1.0..1.0)).collect();
            let norm = |w: Vec<f64>| w.iter().map(|v| v * v).sum::<f64>();
            let a = norm(ridge_fit(&f, &y, l1).unwrap());
            let b = norm(ridge_fit(&f, &y, l1 * factor).unwrap());
            prop_assert!(a >= b - 1e-12);
        }
    }
}
