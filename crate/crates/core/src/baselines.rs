//! Comparison reconstructions: the maximum-amplitude feature (Amp-CT) and a
//! degree-2 polynomial ridge regression per detector position (ML-CT).

use std::str::FromStr;

use rayon::prelude::*;

use crate::dlct::Scalar;
use crate::error::{Error, Result};
use crate::radon::{reconstruct_normalized, CrossSection, FilterWindow, Sinogram};
use crate::sim::ScanVolume;
use crate::tensor::{entry, Tensor};

/// Peak amplitude of the reference pulse (the simulator normalizes it to 1).
pub const REFERENCE_PEAK: f64 = 1.0;
/// Amplitudes are floored at this fraction of the reference before the log.
pub const AMP_FLOOR: f64 = 1e-4;

pub const DEFAULT_LAMBDA: f64 = 1e-3;
pub const CG_TOLERANCE: f64 = 1e-8;
pub const CG_MAX_ITER: usize = 5000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum AmpMode {
    #[default]
    NegLog,
    Raw,
}

impl FromStr for AmpMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "neg-log" | "neglog" => Ok(AmpMode::NegLog),
            "raw" => Ok(AmpMode::Raw),
            other => Err(Error::validation(format!("unknown amplitude mode {other:?}"))),
        }
    }
}

fn check_frame(frame: &[f32], width: usize, n_time: usize) -> Result<()> {
    if frame.len() != width * n_time || n_time == 0 {
        return Err(Error::validation(format!(
            "frame has {} samples, expected {width}×{n_time}",
            frame.len()
        )));
    }
    Ok(())
}

/// Per-position peak magnitude, mapped to a projection value.
pub fn ampct_row(frame: &[f32], width: usize, n_time: usize, mode: AmpMode) -> Result<Vec<f64>> {
    check_frame(frame, width, n_time)?;
    Ok(frame
        .chunks_exact(n_time)
        .map(|trace| {
            let m = trace.iter().fold(0.0f64, |m, &v| m.max(f64::from(v).abs()));
            match mode {
                AmpMode::Raw => m,
                AmpMode::NegLog => {
                    let m = m.max(AMP_FLOOR * REFERENCE_PEAK);
                    (-(m / REFERENCE_PEAK).ln()).max(0.0)
                }
            }
        })
        .collect())
}

/// Stacks per-angle rows and scales the sinogram to unit maximum (an
/// all-zero sinogram stays zero).
fn stack_rows(scan: &ScanVolume, rows: Vec<Vec<f64>>, rescale: bool) -> Result<Sinogram> {
    let cfg = &scan.config;
    let mut data: Vec<f64> = rows.into_iter().flatten().collect();
    if rescale {
        let max = data.iter().fold(0.0f64, |m, &v| m.max(v));
        if max > 0.0 {
            data.iter_mut().for_each(|v| *v /= max);
        }
    }
    Sinogram::new(cfg.width, cfg.angles_deg(), cfg.pitch_mm, data)
}

/// Normalized Amp-CT sinogram of a scan.
pub fn ampct_sinogram(scan: &ScanVolume, mode: AmpMode) -> Result<Sinogram> {
    let cfg = &scan.config;
    let rows = (0..cfg.n_angles)
        .map(|k| ampct_row(scan.frame(k), cfg.width, cfg.n_time, mode))
        .collect::<Result<Vec<_>>>()?;
    stack_rows(scan, rows, true)
}

pub fn ampct_reconstruct(scan: &ScanVolume, mode: AmpMode, window: FilterWindow) -> Result<CrossSection> {
    reconstruct_normalized(&ampct_sinogram(scan, mode)?, window)
}

/// `concat(trace, trace²)`.
pub fn poly_features(trace: &[f32]) -> Vec<f64> {
    let mut x: Vec<f64> = trace.iter().map(|&v| f64::from(v)).collect();
    x.extend(trace.iter().map(|&v| f64::from(v) * f64::from(v)));
    x
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub lambda: f64,
}

impl MlModel {
    pub fn n_time(&self) -> usize {
        self.weights.len() / 2
    }

    pub fn predict_trace(&self, trace: &[f32]) -> f64 {
        let n = self.n_time();
        let mut y = self.bias;
        for (t, &v) in trace.iter().enumerate() {
            let v = f64::from(v);
            y += self.weights[t] * v + self.weights[n + t] * v * v;
        }
        y.max(0.0)
    }

    pub fn to_entries(&self) -> Vec<(String, Tensor)> {
        vec![
            (
                "w".into(),
                Tensor::from_f64(vec![self.weights.len()], self.weights.clone()).expect("shape"),
            ),
            ("b".into(), Tensor::from_f64(vec![1], vec![self.bias]).expect("shape")),
            ("lambda".into(), Tensor::from_f64(vec![1], vec![self.lambda]).expect("shape")),
        ]
    }

    pub fn from_entries(entries: &[(String, Tensor)]) -> Result<Self> {
        let w = entry(entries, "w")?;
        if w.rank() != 1 || w.len() % 2 != 0 || w.is_empty() {
            return Err(Error::Format(format!("w has shape {:?}, expected (2·n_time,)", w.shape())));
        }
        let scalar = |name: &str| -> Result<f64> {
            let t = entry(entries, name)?;
            if t.len() != 1 {
                return Err(Error::Format(format!("{name} must hold one value")));
            }
            Ok(t.to_f64_vec()[0])
        };
        let model = Self {
            weights: w.to_f64_vec(),
            bias: scalar("b")?,
            lambda: scalar("lambda")?,
        };
        if !model.weights.iter().all(|v| v.is_finite()) || !model.bias.is_finite() {
            return Err(Error::Format("ML model holds non-finite weights".into()));
        }
        if !(model.lambda >= 0.0) {
            return Err(Error::Format(format!("lambda {} must be ≥ 0", model.lambda)));
        }
        Ok(model)
    }
}

/// Sufficient statistics of a ridge problem: feature sums, `XᵀX`, `Xᵀy`.
/// Accumulators over disjoint sample sets merge exactly, so leave-one-out
/// folds can reuse per-phantom partial sums.
#[derive(Clone, Debug, PartialEq)]
pub struct GramAccumulator {
    dim: usize,
    count: usize,
    sum_x: Vec<f64>,
    sum_y: f64,
    xtx: Vec<f64>,
    xty: Vec<f64>,
}

impl GramAccumulator {
    pub fn new(n_time: usize) -> Self {
        let dim = 2 * n_time;
        Self {
            dim,
            count: 0,
            sum_x: vec![0.0; dim],
            sum_y: 0.0,
            xtx: vec![0.0; dim * dim],
            xty: vec![0.0; dim],
        }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// Adds a batch of `(trace, target)` samples.
    pub fn add_batch(&mut self, samples: &[(&[f32], f64)]) -> Result<()> {
        let d = self.dim;
        let n_time = d / 2;
        if samples.is_empty() {
            return Ok(());
        }
        let mut x = Vec::with_capacity(samples.len() * d);
        for (k, (trace, y)) in samples.iter().enumerate() {
            if trace.len() != n_time {
                return Err(Error::validation(format!(
                    "sample {k} has {} time samples, expected {n_time}",
                    trace.len()
                )));
            }
            if !y.is_finite() {
                return Err(Error::validation(format!("sample {k} has a non-finite target")));
            }
            x.extend(poly_features(trace));
        }
        let n = samples.len();
        // XᵀX (d × d) += Xᵀ (d × n) · X (n × d)
        f64::gemm(d, n, d, &x, (1, d), &x, (d, 1), 1.0, &mut self.xtx, d);
        for (row, (_, y)) in x.chunks_exact(d).zip(samples) {
            for j in 0..d {
                self.sum_x[j] += row[j];
                self.xty[j] += row[j] * y;
            }
            self.sum_y += y;
        }
        self.count += n;
        Ok(())
    }

    pub fn merge(&mut self, other: &GramAccumulator) -> Result<()> {
        if other.dim != self.dim {
            return Err(Error::validation("cannot merge accumulators of different size"));
        }
        self.count += other.count;
        self.sum_y += other.sum_y;
        for (a, b) in self.sum_x.iter_mut().zip(&other.sum_x) {
            *a += b;
        }
        for (a, b) in self.xty.iter_mut().zip(&other.xty) {
            *a += b;
        }
        for (a, b) in self.xtx.iter_mut().zip(&other.xtx) {
            *a += b;
        }
        Ok(())
    }
}

/// Jacobi-preconditioned conjugate gradient for the symmetric positive
/// (semi)definite system `A x = b`. Converged when `|r| ≤ tol·|b|`.
pub fn conjugate_gradient(
    a: &[f64],
    b: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, usize)> {
    let n = b.len();
    if a.len() != n * n {
        return Err(Error::validation("matrix and right-hand side sizes differ"));
    }
    let matvec = |v: &[f64], out: &mut [f64]| {
        out.par_iter_mut()
            .enumerate()
            .for_each(|(i, o)| *o = crate::dlct::kernels::dot(&a[i * n..(i + 1) * n], v));
    };
    let b_norm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut x = vec![0.0; n];
    if b_norm == 0.0 {
        return Ok((x, 0));
    }
    let inv_diag: Vec<f64> = (0..n)
        .map(|i| {
            let d = a[i * n + i];
            if d > 0.0 {
                1.0 / d
            } else {
                1.0
            }
        })
        .collect();
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(r, m)| r * m).collect();
    let mut p = z.clone();
    let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
    let mut ap = vec![0.0; n];
    for iter in 1..=max_iter {
        matvec(&p, &mut ap);
        let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        if !(pap > 0.0) {
            let res = r.iter().map(|v| v * v).sum::<f64>().sqrt() / b_norm;
            return Err(Error::Numeric {
                message: "conjugate gradient met a non-positive curvature direction".into(),
                residual: res,
            });
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let res = r.iter().map(|v| v * v).sum::<f64>().sqrt() / b_norm;
        if res <= tol {
            return Ok((x, iter));
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    let res = r.iter().map(|v| v * v).sum::<f64>().sqrt() / b_norm;
    Err(Error::Numeric {
        message: format!("conjugate gradient did not converge in {max_iter} iterations"),
        residual: res,
    })
}

/// Ridge solution with an unregularized bias, from centered statistics:
/// `(XcᵀXc + λI) w = Xcᵀyc`, `b = ȳ − x̄ᵀw`.
pub fn mlct_fit_gram(acc: &GramAccumulator, lambda: f64) -> Result<MlModel> {
    if acc.count == 0 {
        return Err(Error::validation("ML-CT needs at least one sample"));
    }
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::validation(format!("lambda must be ≥ 0, got {lambda}")));
    }
    let d = acc.dim;
    let n = acc.count as f64;
    let mean_x: Vec<f64> = acc.sum_x.iter().map(|s| s / n).collect();
    let mean_y = acc.sum_y / n;
    let mut a = acc.xtx.clone();
    for i in 0..d {
        for j in 0..d {
            a[i * d + j] -= n * mean_x[i] * mean_x[j];
        }
        a[i * d + i] += lambda;
    }
    let rhs: Vec<f64> = (0..d).map(|i| acc.xty[i] - n * mean_x[i] * mean_y).collect();
    let (weights, _) = conjugate_gradient(&a, &rhs, CG_TOLERANCE, CG_MAX_ITER)?;
    let bias = mean_y - weights.iter().zip(&mean_x).map(|(w, m)| w * m).sum::<f64>();
    Ok(MlModel { weights, bias, lambda })
}

/// Fits the shared per-position regressor to `(trace, target)` samples.
pub fn mlct_fit(samples: &[(&[f32], f64)], lambda: f64) -> Result<MlModel> {
    let first = samples
        .first()
        .ok_or_else(|| Error::validation("ML-CT needs at least one sample"))?;
    let mut acc = GramAccumulator::new(first.0.len());
    acc.add_batch(samples)?;
    mlct_fit_gram(&acc, lambda)
}

/// Per-position prediction for one frame, clipped at zero.
pub fn mlct_predict(model: &MlModel, frame: &[f32], width: usize) -> Result<Vec<f64>> {
    let n_time = model.n_time();
    check_frame(frame, width, n_time)?;
    Ok(frame.chunks_exact(n_time).map(|t| model.predict_trace(t)).collect())
}

/// Normalized sinogram predicted from a scan, in angle order.
pub fn mlct_sinogram(model: &MlModel, scan: &ScanVolume) -> Result<Sinogram> {
    let cfg = &scan.config;
    let rows = (0..cfg.n_angles)
        .map(|k| mlct_predict(model, scan.frame(k), cfg.width))
        .collect::<Result<Vec<_>>>()?;
    stack_rows(scan, rows, false)
}

pub fn mlct_reconstruct(model: &MlModel, scan: &ScanVolume, window: FilterWindow) -> Result<CrossSection> {
    reconstruct_normalized(&mlct_sinogram(model, scan)?, window)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn ampct_row_examples() {
        let n = 8;
        let mut frame = vec![0.0f32; 3 * n];
        frame[2] = 1.0;
        frame[n + 5] = -0.8;
        let row = ampct_row(&frame, 3, n, AmpMode::NegLog).unwrap();
        assert_eq!(row[0], 0.0);
        assert!((row[1] - 0.8f64.ln().abs()).abs() < 1e-6);
        assert!((row[2] - 9.210340).abs() < 1e-5);
        let raw = ampct_row(&frame, 3, n, AmpMode::Raw).unwrap();
        assert!((raw[1] - 0.8).abs() < 1e-7);
        assert!(ampct_row(&frame, 4, n, AmpMode::Raw).is_err());
    }

    proptest! {
        #[test]
        fn ampct_ignores_time_shifts(vals in prop::collection::vec(-1.0f32..1.0, 16), shift in 0usize..16) {
            let mut shifted = vals.clone();
            shifted.rotate_right(shift);
            let a = ampct_row(&vals, 1, 16, AmpMode::NegLog).unwrap();
            let b = ampct_row(&shifted, 1, 16, AmpMode::NegLog).unwrap();
            prop_assert_eq!(a, b);
        }
    }

    fn random_traces(n: usize, n_time: usize, seed: u64) -> Vec<Vec<f32>> {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| (0..n_time).map(|_| r.random_range(-1.0f32..1.0)).collect())
            .collect()
    }

    #[test]
    fn zero_targets_give_zero_model() {
        let traces = random_traces(40, 6, 1);
        let samples: Vec<(&[f32], f64)> = traces.iter().map(|t| (&t[..], 0.0)).collect();
        let m = mlct_fit(&samples, 1e-3).unwrap();
        assert!(m.weights.iter().all(|&w| w == 0.0));
        assert_eq!(m.bias, 0.0);
    }

    #[test]
    fn consistent_system_is_recovered() {
        let n_time = 6;
        let traces = random_traces(200, n_time, 2);
        let mut r = ChaCha8Rng::seed_from_u64(3);
        let w: Vec<f64> = (0..2 * n_time).map(|_| r.random_range(-1.0..1.0)).collect();
        let b = 0.7;
        let targets: Vec<f64> = traces
            .iter()
            .map(|t| b + poly_features(t).iter().zip(&w).map(|(x, w)| x * w).sum::<f64>())
            .collect();
        let samples: Vec<(&[f32], f64)> = traces.iter().zip(&targets).map(|(t, &y)| (&t[..], y)).collect();
        let m = mlct_fit(&samples, 1e-10).unwrap();
        for (got, want) in m.weights.iter().zip(&w) {
            assert!((got - want).abs() <= 1e-4 * want.abs().max(1e-3), "{got} vs {want}");
        }
        assert!((m.bias - b).abs() < 1e-4);
    }

    #[test]
    fn larger_lambda_never_grows_weights() {
        let traces = random_traces(80, 5, 4);
        let samples: Vec<(&[f32], f64)> = traces
            .iter()
            .map(|t| (&t[..], f64::from(t[0]) * 2.0 + f64::from(t[3]).powi(2)))
            .collect();
        let mut prev = f64::INFINITY;
        for lambda in [1e-3, 2e-3, 4e-3, 1.0, 2.0, 100.0, 200.0] {
            let m = mlct_fit(&samples, lambda).unwrap();
            let norm: f64 = m.weights.iter().map(|w| w * w).sum();
            assert!(norm <= prev + 1e-12, "lambda {lambda}: {norm} > {prev}");
            prev = norm;
        }
    }

    #[test]
    fn fit_beats_constant_predictor() {
        let traces = random_traces(300, 8, 5);
        let targets: Vec<f64> = traces
            .iter()
            .map(|t| (1.0 + f64::from(t[2]) - 0.5 * f64::from(t[5]).powi(2)).max(0.0))
            .collect();
        let samples: Vec<(&[f32], f64)> = traces.iter().zip(&targets).map(|(t, &y)| (&t[..], y)).collect();
        let m = mlct_fit(&samples, DEFAULT_LAMBDA).unwrap();
        let mean = targets.iter().sum::<f64>() / targets.len() as f64;
        let mse_const = targets.iter().map(|y| (y - mean).powi(2)).sum::<f64>();
        let mse_fit = traces
            .iter()
            .zip(&targets)
            .map(|(t, y)| (m.predict_trace(t) - y).powi(2))
            .sum::<f64>();
        assert!(mse_fit < mse_const);
    }

    #[test]
    fn merged_partial_sums_equal_joint_fit() {
        let traces = random_traces(60, 4, 6);
        let samples: Vec<(&[f32], f64)> = traces.iter().map(|t| (&t[..], f64::from(t[1]).abs())).collect();
        let mut a = GramAccumulator::new(4);
        a.add_batch(&samples[..25]).unwrap();
        let mut b = GramAccumulator::new(4);
        b.add_batch(&samples[25..]).unwrap();
        a.merge(&b).unwrap();
        let joint = mlct_fit(&samples, 1e-3).unwrap();
        let merged = mlct_fit_gram(&a, 1e-3).unwrap();
        for (x, y) in joint.weights.iter().zip(&merged.weights) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn prediction_is_pointwise_and_checks_length() {
        let zero = MlModel {
            weights: vec![0.0; 8],
            bias: 0.0,
            lambda: 1.0,
        };
        assert_eq!(mlct_predict(&zero, &[0.5; 12], 3).unwrap(), vec![0.0; 3]);
        assert!(mlct_predict(&zero, &[0.5; 10], 3).is_err());
        let m = MlModel {
            weights: vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 2.0],
            bias: 0.1,
            lambda: 1.0,
        };
        let frame = [1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0];
        let row = mlct_predict(&m, &frame, 3).unwrap();
        let mut swapped = frame;
        swapped.rotate_left(4);
        let row2 = mlct_predict(&m, &swapped, 3).unwrap();
        assert_eq!(row2, vec![row[1], row[2], row[0]]);
        assert!((row[0] - 3.1).abs() < 1e-12);
    }

    #[test]
    fn checkpoint_entries_roundtrip() {
        let m = MlModel {
            weights: vec![0.5, -1.0, 2.0, 0.25],
            bias: -0.3,
            lambda: 1e-3,
        };
        let entries = m.to_entries();
        let names: Vec<&str> = entries.iter().map(|(n, _)| n.as_str()).collect();
        assert_eq!(names, ["w", "b", "lambda"]);
        assert_eq!(MlModel::from_entries(&entries).unwrap(), m);
    }

    #[test]
    fn cg_reports_non_convergence() {
        let a = [4.0, 1.0, 1.0, 3.0];
        let (x, _) = conjugate_gradient(&a, &[1.0, 2.0], 1e-12, 10).unwrap();
        assert!((4.0 * x[0] + x[1] - 1.0).abs() < 1e-10);
        let big: Vec<f64> = (0..100)
            .flat_map(|i| (0..100).map(move |j| if i == j { 1.0 + i as f64 * 100.0 } else { 0.5 }))
            .collect();
        let err = conjugate_gradient(&big, &vec![1.0; 100], 1e-14, 1).unwrap_err();
        assert!(matches!(err, Error::Numeric { residual, .. } if residual > 0.0));
    }
}
