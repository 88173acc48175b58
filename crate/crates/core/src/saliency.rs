//! Input-gradient saliency of the row model.

use crate::dlct::{backward, forward, Mode, ModelParams, Scalar};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct SaliencyMap {
    pub width: usize,
    pub n_time: usize,
    /// `width × n_time`, time fastest, in `[0, 1]`.
    pub data: Vec<f64>,
    /// Free-form description of the input frame.
    pub frame_ref: String,
}

impl SaliencyMap {
    pub fn tensor(&self) -> Tensor {
        Tensor::from_f32(
            vec![self.width, self.n_time],
            self.data.iter().map(|&v| v as f32).collect(),
        )
        .expect("shape")
    }

    /// Sum over detector positions.
    pub fn time_marginal(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.n_time];
        for row in self.data.chunks_exact(self.n_time) {
            for (a, v) in m.iter_mut().zip(row) {
                *a += v;
            }
        }
        m
    }
}

/// Absolute values scaled so the maximum is 1; an all-zero input stays zero.
pub fn normalize(values: &[f64]) -> Vec<f64> {
    let max = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if max > 0.0 {
        values.iter().map(|v| v.abs() / max).collect()
    } else {
        vec![0.0; values.len()]
    }
}

/// `|∂J/∂frame|` for `J = Σ_s row[s]`, evaluated in eval mode.
pub fn input_gradient<T: Scalar>(params: &ModelParams<T>, frame: &[T]) -> Result<Vec<f64>> {
    let (row, cache) = forward(params, frame, Mode::Eval)?;
    let ones = vec![T::one(); row.len()];
    let (_, g) = backward(params, &cache, &ones)?;
    Ok(g.iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).collect())
}

pub fn saliency_map<T: Scalar>(
    params: &ModelParams<T>,
    frame: &[T],
    frame_ref: &str,
) -> Result<SaliencyMap> {
    let g = input_gradient(params, frame)?;
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric {
            message: "non-finite input gradient".into(),
            residual: f64::NAN,
        });
    }
    let spec = params.spec();
    Ok(SaliencyMap {
        width: spec.width,
        n_time: spec.n_time,
        data: normalize(&g),
        frame_ref: frame_ref.to_string(),
    })
}

/// Standard deviation, in ps, of the time coordinate weighted by the map.
pub fn temporal_spread(map: &SaliencyMap, dt_ps: f64) -> Result<f64> {
    if map.data.iter().any(|&v| v < 0.0 || !v.is_finite()) {
        return Err(Error::validation("saliency map must be finite and non-negative"));
    }
    let m = map.time_marginal();
    let total: f64 = m.iter().sum();
    if total <= 0.0 {
        return Err(Error::Undefined("temporal spread of an all-zero map".into()));
    }
    let mean = m.iter().enumerate().map(|(t, w)| t as f64 * w).sum::<f64>() / total;
    let var = m
        .iter()
        .enumerate()
        .map(|(t, w)| (t as f64 - mean).powi(2) * w)
        .sum::<f64>()
        / total;
    Ok(var.sqrt() * dt_ps)
}

/// Analytic input gradient at one frame sample next to its finite-difference
/// estimates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FdSample {
    pub index: usize,
    pub analytic: f64,
    pub central: f64,
    pub forward: f64,
    pub backward: f64,
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

impl FdSample {
    pub fn rel_error(&self) -> f64 {
        rel(self.analytic, self.central)
    }

    /// One-sided differences disagree: a ReLU or max-pool switch lies within
    /// `±h`, so the central difference is not a derivative estimate there.
    pub fn straddles_kink(&self, tol: f64) -> bool {
        rel(self.forward, self.backward) > tol
    }
}

/// Compares `∂J/∂frame` with differences of `J = Σ row` at `indices`.
pub fn finite_difference_check(
    params: &ModelParams<f64>,
    frame: &[f64],
    indices: &[usize],
    h: f64,
) -> Result<Vec<FdSample>> {
    let grad = input_gradient(params, frame)?;
    let objective = |f: &[f64]| -> Result<f64> {
        let (row, _) = forward(params, f, Mode::Eval)?;
        Ok(row.iter().sum())
    };
    let f0 = objective(frame)?;
    let mut x = frame.to_vec();
    indices
        .iter()
        .map(|&i| {
            let v = frame[i];
            x[i] = v + h;
            let fp = objective(&x)?;
            x[i] = v - h;
            let fm = objective(&x)?;
            x[i] = v;
            Ok(FdSample {
                index: i,
                analytic: grad[i],
                central: (fp - fm) / (2.0 * h),
                forward: (fp - f0) / h,
                backward: (f0 - fm) / h,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(width: usize, n_time: usize, data: Vec<f64>) -> SaliencyMap {
        SaliencyMap {
            width,
            n_time,
            data,
            frame_ref: String::new(),
        }
    }

    #[test]
    fn spread_of_uniform_map() {
        let m = map(2, 512, vec![1.0; 1024]);
        let s = temporal_spread(&m, 0.2).unwrap();
        // discrete uniform: dt·√((n²−1)/12)
        let exact = 0.2 * ((512.0f64 * 512.0 - 1.0) / 12.0).sqrt();
        assert!((s - exact).abs() < 1e-9);
        assert!((s - 29.56).abs() < 0.01);
    }

    #[test]
    fn spread_of_two_columns_and_point_mass() {
        let mut data = vec![0.0; 200];
        data[50] = 1.0;
        data[150] = 1.0;
        assert!((temporal_spread(&map(1, 200, data), 0.2).unwrap() - 10.0).abs() < 1e-9);
        let mut point = vec![0.0; 3 * 16];
        for s in 0..3 {
            point[s * 16 + 7] = 0.4;
        }
        assert!(temporal_spread(&map(3, 16, point), 0.2).unwrap() < 1e-12);
    }

    #[test]
    fn spread_of_zero_map_is_undefined() {
        let err = temporal_spread(&map(2, 4, vec![0.0; 8]), 0.2).unwrap_err();
        assert!(matches!(err, Error::Undefined(_)));
        assert!(temporal_spread(&map(1, 2, vec![-1.0, 1.0]), 0.2).is_err());
    }

    #[test]
    fn normalize_is_idempotent() {
        let v = [0.5, -2.0, 1.0, 0.0];
        let n = normalize(&v);
        assert_eq!(n, vec![0.25, 1.0, 0.5, 0.0]);
        assert_eq!(normalize(&n), n);
        assert_eq!(normalize(&[0.0, 0.0]), vec![0.0, 0.0]);
    }

    #[test]
    fn linear_gradient_normalizes_to_weight_profile() {
        // row[s] = Σ_t w_t·frame[s,t] has ∂J/∂frame[s,t] = w_t
        let w = [0.5, -1.0, 0.25];
        let grad: Vec<f64> = (0..4).flat_map(|_| w).collect();
        let n = normalize(&grad);
        for s in 0..4 {
            assert_eq!(&n[s * 3..s * 3 + 3], &[0.5, 1.0, 0.25]);
        }
    }
}
