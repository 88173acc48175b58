//! Parallel-beam Radon transform and filtered backprojection.
//!
//! Angle `θ` projects along `d = (−sin θ, cos θ)`, so 0° integrates along the
//! image y axis; detector offsets run along `e = (cos θ, sin θ)` and detector
//! `k` sits at `s = (k − (W−1)/2)·pitch`. This matches the ray geometry of
//! [`crate::sim::trace_ray`].

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::sim::detector_offset;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct CrossSection {
    pub width: usize,
    pub pitch_mm: f64,
    pub data: Vec<f64>,
}

impl CrossSection {
    pub fn new(width: usize, pitch_mm: f64, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * width {
            return Err(Error::validation(format!(
                "cross-section needs {w}x{w} values, got {}",
                data.len(),
                w = width
            )));
        }
        Ok(Self {
            width,
            pitch_mm,
            data,
        })
    }

    pub fn zeros(width: usize, pitch_mm: f64) -> Self {
        Self {
            width,
            pitch_mm,
            data: vec![0.0; width * width],
        }
    }

    pub fn from_tensor(t: &Tensor, pitch_mm: f64) -> Result<Self> {
        let shape = t.shape();
        if shape.len() != 2 || shape[0] != shape[1] {
            return Err(Error::validation(format!(
                "cross-section must be square, got shape {shape:?}"
            )));
        }
        Self::new(shape[0], pitch_mm, t.to_f64_vec())
    }

    pub fn tensor(&self) -> Tensor {
        Tensor::from_f32(
            vec![self.width, self.width],
            self.data.iter().map(|&v| v as f32).collect(),
        )
        .unwrap()
    }

    /// Bilinear sample at continuous pixel coordinates; zero outside.
    fn sample(&self, row: f64, col: f64) -> f64 {
        let w = self.width as isize;
        let r0 = row.floor();
        let c0 = col.floor();
        let fr = row - r0;
        let fc = col - c0;
        let (r0, c0) = (r0 as isize, c0 as isize);
        let at = |r: isize, c: isize| -> f64 {
            if r < 0 || c < 0 || r >= w || c >= w {
                0.0
            } else {
                self.data[(r * w + c) as usize]
            }
        };
        (1.0 - fr) * ((1.0 - fc) * at(r0, c0) + fc * at(r0, c0 + 1))
            + fr * ((1.0 - fc) * at(r0 + 1, c0) + fc * at(r0 + 1, c0 + 1))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sinogram {
    pub width: usize,
    pub angles_deg: Vec<f64>,
    pub pitch_mm: f64,
    /// `n_angles × width`, row-major.
    pub data: Vec<f64>,
}

impl Sinogram {
    pub fn new(width: usize, angles_deg: Vec<f64>, pitch_mm: f64, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * angles_deg.len() {
            return Err(Error::validation(format!(
                "sinogram needs {} x {width} values, got {}",
                angles_deg.len(),
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("sinogram contains non-finite values"));
        }
        Ok(Self {
            width,
            angles_deg,
            pitch_mm,
            data,
        })
    }

    pub fn n_angles(&self) -> usize {
        self.angles_deg.len()
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.data[k * self.width..(k + 1) * self.width]
    }

    pub fn tensor(&self) -> Tensor {
        Tensor::from_f32(
            vec![self.n_angles(), self.width],
            self.data.iter().map(|&v| v as f32).collect(),
        )
        .unwrap()
    }

    pub fn from_tensor(t: &Tensor, angles_deg: Vec<f64>, pitch_mm: f64) -> Result<Self> {
        let shape = t.shape();
        if shape.len() != 2 || shape[0] != angles_deg.len() {
            return Err(Error::validation(format!(
                "sinogram tensor shape {shape:?} does not match {} angles",
                angles_deg.len()
            )));
        }
        Self::new(shape[1], angles_deg, pitch_mm, t.to_f64_vec())
    }

    /// Scale that maps physical line integrals (value·mm) into `[0, 1]`:
    /// the detector span `width · pitch_mm`.
    pub fn normalization(&self) -> f64 {
        self.width as f64 * self.pitch_mm
    }

    pub fn normalized(&self) -> Self {
        let scale = 1.0 / self.normalization();
        self.scaled(scale)
    }

    pub fn denormalized(&self) -> Self {
        self.scaled(self.normalization())
    }

    fn scaled(&self, factor: f64) -> Self {
        Self {
            data: self.data.iter().map(|v| v * factor).collect(),
            ..self.clone()
        }
    }
}

pub fn radon(img: &CrossSection, angles_deg: &[f64]) -> Sinogram {
    let w = img.width;
    let pitch = img.pitch_mm;
    let step = pitch / 2.0;
    let half_len = (w as f64 / std::f64::consts::SQRT_2).ceil() * pitch;
    let n_steps = (2.0 * half_len / step).round() as usize;
    let centre = w as f64 / 2.0 - 0.5;
    let mut data = Vec::with_capacity(angles_deg.len() * w);
    for &angle in angles_deg {
        let (sin, cos) = angle.to_radians().sin_cos();
        for k in 0..w {
            let s = detector_offset(k, w, pitch);
            let mut acc = 0.0;
            for j in 0..n_steps {
                let l = -half_len + (j as f64 + 0.5) * step;
                let x = s * cos - l * sin;
                let y = s * sin + l * cos;
                acc += img.sample(centre - y / pitch, x / pitch + centre);
            }
            data.push(acc * step);
        }
    }
    Sinogram {
        width: w,
        angles_deg: angles_deg.to_vec(),
        pitch_mm: pitch,
        data,
    }
}

pub fn radon_checked(img: &CrossSection, angles_deg: &[f64]) -> Result<Sinogram> {
    if img.data.len() != img.width * img.width {
        return Err(Error::validation("radon input must be square"));
    }
    Ok(radon(img, angles_deg))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum FilterWindow {
    RamLak,
    #[default]
    Hann,
}

impl std::str::FromStr for FilterWindow {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ram-lak" | "ramlak" => Ok(FilterWindow::RamLak),
            "hann" => Ok(FilterWindow::Hann),
            other => Err(Error::validation(format!("unknown filter window {other:?}"))),
        }
    }
}

/// Frequency response and FFT plans for one padded row length.
pub struct RampFilter {
    len: usize,
    padded: usize,
    response: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl RampFilter {
    pub fn new(len: usize, window: FilterWindow) -> Self {
        let padded = 2 * len.max(2).next_power_of_two();
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(padded);
        let inverse = planner.plan_fft_inverse(padded);
        // band-limited ramp built in the spatial domain, then transformed
        let mut kernel = vec![Complex::new(0.0, 0.0); padded];
        kernel[0].re = 0.25;
        for (i, k) in kernel.iter_mut().enumerate().skip(1) {
            let n = i.min(padded - i);
            if n % 2 == 1 {
                k.re = -1.0 / (PI * n as f64).powi(2);
            }
        }
        forward.process(&mut kernel);
        let mut response: Vec<f64> = kernel.iter().map(|c| 2.0 * c.re).collect();
        response[0] = 0.0;
        if window == FilterWindow::Hann {
            for (i, r) in response.iter_mut().enumerate() {
                let f = i.min(padded - i) as f64 / padded as f64;
                *r *= 0.5 * (1.0 + (2.0 * PI * f).cos());
            }
        }
        Self {
            len,
            padded,
            response,
            forward,
            inverse,
        }
    }

    pub fn response(&self) -> &[f64] {
        &self.response
    }

    /// Filters one projection row. The padding repeats the edge samples, so
    /// a row that vanishes at both ends is filtered exactly as with zeros.
    pub fn apply(&self, row: &[f64]) -> Vec<f64> {
        assert_eq!(row.len(), self.len, "row length does not match filter");
        let n = self.len;
        let (first, last) = (row[0], row[n - 1]);
        let extra = self.padded - n;
        let mut buf: Vec<Complex<f64>> = row.iter().map(|&v| Complex::new(v, 0.0)).collect();
        // right half of the padding continues the last sample, left half
        // (wrapping around) continues the first
        let right = extra / 2;
        buf.extend((0..extra).map(|i| Complex::new(if i < right { last } else { first }, 0.0)));
        self.forward.process(&mut buf);
        for (c, &h) in buf.iter_mut().zip(&self.response) {
            *c *= h;
        }
        self.inverse.process(&mut buf);
        let scale = 1.0 / self.padded as f64;
        buf[..n].iter().map(|c| c.re * scale).collect()
    }
}

pub fn ramp_filter(row: &[f64], window: FilterWindow) -> Result<Vec<f64>> {
    if row.len() < 2 {
        return Err(Error::validation("ramp filter needs at least 2 samples"));
    }
    Ok(RampFilter::new(row.len(), window).apply(row))
}

pub fn iradon_fbp(sino: &Sinogram, width: usize, window: FilterWindow) -> Result<CrossSection> {
    if sino.width != width {
        return Err(Error::validation(format!(
            "sinogram width {} does not match target width {width}",
            sino.width
        )));
    }
    if sino.n_angles() == 0 || width < 2 {
        return Err(Error::validation("need at least one angle and width >= 2"));
    }
    let filter = RampFilter::new(width, window);
    let pitch = sino.pitch_mm;
    let centre = (width as f64 - 1.0) / 2.0;
    let mut img = vec![0.0; width * width];
    for (k, &angle) in sino.angles_deg.iter().enumerate() {
        let q = filter.apply(sino.row(k));
        let (sin, cos) = angle.to_radians().sin_cos();
        for r in 0..width {
            let y = centre - r as f64;
            for c in 0..width {
                let x = c as f64 - centre;
                let u = x * cos + y * sin + centre;
                if u < 0.0 || u > (width - 1) as f64 {
                    continue;
                }
                let i0 = u.floor() as usize;
                let f = u - i0 as f64;
                let v = if i0 + 1 < width {
                    q[i0] * (1.0 - f) + q[i0 + 1] * f
                } else {
                    q[i0]
                };
                img[r * width + c] += v;
            }
        }
    }
    let scale = PI / (2.0 * sino.n_angles() as f64) / pitch;
    let radius2 = (width as f64 / 2.0).powi(2);
    for r in 0..width {
        for c in 0..width {
            let (x, y) = (c as f64 - centre, centre - r as f64);
            let v = &mut img[r * width + c];
            *v = if x * x + y * y > radius2 { 0.0 } else { *v * scale };
        }
    }
    CrossSection::new(width, pitch, img)
}

/// Reconstructs an image from a sinogram in normalized (`[0, 1]`) units.
pub fn reconstruct_normalized(sino: &Sinogram, window: FilterWindow) -> Result<CrossSection> {
    iradon_fbp(&sino.denormalized(), sino.width, window)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Area-weighted unit disk: each pixel holds the fraction of its area
    /// inside the circle (16×16 supersampling).
    pub(crate) fn smooth_disk(width: usize, pitch: f64, radius: f64) -> CrossSection {
        let mut data = vec![0.0; width * width];
        let sub = 16;
        for r in 0..width {
            for c in 0..width {
                let mut inside = 0;
                for i in 0..sub {
                    for j in 0..sub {
                        let x = (c as f64 + (j as f64 + 0.5) / sub as f64 - width as f64 / 2.0) * pitch;
                        let y = (width as f64 / 2.0 - r as f64 - (i as f64 + 0.5) / sub as f64) * pitch;
                        if x * x + y * y < radius * radius {
                            inside += 1;
                        }
                    }
                }
                data[r * width + c] = inside as f64 / (sub * sub) as f64;
            }
        }
        CrossSection::new(width, pitch, data).unwrap()
    }

    fn rmse(a: &[f64], b: &[f64]) -> f64 {
        (a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64).sqrt()
    }

    #[test]
    fn zero_image_zero_sinogram() {
        let s = radon(&CrossSection::zeros(32, 0.25), &[0.0, 45.0, 90.0]);
        assert!(s.data.iter().all(|&v| v == 0.0));
        let back = iradon_fbp(&s, 32, FilterWindow::Hann).unwrap();
        assert!(back.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn disk_chords_match_closed_form() {
        let (w, pitch) = (96, 0.25);
        let radius = w as f64 * pitch / 4.0;
        let img = smooth_disk(w, pitch, radius);
        let s = radon(&img, &[0.0, 30.0, 90.0]);
        for k in 0..3 {
            for i in 0..w {
                let off = detector_offset(i, w, pitch);
                if off.abs() <= 0.9 * radius {
                    let chord = 2.0 * (radius * radius - off * off).sqrt();
                    let got = s.row(k)[i];
                    assert!((got - chord).abs() / chord < 0.02, "angle {k} s {off}: {got} vs {chord}");
                }
            }
        }
    }

    #[test]
    fn ramp_filter_kills_dc() {
        let row = vec![3.0; 96];
        let out = ramp_filter(&row, FilterWindow::RamLak).unwrap();
        assert!(out.iter().all(|v| v.abs() < 1e-3 * 3.0));
    }

    #[test]
    fn ramp_filter_matches_direct_convolution() {
        let n = 96;
        let mut row = vec![0.0; n];
        row[40] = 1.0;
        let out = ramp_filter(&row, FilterWindow::RamLak).unwrap();
        // direct spatial-domain convolution with the band-limited ramp kernel
        let h = |d: isize| -> f64 {
            if d == 0 {
                0.25
            } else if d % 2 != 0 {
                -1.0 / (PI * d as f64).powi(2)
            } else {
                0.0
            }
        };
        for i in 0..n {
            let direct: f64 = (0..n).map(|m| row[m] * 2.0 * h(i as isize - m as isize)).sum();
            assert!((out[i] - direct).abs() < 1e-5, "i={i}: {} vs {direct}", out[i]);
        }
    }

    #[test]
    fn ramp_filter_is_linear() {
        let row: Vec<f64> = (0..50).map(|i| ((i * 7) % 11) as f64 - 3.0).collect();
        let base = ramp_filter(&row, FilterWindow::Hann).unwrap();
        for a in [2.0, -0.5, 4.0] {
            let scaled: Vec<f64> = row.iter().map(|v| v * a).collect();
            let out = ramp_filter(&scaled, FilterWindow::Hann).unwrap();
            for (o, b) in out.iter().zip(&base) {
                assert_eq!(*o, a * b);
            }
        }
        assert!(ramp_filter(&[1.0], FilterWindow::Hann).is_err());
    }

    #[test]
    fn fbp_self_consistency() {
        let (w, pitch) = (96, 0.25);
        let img = smooth_disk(w, pitch, w as f64 * pitch / 4.0);
        for (n_angles, step, limit) in [(180usize, 1.0, 0.05), (30, 6.0, 0.15)] {
            let angles: Vec<f64> = (0..n_angles).map(|k| k as f64 * step).collect();
            let rec = iradon_fbp(&radon(&img, &angles), w, FilterWindow::Hann).unwrap();
            let clipped: Vec<f64> = rec.data.iter().map(|v| v.clamp(0.0, 1.2)).collect();
            let e = rmse(&clipped, &img.data);
            assert!(e < limit, "{n_angles} angles: rmse {e}");
        }
    }

    #[test]
    fn fbp_rejects_width_mismatch() {
        let s = radon(&CrossSection::zeros(32, 0.25), &[0.0]);
        assert!(iradon_fbp(&s, 30, FilterWindow::Hann).is_err());
    }

    #[test]
    fn rotation_shifts_angles() {
        let w = 48;
        let mut data = vec![0.0; w * w];
        for r in 10..20 {
            for c in 14..34 {
                data[r * w + c] = 1.0 + (r + c) as f64 * 0.01;
            }
        }
        let img = CrossSection::new(w, 0.25, data.clone()).unwrap();
        // rotate 90 degrees counter-clockwise: new(r, c) = old(c, w-1-r)
        let mut rot = vec![0.0; w * w];
        for r in 0..w {
            for c in 0..w {
                rot[r * w + c] = data[c * w + (w - 1 - r)];
            }
        }
        let rotated = CrossSection::new(w, 0.25, rot).unwrap();
        let angles: Vec<f64> = (0..30).map(|k| k as f64 * 6.0).collect();
        let a = radon(&img, &angles);
        let b = radon(&rotated, &angles);
        let scale = a.data.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for k in 0..15 {
            // b(θ + 90°, s) = a(θ, s)
            for i in 0..w {
                assert!((b.row(k + 15)[i] - a.row(k)[i]).abs() <= 1e-3 * scale);
            }
        }
    }

    #[test]
    fn more_angles_reconstruct_better() {
        let w = 96;
        for (p, name) in crate::phantom::gen_suite(5, 8, w, 0.25).unwrap() {
            let img = CrossSection::new(w, 0.25, p.occupancy_f64()).unwrap();
            for window in [FilterWindow::Hann, FilterWindow::RamLak] {
                let errs: Vec<f64> = [180usize, 30, 10]
                    .iter()
                    .map(|&n| {
                        let angles: Vec<f64> =
                            (0..n).map(|k| k as f64 * 180.0 / n as f64).collect();
                        let rec = iradon_fbp(&radon(&img, &angles), w, window).unwrap();
                        rmse(&rec.data, &img.data)
                    })
                    .collect();
                assert!(errs[0] < errs[1] && errs[1] < errs[2], "{name} {window:?}: {errs:?}");
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn radon_and_fbp_are_linear(
            a in prop::collection::vec(0.0f64..1.0, 24 * 24),
            b in prop::collection::vec(0.0f64..1.0, 24 * 24),
        ) {
            let angles = [0.0, 33.0, 71.0, 128.0];
            let ia = CrossSection::new(24, 0.25, a.clone()).unwrap();
            let ib = CrossSection::new(24, 0.25, b.clone()).unwrap();
            let sum: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
            let isum = CrossSection::new(24, 0.25, sum).unwrap();
            let (sa, sb, ss) = (radon(&ia, &angles), radon(&ib, &angles), radon(&isum, &angles));
            for i in 0..ss.data.len() {
                let expect = sa.data[i] + sb.data[i];
                prop_assert!((ss.data[i] - expect).abs() <= 1e-5 * expect.abs().max(1e-12));
            }
            let (ra, rb, rs) = (
                iradon_fbp(&sa, 24, FilterWindow::Hann).unwrap(),
                iradon_fbp(&sb, 24, FilterWindow::Hann).unwrap(),
                iradon_fbp(&ss, 24, FilterWindow::Hann).unwrap(),
            );
            for i in 0..rs.data.len() {
                prop_assert!((rs.data[i] - ra.data[i] - rb.data[i]).abs() < 1e-9);
            }
        }
    }
}
