//! Image-quality metrics: RMSE and Gaussian-window SSIM.

use crate::error::{Error, Result};
use crate::radon::CrossSection;
use crate::sim::reflect_index;

#[derive(Clone, Debug, PartialEq)]
pub struct SsimConfig {
    pub k1: f64,
    pub k2: f64,
    pub dynamic_range: f64,
    /// Odd side length of the square window.
    pub window: usize,
    pub sigma: f64,
}

impl Default for SsimConfig {
    fn default() -> Self {
        Self {
            k1: 0.01,
            k2: 0.03,
            dynamic_range: 1.0,
            window: 7,
            sigma: 1.5,
        }
    }
}

impl SsimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.k1 > 0.0 && self.k2 > 0.0) {
            return Err(Error::validation("SSIM k1 and k2 must be > 0"));
        }
        if !(self.dynamic_range > 0.0) {
            return Err(Error::validation("SSIM dynamic range must be > 0"));
        }
        if self.window % 2 == 0 {
            return Err(Error::validation("SSIM window size must be odd"));
        }
        if !(self.sigma > 0.0) {
            return Err(Error::validation("SSIM sigma must be > 0"));
        }
        Ok(())
    }

    fn kernel(&self) -> Vec<f64> {
        let r = (self.window / 2) as f64;
        let k: Vec<f64> = (0..self.window)
            .map(|i| (-(i as f64 - r).powi(2) / (2.0 * self.sigma * self.sigma)).exp())
            .collect();
        let s: f64 = k.iter().sum();
        k.into_iter().map(|v| v / s).collect()
    }
}

pub fn rmse(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::validation(format!(
            "rmse of images with {} and {} pixels",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::validation("rmse of empty images"));
    }
    let sum: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    Ok((sum / a.len() as f64).sqrt())
}

/// Separable Gaussian filter with symmetric (reflect) boundaries.
fn blur(img: &[f64], rows: usize, cols: usize, kernel: &[f64]) -> Vec<f64> {
    let r = (kernel.len() / 2) as isize;
    let mut tmp = vec![0.0; img.len()];
    for y in 0..rows {
        for x in 0..cols {
            tmp[y * cols + x] = kernel
                .iter()
                .enumerate()
                .map(|(k, w)| w * img[y * cols + reflect_index(x as isize + k as isize - r, cols)])
                .sum();
        }
    }
    let mut out = vec![0.0; img.len()];
    for y in 0..rows {
        for x in 0..cols {
            out[y * cols + x] = kernel
                .iter()
                .enumerate()
                .map(|(k, w)| w * tmp[reflect_index(y as isize + k as isize - r, rows) * cols + x])
                .sum();
        }
    }
    out
}

/// Local SSIM map of two `rows × cols` images.
pub fn ssim_map(a: &[f64], b: &[f64], shape: (usize, usize), cfg: &SsimConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    let (rows, cols) = shape;
    if a.len() != rows * cols || b.len() != rows * cols {
        return Err(Error::validation(format!(
            "ssim expects {rows}×{cols} images, got {} and {} pixels",
            a.len(),
            b.len()
        )));
    }
    if rows < cfg.window || cols < cfg.window {
        return Err(Error::validation(format!(
            "image {rows}×{cols} is smaller than the {w}×{w} window",
            w = cfg.window
        )));
    }
    let k = cfg.kernel();
    let c1 = (cfg.k1 * cfg.dynamic_range).powi(2);
    let c2 = (cfg.k2 * cfg.dynamic_range).powi(2);
    let prod = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).collect::<Vec<_>>();
    let mu_a = blur(a, rows, cols, &k);
    let mu_b = blur(b, rows, cols, &k);
    let e_aa = blur(&prod(a, a), rows, cols, &k);
    let e_bb = blur(&prod(b, b), rows, cols, &k);
    let e_ab = blur(&prod(a, b), rows, cols, &k);
    Ok((0..a.len())
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = e_aa[i] - ma * ma;
            let vb = e_bb[i] - mb * mb;
            let cov = e_ab[i] - ma * mb;
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
        })
        .collect())
}

pub fn ssim(a: &[f64], b: &[f64], shape: (usize, usize), cfg: &SsimConfig) -> Result<f64> {
    let map = ssim_map(a, b, shape, cfg)?;
    Ok(map.iter().sum::<f64>() / map.len() as f64)
}

/// `(rmse, ssim)` of a reconstruction against ground truth.
pub fn compare(recon: &CrossSection, truth: &CrossSection) -> Result<(f64, f64)> {
    if recon.width != truth.width {
        return Err(Error::validation(format!(
            "cross-sections are {} and {} pixels wide",
            recon.width, truth.width
        )));
    }
    let w = recon.width;
    Ok((
        rmse(&recon.data, &truth.data)?,
        ssim(&recon.data, &truth.data, (w, w), &SsimConfig::default())?,
    ))
}
