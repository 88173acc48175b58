//! In-memory steps shared by the commands and the acceptance suite.

use std::fmt;
use std::str::FromStr;

use anyhow::{bail, Result};
use thzct::baselines::{ampct_sinogram, mlct_sinogram, AmpMode, GramAccumulator, MlModel};
use thzct::dlct::{self, predict_sinogram, Hyper, ModelParams, ModelSpec, TrainOutput, Variant};
use thzct::phantom::{composite_phantom, gen_suite, Phantom};
use thzct::radon::{radon, reconstruct_normalized, CrossSection, FilterWindow, Sinogram};
use thzct::sim::{simulate_scan, ScanConfig, ScanVolume};

pub const COMPOSITE_NAME: &str = "composite";

/// The phantom suite written by `gen-phantoms`: `count` single-material
/// phantoms, optionally followed by the composite one.
pub fn suite(seed: u64, count: usize, width: usize, pitch_mm: f64, composite: bool) -> Result<Vec<(Phantom, String)>> {
    let mut out = gen_suite(seed, count, width, pitch_mm)?;
    if composite {
        out.push((composite_phantom(width, pitch_mm)?, COMPOSITE_NAME.to_string()));
    }
    Ok(out)
}

/// Noise seed of the `index`-th phantom of a dataset, so scans of different
/// phantoms draw independent noise.
pub fn scan_seed(base: u64, index: usize) -> u64 {
    base.wrapping_mul(1_000_003).wrapping_add(index as u64)
}

/// A simulated phantom with its ground truth.
#[derive(Clone, Debug)]
pub struct Sample {
    pub name: String,
    pub scan: ScanVolume,
    /// Radon transform of the occupancy, normalized by `width · pitch`.
    pub sinogram: Sinogram,
    pub truth: CrossSection,
}

pub fn truth_of(phantom: &Phantom) -> Result<CrossSection> {
    Ok(CrossSection::new(phantom.width(), phantom.pitch_mm(), phantom.occupancy_f64())?)
}

pub fn simulate_sample(phantom: &Phantom, name: &str, cfg: &ScanConfig, index: usize) -> Result<Sample> {
    let cfg = ScanConfig {
        seed: scan_seed(cfg.seed, index),
        ..cfg.clone()
    };
    let scan = simulate_scan(phantom, &cfg)?;
    let truth = truth_of(phantom)?;
    let sinogram = radon(&truth, &cfg.angles_deg()).normalized();
    Ok(Sample {
        name: name.to_string(),
        scan,
        sinogram,
        truth,
    })
}

/// Leave-one-phantom-out fold.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CvSplit {
    pub fold: usize,
    pub train: Vec<String>,
    pub test: Vec<String>,
}

/// One fold per name, holding that name out. The composite phantom is never
/// part of a fold.
pub fn leave_one_out(names: &[String]) -> Vec<CvSplit> {
    let names: Vec<&String> = names.iter().filter(|n| *n != COMPOSITE_NAME).collect();
    (0..names.len())
        .map(|k| CvSplit {
            fold: k,
            train: names
                .iter()
                .enumerate()
                .filter(|&(i, _)| i != k)
                .map(|(_, n)| (*n).clone())
                .collect(),
            test: vec![names[k].clone()],
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    Dl(Variant),
    Ml,
}

impl FromStr for ModelKind {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mlct" => Ok(ModelKind::Ml),
            other => Ok(ModelKind::Dl(other.parse()?)),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    Amp,
    Ml,
    Dl,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Amp => "amp",
            Method::Ml => "ml",
            Method::Dl => "dl",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "amp" => Ok(Method::Amp),
            "ml" => Ok(Method::Ml),
            "dl" => Ok(Method::Dl),
            other => bail!("unknown method {other:?} (expected amp, ml or dl)"),
        }
    }
}

/// `(frame, target row)` pairs of every angle of every sample, in f32.
pub fn frame_pairs(samples: &[&Sample]) -> Vec<(Vec<f32>, Vec<f32>)> {
    let mut out = Vec::new();
    for s in samples {
        for k in 0..s.scan.config.n_angles {
            let row = s.sinogram.row(k).iter().map(|&v| v as f32).collect();
            out.push((s.scan.frame(k).to_vec(), row));
        }
    }
    out
}

pub fn train_dl(
    samples: &[&Sample],
    variant: Variant,
    hyper: &Hyper,
    on_epoch: impl FnMut(usize, f64),
) -> Result<TrainOutput<f32>> {
    let first = samples.first().ok_or_else(|| anyhow::anyhow!("no training phantoms"))?;
    let cfg = &first.scan.config;
    let spec = ModelSpec::new(variant, cfg.width, cfg.n_time);
    let pairs = frame_pairs(samples);
    let views: Vec<(&[f32], &[f32])> = pairs.iter().map(|(f, r)| (&f[..], &r[..])).collect();
    Ok(dlct::train(&views, &spec, hyper, on_epoch)?)
}

/// Per-sample Gram statistics; folds merge these in sample order.
pub fn gram_of(sample: &Sample) -> Result<GramAccumulator> {
    let cfg = &sample.scan.config;
    let mut acc = GramAccumulator::new(cfg.n_time);
    for k in 0..cfg.n_angles {
        let batch: Vec<(&[f32], f64)> = sample
            .scan
            .frame(k)
            .chunks_exact(cfg.n_time)
            .zip(sample.sinogram.row(k))
            .map(|(t, &y)| (t, y))
            .collect();
        acc.add_batch(&batch)?;
    }
    Ok(acc)
}

pub fn fit_ml(grams: &[&GramAccumulator], lambda: f64) -> Result<MlModel> {
    let (first, rest) = grams
        .split_first()
        .ok_or_else(|| anyhow::anyhow!("no training phantoms"))?;
    let mut acc = (*first).clone();
    for g in rest {
        acc.merge(g)?;
    }
    Ok(thzct::baselines::mlct_fit_gram(&acc, lambda)?)
}

/// A trained model for [`reconstruct`].
pub enum Predictor<'a> {
    Amp(AmpMode),
    Ml(&'a MlModel),
    Dl(&'a ModelParams<f32>),
}

impl Predictor<'_> {
    pub fn method(&self) -> Method {
        match self {
            Predictor::Amp(_) => Method::Amp,
            Predictor::Ml(_) => Method::Ml,
            Predictor::Dl(_) => Method::Dl,
        }
    }
}

/// Predicted normalized sinogram and its filtered backprojection.
pub fn reconstruct(scan: &ScanVolume, predictor: &Predictor, window: FilterWindow) -> Result<(Sinogram, CrossSection)> {
    let sino = match predictor {
        Predictor::Amp(mode) => ampct_sinogram(scan, *mode)?,
        Predictor::Ml(model) => mlct_sinogram(model, scan)?,
        Predictor::Dl(params) => predict_sinogram(params, scan)?,
    };
    let img = reconstruct_normalized(&sino, window)?;
    Ok((sino, img))
}
