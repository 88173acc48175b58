//! Leave-one-out comparison of all methods on a simulated suite.

use std::collections::BTreeMap;

use anyhow::Result;
use thzct::baselines::{AmpMode, DEFAULT_LAMBDA};
use thzct::dlct::{Hyper, ModelParams, Variant};
use thzct::metrics::compare;
use thzct::radon::{CrossSection, FilterWindow};
use thzct::sim::ScanConfig;

use crate::pipeline::{self, leave_one_out, Predictor, Sample};

#[derive(Clone, Debug)]
pub struct StudyConfig {
    pub count: usize,
    pub scan: ScanConfig,
    /// Folds to run; `None` runs every fold.
    pub folds: Option<Vec<usize>>,
    pub variants: Vec<Variant>,
    pub epochs: usize,
    pub lr: f64,
    pub lambda: f64,
    pub with_composite: bool,
    /// Folds whose trained networks are kept in the result.
    pub keep_models: Vec<usize>,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            count: 8,
            scan: ScanConfig::default(),
            folds: None,
            variants: vec![Variant::Last, Variant::V41, Variant::V11],
            epochs: 40,
            lr: 1e-3,
            lambda: DEFAULT_LAMBDA,
            with_composite: true,
            keep_models: Vec::new(),
        }
    }
}

/// Method tag for a network variant: `dl` for the default placement.
pub fn dl_tag(v: Variant) -> String {
    match v {
        Variant::Last => "dl".into(),
        other => format!("dl-{other}"),
    }
}

#[derive(Clone, Debug)]
pub struct FoldResult {
    pub fold: usize,
    pub test: String,
    /// `(rmse, ssim)` per method tag.
    pub scores: BTreeMap<String, (f64, f64)>,
    pub recons: BTreeMap<String, CrossSection>,
    pub losses: BTreeMap<String, Vec<f64>>,
}

#[derive(Clone, Debug)]
pub struct StudyResult {
    pub seed: u64,
    pub samples: Vec<Sample>,
    pub folds: Vec<FoldResult>,
    pub models: BTreeMap<(usize, Variant), ModelParams<f32>>,
}

impl StudyResult {
    pub fn sample(&self, name: &str) -> Option<&Sample> {
        self.samples.iter().find(|s| s.name == name)
    }

    /// Mean `(rmse, ssim)` of a method over the folds run.
    pub fn mean(&self, tag: &str) -> Option<(f64, f64)> {
        let v: Vec<(f64, f64)> = self.folds.iter().filter_map(|f| f.scores.get(tag).copied()).collect();
        if v.is_empty() {
            return None;
        }
        let n = v.len() as f64;
        Some((v.iter().map(|s| s.0).sum::<f64>() / n, v.iter().map(|s| s.1).sum::<f64>() / n))
    }
}

pub fn simulate_suite(seed: u64, cfg: &StudyConfig) -> Result<Vec<Sample>> {
    let suite = pipeline::suite(seed, cfg.count, cfg.scan.width, cfg.scan.pitch_mm, cfg.with_composite)?;
    let scan = ScanConfig {
        seed,
        ..cfg.scan.clone()
    };
    suite
        .iter()
        .enumerate()
        .map(|(i, (p, name))| pipeline::simulate_sample(p, name, &scan, i))
        .collect()
}

/// Runs the study for one seed; `log` receives progress lines.
pub fn run_study(seed: u64, cfg: &StudyConfig, mut log: impl FnMut(&str)) -> Result<StudyResult> {
    let samples = simulate_suite(seed, cfg)?;
    let names: Vec<String> = samples.iter().map(|s| s.name.clone()).collect();
    let grams = samples.iter().map(pipeline::gram_of).collect::<Result<Vec<_>>>()?;
    let mut folds = Vec::new();
    let mut models = BTreeMap::new();
    for split in leave_one_out(&names) {
        if cfg.folds.as_ref().is_some_and(|f| !f.contains(&split.fold)) {
            continue;
        }
        let idx = |n: &String| names.iter().position(|m| m == n).expect("fold names come from the suite");
        let test = &samples[idx(&split.test[0])];
        let train: Vec<&Sample> = split.train.iter().map(|n| &samples[idx(n)]).collect();
        let mut result = FoldResult {
            fold: split.fold,
            test: test.name.clone(),
            scores: BTreeMap::new(),
            recons: BTreeMap::new(),
            losses: BTreeMap::new(),
        };
        let record = |tag: String, img: CrossSection, r: &mut FoldResult| -> Result<()> {
            r.scores.insert(tag.clone(), compare(&img, &test.truth)?);
            r.recons.insert(tag, img);
            Ok(())
        };
        let (_, amp) = pipeline::reconstruct(&test.scan, &Predictor::Amp(AmpMode::NegLog), FilterWindow::Hann)?;
        record("amp".into(), amp, &mut result)?;
        let fold_grams: Vec<_> = split.train.iter().map(|n| &grams[idx(n)]).collect();
        let ml = pipeline::fit_ml(&fold_grams, cfg.lambda)?;
        let (_, img) = pipeline::reconstruct(&test.scan, &Predictor::Ml(&ml), FilterWindow::Hann)?;
        record("ml".into(), img, &mut result)?;
        for &variant in &cfg.variants {
            let hyper = Hyper {
                epochs: cfg.epochs,
                seed,
                lr: cfg.lr,
                ..Hyper::default()
            };
            let out = pipeline::train_dl(&train, variant, &hyper, |_, _| {})?;
            let (_, img) = pipeline::reconstruct(&test.scan, &Predictor::Dl(&out.params), FilterWindow::Hann)?;
            let tag = dl_tag(variant);
            record(tag.clone(), img, &mut result)?;
            result.losses.insert(tag, out.epoch_losses);
            if cfg.keep_models.contains(&split.fold) {
                models.insert((split.fold, variant), out.params);
            }
        }
        let line: Vec<String> = result
            .scores
            .iter()
            .map(|(t, (r, s))| format!("{t} rmse={r:.4} ssim={s:.4}"))
            .collect();
        log(&format!("seed {seed} fold {} ({}): {}", split.fold, test.name, line.join(", ")));
        folds.push(result);
    }
    Ok(StudyResult {
        seed,
        samples,
        folds,
        models,
    })
}
