use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::kernels::{cast, Scalar};
use super::network::{backward, forward, LayerParams, Mode, ModelParams};
use super::ModelSpec;
use crate::error::{Error, Result};
use crate::radon::Sinogram;
use crate::sim::ScanVolume;

#[derive(Clone, Debug, PartialEq)]
pub struct Hyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for Hyper {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            epochs: 40,
            seed: 0,
        }
    }
}

impl Hyper {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::validation(format!("lr must be > 0, got {}", self.lr)));
        }
        if self.epochs == 0 {
            return Err(Error::validation("epochs must be ≥ 1"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::validation("Adam betas must lie in [0, 1)"));
        }
        if !(self.eps > 0.0) {
            return Err(Error::validation("Adam eps must be > 0"));
        }
        Ok(())
    }

    pub fn to_pairs(&self) -> Vec<(String, String)> {
        vec![
            ("lr".into(), self.lr.to_string()),
            ("beta1".into(), self.beta1.to_string()),
            ("beta2".into(), self.beta2.to_string()),
            ("eps".into(), self.eps.to_string()),
            ("epochs".into(), self.epochs.to_string()),
            ("seed".into(), self.seed.to_string()),
            ("loss".into(), "mse".into()),
            ("optimizer".into(), "adam".into()),
        ]
    }
}

/// One bias-corrected Adam update of `w` in place; `t` is the 1-based step.
pub fn adam_step<T: Scalar>(w: &mut [T], g: &[T], m: &mut [T], v: &mut [T], t: u64, h: &Hyper) {
    let (b1, b2): (T, T) = (cast(h.beta1), cast(h.beta2));
    let c1: T = cast(1.0 - h.beta1.powi(t as i32));
    let c2: T = cast(1.0 - h.beta2.powi(t as i32));
    let lr: T = cast(h.lr);
    let eps: T = cast(h.eps);
    let one = T::one();
    for k in 0..w.len() {
        m[k] = b1 * m[k] + (one - b1) * g[k];
        v[k] = b2 * v[k] + (one - b2) * g[k] * g[k];
        let mh = m[k] / c1;
        let vh = v[k] / c2;
        w[k] = w[k] - lr * mh / (vh.sqrt() + eps);
    }
}

/// First and second moment buffers for every trainable vector.
#[derive(Clone, Debug)]
pub struct AdamState<T> {
    pub step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &mut ModelParams<T>) -> Self {
        let sizes: Vec<usize> = params.trainable_mut().iter().map(|s| s.len()).collect();
        Self {
            step: 0,
            m: sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
            v: sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
        }
    }

    pub fn update(&mut self, params: &mut ModelParams<T>, grads: &[&[T]], h: &Hyper) {
        self.step += 1;
        for (k, w) in params.trainable_mut().into_iter().enumerate() {
            adam_step(w, grads[k], &mut self.m[k], &mut self.v[k], self.step, h);
        }
    }
}

/// Mean squared error and its gradient with respect to `row`.
pub fn mse_loss<T: Scalar>(row: &[T], target: &[T]) -> (f64, Vec<T>) {
    let n = row.len() as f64;
    let mut loss = 0.0;
    let scale: T = cast(2.0 / n);
    let grad = row
        .iter()
        .zip(target)
        .map(|(&y, &t)| {
            let d = y - t;
            loss += d.to_f64().unwrap().powi(2);
            scale * d
        })
        .collect();
    (loss / n, grad)
}

#[derive(Clone, Debug)]
pub struct TrainOutput<T> {
    pub params: ModelParams<T>,
    /// Mean training loss of each epoch.
    pub epoch_losses: Vec<f64>,
}

/// Shifts the tail bias so the mean pre-clip output on the first frame equals
/// the mean training target. With random weights the tail pre-activation has
/// nearly the same sign at every position, and a row clipped to zero
/// everywhere has zero gradient.
pub fn warm_start_output<T: Scalar>(params: &mut ModelParams<T>, dataset: &[(&[T], &[T])]) -> Result<()> {
    let Some(&(frame, _)) = dataset.first() else {
        return Ok(());
    };
    let (_, cache) = forward(params, frame, Mode::Train)?;
    let mean = |v: &[T]| v.iter().map(|x| x.to_f64().unwrap()).sum::<f64>() / v.len() as f64;
    let n: usize = dataset.iter().map(|(_, t)| t.len()).sum();
    let target = dataset.iter().flat_map(|(_, t)| t.iter()).map(|x| x.to_f64().unwrap()).sum::<f64>() / n as f64;
    let shift = target - mean(cache.pre_clip());
    if let Some(LayerParams::Conv { b, .. }) = params.layers_mut().last_mut() {
        b[0] = cast(b[0].to_f64().unwrap() + shift);
    }
    Ok(())
}

/// Adam on one `(frame, target_row)` pair per step, visiting the dataset in a
/// fresh seeded permutation every epoch. `on_epoch(epoch, mean_loss)` is
/// called after each epoch.
pub fn train<T: Scalar>(
    dataset: &[(&[T], &[T])],
    spec: &ModelSpec,
    hyper: &Hyper,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<TrainOutput<T>> {
    hyper.validate()?;
    if dataset.is_empty() {
        return Err(Error::validation("training set is empty"));
    }
    for (k, (frame, target)) in dataset.iter().enumerate() {
        if frame.len() != spec.width * spec.n_time || target.len() != spec.width {
            return Err(Error::validation(format!(
                "sample {k}: frame {} / target {} do not match {}×{}",
                frame.len(),
                target.len(),
                spec.width,
                spec.n_time
            )));
        }
    }
    let mut params = ModelParams::<T>::init(spec, hyper.seed)?;
    warm_start_output(&mut params, dataset)?;
    let mut adam = AdamState::new(&mut params);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut epoch_losses = Vec::with_capacity(hyper.epochs);
    for epoch in 0..hyper.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
        rng.set_stream(1 + epoch as u64);
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (step, &k) in order.iter().enumerate() {
            let (frame, target) = dataset[k];
            let (row, cache) = forward(&params, frame, Mode::Train)?;
            let (loss, grad_row) = mse_loss(&row, target);
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch, step, loss });
            }
            total += loss;
            let (grads, _) = backward(&params, &cache, &grad_row)?;
            adam.update(&mut params, &grads.trainable(), hyper);
            params.update_running_stats(&cache);
        }
        let mean = total / dataset.len() as f64;
        on_epoch(epoch, mean);
        epoch_losses.push(mean);
    }
    Ok(TrainOutput {
        params,
        epoch_losses,
    })
}

/// Eval-mode prediction for one frame.
pub fn predict_row<T: Scalar>(params: &ModelParams<T>, frame: &[T]) -> Result<Vec<T>> {
    forward(params, frame, Mode::Eval).map(|(row, _)| row)
}

/// Normalized sinogram predicted frame by frame, in angle order.
pub fn predict_sinogram(params: &ModelParams<f32>, scan: &ScanVolume) -> Result<Sinogram> {
    let spec = params.spec();
    let cfg = &scan.config;
    if cfg.width != spec.width || cfg.n_time != spec.n_time {
        return Err(Error::validation(format!(
            "scan is {}×{}, model expects {}×{}",
            cfg.width, cfg.n_time, spec.width, spec.n_time
        )));
    }
    let rows = (0..cfg.n_angles)
        .into_par_iter()
        .map(|k| predict_row(params, scan.frame(k)))
        .collect::<Result<Vec<_>>>()?;
    let data = rows.into_iter().flatten().map(f64::from).collect();
    Sinogram::new(cfg.width, cfg.angles_deg(), cfg.pitch_mm, data)
}
