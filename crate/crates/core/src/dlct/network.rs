use std::sync::atomic::{AtomicU64, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::kernels::{self, cast, Act, Scalar};
use super::{LayerSpec, ModelSpec};
use crate::error::{Error, Result};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

static NEXT_VERSION: AtomicU64 = AtomicU64::new(1);

fn fresh_version() -> u64 {
    NEXT_VERSION.fetch_add(1, Ordering::Relaxed)
}

#[derive(Clone, Debug, PartialEq)]
pub enum LayerParams<T> {
    /// `w` is laid out `(out_ch, in_ch, 3)` with tap 0 at offset −1.
    Conv { w: Vec<T>, b: Vec<T> },
    BatchNorm {
        gamma: Vec<T>,
        beta: Vec<T>,
        running_mean: Vec<T>,
        running_var: Vec<T>,
    },
    Stateless,
}

#[derive(Clone, Debug)]
pub struct ModelParams<T> {
    spec: ModelSpec,
    layers: Vec<LayerParams<T>>,
    version: u64,
}

impl<T: Scalar> PartialEq for ModelParams<T> {
    fn eq(&self, other: &Self) -> bool {
        self.spec == other.spec && self.layers == other.layers
    }
}

impl<T: Scalar> ModelParams<T> {
    /// He-normal conv weights, zero biases, unit gamma, zero beta.
    pub fn init(spec: &ModelSpec, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::build(spec, |in_ch, n| {
            let std = (2.0 / (in_ch * 3) as f64).sqrt();
            (0..n)
                .map(|_| cast(std * rng.sample::<f64, _>(StandardNormal)))
                .collect()
        })
    }

    /// All conv weights and biases zero, gamma 1, beta 0.
    pub fn zeros(spec: &ModelSpec) -> Result<Self> {
        Self::build(spec, |_, n| vec![T::zero(); n])
    }

    fn build(spec: &ModelSpec, mut weights: impl FnMut(usize, usize) -> Vec<T>) -> Result<Self> {
        spec.validate()?;
        let layers = spec
            .layers()
            .into_iter()
            .map(|l| match l {
                LayerSpec::Conv { in_ch, out_ch, .. } => LayerParams::Conv {
                    w: weights(in_ch, out_ch * in_ch * 3),
                    b: vec![T::zero(); out_ch],
                },
                LayerSpec::BatchNorm { channels } => LayerParams::BatchNorm {
                    gamma: vec![T::one(); channels],
                    beta: vec![T::zero(); channels],
                    running_mean: vec![T::zero(); channels],
                    running_var: vec![T::one(); channels],
                },
                _ => LayerParams::Stateless,
            })
            .collect();
        Ok(Self {
            spec: spec.clone(),
            layers,
            version: fresh_version(),
        })
    }

    /// Assembles parameters, checking every shape against the spec.
    pub fn from_layers(spec: &ModelSpec, layers: Vec<LayerParams<T>>) -> Result<Self> {
        spec.validate()?;
        let stack = spec.layers();
        if stack.len() != layers.len() {
            return Err(Error::validation(format!(
                "expected {} layers, got {}",
                stack.len(),
                layers.len()
            )));
        }
        for (k, (l, p)) in stack.iter().zip(&layers).enumerate() {
            let ok = match (l, p) {
                (LayerSpec::Conv { in_ch, out_ch, .. }, LayerParams::Conv { w, b }) => {
                    w.len() == out_ch * in_ch * 3 && b.len() == *out_ch
                }
                (
                    LayerSpec::BatchNorm { channels },
                    LayerParams::BatchNorm {
                        gamma,
                        beta,
                        running_mean,
                        running_var,
                    },
                ) => {
                    [gamma, beta, running_mean, running_var]
                        .iter()
                        .all(|v| v.len() == *channels)
                        && running_var.iter().all(|v| *v >= T::zero())
                }
                (LayerSpec::Conv { .. } | LayerSpec::BatchNorm { .. }, _) => false,
                (_, p) => *p == LayerParams::Stateless,
            };
            if !ok {
                return Err(Error::validation(format!("layer {k} parameters do not match {l:?}")));
            }
        }
        Ok(Self {
            spec: spec.clone(),
            layers,
            version: fresh_version(),
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[LayerParams<T>] {
        &self.layers
    }

    /// Mutable access; invalidates every cache produced so far.
    pub fn layers_mut(&mut self) -> &mut [LayerParams<T>] {
        self.version = fresh_version();
        &mut self.layers
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    /// Trainable vectors in a fixed order: per layer conv `w`, `b` or
    /// batchnorm `gamma`, `beta`.
    pub fn trainable_mut(&mut self) -> Vec<&mut [T]> {
        self.version = fresh_version();
        let mut out: Vec<&mut [T]> = Vec::new();
        for p in &mut self.layers {
            match p {
                LayerParams::Conv { w, b } => {
                    out.push(w);
                    out.push(b);
                }
                LayerParams::BatchNorm { gamma, beta, .. } => {
                    out.push(gamma);
                    out.push(beta);
                }
                LayerParams::Stateless => {}
            }
        }
        out
    }

    pub fn num_trainable(&self) -> usize {
        self.layers
            .iter()
            .map(|p| match p {
                LayerParams::Conv { w, b } => w.len() + b.len(),
                LayerParams::BatchNorm { gamma, beta, .. } => gamma.len() + beta.len(),
                LayerParams::Stateless => 0,
            })
            .sum()
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        let c = |v: &Vec<T>| v.iter().map(|x| cast::<U>(x.to_f64().unwrap())).collect();
        let layers = self
            .layers
            .iter()
            .map(|p| match p {
                LayerParams::Conv { w, b } => LayerParams::Conv { w: c(w), b: c(b) },
                LayerParams::BatchNorm {
                    gamma,
                    beta,
                    running_mean,
                    running_var,
                } => LayerParams::BatchNorm {
                    gamma: c(gamma),
                    beta: c(beta),
                    running_mean: c(running_mean),
                    running_var: c(running_var),
                },
                LayerParams::Stateless => LayerParams::Stateless,
            })
            .collect();
        ModelParams {
            spec: self.spec.clone(),
            layers,
            version: fresh_version(),
        }
    }

    /// Folds per-frame batch statistics into the running estimates.
    pub(crate) fn update_running_stats(&mut self, cache: &Cache<T>) {
        let m = BN_MOMENTUM;
        for (p, rec) in self.layers.iter_mut().zip(&cache.records) {
            if let (
                LayerParams::BatchNorm {
                    running_mean,
                    running_var,
                    ..
                },
                Record::BatchNorm {
                    stats: Some(stats),
                    count,
                    ..
                },
            ) = (p, rec)
            {
                let unbias = if *count > 1 {
                    *count as f64 / (*count - 1) as f64
                } else {
                    1.0
                };
                for (c, &(mean, var)) in stats.iter().enumerate() {
                    let rm = running_mean[c].to_f64().unwrap();
                    let rv = running_var[c].to_f64().unwrap();
                    running_mean[c] = cast((1.0 - m) * rm + m * mean);
                    running_var[c] = cast((1.0 - m) * rv + m * var * unbias);
                }
            }
        }
        self.version = fresh_version();
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics from the frame itself.
    Train,
    /// Running statistics.
    Eval,
}

#[derive(Clone, Debug)]
enum Record<T> {
    Conv {
        input: Act<T>,
    },
    BatchNorm {
        xhat: Act<T>,
        inv_std: Vec<T>,
        /// Batch `(mean, biased var)` in train mode.
        stats: Option<Vec<(f64, f64)>>,
        count: usize,
    },
    Relu {
        output: Act<T>,
    },
    MaxPool {
        picks: Vec<bool>,
    },
    GlobalAvg {
        n_time: usize,
    },
}

/// Intermediate state of one forward pass, consumed by [`backward`].
#[derive(Clone, Debug)]
pub struct Cache<T> {
    version: u64,
    mode: Mode,
    records: Vec<Record<T>>,
    pre_clip: Vec<T>,
}

impl<T> Cache<T> {
    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// Network output before the non-negativity clip.
    pub fn pre_clip(&self) -> &[T] {
        &self.pre_clip
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum LayerGrads<T> {
    Conv { w: Vec<T>, b: Vec<T> },
    BatchNorm { gamma: Vec<T>, beta: Vec<T> },
    Stateless,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Grads<T> {
    pub layers: Vec<LayerGrads<T>>,
}

impl<T: Scalar> Grads<T> {
    /// Same order as [`ModelParams::trainable_mut`].
    pub fn trainable(&self) -> Vec<&[T]> {
        let mut out: Vec<&[T]> = Vec::new();
        for g in &self.layers {
            match g {
                LayerGrads::Conv { w, b } => {
                    out.push(w);
                    out.push(b);
                }
                LayerGrads::BatchNorm { gamma, beta } => {
                    out.push(gamma);
                    out.push(beta);
                }
                LayerGrads::Stateless => {}
            }
        }
        out
    }
}

/// Maps a `width × n_time` frame (row-major, time fastest) to a row of
/// `width` non-negative values.
pub fn forward<T: Scalar>(
    params: &ModelParams<T>,
    frame: &[T],
    mode: Mode,
) -> Result<(Vec<T>, Cache<T>)> {
    let spec = &params.spec;
    if frame.len() != spec.width * spec.n_time {
        return Err(Error::validation(format!(
            "frame has {} samples, model expects {}×{}",
            frame.len(),
            spec.width,
            spec.n_time
        )));
    }
    let mut x = Act {
        channels: 1,
        width: spec.width,
        n_time: spec.n_time,
        data: frame.to_vec(),
    };
    let mut records = Vec::with_capacity(params.layers.len());
    for (layer, p) in spec.layers().into_iter().zip(&params.layers) {
        let (y, rec) = match (layer, p) {
            (LayerSpec::Conv { kernel, out_ch, .. }, LayerParams::Conv { w, b }) => {
                let y = kernels::conv_forward(&x, kernel, w, b, out_ch);
                (y, Record::Conv { input: x })
            }
            (
                LayerSpec::BatchNorm { .. },
                LayerParams::BatchNorm {
                    gamma,
                    beta,
                    running_mean,
                    running_var,
                },
            ) => {
                let (used, stats) = match mode {
                    Mode::Train => {
                        let s = kernels::channel_stats(&x);
                        (s.clone(), Some(s))
                    }
                    Mode::Eval => (
                        running_mean
                            .iter()
                            .zip(running_var)
                            .map(|(m, v)| (m.to_f64().unwrap(), v.to_f64().unwrap()))
                            .collect(),
                        None,
                    ),
                };
                let (xhat, y, inv_std) = kernels::bn_apply(&x, &used, BN_EPS, gamma, beta);
                let count = x.plane_len();
                (
                    y,
                    Record::BatchNorm {
                        xhat,
                        inv_std,
                        stats,
                        count,
                    },
                )
            }
            (LayerSpec::Relu, _) => {
                let y = kernels::relu(x);
                let output = y.clone();
                (y, Record::Relu { output })
            }
            (LayerSpec::MaxPoolTime, _) => {
                let (y, picks) = kernels::maxpool_time(&x);
                (y, Record::MaxPool { picks })
            }
            (LayerSpec::GlobalAvgTime, _) => {
                let y = kernels::global_avg_time(&x);
                (y, Record::GlobalAvg { n_time: x.n_time })
            }
            (l, _) => {
                return Err(Error::Contract(format!("parameters missing for {l:?}")));
            }
        };
        records.push(rec);
        x = y;
    }
    if x.channels != 1 || x.n_time != 1 {
        return Err(Error::Contract(format!(
            "network ends with {} channels × {} samples, expected 1 × 1",
            x.channels, x.n_time
        )));
    }
    let row = x
        .data
        .iter()
        .map(|&v| if v < T::zero() { T::zero() } else { v })
        .collect();
    Ok((
        row,
        Cache {
            version: params.version,
            mode,
            records,
            pre_clip: x.data,
        },
    ))
}

/// Gradients of a scalar objective with respect to every trainable parameter
/// and the input frame, given `grad_row = ∂J/∂row`.
pub fn backward<T: Scalar>(
    params: &ModelParams<T>,
    cache: &Cache<T>,
    grad_row: &[T],
) -> Result<(Grads<T>, Vec<T>)> {
    if cache.version != params.version {
        return Err(Error::Contract(
            "cache was produced by different or since-modified parameters".into(),
        ));
    }
    let spec = &params.spec;
    if grad_row.len() != spec.width {
        return Err(Error::validation(format!(
            "grad_row has {} entries, expected {}",
            grad_row.len(),
            spec.width
        )));
    }
    let mut g = Act {
        channels: 1,
        width: spec.width,
        n_time: 1,
        data: grad_row
            .iter()
            .zip(&cache.pre_clip)
            .map(|(&g, &y)| if y > T::zero() { g } else { T::zero() })
            .collect(),
    };
    let stack = spec.layers();
    let mut grads = Vec::with_capacity(stack.len());
    for ((layer, p), rec) in stack.iter().zip(&params.layers).zip(&cache.records).rev() {
        let (gx, lg) = match (layer, p, rec) {
            (LayerSpec::Conv { kernel, out_ch, .. }, LayerParams::Conv { w, .. }, Record::Conv { input }) => {
                let (gx, gw, gb) = kernels::conv_backward(input, *kernel, w, *out_ch, &g, true);
                (gx.expect("input grad requested"), LayerGrads::Conv { w: gw, b: gb })
            }
            (
                LayerSpec::BatchNorm { .. },
                LayerParams::BatchNorm { gamma, .. },
                Record::BatchNorm {
                    xhat, inv_std, stats, ..
                },
            ) => {
                let (gx, gg, gb) = kernels::bn_backward(xhat, inv_std, gamma, &g, stats.is_some());
                (gx, LayerGrads::BatchNorm { gamma: gg, beta: gb })
            }
            (LayerSpec::Relu, _, Record::Relu { output }) => {
                (kernels::relu_backward(output, g), LayerGrads::Stateless)
            }
            (LayerSpec::MaxPoolTime, _, Record::MaxPool { picks }) => {
                (kernels::maxpool_backward(picks, &g), LayerGrads::Stateless)
            }
            (LayerSpec::GlobalAvgTime, _, Record::GlobalAvg { n_time }) => {
                (kernels::global_avg_backward(*n_time, &g), LayerGrads::Stateless)
            }
            _ => return Err(Error::Contract("cache does not match layer stack".into())),
        };
        grads.push(lg);
        g = gx;
    }
    grads.reverse();
    Ok((Grads { layers: grads }, g.data))
}
