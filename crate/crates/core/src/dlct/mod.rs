//! Convolutional model mapping one spatio-temporal frame (detector position ×
//! time) to one sinogram row.
//!
//! Six blocks of temporal 3×1 convolutions with batch normalization contract
//! the time axis, a global time average removes it, and a 1×3 convolution
//! across detector positions produces the row. The `v11` and `v41` variants
//! move the spatial kernel into the first conv of block 1 or block 4.

mod checkpoint;
pub mod kernels;
mod network;
mod train;

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

pub use checkpoint::{params_from_entries, params_to_entries, read_model, write_model, Sidecar};
pub use kernels::{Act, Scalar};
pub use network::{
    backward, forward, Cache, Grads, LayerGrads, LayerParams, Mode, ModelParams, BN_EPS, BN_MOMENTUM,
};
pub use train::{
    adam_step, mse_loss, predict_row, predict_sinogram, train, warm_start_output, AdamState, Hyper, TrainOutput,
};

/// Axis a 3-tap kernel slides along.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kernel {
    /// 3×1: taps at t−1, t, t+1.
    Time,
    /// 1×3: taps at s−1, s, s+1.
    Space,
}

impl Kernel {
    /// `(k_t, k_s)` as stored in weight tensors.
    pub fn dims(self) -> (usize, usize) {
        match self {
            Kernel::Time => (3, 1),
            Kernel::Space => (1, 3),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerSpec {
    Conv {
        kernel: Kernel,
        in_ch: usize,
        out_ch: usize,
    },
    BatchNorm {
        channels: usize,
    },
    Relu,
    MaxPoolTime,
    GlobalAvgTime,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub enum Variant {
    #[default]
    Last,
    V11,
    V41,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Last => "last",
            Variant::V11 => "v11",
            Variant::V41 => "v41",
        }
    }

    /// Block (1-based) whose first conv is spatial, if any.
    fn spatial_block(self) -> Option<usize> {
        match self {
            Variant::Last => None,
            Variant::V11 => Some(1),
            Variant::V41 => Some(4),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "last" | "dlct" => Ok(Variant::Last),
            "v11" => Ok(Variant::V11),
            "v41" => Ok(Variant::V41),
            other => Err(Error::validation(format!("unknown variant {other:?}"))),
        }
    }
}

pub const DEFAULT_CHANNELS: [usize; 6] = [8, 16, 32, 32, 64, 64];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelSpec {
    pub channels: Vec<usize>,
    pub convs_per_block: usize,
    pub variant: Variant,
    pub width: usize,
    pub n_time: usize,
}

impl ModelSpec {
    pub fn new(variant: Variant, width: usize, n_time: usize) -> Self {
        Self {
            channels: DEFAULT_CHANNELS.to_vec(),
            convs_per_block: 2,
            variant,
            width,
            n_time,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() || self.channels.contains(&0) {
            return Err(Error::validation("channel counts must be positive"));
        }
        if self.convs_per_block == 0 {
            return Err(Error::validation("convs_per_block must be ≥ 1"));
        }
        if let Some(b) = self.variant.spatial_block() {
            if b > self.channels.len() {
                return Err(Error::validation(format!(
                    "variant {} needs at least {b} blocks",
                    self.variant
                )));
            }
        }
        if self.width < 1 {
            return Err(Error::validation("width must be ≥ 1"));
        }
        let div = 1usize << self.channels.len();
        if self.n_time == 0 || self.n_time % div != 0 {
            return Err(Error::validation(format!(
                "n_time {} not divisible by 2^{}",
                self.n_time,
                self.channels.len()
            )));
        }
        Ok(())
    }

    /// The full layer stack, blocks then tail.
    pub fn layers(&self) -> Vec<LayerSpec> {
        let mut layers = Vec::new();
        let mut in_ch = 1;
        for (b, &out_ch) in self.channels.iter().enumerate() {
            for j in 0..self.convs_per_block {
                let kernel = if j == 0 && self.variant.spatial_block() == Some(b + 1) {
                    Kernel::Space
                } else {
                    Kernel::Time
                };
                layers.push(LayerSpec::Conv {
                    kernel,
                    in_ch,
                    out_ch,
                });
                layers.push(LayerSpec::BatchNorm { channels: out_ch });
                layers.push(LayerSpec::Relu);
                in_ch = out_ch;
            }
            layers.push(LayerSpec::MaxPoolTime);
        }
        layers.push(LayerSpec::GlobalAvgTime);
        layers.push(LayerSpec::Conv {
            kernel: Kernel::Space,
            in_ch,
            out_ch: 1,
        });
        layers
    }

    /// Checkpoint name stem for each parameterized layer, aligned with
    /// [`ModelSpec::layers`] (`None` for stateless layers).
    pub fn layer_names(&self) -> Vec<Option<String>> {
        let mut names = Vec::new();
        for b in 1..=self.channels.len() {
            for j in 1..=self.convs_per_block {
                names.push(Some(format!("block{b}.conv{j}")));
                names.push(Some(format!("block{b}.bn{j}")));
                names.push(None);
            }
            names.push(None);
        }
        names.push(None);
        names.push(Some("tail.conv".to_string()));
        names
    }

    /// Number of input time samples that can influence one activation at the
    /// input of the first spatial conv. A global time average before it
    /// makes the answer the whole trace.
    pub fn temporal_receptive_field(&self) -> usize {
        let mut rf = 1usize;
        let mut jump = 1usize;
        for layer in self.layers() {
            match layer {
                LayerSpec::Conv {
                    kernel: Kernel::Space,
                    ..
                } => break,
                LayerSpec::Conv { .. } => rf += 2 * jump,
                LayerSpec::MaxPoolTime => {
                    rf += jump;
                    jump *= 2;
                }
                LayerSpec::GlobalAvgTime => rf = self.n_time,
                LayerSpec::BatchNorm { .. } | LayerSpec::Relu => {}
            }
        }
        rf.min(self.n_time)
    }

    /// Receptive field of the last temporal activation before any global
    /// average, ignoring the trace length.
    pub fn pre_pool_receptive_field(&self) -> usize {
        let mut rf = 1usize;
        let mut jump = 1usize;
        for layer in self.layers() {
            match layer {
                LayerSpec::Conv {
                    kernel: Kernel::Space,
                    ..
                } => break,
                LayerSpec::Conv { .. } => rf += 2 * jump,
                LayerSpec::MaxPoolTime => {
                    rf += jump;
                    jump *= 2;
                }
                LayerSpec::GlobalAvgTime => break,
                LayerSpec::BatchNorm { .. } | LayerSpec::Relu => {}
            }
        }
        rf
    }

    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let channels = self
            .channels
            .iter()
            .map(|c| c.to_string())
            .collect::<Vec<_>>()
            .join(",");
        vec![
            ("variant".into(), self.variant.to_string()),
            ("channels".into(), channels),
            ("convs_per_block".into(), self.convs_per_block.to_string()),
            ("width".into(), self.width.to_string()),
            ("n_time".into(), self.n_time.to_string()),
        ]
    }
}
