use std::fs;
use std::path::{Path, PathBuf};

use super::network::{LayerParams, ModelParams};
use super::{LayerSpec, ModelSpec, Variant};
use crate::error::{Error, Result};
use crate::tensor::{entry, read_checkpoint, write_checkpoint, Tensor};

/// Named tensors in checkpoint order.
pub fn params_to_entries(params: &ModelParams<f32>) -> Vec<(String, Tensor)> {
    let spec = params.spec();
    let mut out = Vec::new();
    for ((layer, p), name) in spec
        .layers()
        .iter()
        .zip(params.layers())
        .zip(spec.layer_names())
    {
        let Some(name) = name else { continue };
        match (layer, p) {
            (
                LayerSpec::Conv {
                    kernel,
                    in_ch,
                    out_ch,
                },
                LayerParams::Conv { w, b },
            ) => {
                let (kt, ks) = kernel.dims();
                out.push((
                    format!("{name}.w"),
                    Tensor::from_f32(vec![*out_ch, *in_ch, kt, ks], w.clone()).expect("shape"),
                ));
                out.push((
                    format!("{name}.b"),
                    Tensor::from_f32(vec![*out_ch], b.clone()).expect("shape"),
                ));
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
                for (suffix, v) in [
                    ("gamma", gamma),
                    ("beta", beta),
                    ("rmean", running_mean),
                    ("rvar", running_var),
                ] {
                    out.push((
                        format!("{name}.{suffix}"),
                        Tensor::from_f32(vec![*channels], v.clone()).expect("shape"),
                    ));
                }
            }
            _ => unreachable!("layer names align with parameterized layers"),
        }
    }
    out
}

fn f32_vec(t: &Tensor) -> Vec<f32> {
    t.as_f32()
        .map(<[f32]>::to_vec)
        .unwrap_or_else(|| t.to_f64_vec().into_iter().map(|v| v as f32).collect())
}

/// Rebuilds parameters for frames of `width × n_time`. Channel counts, convs
/// per block and the variant are read off the tensor shapes.
pub fn params_from_entries(
    entries: &[(String, Tensor)],
    width: usize,
    n_time: usize,
) -> Result<ModelParams<f32>> {
    let mut channels = Vec::new();
    let mut convs_per_block = 0;
    let mut spatial_block = None;
    for b in 1.. {
        if !entries.iter().any(|(n, _)| n == &format!("block{b}.conv1.w")) {
            break;
        }
        let mut j = 0;
        while entries
            .iter()
            .any(|(n, _)| n == &format!("block{b}.conv{}.w", j + 1))
        {
            j += 1;
        }
        if b == 1 {
            convs_per_block = j;
        } else if j != convs_per_block {
            return Err(Error::Format(format!(
                "block{b} has {j} convs, block1 has {convs_per_block}"
            )));
        }
        let w = entry(entries, &format!("block{b}.conv1.w"))?;
        if w.rank() != 4 {
            return Err(Error::Format(format!("block{b}.conv1.w must be rank 4")));
        }
        channels.push(w.shape()[0]);
        if w.shape()[2..] == [1, 3] {
            if spatial_block.is_some() {
                return Err(Error::Format("more than one spatial block conv".into()));
            }
            spatial_block = Some(b);
        }
    }
    let variant = match spatial_block {
        None => Variant::Last,
        Some(1) => Variant::V11,
        Some(4) => Variant::V41,
        Some(b) => {
            return Err(Error::Format(format!(
                "spatial conv in block {b} matches no known variant"
            )))
        }
    };
    let spec = ModelSpec {
        channels,
        convs_per_block,
        variant,
        width,
        n_time,
    };
    spec.validate()?;
    let mut layers = Vec::new();
    for (layer, name) in spec.layers().iter().zip(spec.layer_names()) {
        let p = match (layer, name) {
            (
                LayerSpec::Conv {
                    kernel,
                    in_ch,
                    out_ch,
                },
                Some(name),
            ) => {
                let (kt, ks) = kernel.dims();
                let w = entry(entries, &format!("{name}.w"))?;
                w.expect_shape(&[*out_ch, *in_ch, kt, ks], &format!("{name}.w"))?;
                let b = entry(entries, &format!("{name}.b"))?;
                b.expect_shape(&[*out_ch], &format!("{name}.b"))?;
                LayerParams::Conv {
                    w: f32_vec(w),
                    b: f32_vec(b),
                }
            }
            (LayerSpec::BatchNorm { channels }, Some(name)) => {
                let get = |suffix: &str| -> Result<Vec<f32>> {
                    let key = format!("{name}.{suffix}");
                    let t = entry(entries, &key)?;
                    t.expect_shape(&[*channels], &key)?;
                    Ok(f32_vec(t))
                };
                LayerParams::BatchNorm {
                    gamma: get("gamma")?,
                    beta: get("beta")?,
                    running_mean: get("rmean")?,
                    running_var: get("rvar")?,
                }
            }
            _ => LayerParams::Stateless,
        };
        layers.push(p);
    }
    let expected = spec
        .layers()
        .iter()
        .filter(|l| matches!(l, LayerSpec::Conv { .. }))
        .count()
        * 2
        + spec
            .layers()
            .iter()
            .filter(|l| matches!(l, LayerSpec::BatchNorm { .. }))
            .count()
            * 4;
    if entries.len() != expected {
        return Err(Error::Format(format!(
            "checkpoint has {} entries, model needs {expected}",
            entries.len()
        )));
    }
    let tail = entry(entries, "tail.conv.w")?;
    if tail.shape()[2..] != [1, 3] {
        return Err(Error::Format("tail conv must be 1×3".into()));
    }
    ModelParams::from_layers(&spec, layers)
}

/// `key = value` text stored next to a checkpoint.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Sidecar {
    pub pairs: Vec<(String, String)>,
}

impl Sidecar {
    pub fn path_for(ckpt: &Path) -> PathBuf {
        let mut s = ckpt.as_os_str().to_owned();
        s.push(".txt");
        PathBuf::from(s)
    }

    pub fn render(&self) -> String {
        self.pairs
            .iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("line {}: expected key = value", n + 1)))?;
            pairs.push((k.trim().to_string(), v.trim().to_string()));
        }
        Ok(Self { pairs })
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.pairs
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    fn get_usize(&self, key: &str) -> Result<usize> {
        self.get(key)
            .ok_or_else(|| Error::Format(format!("sidecar lacks {key}")))?
            .parse()
            .map_err(|e| Error::Format(format!("sidecar {key}: {e}")))
    }
}

/// Writes the checkpoint and its sidecar (`<path>.txt`) holding the model
/// spec followed by `extra` pairs.
pub fn write_model(
    path: impl AsRef<Path>,
    params: &ModelParams<f32>,
    extra: &[(String, String)],
) -> Result<()> {
    let path = path.as_ref();
    write_checkpoint(&params_to_entries(params), path)?;
    let mut pairs = params.spec().to_pairs();
    pairs.extend_from_slice(extra);
    let side = Sidecar::path_for(path);
    fs::write(&side, Sidecar { pairs }.render()).map_err(|e| Error::io(side, e))
}

/// Reads a checkpoint written by [`write_model`], taking the frame size from
/// its sidecar.
pub fn read_model(path: impl AsRef<Path>) -> Result<(ModelParams<f32>, Sidecar)> {
    let path = path.as_ref();
    let entries = read_checkpoint(path)?;
    let side_path = Sidecar::path_for(path);
    let text = fs::read_to_string(&side_path).map_err(|e| Error::io(&side_path, e))?;
    let side = Sidecar::parse(&text)?;
    let params = params_from_entries(&entries, side.get_usize("width")?, side.get_usize("n_time")?)?;
    if let Some(v) = side.get("variant") {
        if v.parse::<Variant>()? != params.spec().variant {
            return Err(Error::Format(format!(
                "sidecar variant {v} disagrees with weight shapes ({})",
                params.spec().variant
            )));
        }
    }
    Ok((params, side))
}
