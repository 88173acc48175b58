//! Dense row-major tensors and their binary container formats.
//!
//! `TZT1` layout (all integers little-endian):
//!
//! | offset | size | field                         |
//! |--------|------|-------------------------------|
//! | 0      | 4    | magic `54 5A 54 31`           |
//! | 4      | 1    | dtype (0 = f32, 1 = f64)      |
//! | 5      | 1    | rank (1..=4)                  |
//! | 6      | 6    | zero                          |
//! | 12     | 8·r  | extents as u64                |
//! | ...    |      | row-major payload             |
//!
//! `TZC1` is a named list of `TZT1` records: magic, u32 entry count, then per
//! entry a u16 name length, the UTF-8 name and an embedded `TZT1` record.

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub const TENSOR_MAGIC: [u8; 4] = *b"TZT1";
pub const CHECKPOINT_MAGIC: [u8; 4] = *b"TZC1";
pub const MAX_RANK: usize = 4;
const TENSOR_FIXED_HEADER: usize = 12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DType {
    F32,
    F64,
}

impl DType {
    pub fn tag(self) -> u8 {
        match self {
            DType::F32 => 0,
            DType::F64 => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(DType::F32),
            1 => Ok(DType::F64),
            other => Err(Error::UnsupportedDtype(other)),
        }
    }

    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl TensorData {
    fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
        }
    }
}

/// An immutable n-dimensional array, last index fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: TensorData,
}

fn check_shape(shape: &[usize], len: usize) -> Result<()> {
    if shape.is_empty() || shape.len() > MAX_RANK {
        return Err(Error::validation(format!(
            "tensor rank must be in 1..={MAX_RANK}, got {}",
            shape.len()
        )));
    }
    if shape.iter().any(|&e| e == 0) {
        return Err(Error::validation(format!("zero extent in shape {shape:?}")));
    }
    let count = shape
        .iter()
        .try_fold(1usize, |acc, &e| acc.checked_mul(e))
        .ok_or_else(|| Error::validation(format!("shape {shape:?} overflows")))?;
    if count != len {
        return Err(Error::validation(format!(
            "shape {shape:?} needs {count} elements, got {len}"
        )));
    }
    Ok(())
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: TensorData) -> Result<Self> {
        check_shape(&shape, data.len())?;
        Ok(Self { shape, data })
    }

    pub fn from_f32(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        Self::new(shape, TensorData::F32(data))
    }

    pub fn from_f64(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        Self::new(shape, TensorData::F64(data))
    }

    pub fn zeros(shape: Vec<usize>, dtype: DType) -> Result<Self> {
        let n = shape.iter().product();
        match dtype {
            DType::F32 => Self::from_f32(shape, vec![0.0; n]),
            DType::F64 => Self::from_f64(shape, vec![0.0; n]),
        }
    }

    pub fn scalar_f32(value: f32) -> Self {
        Self {
            shape: vec![1],
            data: TensorData::F32(vec![value]),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.len() == 0
    }

    pub fn dtype(&self) -> DType {
        match self.data {
            TensorData::F32(_) => DType::F32,
            TensorData::F64(_) => DType::F64,
        }
    }

    pub fn data(&self) -> &TensorData {
        &self.data
    }

    pub fn as_f32(&self) -> Option<&[f32]> {
        match &self.data {
            TensorData::F32(v) => Some(v),
            TensorData::F64(_) => None,
        }
    }

    pub fn as_f64(&self) -> Option<&[f64]> {
        match &self.data {
            TensorData::F64(v) => Some(v),
            TensorData::F32(_) => None,
        }
    }

    pub fn into_f32_vec(self) -> Vec<f32> {
        match self.data {
            TensorData::F32(v) => v,
            TensorData::F64(v) => v.into_iter().map(|x| x as f32).collect(),
        }
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        match &self.data {
            TensorData::F32(v) => v.iter().map(|&x| x as f64).collect(),
            TensorData::F64(v) => v.clone(),
        }
    }

    pub fn expect_shape(&self, shape: &[usize], what: &str) -> Result<()> {
        if self.shape != shape {
            return Err(Error::validation(format!(
                "{what}: expected shape {shape:?}, got {:?}",
                self.shape
            )));
        }
        Ok(())
    }

    /// Serializes to a `TZT1` record.
    pub fn to_bytes(&self) -> Vec<u8> {
        let dtype = self.dtype();
        let mut out =
            Vec::with_capacity(TENSOR_FIXED_HEADER + 8 * self.rank() + dtype.size() * self.len());
        out.extend_from_slice(&TENSOR_MAGIC);
        out.push(dtype.tag());
        out.push(self.rank() as u8);
        out.extend_from_slice(&[0u8; 6]);
        for &extent in &self.shape {
            out.extend_from_slice(&(extent as u64).to_le_bytes());
        }
        match &self.data {
            TensorData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
        out
    }

    /// Parses one `TZT1` record from the front of `bytes`, returning the
    /// tensor and the number of bytes consumed.
    pub fn from_bytes(bytes: &[u8]) -> Result<(Self, usize)> {
        if bytes.len() < TENSOR_FIXED_HEADER {
            return Err(Error::Format(format!(
                "tensor header truncated ({} bytes)",
                bytes.len()
            )));
        }
        if bytes[..4] != TENSOR_MAGIC {
            return Err(Error::Format(format!(
                "bad tensor magic {:02X?}",
                &bytes[..4]
            )));
        }
        let dtype = DType::from_tag(bytes[4])?;
        let rank = bytes[5] as usize;
        if rank == 0 || rank > MAX_RANK {
            return Err(Error::Format(format!("bad tensor rank {rank}")));
        }
        let dims_end = TENSOR_FIXED_HEADER + 8 * rank;
        if bytes.len() < dims_end {
            return Err(Error::Format("tensor extents truncated".into()));
        }
        let shape: Vec<usize> = bytes[TENSOR_FIXED_HEADER..dims_end]
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().unwrap()) as usize)
            .collect();
        if shape.iter().any(|&e| e == 0) {
            return Err(Error::Format(format!("zero extent in shape {shape:?}")));
        }
        let count = shape
            .iter()
            .try_fold(1usize, |acc, &e| acc.checked_mul(e))
            .ok_or_else(|| Error::Format(format!("shape {shape:?} overflows")))?;
        let expected = count
            .checked_mul(dtype.size())
            .ok_or_else(|| Error::Format(format!("shape {shape:?} overflows")))?;
        let payload = &bytes[dims_end..];
        if payload.len() < expected {
            return Err(Error::Length {
                expected,
                found: payload.len(),
            });
        }
        let payload = &payload[..expected];
        let data = match dtype {
            DType::F32 => TensorData::F32(
                payload
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            DType::F64 => TensorData::F64(
                payload
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
        };
        Ok((Self { shape, data }, dims_end + expected))
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(bytes).map_err(|e| Error::io(path, e))?;
    file.flush().map_err(|e| Error::io(path, e))
}

pub fn write_tensor(t: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &t.to_bytes())
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (tensor, used) = Tensor::from_bytes(&bytes)?;
    if used != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after tensor payload",
            bytes.len() - used
        )));
    }
    Ok(tensor)
}

pub fn checkpoint_to_bytes(entries: &[(String, Tensor)]) -> Result<Vec<u8>> {
    let mut seen = HashSet::new();
    for (name, _) in entries {
        if !seen.insert(name.as_str()) {
            return Err(Error::validation(format!("duplicate checkpoint entry {name:?}")));
        }
        if name.len() > u16::MAX as usize {
            return Err(Error::validation(format!("entry name too long: {} bytes", name.len())));
        }
    }
    let count = u32::try_from(entries.len())
        .map_err(|_| Error::validation("too many checkpoint entries"))?;
    let mut out = Vec::new();
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&count.to_le_bytes());
    for (name, tensor) in entries {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&tensor.to_bytes());
    }
    Ok(out)
}

pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<Vec<(String, Tensor)>> {
    if bytes.len() < 8 || bytes[..4] != CHECKPOINT_MAGIC {
        return Err(Error::Format("bad checkpoint magic".into()));
    }
    let count = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let mut pos = 8;
    let mut entries = Vec::with_capacity(count.min(1024));
    let mut seen = HashSet::new();
    for index in 0..count {
        let malformed = || Error::Format(format!("checkpoint entry {index} is malformed"));
        let len_bytes = bytes.get(pos..pos + 2).ok_or_else(malformed)?;
        let name_len = u16::from_le_bytes(len_bytes.try_into().unwrap()) as usize;
        pos += 2;
        let name_bytes = bytes.get(pos..pos + name_len).ok_or_else(malformed)?;
        let name = std::str::from_utf8(name_bytes)
            .map_err(|_| Error::Format(format!("checkpoint entry {index} name is not UTF-8")))?
            .to_owned();
        pos += name_len;
        let (tensor, used) = Tensor::from_bytes(&bytes[pos..])
            .map_err(|e| Error::Format(format!("checkpoint entry {name:?}: {e}")))?;
        pos += used;
        if !seen.insert(name.clone()) {
            return Err(Error::validation(format!("duplicate checkpoint entry {name:?}")));
        }
        entries.push((name, tensor));
    }
    if pos != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after checkpoint entries",
            bytes.len() - pos
        )));
    }
    Ok(entries)
}

pub fn write_checkpoint(entries: &[(String, Tensor)], path: impl AsRef<Path>) -> Result<()> {
    let bytes = checkpoint_to_bytes(entries)?;
    write_file(path.as_ref(), &bytes)
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Vec<(String, Tensor)>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    checkpoint_from_bytes(&bytes)
}

/// Looks up a named entry in a checkpoint.
pub fn entry<'a>(entries: &'a [(String, Tensor)], name: &str) -> Result<&'a Tensor> {
    entries
        .iter()
        .find(|(n, _)| n == name)
        .map(|(_, t)| t)
        .ok_or_else(|| Error::Format(format!("checkpoint has no entry {name:?}")))
}
