//! Weight container.
//!
//! ```text
//! magic        8 bytes   "EARSEGW\0"
//! version      u8        1
//! entry count  u32
//! entries      name_len u16, name (UTF-8), dtype u8 (1 = f32, 2 = f64),
//!              rank u8, dims rank × u64, byte offset u64 (into payload)
//! payload len  u64
//! payload      little-endian IEEE-754 values
//! ```
//!
//! All integers are little-endian.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::ops::RunningStats;
use crate::tensor::{DType, Scalar, Shape, Tensor};

use super::params::{expected_arrays, BatchNormParams, ConvLayerParams, NetworkParams};
use super::spec::NetworkSpec;

pub const MAGIC: &[u8; 8] = b"EARSEGW\0";
pub const VERSION: u8 = 1;

pub fn encode_params<T: Scalar>(params: &NetworkParams<T>) -> Vec<u8> {
    let arrays = params.named_arrays();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&(arrays.len() as u32).to_le_bytes());
    let mut offset = 0u64;
    for a in &arrays {
        out.extend_from_slice(&(a.name.len() as u16).to_le_bytes());
        out.extend_from_slice(a.name.as_bytes());
        out.push(T::DTYPE.code());
        out.push(a.shape.len() as u8);
        for &d in &a.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        out.extend_from_slice(&offset.to_le_bytes());
        offset += (a.data.len() * T::DTYPE.size()) as u64;
    }
    out.extend_from_slice(&offset.to_le_bytes());
    for a in &arrays {
        for &v in a.data {
            v.write_le(&mut out);
        }
    }
    out
}

pub fn save_params<T: Scalar>(params: &NetworkParams<T>, path: impl AsRef<Path>) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode_params(params))?;
    f.sync_all()?;
    Ok(())
}

pub fn load_params<T: Scalar>(path: impl AsRef<Path>, spec: &NetworkSpec) -> Result<NetworkParams<T>> {
    decode_params(&fs::read(path)?, spec)
}

struct Entry {
    name: String,
    dtype: DType,
    shape: Vec<usize>,
    offset: usize,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Truncated(format!(
                "header needs {n} more bytes at offset {} of {}",
                self.pos,
                self.bytes.len()
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<usize> {
        let v = u64::from_le_bytes(self.take(8)?.try_into().unwrap());
        usize::try_from(v).map_err(|_| Error::CorruptHeader(format!("value {v} does not fit in memory")))
    }
}

fn parse_header(bytes: &[u8]) -> Result<(Vec<Entry>, &[u8])> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(MAGIC.len()).map_err(|_| Error::CorruptHeader("file shorter than magic".into()))?;
    if magic != MAGIC {
        return Err(Error::CorruptHeader(format!("bad magic {magic:02x?}")));
    }
    let version = r.u8()?;
    if version != VERSION {
        return Err(Error::CorruptHeader(format!("unsupported version {version}")));
    }
    let count = r.u32()? as usize;
    let mut entries = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let len = r.u16()? as usize;
        let name = String::from_utf8(r.take(len)?.to_vec())
            .map_err(|_| Error::CorruptHeader("entry name is not UTF-8".into()))?;
        let code = r.u8()?;
        let dtype = DType::from_code(code)
            .ok_or_else(|| Error::CorruptHeader(format!("unknown element type {code} for `{name}`")))?;
        let rank = r.u8()? as usize;
        let shape = (0..rank).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
        let offset = r.u64()?;
        entries.push(Entry {
            name,
            dtype,
            shape,
            offset,
        });
    }
    let payload_len = r.u64()?;
    let payload = &bytes[r.pos..];
    for e in &entries {
        let size = e
            .shape
            .iter()
            .try_fold(e.dtype.size(), |acc, &d| acc.checked_mul(d))
            .and_then(|n| n.checked_add(e.offset))
            .ok_or_else(|| Error::CorruptHeader(format!("`{}` extent overflows", e.name)))?;
        if size > payload_len {
            return Err(Error::CorruptHeader(format!(
                "`{}` ends at byte {size} past the declared payload of {payload_len}",
                e.name
            )));
        }
    }
    if payload.len() < payload_len {
        return Err(Error::Truncated(format!(
            "payload declares {payload_len} bytes, file holds {}",
            payload.len()
        )));
    }
    Ok((entries, &payload[..payload_len]))
}

/// Decodes a container and checks every array against `spec`.
pub fn decode_params<T: Scalar>(bytes: &[u8], spec: &NetworkSpec) -> Result<NetworkParams<T>> {
    let (entries, payload) = parse_header(bytes)?;
    let expected = expected_arrays(spec);
    if entries.len() != expected.len() {
        return Err(Error::ParamCount {
            expected: expected.len(),
            found: entries.len(),
        });
    }
    let mut arrays: Vec<Vec<T>> = Vec::with_capacity(expected.len());
    for (name, shape) in &expected {
        let e = entries.iter().find(|e| e.name == *name).ok_or_else(|| Error::ParamShape {
            layer: name.clone(),
            expected: shape.clone(),
            found: Vec::new(),
        })?;
        if e.shape != *shape {
            return Err(Error::ParamShape {
                layer: name.clone(),
                expected: shape.clone(),
                found: e.shape.clone(),
            });
        }
        if e.dtype != T::DTYPE {
            return Err(Error::ElementType {
                layer: name.clone(),
                expected: T::DTYPE.name(),
                found: e.dtype.name(),
            });
        }
        let n: usize = shape.iter().product();
        let size = T::DTYPE.size();
        let raw = &payload[e.offset..e.offset + n * size];
        arrays.push(raw.chunks_exact(size).map(T::read_le).collect());
    }

    let mut it = arrays.into_iter();
    let mut layers = Vec::new();
    for (cin, filters, bn) in spec.conv_layers() {
        let weight = Tensor::from_vec(Shape::new(filters, cin, 3, 3), it.next().unwrap())?;
        let bias = it.next().unwrap();
        let bn = bn.then(|| BatchNormParams {
            gamma: it.next().unwrap(),
            beta: it.next().unwrap(),
            stats: RunningStats {
                mean: it.next().unwrap(),
                var: it.next().unwrap(),
            },
        });
        layers.push(ConvLayerParams { weight, bias, bn });
    }
    Ok(NetworkParams { layers })
}
