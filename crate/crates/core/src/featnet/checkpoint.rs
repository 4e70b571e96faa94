//! Binary checkpoint format, little-endian throughout:
//!
//! ```text
//! magic "SPCK" | version u32 | tensor count u32
//! per tensor: name_len u32 | name bytes | rank u32 | dims u32 × rank | f64 × prod(dims)
//! ```
//!
//! Each conv block contributes two tensors, `<name>.weight` (rank 4) and
//! `<name>.bias` (rank 1).

use std::path::Path;

use super::{Architecture, NetParams};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"SPCK";
const VERSION: u32 = 1;

pub fn encode_checkpoint(params: &NetParams) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(2 * params.layers().len() as u32).to_le_bytes());
    for l in params.layers() {
        let tensors: [(String, Vec<usize>, &[f64]); 2] = [
            (format!("{}.weight", l.name), l.weight_shape().to_vec(), &l.weight),
            (format!("{}.bias", l.name), vec![l.out_ch], &l.bias),
        ];
        for (name, dims, values) in tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
            for d in dims {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::format(
                self.bytes.len() as u64,
                format!("truncated checkpoint: needed {n} bytes at offset {}", self.pos),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Decodes a checkpoint and validates it tensor-by-tensor against `arch`.
pub fn decode_checkpoint(bytes: &[u8], arch: &Architecture) -> Result<NetParams> {
    let mut params = NetParams::zeros(arch)?;
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::format(0, "bad checkpoint magic"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::format(4, format!("unsupported checkpoint version {version}")));
    }
    let count_at = r.pos;
    let count = r.u32()? as usize;
    if count != 2 * params.layers().len() {
        return Err(Error::invalid(format!(
            "checkpoint has {count} tensors (byte {count_at}), architecture needs {}",
            2 * params.layers().len()
        )));
    }
    for layer in params.layers_mut() {
        for is_bias in [false, true] {
            let start = r.pos;
            let len = r.u32()? as usize;
            let name = String::from_utf8(r.take(len)?.to_vec())
                .map_err(|_| Error::format(start as u64 + 4, "tensor name is not UTF-8"))?;
            let rank = r.u32()? as usize;
            if rank > 8 {
                return Err(Error::format(start as u64, format!("implausible rank {rank}")));
            }
            let dims: Vec<usize> = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<_>>()?;
            let (want_name, want_dims, slot) = if is_bias {
                (format!("{}.bias", layer.name), vec![layer.out_ch], &mut layer.bias)
            } else {
                (format!("{}.weight", layer.name), layer.weight_shape().to_vec(), &mut layer.weight)
            };
            if name != want_name || dims != want_dims {
                return Err(Error::invalid(format!(
                    "checkpoint tensor {name} {dims:?} does not match architecture tensor {want_name} {want_dims:?}"
                )));
            }
            for v in slot.iter_mut() {
                *v = r.f64()?;
            }
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::format(r.pos as u64, "trailing bytes after last tensor"));
    }
    Ok(params)
}

pub fn save_checkpoint(path: &Path, params: &NetParams) -> Result<()> {
    std::fs::write(path, encode_checkpoint(params)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path, arch: &Architecture) -> Result<NetParams> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, arch).map_err(|e| e.in_file(path))
}
