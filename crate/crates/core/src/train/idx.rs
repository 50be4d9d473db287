//! IDX container files: a big-endian header `00 00 tt nd`, `nd` u32 extents,
//! then the payload. Only the unsigned-byte element type (`tt = 0x08`) is
//! supported.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const UBYTE: u8 = 0x08;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

fn format(offset: usize, detail: impl Into<String>) -> Error {
    Error::Format { offset: offset as u64, detail: detail.into() }
}

impl IdxArray {
    pub fn new(dims: Vec<usize>, data: Vec<u8>) -> Result<Self> {
        if dims.is_empty() || dims.len() > 255 {
            return Err(Error::dim(format!("idx arrays need 1..=255 dimensions, got {}", dims.len())));
        }
        if dims.iter().product::<usize>() != data.len() {
            return Err(Error::dim(format!("idx extents {dims:?} do not match {} bytes", data.len())));
        }
        Ok(IdxArray { dims, data })
    }

    pub fn parse(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 {
            return Err(format(bytes.len(), "truncated magic"));
        }
        if bytes[0] != 0 || bytes[1] != 0 {
            return Err(format(0, format!("bad magic {:02x}{:02x}", bytes[0], bytes[1])));
        }
        if bytes[2] != UBYTE {
            return Err(format(2, format!("unsupported element type 0x{:02x}", bytes[2])));
        }
        let nd = bytes[3] as usize;
        if nd == 0 {
            return Err(format(3, "zero dimensions"));
        }
        let header = 4 + 4 * nd;
        if bytes.len() < header {
            return Err(format(bytes.len(), format!("truncated header: {nd} extents need {header} bytes")));
        }
        let dims: Vec<usize> =
            bytes[4..header].chunks_exact(4).map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]) as usize).collect();
        let len = dims
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| format(4, "extent product overflows"))?;
        let end = header.checked_add(len).ok_or_else(|| format(4, "extent product overflows"))?;
        if bytes.len() < end {
            return Err(format(bytes.len(), format!("truncated payload: expected {len} bytes after offset {header}")));
        }
        if bytes.len() > end {
            return Err(format(end, "trailing bytes after payload"));
        }
        Ok(IdxArray { dims, data: bytes[header..].to_vec() })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 + 4 * self.dims.len() + self.data.len());
        out.extend_from_slice(&[0, 0, UBYTE, self.dims.len() as u8]);
        for &d in &self.dims {
            out.extend_from_slice(&(d as u32).to_be_bytes());
        }
        out.extend_from_slice(&self.data);
        out
    }

    pub fn len(&self) -> usize {
        self.dims[0]
    }

    pub fn is_empty(&self) -> bool {
        self.dims[0] == 0
    }

    /// `N×H×W` images as an `N×1×H×W` tensor scaled to `[0, 1]` by `/255`.
    pub fn images(&self) -> Result<Tensor<f32>> {
        let &[n, h, w] = &self.dims[..] else {
            return Err(Error::Data(format!("image file must have 3 dimensions, got {:?}", self.dims)));
        };
        Tensor::from_vec([n, 1, h, w], self.data.iter().map(|&b| b as f32 / 255.0).collect())
    }

    pub fn labels(&self) -> Result<Vec<usize>> {
        if self.dims.len() != 1 {
            return Err(Error::Data(format!("label file must have 1 dimension, got {:?}", self.dims)));
        }
        Ok(self.data.iter().map(|&b| b as usize).collect())
    }
}

pub fn load_idx(path: impl AsRef<Path>) -> Result<IdxArray> {
    IdxArray::parse(&std::fs::read(path)?)
}

pub fn write_idx(path: impl AsRef<Path>, array: &IdxArray) -> Result<()> {
    std::fs::write(path, array.to_bytes())?;
    Ok(())
}
