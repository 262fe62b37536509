//! `.fmap` binary tensor container.
//!
//! Byte layout, all integers little-endian:
//!
//! ```text
//! magic   4 bytes  "FMAP"
//! version u32      1
//! dtype   u8       0 = f32, 1 = u8, 2 = f64
//! ndim    u32
//! extents ndim x u32
//! payload row-major, dtype-sized elements
//! ```
//!
//! f32 and u8 are the interchange dtypes for frames, masks, actions and
//! precomputed features; f64 exists so model parameters round-trip
//! bit-exactly.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, FmapError, Result};

pub const FMAP_MAGIC: &[u8; 4] = b"FMAP";
pub const FMAP_VERSION: u32 = 1;

/// Payload of a `.fmap` file.
#[derive(Debug, Clone, PartialEq)]
pub enum FmapData {
    F32(Vec<f32>),
    U8(Vec<u8>),
    F64(Vec<f64>),
}

impl FmapData {
    pub fn len(&self) -> usize {
        match self {
            FmapData::F32(v) => v.len(),
            FmapData::U8(v) => v.len(),
            FmapData::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn dtype_code(&self) -> u8 {
        match self {
            FmapData::F32(_) => 0,
            FmapData::U8(_) => 1,
            FmapData::F64(_) => 2,
        }
    }

    fn elem_size(code: u8) -> Option<usize> {
        match code {
            0 => Some(4),
            1 => Some(1),
            2 => Some(8),
            _ => None,
        }
    }
}

/// In-memory `.fmap` tensor: extents plus typed payload.
#[derive(Debug, Clone, PartialEq)]
pub struct Fmap {
    pub shape: Vec<u32>,
    pub data: FmapData,
}

impl Fmap {
    pub fn new(shape: Vec<u32>, data: FmapData) -> Result<Self> {
        let n: u64 = shape.iter().map(|&e| e as u64).product();
        if n != data.len() as u64 {
            return Err(Error::Shape(format!(
                "fmap shape {:?} implies {} elements, payload has {}",
                shape,
                n,
                data.len()
            )));
        }
        Ok(Fmap { shape, data })
    }

    pub fn shape_usize(&self) -> Vec<usize> {
        self.shape.iter().map(|&e| e as usize).collect()
    }

    pub fn as_f64(&self) -> Vec<f64> {
        match &self.data {
            FmapData::F32(v) => v.iter().map(|&x| x as f64).collect(),
            FmapData::U8(v) => v.iter().map(|&x| x as f64).collect(),
            FmapData::F64(v) => v.clone(),
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(FMAP_MAGIC);
        out.extend_from_slice(&FMAP_VERSION.to_le_bytes());
        out.push(self.data.dtype_code());
        out.extend_from_slice(&(self.shape.len() as u32).to_le_bytes());
        for e in &self.shape {
            out.extend_from_slice(&e.to_le_bytes());
        }
        match &self.data {
            FmapData::F32(v) => {
                for x in v {
                    out.extend_from_slice(&x.to_le_bytes());
                }
            }
            FmapData::U8(v) => out.extend_from_slice(v),
            FmapData::F64(v) => {
                for x in v {
                    out.extend_from_slice(&x.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        let magic = cur.take(4, "magic")?;
        if magic != FMAP_MAGIC {
            return Err(FmapError::BadMagic {
                found: String::from_utf8_lossy(magic).into_owned(),
            }
            .into());
        }
        let version = u32::from_le_bytes(cur.take(4, "version")?.try_into().unwrap());
        if version != FMAP_VERSION {
            return Err(FmapError::BadVersion { found: version, expected: FMAP_VERSION }.into());
        }
        let dtype = cur.take(1, "dtype")?[0];
        let elem = FmapData::elem_size(dtype).ok_or(FmapError::BadDtype(dtype))?;
        let ndim = u32::from_le_bytes(cur.take(4, "ndim")?.try_into().unwrap()) as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(u32::from_le_bytes(cur.take(4, "extents")?.try_into().unwrap()));
        }
        let n: u64 = shape.iter().map(|&e| e as u64).product();
        let need = (n as usize)
            .checked_mul(elem)
            .ok_or_else(|| FmapError::ExtentOverflow(format!("{shape:?}")))?;
        let rest = &cur.bytes[cur.pos..];
        if rest.len() < need {
            return Err(FmapError::TruncatedPayload { expected: need, got: rest.len() }.into());
        }
        if rest.len() > need {
            return Err(FmapError::TrailingBytes(rest.len() - need).into());
        }
        let data = match dtype {
            0 => FmapData::F32(
                rest.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect(),
            ),
            1 => FmapData::U8(rest.to_vec()),
            2 => FmapData::F64(
                rest.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect(),
            ),
            _ => unreachable!(),
        };
        Fmap::new(shape, data)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, field: &'static str) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(FmapError::TruncatedHeader { field }.into());
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
}

pub fn save_fmap(fmap: &Fmap, path: &Path) -> Result<()> {
    let bytes = fmap.encode();
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn load_fmap(path: &Path) -> Result<Fmap> {
    let mut f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::new();
    f.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
    Fmap::decode(&bytes)
}
