//! `.dten` tensor container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "DTEN" | version: u16 | count: u16
//! per entry: name_len: u16 | name | dtype: u8 | rank: u8 | extents: u64 × rank | payload
//! ```
//!
//! dtype `0` is float32 and `1` is float64; payloads are row-major.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::scalar::DType;
use crate::{Scalar, Tensor};

pub const MAGIC: &[u8; 4] = b"DTEN";
pub const VERSION: u16 = 1;
pub const EXTENSION: &str = "dten";

#[derive(Debug, Error)]
pub enum ContainerError {
    #[error("container io: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported container version {0}")]
    UnsupportedVersion(u16),
    #[error("truncated container: needed {needed} bytes at offset {offset}, {available} available")]
    Truncated {
        offset: usize,
        needed: usize,
        available: usize,
    },
    #[error("duplicate entry name {0:?}")]
    DuplicateName(String),
    #[error("unknown dtype code {0}")]
    UnknownDtype(u8),
    #[error("{0} trailing bytes after last entry")]
    TrailingBytes(usize),
    #[error("entry name is not valid UTF-8")]
    BadName,
    #[error("{what} {value} exceeds the format limit {limit}")]
    Limit { what: &'static str, value: usize, limit: usize },
}

/// Tensor payload tagged with its element type.
#[derive(Clone, Debug, PartialEq)]
pub enum TensorData {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
}

impl TensorData {
    pub fn from_tensor<T: Scalar>(t: &Tensor<T>) -> Self {
        match T::DTYPE {
            DType::F32 => TensorData::F32(t.cast()),
            DType::F64 => TensorData::F64(t.cast()),
        }
    }

    pub fn dtype(&self) -> DType {
        match self {
            TensorData::F32(_) => DType::F32,
            TensorData::F64(_) => DType::F64,
        }
    }

    pub fn shape(&self) -> &[usize] {
        match self {
            TensorData::F32(t) => t.shape(),
            TensorData::F64(t) => t.shape(),
        }
    }

    /// Converts to `T`, rounding if narrower.
    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        match self {
            TensorData::F32(t) => t.cast(),
            TensorData::F64(t) => t.cast(),
        }
    }

    /// Bitwise equality, distinguishing `-0.0` and NaN payloads.
    pub fn bit_eq(&self, other: &TensorData) -> bool {
        match (self, other) {
            (TensorData::F32(a), TensorData::F32(b)) => {
                a.shape() == b.shape() && a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits())
            }
            (TensorData::F64(a), TensorData::F64(b)) => {
                a.shape() == b.shape() && a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits())
            }
            _ => false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub name: String,
    pub data: TensorData,
}

impl Entry {
    pub fn new(name: impl Into<String>, data: TensorData) -> Self {
        Entry { name: name.into(), data }
    }
}

fn payload<T: Scalar>(t: &Tensor<T>, out: &mut Vec<u8>) {
    for &v in t.data() {
        v.write_le(out);
    }
}

pub fn encode(entries: &[Entry]) -> Result<Vec<u8>, ContainerError> {
    if entries.len() > u16::MAX as usize {
        return Err(ContainerError::Limit {
            what: "entry count",
            value: entries.len(),
            limit: u16::MAX as usize,
        });
    }
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(entries.len() as u16).to_le_bytes());
    for e in entries {
        if !seen.insert(e.name.as_str()) {
            return Err(ContainerError::DuplicateName(e.name.clone()));
        }
        let name = e.name.as_bytes();
        if name.len() > u16::MAX as usize {
            return Err(ContainerError::Limit {
                what: "name length",
                value: name.len(),
                limit: u16::MAX as usize,
            });
        }
        let shape = e.data.shape();
        if shape.len() > u8::MAX as usize {
            return Err(ContainerError::Limit {
                what: "rank",
                value: shape.len(),
                limit: u8::MAX as usize,
            });
        }
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name);
        out.push(e.data.dtype().code());
        out.push(shape.len() as u8);
        for &d in shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        match &e.data {
            TensorData::F32(t) => payload(t, &mut out),
            TensorData::F64(t) => payload(t, &mut out),
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ContainerError> {
        let available = self.bytes.len() - self.pos;
        if n > available {
            return Err(ContainerError::Truncated {
                offset: self.pos,
                needed: n,
                available,
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, ContainerError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, ContainerError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u64(&mut self) -> Result<u64, ContainerError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn tensor<T: Scalar>(&mut self, shape: Vec<usize>, count: usize) -> Result<Tensor<T>, ContainerError> {
        let size = T::DTYPE.size();
        let bytes = self.take(count.checked_mul(size).ok_or(ContainerError::Limit {
            what: "payload size",
            value: count,
            limit: usize::MAX / size,
        })?)?;
        let data = bytes.chunks_exact(size).map(T::read_le).collect();
        Ok(Tensor::new(shape, data).expect("extent product matches payload"))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Vec<Entry>, ContainerError> {
    let mut r = Reader { bytes, pos: 0 };
    let magic: [u8; 4] = r.take(4)?.try_into().expect("4 bytes");
    if &magic != MAGIC {
        return Err(ContainerError::BadMagic(magic));
    }
    let version = r.u16()?;
    if version != VERSION {
        return Err(ContainerError::UnsupportedVersion(version));
    }
    let count = r.u16()? as usize;
    let mut entries = Vec::with_capacity(count);
    let mut seen = HashSet::new();
    for _ in 0..count {
        let len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| ContainerError::BadName)?
            .to_owned();
        if !seen.insert(name.clone()) {
            return Err(ContainerError::DuplicateName(name));
        }
        let code = r.u8()?;
        let dtype = DType::from_code(code).ok_or(ContainerError::UnknownDtype(code))?;
        let rank = r.u8()? as usize;
        let mut shape = Vec::with_capacity(rank);
        let mut n: usize = 1;
        for _ in 0..rank {
            let d = usize::try_from(r.u64()?).map_err(|_| ContainerError::Limit {
                what: "extent",
                value: usize::MAX,
                limit: usize::MAX,
            })?;
            n = n.checked_mul(d).ok_or(ContainerError::Limit {
                what: "element count",
                value: usize::MAX,
                limit: usize::MAX,
            })?;
            shape.push(d);
        }
        let data = match dtype {
            DType::F32 => TensorData::F32(r.tensor(shape, n)?),
            DType::F64 => TensorData::F64(r.tensor(shape, n)?),
        };
        entries.push(Entry { name, data });
    }
    let rest = bytes.len() - r.pos;
    if rest != 0 {
        return Err(ContainerError::TrailingBytes(rest));
    }
    Ok(entries)
}

pub fn write_container(path: impl AsRef<Path>, entries: &[Entry]) -> Result<(), ContainerError> {
    fs::write(path, encode(entries)?)?;
    Ok(())
}

pub fn read_container(path: impl AsRef<Path>) -> Result<Vec<Entry>, ContainerError> {
    decode(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vec<Entry> {
        vec![
            Entry::new("a", TensorData::F32(Tensor::new(vec![2, 2], vec![1.0, -0.0, f32::MIN_POSITIVE, 3.5]).unwrap())),
            Entry::new("b", TensorData::F64(Tensor::new(vec![3], vec![0.1, 1e300, -2.0]).unwrap())),
            Entry::new("s", TensorData::F64(Tensor::scalar(7.0))),
        ]
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let e = sample();
        let back = decode(&encode(&e).unwrap()).unwrap();
        assert_eq!(back.len(), 3);
        for (x, y) in e.iter().zip(&back) {
            assert_eq!(x.name, y.name);
            assert!(x.data.bit_eq(&y.data));
        }
    }

    #[test]
    fn header_layout() {
        let bytes = encode(&sample()[2..]).unwrap();
        assert_eq!(&bytes[..4], b"DTEN");
        assert_eq!(&bytes[4..8], &[1, 0, 1, 0]);
        assert_eq!(&bytes[8..11], &[1, 0, b's']);
        assert_eq!(&bytes[11..13], &[1, 0]);
        assert_eq!(bytes.len(), 13 + 8);
    }

    #[test]
    fn empty_list_is_valid() {
        let bytes = encode(&[]).unwrap();
        assert_eq!(bytes.len(), 8);
        assert!(decode(&bytes).unwrap().is_empty());
    }

    #[test]
    fn distinct_errors() {
        let mut bytes = encode(&sample()).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode(&bad), Err(ContainerError::BadMagic(_))));
        assert!(matches!(decode(&bytes[..bytes.len() - 1]), Err(ContainerError::Truncated { .. })));
        let mut dup = sample();
        dup[1].name = "a".into();
        assert!(matches!(encode(&dup), Err(ContainerError::DuplicateName(_))));
        // dtype byte of the first entry sits after header (8) + name len (2) + name (1)
        bytes[11] = 9;
        assert!(matches!(decode(&bytes), Err(ContainerError::UnknownDtype(9))));
        let mut long = encode(&sample()).unwrap();
        long.push(0);
        assert!(matches!(decode(&long), Err(ContainerError::TrailingBytes(1))));
        let mut v = encode(&[]).unwrap();
        v[4] = 2;
        assert!(matches!(decode(&v), Err(ContainerError::UnsupportedVersion(2))));
    }
}
