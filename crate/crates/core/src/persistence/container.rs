use std::collections::HashSet;
use std::path::Path;

use super::{check_crc, push_crc, read_file, write_atomic, Reader};
use crate::error::{Error, Result};
use crate::scalar::DType;

pub const CONTAINER_MAGIC: &[u8; 4] = b"FGM1";
pub const CONTAINER_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl TensorData {
    pub fn dtype(&self) -> DType {
        match self {
            TensorData::F32(_) => DType::F32,
            TensorData::F64(_) => DType::F64,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_f64(&self) -> Vec<f64> {
        match self {
            TensorData::F32(v) => v.iter().map(|&x| x as f64).collect(),
            TensorData::F64(v) => v.clone(),
        }
    }

    fn bits_eq(&self, other: &TensorData) -> bool {
        match (self, other) {
            (TensorData::F32(a), TensorData::F32(b)) => a.iter().map(|x| x.to_bits()).eq(b.iter().map(|x| x.to_bits())),
            (TensorData::F64(a), TensorData::F64(b)) => a.iter().map(|x| x.to_bits()).eq(b.iter().map(|x| x.to_bits())),
            _ => false,
        }
    }
}

/// Named tensor of arbitrary rank.
#[derive(Debug, Clone)]
pub struct Entry {
    pub name: String,
    pub dims: Vec<u64>,
    pub data: TensorData,
}

impl Entry {
    pub fn new(name: impl Into<String>, dims: Vec<u64>, data: TensorData) -> Result<Self> {
        let name = name.into();
        let n = dims.iter().try_fold(1u64, |a, &d| a.checked_mul(d));
        if n != Some(data.len() as u64) {
            return Err(Error::shape(format!("tensor {name}: dims {dims:?} do not match {} values", data.len())));
        }
        if dims.len() > u8::MAX as usize {
            return Err(Error::invalid(format!("tensor {name}: rank {} too large", dims.len())));
        }
        Ok(Entry { name, dims, data })
    }

    pub fn f64(name: impl Into<String>, dims: Vec<u64>, data: Vec<f64>) -> Result<Self> {
        Entry::new(name, dims, TensorData::F64(data))
    }

    pub fn f32(name: impl Into<String>, dims: Vec<u64>, data: Vec<f32>) -> Result<Self> {
        Entry::new(name, dims, TensorData::F32(data))
    }
}

/// Bitwise equality (NaN payloads and signed zeros included).
impl PartialEq for Entry {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name && self.dims == other.dims && self.data.bits_eq(&other.data)
    }
}

pub fn encode_container(entries: &[Entry]) -> Result<Vec<u8>> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    out.extend_from_slice(CONTAINER_MAGIC);
    out.extend_from_slice(&CONTAINER_VERSION.to_le_bytes());
    for e in entries {
        if !seen.insert(e.name.as_str()) {
            return Err(Error::invalid(format!("duplicate tensor name {}", e.name)));
        }
        let name = e.name.as_bytes();
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name);
        out.push(e.data.dtype() as u8);
        out.push(e.dims.len() as u8);
        for d in &e.dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        match &e.data {
            TensorData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
    }
    Ok(push_crc(out))
}

pub fn decode_container(bytes: &[u8]) -> Result<Vec<Entry>> {
    if bytes.len() < 4 || &bytes[..4] != CONTAINER_MAGIC {
        return Err(Error::BadMagic { expected: "checkpoint" });
    }
    let body = check_crc(bytes)?;
    let mut r = Reader::new(body);
    r.take(4)?;
    let version = r.u32()?;
    if version != CONTAINER_VERSION {
        return Err(Error::Version(version));
    }
    let mut entries = Vec::new();
    let mut seen = HashSet::new();
    while !r.is_done() {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Corrupt("tensor name is not UTF-8".into()))?
            .to_string();
        if !seen.insert(name.clone()) {
            return Err(Error::Corrupt(format!("duplicate tensor name {name}")));
        }
        let dtype = DType::from_code(r.u8()?).ok_or_else(|| Error::Corrupt(format!("tensor {name}: unknown dtype")))?;
        let rank = r.u8()? as usize;
        let dims = (0..rank).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
        let count = dims
            .iter()
            .try_fold(1u64, |a, &d| a.checked_mul(d))
            .and_then(|n| usize::try_from(n).ok())
            .filter(|&n| n.checked_mul(dtype.width()).is_some())
            .ok_or_else(|| Error::Corrupt(format!("tensor {name}: dims overflow")))?;
        let payload = r.take(count * dtype.width())?;
        let data = match dtype {
            DType::F32 => TensorData::F32(payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect()),
            DType::F64 => TensorData::F64(payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect()),
        };
        entries.push(Entry { name, dims, data });
    }
    Ok(entries)
}

pub fn write_container(path: &Path, entries: &[Entry]) -> Result<()> {
    write_atomic(path, &encode_container(entries)?)
}

pub fn read_container(path: &Path) -> Result<Vec<Entry>> {
    decode_container(&read_file(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_container_round_trips() {
        let bytes = encode_container(&[]).unwrap();
        assert_eq!(bytes.len(), 12);
        assert!(decode_container(&bytes).unwrap().is_empty());
    }

    #[test]
    fn layout_is_fixed() {
        let e = Entry::f32("a", vec![2], vec![1.0, -0.0]).unwrap();
        let bytes = encode_container(&[e]).unwrap();
        let mut want = b"FGM1".to_vec();
        want.extend_from_slice(&1u32.to_le_bytes());
        want.extend_from_slice(&1u32.to_le_bytes());
        want.push(b'a');
        want.push(0);
        want.push(1);
        want.extend_from_slice(&2u64.to_le_bytes());
        want.extend_from_slice(&1f32.to_le_bytes());
        want.extend_from_slice(&(-0f32).to_le_bytes());
        let crc = crc32fast::hash(&want);
        want.extend_from_slice(&crc.to_le_bytes());
        assert_eq!(bytes, want);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(matches!(decode_container(b"XXXX\x01\0\0\0\0\0\0\0"), Err(Error::BadMagic { .. })));
        let mut bytes = encode_container(&[]).unwrap();
        bytes[4] = 2;
        let crc = crc32fast::hash(&bytes[..8]);
        bytes[8..].copy_from_slice(&crc.to_le_bytes());
        assert!(matches!(decode_container(&bytes), Err(Error::Version(2))));
        let e = Entry::f64("x", vec![1], vec![1.0]).unwrap();
        assert!(encode_container(&[e.clone(), e]).is_err());
        assert!(Entry::f64("x", vec![2, 2], vec![1.0]).is_err());
    }
}
