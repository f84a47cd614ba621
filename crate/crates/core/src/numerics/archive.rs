//! Binary tensor archive.
//!
//! Layout (little-endian): magic `FSTA`, version `u32`, entry count `u32`,
//! then per entry: name (`u16` byte length + UTF-8), dtype code `u8`
//! (0 = f32, 1 = f64), rank `u8`, extents (`u64` each), row-major payload.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::{DType, Scalar};

pub const MAGIC: &[u8; 4] = b"FSTA";
pub const VERSION: u32 = 1;

/// A tensor of either supported element type.
#[derive(Clone, Debug, PartialEq)]
pub enum AnyTensor {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
}

impl AnyTensor {
    pub fn dtype(&self) -> DType {
        match self {
            AnyTensor::F32(_) => DType::F32,
            AnyTensor::F64(_) => DType::F64,
        }
    }

    pub fn shape(&self) -> &[usize] {
        match self {
            AnyTensor::F32(t) => t.shape(),
            AnyTensor::F64(t) => t.shape(),
        }
    }

    pub fn from_tensor<S: Scalar>(t: &Tensor<S>) -> Self {
        match S::DTYPE {
            DType::F32 => AnyTensor::F32(t.cast()),
            DType::F64 => AnyTensor::F64(t.cast()),
        }
    }

    /// Converts to `S`; exact when the stored dtype already is `S`.
    pub fn to_tensor<S: Scalar>(&self) -> Tensor<S> {
        match self {
            AnyTensor::F32(t) => t.cast(),
            AnyTensor::F64(t) => t.cast(),
        }
    }
}

pub fn encode(entries: &[(String, AnyTensor)]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let count = u32::try_from(entries.len())
        .map_err(|_| Error::Archive("too many entries".into()))?;
    out.extend_from_slice(&count.to_le_bytes());
    for (name, t) in entries {
        let nb = name.as_bytes();
        let len = u16::try_from(nb.len())
            .map_err(|_| Error::Archive(format!("name too long: {name}")))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(nb);
        out.push(t.dtype().code());
        let rank = u8::try_from(t.shape().len())
            .map_err(|_| Error::Archive(format!("rank too large: {name}")))?;
        out.push(rank);
        for &e in t.shape() {
            out.extend_from_slice(&(e as u64).to_le_bytes());
        }
        match t {
            AnyTensor::F32(t) => t.data().iter().for_each(|&x| x.write_le(&mut out)),
            AnyTensor::F64(t) => t.data().iter().for_each(|&x| x.write_le(&mut out)),
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn bytes(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Archive(format!(
                "truncated at byte {} (need {n} more)",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.bytes(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes(8)?.try_into().unwrap()))
    }
}

fn read_payload<S: Scalar>(r: &mut Reader<'_>, shape: Vec<usize>) -> Result<Tensor<S>> {
    let n: usize = shape.iter().product();
    let size = S::DTYPE.size();
    let raw = r.bytes(n * size)?;
    let data = raw.chunks_exact(size).map(S::read_le).collect();
    Tensor::new(shape, data)
}

pub fn decode(buf: &[u8]) -> Result<Vec<(String, AnyTensor)>> {
    let mut r = Reader { buf, pos: 0 };
    if r.bytes(4)? != MAGIC {
        return Err(Error::Archive("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Archive(format!("unsupported version {version}")));
    }
    let count = r.u32()? as usize;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let len = r.u16()? as usize;
        let name = std::str::from_utf8(r.bytes(len)?)
            .map_err(|_| Error::Archive("entry name is not UTF-8".into()))?
            .to_string();
        let code = r.u8()?;
        let dtype = DType::from_code(code)
            .ok_or_else(|| Error::Archive(format!("unknown dtype code {code}")))?;
        let rank = r.u8()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u64()? as usize);
        }
        let t = match dtype {
            DType::F32 => AnyTensor::F32(read_payload(&mut r, shape)?),
            DType::F64 => AnyTensor::F64(read_payload(&mut r, shape)?),
        };
        entries.push((name, t));
    }
    if r.pos != buf.len() {
        return Err(Error::Archive(format!(
            "{} trailing bytes",
            buf.len() - r.pos
        )));
    }
    Ok(entries)
}

pub fn write(path: &Path, entries: &[(String, AnyTensor)]) -> Result<()> {
    let bytes = encode(entries)?;
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    // write-then-rename keeps readers from seeing partial files
    let tmp = path.with_extension("fsta.tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read(path: &Path) -> Result<Vec<(String, AnyTensor)>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

/// Reads an archive into a name → tensor map of element type `S`.
pub fn read_map<S: Scalar>(path: &Path) -> Result<BTreeMap<String, Tensor<S>>> {
    Ok(read(path)?
        .into_iter()
        .map(|(n, t)| (n, t.to_tensor()))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let t = Tensor::<f32>::vector(vec![1.0]);
        let bytes = encode(&[("a".into(), AnyTensor::from_tensor(&t))]).unwrap();
        assert_eq!(&bytes[0..4], b"FSTA");
        assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
        assert_eq!(&bytes[8..12], &1u32.to_le_bytes());
        assert_eq!(&bytes[12..14], &1u16.to_le_bytes());
        assert_eq!(bytes[14], b'a');
        assert_eq!(bytes[15], 0);
        assert_eq!(bytes[16], 1);
        assert_eq!(&bytes[17..25], &1u64.to_le_bytes());
        assert_eq!(&bytes[25..29], &1.0f32.to_le_bytes());
        assert_eq!(bytes.len(), 29);
    }

    #[test]
    fn rejects_garbage() {
        assert!(decode(b"NOPE").is_err());
        let t = Tensor::<f64>::vector(vec![1.0, 2.0]);
        let bytes = encode(&[("x".into(), AnyTensor::from_tensor(&t))]).unwrap();
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
    }

    proptest! {
        #[test]
        fn bit_exact_round_trip(
            a in proptest::collection::vec(proptest::num::f32::ANY, 0..24),
            b in proptest::collection::vec(proptest::num::f64::ANY, 1..24),
        ) {
            let ta = Tensor::vector(a.clone());
            let tb = Tensor::matrix(1, b.len(), b.clone()).unwrap();
            let entries = vec![
                ("enc.0.wq".to_string(), AnyTensor::F32(ta)),
                ("ünï".to_string(), AnyTensor::F64(tb)),
            ];
            let back = decode(&encode(&entries).unwrap()).unwrap();
            prop_assert_eq!(back.len(), 2);
            prop_assert_eq!(&back[0].0, "enc.0.wq");
            match (&back[0].1, &back[1].1) {
                (AnyTensor::F32(x), AnyTensor::F64(y)) => {
                    let xb: Vec<u32> = x.data().iter().map(|v| v.to_bits()).collect();
                    let ab: Vec<u32> = a.iter().map(|v| v.to_bits()).collect();
                    prop_assert_eq!(xb, ab);
                    let yb: Vec<u64> = y.data().iter().map(|v| v.to_bits()).collect();
                    let bb: Vec<u64> = b.iter().map(|v| v.to_bits()).collect();
                    prop_assert_eq!(yb, bb);
                    prop_assert_eq!(y.shape(), &[1, b.len()][..]);
                }
                _ => prop_assert!(false, "dtype changed"),
            }
        }
    }
}
