//! Named-tensor container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "FVSR" | u16 version = 1 | u32 count
//! per entry: u16 name_len | name | u8 dtype (0 = f32, 1 = f64) | u8 rank | u64 dims[rank] | payload
//! ```

use std::path::Path;

use fvsr_tensor::{DType, Scalar, Tensor};

use crate::{CoreError, Result};

pub const MAGIC: &[u8; 4] = b"FVSR";
pub const VERSION: u16 = 1;

#[derive(Clone, Debug, PartialEq)]
pub enum AnyTensor {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
}

impl AnyTensor {
    pub fn of<T: Scalar>(t: &Tensor<T>) -> Self {
        match T::DTYPE {
            DType::F32 => AnyTensor::F32(t.cast()),
            DType::F64 => AnyTensor::F64(t.cast()),
        }
    }

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

    /// Converts to element type `T` (exact when the dtype already matches).
    pub fn to<T: Scalar>(&self) -> Tensor<T> {
        match self {
            AnyTensor::F32(t) => t.cast(),
            AnyTensor::F64(t) => t.cast(),
        }
    }
}

impl From<Tensor<f32>> for AnyTensor {
    fn from(t: Tensor<f32>) -> Self {
        AnyTensor::F32(t)
    }
}

impl From<Tensor<f64>> for AnyTensor {
    fn from(t: Tensor<f64>) -> Self {
        AnyTensor::F64(t)
    }
}

pub type Entries = Vec<(String, AnyTensor)>;

fn write_payload<T: Scalar>(t: &Tensor<T>, out: &mut Vec<u8>) {
    out.reserve(t.size_bytes());
    for &x in t.data() {
        x.write_le(out);
    }
}

pub fn encode(entries: &[(String, AnyTensor)]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let count =
        u32::try_from(entries.len()).map_err(|_| CoreError::Contract("too many entries".into()))?;
    out.extend_from_slice(&count.to_le_bytes());
    for (name, tensor) in entries {
        let len = u16::try_from(name.len()).map_err(|_| {
            CoreError::Contract(format!("entry name too long: {} bytes", name.len()))
        })?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(tensor.dtype().code());
        let rank = u8::try_from(tensor.shape().len())
            .map_err(|_| CoreError::Contract(format!("rank of `{name}` exceeds 255")))?;
        out.push(rank);
        for &d in tensor.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        match tensor {
            AnyTensor::F32(t) => write_payload(t, &mut out),
            AnyTensor::F64(t) => write_payload(t, &mut out),
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(CoreError::Format {
                offset: self.pos,
                msg: format!(
                    "truncated while reading {what} ({n} bytes needed, {} left)",
                    self.bytes.len() - self.pos
                ),
            });
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn fail<T>(&self, at: usize, msg: String) -> Result<T> {
        Err(CoreError::Format { offset: at, msg })
    }

    fn tensor<T: Scalar>(&mut self, shape: Vec<usize>, numel: usize) -> Result<Tensor<T>> {
        let size = T::DTYPE.size_of();
        let at = self.pos;
        let Some(n) = numel.checked_mul(size) else {
            return self.fail(at, "payload size overflows".into());
        };
        let bytes = self.take(n, "payload")?;
        let data = bytes.chunks_exact(size).map(T::read_le).collect();
        Ok(Tensor::new(shape, data)?)
    }
}

pub fn decode(bytes: &[u8]) -> Result<Entries> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return r.fail(0, "bad magic, not an FVSR container".into());
    }
    let version = r.u16("version")?;
    if version != VERSION {
        return r.fail(4, format!("unsupported version {version}"));
    }
    let count = r.u32("entry count")?;
    let mut entries = Vec::new();
    for _ in 0..count {
        let len = r.u16("name length")? as usize;
        let at = r.pos;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| CoreError::Format {
                offset: at,
                msg: "entry name is not UTF-8".into(),
            })?
            .to_string();
        let at = r.pos;
        let code = r.u8("dtype")?;
        let dtype = match DType::from_code(code) {
            Some(d) => d,
            None => return r.fail(at, format!("unknown dtype code {code}")),
        };
        let rank = r.u8("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        let mut numel: usize = 1;
        for _ in 0..rank {
            let at = r.pos;
            let d = usize::try_from(r.u64("dimension")?).ok();
            match d.and_then(|d| numel.checked_mul(d).map(|n| (d, n))) {
                Some((d, n)) => {
                    shape.push(d);
                    numel = n;
                }
                None => return r.fail(at, "dimension overflows".into()),
            }
        }
        let tensor = match dtype {
            DType::F32 => AnyTensor::F32(r.tensor(shape, numel)?),
            DType::F64 => AnyTensor::F64(r.tensor(shape, numel)?),
        };
        entries.push((name, tensor));
    }
    if r.pos != bytes.len() {
        return r.fail(r.pos, format!("{} trailing bytes", bytes.len() - r.pos));
    }
    Ok(entries)
}

pub fn save_tensors(path: impl AsRef<Path>, entries: &[(String, AnyTensor)]) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode(entries)?).map_err(|e| CoreError::io(path, e))
}

pub fn load_tensors(path: impl AsRef<Path>) -> Result<Entries> {
    let path = path.as_ref();
    decode(&std::fs::read(path).map_err(|e| CoreError::io(path, e))?)
}

/// Looks up `name` in decoded entries.
pub fn find<'a>(entries: &'a [(String, AnyTensor)], name: &str) -> Result<&'a AnyTensor> {
    entries
        .iter()
        .find(|(n, _)| n == name)
        .map(|(_, t)| t)
        .ok_or_else(|| CoreError::Contract(format!("container has no entry `{name}`")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use fvsr_tensor::Rng;

    fn sample() -> Entries {
        let mut rng = Rng::new(1);
        vec![
            ("a".into(), AnyTensor::F32(Tensor::randn([2, 3], &mut rng))),
            ("b.c".into(), AnyTensor::F64(Tensor::randn([4], &mut rng))),
            ("scalar".into(), AnyTensor::F64(Tensor::scalar(-0.0))),
        ]
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let e = sample();
        let back = decode(&encode(&e).unwrap()).unwrap();
        assert_eq!(back.len(), 3);
        for ((n1, t1), (n2, t2)) in e.iter().zip(&back) {
            assert_eq!(n1, n2);
            assert_eq!(t1.to::<f64>().checksum(), t2.to::<f64>().checksum());
            assert_eq!(t1.dtype(), t2.dtype());
        }
    }

    #[test]
    fn empty_container() {
        let bytes = encode(&[]).unwrap();
        assert_eq!(bytes.len(), 10);
        assert!(decode(&bytes).unwrap().is_empty());
    }

    #[test]
    fn every_truncation_is_an_error() {
        let bytes = encode(&sample()).unwrap();
        for cut in 0..bytes.len() {
            match decode(&bytes[..cut]) {
                Err(CoreError::Format { offset, .. }) => assert!(offset <= cut),
                other => panic!("cut {cut}: {other:?}"),
            }
        }
    }

    #[test]
    fn bad_magic_and_version() {
        let mut bytes = encode(&[]).unwrap();
        bytes[5] = 9;
        assert!(matches!(
            decode(&bytes),
            Err(CoreError::Format { offset: 4, .. })
        ));
        bytes[0] = b'X';
        assert!(matches!(
            decode(&bytes),
            Err(CoreError::Format { offset: 0, .. })
        ));
    }

    #[test]
    fn corrupted_dimension_is_an_error() {
        let mut bytes = encode(&sample()[..1]).unwrap();
        // first dim of entry "a" starts after header(10) + len(2) + name(1) + dtype + rank
        bytes[15..23].copy_from_slice(&u64::MAX.to_le_bytes());
        assert!(decode(&bytes).is_err());
    }
}
