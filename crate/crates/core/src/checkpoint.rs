//! Binary container for named numeric arrays.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! b"NOHG" | u32 version | u32 record count
//! per record: u16 name length | name (UTF-8) | u8 dtype (0 = f64, 1 = i64)
//!             | u8 rank | rank x u64 dims | payload
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor3;

pub const MAGIC: [u8; 4] = *b"NOHG";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    F64(Vec<f64>),
    I64(Vec<i64>),
}

impl Payload {
    fn len(&self) -> usize {
        match self {
            Payload::F64(v) => v.len(),
            Payload::I64(v) => v.len(),
        }
    }

    fn dtype(&self) -> u8 {
        match self {
            Payload::F64(_) => 0,
            Payload::I64(_) => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub name: String,
    pub dims: Vec<u64>,
    pub payload: Payload,
}

/// Ordered collection of uniquely named records.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    records: Vec<Record>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn push(
        &mut self,
        name: impl Into<String>,
        dims: Vec<u64>,
        payload: Payload,
    ) -> Result<()> {
        let name = name.into();
        if name.len() > u16::MAX as usize {
            return Err(Error::Format(format!(
                "record name too long ({} bytes)",
                name.len()
            )));
        }
        if dims.len() > u8::MAX as usize {
            return Err(Error::Format(format!(
                "record {name} has rank {}",
                dims.len()
            )));
        }
        let count = dims.iter().try_fold(1u64, |a, &d| a.checked_mul(d));
        if count != Some(payload.len() as u64) {
            return Err(Error::Format(format!(
                "record {name}: dims {dims:?} do not match {} values",
                payload.len()
            )));
        }
        if self.get(&name).is_some() {
            return Err(Error::Format(format!("duplicate record {name}")));
        }
        self.records.push(Record {
            name,
            dims,
            payload,
        });
        Ok(())
    }

    pub fn push_f64(
        &mut self,
        name: impl Into<String>,
        dims: Vec<u64>,
        data: Vec<f64>,
    ) -> Result<()> {
        self.push(name, dims, Payload::F64(data))
    }

    pub fn push_i64(
        &mut self,
        name: impl Into<String>,
        dims: Vec<u64>,
        data: Vec<i64>,
    ) -> Result<()> {
        self.push(name, dims, Payload::I64(data))
    }

    pub fn push_tensor(&mut self, name: impl Into<String>, t: &Tensor3) -> Result<()> {
        let (a, b, c) = t.dims();
        self.push_f64(name, vec![a as u64, b as u64, c as u64], t.data().to_vec())
    }

    pub fn get(&self, name: &str) -> Option<&Record> {
        self.records.iter().find(|r| r.name == name)
    }

    fn require(&self, name: &str) -> Result<&Record> {
        self.get(name)
            .ok_or_else(|| Error::Format(format!("missing record {name}")))
    }

    pub fn f64s(&self, name: &str) -> Result<(&[u64], &[f64])> {
        let r = self.require(name)?;
        match &r.payload {
            Payload::F64(v) => Ok((&r.dims, v)),
            Payload::I64(_) => Err(Error::Format(format!("record {name} is not f64"))),
        }
    }

    pub fn i64s(&self, name: &str) -> Result<(&[u64], &[i64])> {
        let r = self.require(name)?;
        match &r.payload {
            Payload::I64(v) => Ok((&r.dims, v)),
            Payload::F64(_) => Err(Error::Format(format!("record {name} is not i64"))),
        }
    }

    pub fn tensor(&self, name: &str) -> Result<Tensor3> {
        let (dims, data) = self.f64s(name)?;
        if dims.len() != 3 {
            return Err(Error::Format(format!(
                "record {name} has rank {}",
                dims.len()
            )));
        }
        Tensor3::from_vec(
            (dims[0] as usize, dims[1] as usize, dims[2] as usize),
            data.to_vec(),
        )
    }

    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        w.write_all(&MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.records.len() as u32).to_le_bytes())?;
        for r in &self.records {
            w.write_all(&(r.name.len() as u16).to_le_bytes())?;
            w.write_all(r.name.as_bytes())?;
            w.write_all(&[r.payload.dtype(), r.dims.len() as u8])?;
            for d in &r.dims {
                w.write_all(&d.to_le_bytes())?;
            }
            match &r.payload {
                Payload::F64(v) => v.iter().try_for_each(|x| w.write_all(&x.to_le_bytes()))?,
                Payload::I64(v) => v.iter().try_for_each(|x| w.write_all(&x.to_le_bytes()))?,
            }
        }
        w.flush()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to memory");
        out
    }

    pub fn read_from(r: impl Read) -> Result<Self> {
        let mut src = Source { inner: r };
        if src.array::<4>()? != MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let version = u32::from_le_bytes(src.array()?);
        if version != VERSION {
            return Err(Error::Version {
                found: version,
                expected: VERSION,
            });
        }
        let count = u32::from_le_bytes(src.array()?);
        let mut ck = Checkpoint::new();
        for _ in 0..count {
            let len = u16::from_le_bytes(src.array()?) as usize;
            let name = String::from_utf8(src.bytes(len)?)
                .map_err(|_| Error::Format("record name is not UTF-8".into()))?;
            let [dtype, rank] = src.array()?;
            let mut dims = Vec::with_capacity(rank as usize);
            for _ in 0..rank {
                dims.push(u64::from_le_bytes(src.array()?));
            }
            let n = dims
                .iter()
                .try_fold(1u64, |a, &d| a.checked_mul(d))
                .and_then(|n| usize::try_from(n).ok())
                .ok_or_else(|| Error::Format(format!("record {name} is too large")))?;
            let raw = src.bytes(
                n.checked_mul(8)
                    .ok_or_else(|| Error::Format("overflow".into()))?,
            )?;
            let words = raw.chunks_exact(8).map(|c| c.try_into().expect("8 bytes"));
            let payload = match dtype {
                0 => Payload::F64(words.map(f64::from_le_bytes).collect()),
                1 => Payload::I64(words.map(i64::from_le_bytes).collect()),
                other => return Err(Error::Format(format!("unknown dtype {other} in {name}"))),
            };
            ck.push(name, dims, payload)?;
        }
        let mut rest = [0u8; 1];
        if src
            .inner
            .read(&mut rest)
            .map_err(|e| Error::Format(e.to_string()))?
            != 0
        {
            return Err(Error::Format("trailing bytes after last record".into()));
        }
        Ok(ck)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::read_from(bytes)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_to(BufWriter::new(f))
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(BufReader::new(f))
    }
}

struct Source<R> {
    inner: R,
}

impl<R: Read> Source<R> {
    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.inner.read_exact(&mut buf).map_err(truncated)?;
        Ok(buf)
    }

    fn bytes(&mut self, n: usize) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        (&mut self.inner)
            .take(n as u64)
            .read_to_end(&mut buf)
            .map_err(truncated)?;
        if buf.len() != n {
            return Err(Error::Format("truncated checkpoint".into()));
        }
        Ok(buf)
    }
}

fn truncated(e: std::io::Error) -> Error {
    Error::Format(format!("truncated checkpoint: {e}"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> Checkpoint {
        let mut ck = Checkpoint::new();
        ck.push_f64("w", vec![2, 2], vec![1.0, -0.5, f64::MIN_POSITIVE, 3.25])
            .unwrap();
        ck.push_i64("meta", vec![3], vec![7, -1, i64::MAX]).unwrap();
        ck.push_f64("empty", vec![0, 4], vec![]).unwrap();
        ck
    }

    #[test]
    fn header_layout() {
        let bytes = sample().to_bytes();
        assert_eq!(&bytes[..4], b"NOHG");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 3);
    }

    #[test]
    fn round_trip() {
        let ck = sample();
        assert_eq!(Checkpoint::from_bytes(&ck.to_bytes()).unwrap(), ck);
    }

    #[test]
    fn unknown_version_is_rejected() {
        let mut bytes = sample().to_bytes();
        bytes[4..8].copy_from_slice(&2u32.to_le_bytes());
        assert!(matches!(
            Checkpoint::from_bytes(&bytes),
            Err(Error::Version {
                found: 2,
                expected: 1
            })
        ));
    }

    #[test]
    fn corrupt_inputs_are_format_errors() {
        let bytes = sample().to_bytes();
        assert!(matches!(
            Checkpoint::from_bytes(&bytes[..bytes.len() - 3]),
            Err(Error::Format(_))
        ));
        assert!(matches!(
            Checkpoint::from_bytes(b"XXXX"),
            Err(Error::Format(_))
        ));
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(matches!(
            Checkpoint::from_bytes(&extra),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn mismatched_dims_and_duplicates_are_rejected() {
        let mut ck = Checkpoint::new();
        assert!(ck.push_f64("a", vec![3], vec![1.0]).is_err());
        ck.push_f64("a", vec![1], vec![1.0]).unwrap();
        assert!(ck.push_f64("a", vec![1], vec![1.0]).is_err());
    }

    #[test]
    fn tensor_round_trip() {
        let t = Tensor3::from_fn((2, 3, 4), |i, j, k| (i * 12 + j * 4 + k) as f64 * 0.1);
        let mut ck = Checkpoint::new();
        ck.push_tensor("t", &t).unwrap();
        assert_eq!(ck.tensor("t").unwrap(), t);
    }

    proptest! {
        #[test]
        fn bit_exact_round_trip(values in prop::collection::vec(any::<u64>(), 0..40),
                                ints in prop::collection::vec(any::<i64>(), 0..20)) {
            let floats: Vec<f64> = values.iter().map(|&b| f64::from_bits(b)).collect();
            let mut ck = Checkpoint::new();
            ck.push_f64("f", vec![floats.len() as u64], floats.clone()).unwrap();
            ck.push_i64("i", vec![ints.len() as u64], ints.clone()).unwrap();
            let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
            let (_, f) = back.f64s("f").unwrap();
            prop_assert!(f.iter().zip(&floats).all(|(a, b)| a.to_bits() == b.to_bits()));
            prop_assert_eq!(back.i64s("i").unwrap().1, &ints[..]);
        }
    }
}
