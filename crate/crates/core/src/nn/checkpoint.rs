//! Binary checkpoint container.
//!
//! Layout, little-endian: 8 magic bytes, `u32` format version, `u64`
//! iteration, `u32` tensor count, then per tensor `u32` name length, UTF-8
//! name, `u32` rank, `u32` dims, and `f32` payload.

use std::path::Path;

use crate::error::{Error, Result};

pub const MODEL_MAGIC: [u8; 8] = *b"FCNET1\0\0";
pub const MULTIFRAME_MAGIC: [u8; 8] = *b"FCMF1\0\0\0";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl NamedTensor {
    pub fn from_f64(name: &str, dims: &[usize], data: &[f64]) -> Self {
        Self {
            name: name.to_string(),
            dims: dims.to_vec(),
            data: data.iter().map(|&v| v as f32).collect(),
        }
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| v as f64).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub magic: [u8; 8],
    pub iteration: u64,
    pub tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn new(magic: [u8; 8], iteration: u64, tensors: Vec<NamedTensor>) -> Self {
        Self {
            magic,
            iteration,
            tensors,
        }
    }

    pub fn get(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(&self.magic);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.iteration.to_le_bytes());
        out.extend_from_slice(&u32_len(self.tensors.len(), "tensor count")?.to_le_bytes());
        for t in &self.tensors {
            if t.dims.iter().product::<usize>() != t.data.len() {
                return Err(Error::shape(
                    format!("checkpoint tensor {}", t.name),
                    "payload length disagrees with dims",
                ));
            }
            out.extend_from_slice(&u32_len(t.name.len(), "name length")?.to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            out.extend_from_slice(&u32_len(t.dims.len(), "rank")?.to_le_bytes());
            for &d in &t.dims {
                out.extend_from_slice(&u32_len(d, "dimension")?.to_le_bytes());
            }
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    /// Parses a container and checks its magic against `magic`. `origin`
    /// labels diagnostics.
    pub fn from_bytes(bytes: &[u8], magic: [u8; 8], origin: &Path) -> Result<Self> {
        let mut r = Reader {
            bytes,
            pos: 0,
            origin,
        };
        let got = r.take(8, "magic")?;
        if got != magic {
            return Err(Error::format(
                origin,
                0,
                format!(
                    "bad magic {:?}, expected {:?}",
                    String::from_utf8_lossy(got),
                    String::from_utf8_lossy(&magic)
                ),
            ));
        }
        let version = r.u32("format version")?;
        if version != VERSION {
            return Err(Error::format(
                origin,
                8,
                format!("unsupported format version {version}"),
            ));
        }
        let iteration = r.u64("iteration")?;
        let count = r.u32("tensor count")? as usize;
        let mut tensors = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let at = r.pos;
            let len = r.u32("name length")? as usize;
            let name = std::str::from_utf8(r.take(len, "name")?)
                .map_err(|_| Error::format(origin, at as u64, "tensor name is not UTF-8"))?
                .to_string();
            let rank = r.u32("rank")? as usize;
            let mut dims = Vec::with_capacity(rank.min(16));
            for _ in 0..rank {
                dims.push(r.u32("dimension")? as usize);
            }
            let n = dims
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| {
                    Error::format(origin, r.pos as u64, format!("tensor {name} is too large"))
                })?;
            let raw = r.take(n.saturating_mul(4), "tensor payload")?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            tensors.push(NamedTensor { name, dims, data });
        }
        if r.pos != bytes.len() {
            return Err(Error::format(
                origin,
                r.pos as u64,
                format!("{} trailing bytes", bytes.len() - r.pos),
            ));
        }
        Ok(Self {
            magic,
            iteration,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path, magic: [u8; 8]) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, magic, path)
    }
}

fn u32_len(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::InvalidArgument(format!("{what} {v} exceeds u32")))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    origin: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(
                self.origin,
                self.pos as u64,
                format!("truncated while reading {what}"),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        let b = self.take(8, what)?;
        let mut a = [0u8; 8];
        a.copy_from_slice(b);
        Ok(u64::from_le_bytes(a))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        Checkpoint::new(
            MODEL_MAGIC,
            42,
            vec![
                NamedTensor {
                    name: "conv1.weight".into(),
                    dims: vec![2, 1, 1, 1],
                    data: vec![1.5, -0.25],
                },
                NamedTensor {
                    name: "conv1.bias".into(),
                    dims: vec![2],
                    data: vec![0.0, f32::MIN_POSITIVE],
                },
            ],
        )
    }

    #[test]
    fn byte_layout_is_stable() {
        let bytes = sample().to_bytes().unwrap();
        assert_eq!(&bytes[..8], b"FCNET1\0\0");
        assert_eq!(&bytes[8..12], &1u32.to_le_bytes());
        assert_eq!(&bytes[12..20], &42u64.to_le_bytes());
        assert_eq!(&bytes[20..24], &2u32.to_le_bytes());
        assert_eq!(&bytes[24..28], &12u32.to_le_bytes());
        assert_eq!(&bytes[28..40], b"conv1.weight");
        assert_eq!(&bytes[40..44], &4u32.to_le_bytes());
        assert_eq!(&bytes[60..64], &1.5f32.to_le_bytes());
    }

    #[test]
    fn round_trip_and_magic_check() {
        let c = sample();
        let bytes = c.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes, MODEL_MAGIC, Path::new("x")).unwrap();
        assert_eq!(back, c);
        let err = Checkpoint::from_bytes(&bytes, MULTIFRAME_MAGIC, Path::new("x")).unwrap_err();
        assert!(err.to_string().contains("bad magic"), "{err}");
    }

    #[test]
    fn truncation_reports_offset() {
        let bytes = sample().to_bytes().unwrap();
        let err = Checkpoint::from_bytes(&bytes[..bytes.len() - 3], MODEL_MAGIC, Path::new("x"))
            .unwrap_err();
        match err {
            Error::Format { offset, detail, .. } => {
                assert!(detail.contains("payload"), "{detail}");
                assert!(offset > 40);
            }
            other => panic!("{other}"),
        }
    }
}
