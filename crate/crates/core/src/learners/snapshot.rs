//! Versioned parameter container.
//!
//! ```text
//! fewshot-snapshot 1
//! key=value            (any number of header lines)
//!                      (blank line ends the header)
//! u32 tensor count, then per tensor:
//!   u32 name length, name bytes, u32 rank, u64 dims..., f64 values
//! ```
//!
//! All integers and floats are little-endian.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array1, Array2};

use super::network::{Dense, Mlp};

pub const SNAPSHOT_MAGIC: &str = "fewshot-snapshot";
pub const SNAPSHOT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum SnapshotError {
    #[error("snapshot I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed snapshot: {0}")]
    Format(String),
    #[error("unsupported snapshot version {0}")]
    Version(u32),
    #[error("snapshot has no tensor `{0}`")]
    MissingTensor(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Snapshot {
    pub header: BTreeMap<String, String>,
    pub tensors: Vec<Tensor>,
}

fn format_err(msg: impl Into<String>) -> SnapshotError {
    SnapshotError::Format(msg.into())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], SnapshotError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| format_err("truncated tensor data"))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, SnapshotError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, SnapshotError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, SnapshotError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

impl Snapshot {
    pub fn push(&mut self, name: &str, shape: Vec<usize>, data: Vec<f64>) {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.tensors.push(Tensor {
            name: name.to_string(),
            shape,
            data,
        });
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor, SnapshotError> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| SnapshotError::MissingTensor(name.to_string()))
    }

    /// Stores every layer as `prefix.i.weight` and `prefix.i.bias`.
    pub fn push_mlp(&mut self, prefix: &str, mlp: &Mlp) {
        for (i, l) in mlp.layers.iter().enumerate() {
            let (r, c) = l.weight.dim();
            self.push(&format!("{prefix}.{i}.weight"), vec![r, c], l.weight.iter().copied().collect());
            self.push(&format!("{prefix}.{i}.bias"), vec![c], l.bias.to_vec());
        }
    }

    pub fn mlp(&self, prefix: &str) -> Result<Mlp, SnapshotError> {
        let mut layers = Vec::new();
        for i in 0.. {
            let w_name = format!("{prefix}.{i}.weight");
            if !self.tensors.iter().any(|t| t.name == w_name) {
                break;
            }
            let w = self.tensor(&w_name)?;
            let b = self.tensor(&format!("{prefix}.{i}.bias"))?;
            let [r, c] = w.shape[..] else {
                return Err(format_err(format!("{w_name} is not a matrix")));
            };
            if b.shape != [c] {
                return Err(format_err(format!("{prefix}.{i}.bias does not match its weight")));
            }
            if let Some(prev) = layers.last().map(|l: &Dense| l.weight.ncols()) {
                if prev != r {
                    return Err(format_err(format!("{w_name} does not chain with the previous layer")));
                }
            }
            layers.push(Dense {
                weight: Array2::from_shape_vec((r, c), w.data.clone()).map_err(|e| format_err(e.to_string()))?,
                bias: Array1::from(b.data.clone()),
            });
        }
        if layers.is_empty() {
            return Err(SnapshotError::MissingTensor(format!("{prefix}.0.weight")));
        }
        Ok(Mlp { layers })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = format!("{SNAPSHOT_MAGIC} {SNAPSHOT_VERSION}\n").into_bytes();
        for (k, v) in &self.header {
            assert!(!k.contains(['=', '\n']) && !v.contains('\n'), "header entries are single-line");
            out.extend(format!("{k}={v}\n").bytes());
        }
        out.push(b'\n');
        out.extend((self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            out.extend((t.name.len() as u32).to_le_bytes());
            out.extend(t.name.bytes());
            out.extend((t.shape.len() as u32).to_le_bytes());
            for &d in &t.shape {
                out.extend((d as u64).to_le_bytes());
            }
            for &v in &t.data {
                out.extend(v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, SnapshotError> {
        let mut pos = 0;
        let mut next_line = || -> Result<&str, SnapshotError> {
            let nl = bytes[pos..]
                .iter()
                .position(|&b| b == b'\n')
                .ok_or_else(|| format_err("unterminated header"))?;
            let line = std::str::from_utf8(&bytes[pos..pos + nl]).map_err(|_| format_err("header is not UTF-8"))?;
            pos += nl + 1;
            Ok(line)
        };
        let first = next_line()?;
        let version = first
            .strip_prefix(SNAPSHOT_MAGIC)
            .and_then(|r| r.trim().parse::<u32>().ok())
            .ok_or_else(|| format_err("missing magic line"))?;
        if version != SNAPSHOT_VERSION {
            return Err(SnapshotError::Version(version));
        }
        let mut header = BTreeMap::new();
        loop {
            let line = next_line()?;
            if line.is_empty() {
                break;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| format_err(format!("bad header line `{line}`")))?;
            header.insert(k.to_string(), v.to_string());
        }
        let mut r = Reader { bytes, pos };
        let count = r.u32()?;
        let mut tensors = Vec::new();
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| format_err("tensor name is not UTF-8"))?
                .to_string();
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
            let n = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| format_err("tensor too large"))?;
            if n > (bytes.len() - r.pos) / 8 {
                return Err(format_err("truncated tensor data"));
            }
            let data = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>, _>>()?;
            tensors.push(Tensor { name, shape, data });
        }
        if r.pos != bytes.len() {
            return Err(format_err("trailing bytes"));
        }
        Ok(Self { header, tensors })
    }

    pub fn write_file(&self, path: &Path) -> Result<(), SnapshotError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn read_file(path: &Path) -> Result<Self, SnapshotError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// Layer widths joined by dashes, e.g. `16-64-64-16`.
pub fn arch_string(mlp: &Mlp) -> String {
    mlp.dims().iter().map(|d| d.to_string()).collect::<Vec<_>>().join("-")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedStream;

    fn sample() -> Snapshot {
        let mut rng = SeedStream::new(4);
        let mut s = Snapshot::default();
        s.header.insert("arch".into(), "3-5-2".into());
        s.header.insert("config_hash".into(), "abc".into());
        s.push_mlp("embedding", &Mlp::new(&[3, 5, 2], &mut rng));
        s.push("extra", vec![2], vec![f64::MIN_POSITIVE, -0.0]);
        s
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let s = sample();
        let back = Snapshot::from_bytes(&s.to_bytes()).unwrap();
        assert_eq!(back.header, s.header);
        for (a, b) in back.tensors.iter().zip(&s.tensors) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.shape, b.shape);
            let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&a.data), bits(&b.data));
        }
        assert_eq!(back.mlp("embedding").unwrap(), s.mlp("embedding").unwrap());
    }

    #[test]
    fn corrupt_input_is_rejected() {
        let bytes = sample().to_bytes();
        assert!(Snapshot::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Snapshot::from_bytes(&extra).is_err());
        assert!(Snapshot::from_bytes(b"nonsense\n\n").is_err());
        assert!(matches!(
            Snapshot::from_bytes(b"fewshot-snapshot 9\n\n\0\0\0\0"),
            Err(SnapshotError::Version(9))
        ));
    }

    #[test]
    fn missing_mlp_is_reported() {
        assert!(matches!(sample().mlp("relation"), Err(SnapshotError::MissingTensor(_))));
    }
}
