//! Binary container for named `f64` arrays.
//!
//! Layout: the magic `ABDS1`, a little-endian `u32` format version, a
//! little-endian `u64` metadata length, UTF-8 JSON metadata, then every
//! array's values as little-endian IEEE-754 doubles in metadata order.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 5] = b"ABDS1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct ArtifactFile {
    pub kind: String,
    pub arrays: Vec<(String, Tensor)>,
    pub attrs: Value,
}

#[derive(Serialize, Deserialize)]
struct ArrayMeta {
    name: String,
    shape: Vec<usize>,
    dtype: String,
}

#[derive(Serialize, Deserialize)]
struct Metadata {
    kind: String,
    arrays: Vec<ArrayMeta>,
    attrs: Value,
}

impl ArtifactFile {
    pub fn new(kind: &str) -> Self {
        ArtifactFile {
            kind: kind.to_string(),
            arrays: Vec::new(),
            attrs: Value::Object(Default::default()),
        }
    }

    pub fn with_attrs(mut self, attrs: Value) -> Self {
        self.attrs = attrs;
        self
    }

    pub fn push(&mut self, name: &str, t: Tensor) -> &mut Self {
        self.arrays.push((name.to_string(), t));
        self
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.arrays
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::Format(format!("{} artifact has no array '{name}'", self.kind)))
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind == kind {
            Ok(())
        } else {
            Err(Error::Format(format!(
                "expected a '{kind}' artifact, found '{}'",
                self.kind
            )))
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let meta = Metadata {
            kind: self.kind.clone(),
            arrays: self
                .arrays
                .iter()
                .map(|(n, t)| ArrayMeta {
                    name: n.clone(),
                    shape: t.shape().to_vec(),
                    dtype: "f64".into(),
                })
                .collect(),
            attrs: self.attrs.clone(),
        };
        let meta = serde_json::to_vec(&meta).map_err(|e| Error::Format(e.to_string()))?;
        let payload: usize = self.arrays.iter().map(|(_, t)| t.len() * 8).sum();
        let mut out = Vec::with_capacity(17 + meta.len() + payload);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        out.extend_from_slice(&meta);
        for (_, t) in &self.arrays {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 17 || &bytes[..5] != MAGIC {
            return Err(Error::Format("bad magic: not an ABDS1 artifact".into()));
        }
        let version = u32::from_le_bytes(bytes[5..9].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported format version {version}"
            )));
        }
        let meta_len = u64::from_le_bytes(bytes[9..17].try_into().expect("8 bytes")) as usize;
        let meta_end = 17usize
            .checked_add(meta_len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| Error::Format("truncated metadata".into()))?;
        let meta: Metadata = serde_json::from_slice(&bytes[17..meta_end])
            .map_err(|e| Error::Format(format!("metadata: {e}")))?;
        let expected: usize = meta
            .arrays
            .iter()
            .map(|a| a.shape.iter().product::<usize>() * 8)
            .sum();
        let payload = &bytes[meta_end..];
        if payload.len() != expected {
            return Err(Error::Format(format!(
                "payload holds {} bytes, metadata declares {expected}",
                payload.len()
            )));
        }
        let mut arrays = Vec::with_capacity(meta.arrays.len());
        let mut off = 0;
        for a in meta.arrays {
            if a.dtype != "f64" {
                return Err(Error::Format(format!(
                    "array '{}' has unsupported dtype {}",
                    a.name, a.dtype
                )));
            }
            let n: usize = a.shape.iter().product();
            let data = payload[off..off + 8 * n]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            off += 8 * n;
            let t = Tensor::new(a.shape, data)
                .map_err(|e| Error::Format(format!("array '{}': {e}", a.name)))?;
            arrays.push((a.name, t));
        }
        Ok(ArtifactFile {
            kind: meta.kind,
            arrays,
            attrs: meta.attrs,
        })
    }

    /// Writes through a temporary sibling and renames it into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        ArtifactFile::from_bytes(&fs::read(path)?)
    }
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| Error::Invalid(format!("{} is not a file path", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp", name.to_string_lossy()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}
