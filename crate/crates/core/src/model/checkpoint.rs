//! Binary checkpoint format:
//!
//! ```text
//! magic "DUALDESC" | version u32 | header len u32 | header (UTF-8 key = value)
//! vocab sha256 [32] | descriptor sha256 [32] | epoch u32 | val_metric f64
//! tensor count u32 | per tensor: name len u32, name, ndim u32, dims u64…, f32 values
//! sha256 of everything above [32]
//! ```
//!
//! All integers and floats are little-endian.

use std::fs;
use std::path::Path;

use sha2::{Digest as _, Sha256};

use crate::corpus::LabelSpace;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

use super::config::{parse_line, ModelConfig};

const MAGIC: &[u8; 8] = b"DUALDESC";
pub const CHECKPOINT_VERSION: u32 = 1;

/// SHA-256 content hash.
pub type Digest = [u8; 32];

/// SHA-256 of a file's bytes.
pub fn file_digest(path: &Path) -> Result<Digest> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(Sha256::digest(&bytes).into())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub labels: LabelSpace,
    pub vocab_size: usize,
    pub vocab_digest: Digest,
    pub descriptor_digest: Digest,
    pub epoch: u32,
    pub val_metric: f64,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Incompatible("checkpoint ends unexpectedly".into()));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::Incompatible("checkpoint text is not UTF-8".into()))
    }
}

impl Checkpoint {
    fn header_text(&self) -> String {
        let mut s = self.config.to_text();
        s.push_str(&format!("labels = {}\n", self.labels.names().join("|")));
        s.push_str(&format!("vocab_size = {}\n", self.vocab_size));
        s
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        let header = self.header_text();
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(header.as_bytes());
        out.extend_from_slice(&self.vocab_digest);
        out.extend_from_slice(&self.descriptor_digest);
        out.extend_from_slice(&self.epoch.to_le_bytes());
        out.extend_from_slice(&self.val_metric.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
            return Err(Error::Incompatible("not a checkpoint file (bad magic bytes)".into()));
        }
        if bytes.len() < MAGIC.len() + 4 + 32 {
            return Err(Error::Incompatible("checkpoint is truncated".into()));
        }
        let (body, trailer) = bytes.split_at(bytes.len() - 32);
        let mut r = Reader {
            bytes: body,
            pos: MAGIC.len(),
        };
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Incompatible(format!(
                "checkpoint format version {version}, this build reads version {CHECKPOINT_VERSION}"
            )));
        }
        if Sha256::digest(body).as_slice() != trailer {
            return Err(Error::Incompatible(
                "checkpoint is truncated or corrupted (checksum mismatch)".into(),
            ));
        }
        let header = r.string()?;
        let mut config_text = String::new();
        let (mut labels, mut vocab_size) = (None, None);
        for line in header.lines() {
            match parse_line(line) {
                Some(Ok(("labels", v))) => labels = Some(v.to_owned()),
                Some(Ok(("vocab_size", v))) => {
                    vocab_size = Some(
                        v.parse::<usize>()
                            .map_err(|e| Error::Incompatible(format!("checkpoint vocab_size '{v}': {e}")))?,
                    )
                }
                _ => {
                    config_text.push_str(line);
                    config_text.push('\n');
                }
            }
        }
        let config =
            ModelConfig::from_text(&config_text).map_err(|e| Error::Incompatible(format!("checkpoint config: {e}")))?;
        let labels = labels.ok_or_else(|| Error::Incompatible("checkpoint header lacks labels".into()))?;
        let labels = LabelSpace::new(labels.split('|'), config.mode)?;
        let vocab_size = vocab_size.ok_or_else(|| Error::Incompatible("checkpoint header lacks vocab_size".into()))?;
        let vocab_digest: Digest = r.take(32)?.try_into().unwrap();
        let descriptor_digest: Digest = r.take(32)?.try_into().unwrap();
        let epoch = r.u32()?;
        let val_metric = f64::from_le_bytes(r.take(8)?.try_into().unwrap());
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let name = r.string()?;
            let ndim = r.u32()? as usize;
            let shape = (0..ndim)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let raw = r.take(
                n.checked_mul(4)
                    .ok_or_else(|| Error::Incompatible("tensor too large".into()))?,
            )?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let t = Tensor::new(shape, data).map_err(|e| Error::Incompatible(format!("tensor '{name}': {e}")))?;
            tensors.push((name, t));
        }
        if r.pos != body.len() {
            return Err(Error::Incompatible("trailing bytes after checkpoint tensors".into()));
        }
        Ok(Checkpoint {
            config,
            labels,
            vocab_size,
            vocab_digest,
            descriptor_digest,
            epoch,
            val_metric,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Incompatible(m) => Error::Incompatible(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}
