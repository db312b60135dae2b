//! Binary checkpoint format.
//!
//! ```text
//! magic "BLURVIDK" | u32 version | u64 header length | header JSON
//! u64 tensor count | per tensor: u32 name length, name, u32 rank, u64 dims..., f64 data...
//! ```
//!
//! All integers and floats are little-endian. Values are stored as f64 so
//! both f32 and f64 models round-trip exactly.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Model, NetworkConfig, ParamStore};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"BLURVIDK";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub network: NetworkConfig,
    /// Hash of `network`; compared on load.
    pub config_hash: String,
    /// Free-form metadata (run config, epoch, iteration).
    #[serde(default)]
    pub extra: serde_json::Value,
}

pub fn save_checkpoint<T: Scalar>(path: &Path, model: &Model<T>, extra: serde_json::Value) -> Result<()> {
    let header = CheckpointHeader {
        network: model.config().clone(),
        config_hash: model.config().hash(),
        extra,
    };
    let json = serde_json::to_vec(&header).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    let mut buf = Vec::with_capacity(model.params().scalar_count() * 8 + json.len() + 64);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    buf.extend_from_slice(&(model.params().len() as u64).to_le_bytes());
    for (name, t) in model.params().iter() {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            buf.extend_from_slice(&v.to_f64_lossy().to_le_bytes());
        }
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Checkpoint {
                path: self.path.to_path_buf(),
                reason: "unexpected end of file".into(),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<usize> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()) as usize)
    }
}

/// Loads a checkpoint using the network configuration stored inside it.
pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<(Model<T>, CheckpointHeader)> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let bad = |reason: String| Error::Checkpoint {
        path: path.to_path_buf(),
        reason,
    };
    let mut c = Cursor {
        bytes: &bytes,
        pos: 0,
        path,
    };
    if c.take(8)? != MAGIC {
        return Err(bad("not a checkpoint (bad magic)".into()));
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let hlen = c.u64()?;
    let header: CheckpointHeader = serde_json::from_slice(c.take(hlen)?).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    if header.network.hash() != header.config_hash {
        return Err(bad("stored config hash does not match stored config".into()));
    }
    let count = c.u64()?;
    let mut tensors = BTreeMap::new();
    for _ in 0..count {
        let nlen = c.u32()? as usize;
        let name = String::from_utf8(c.take(nlen)?.to_vec()).map_err(|_| bad("non-UTF-8 tensor name".into()))?;
        let rank = c.u32()? as usize;
        let shape = (0..rank).map(|_| c.u64()).collect::<Result<Vec<_>>>()?;
        let len: usize = shape.iter().product();
        let raw = c.take(len.checked_mul(8).ok_or_else(|| bad("tensor too large".into()))?)?;
        let data = raw
            .chunks_exact(8)
            .map(|b| T::lit(f64::from_le_bytes(b.try_into().unwrap())))
            .collect();
        tensors.insert(name, Tensor::from_vec(&shape, data)?);
    }
    if c.pos != bytes.len() {
        return Err(bad("trailing bytes".into()));
    }
    let model =
        Model::from_params(header.network.clone(), ParamStore::from_map(tensors)).map_err(|e| bad(e.to_string()))?;
    Ok((model, header))
}

/// Loads a checkpoint and fails unless it was written for `expected`.
pub fn load_checkpoint_expecting<T: Scalar>(
    path: &Path,
    expected: &NetworkConfig,
) -> Result<(Model<T>, CheckpointHeader)> {
    let (model, header) = load_checkpoint(path)?;
    let want = expected.hash();
    if header.config_hash != want {
        return Err(Error::CheckpointMismatch {
            checkpoint: header.config_hash,
            expected: want,
        });
    }
    Ok((model, header))
}
