//! On-disk training state.
//!
//! ```text
//! auxsumm-ckpt v1
//! {"model":{..},"train":{..},"iteration":N,"seed":S,"dtype":"f32"}
//! tensor <name> <d0,d1,..>
//! <little-endian floats><newline>
//! ...
//! ```
//!
//! Tensors appear in sorted name order: model parameters under their own
//! names, Adagrad accumulators under `adagrad/<name>`. Identical states
//! produce identical bytes.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelConfig, Precision};
use crate::numerics::{ParamStore, Tensor};
use crate::train::TrainConfig;

pub const HEADER: &str = "auxsumm-ckpt v1";
pub const ACCUMULATOR_PREFIX: &str = "adagrad/";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Completed updates.
    pub iteration: usize,
    pub seed: u64,
    pub dtype: Precision,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub params: ParamStore,
    /// Keyed by parameter name, without the prefix.
    pub accumulators: ParamStore,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let meta = serde_json::to_string(&self.meta)
            .map_err(|e| Error::Checkpoint(format!("metadata: {e}")))?;
        let mut entries: Vec<(String, &Tensor)> = self
            .params
            .sorted()
            .map(|(n, id)| (n.to_string(), self.params.get(id)))
            .chain(
                self.accumulators
                    .sorted()
                    .map(|(n, id)| (format!("{ACCUMULATOR_PREFIX}{n}"), self.accumulators.get(id))),
            )
            .collect();
        entries.sort_by(|a, b| a.0.cmp(&b.0));

        let mut out = Vec::new();
        out.extend_from_slice(HEADER.as_bytes());
        out.push(b'\n');
        out.extend_from_slice(meta.as_bytes());
        out.push(b'\n');
        for (name, t) in entries {
            let shape: Vec<String> = t.shape().iter().map(usize::to_string).collect();
            out.extend_from_slice(format!("tensor {name} {}\n", shape.join(",")).as_bytes());
            for &v in t.data() {
                match self.meta.dtype {
                    Precision::F32 => {
                        let x = v as f32;
                        if x as f64 != v {
                            return Err(Error::Checkpoint(format!(
                                "tensor `{name}` holds {v}, not representable as f32"
                            )));
                        }
                        out.extend_from_slice(&x.to_le_bytes());
                    }
                    Precision::F64 => out.extend_from_slice(&v.to_le_bytes()),
                }
            }
            out.push(b'\n');
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        let header = cur.line()?;
        if header != HEADER {
            return Err(Error::Checkpoint(format!("bad header `{header}`")));
        }
        let meta: CheckpointMeta = serde_json::from_str(cur.line()?)
            .map_err(|e| Error::Checkpoint(format!("metadata: {e}")))?;
        let width = match meta.dtype {
            Precision::F32 => 4,
            Precision::F64 => 8,
        };
        let mut params = ParamStore::new();
        let mut accumulators = ParamStore::new();
        while !cur.done() {
            let line = cur.line()?;
            let mut parts = line.split(' ');
            let (Some("tensor"), Some(name), Some(shape), None) =
                (parts.next(), parts.next(), parts.next(), parts.next())
            else {
                return Err(Error::Checkpoint(format!("bad tensor line `{line}`")));
            };
            let shape = shape
                .split(',')
                .map(|d| d.parse::<usize>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Checkpoint(format!("tensor `{name}` shape: {e}")))?;
            let n: usize = shape.iter().product();
            let raw = cur.take(n * width)?;
            let data: Vec<f64> = match meta.dtype {
                Precision::F32 => raw
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
                    .collect(),
                Precision::F64 => raw
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                    .collect(),
            };
            if cur.take(1)? != b"\n" {
                return Err(Error::Checkpoint(format!("tensor `{name}` is not newline-terminated")));
            }
            let t = Tensor::new(shape, data)?;
            match name.strip_prefix(ACCUMULATOR_PREFIX) {
                Some(p) => accumulators.register(p, t)?,
                None => params.register(name, t)?,
            };
        }
        Ok(Checkpoint {
            meta,
            params,
            accumulators,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn done(&self) -> bool {
        self.pos >= self.bytes.len()
    }

    fn line(&mut self) -> Result<&'a str> {
        let rest = &self.bytes[self.pos..];
        let end = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::Checkpoint("truncated file".into()))?;
        self.pos += end + 1;
        std::str::from_utf8(&rest[..end]).map_err(|_| Error::Checkpoint("non-UTF-8 text line".into()))
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Checkpoint("truncated tensor data".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
}
