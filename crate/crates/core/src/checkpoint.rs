//! Binary parameter container plus JSON sidecar.
//!
//! Layout, all integers little-endian `u32`:
//!
//! ```text
//! "WDLMCKPT" | version | entry count
//! per entry: name length | UTF-8 name | rank | extents × rank | f32 LE data
//! ```
//!
//! The sidecar `<file>.json` holds the model configuration and training
//! metadata needed to rebuild a network around the stored tensors.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::ModelConfig;
use crate::nn::{ModelParams, ParamError};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"WDLMCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("not a checkpoint container (bad magic)")]
    BadMagic,
    #[error("unsupported container version {found} (this build reads {FORMAT_VERSION})")]
    Version { found: u32 },
    #[error("container truncated while reading {0}")]
    Truncated(&'static str),
    #[error("{0} trailing bytes after the last entry")]
    Trailing(usize),
    #[error("entry name is not UTF-8")]
    Name,
    #[error("sidecar: {0}")]
    Sidecar(#[from] serde_json::Error),
    #[error("sidecar version {found} does not match container version {FORMAT_VERSION}")]
    SidecarVersion { found: u32 },
    #[error(transparent)]
    Param(#[from] ParamError),
}

type Result<T, E = CheckpointError> = std::result::Result<T, E>;

/// One stored tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

pub fn encode(entries: &[Entry]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for e in entries {
        out.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
        out.extend_from_slice(e.name.as_bytes());
        out.extend_from_slice(&(e.shape.len() as u32).to_le_bytes());
        for &d in &e.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in &e.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).ok_or(CheckpointError::Truncated(what))?;
        let s = self.buf.get(self.pos..end).ok_or(CheckpointError::Truncated(what))?;
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Vec<Entry>> {
    let mut c = Cursor { buf: bytes, pos: 0 };
    if c.take(8, "magic").map_err(|_| CheckpointError::BadMagic)? != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = c.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(CheckpointError::Version { found: version });
    }
    let count = c.u32("entry count")?;
    let mut entries = Vec::new();
    for _ in 0..count {
        let len = c.u32("name length")? as usize;
        let name = std::str::from_utf8(c.take(len, "name")?)
            .map_err(|_| CheckpointError::Name)?
            .to_string();
        let rank = c.u32("rank")? as usize;
        let mut shape = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            shape.push(c.u32("extent")? as usize);
        }
        let n: usize = shape.iter().product();
        let raw = c.take(n.checked_mul(4).ok_or(CheckpointError::Truncated("data"))?, "data")?;
        let data = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
            .collect();
        entries.push(Entry { name, shape, data });
    }
    if c.pos != bytes.len() {
        return Err(CheckpointError::Trailing(bytes.len() - c.pos));
    }
    Ok(entries)
}

pub fn entries_from_params(params: &ModelParams<f32>) -> Vec<Entry> {
    params
        .iter()
        .map(|(name, p)| Entry {
            name: name.to_string(),
            shape: p.tensor.shape().to_vec(),
            data: p.tensor.to_vec(),
        })
        .collect()
}

/// Every stored tensor becomes a trainable parameter.
pub fn params_from_entries(entries: Vec<Entry>) -> Result<ModelParams<f32>> {
    let mut params = ModelParams::new();
    for e in entries {
        let t = Tensor::param(&e.shape, e.data).map_err(ParamError::from)?;
        params.insert(&e.name, t, true)?;
    }
    Ok(params)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sidecar {
    pub format: String,
    pub version: u32,
    pub model: ModelConfig,
    /// Optimizer steps completed when the checkpoint was written.
    pub step: u64,
    /// Free-form training metadata (run configuration, losses, seed).
    #[serde(default)]
    pub training: serde_json::Value,
}

impl Sidecar {
    pub fn new(model: ModelConfig, step: u64, training: serde_json::Value) -> Self {
        Self {
            format: String::from_utf8_lossy(MAGIC).into_owned(),
            version: FORMAT_VERSION,
            model,
            step,
            training,
        }
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> CheckpointError + '_ {
    move |source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn write_entries(path: &Path, entries: &[Entry]) -> Result<()> {
    fs::write(path, encode(entries)).map_err(io(path))
}

pub fn read_entries(path: &Path) -> Result<Vec<Entry>> {
    decode(&fs::read(path).map_err(io(path))?)
}

/// Writes the parameter container and its sidecar.
pub fn save(path: &Path, params: &ModelParams<f32>, sidecar: &Sidecar) -> Result<()> {
    write_entries(path, &entries_from_params(params))?;
    let side = sidecar_path(path);
    let mut json = serde_json::to_string_pretty(sidecar)?;
    json.push('\n');
    fs::write(&side, json).map_err(io(&side))
}

/// Reads the parameter container and its sidecar.
pub fn load(path: &Path) -> Result<(ModelParams<f32>, Sidecar)> {
    let params = params_from_entries(read_entries(path)?)?;
    let side = sidecar_path(path);
    let sidecar: Sidecar = serde_json::from_str(&fs::read_to_string(&side).map_err(io(&side))?)?;
    if sidecar.version != FORMAT_VERSION {
        return Err(CheckpointError::SidecarVersion { found: sidecar.version });
    }
    Ok((params, sidecar))
}
