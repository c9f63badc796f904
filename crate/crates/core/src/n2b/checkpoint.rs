//! Binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "N2BCKPT"  u16 version  u64 iteration  u64 dn_adam_steps  u64 ne_adam_steps
//! u32 config_len  config (UTF-8 JSON)
//! u32 entry_count
//! entry*: u32 name_len  name (UTF-8)  u32 rank  u32 extent*rank  f32 payload*numel
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::nets::{DnNet, NENet};
use super::step::Optimizers;
use super::train::{TrainData, TrainSettings, Trainer};
use super::TrainError;
use crate::scalar::Scalar;
use crate::tensor::{Adam, ParamSet, Tensor};

pub const MAGIC: &[u8; 7] = b"N2BCKPT";
pub const VERSION: u16 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("not a checkpoint: bad magic {found:?}")]
    BadMagic { found: Vec<u8> },
    #[error("checkpoint version {found} is not supported (expected {expected})")]
    Version { found: u16, expected: u16 },
    #[error("checkpoint truncated while reading {what}")]
    Truncated { what: &'static str },
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error("checkpoint lacks entry `{0}`")]
    MissingEntry(String),
    #[error("entry `{name}` has shape {found:?}, expected {expected:?}")]
    EntryShape {
        name: String,
        found: Vec<usize>,
        expected: Vec<usize>,
    },
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub name: String,
    pub tensor: Tensor<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub iteration: u64,
    pub dn_adam_steps: u64,
    pub ne_adam_steps: u64,
    /// JSON echo of the run configuration, kept verbatim.
    pub config: String,
    pub entries: Vec<Entry>,
}

/// Contents of [`Checkpoint::config`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigEcho {
    pub settings: TrainSettings,
    /// Data-source description, when training started from files.
    pub source: Option<serde_json::Value>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or(CheckpointError::Truncated { what })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u16(&mut self, what: &'static str) -> Result<u16, CheckpointError> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &'static str) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self, what: &'static str) -> Result<String, CheckpointError> {
        let len = self.u32(what)? as usize;
        let raw = self.take(len, what)?;
        String::from_utf8(raw.to_vec()).map_err(|_| CheckpointError::Malformed(format!("{what} is not UTF-8")))
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&u32::try_from(v).expect("fits in u32").to_le_bytes());
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.iteration.to_le_bytes());
        out.extend_from_slice(&self.dn_adam_steps.to_le_bytes());
        out.extend_from_slice(&self.ne_adam_steps.to_le_bytes());
        put_u32(&mut out, self.config.len());
        out.extend_from_slice(self.config.as_bytes());
        put_u32(&mut out, self.entries.len());
        for e in &self.entries {
            put_u32(&mut out, e.name.len());
            out.extend_from_slice(e.name.as_bytes());
            put_u32(&mut out, e.tensor.rank());
            for &d in e.tensor.shape() {
                put_u32(&mut out, d);
            }
            for v in e.tensor.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(MAGIC.len(), "magic").map_err(|_| CheckpointError::BadMagic { found: bytes.to_vec() })?;
        if magic != MAGIC {
            return Err(CheckpointError::BadMagic { found: magic.to_vec() });
        }
        let version = r.u16("version")?;
        if version != VERSION {
            return Err(CheckpointError::Version {
                found: version,
                expected: VERSION,
            });
        }
        let iteration = r.u64("iteration")?;
        let dn_adam_steps = r.u64("optimizer step count")?;
        let ne_adam_steps = r.u64("optimizer step count")?;
        let config = r.string("config")?;
        let count = r.u32("entry count")?;
        let mut entries = Vec::new();
        for _ in 0..count {
            let name = r.string("entry name")?;
            let rank = r.u32("entry rank")? as usize;
            let shape = (0..rank)
                .map(|_| r.u32("entry extents").map(|d| d as usize))
                .collect::<Result<Vec<_>, _>>()?;
            let numel = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| CheckpointError::Malformed(format!("entry `{name}` is too large")))?;
            let raw = r.take(numel.checked_mul(4).ok_or(CheckpointError::Truncated { what: "entry payload" })?, "entry payload")?;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
            let tensor = Tensor::new(shape, data).map_err(|e| CheckpointError::Malformed(e.to_string()))?;
            entries.push(Entry { name, tensor });
        }
        if r.pos != bytes.len() {
            return Err(CheckpointError::Malformed(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Self {
            iteration,
            dn_adam_steps,
            ne_adam_steps,
            config,
            entries,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CheckpointError> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }

    pub fn echo(&self) -> Result<ConfigEcho, CheckpointError> {
        serde_json::from_str(&self.config).map_err(|e| CheckpointError::Malformed(format!("config echo: {e}")))
    }

    pub fn entry(&self, name: &str) -> Result<&Tensor<f32>, CheckpointError> {
        self.entries
            .iter()
            .find(|e| e.name == name)
            .map(|e| &e.tensor)
            .ok_or_else(|| CheckpointError::MissingEntry(name.to_string()))
    }

    fn restore<T: Scalar>(&self, prefix: &str, params: &mut ParamSet<T>) -> Result<(), CheckpointError> {
        for p in params.iter_mut() {
            let name = format!("{prefix}/{}", p.name);
            p.value = self.checked(&name, p.value.shape())?.cast();
        }
        Ok(())
    }

    fn checked(&self, name: &str, shape: &[usize]) -> Result<&Tensor<f32>, CheckpointError> {
        let t = self.entry(name)?;
        if t.shape() != shape {
            return Err(CheckpointError::EntryShape {
                name: name.to_string(),
                found: t.shape().to_vec(),
                expected: shape.to_vec(),
            });
        }
        Ok(t)
    }

    fn restore_adam<T: Scalar>(&self, prefix: &str, params: &ParamSet<T>, adam: &mut Adam<T>, steps: u64) -> Result<(), CheckpointError> {
        for (p, s) in params.iter().zip(&mut adam.states) {
            let n = [p.value.numel()];
            s.m = self.checked(&format!("{prefix}/m/{}", p.name), &n)?.cast().into_data();
            s.v = self.checked(&format!("{prefix}/v/{}", p.name), &n)?.cast().into_data();
        }
        adam.t = steps;
        Ok(())
    }

    /// The trained DnNet described by this checkpoint.
    pub fn dnnet<T: Scalar>(&self) -> Result<DnNet<T>, CheckpointError> {
        let echo = self.echo()?;
        let mut dn = DnNet::build(echo.settings.unet, 0).map_err(|e| CheckpointError::Malformed(e.to_string()))?;
        self.restore("dnnet", &mut dn.params)?;
        Ok(dn)
    }
}

fn push_params<T: Scalar>(entries: &mut Vec<Entry>, prefix: &str, params: &ParamSet<T>) {
    for p in params.iter() {
        entries.push(Entry {
            name: format!("{prefix}/{}", p.name),
            tensor: p.value.cast(),
        });
    }
}

fn push_adam<T: Scalar>(entries: &mut Vec<Entry>, prefix: &str, params: &ParamSet<T>, adam: &Adam<T>) {
    for (p, s) in params.iter().zip(&adam.states) {
        for (kind, buf) in [("m", &s.m), ("v", &s.v)] {
            let t = Tensor::new(vec![buf.len()], buf.clone()).expect("length matches");
            entries.push(Entry {
                name: format!("{prefix}/{kind}/{}", p.name),
                tensor: t.cast(),
            });
        }
    }
}

impl<T: Scalar> Trainer<T> {
    pub fn checkpoint(&self) -> Checkpoint {
        let echo = ConfigEcho {
            settings: self.settings.clone(),
            source: self.source.clone(),
        };
        let mut entries = Vec::new();
        push_params(&mut entries, "dnnet", &self.dn.params);
        push_params(&mut entries, "nenet", &self.ne.params);
        push_adam(&mut entries, "adam_dnnet", &self.dn.params, &self.opt.dn);
        push_adam(&mut entries, "adam_nenet", &self.ne.params, &self.opt.ne);
        Checkpoint {
            iteration: self.iteration,
            dn_adam_steps: self.opt.dn.t,
            ne_adam_steps: self.opt.ne.t,
            config: serde_json::to_string(&echo).expect("settings serialize"),
            entries,
        }
    }

    /// Rebuilds a trainer from `ckpt`, ready to run iteration
    /// `ckpt.iteration` on `data`.
    pub fn resume(ckpt: &Checkpoint, data: TrainData) -> Result<Self, TrainError> {
        let echo = ckpt.echo()?;
        let mut tr = Trainer::new(echo.settings, data)?;
        tr.source = echo.source;
        ckpt.restore("dnnet", &mut tr.dn.params)?;
        ckpt.restore("nenet", &mut tr.ne.params)?;
        let Optimizers { dn, ne } = &mut tr.opt;
        ckpt.restore_adam("adam_dnnet", &tr.dn.params, dn, ckpt.dn_adam_steps)?;
        ckpt.restore_adam("adam_nenet", &tr.ne.params, ne, ckpt.ne_adam_steps)?;
        tr.iteration = ckpt.iteration;
        Ok(tr)
    }
}

/// Independent NENet restore, for inspection.
pub fn nenet_from<T: Scalar>(ckpt: &Checkpoint) -> Result<NENet<T>, CheckpointError> {
    let echo = ckpt.echo()?;
    let mut ne = NENet::build(echo.settings.unet.channels, 0).map_err(|e| CheckpointError::Malformed(e.to_string()))?;
    ckpt.restore("nenet", &mut ne.params)?;
    Ok(ne)
}
