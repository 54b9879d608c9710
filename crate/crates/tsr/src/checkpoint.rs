//! `TSR1` checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "TSR1"  version:u32  config:9×u32  count:u32  tensor*count
//! training:u8  [next_epoch:u32 step:u64 best_val_psnr:f64
//!               count:u32 first-moment tensor*count
//!               count:u32 second-moment tensor*count]
//! tensor = name_len:u16 name:utf8 rank:u8 dims:rank×u32 data:f32*
//! ```
//!
//! The trailing training section lets a run resume with an identical
//! optimizer trajectory; inference only needs the parameters.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use tsr_core::network::{NetworkConfig, Parameters};
use tsr_core::training::OptimizerState;
use tsr_core::Tensor;

pub const MAGIC: &[u8; 4] = b"TSR1";
pub const VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic bytes)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("checkpoint truncated while reading {0}")]
    Truncated(&'static str),
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error("checkpoint network config {found:?} does not match the requested {expected:?}")]
    ConfigMismatch {
        expected: NetworkConfig,
        found: NetworkConfig,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Optimizer progress stored alongside the parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingState {
    /// The epoch a resumed run starts with.
    pub next_epoch: u32,
    pub best_val_psnr: f64,
    pub optimizer: OptimizerState,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: Parameters<f32>,
    pub training: Option<TrainingState>,
}

fn put_tensor(out: &mut Vec<u8>, name: &str, t: &Tensor<f32>) {
    let name_len = u16::try_from(name.len()).expect("parameter names are short");
    out.extend_from_slice(&name_len.to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.push(t.rank() as u8);
    for &d in t.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn put_tensors<'a>(out: &mut Vec<u8>, tensors: impl ExactSizeIterator<Item = (&'a str, &'a Tensor<f32>)>) {
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        put_tensor(out, name, t);
    }
}

pub fn encode(ck: &Checkpoint) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for f in ck.params.config().fields() {
        out.extend_from_slice(&(f as u32).to_le_bytes());
    }
    put_tensors(&mut out, ck.params.iter().collect::<Vec<_>>().into_iter());
    match &ck.training {
        None => out.push(0),
        Some(t) => {
            out.push(1);
            out.extend_from_slice(&t.next_epoch.to_le_bytes());
            out.extend_from_slice(&t.optimizer.step.to_le_bytes());
            out.extend_from_slice(&t.best_val_psnr.to_le_bytes());
            put_tensors(&mut out, t.optimizer.first_moment.iter().map(|(k, v)| (k.as_str(), v)));
            put_tensors(&mut out, t.optimizer.second_moment.iter().map(|(k, v)| (k.as_str(), v)));
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).ok_or(CheckpointError::Truncated(what))?;
        let slice = self.bytes.get(self.pos..end).ok_or(CheckpointError::Truncated(what))?;
        self.pos = end;
        Ok(slice)
    }

    fn array<const N: usize>(&mut self, what: &'static str) -> Result<[u8; N], CheckpointError> {
        Ok(self.take(N, what)?.try_into().expect("length checked"))
    }

    fn u8(&mut self, what: &'static str) -> Result<u8, CheckpointError> {
        Ok(self.array::<1>(what)?[0])
    }

    fn u16(&mut self, what: &'static str) -> Result<u16, CheckpointError> {
        Ok(u16::from_le_bytes(self.array(what)?))
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.array(what)?))
    }

    fn u64(&mut self, what: &'static str) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.array(what)?))
    }

    fn tensor(&mut self) -> Result<(String, Tensor<f32>), CheckpointError> {
        let len = self.u16("tensor name length")? as usize;
        let name = std::str::from_utf8(self.take(len, "tensor name")?)
            .map_err(|_| CheckpointError::Malformed("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = self.u8("tensor rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(self.u32("tensor dims")? as usize);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| CheckpointError::Malformed(format!("tensor {name} is too large")))?;
        let raw = self.take(n.checked_mul(4).ok_or(CheckpointError::Truncated("tensor data"))?, "tensor data")?;
        let data = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        let t = Tensor::new(&shape, data).map_err(|e| CheckpointError::Malformed(format!("tensor {name}: {e}")))?;
        Ok((name, t))
    }

    fn tensors(&mut self) -> Result<BTreeMap<String, Tensor<f32>>, CheckpointError> {
        let count = self.u32("tensor count")?;
        let mut map = BTreeMap::new();
        for _ in 0..count {
            let (name, t) = self.tensor()?;
            if map.insert(name.clone(), t).is_some() {
                return Err(CheckpointError::Malformed(format!("tensor {name} appears twice")));
            }
        }
        Ok(map)
    }
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let mut r = Reader { bytes, pos: 4 };
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let mut fields = [0usize; 9];
    for f in &mut fields {
        *f = r.u32("network config")? as usize;
    }
    let config = NetworkConfig::from_fields(fields).map_err(|e| CheckpointError::Malformed(e.to_string()))?;
    let params = Parameters::from_tensors(config, r.tensors()?).map_err(|e| CheckpointError::Malformed(e.to_string()))?;
    let training = match r.u8("training flag")? {
        0 => None,
        1 => {
            let next_epoch = r.u32("epoch")?;
            let step = r.u64("optimizer step")?;
            let best_val_psnr = f64::from_le_bytes(r.array("best psnr")?);
            let optimizer = OptimizerState {
                step,
                first_moment: r.tensors()?,
                second_moment: r.tensors()?,
            };
            for moments in [&optimizer.first_moment, &optimizer.second_moment] {
                let consistent = moments.len() == params.len()
                    && params
                        .iter()
                        .all(|(name, p)| moments.get(name).is_some_and(|m| m.shape() == p.shape()));
                if !consistent {
                    return Err(CheckpointError::Malformed("optimizer moments do not match the parameters".into()));
                }
            }
            Some(TrainingState {
                next_epoch,
                best_val_psnr,
                optimizer,
            })
        }
        other => return Err(CheckpointError::Malformed(format!("invalid training flag {other}"))),
    };
    if r.pos != bytes.len() {
        return Err(CheckpointError::Malformed(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(Checkpoint { params, training })
}

pub fn save(ck: &Checkpoint, path: &Path) -> Result<(), CheckpointError> {
    fs::write(path, encode(ck)).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })?;
    decode(&bytes)
}

/// Loads a checkpoint and requires its network config to equal `expected`.
pub fn load_matching(path: &Path, expected: &NetworkConfig) -> Result<Checkpoint, CheckpointError> {
    let ck = load(path)?;
    let found = *ck.params.config();
    if found != *expected {
        return Err(CheckpointError::ConfigMismatch {
            expected: *expected,
            found,
        });
    }
    Ok(ck)
}
