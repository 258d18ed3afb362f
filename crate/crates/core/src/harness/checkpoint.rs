//! Checkpoint files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic        8 bytes   "MTDQNCKP"
//! version      u32       1
//! hash         u32 length + ASCII hex SHA-256 of the config JSON
//! config       u64 length + UTF-8 JSON
//! updates      u64       optimizer updates applied
//! adam step    u64
//! count        u32       number of tensors
//! tensor       u32 name length + UTF-8 name, u32 rank, u64 per dim,
//!              f64 per value (row-major)
//! ```
//!
//! Tensor names are `online/<param>`, `target/<param>`, `adam.m/<param>` and
//! `adam.v/<param>`, in parameter order within each group. Trailing bytes are
//! rejected.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::harness::config::ExperimentConfig;
use crate::harness::model::RecModel;
use crate::numerics::{AdamState, ParamStore, Tensor};

pub const MAGIC: &[u8; 8] = b"MTDQNCKP";
pub const VERSION: u32 = 1;

/// Trained parameters with everything needed to resume or evaluate.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ExperimentConfig,
    pub online: ParamStore,
    pub target: ParamStore,
    pub adam: AdamState,
    pub updates: u64,
}

impl Checkpoint {
    /// Rebuilds the model skeleton the parameters belong to.
    pub fn model(&self) -> Result<RecModel> {
        let mut scratch = ParamStore::new();
        let model = RecModel::new(&self.config, &mut scratch, &mut ChaCha8Rng::seed_from_u64(0))?;
        if scratch.names() != self.online.names() {
            return Err(Error::Format("checkpoint parameters do not match its config".into()));
        }
        Ok(model)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let hash = self.config.hash();
        out.extend_from_slice(&(hash.len() as u32).to_le_bytes());
        out.extend_from_slice(hash.as_bytes());
        let json = self.config.to_json();
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(json.as_bytes());
        out.extend_from_slice(&self.updates.to_le_bytes());
        out.extend_from_slice(&self.adam.step.to_le_bytes());
        let names = self.online.names();
        let groups: [(&str, &[Tensor]); 4] = [
            ("online", self.online.tensors()),
            ("target", self.target.tensors()),
            ("adam.m", &self.adam.m),
            ("adam.v", &self.adam.v),
        ];
        let count: usize = groups.iter().map(|g| g.1.len()).sum();
        out.extend_from_slice(&(count as u32).to_le_bytes());
        for (group, tensors) in groups {
            for (name, t) in names.iter().zip(tensors) {
                let full = format!("{group}/{name}");
                out.extend_from_slice(&(full.len() as u32).to_le_bytes());
                out.extend_from_slice(full.as_bytes());
                out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
                for &d in t.shape() {
                    out.extend_from_slice(&(d as u64).to_le_bytes());
                }
                for &v in t.data() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let n = r.u32()? as usize;
        let hash = r.string(n)?;
        let n = r.len_u64()?;
        let json = r.string(n)?;
        let config = ExperimentConfig::from_json(&json).map_err(|e| Error::Format(format!("embedded config: {e}")))?;
        if config.hash() != hash {
            return Err(Error::Format("config hash mismatch".into()));
        }
        let updates = r.u64()?;
        let adam_step = r.u64()?;
        let count = r.u32()? as usize;

        let mut online = ParamStore::new();
        RecModel::new(&config, &mut online, &mut ChaCha8Rng::seed_from_u64(0))?;
        let names: Vec<String> = online.names().to_vec();
        if count != 4 * names.len() {
            return Err(Error::Format(format!(
                "expected {} tensors, found {count}",
                4 * names.len()
            )));
        }
        let mut target = online.clone();
        let mut adam = AdamState::new(online.tensors());
        adam.step = adam_step;
        for group in ["online", "target", "adam.m", "adam.v"] {
            for (i, name) in names.iter().enumerate() {
                let n = r.u32()? as usize;
                let got = r.string(n)?;
                let want = format!("{group}/{name}");
                if got != want {
                    return Err(Error::Format(format!("expected tensor {want}, found {got}")));
                }
                let rank = r.u32()? as usize;
                let shape = (0..rank).map(|_| r.len_u64()).collect::<Result<Vec<_>>>()?;
                let slot = match group {
                    "online" => &mut online.tensors_mut()[i],
                    "target" => &mut target.tensors_mut()[i],
                    "adam.m" => &mut adam.m[i],
                    _ => &mut adam.v[i],
                };
                if shape != slot.shape() {
                    return Err(Error::Format(format!(
                        "tensor {want} has shape {shape:?}, expected {:?}",
                        slot.shape()
                    )));
                }
                for v in slot.data_mut() {
                    *v = f64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
                }
            }
        }
        if r.pos != bytes.len() {
            return Err(Error::Format(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Checkpoint {
            config,
            online,
            target,
            adam,
            updates,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_bytes(&bytes).map_err(|e| match e {
            Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn len_u64(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Format("length overflows usize".into()))
    }

    fn string(&mut self, n: usize) -> Result<String> {
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Format(format!("invalid UTF-8 before byte {}", self.pos)))
    }
}
