//! Binary checkpoint container: `PRCL`, a little-endian u16 version, a
//! length-prefixed `key = value` metadata block, length-prefixed tensor
//! records (name, dtype, rank, extents, f32 payload) and a trailing CRC32 of
//! everything before it.

use std::io::Write;
use std::path::Path;

use super::optim::OptimizerState;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::kv;
use crate::nn::{Model, ModelKind, RunningStats};
use crate::profile::Profile;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"PRCL";
pub const CHECKPOINT_VERSION: u16 = 1;
const DTYPE_F32: u8 = 0;

/// Metadata plus named tensors, as stored on disk.
#[derive(Clone, Debug, PartialEq)]
pub struct RawCheckpoint {
    pub meta: Vec<(String, String)>,
    pub tensors: Vec<(String, Tensor)>,
}

impl RawCheckpoint {
    pub fn meta(&self, key: &str) -> Result<&str> {
        self.meta
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| Error::CheckpointInvalid(format!("missing metadata '{key}'")))
    }

    pub fn meta_parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.meta(key)?;
        raw.parse()
            .map_err(|_| Error::CheckpointInvalid(format!("bad metadata {key} = {raw}")))
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::CheckpointInvalid(format!("missing tensor '{name}'")))
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        let meta: String = self.meta.iter().map(|(k, v)| format!("{k} = {v}\n")).collect();
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(meta.as_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(DTYPE_F32);
            out.push(t.rank() as u8);
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 10 || bytes[..4] != CHECKPOINT_MAGIC {
            return Err(Error::BadHeader);
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != CHECKPOINT_VERSION {
            return Err(Error::VersionUnsupported(version));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().unwrap());
        let computed = crc32fast::hash(body);
        if stored != computed {
            return Err(Error::ChecksumMismatch { stored, computed });
        }
        let mut r = Reader { buf: body, pos: 6 };
        let meta_len = r.u32()? as usize;
        let meta_text = std::str::from_utf8(r.take(meta_len)?)
            .map_err(|_| Error::CheckpointInvalid("metadata is not UTF-8".into()))?;
        let meta = kv::parse(meta_text).map_err(Error::CheckpointInvalid)?;
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = u16::from_le_bytes(r.take(2)?.try_into().unwrap()) as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|_| Error::CheckpointInvalid("tensor name is not UTF-8".into()))?;
            let head = r.take(2)?;
            if head[0] != DTYPE_F32 {
                return Err(Error::CheckpointInvalid(format!("{name}: unknown dtype {}", head[0])));
            }
            let shape = (0..head[1]).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let numel: usize = shape.iter().product();
            let data = r
                .take(numel * 4)?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let t = Tensor::new(shape, data).map_err(|e| Error::CheckpointInvalid(format!("{name}: {e}")))?;
            tensors.push((name, t));
        }
        if r.pos != body.len() {
            return Err(Error::CheckpointInvalid("trailing bytes after tensors".into()));
        }
        Ok(Self { meta, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.encode())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::decode(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::CheckpointInvalid("record runs past end of file".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

/// Writes to a sibling temporary file, then renames over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// A model with the bookkeeping needed to resume or reload it.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelCheckpoint {
    pub kind: ModelKind,
    pub profile: Profile,
    pub model: Model,
    pub optimizer: Option<OptimizerState>,
    pub task_index: usize,
    pub epoch: usize,
    pub validation_loss: f64,
    pub seed: u64,
}

impl ModelCheckpoint {
    pub fn to_raw(&self) -> RawCheckpoint {
        let mut meta = vec![
            ("kind".to_string(), self.kind.to_string()),
            ("profile".to_string(), self.profile.to_string()),
            ("task_index".to_string(), self.task_index.to_string()),
            ("epoch".to_string(), self.epoch.to_string()),
            ("validation_loss".to_string(), self.validation_loss.to_string()),
            ("seed".to_string(), self.seed.to_string()),
        ];
        let mut tensors: Vec<(String, Tensor)> = self
            .model
            .names()
            .iter()
            .cloned()
            .zip(self.model.params().iter().cloned())
            .collect();
        for (i, rs) in self.model.running_stats().iter().enumerate() {
            tensors.push((format!("bn{i}.running_mean"), Tensor::from_vec(rs.mean.clone())));
            tensors.push((format!("bn{i}.running_var"), Tensor::from_vec(rs.var.clone())));
        }
        if let Some(opt) = &self.optimizer {
            meta.push(("adam.lr".into(), opt.lr.to_string()));
            meta.push(("adam.beta1".into(), opt.beta1.to_string()));
            meta.push(("adam.beta2".into(), opt.beta2.to_string()));
            meta.push(("adam.eps".into(), opt.eps.to_string()));
            meta.push(("adam.step".into(), opt.step.to_string()));
            for (i, (m, v)) in opt.m.iter().zip(&opt.v).enumerate() {
                tensors.push((format!("adam.m.{i}"), Tensor::from_vec(m.clone())));
                tensors.push((format!("adam.v.{i}"), Tensor::from_vec(v.clone())));
            }
        }
        RawCheckpoint { meta, tensors }
    }

    pub fn from_raw(raw: &RawCheckpoint) -> Result<Self> {
        let kind: ModelKind = raw.meta("kind")?.parse()?;
        let profile: Profile = raw
            .meta("profile")?
            .parse()
            .map_err(|e: Error| Error::CheckpointInvalid(e.to_string()))?;
        let spec = kind.build(profile);
        let template = Model::new(spec.clone(), 0);
        let params = template
            .names()
            .iter()
            .map(|n| raw.tensor(n).cloned())
            .collect::<Result<Vec<_>>>()?;
        let running = (0..template.running_stats().len())
            .map(|i| {
                Ok(RunningStats {
                    mean: raw.tensor(&format!("bn{i}.running_mean"))?.data().to_vec(),
                    var: raw.tensor(&format!("bn{i}.running_var"))?.data().to_vec(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let model = Model::from_parts(spec, params, running)?;
        let optimizer = match raw.meta("adam.step") {
            Err(_) => None,
            Ok(_) => {
                let n = model.params().len();
                let moments = |prefix: &str| {
                    (0..n)
                        .map(|i| raw.tensor(&format!("adam.{prefix}.{i}")).map(|t| t.data().to_vec()))
                        .collect::<Result<Vec<_>>>()
                };
                Some(OptimizerState {
                    lr: raw.meta_parse("adam.lr")?,
                    beta1: raw.meta_parse("adam.beta1")?,
                    beta2: raw.meta_parse("adam.beta2")?,
                    eps: raw.meta_parse("adam.eps")?,
                    step: raw.meta_parse("adam.step")?,
                    m: moments("m")?,
                    v: moments("v")?,
                })
            }
        };
        Ok(Self {
            kind,
            profile,
            model,
            optimizer,
            task_index: raw.meta_parse("task_index")?,
            epoch: raw.meta_parse("epoch")?,
            validation_loss: raw.meta_parse("validation_loss")?,
            seed: raw.meta_parse("seed")?,
        })
    }
}

pub fn save_checkpoint(c: &ModelCheckpoint, path: &Path) -> Result<()> {
    c.to_raw().save(path)
}

pub fn load_checkpoint(path: &Path) -> Result<ModelCheckpoint> {
    ModelCheckpoint::from_raw(&RawCheckpoint::load(path)?)
}
