//! Binary container for parameters, optimizer moments and loop counters.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "FHDRCKPT"  u32 version  6 × u32 model config  u32 record count
//! record count times:
//!   u32 name_len, name (UTF-8), u8 dtype, u8 rank, rank × u64 extents, data
//! ```
//!
//! The count makes a file cut at a record boundary detectable, and bytes
//! after the last record are rejected.
//!
//! dtype is 1 = f32, 2 = f64, 3 = u64.

use std::collections::BTreeMap;
use std::path::Path;

use super::adam::AdamState;
use crate::error::{Error, Result};
use crate::losses::PerceptualExtractor;
use crate::model::{FhdrParams, ModelConfig};
use crate::tensor::{DType, Real, Shape, Tensor};

pub const MAGIC: &[u8; 8] = b"FHDRCKPT";
pub const VERSION: u32 = 1;
const U64_TAG: u8 = 3;
const MAX_NAME_LEN: usize = 4096;

#[derive(Clone, Debug, PartialEq)]
pub enum RecordData {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
    U64(u64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub name: String,
    pub data: RecordData,
}

impl Record {
    pub fn tensor<T: Real>(name: impl Into<String>, t: &Tensor<T>) -> Self {
        let data = match T::DTYPE {
            DType::F32 => RecordData::F32(t.cast()),
            DType::F64 => RecordData::F64(t.cast()),
        };
        Record {
            name: name.into(),
            data,
        }
    }

    pub fn u64(name: impl Into<String>, v: u64) -> Self {
        Record {
            name: name.into(),
            data: RecordData::U64(v),
        }
    }

    pub fn f64(name: impl Into<String>, v: f64) -> Self {
        Record {
            name: name.into(),
            data: RecordData::F64(Tensor::scalar(v)),
        }
    }
}

fn write_tensor<T: Real>(out: &mut Vec<u8>, t: &Tensor<T>) {
    out.push(T::DTYPE.tag());
    out.push(4);
    for d in t.shape().dims() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &v in t.data() {
        v.write_le(out);
    }
}

pub fn encode_container(config: &ModelConfig, records: &[Record]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for v in config.as_array() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&(records.len() as u32).to_le_bytes());
    for r in records {
        out.extend_from_slice(&(r.name.len() as u32).to_le_bytes());
        out.extend_from_slice(r.name.as_bytes());
        match &r.data {
            RecordData::F32(t) => write_tensor(&mut out, t),
            RecordData::F64(t) => write_tensor(&mut out, t),
            RecordData::U64(v) => {
                out.push(U64_TAG);
                out.push(0);
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::parse(self.pos, format!("truncated {what}")))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn tensor<T: Real>(&mut self, rank: usize, at: usize) -> Result<Tensor<T>> {
        let mut dims = [1usize; 4];
        for i in 0..rank {
            let d = self.u64("tensor extents")?;
            dims[4 - rank + i] = usize::try_from(d).map_err(|_| Error::parse(at, "extent overflows"))?;
        }
        let shape = Shape::new(dims[0], dims[1], dims[2], dims[3]);
        let bytes = dims
            .iter()
            .try_fold(T::DTYPE.size(), |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::parse(at, "tensor size overflows"))?;
        let raw = self.take(bytes, "tensor data")?;
        let data = raw.chunks_exact(T::DTYPE.size()).map(T::read_le).collect();
        Tensor::from_vec(shape, data)
    }
}

pub fn decode_container(bytes: &[u8]) -> Result<(ModelConfig, Vec<Record>)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8, "magic")? != MAGIC {
        return Err(Error::parse(0, "bad magic, not an FHDR checkpoint"));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::Version {
            found: version,
            supported: VERSION,
        });
    }
    let mut cfg = [0u32; 6];
    for v in &mut cfg {
        *v = r.u32("model config")?;
    }
    let count = r.u32("record count")?;
    let mut records = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for _ in 0..count {
        let at = r.pos;
        let len = r.u32("record name length")? as usize;
        if len == 0 || len > MAX_NAME_LEN {
            return Err(Error::parse(at, format!("implausible record name length {len}")));
        }
        let name = std::str::from_utf8(r.take(len, "record name")?)
            .map_err(|_| Error::parse(at + 4, "record name is not UTF-8"))?
            .to_string();
        if !seen.insert(name.clone()) {
            return Err(Error::parse(at, format!("duplicate record {name:?}")));
        }
        let tag_at = r.pos;
        let tag = r.u8("dtype")?;
        let rank = r.u8("rank")? as usize;
        let data = match tag {
            U64_TAG if rank == 0 => RecordData::U64(r.u64("u64 value")?),
            t if t == DType::F32.tag() && rank <= 4 => RecordData::F32(r.tensor(rank, tag_at)?),
            t if t == DType::F64.tag() && rank <= 4 => RecordData::F64(r.tensor(rank, tag_at)?),
            _ => return Err(Error::parse(tag_at, format!("unknown dtype {tag} / rank {rank}"))),
        };
        records.push(Record { name, data });
    }
    if r.pos != bytes.len() {
        return Err(Error::parse(r.pos, "trailing bytes after the last record"));
    }
    Ok((ModelConfig::from_array(cfg), records))
}

/// Where the training loop stands; enough to regenerate the data order.
#[derive(Clone, Debug, PartialEq)]
pub struct Progress {
    /// Current epoch (0-based).
    pub epoch: u64,
    /// Optimizer steps taken so far.
    pub step: u64,
    /// Next batch within the current epoch.
    pub batch_cursor: u64,
    pub seed: u64,
    /// Running loss sum and batch count of the current epoch.
    pub epoch_loss_sum: f64,
    pub epoch_batches: u64,
    pub best_psnr: f64,
}

impl Progress {
    pub fn start(seed: u64) -> Self {
        Progress {
            epoch: 0,
            step: 0,
            batch_cursor: 0,
            seed,
            epoch_loss_sum: 0.0,
            epoch_batches: 0,
            best_psnr: f64::NEG_INFINITY,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: FhdrParams<f32>,
    pub adam: Option<AdamState<f32>>,
    pub progress: Progress,
}

impl Checkpoint {
    pub fn config(&self) -> &ModelConfig {
        self.params.config()
    }

    pub fn check_config(&self, expected: &ModelConfig) -> Result<()> {
        if self.config() != expected {
            return Err(Error::ConfigMismatch {
                expected: expected.to_string(),
                found: self.config().to_string(),
            });
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut records = Vec::new();
        for (name, t) in self.params.names().iter().zip(self.params.tensors()) {
            records.push(Record::tensor(format!("param/{name}"), t));
        }
        if let Some(adam) = &self.adam {
            for (i, name) in self.params.names().iter().enumerate() {
                records.push(Record::tensor(format!("adam/m/{name}"), &adam.m[i]));
                records.push(Record::tensor(format!("adam/v/{name}"), &adam.v[i]));
            }
            records.push(Record::u64("train/adam_step", adam.step));
        }
        let p = &self.progress;
        records.extend([
            Record::u64("train/epoch", p.epoch),
            Record::u64("train/step", p.step),
            Record::u64("train/batch_cursor", p.batch_cursor),
            Record::u64("train/seed", p.seed),
            Record::f64("train/epoch_loss_sum", p.epoch_loss_sum),
            Record::u64("train/epoch_batches", p.epoch_batches),
            Record::f64("train/best_psnr", p.best_psnr),
        ]);
        encode_container(self.config(), &records)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (cfg, records) = decode_container(bytes)?;
        cfg.validate()?;
        let mut map: BTreeMap<String, RecordData> = records.into_iter().map(|r| (r.name, r.data)).collect();
        let mut f32_tensor = |name: &str| match map.remove(name) {
            Some(RecordData::F32(t)) => Some(t),
            Some(RecordData::F64(t)) => Some(t.cast()),
            _ => None,
        };
        let params = FhdrParams::from_named(&cfg, |n| f32_tensor(&format!("param/{n}")))?;

        let adam = match map.remove("train/adam_step") {
            Some(RecordData::U64(step)) => {
                let mut m = Vec::new();
                let mut v = Vec::new();
                for (name, p) in params.names().iter().zip(params.tensors()) {
                    let mut moment = |kind: &str| match map.remove(&format!("adam/{kind}/{name}")) {
                        Some(RecordData::F32(t)) if t.shape() == p.shape() => Ok(t),
                        _ => Err(Error::parse(0, format!("missing or malformed adam/{kind}/{name}"))),
                    };
                    m.push(moment("m")?);
                    v.push(moment("v")?);
                }
                Some(AdamState { m, v, step })
            }
            _ => None,
        };

        let u = |name: &str| match map.get(name) {
            Some(RecordData::U64(v)) => *v,
            _ => 0,
        };
        let mut progress = Progress::start(u("train/seed"));
        progress.epoch = u("train/epoch");
        progress.step = u("train/step");
        progress.batch_cursor = u("train/batch_cursor");
        progress.epoch_batches = u("train/epoch_batches");
        let f = |name: &str, default: f64| match map.get(name) {
            Some(RecordData::F64(t)) if t.numel() == 1 => t.item(),
            _ => default,
        };
        progress.epoch_loss_sum = f("train/epoch_loss_sum", 0.0);
        progress.best_psnr = f("train/best_psnr", f64::NEG_INFINITY);

        Ok(Checkpoint { params, adam, progress })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::file(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path).map_err(|e| Error::file(path, e))?)
    }
}

/// Stores extractor weights in the checkpoint container (its config block
/// is unused).
pub fn encode_extractor<T: Real>(ext: &PerceptualExtractor<T>) -> Vec<u8> {
    let records: Vec<Record> = ext
        .named_tensors()
        .into_iter()
        .map(|(name, t)| Record::tensor(name, t))
        .collect();
    encode_container(&ModelConfig::default(), &records)
}

pub fn decode_extractor(bytes: &[u8]) -> Result<PerceptualExtractor<f32>> {
    let (_, records) = decode_container(bytes)?;
    let mut map: BTreeMap<String, RecordData> = records.into_iter().map(|r| (r.name, r.data)).collect();
    PerceptualExtractor::from_named(|name| match map.remove(name) {
        Some(RecordData::F32(t)) => Some(t),
        Some(RecordData::F64(t)) => Some(t.cast()),
        _ => None,
    })
}
