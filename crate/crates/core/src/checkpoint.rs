//! Single-file model checkpoints.
//!
//! Layout: the 8-byte magic `CTPCKPT1`, a little-endian `u32` length and
//! that many bytes of JSON describing the model, a `u32` block count, then
//! per block a `u32` name length, the UTF-8 name, a `u32` rank, `u64`
//! dimensions and the float32 little-endian values.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baselines::{BaselineConfig, BaselineModel};
use crate::grid::{load_sequence, GridSpec, StateFrame};
use crate::model::{check_inputs, CtpModel, Forecaster, ModelConfig, Network};
use crate::nn::ParamStore;
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"CTPCKPT1";

/// Ground-truth lookup standing in for a trained model in evaluation
/// plumbing tests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleConfig {
    pub grid: GridSpec,
    /// Raster directory holding the frames the oracle replays.
    pub data_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "lowercase")]
pub enum ModelSpec {
    Ctp(ModelConfig),
    Baseline(BaselineConfig),
    Oracle(OracleConfig),
}

impl ModelSpec {
    pub fn grid(&self) -> &GridSpec {
        match self {
            ModelSpec::Ctp(c) => &c.grid,
            ModelSpec::Baseline(c) => &c.grid,
            ModelSpec::Oracle(c) => &c.grid,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ModelSpec::Ctp(_) => "ctp",
            ModelSpec::Baseline(c) => c.kind.name(),
            ModelSpec::Oracle(_) => "oracle",
        }
    }
}

/// Replays the true frame for the requested day.
#[derive(Debug, Clone)]
pub struct OracleModel {
    config: OracleConfig,
    frames: BTreeMap<i64, StateFrame>,
}

impl OracleModel {
    pub fn new(config: OracleConfig) -> Result<Self> {
        config.grid.validate()?;
        let frames = load_sequence(&config.data_dir)?;
        if let Some(f) = frames.first() {
            if f.spec() != &config.grid {
                return Err(Error::ShapeMismatch(format!(
                    "oracle data in {} does not match the configured grid",
                    config.data_dir.display()
                )));
            }
        }
        let frames = frames.into_iter().map(|f| (f.day_index, f)).collect();
        Ok(OracleModel { config, frames })
    }

    pub fn config(&self) -> &OracleConfig {
        &self.config
    }
}

impl Forecaster for OracleModel {
    fn grid(&self) -> &GridSpec {
        &self.config.grid
    }

    fn input_channels(&self) -> usize {
        3
    }

    fn predict(&self, inputs: &[StateFrame]) -> Result<StateFrame> {
        check_inputs(inputs, &self.config.grid)?;
        let day = inputs[inputs.len() - 1].day_index + 1;
        self.frames
            .get(&day)
            .cloned()
            .ok_or_else(|| Error::InvalidValue(format!("oracle has no frame for day {day}")))
    }
}

/// Any model a checkpoint can hold.
#[derive(Debug, Clone)]
pub enum AnyModel {
    Ctp(CtpModel),
    Baseline(BaselineModel),
    Oracle(OracleModel),
}

impl AnyModel {
    pub fn build(spec: &ModelSpec) -> Result<Self> {
        Ok(match spec {
            ModelSpec::Ctp(c) => AnyModel::Ctp(CtpModel::new(*c)?),
            ModelSpec::Baseline(c) => AnyModel::Baseline(BaselineModel::new(*c)?),
            ModelSpec::Oracle(c) => AnyModel::Oracle(OracleModel::new(c.clone())?),
        })
    }

    pub fn spec(&self) -> ModelSpec {
        match self {
            AnyModel::Ctp(m) => ModelSpec::Ctp(*m.config()),
            AnyModel::Baseline(m) => ModelSpec::Baseline(*m.config()),
            AnyModel::Oracle(m) => ModelSpec::Oracle(m.config().clone()),
        }
    }

    /// The trainable network, absent for the oracle.
    pub fn network(&self) -> Option<&dyn Network> {
        match self {
            AnyModel::Ctp(m) => Some(m),
            AnyModel::Baseline(m) => Some(m),
            AnyModel::Oracle(_) => None,
        }
    }

    pub fn network_mut(&mut self) -> Option<&mut dyn Network> {
        match self {
            AnyModel::Ctp(m) => Some(m),
            AnyModel::Baseline(m) => Some(m),
            AnyModel::Oracle(_) => None,
        }
    }
}

impl Forecaster for AnyModel {
    fn grid(&self) -> &GridSpec {
        match self {
            AnyModel::Ctp(m) => m.grid(),
            AnyModel::Baseline(m) => m.grid(),
            AnyModel::Oracle(m) => m.grid(),
        }
    }

    fn input_channels(&self) -> usize {
        match self {
            AnyModel::Ctp(m) => m.input_channels(),
            AnyModel::Baseline(m) => m.input_channels(),
            AnyModel::Oracle(m) => m.input_channels(),
        }
    }

    fn predict(&self, inputs: &[StateFrame]) -> Result<StateFrame> {
        match self {
            AnyModel::Ctp(m) => m.predict(inputs),
            AnyModel::Baseline(m) => m.predict(inputs),
            AnyModel::Oracle(m) => m.predict(inputs),
        }
    }
}

pub fn to_bytes(model: &AnyModel) -> Result<Vec<u8>> {
    let header = serde_json::to_vec(&model.spec())?;
    let empty = ParamStore::new();
    let store = model.network().map_or(&empty, |n| n.params());
    let mut out = Vec::with_capacity(16 + header.len() + 4 * store.scalar_count());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&len_u32(header.len())?.to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&len_u32(store.len())?.to_le_bytes());
    for (name, tensor) in store.iter() {
        out.extend_from_slice(&len_u32(name.len())?.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&len_u32(tensor.shape().len())?.to_le_bytes());
        for &d in tensor.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &x in tensor.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(out)
}

fn len_u32(n: usize) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::Checkpoint(format!("length {n} does not fit in u32")))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or(Error::Truncated {
            expected: self.pos.saturating_add(n),
            found: self.bytes.len(),
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn u64(&mut self) -> Result<usize> {
        let v = u64::from_le_bytes(self.take(8)?.try_into().unwrap());
        usize::try_from(v).map_err(|_| Error::Checkpoint(format!("dimension {v} too large")))
    }
}

/// Rebuilds the model from its header and overwrites every parameter with
/// the stored block of the same name; names and shapes must match exactly.
pub fn from_bytes(bytes: &[u8]) -> Result<AnyModel> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(CHECKPOINT_MAGIC.len()).map_err(|_| Error::BadMagic {
        expected: String::from_utf8_lossy(CHECKPOINT_MAGIC).into_owned(),
        found: bytes.to_vec(),
    })?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::BadMagic {
            expected: String::from_utf8_lossy(CHECKPOINT_MAGIC).into_owned(),
            found: magic.to_vec(),
        });
    }
    let header_len = r.u32()?;
    let spec: ModelSpec = serde_json::from_slice(r.take(header_len)?)?;
    let mut model = AnyModel::build(&spec)?;
    let blocks = r.u32()?;
    let mut empty = ParamStore::new();
    let store = match model.network_mut() {
        Some(n) => n.params_mut(),
        None => &mut empty,
    };
    if blocks != store.len() {
        return Err(Error::Checkpoint(format!(
            "{} model has {} parameter blocks, checkpoint has {blocks}",
            spec.name(),
            store.len()
        )));
    }
    let mut seen = vec![false; store.len()];
    for _ in 0..blocks {
        let name_len = r.u32()?;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::Checkpoint("parameter name is not UTF-8".into()))?;
        let id = store
            .find(name)
            .ok_or_else(|| Error::Checkpoint(format!("unexpected parameter {name:?}")))?;
        let slot = id.0;
        if std::mem::replace(&mut seen[slot], true) {
            return Err(Error::Checkpoint(format!("parameter {name:?} appears twice")));
        }
        let rank = r.u32()?;
        let shape = (0..rank).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
        let target = store.get_mut(id);
        if target.shape() != shape.as_slice() {
            return Err(Error::Checkpoint(format!(
                "parameter {name:?} has shape {shape:?}, model expects {:?}",
                target.shape()
            )));
        }
        let raw = r.take(4 * target.len())?;
        for (dst, chunk) in target.data_mut().iter_mut().zip(raw.chunks_exact(4)) {
            *dst = f32::from_le_bytes(chunk.try_into().unwrap());
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(model)
}

pub fn save(model: &AnyModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, to_bytes(model)?).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<AnyModel> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}
