//! Raster data model: grid geometry, scalar fields, daily state frames,
//! sample windows and chronological datasets, plus the `FGRID1` raster
//! file format.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of input days per sample.
pub const CONTEXT_LEN: usize = 7;

/// File magic of a single raster frame.
pub const RASTER_MAGIC: &[u8; 7] = b"FGRID1\n";

/// Channels stored per raster: front, u, v.
pub const RASTER_CHANNELS: u32 = 3;

const HEADER_LEN: usize = 7 + 4 * 3 + 8 * 4;

/// Physical geometry of the raster.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub height: usize,
    pub width: usize,
    pub dx_meters: f64,
    pub dt_seconds: f64,
    pub nu: f64,
}

impl GridSpec {
    pub const PAPER_DX_METERS: f64 = 9000.0;
    pub const PAPER_DT_SECONDS: f64 = 86_400.0;
    pub const PAPER_NU: f64 = 1e-6;

    pub fn new(height: usize, width: usize, dx_meters: f64, dt_seconds: f64, nu: f64) -> Result<Self> {
        let spec = GridSpec {
            height,
            width,
            dx_meters,
            dt_seconds,
            nu,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// A grid with the 9 km / 1 day / 1e-6 m²/s geometry of the reference setup.
    pub fn ocean(height: usize, width: usize) -> Result<Self> {
        Self::new(
            height,
            width,
            Self::PAPER_DX_METERS,
            Self::PAPER_DT_SECONDS,
            Self::PAPER_NU,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.height < 4 || self.width < 4 {
            return Err(Error::InvalidConfig(format!(
                "grid must be at least 4x4, got {}x{}",
                self.height, self.width
            )));
        }
        if !(self.dx_meters > 0.0 && self.dx_meters.is_finite()) {
            return Err(Error::InvalidConfig(format!("dx_meters must be > 0, got {}", self.dx_meters)));
        }
        if !(self.dt_seconds > 0.0 && self.dt_seconds.is_finite()) {
            return Err(Error::InvalidConfig(format!("dt_seconds must be > 0, got {}", self.dt_seconds)));
        }
        if !(self.nu >= 0.0 && self.nu.is_finite()) {
            return Err(Error::InvalidConfig(format!("nu must be >= 0, got {}", self.nu)));
        }
        Ok(())
    }

    pub fn cells(&self) -> usize {
        self.height * self.width
    }
}

/// An H×W field of finite values on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    values: Array2<f64>,
    spec: GridSpec,
}

impl ScalarField {
    pub fn new(spec: GridSpec, values: Array2<f64>) -> Result<Self> {
        if values.dim() != (spec.height, spec.width) {
            return Err(Error::ShapeMismatch(format!(
                "field is {:?}, grid is {}x{}",
                values.dim(),
                spec.height,
                spec.width
            )));
        }
        if let Some(((i, j), v)) = values.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::InvalidValue(format!("non-finite value {v} at ({i}, {j})")));
        }
        Ok(ScalarField { values, spec })
    }

    pub fn zeros(spec: GridSpec) -> Self {
        ScalarField {
            values: Array2::zeros((spec.height, spec.width)),
            spec,
        }
    }

    pub fn filled(spec: GridSpec, value: f64) -> Result<Self> {
        Self::new(spec, Array2::from_elem((spec.height, spec.width), value))
    }

    pub fn from_fn(spec: GridSpec, f: impl FnMut((usize, usize)) -> f64) -> Result<Self> {
        Self::new(spec, Array2::from_shape_fn((spec.height, spec.width), f))
    }

    /// Row-major values; `data.len()` must equal H·W.
    pub fn from_vec(spec: GridSpec, data: Vec<f64>) -> Result<Self> {
        let values = Array2::from_shape_vec((spec.height, spec.width), data)
            .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
        Self::new(spec, values)
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn dim(&self) -> (usize, usize) {
        self.values.dim()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[[i, j]]
    }

    pub fn ensure_same_grid(&self, other: &ScalarField) -> Result<()> {
        if self.spec != other.spec {
            return Err(Error::ShapeMismatch(format!(
                "grid specs differ: {:?} vs {:?}",
                self.spec, other.spec
            )));
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(self.spec, self.values.mapv(f))
    }
}

/// One day's state: front probability (or label) and velocities.
#[derive(Debug, Clone, PartialEq)]
pub struct StateFrame {
    pub front: ScalarField,
    pub u: ScalarField,
    pub v: ScalarField,
    pub day_index: i64,
}

impl StateFrame {
    pub fn new(front: ScalarField, u: ScalarField, v: ScalarField, day_index: i64) -> Result<Self> {
        front.ensure_same_grid(&u)?;
        front.ensure_same_grid(&v)?;
        if let Some(((i, j), p)) = front
            .values()
            .indexed_iter()
            .find(|(_, p)| !(0.0..=1.0).contains(*p))
        {
            return Err(Error::InvalidValue(format!("front value {p} outside [0, 1] at ({i}, {j})")));
        }
        Ok(StateFrame { front, u, v, day_index })
    }

    pub fn zeros(spec: GridSpec, day_index: i64) -> Self {
        StateFrame {
            front: ScalarField::zeros(spec),
            u: ScalarField::zeros(spec),
            v: ScalarField::zeros(spec),
            day_index,
        }
    }

    pub fn spec(&self) -> &GridSpec {
        self.front.spec()
    }

    /// Channel `c` in storage order (0 front, 1 u, 2 v).
    pub fn channel(&self, c: usize) -> &ScalarField {
        match c {
            0 => &self.front,
            1 => &self.u,
            2 => &self.v,
            _ => panic!("state frames have 3 channels, asked for {c}"),
        }
    }
}

/// Consecutive input days and the day to predict.
#[derive(Debug, Clone)]
pub struct SampleWindow {
    inputs: Vec<Arc<StateFrame>>,
    target: Arc<StateFrame>,
}

impl SampleWindow {
    /// The target must follow the last input by exactly one day.
    pub fn new(inputs: Vec<Arc<StateFrame>>, target: Arc<StateFrame>) -> Result<Self> {
        Self::with_lead(inputs, target, 1)
    }

    fn with_lead(inputs: Vec<Arc<StateFrame>>, target: Arc<StateFrame>, lead: i64) -> Result<Self> {
        if inputs.len() != CONTEXT_LEN {
            return Err(Error::InvalidConfig(format!(
                "a sample window holds {CONTEXT_LEN} inputs, got {}",
                inputs.len()
            )));
        }
        for pair in inputs.windows(2) {
            if pair[1].day_index != pair[0].day_index + 1 {
                return Err(Error::InvalidValue(format!(
                    "input days not consecutive: {} then {}",
                    pair[0].day_index, pair[1].day_index
                )));
            }
        }
        let last = inputs[inputs.len() - 1].day_index;
        if target.day_index != last + lead {
            return Err(Error::InvalidValue(format!(
                "target day {} does not follow last input day {last} by {lead}",
                target.day_index
            )));
        }
        let spec = *inputs[0].spec();
        if inputs.iter().any(|f| *f.spec() != spec) || *target.spec() != spec {
            return Err(Error::ShapeMismatch("window frames use different grids".into()));
        }
        Ok(SampleWindow { inputs, target })
    }

    pub fn inputs(&self) -> &[Arc<StateFrame>] {
        &self.inputs
    }

    pub fn target(&self) -> &StateFrame {
        &self.target
    }

    pub fn last_input(&self) -> &StateFrame {
        &self.inputs[self.inputs.len() - 1]
    }

    pub fn input_frames(&self) -> Vec<StateFrame> {
        self.inputs.iter().map(|f| (**f).clone()).collect()
    }
}

/// Chronologically ordered windows on one grid.
#[derive(Debug, Clone)]
pub struct Dataset {
    samples: Vec<SampleWindow>,
    spec: GridSpec,
}

impl Dataset {
    pub fn new(spec: GridSpec, samples: Vec<SampleWindow>) -> Result<Self> {
        if samples.iter().any(|s| *s.target().spec() != spec) {
            return Err(Error::ShapeMismatch("sample grid differs from dataset grid".into()));
        }
        if samples
            .windows(2)
            .any(|w| w[1].target().day_index <= w[0].target().day_index)
        {
            return Err(Error::InvalidValue("samples are not chronological".into()));
        }
        Ok(Dataset { samples, spec })
    }

    pub fn samples(&self) -> &[SampleWindow] {
        &self.samples
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// First `n` samples.
    pub fn truncated(&self, n: usize) -> Dataset {
        Dataset {
            samples: self.samples[..n.min(self.samples.len())].to_vec(),
            spec: self.spec,
        }
    }
}

/// Slides a window of `context` inputs over `frames`; each target sits
/// `horizon` days after the last input.
pub fn window_dataset(frames: &[StateFrame], context: usize, horizon: usize) -> Result<Dataset> {
    if context != CONTEXT_LEN {
        return Err(Error::InvalidConfig(format!(
            "context length must be {CONTEXT_LEN}, got {context}"
        )));
    }
    if horizon == 0 {
        return Err(Error::InvalidConfig("horizon must be >= 1".into()));
    }
    let needed = context + horizon;
    if frames.len() < needed {
        return Err(Error::SequenceTooShort {
            needed,
            got: frames.len(),
        });
    }
    let spec = *frames[0].spec();
    for pair in frames.windows(2) {
        if pair[1].day_index != pair[0].day_index + 1 {
            return Err(Error::InvalidValue(format!(
                "frames not consecutive: day {} followed by {}",
                pair[0].day_index, pair[1].day_index
            )));
        }
    }
    let shared: Vec<Arc<StateFrame>> = frames.iter().cloned().map(Arc::new).collect();
    let count = frames.len() - context - horizon + 1;
    let samples = (0..count)
        .map(|start| {
            let inputs = shared[start..start + context].to_vec();
            let target = Arc::clone(&shared[start + context + horizon - 1]);
            SampleWindow::with_lead(inputs, target, horizon as i64)
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(spec, samples)
}

/// Chronological split: the first ⌊ratio·N⌋ samples train, the rest test.
pub fn split_train_test(ds: &Dataset, ratio: f64) -> Result<(Dataset, Dataset)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::InvalidConfig(format!("split ratio must be in (0, 1), got {ratio}")));
    }
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let n_train = (ratio * ds.len() as f64).floor() as usize;
    let (train, test) = ds.samples.split_at(n_train);
    Ok((
        Dataset {
            samples: train.to_vec(),
            spec: ds.spec,
        },
        Dataset {
            samples: test.to_vec(),
            spec: ds.spec,
        },
    ))
}

/// Decoded raster header.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RasterHeader {
    pub height: u32,
    pub width: u32,
    pub channels: u32,
    pub day_index: i64,
    pub dx_meters: f64,
    pub dt_seconds: f64,
    pub nu: f64,
}

/// Encodes a header and channel-major, row-major payload. Rejects values
/// that are not finite as float32.
pub fn encode_raster(header: &RasterHeader, payload: &[f32]) -> Result<Vec<u8>> {
    let expected = header.channels as usize * header.height as usize * header.width as usize;
    if payload.len() != expected {
        return Err(Error::DimensionMismatch(format!(
            "payload has {} values, header declares {expected}",
            payload.len()
        )));
    }
    if let Some(pos) = payload.iter().position(|v| !v.is_finite()) {
        return Err(Error::InvalidValue(format!(
            "non-finite float32 value {} at payload index {pos}",
            payload[pos]
        )));
    }
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * payload.len());
    out.extend_from_slice(RASTER_MAGIC);
    out.extend_from_slice(&header.height.to_le_bytes());
    out.extend_from_slice(&header.width.to_le_bytes());
    out.extend_from_slice(&header.channels.to_le_bytes());
    out.extend_from_slice(&header.day_index.to_le_bytes());
    out.extend_from_slice(&header.dx_meters.to_le_bytes());
    out.extend_from_slice(&header.dt_seconds.to_le_bytes());
    out.extend_from_slice(&header.nu.to_le_bytes());
    for v in payload {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

/// Inverse of [`encode_raster`].
pub fn decode_raster(bytes: &[u8]) -> Result<(RasterHeader, Vec<f32>)> {
    let magic_len = RASTER_MAGIC.len();
    if bytes.len() < magic_len || &bytes[..magic_len] != RASTER_MAGIC {
        return Err(Error::BadMagic {
            expected: String::from_utf8_lossy(RASTER_MAGIC).into_owned(),
            found: bytes[..bytes.len().min(magic_len)].to_vec(),
        });
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::Truncated {
            expected: HEADER_LEN,
            found: bytes.len(),
        });
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let u64_at = |o: usize| -> [u8; 8] { bytes[o..o + 8].try_into().unwrap() };
    let header = RasterHeader {
        height: u32_at(7),
        width: u32_at(11),
        channels: u32_at(15),
        day_index: i64::from_le_bytes(u64_at(19)),
        dx_meters: f64::from_le_bytes(u64_at(27)),
        dt_seconds: f64::from_le_bytes(u64_at(35)),
        nu: f64::from_le_bytes(u64_at(43)),
    };
    let count = header.channels as usize * header.height as usize * header.width as usize;
    let expected = HEADER_LEN + 4 * count;
    if bytes.len() < expected {
        return Err(Error::Truncated {
            expected,
            found: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(Error::DimensionMismatch(format!(
            "file has {} bytes, header declares {expected}",
            bytes.len()
        )));
    }
    let payload = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((header, payload))
}

/// Serializes a frame to raster bytes. Values are stored as float32.
pub fn frame_to_bytes(frame: &StateFrame) -> Result<Vec<u8>> {
    let spec = frame.spec();
    let header = RasterHeader {
        height: spec.height as u32,
        width: spec.width as u32,
        channels: RASTER_CHANNELS,
        day_index: frame.day_index,
        dx_meters: spec.dx_meters,
        dt_seconds: spec.dt_seconds,
        nu: spec.nu,
    };
    let mut payload = Vec::with_capacity(3 * spec.cells());
    for c in 0..3 {
        payload.extend(frame.channel(c).values().iter().map(|&v| v as f32));
    }
    encode_raster(&header, &payload)
}

pub fn frame_from_bytes(bytes: &[u8]) -> Result<StateFrame> {
    let (header, payload) = decode_raster(bytes)?;
    if header.channels != RASTER_CHANNELS {
        return Err(Error::DimensionMismatch(format!(
            "expected {RASTER_CHANNELS} channels, header declares {}",
            header.channels
        )));
    }
    let spec = GridSpec::new(
        header.height as usize,
        header.width as usize,
        header.dx_meters,
        header.dt_seconds,
        header.nu,
    )
    .map_err(|e| Error::DimensionMismatch(e.to_string()))?;
    let plane = spec.cells();
    let field = |c: usize| {
        let data = payload[c * plane..(c + 1) * plane].iter().map(|&v| v as f64).collect();
        ScalarField::from_vec(spec, data)
    };
    StateFrame::new(field(0)?, field(1)?, field(2)?, header.day_index)
}

pub fn save_raster(frame: &StateFrame, destination: impl AsRef<Path>) -> Result<()> {
    let path = destination.as_ref();
    let bytes = frame_to_bytes(frame)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_raster(source: impl AsRef<Path>) -> Result<StateFrame> {
    let path = source.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    frame_from_bytes(&bytes)
}

pub fn frame_file_name(index: usize) -> String {
    format!("frame_{index:06}.bin")
}

/// Writes `frame_000000.bin`, `frame_000001.bin`, ... into `dir`.
pub fn save_sequence(frames: &[StateFrame], dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    frames
        .iter()
        .enumerate()
        .map(|(i, frame)| {
            let path = dir.join(frame_file_name(i));
            save_raster(frame, &path)?;
            Ok(path)
        })
        .collect()
}

/// Loads every `frame_*.bin` in `dir`, sorted by file name.
pub fn load_sequence(dir: impl AsRef<Path>) -> Result<Vec<StateFrame>> {
    let dir = dir.as_ref();
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("frame_") && n.ends_with(".bin"))
        })
        .collect();
    paths.sort();
    paths.iter().map(load_raster).collect()
}
