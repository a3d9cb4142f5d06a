//! The hybrid forecaster: a convolutional encoder per day, a Transformer
//! encoder across the seven days, temporal mean pooling, and a mirrored
//! transposed-convolution decoder.

pub mod attention;
pub mod cnn;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::grid::{GridSpec, ScalarField, StateFrame, CONTEXT_LEN, RASTER_CHANNELS};
use crate::loss::FrameGradient;
use crate::nn::{kaiming_uniform, Graph, ParamId, ParamStore, Tensor, Var};
use crate::{Error, Result};

use attention::{attention_layer, sinusoidal_encoding, EncoderLayerParams};
use cnn::CnnStack;

pub const MAX_CNN_LAYERS: usize = 4;
pub const MAX_TRANSFORMER_LAYERS: usize = 4;

/// Largest `f32` strictly below one. Front probabilities are clamped into
/// `[FRONT_FLOOR, FRONT_CEIL]` so saturated sigmoids stay inside `(0, 1)`.
pub const FRONT_CEIL: f32 = 1.0 - f32::EPSILON / 2.0;
pub const FRONT_FLOOR: f32 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// 0 flattens raw frames straight into the Transformer.
    pub cnn_layers: usize,
    pub transformer_layers: usize,
    pub d_model: usize,
    pub heads: usize,
    pub d_ff: usize,
    /// `false` trains on the front channel alone.
    pub use_physics: bool,
    #[serde(default = "default_true")]
    pub positional_encoding: bool,
    /// Velocities are divided by this before entering the network and
    /// multiplied by it on the way out.
    #[serde(default = "unit_scale")]
    pub velocity_scale: f64,
    pub grid: GridSpec,
    pub seed: u64,
}

fn default_true() -> bool {
    true
}

pub(crate) fn unit_scale() -> f64 {
    1.0
}

pub(crate) fn check_velocity_scale(scale: f64) -> Result<()> {
    if scale > 0.0 && scale.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("velocity_scale must be positive, got {scale}")))
    }
}

impl ModelConfig {
    /// Reference architecture: two CNN layers, two attention layers,
    /// `d_model = 512`, eight heads, feed-forward width 1024.
    pub fn paper(grid: GridSpec) -> Self {
        ModelConfig {
            cnn_layers: 2,
            transformer_layers: 2,
            d_model: 512,
            heads: 8,
            d_ff: 1024,
            use_physics: true,
            positional_encoding: true,
            velocity_scale: 1.0,
            grid,
            seed: 0,
        }
    }

    /// Desk-scale variant with the same topology.
    pub fn tiny(grid: GridSpec) -> Self {
        ModelConfig {
            d_model: 64,
            heads: 4,
            d_ff: 128,
            ..Self::paper(grid)
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        check_velocity_scale(self.velocity_scale)?;
        if self.cnn_layers > MAX_CNN_LAYERS {
            return Err(Error::InvalidConfig(format!(
                "cnn_layers must be in 0..={MAX_CNN_LAYERS}, got {}",
                self.cnn_layers
            )));
        }
        if !(1..=MAX_TRANSFORMER_LAYERS).contains(&self.transformer_layers) {
            return Err(Error::InvalidConfig(format!(
                "transformer_layers must be in 1..={MAX_TRANSFORMER_LAYERS}, got {}",
                self.transformer_layers
            )));
        }
        if self.d_model == 0 || self.heads == 0 || self.d_ff == 0 {
            return Err(Error::InvalidConfig("d_model, heads and d_ff must be positive".into()));
        }
        if !self.d_model.is_multiple_of(self.heads) {
            return Err(Error::InvalidConfig(format!(
                "d_model {} is not divisible by {} heads",
                self.d_model, self.heads
            )));
        }
        Ok(())
    }

    pub fn input_channels(&self) -> usize {
        if self.use_physics {
            RASTER_CHANNELS as usize
        } else {
            1
        }
    }

    pub fn channel_schedule(&self) -> Vec<usize> {
        cnn::channel_schedule(self.input_channels(), self.cnn_layers)
    }

    /// `[C', H', W']` of one day after the CNN encoder.
    pub fn latent_shape(&self) -> [usize; 3] {
        let c = self.channel_schedule()[self.cnn_layers];
        let (h, w) = cnn::spatial_schedule(self.grid.height, self.grid.width, self.cnn_layers)[self.cnn_layers];
        [c, h, w]
    }

    /// Per-day vector length fed to the input projection.
    pub fn flatten_len(&self) -> usize {
        self.latent_shape().iter().product()
    }
}

/// Anything that maps seven consecutive frames to the next one.
pub trait Forecaster: Send + Sync {
    fn grid(&self) -> &GridSpec;

    /// 3 for full-state models, 1 for front-only models.
    fn input_channels(&self) -> usize;

    /// Predicts the frame following `inputs`. Front-only models return zero
    /// velocities.
    fn predict(&self, inputs: &[StateFrame]) -> Result<StateFrame>;
}

/// A trainable forecaster whose forward pass is recorded on a tape.
pub trait Network: Forecaster {
    fn params(&self) -> &ParamStore;
    fn params_mut(&mut self) -> &mut ParamStore;

    /// Output shaped `[C, H, W]` with the front channel already squashed.
    fn forward_graph(&self, g: &mut Graph<'_>, inputs: &[StateFrame]) -> Result<Var>;

    /// Physical velocity per unit of network activation.
    fn velocity_scale(&self) -> f64 {
        1.0
    }

    fn parameter_count(&self) -> usize {
        self.params().scalar_count()
    }
}

/// Runs `forward_graph` without keeping the tape and converts to a frame.
pub fn predict_with<N: Network + ?Sized>(net: &N, inputs: &[StateFrame]) -> Result<StateFrame> {
    let mut g = Graph::new(net.params());
    let out = net.forward_graph(&mut g, inputs)?;
    let day = inputs.last().map_or(0, |f| f.day_index + 1);
    tensor_to_frame(g.value(out), net.input_channels(), *net.grid(), day, net.velocity_scale())
}

/// Checks count, consecutiveness and grid of a context window.
pub fn check_inputs(inputs: &[StateFrame], grid: &GridSpec) -> Result<()> {
    if inputs.len() != CONTEXT_LEN {
        return Err(Error::SequenceTooShort {
            needed: CONTEXT_LEN,
            got: inputs.len(),
        });
    }
    for f in inputs {
        if f.spec() != grid {
            return Err(Error::ShapeMismatch(format!(
                "frame grid {:?} does not match model grid {:?}",
                f.spec(),
                grid
            )));
        }
    }
    for pair in inputs.windows(2) {
        if pair[1].day_index != pair[0].day_index + 1 {
            return Err(Error::InvalidValue(format!(
                "input days not consecutive: {} then {}",
                pair[0].day_index, pair[1].day_index
            )));
        }
    }
    Ok(())
}

/// Stacks the first `channels` channels of each frame into `[T, C, H, W]`,
/// velocities divided by `velocity_scale`.
pub fn frames_to_tensor(frames: &[StateFrame], channels: usize, velocity_scale: f64) -> Tensor {
    let (h, w) = frames[0].front.dim();
    let mut data = Vec::with_capacity(frames.len() * channels * h * w);
    for f in frames {
        for c in 0..channels {
            let s = if c == 0 { 1.0 } else { velocity_scale };
            data.extend(f.channel(c).values().iter().map(|&v| (v / s) as f32));
        }
    }
    Tensor::new(&[frames.len(), channels, h, w], data)
}

/// Converts a `[C, H, W]` network output into a frame. Missing velocity
/// channels become zero.
pub fn tensor_to_frame(
    t: &Tensor,
    channels: usize,
    spec: GridSpec,
    day_index: i64,
    velocity_scale: f64,
) -> Result<StateFrame> {
    let n = spec.cells();
    if t.len() != channels * n {
        return Err(Error::ShapeMismatch(format!(
            "output has {} values, expected {channels}×{n}",
            t.len()
        )));
    }
    if !t.all_finite() {
        return Err(Error::InvalidValue("network output is not finite".into()));
    }
    let d = t.data();
    let front = ScalarField::from_vec(
        spec,
        d[..n].iter().map(|&p| f64::from(p.clamp(FRONT_FLOOR, FRONT_CEIL))).collect(),
    )?;
    let channel = |c: usize| -> Result<ScalarField> {
        if c < channels {
            ScalarField::from_vec(
                spec,
                d[c * n..(c + 1) * n].iter().map(|&v| f64::from(v) * velocity_scale).collect(),
            )
        } else {
            Ok(ScalarField::zeros(spec))
        }
    };
    StateFrame::new(front, channel(1)?, channel(2)?, day_index)
}

/// Packs a loss gradient into a seed matching a `[C, H, W]` output.
pub fn gradient_to_seed(grad: &FrameGradient, channels: usize, velocity_scale: f64) -> Tensor {
    let (h, w) = grad.front.dim();
    let mut data = Vec::with_capacity(channels * h * w);
    for (c, field) in [&grad.front, &grad.u, &grad.v].into_iter().take(channels).enumerate() {
        let s = if c == 0 { 1.0 } else { velocity_scale };
        data.extend(field.iter().map(|&g| (g * s) as f32));
    }
    Tensor::new(&[channels, h, w], data)
}

/// The hybrid CNN + Transformer forecaster.
#[derive(Debug, Clone)]
pub struct CtpModel {
    config: ModelConfig,
    store: ParamStore,
    cnn: CnnStack,
    proj_in: (ParamId, ParamId),
    layers: Vec<EncoderLayerParams>,
    proj_out: (ParamId, ParamId),
    positions: Tensor,
}

impl CtpModel {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let grid = config.grid;
        let cnn = CnnStack::register(
            &mut store,
            &mut rng,
            config.input_channels(),
            grid.height,
            grid.width,
            config.cnn_layers,
        );
        let (flat, d) = (config.flatten_len(), config.d_model);
        let proj_in = (
            store.add("proj_in.weight", kaiming_uniform(&[flat, d], flat, &mut rng)),
            store.add("proj_in.bias", Tensor::zeros(&[d])),
        );
        let layers = (0..config.transformer_layers)
            .map(|l| EncoderLayerParams::register(&mut store, &mut rng, &format!("tf.{l}"), d, config.heads, config.d_ff))
            .collect();
        let proj_out = (
            store.add("proj_out.weight", kaiming_uniform(&[d, flat], d, &mut rng)),
            store.add("proj_out.bias", Tensor::zeros(&[flat])),
        );
        Ok(CtpModel {
            config,
            store,
            cnn,
            proj_in,
            layers,
            proj_out,
            positions: sinusoidal_encoding(CONTEXT_LEN, d),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// `[T, C, H, W] → [T, C', H', W']`; identity without CNN layers.
    pub fn encode_cnn(&self, stack: &Tensor) -> Result<Tensor> {
        let expected = [self.config.input_channels(), self.config.grid.height, self.config.grid.width];
        if stack.shape().len() != 4 || stack.shape()[1..] != expected {
            return Err(Error::ShapeMismatch(format!(
                "CNN input {:?} does not match [T, {}, {}, {}]",
                stack.shape(),
                expected[0],
                expected[1],
                expected[2]
            )));
        }
        let mut g = Graph::new(&self.store);
        let x = g.input(stack.clone());
        let z = self.cnn.encode(&mut g, x);
        Ok(g.value(z).clone())
    }

    /// Mean-pooled `1×d_model` embedding of a checked window. With
    /// `apply_attention = false` the Transformer layers are skipped.
    pub fn embed(&self, g: &mut Graph<'_>, inputs: &[StateFrame], apply_attention: bool) -> Result<Var> {
        let h = self.latent_sequence(g, inputs, apply_attention)?;
        Ok(g.mean_rows(h))
    }

    /// The `T×d_model` sequence entering the temporal mean.
    pub fn latent_sequence(&self, g: &mut Graph<'_>, inputs: &[StateFrame], apply_attention: bool) -> Result<Var> {
        check_inputs(inputs, &self.config.grid)?;
        let x = g.input(frames_to_tensor(inputs, self.config.input_channels(), self.config.velocity_scale));
        let z = self.cnn.encode(g, x);
        let z = g.reshape(z, &[CONTEXT_LEN, self.config.flatten_len()]);
        let (w, b) = (g.param(self.proj_in.0), g.param(self.proj_in.1));
        let mut h = g.matmul(z, w);
        h = g.add_bias(h, b);
        if self.config.positional_encoding {
            let pe = g.input(self.positions.clone());
            h = g.add(h, pe);
        }
        if apply_attention {
            for layer in &self.layers {
                h = attention_layer(g, h, layer);
            }
        }
        Ok(h)
    }

    /// Pooled embedding values, for inspection.
    pub fn pooled_embedding(&self, inputs: &[StateFrame], apply_attention: bool) -> Result<Vec<f32>> {
        let mut g = Graph::new(&self.store);
        let e = self.embed(&mut g, inputs, apply_attention)?;
        Ok(g.value(e).data().to_vec())
    }
}

impl Forecaster for CtpModel {
    fn grid(&self) -> &GridSpec {
        &self.config.grid
    }

    fn input_channels(&self) -> usize {
        self.config.input_channels()
    }

    fn predict(&self, inputs: &[StateFrame]) -> Result<StateFrame> {
        predict_with(self, inputs)
    }
}

impl Network for CtpModel {
    fn params(&self) -> &ParamStore {
        &self.store
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn velocity_scale(&self) -> f64 {
        self.config.velocity_scale
    }

    fn forward_graph(&self, g: &mut Graph<'_>, inputs: &[StateFrame]) -> Result<Var> {
        let pooled = self.embed(g, inputs, true)?;
        let (w, b) = (g.param(self.proj_out.0), g.param(self.proj_out.1));
        let back = g.matmul(pooled, w);
        let back = g.add_bias(back, b);
        let [c, h, wd] = self.config.latent_shape();
        let latent = g.reshape(back, &[1, c, h, wd]);
        let out = self.cnn.decode(g, latent);
        let GridSpec { height, width, .. } = self.config.grid;
        let out = g.reshape(out, &[self.config.input_channels(), height, width]);
        Ok(g.sigmoid_prefix(out, height * width))
    }
}
