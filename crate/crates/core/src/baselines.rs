//! Recurrent comparison models: a plain LSTM over flattened frames, a
//! ConvLSTM that wraps the recurrent core in the CTP encoder/decoder, and
//! CLP, the same ConvLSTM topology on all three channels.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::grid::{GridSpec, StateFrame, RASTER_CHANNELS};
use crate::model::cnn::CnnStack;
use crate::model::{check_inputs, check_velocity_scale, frames_to_tensor, predict_with, unit_scale, Forecaster, Network};
use crate::nn::{kaiming_uniform, Graph, ParamId, ParamStore, Tensor, Var};
use crate::{Error, Result};

/// Encoder depth of the convolutional baselines, matching CTP's default.
pub const BASELINE_CNN_LAYERS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineKind {
    Lstm,
    ConvLstm,
    Clp,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 3] = [BaselineKind::Lstm, BaselineKind::ConvLstm, BaselineKind::Clp];

    pub fn name(self) -> &'static str {
        match self {
            BaselineKind::Lstm => "lstm",
            BaselineKind::ConvLstm => "convlstm",
            BaselineKind::Clp => "clp",
        }
    }

    /// CLP sees front and velocity; the others see the front only.
    pub fn input_channels(self) -> usize {
        match self {
            BaselineKind::Clp => RASTER_CHANNELS as usize,
            _ => 1,
        }
    }

    pub fn cnn_layers(self) -> usize {
        match self {
            BaselineKind::Lstm => 0,
            _ => BASELINE_CNN_LAYERS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub kind: BaselineKind,
    pub hidden_size: usize,
    pub num_layers: usize,
    pub learning_rate: f64,
    /// See the field of the same name on the CTP configuration.
    #[serde(default = "unit_scale")]
    pub velocity_scale: f64,
    pub grid: GridSpec,
    pub seed: u64,
}

impl BaselineConfig {
    pub const DEFAULT_LEARNING_RATE: f64 = 1e-3;

    /// Hidden size 512, two layers.
    pub fn paper(kind: BaselineKind, grid: GridSpec) -> Self {
        BaselineConfig {
            kind,
            hidden_size: 512,
            num_layers: 2,
            learning_rate: Self::DEFAULT_LEARNING_RATE,
            velocity_scale: 1.0,
            grid,
            seed: 0,
        }
    }

    pub fn tiny(kind: BaselineKind, grid: GridSpec) -> Self {
        BaselineConfig {
            hidden_size: 32,
            ..Self::paper(kind, grid)
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        check_velocity_scale(self.velocity_scale)?;
        if self.hidden_size == 0 || self.num_layers == 0 {
            return Err(Error::InvalidConfig("hidden_size and num_layers must be positive".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!("learning rate {} is invalid", self.learning_rate)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct LstmLayer {
    w_ih: ParamId,
    w_hh: ParamId,
    bias: ParamId,
}

/// A stacked LSTM with optional convolutional encoder/decoder around it.
#[derive(Debug, Clone)]
pub struct BaselineModel {
    config: BaselineConfig,
    store: ParamStore,
    cnn: CnnStack,
    layers: Vec<LstmLayer>,
    head: (ParamId, ParamId),
}

impl BaselineModel {
    pub fn new(config: BaselineConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let kind = config.kind;
        let cnn = CnnStack::register(
            &mut store,
            &mut rng,
            kind.input_channels(),
            config.grid.height,
            config.grid.width,
            kind.cnn_layers(),
        );
        let flat = cnn.latent_len();
        let hidden = config.hidden_size;
        let layers = (0..config.num_layers)
            .map(|l| {
                let input = if l == 0 { flat } else { hidden };
                register_lstm(&mut store, &mut rng, l, input, hidden)
            })
            .collect();
        let head = (
            store.add("head.weight", kaiming_uniform(&[hidden, flat], hidden, &mut rng)),
            store.add("head.bias", Tensor::zeros(&[flat])),
        );
        Ok(BaselineModel {
            config,
            store,
            cnn,
            layers,
            head,
        })
    }

    pub fn config(&self) -> &BaselineConfig {
        &self.config
    }

    /// Final hidden state of the top layer, `1×hidden`.
    fn recurrent_core(&self, g: &mut Graph<'_>, sequence: Var) -> Var {
        let steps = g.shape(sequence)[0];
        let hidden = self.config.hidden_size;
        let mut inputs: Vec<Var> = (0..steps).map(|t| g.slice_rows(sequence, t, 1)).collect();
        for layer in &self.layers {
            let (w_ih, w_hh, b) = (g.param(layer.w_ih), g.param(layer.w_hh), g.param(layer.bias));
            let mut h = g.input(Tensor::zeros(&[1, hidden]));
            let mut c = g.input(Tensor::zeros(&[1, hidden]));
            let mut outputs = Vec::with_capacity(steps);
            for &x in &inputs {
                let xi = g.matmul(x, w_ih);
                let hh = g.matmul(h, w_hh);
                let gates = g.add(xi, hh);
                let gates = g.add_bias(gates, b);
                let i = g.slice_cols(gates, 0, hidden);
                let f = g.slice_cols(gates, hidden, hidden);
                let cand = g.slice_cols(gates, 2 * hidden, hidden);
                let o = g.slice_cols(gates, 3 * hidden, hidden);
                let (i, f, o) = (g.sigmoid(i), g.sigmoid(f), g.sigmoid(o));
                let cand = g.tanh(cand);
                let keep = g.mul(f, c);
                let write = g.mul(i, cand);
                c = g.add(keep, write);
                let squashed = g.tanh(c);
                h = g.mul(o, squashed);
                outputs.push(h);
            }
            inputs = outputs;
        }
        inputs[steps - 1]
    }
}

fn register_lstm(store: &mut ParamStore, rng: &mut impl Rng, l: usize, input: usize, hidden: usize) -> LstmLayer {
    // gate blocks are laid out as [input, forget, candidate, output]
    LstmLayer {
        w_ih: store.add(format!("lstm.{l}.w_ih"), kaiming_uniform(&[input, 4 * hidden], input, rng)),
        w_hh: store.add(format!("lstm.{l}.w_hh"), kaiming_uniform(&[hidden, 4 * hidden], hidden, rng)),
        bias: store.add(format!("lstm.{l}.bias"), Tensor::zeros(&[4 * hidden])),
    }
}

impl Forecaster for BaselineModel {
    fn grid(&self) -> &GridSpec {
        &self.config.grid
    }

    fn input_channels(&self) -> usize {
        self.config.kind.input_channels()
    }

    fn predict(&self, inputs: &[StateFrame]) -> Result<StateFrame> {
        predict_with(self, inputs)
    }
}

impl Network for BaselineModel {
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
        check_inputs(inputs, &self.config.grid)?;
        let channels = self.input_channels();
        let x = g.input(frames_to_tensor(inputs, channels, self.config.velocity_scale));
        let z = self.cnn.encode(g, x);
        let z = g.reshape(z, &[inputs.len(), self.cnn.latent_len()]);
        let last = self.recurrent_core(g, z);
        let (w, b) = (g.param(self.head.0), g.param(self.head.1));
        let flat = g.matmul(last, w);
        let flat = g.add_bias(flat, b);
        let [c, h, wd] = self.cnn.latent_shape();
        let latent = g.reshape(flat, &[1, c, h, wd]);
        let out = self.cnn.decode(g, latent);
        let GridSpec { height, width, .. } = self.config.grid;
        let out = g.reshape(out, &[channels, height, width]);
        Ok(g.sigmoid_prefix(out, height * width))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{ScalarField, CONTEXT_LEN};

    fn frames(spec: GridSpec, reversed: bool) -> Vec<StateFrame> {
        (0..CONTEXT_LEN as i64)
            .map(|d| {
                let phase = if reversed { CONTEXT_LEN as i64 - 1 - d } else { d } as f64;
                let f = |s: f64| {
                    ScalarField::from_fn(spec, |(i, j)| (0.4 * i as f64 + s * j as f64 + 0.9 * phase).sin()).unwrap()
                };
                let front = f(0.3).map(|x| 0.5 + 0.5 * x).unwrap();
                StateFrame::new(front, f(0.1), f(-0.7), d).unwrap()
            })
            .collect()
    }

    #[test]
    fn output_shapes_and_range() {
        let spec = GridSpec::ocean(16, 16).unwrap();
        for kind in BaselineKind::ALL {
            let model = BaselineModel::new(BaselineConfig::tiny(kind, spec)).unwrap();
            let mut g = Graph::new(model.params());
            let out = model.forward_graph(&mut g, &frames(spec, false)).unwrap();
            assert_eq!(g.shape(out), &[kind.input_channels(), 16, 16]);
            let pred = model.predict(&frames(spec, false)).unwrap();
            assert!(pred.front.values().iter().all(|&p| p > 0.0 && p < 1.0));
        }
    }

    #[test]
    fn zero_input_is_finite_and_deterministic() {
        let spec = GridSpec::ocean(16, 16).unwrap();
        let zeros: Vec<StateFrame> = (0..CONTEXT_LEN as i64).map(|d| StateFrame::zeros(spec, d)).collect();
        for kind in BaselineKind::ALL {
            let a = BaselineModel::new(BaselineConfig::tiny(kind, spec)).unwrap().predict(&zeros).unwrap();
            let b = BaselineModel::new(BaselineConfig::tiny(kind, spec)).unwrap().predict(&zeros).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn order_matters() {
        let spec = GridSpec::ocean(16, 16).unwrap();
        for kind in BaselineKind::ALL {
            let model = BaselineModel::new(BaselineConfig::tiny(kind, spec)).unwrap();
            let fwd = model.predict(&frames(spec, false)).unwrap();
            let rev = model.predict(&frames(spec, true)).unwrap();
            assert_ne!(fwd.front, rev.front, "{kind:?}");
        }
    }
}
