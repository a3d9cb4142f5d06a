//! Stride-2 convolutional encoder and the mirrored transposed-convolution
//! decoder shared by the CTP network and the CNN-based baselines.

use rand::Rng;

use crate::nn::{conv_out_size, kaiming_uniform, Graph, ParamId, ParamStore, Tensor, Var};

/// Output channels of encoder layers 1..=4.
pub const CHANNEL_SCHEDULE: [usize; 4] = [16, 32, 64, 128];

pub const KERNEL: usize = 3;
pub const STRIDE: usize = 2;
pub const PADDING: usize = 1;

pub fn group_count(channels: usize) -> usize {
    channels.min(8)
}

/// Channel count after each encoder layer, starting with the input.
pub fn channel_schedule(input_channels: usize, layers: usize) -> Vec<usize> {
    std::iter::once(input_channels)
        .chain(CHANNEL_SCHEDULE.iter().copied().take(layers))
        .collect()
}

/// Spatial size after each encoder layer, starting with the input. Each
/// layer maps `n` to `⌈n/2⌉`.
pub fn spatial_schedule(height: usize, width: usize, layers: usize) -> Vec<(usize, usize)> {
    std::iter::successors(Some((height, width)), |&(h, w)| {
        Some((
            conv_out_size(h, KERNEL, STRIDE, PADDING),
            conv_out_size(w, KERNEL, STRIDE, PADDING),
        ))
    })
    .take(layers + 1)
    .collect()
}

#[derive(Debug, Clone)]
struct EncoderLayer {
    weight: ParamId,
    bias: ParamId,
    gamma: ParamId,
    beta: ParamId,
}

#[derive(Debug, Clone)]
struct DecoderLayer {
    weight: ParamId,
    bias: ParamId,
    /// Absent on the output layer.
    norm: Option<(ParamId, ParamId)>,
    out_size: (usize, usize),
}

/// Encoder/decoder parameter handles for a given depth.
#[derive(Debug, Clone)]
pub struct CnnStack {
    channels: Vec<usize>,
    sizes: Vec<(usize, usize)>,
    encoder: Vec<EncoderLayer>,
    decoder: Vec<DecoderLayer>,
}

impl CnnStack {
    pub fn register(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        input_channels: usize,
        height: usize,
        width: usize,
        layers: usize,
    ) -> Self {
        let channels = channel_schedule(input_channels, layers);
        let sizes = spatial_schedule(height, width, layers);
        let k2 = KERNEL * KERNEL;
        let mut encoder = Vec::with_capacity(layers);
        for l in 0..layers {
            let (cin, cout) = (channels[l], channels[l + 1]);
            encoder.push(EncoderLayer {
                weight: store.add(
                    format!("enc.{l}.conv.weight"),
                    kaiming_uniform(&[cout, cin, KERNEL, KERNEL], cin * k2, rng),
                ),
                bias: store.add(format!("enc.{l}.conv.bias"), Tensor::zeros(&[cout])),
                gamma: store.add(format!("enc.{l}.gn.gamma"), Tensor::filled(&[cout], 1.0)),
                beta: store.add(format!("enc.{l}.gn.beta"), Tensor::zeros(&[cout])),
            });
        }
        let mut decoder = Vec::with_capacity(layers);
        for l in (0..layers).rev() {
            let (cin, cout) = (channels[l + 1], channels[l]);
            let weight = store.add(
                format!("dec.{l}.convt.weight"),
                kaiming_uniform(&[cin, cout, KERNEL, KERNEL], cin * k2, rng),
            );
            let bias = store.add(format!("dec.{l}.convt.bias"), Tensor::zeros(&[cout]));
            let norm = (l > 0).then(|| {
                (
                    store.add(format!("dec.{l}.gn.gamma"), Tensor::filled(&[cout], 1.0)),
                    store.add(format!("dec.{l}.gn.beta"), Tensor::zeros(&[cout])),
                )
            });
            decoder.push(DecoderLayer {
                weight,
                bias,
                norm,
                out_size: sizes[l],
            });
        }
        CnnStack {
            channels,
            sizes,
            encoder,
            decoder,
        }
    }

    pub fn layers(&self) -> usize {
        self.encoder.len()
    }

    /// `[C, H, W]` of the encoder output.
    pub fn latent_shape(&self) -> [usize; 3] {
        let (h, w) = self.sizes[self.layers()];
        [self.channels[self.layers()], h, w]
    }

    pub fn latent_len(&self) -> usize {
        self.latent_shape().iter().product()
    }

    /// `[N, C, H, W] → [N, C', H', W']` through conv, group norm, ReLU.
    pub fn encode(&self, g: &mut Graph<'_>, mut x: Var) -> Var {
        for (layer, &cout) in self.encoder.iter().zip(&self.channels[1..]) {
            let (w, b) = (g.param(layer.weight), g.param(layer.bias));
            let (gamma, beta) = (g.param(layer.gamma), g.param(layer.beta));
            x = g.conv2d(x, w, b, STRIDE, PADDING);
            x = g.group_norm(x, gamma, beta, group_count(cout));
            x = g.relu(x);
        }
        x
    }

    /// Inverse path. The final layer is a bare transposed convolution.
    pub fn decode(&self, g: &mut Graph<'_>, mut x: Var) -> Var {
        for layer in &self.decoder {
            let (w, b) = (g.param(layer.weight), g.param(layer.bias));
            let (oh, ow) = layer.out_size;
            x = g.conv_transpose2d(x, w, b, STRIDE, PADDING, oh, ow);
            if let Some((gamma, beta)) = layer.norm {
                let cout = g.shape(x)[1];
                let (gamma, beta) = (g.param(gamma), g.param(beta));
                x = g.group_norm(x, gamma, beta, group_count(cout));
                x = g.relu(x);
            }
        }
        x
    }

    /// Closed-form parameter count for a stack with these dimensions.
    pub fn parameter_formula(input_channels: usize, layers: usize) -> usize {
        let ch = channel_schedule(input_channels, layers);
        let k2 = KERNEL * KERNEL;
        let mut total = 0;
        for l in 0..layers {
            let (cin, cout) = (ch[l], ch[l + 1]);
            total += cout * cin * k2 + cout + 2 * cout;
            total += cout * cin * k2 + cin + if l > 0 { 2 * cin } else { 0 };
        }
        total
    }
}
