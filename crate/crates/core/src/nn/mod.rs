//! Minimal float32 tensors, reverse-mode differentiation and Adam for the
//! forecasting networks.

mod adam;
mod graph;
mod kernels;
mod params;
mod tensor;

pub use adam::Adam;
pub use graph::{Graph, Var};
pub use params::{Gradients, ParamId, ParamStore};
pub use tensor::Tensor;

pub(crate) use kernels::conv_out_size;

use rand::Rng;

/// Uniform fan-in scaling, `U(−√(6/fan_in), √(6/fan_in))`.
pub fn kaiming_uniform(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Tensor {
    let bound = (6.0 / fan_in.max(1) as f32).sqrt();
    Tensor::uniform(shape, bound, rng)
}
