mod common;

use common::*;
use frontcast::grid::{GridSpec, StateFrame};
use frontcast::model::{frames_to_tensor, CtpModel, Forecaster, ModelConfig, Network};
use frontcast::nn::Graph;
use proptest::prelude::*;

fn grid32() -> GridSpec {
    GridSpec::ocean(32, 32).unwrap()
}

/// Closed-form parameter count of the CTP stack.
fn hand_count(c: &ModelConfig) -> usize {
    let ch = c.channel_schedule();
    let mut n = 0;
    for l in 0..c.cnn_layers {
        let (cin, cout) = (ch[l], ch[l + 1]);
        // conv weight and bias, group-norm scale and shift
        n += cout * cin * 9 + 3 * cout;
        // transposed conv back to `cin`; the output layer has no norm
        n += cin * cout * 9 + cin + if l > 0 { 2 * cin } else { 0 };
    }
    let (d, f, flat) = (c.d_model, c.d_ff, c.flatten_len());
    n += flat * d + d;
    n += c.transformer_layers * (3 * d * d + d * f + f + f * d + d + 4 * d);
    n + d * flat + flat
}

fn conv_count(m: &CtpModel) -> usize {
    m.params()
        .iter()
        .filter(|(name, _)| name.starts_with("enc.") || name.starts_with("dec."))
        .map(|(_, t)| t.len())
        .sum()
}

#[test]
fn two_layer_encoder_on_32_grid() {
    let cfg = ModelConfig { cnn_layers: 2, ..ModelConfig::tiny(grid32()) };
    let model = CtpModel::new(cfg).unwrap();
    let stack = frames_to_tensor(&random_window(grid32(), 1), 3, 1.0);
    assert_eq!(model.encode_cnn(&stack).unwrap().shape(), [7, 32, 8, 8]);
}

#[test]
fn ceil_rule_for_odd_sizes() {
    let g = GridSpec::ocean(300, 300).unwrap();
    let shapes: Vec<[usize; 3]> = (1..=4).map(|l| ModelConfig { cnn_layers: l, ..ModelConfig::paper(g) }.latent_shape()).collect();
    assert_eq!(shapes, [[16, 150, 150], [32, 75, 75], [64, 38, 38], [128, 19, 19]]);
    let odd = GridSpec::ocean(13, 9).unwrap();
    let cfg = ModelConfig { cnn_layers: 3, ..ModelConfig::tiny(odd) };
    assert_eq!(cfg.latent_shape()[1..], [2, 2]);
}

#[test]
fn parameter_count_matches_layer_formulas() {
    for cnn in 0..=3 {
        for physics in [true, false] {
            let cfg = ModelConfig { cnn_layers: cnn, use_physics: physics, ..ModelConfig::tiny(grid32()) };
            let model = CtpModel::new(cfg).unwrap();
            assert_eq!(model.parameter_count(), hand_count(&cfg), "cnn {cnn} physics {physics}");
        }
    }
    let a = CtpModel::new(ModelConfig::tiny(grid32())).unwrap().parameter_count();
    let b = CtpModel::new(ModelConfig::tiny(grid32())).unwrap().parameter_count();
    assert_eq!(a, b);
}

#[test]
fn deeper_encoder_has_more_convolution_parameters() {
    let small = grid32();
    let two = CtpModel::new(ModelConfig { cnn_layers: 2, ..ModelConfig::tiny(small) }).unwrap();
    let three = CtpModel::new(ModelConfig { cnn_layers: 3, ..ModelConfig::tiny(small) }).unwrap();
    assert!(conv_count(&three) > conv_count(&two));
    // the projections shrink with the latent, so the total falls on large grids
    let g = GridSpec::ocean(300, 300).unwrap();
    let paper = |l| hand_count(&ModelConfig { cnn_layers: l, ..ModelConfig::paper(g) });
    assert!(paper(3) < paper(2));
    // once the latent is 1x1 the wider channels win
    let corner = GridSpec::ocean(4, 4).unwrap();
    let two = CtpModel::new(ModelConfig { cnn_layers: 2, ..ModelConfig::tiny(corner) }).unwrap();
    let three = CtpModel::new(ModelConfig { cnn_layers: 3, ..ModelConfig::tiny(corner) }).unwrap();
    assert!(three.parameter_count() > two.parameter_count());
}

#[test]
fn same_seed_same_weights_and_outputs() {
    let cfg = ModelConfig::tiny(grid32());
    let (a, b) = (CtpModel::new(cfg).unwrap(), CtpModel::new(cfg).unwrap());
    assert!(a.params().iter().zip(b.params().iter()).all(|(x, y)| x == y));
    let inputs = random_window(grid32(), 4);
    assert_eq!(a.predict(&inputs).unwrap(), b.predict(&inputs).unwrap());
    let other = CtpModel::new(ModelConfig { seed: cfg.seed + 1, ..cfg }).unwrap();
    assert_ne!(a.predict(&inputs).unwrap(), other.predict(&inputs).unwrap());
}

/// Reorders frame contents while keeping the day stamps consecutive.
fn permuted(frames: &[StateFrame], order: &[usize]) -> Vec<StateFrame> {
    order
        .iter()
        .zip(frames)
        .map(|(&k, slot)| StateFrame { day_index: slot.day_index, ..frames[k].clone() })
        .collect()
}

#[test]
fn mean_pool_ignores_order_without_attention_or_position() {
    let cfg = ModelConfig { positional_encoding: false, ..ModelConfig::tiny(grid32()) };
    let model = CtpModel::new(cfg).unwrap();
    let inputs = random_window(grid32(), 9);
    let reversed = permuted(&inputs, &[6, 5, 4, 3, 2, 1, 0]);
    let a = model.pooled_embedding(&inputs, false).unwrap();
    let b = model.pooled_embedding(&reversed, false).unwrap();
    let worst = a.iter().zip(&b).fold(0.0f32, |m, (x, y)| m.max((x - y).abs()));
    let scale = a.iter().fold(0.0f32, |m, x| m.max(x.abs()));
    assert!(worst <= 1e-5 * scale.max(1.0), "{worst}");
}

#[test]
fn positional_encoding_makes_order_visible() {
    let model = CtpModel::new(ModelConfig::tiny(grid32())).unwrap();
    let inputs = random_window(grid32(), 9);
    let swapped = permuted(&inputs, &[6, 1, 2, 3, 4, 5, 0]);
    assert_ne!(model.pooled_embedding(&inputs, true).unwrap(), model.pooled_embedding(&swapped, true).unwrap());
}

#[test]
fn latent_sequence_is_time_by_width() {
    let cfg = ModelConfig::tiny(grid32());
    let model = CtpModel::new(cfg).unwrap();
    let mut g = Graph::new(model.params());
    let z = model.latent_sequence(&mut g, &random_window(grid32(), 2), true).unwrap();
    assert_eq!(g.shape(z), [7, cfg.d_model]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn output_shape_and_front_range(h in 8usize..24, w in 8usize..24, cnn in 0usize..=3, physics: bool, seed in 0u64..100) {
        let grid = GridSpec::ocean(h, w).unwrap();
        let cfg = ModelConfig { cnn_layers: cnn, use_physics: physics, seed, ..ModelConfig::tiny(grid) };
        let model = CtpModel::new(cfg).unwrap();
        let inputs = random_window(grid, seed);
        let mut g = Graph::new(model.params());
        let out = model.forward_graph(&mut g, &inputs).unwrap();
        prop_assert_eq!(g.shape(out), [cfg.input_channels(), h, w]);
        let p = model.predict(&inputs).unwrap();
        prop_assert!(p.front.values().iter().all(|&x| x > 0.0 && x < 1.0));
        prop_assert!(p.u.values().iter().chain(p.v.values()).all(|x| x.is_finite()));
        if !physics {
            prop_assert!(p.u.values().iter().chain(p.v.values()).all(|&x| x == 0.0));
        }
    }
}
