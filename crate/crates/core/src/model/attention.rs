//! Encoder-only Transformer layers over the per-day latent sequence.
//!
//! Each head projects the `T×d_model` input with its own `W^Q`, `W^K`,
//! `W^V` slices (width `d_model/heads`), the head outputs are concatenated
//! back to `T×d_model` without an output projection, and a ReLU
//! feed-forward network follows. Both sub-blocks are wrapped in a residual
//! connection and post-layer-normalization.

use rand::Rng;

use crate::nn::{kaiming_uniform, Graph, ParamId, ParamStore, Tensor, Var};

#[derive(Debug, Clone, Copy)]
pub struct AttentionWeights {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
}

#[derive(Debug, Clone)]
pub struct EncoderLayerParams {
    pub attention: AttentionWeights,
    pub heads: usize,
    ln1: (ParamId, ParamId),
    ff1: (ParamId, ParamId),
    ff2: (ParamId, ParamId),
    ln2: (ParamId, ParamId),
}

impl EncoderLayerParams {
    pub fn register(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        prefix: &str,
        d_model: usize,
        heads: usize,
        d_ff: usize,
    ) -> Self {
        let mut linear = |name: &str, fan_in: usize, fan_out: usize| {
            store.add(format!("{prefix}.{name}"), kaiming_uniform(&[fan_in, fan_out], fan_in, rng))
        };
        let attention = AttentionWeights {
            wq: linear("wq", d_model, d_model),
            wk: linear("wk", d_model, d_model),
            wv: linear("wv", d_model, d_model),
        };
        let ff1_w = linear("ff1.weight", d_model, d_ff);
        let ff2_w = linear("ff2.weight", d_ff, d_model);
        let mut ln = |name: &str| {
            (
                store.add(format!("{prefix}.{name}.gamma"), Tensor::filled(&[d_model], 1.0)),
                store.add(format!("{prefix}.{name}.beta"), Tensor::zeros(&[d_model])),
            )
        };
        let ln1 = ln("ln1");
        let ln2 = ln("ln2");
        EncoderLayerParams {
            attention,
            heads,
            ln1,
            ff1: (ff1_w, store.add(format!("{prefix}.ff1.bias"), Tensor::zeros(&[d_ff]))),
            ff2: (ff2_w, store.add(format!("{prefix}.ff2.bias"), Tensor::zeros(&[d_model]))),
            ln2,
        }
    }

    pub fn parameter_formula(d_model: usize, d_ff: usize) -> usize {
        3 * d_model * d_model + 2 * d_model + d_model * d_ff + d_ff + d_ff * d_model + d_model + 2 * d_model
    }
}

/// Output of one multi-head attention block.
pub struct AttentionOutput {
    /// Concatenated head outputs, `T×d_model`.
    pub z: Var,
    /// Per-head softmax weights, each `T×T`.
    pub weights: Vec<Var>,
}

/// `Z_i = softmax(Q_i K_iᵀ / √d_k) V_i` for every head, concatenated.
pub fn multi_head_attention(g: &mut Graph<'_>, x: Var, w: &AttentionWeights, heads: usize) -> AttentionOutput {
    let d_model = g.shape(x)[1];
    assert!(heads > 0 && d_model.is_multiple_of(heads), "d_model {d_model} not divisible by {heads} heads");
    let d_k = d_model / heads;
    let (wq, wk, wv) = (g.param(w.wq), g.param(w.wk), g.param(w.wv));
    let q = g.matmul(x, wq);
    let k = g.matmul(x, wk);
    let v = g.matmul(x, wv);
    let scale = 1.0 / (d_k as f32).sqrt();
    let mut outputs = Vec::with_capacity(heads);
    let mut weights = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = g.slice_cols(q, h * d_k, d_k);
        let kh = g.slice_cols(k, h * d_k, d_k);
        let vh = g.slice_cols(v, h * d_k, d_k);
        let scores = g.matmul_nt(qh, kh);
        let scores = g.scale(scores, scale);
        let attn = g.softmax_rows(scores);
        outputs.push(g.matmul(attn, vh));
        weights.push(attn);
    }
    let z = if heads == 1 { outputs[0] } else { g.concat_cols(&outputs) };
    AttentionOutput { z, weights }
}

/// One encoder layer: attention and feed-forward sub-blocks, each with a
/// residual connection followed by layer normalization.
pub fn attention_layer(g: &mut Graph<'_>, x: Var, p: &EncoderLayerParams) -> Var {
    let attn = multi_head_attention(g, x, &p.attention, p.heads);
    let res = g.add(x, attn.z);
    let (g1, b1) = (g.param(p.ln1.0), g.param(p.ln1.1));
    let x1 = g.layer_norm(res, g1, b1);

    let (w1, bias1) = (g.param(p.ff1.0), g.param(p.ff1.1));
    let hidden = g.matmul(x1, w1);
    let hidden = g.add_bias(hidden, bias1);
    let hidden = g.relu(hidden);
    let (w2, bias2) = (g.param(p.ff2.0), g.param(p.ff2.1));
    let ff = g.matmul(hidden, w2);
    let ff = g.add_bias(ff, bias2);

    let res = g.add(x1, ff);
    let (g2, b2) = (g.param(p.ln2.0), g.param(p.ln2.1));
    g.layer_norm(res, g2, b2)
}

/// Fixed sinusoidal encoding `PE[t, 2i] = sin(t/10000^(2i/d))`,
/// `PE[t, 2i+1] = cos(t/10000^(2i/d))`.
pub fn sinusoidal_encoding(steps: usize, d_model: usize) -> Tensor {
    let mut data = Vec::with_capacity(steps * d_model);
    for t in 0..steps {
        for j in 0..d_model {
            let i2 = (j - j % 2) as f64;
            let angle = t as f64 / 10_000f64.powf(i2 / d_model as f64);
            let v = if j % 2 == 0 { angle.sin() } else { angle.cos() };
            data.push(v as f32);
        }
    }
    Tensor::new(&[steps, d_model], data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn single_head_store(d: usize, wq: Tensor, wk: Tensor, wv: Tensor) -> (ParamStore, AttentionWeights) {
        let mut s = ParamStore::new();
        let w = AttentionWeights {
            wq: s.add("wq", wq),
            wk: s.add("wk", wk),
            wv: s.add("wv", wv),
        };
        assert_eq!(s.get(w.wq).shape(), &[d, d]);
        (s, w)
    }

    fn identity(d: usize) -> Tensor {
        let mut t = Tensor::zeros(&[d, d]);
        for i in 0..d {
            t.data_mut()[i * d + i] = 1.0;
        }
        t
    }

    #[test]
    fn zero_queries_and_keys_average_rows() {
        let d = 4;
        let (s, w) = single_head_store(d, Tensor::zeros(&[d, d]), Tensor::zeros(&[d, d]), identity(d));
        let x = Tensor::new(&[3, d], (0..12).map(|v| v as f32 * 0.5 - 2.0).collect());
        let mut g = Graph::new(&s);
        let xv = g.input(x.clone());
        let out = multi_head_attention(&mut g, xv, &w, 1);
        let z = g.value(out.z).data();
        for j in 0..d {
            let mean = (0..3).map(|r| x.data()[r * d + j]).sum::<f32>() / 3.0;
            for r in 0..3 {
                assert!((z[r * d + j] - mean).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn single_step_returns_values() {
        let d = 4;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (s, w) = single_head_store(
            d,
            Tensor::uniform(&[d, d], 1.0, &mut rng),
            Tensor::uniform(&[d, d], 1.0, &mut rng),
            Tensor::uniform(&[d, d], 1.0, &mut rng),
        );
        let x = Tensor::uniform(&[1, d], 1.0, &mut rng);
        let mut g = Graph::new(&s);
        let xv = g.input(x);
        let out = multi_head_attention(&mut g, xv, &w, 1);
        let wv = g.param(w.wv);
        let v = g.matmul(xv, wv);
        assert_eq!(g.value(out.z), g.value(v));
        assert_eq!(g.value(out.weights[0]).data(), &[1.0]);
    }

    #[test]
    fn encoder_layer_preserves_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut s = ParamStore::new();
        let p = EncoderLayerParams::register(&mut s, &mut rng, "tf.0", 16, 4, 32);
        assert_eq!(s.scalar_count(), EncoderLayerParams::parameter_formula(16, 32));
        let mut g = Graph::new(&s);
        let x = g.input(Tensor::uniform(&[7, 16], 1.0, &mut rng));
        let y = attention_layer(&mut g, x, &p);
        assert_eq!(g.shape(y), &[7, 16]);
        assert!(g.value(y).all_finite());
    }

    #[test]
    fn positional_encoding_values() {
        let pe = sinusoidal_encoding(7, 8);
        // t = 0: sin 0 = 0, cos 0 = 1
        assert_eq!(&pe.data()[..8], &[0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
        assert!((pe.data()[8] - 1f32.sin()).abs() < 1e-7);
        assert!((pe.data()[9] - 1f32.cos()).abs() < 1e-7);
        let expected = (2.0f64 / 10_000f64.powf(0.25)).sin() as f32;
        assert!((pe.data()[2 * 8 + 2] - expected).abs() < 1e-7);
    }
}
