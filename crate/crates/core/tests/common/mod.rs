//! Independent scalar-loop oracles and desk-scale benchmark settings shared
//! by the integration tests.
#![allow(dead_code)]

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use frontcast::grid::{GridSpec, ScalarField, StateFrame, CONTEXT_LEN};
use frontcast::loss::LossVariant;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_grid(h: usize, w: usize, rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Vec<Vec<f64>> {
    (0..h).map(|_| (0..w).map(|_| rng.random_range(lo..hi)).collect()).collect()
}

pub fn to_field(spec: GridSpec, g: &[Vec<f64>]) -> ScalarField {
    ScalarField::from_fn(spec, |(i, j)| g[i][j]).unwrap()
}

pub fn to_rows(f: &ScalarField) -> Vec<Vec<f64>> {
    let (h, w) = f.dim();
    (0..h).map(|i| (0..w).map(|j| f.get(i, j)).collect()).collect()
}

pub fn oracle_ddt(now: &[Vec<f64>], next: &[Vec<f64>], dt: f64) -> Vec<Vec<f64>> {
    now.iter()
        .zip(next)
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (y - x) / dt).collect())
        .collect()
}

/// Forward differences; the last row and column stay zero.
pub fn oracle_convection(u: &[Vec<f64>], v: &[Vec<f64>], f: &[Vec<f64>], dx: f64) -> Vec<Vec<f64>> {
    let (h, w) = (f.len(), f[0].len());
    let mut out = vec![vec![0.0; w]; h];
    for i in 0..h - 1 {
        for j in 0..w - 1 {
            let dfdx = (f[i][j + 1] - f[i][j]) / dx;
            let dfdy = (f[i + 1][j] - f[i][j]) / dx;
            out[i][j] = u[i][j] * dfdx + v[i][j] * dfdy;
        }
    }
    out
}

/// Five-point Laplacian times ν on interior cells.
pub fn oracle_diffusion(f: &[Vec<f64>], dx: f64, nu: f64) -> Vec<Vec<f64>> {
    let (h, w) = (f.len(), f[0].len());
    let mut out = vec![vec![0.0; w]; h];
    for i in 1..h - 1 {
        for j in 1..w - 1 {
            let second_x = (f[i][j + 1] - 2.0 * f[i][j] + f[i][j - 1]) / (dx * dx);
            let second_y = (f[i + 1][j] - 2.0 * f[i][j] + f[i - 1][j]) / (dx * dx);
            out[i][j] = nu * (second_x + second_y);
        }
    }
    out
}

pub fn max_abs_diff(a: &[Vec<f64>], b: &ScalarField) -> f64 {
    let mut m: f64 = 0.0;
    for (i, row) in a.iter().enumerate() {
        for (j, x) in row.iter().enumerate() {
            m = m.max((x - b.get(i, j)).abs());
        }
    }
    m
}

pub fn oracle_ce(pred: &[f64], label: &[f64]) -> f64 {
    let eps = 1e-7;
    let s: f64 = pred
        .iter()
        .zip(label)
        .map(|(&p, &y)| {
            let p = p.max(eps).min(1.0 - eps);
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .sum();
    s / pred.len() as f64
}

pub fn oracle_mean_err(pred: &[f64], target: &[f64], mask: Option<&[bool]>, squared: bool) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for k in 0..pred.len() {
        if mask.is_some_and(|m| !m[k]) {
            continue;
        }
        let d = pred[k] - target[k];
        sum += if squared { d * d } else { d.abs() };
        n += 1;
    }
    sum / n as f64
}

pub fn flat(f: &ScalarField) -> Vec<f64> {
    f.values().iter().copied().collect()
}

pub fn flat_mask(m: &Array2<bool>) -> Vec<bool> {
    m.iter().copied().collect()
}

/// Brute-force `(tp, fp, tn, fn)` with `pred ≥ threshold` positive.
pub fn brute_confusion(pred: &[f64], label: &[f64], threshold: f64) -> (u64, u64, u64, u64) {
    let (mut tp, mut fp, mut tn, mut fneg) = (0, 0, 0, 0);
    for (&p, &y) in pred.iter().zip(label) {
        match (p >= threshold, y == 1.0) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fneg += 1,
        }
    }
    (tp, fp, tn, fneg)
}

/// Percent accuracy, precision, recall and F1 with the 0/0 → 0 convention.
pub fn scores_from_counts((tp, fp, tn, fneg): (u64, u64, u64, u64)) -> [f64; 4] {
    let pct = |a: u64, b: u64| if b == 0 { 0.0 } else { 100.0 * a as f64 / b as f64 };
    let acc = pct(tp + tn, tp + fp + tn + fneg);
    let p = pct(tp, tp + fp);
    let r = pct(tp, tp + fneg);
    let f1 = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    [acc, p, r, f1]
}

/// Single-head `softmax(XWq (XWk)ᵀ / √d) XWv` in f64 scalar loops. Returns
/// the output rows and the attention weights.
pub fn oracle_attention(x: &[Vec<f64>], wq: &[Vec<f64>], wk: &[Vec<f64>], wv: &[Vec<f64>]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let t = x.len();
    let d = wq[0].len();
    let project = |w: &[Vec<f64>]| -> Vec<Vec<f64>> {
        (0..t)
            .map(|r| (0..d).map(|c| (0..x[r].len()).map(|k| x[r][k] * w[k][c]).sum()).collect())
            .collect()
    };
    let (q, k, v) = (project(wq), project(wk), project(wv));
    let mut weights = vec![vec![0.0; t]; t];
    for r in 0..t {
        let logits: Vec<f64> = (0..t)
            .map(|s| (0..d).map(|c| q[r][c] * k[s][c]).sum::<f64>() / (d as f64).sqrt())
            .collect();
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
        let z: f64 = e.iter().sum();
        for s in 0..t {
            weights[r][s] = e[s] / z;
        }
    }
    let out = (0..t)
        .map(|r| (0..d).map(|c| (0..t).map(|s| weights[r][s] * v[s][c]).sum()).collect())
        .collect();
    (out, weights)
}

/// Random frames with probabilities in (0.05, 0.95) or binary labels.
pub fn random_frame(spec: GridSpec, rng: &mut ChaCha8Rng, binary_front: bool, day: i64) -> StateFrame {
    let front = ScalarField::from_fn(spec, |_| {
        if binary_front {
            if rng.random_bool(0.3) { 1.0 } else { 0.0 }
        } else {
            rng.random_range(0.05..0.95)
        }
    })
    .unwrap();
    let u = ScalarField::from_fn(spec, |_| rng.random_range(-1.0..1.0)).unwrap();
    let v = ScalarField::from_fn(spec, |_| rng.random_range(-1.0..1.0)).unwrap();
    StateFrame::new(front, u, v, day).unwrap()
}

pub fn random_window(spec: GridSpec, seed: u64) -> Vec<StateFrame> {
    let mut r = rng(seed);
    (0..CONTEXT_LEN as i64).map(|d| random_frame(spec, &mut r, false, d)).collect()
}

/// Recomposes a loss breakdown from the scalar oracles: front metric, then
/// velocity and the six physics terms with the regression metric.
pub fn oracle_terms(variant: LossVariant, pred: &StateFrame, target: &StateFrame, last: &StateFrame) -> [f64; 9] {
    use frontcast::loss::Metric;
    let metric = |m: Metric, p: &[f64], t: &[f64], mask: Option<&[bool]>| match m {
        Metric::CrossEntropy => oracle_ce(p, t),
        Metric::SquaredError => oracle_mean_err(p, t, mask, true),
        Metric::AbsoluteError => oracle_mean_err(p, t, mask, false),
    };
    let spec = *pred.spec();
    let reg = variant.regression_metric();
    let physics = |next: &StateFrame| -> [Vec<Vec<f64>>; 6] {
        let (un, vn) = (to_rows(&last.u), to_rows(&last.v));
        let (u, v) = (to_rows(&next.u), to_rows(&next.v));
        [
            oracle_ddt(&un, &u, spec.dt_seconds),
            oracle_ddt(&vn, &v, spec.dt_seconds),
            oracle_convection(&u, &v, &u, spec.dx_meters),
            oracle_convection(&u, &v, &v, spec.dx_meters),
            oracle_diffusion(&u, spec.dx_meters, spec.nu),
            oracle_diffusion(&v, spec.dx_meters, spec.nu),
        ]
    };
    let (h, w) = (spec.height, spec.width);
    let interior: Vec<bool> = (0..h * w).map(|k| (1..h - 1).contains(&(k / w)) && (1..w - 1).contains(&(k % w))).collect();
    let (pp, tp) = (physics(pred), physics(target));
    let mut out = [0.0; 9];
    out[0] = metric(variant.front_metric(), &flat(&pred.front), &flat(&target.front), None);
    out[1] = metric(reg, &flat(&pred.u), &flat(&target.u), None);
    out[2] = metric(reg, &flat(&pred.v), &flat(&target.v), None);
    for k in 0..6 {
        let a: Vec<f64> = pp[k].concat();
        let b: Vec<f64> = tp[k].concat();
        out[3 + k] = metric(reg, &a, &b, Some(&interior));
    }
    out
}

/// Desk-scale benchmark settings used by the training criteria.
pub mod bench {
    use frontcast::grid::{split_train_test, window_dataset, Dataset, GridSpec, CONTEXT_LEN};
    use frontcast::loss::LossVariant;
    use frontcast::model::ModelConfig;
    use frontcast::synthdata::{generate_sequence, SynthConfig};
    use frontcast::train::TrainConfig;

    pub const SMOKE_TRAIN_SAMPLES: usize = 128;
    /// Held-out windows follow the training windows in time, 8:2.
    pub const SMOKE_DAYS: usize = SMOKE_TRAIN_SAMPLES * 5 / 4 + CONTEXT_LEN;
    pub const SMOKE_SPEED: f64 = 0.4;
    pub const ABLATION_DAYS: usize = 512 * 5 / 4 + CONTEXT_LEN;
    pub const ABLATION_EPOCHS: usize = 60;
    pub const DATA_SEED: u64 = 7;
    pub const MODEL_SEED: u64 = 1;

    pub fn grid() -> GridSpec {
        GridSpec::ocean(32, 32).unwrap()
    }

    fn split(cfg: &SynthConfig) -> (Dataset, Dataset) {
        let frames = generate_sequence(cfg).unwrap();
        let ds = window_dataset(&frames, CONTEXT_LEN, 1).unwrap();
        split_train_test(&ds, 0.8).unwrap()
    }

    /// A slower, weakly modulated flow with broad front bands.
    pub fn smoke_data() -> (Dataset, Dataset) {
        let mut cfg = SynthConfig::new(grid(), SMOKE_DAYS, DATA_SEED);
        cfg.max_speed = SMOKE_SPEED;
        cfg.front_threshold = 2.2e-5;
        cfg.dynamics.modulation = 0.3;
        cfg.dynamics.front_width = 0.1;
        split(&cfg)
    }

    /// Default generator dynamics: day-to-day flow strength is close to
    /// white noise, so the velocity channels carry information the front
    /// history alone does not.
    pub fn ablation_data() -> (Dataset, Dataset) {
        split(&SynthConfig::new(grid(), ABLATION_DAYS, DATA_SEED))
    }

    pub fn tiny_ctp(velocity_scale: f64) -> ModelConfig {
        ModelConfig {
            seed: MODEL_SEED,
            velocity_scale,
            ..ModelConfig::tiny(grid())
        }
    }

    pub fn train_config(epochs: usize) -> TrainConfig {
        TrainConfig {
            batch_size: 16,
            learning_rate: 3e-3,
            epochs,
            loss_variant: LossVariant::CeMse,
            seed: MODEL_SEED,
        }
    }
}
