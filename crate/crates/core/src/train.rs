//! Mini-batch Adam training, per-pixel front classification metrics,
//! autoregressive rollout and multi-horizon evaluation.

use std::collections::VecDeque;
use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::grid::{Dataset, ScalarField, StateFrame};
use crate::loss::{assemble_loss_with_grad, front_only_loss_with_grad, LossBreakdown, LossVariant};
use crate::model::{gradient_to_seed, tensor_to_frame, Forecaster, Network};
use crate::nn::{Adam, Gradients, Graph};
use crate::{Error, Result};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub loss_variant: LossVariant,
    pub seed: u64,
}

impl TrainConfig {
    pub const CTP_LEARNING_RATE: f64 = 1e-4;
    pub const RECURRENT_LEARNING_RATE: f64 = 1e-3;

    /// Batch size 32, learning rate 1e-4, 50 epochs, loss variant 1.
    pub fn paper() -> Self {
        TrainConfig {
            batch_size: 32,
            learning_rate: Self::CTP_LEARNING_RATE,
            epochs: 50,
            loss_variant: LossVariant::CeMse,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be positive".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!("learning rate {} is invalid", self.learning_rate)));
        }
        Ok(())
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::paper()
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: LossBreakdown,
    /// Elapsed since training started.
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, Default)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub wall_seconds: f64,
}

impl TrainHistory {
    /// Per-epoch mean losses without timing, for reproducibility checks.
    pub fn losses(&self) -> Vec<LossBreakdown> {
        self.epochs.iter().map(|e| e.loss).collect()
    }

    pub fn write_jsonl(&self, mut out: impl Write) -> std::io::Result<()> {
        for record in &self.epochs {
            serde_json::to_writer(&mut out, record)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Loss of one window and its gradient with respect to the network output.
/// Three-channel models get the full variant; front-only models the front
/// term alone.
pub fn sample_loss<N: Network + ?Sized>(
    net: &N,
    g: &mut Graph<'_>,
    inputs: &[StateFrame],
    target: &StateFrame,
    variant: LossVariant,
) -> Result<(LossBreakdown, crate::nn::Var, crate::nn::Tensor)> {
    let out = net.forward_graph(g, inputs)?;
    let channels = net.input_channels();
    let scale = net.velocity_scale();
    let pred = tensor_to_frame(g.value(out), channels, *net.grid(), target.day_index, scale)?;
    let (loss, grad) = if channels == 1 {
        front_only_loss_with_grad(variant, &pred, target)?
    } else {
        let last = inputs.last().expect("checked by forward_graph");
        assemble_loss_with_grad(variant, &pred, target, last)?
    };
    Ok((loss, out, gradient_to_seed(&grad, channels, scale)))
}

/// Trains `net` in place. Each epoch visits every sample once in a seeded
/// shuffled order; gradients are averaged over each batch before the Adam
/// step.
pub fn train<N: Network + ?Sized>(net: &mut N, train_set: &Dataset, cfg: &TrainConfig) -> Result<TrainHistory> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if train_set.spec() != net.grid() {
        return Err(Error::ShapeMismatch(format!(
            "dataset grid {:?} does not match model grid {:?}",
            train_set.spec(),
            net.grid()
        )));
    }
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(cfg.learning_rate as f32, net.params());
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = TrainHistory::default();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut losses = Vec::with_capacity(order.len());
        for batch in order.chunks(cfg.batch_size) {
            let mut grads = Gradients::new(net.params());
            for &idx in batch {
                let sample = &train_set.samples()[idx];
                let inputs = sample.input_frames();
                let mut g = Graph::new(net.params());
                let (loss, out, seed) = sample_loss(&*net, &mut g, &inputs, sample.target(), cfg.loss_variant)?;
                if let Some(term) = loss.non_finite_term() {
                    return Err(Error::Diverged { epoch, term: term.to_string() });
                }
                g.backward(out, &seed, &mut grads);
                losses.push(loss);
            }
            grads.scale(1.0 / batch.len() as f32);
            if !grads.all_finite() {
                return Err(Error::Diverged {
                    epoch,
                    term: "gradient".into(),
                });
            }
            adam.step(net.params_mut(), &grads);
        }
        let mean = LossBreakdown::mean(&losses);
        if let Some(term) = mean.non_finite_term() {
            return Err(Error::Diverged { epoch, term: term.to_string() });
        }
        history.epochs.push(EpochRecord {
            epoch,
            loss: mean,
            wall_seconds: start.elapsed().as_secs_f64(),
        });
    }
    history.wall_seconds = start.elapsed().as_secs_f64();
    Ok(history)
}

/// Per-pixel confusion counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl Confusion {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn merge(self, other: Confusion) -> Confusion {
        Confusion {
            tp: self.tp + other.tp,
            fp: self.fp + other.fp,
            tn: self.tn + other.tn,
            fn_: self.fn_ + other.fn_,
        }
    }

    /// Percentages; a ratio with a zero denominator is 0.
    pub fn scores(&self) -> Scores {
        let ratio = |num: u64, den: u64| if den == 0 { 0.0 } else { 100.0 * num as f64 / den as f64 };
        let precision = ratio(self.tp, self.tp + self.fp);
        let recall = ratio(self.tp, self.tp + self.fn_);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Scores {
            accuracy: ratio(self.tp + self.tn, self.total()),
            precision,
            recall,
            f1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Counts with `pred ≥ threshold` as positive. Labels must be 0 or 1.
pub fn confusion(pred_front: &ScalarField, label: &ScalarField, threshold: f64) -> Result<Confusion> {
    pred_front.ensure_same_grid(label)?;
    let mut c = Confusion::default();
    for (&p, &y) in pred_front.values().iter().zip(label.values()) {
        let truth = if y == 1.0 {
            true
        } else if y == 0.0 {
            false
        } else {
            return Err(Error::InvalidValue(format!("label value {y} is not binary")));
        };
        match (p >= threshold, truth) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

pub fn classify_metrics(pred_front: &ScalarField, label: &ScalarField, threshold: f64) -> Result<Scores> {
    confusion(pred_front, label, threshold).map(|c| c.scores())
}

/// Each step's input window and prediction.
pub fn rollout_trace(
    model: &(impl Forecaster + ?Sized),
    seed_window: &[StateFrame],
    n_steps: usize,
) -> Result<Vec<(Vec<StateFrame>, StateFrame)>> {
    if n_steps == 0 {
        return Err(Error::InvalidConfig("rollout needs at least one step".into()));
    }
    let mut window: VecDeque<StateFrame> = seed_window.iter().cloned().collect();
    let mut trace = Vec::with_capacity(n_steps);
    for _ in 0..n_steps {
        let inputs: Vec<StateFrame> = window.iter().cloned().collect();
        let pred = model.predict(&inputs)?;
        window.pop_front();
        window.push_back(pred.clone());
        trace.push((inputs, pred));
    }
    Ok(trace)
}

/// Autoregressive forecast: each prediction, front probabilities included,
/// replaces the oldest input frame.
pub fn rollout(model: &(impl Forecaster + ?Sized), seed_window: &[StateFrame], n_steps: usize) -> Result<Vec<StateFrame>> {
    Ok(rollout_trace(model, seed_window, n_steps)?.into_iter().map(|(_, p)| p).collect())
}

/// Quartiles and 1.5·IQR whiskers of a sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxStats {
    pub count: usize,
    pub mean: f64,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub lower_whisker: f64,
    pub upper_whisker: f64,
    pub outliers: usize,
}

/// Linear-interpolation quantile of sorted data (`q ∈ [0, 1]`).
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

impl BoxStats {
    pub fn from_values(values: &[f64]) -> Option<BoxStats> {
        if values.is_empty() {
            return None;
        }
        let mut s = values.to_vec();
        s.sort_by(f64::total_cmp);
        let (q1, median, q3) = (quantile(&s, 0.25), quantile(&s, 0.5), quantile(&s, 0.75));
        let iqr = q3 - q1;
        let (lo_fence, hi_fence) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
        let inside: Vec<f64> = s.iter().copied().filter(|v| (lo_fence..=hi_fence).contains(v)).collect();
        Some(BoxStats {
            count: s.len(),
            mean: s.iter().sum::<f64>() / s.len() as f64,
            min: s[0],
            q1,
            median,
            q3,
            max: s[s.len() - 1],
            lower_whisker: inside.first().copied().unwrap_or(q1),
            upper_whisker: inside.last().copied().unwrap_or(q3),
            outliers: s.len() - inside.len(),
        })
    }
}

/// Scores of one horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub dataset: String,
    pub step: usize,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub confusion: Confusion,
    /// Per-window F1 (percent), in window order.
    pub per_sample_f1: Vec<f64>,
    /// Training time of the evaluated model, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_seconds: Option<f64>,
}

impl MetricsReport {
    pub fn horizon(&self) -> usize {
        self.step
    }

    pub fn box_stats(&self) -> Option<BoxStats> {
        BoxStats::from_values(&self.per_sample_f1)
    }
}

pub const CSV_HEADER: &str = "dataset,step,accuracy,precision,recall,f1";

/// One CSV row with two-decimal percentages.
pub fn csv_row(r: &MetricsReport) -> String {
    format!(
        "{},{},{:.2},{:.2},{:.2},{:.2}",
        r.dataset, r.step, r.accuracy, r.precision, r.recall, r.f1
    )
}

pub fn write_csv(reports: &[MetricsReport], mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for r in reports {
        writeln!(out, "{}", csv_row(r))?;
    }
    Ok(())
}

/// Longest horizon for which at least one window has all future targets.
pub fn max_feasible_horizon(test_set: &Dataset) -> usize {
    let s = test_set.samples();
    (0..s.len()).map(|i| chain_len(test_set, i)).max().unwrap_or(0)
}

/// Number of consecutive daily targets available starting at window `i`.
fn chain_len(ds: &Dataset, i: usize) -> usize {
    let s = ds.samples();
    let base = s[i].last_input().day_index;
    (i..s.len())
        .take_while(|&j| s[j].target().day_index == base + (j - i + 1) as i64)
        .count()
}

/// Rolls out `k` steps from every window that has the true frame `k` days
/// ahead and scores the last prediction's front channel against it.
pub fn evaluate(
    model: &(impl Forecaster + ?Sized),
    test_set: &Dataset,
    horizons: &[usize],
    dataset_name: &str,
) -> Result<Vec<MetricsReport>> {
    if test_set.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let max_feasible = max_feasible_horizon(test_set);
    if let Some(&bad) = horizons.iter().find(|&&k| k == 0 || k > max_feasible) {
        return Err(Error::HorizonInfeasible {
            requested: bad,
            max_feasible,
        });
    }
    let samples = test_set.samples();
    horizons
        .iter()
        .map(|&k| {
            let eligible: Vec<usize> = (0..samples.len()).filter(|&i| chain_len(test_set, i) >= k).collect();
            let scored: Vec<Confusion> = eligible
                .par_iter()
                .map(|&i| {
                    let preds = rollout(model, &samples[i].input_frames(), k)?;
                    let truth = samples[i + k - 1].target();
                    confusion(&preds[k - 1].front, &truth.front, DEFAULT_THRESHOLD)
                })
                .collect::<Result<_>>()?;
            let total = scored.iter().fold(Confusion::default(), |a, &b| a.merge(b));
            let s = total.scores();
            Ok(MetricsReport {
                dataset: dataset_name.to_string(),
                step: k,
                accuracy: s.accuracy,
                precision: s.precision,
                recall: s.recall,
                f1: s.f1,
                confusion: total,
                per_sample_f1: scored.iter().map(|c| c.scores().f1).collect(),
                wall_seconds: None,
            })
        })
        .collect()
}
