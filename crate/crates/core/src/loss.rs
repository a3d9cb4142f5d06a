//! Loss assemblies over the front, velocity and physics terms, with the
//! analytic gradient with respect to the predicted frame.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{ScalarField, StateFrame};
use crate::physics::{self, adjoint};

/// Predicted probabilities are clamped to `[CE_CLAMP, 1 − CE_CLAMP]`.
pub const CE_CLAMP: f64 = 1e-7;

/// The four loss combinations: front metric + regression metric.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum LossVariant {
    /// CE front, MSE everything else.
    CeMse,
    /// MSE everywhere.
    Mse,
    /// CE front, MAE everything else.
    CeMae,
    /// MAE everywhere.
    Mae,
}

impl LossVariant {
    pub const ALL: [LossVariant; 4] = [LossVariant::CeMse, LossVariant::Mse, LossVariant::CeMae, LossVariant::Mae];

    pub fn from_index(index: u8) -> Result<Self> {
        match index {
            1 => Ok(LossVariant::CeMse),
            2 => Ok(LossVariant::Mse),
            3 => Ok(LossVariant::CeMae),
            4 => Ok(LossVariant::Mae),
            other => Err(Error::InvalidConfig(format!("loss variant must be 1..=4, got {other}"))),
        }
    }

    pub fn index(self) -> u8 {
        match self {
            LossVariant::CeMse => 1,
            LossVariant::Mse => 2,
            LossVariant::CeMae => 3,
            LossVariant::Mae => 4,
        }
    }

    pub fn front_metric(self) -> Metric {
        match self {
            LossVariant::CeMse | LossVariant::CeMae => Metric::CrossEntropy,
            LossVariant::Mse => Metric::SquaredError,
            LossVariant::Mae => Metric::AbsoluteError,
        }
    }

    pub fn regression_metric(self) -> Metric {
        match self {
            LossVariant::CeMse | LossVariant::Mse => Metric::SquaredError,
            LossVariant::CeMae | LossVariant::Mae => Metric::AbsoluteError,
        }
    }
}

impl From<LossVariant> for u8 {
    fn from(v: LossVariant) -> u8 {
        v.index()
    }
}

impl TryFrom<u8> for LossVariant {
    type Error = Error;
    fn try_from(v: u8) -> Result<Self> {
        LossVariant::from_index(v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    CrossEntropy,
    SquaredError,
    AbsoluteError,
}

/// Per-term loss values; `total` is their sum.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub front_term: f64,
    pub u_term: f64,
    pub v_term: f64,
    pub ddt_u: f64,
    pub ddt_v: f64,
    pub conv_u: f64,
    pub conv_v: f64,
    pub diff_u: f64,
    pub diff_v: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub const TERM_NAMES: [&'static str; 9] = [
        "front_term",
        "u_term",
        "v_term",
        "ddt_u",
        "ddt_v",
        "conv_u",
        "conv_v",
        "diff_u",
        "diff_v",
    ];

    pub fn terms(&self) -> [f64; 9] {
        [
            self.front_term,
            self.u_term,
            self.v_term,
            self.ddt_u,
            self.ddt_v,
            self.conv_u,
            self.conv_v,
            self.diff_u,
            self.diff_v,
        ]
    }

    fn from_terms(t: [f64; 9]) -> Self {
        LossBreakdown {
            front_term: t[0],
            u_term: t[1],
            v_term: t[2],
            ddt_u: t[3],
            ddt_v: t[4],
            conv_u: t[5],
            conv_v: t[6],
            diff_u: t[7],
            diff_v: t[8],
            total: t.iter().sum(),
        }
    }

    /// Element-wise mean of several breakdowns.
    pub fn mean(items: &[LossBreakdown]) -> LossBreakdown {
        if items.is_empty() {
            return LossBreakdown::default();
        }
        let mut acc = [0.0; 9];
        for b in items {
            for (a, t) in acc.iter_mut().zip(b.terms()) {
                *a += t;
            }
        }
        let n = items.len() as f64;
        LossBreakdown::from_terms(acc.map(|a| a / n))
    }

    /// Name of the first non-finite term, if any.
    pub fn non_finite_term(&self) -> Option<&'static str> {
        Self::TERM_NAMES
            .iter()
            .zip(self.terms())
            .find(|(_, v)| !v.is_finite())
            .map(|(n, _)| *n)
            .or((!self.total.is_finite()).then_some("total"))
    }
}

/// d(total)/d(predicted frame), one array per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameGradient {
    pub front: Array2<f64>,
    pub u: Array2<f64>,
    pub v: Array2<f64>,
}

fn check_shapes(a: &ScalarField, b: &ScalarField) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", a.dim(), b.dim())));
    }
    Ok(())
}

fn check_mask(mask: Option<&Array2<bool>>, dim: (usize, usize)) -> Result<usize> {
    match mask {
        None => Ok(dim.0 * dim.1),
        Some(m) => {
            if m.dim() != dim {
                return Err(Error::ShapeMismatch(format!("mask {:?} vs field {dim:?}", m.dim())));
            }
            match m.iter().filter(|&&b| b).count() {
                0 => Err(Error::EmptyMask),
                n => Ok(n),
            }
        }
    }
}

/// Value and gradient w.r.t. `pred` of one metric over the selected cells.
fn metric_with_grad(
    metric: Metric,
    pred: &Array2<f64>,
    target: &Array2<f64>,
    mask: Option<&Array2<bool>>,
) -> Result<(f64, Array2<f64>)> {
    let n = check_mask(mask, pred.dim())? as f64;
    let mut grad = Array2::zeros(pred.dim());
    let mut sum = 0.0;
    for ((ij, &p), &t) in pred.indexed_iter().zip(target.iter()) {
        if mask.is_some_and(|m| !m[ij]) {
            continue;
        }
        let (value, slope) = match metric {
            Metric::CrossEntropy => {
                let pc = p.clamp(CE_CLAMP, 1.0 - CE_CLAMP);
                let value = -(t * pc.ln() + (1.0 - t) * (1.0 - pc).ln());
                let slope = if p > CE_CLAMP && p < 1.0 - CE_CLAMP {
                    -(t / pc - (1.0 - t) / (1.0 - pc))
                } else {
                    0.0
                };
                (value, slope)
            }
            Metric::SquaredError => {
                let d = p - t;
                (d * d, 2.0 * d)
            }
            Metric::AbsoluteError => {
                let d = p - t;
                let slope = if d > 0.0 {
                    1.0
                } else if d < 0.0 {
                    -1.0
                } else {
                    0.0
                };
                (d.abs(), slope)
            }
        };
        sum += value;
        grad[ij] = slope / n;
    }
    Ok((sum / n, grad))
}

/// Pixel-averaged binary cross entropy of clamped probabilities.
pub fn ce_loss(pred_prob: &ScalarField, label: &ScalarField) -> Result<f64> {
    check_shapes(pred_prob, label)?;
    metric_with_grad(Metric::CrossEntropy, pred_prob.values(), label.values(), None).map(|r| r.0)
}

/// Mean squared difference over unmasked cells.
pub fn mse_loss(pred: &ScalarField, target: &ScalarField, mask: Option<&Array2<bool>>) -> Result<f64> {
    check_shapes(pred, target)?;
    metric_with_grad(Metric::SquaredError, pred.values(), target.values(), mask).map(|r| r.0)
}

/// Mean absolute difference over unmasked cells.
pub fn mae_loss(pred: &ScalarField, target: &ScalarField, mask: Option<&Array2<bool>>) -> Result<f64> {
    check_shapes(pred, target)?;
    metric_with_grad(Metric::AbsoluteError, pred.values(), target.values(), mask).map(|r| r.0)
}

fn check_frames(pred: &StateFrame, target: &StateFrame, last_input: &StateFrame) -> Result<()> {
    if pred.spec() != target.spec() || pred.spec() != last_input.spec() {
        return Err(Error::ShapeMismatch("loss frames use different grids".into()));
    }
    Ok(())
}

/// All nine terms of `variant`. Physics terms compare
/// `compute_terms(last_input, pred)` against
/// `compute_terms(last_input, target)` over the stencil-valid cells.
pub fn assemble_loss(
    variant: LossVariant,
    pred: &StateFrame,
    target: &StateFrame,
    last_input: &StateFrame,
) -> Result<LossBreakdown> {
    assemble_loss_with_grad(variant, pred, target, last_input).map(|(b, _)| b)
}

pub fn assemble_loss_with_grad(
    variant: LossVariant,
    pred: &StateFrame,
    target: &StateFrame,
    last_input: &StateFrame,
) -> Result<(LossBreakdown, FrameGradient)> {
    check_frames(pred, target, last_input)?;
    let spec = *pred.spec();
    let reg = variant.regression_metric();

    let (front_term, front) = metric_with_grad(variant.front_metric(), pred.front.values(), target.front.values(), None)?;
    let (u_term, mut du) = metric_with_grad(reg, pred.u.values(), target.u.values(), None)?;
    let (v_term, mut dv) = metric_with_grad(reg, pred.v.values(), target.v.values(), None)?;

    let tp = physics::compute_terms(last_input, pred)?;
    let tt = physics::compute_terms(last_input, target)?;
    let mask = Some(&tp.valid_mask);
    let (ddt_u, g_ddt_u) = metric_with_grad(reg, tp.ddt_u.values(), tt.ddt_u.values(), mask)?;
    let (ddt_v, g_ddt_v) = metric_with_grad(reg, tp.ddt_v.values(), tt.ddt_v.values(), mask)?;
    let (conv_u, g_conv_u) = metric_with_grad(reg, tp.conv_u.values(), tt.conv_u.values(), mask)?;
    let (conv_v, g_conv_v) = metric_with_grad(reg, tp.conv_v.values(), tt.conv_v.values(), mask)?;
    let (diff_u, g_diff_u) = metric_with_grad(reg, tp.diff_u.values(), tt.diff_u.values(), mask)?;
    let (diff_v, g_diff_v) = metric_with_grad(reg, tp.diff_v.values(), tt.diff_v.values(), mask)?;

    let inv_dt = 1.0 / spec.dt_seconds;
    du.scaled_add(inv_dt, &g_ddt_u);
    dv.scaled_add(inv_dt, &g_ddt_v);

    let (u, v) = (pred.u.values(), pred.v.values());
    let mut df = Array2::zeros(u.dim());
    adjoint::convection(u, v, u, spec.dx_meters, &g_conv_u, &mut du, &mut dv, &mut df);
    du += &df;
    df.fill(0.0);
    adjoint::convection(u, v, v, spec.dx_meters, &g_conv_v, &mut du, &mut dv, &mut df);
    dv += &df;

    adjoint::diffusion(spec.dx_meters, spec.nu, &g_diff_u, &mut du);
    adjoint::diffusion(spec.dx_meters, spec.nu, &g_diff_v, &mut dv);

    let breakdown = LossBreakdown::from_terms([
        front_term, u_term, v_term, ddt_u, ddt_v, conv_u, conv_v, diff_u, diff_v,
    ]);
    Ok((breakdown, FrameGradient { front, u: du, v: dv }))
}

/// Loss for front-only models: the front term alone, velocity and physics
/// terms zero.
pub fn front_only_loss_with_grad(
    variant: LossVariant,
    pred: &StateFrame,
    target: &StateFrame,
) -> Result<(LossBreakdown, FrameGradient)> {
    check_shapes(&pred.front, &target.front)?;
    let (front_term, front) = metric_with_grad(variant.front_metric(), pred.front.values(), target.front.values(), None)?;
    let zeros = Array2::zeros(front.dim());
    let mut terms = [0.0; 9];
    terms[0] = front_term;
    Ok((
        LossBreakdown::from_terms(terms),
        FrameGradient {
            front,
            u: zeros.clone(),
            v: zeros,
        },
    ))
}
