//! Finite-difference momentum terms on the raster: forward time
//! difference, forward-difference convection and the 5-point diffusion
//! Laplacian. Column index is eastward (x, u), row index is
//! northward (y, v).
//!
//! Each stencil leaves cells it cannot evaluate at zero and reports them
//! through a validity mask.

use ndarray::Array2;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{ScalarField, StateFrame};

/// The six implemented momentum term fields for one pair of frames.
#[derive(Debug, Clone, PartialEq)]
pub struct PhysicsTerms {
    pub ddt_u: ScalarField,
    pub ddt_v: ScalarField,
    pub conv_u: ScalarField,
    pub conv_v: ScalarField,
    pub diff_u: ScalarField,
    pub diff_v: ScalarField,
    pub valid_mask: Array2<bool>,
}

impl PhysicsTerms {
    /// Term fields in loss order.
    pub fn fields(&self) -> [(&'static str, &ScalarField); 6] {
        [
            ("ddt_u", &self.ddt_u),
            ("ddt_v", &self.ddt_v),
            ("conv_u", &self.conv_u),
            ("conv_v", &self.conv_v),
            ("diff_u", &self.diff_u),
            ("diff_v", &self.diff_v),
        ]
    }
}

fn ensure_same(a: &ScalarField, b: &ScalarField) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", a.dim(), b.dim())));
    }
    a.ensure_same_grid(b)
}

fn positive(name: &str, value: f64) -> Result<()> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidValue(format!("{name} must be > 0, got {value}")))
    }
}

/// Cells where the forward-difference convection stencil is defined.
pub fn convection_mask(height: usize, width: usize) -> Array2<bool> {
    Array2::from_shape_fn((height, width), |(i, j)| i + 1 < height && j + 1 < width)
}

/// Cells where the 5-point Laplacian is defined.
pub fn diffusion_mask(height: usize, width: usize) -> Array2<bool> {
    Array2::from_shape_fn((height, width), |(i, j)| {
        i >= 1 && j >= 1 && i + 1 < height && j + 1 < width
    })
}

/// `(f_next − f_now) / dt` on every cell.
pub fn ddt_forward(f_now: &ScalarField, f_next: &ScalarField, dt_seconds: f64) -> Result<ScalarField> {
    ensure_same(f_now, f_next)?;
    positive("dt_seconds", dt_seconds)?;
    let out = (f_next.values() - f_now.values()) / dt_seconds;
    ScalarField::new(*f_now.spec(), out)
}

/// `u·∂f/∂x + v·∂f/∂y` with forward spatial differences; zero on the last
/// row and column.
pub fn convection(u: &ScalarField, v: &ScalarField, f: &ScalarField, dx_meters: f64) -> Result<ScalarField> {
    ensure_same(u, v)?;
    ensure_same(u, f)?;
    positive("dx_meters", dx_meters)?;
    let (h, w) = f.dim();
    let (uu, vv, ff) = (u.values(), v.values(), f.values());
    let mut out = Array2::zeros((h, w));
    for i in 0..h.saturating_sub(1) {
        for j in 0..w.saturating_sub(1) {
            let dfdx = (ff[[i, j + 1]] - ff[[i, j]]) / dx_meters;
            let dfdy = (ff[[i + 1, j]] - ff[[i, j]]) / dx_meters;
            out[[i, j]] = uu[[i, j]] * dfdx + vv[[i, j]] * dfdy;
        }
    }
    ScalarField::new(*f.spec(), out)
}

/// `ν·Δf` with the 5-point Laplacian; zero on the outer ring.
pub fn diffusion(f: &ScalarField, dx_meters: f64, nu: f64) -> Result<ScalarField> {
    positive("dx_meters", dx_meters)?;
    if !(nu >= 0.0 && nu.is_finite()) {
        return Err(Error::InvalidValue(format!("nu must be >= 0, got {nu}")));
    }
    let (h, w) = f.dim();
    let ff = f.values();
    let scale = nu / (dx_meters * dx_meters);
    let mut out = Array2::zeros((h, w));
    for i in 1..h.saturating_sub(1) {
        for j in 1..w.saturating_sub(1) {
            let lap = ff[[i, j + 1]] + ff[[i, j - 1]] + ff[[i + 1, j]] + ff[[i - 1, j]] - 4.0 * ff[[i, j]];
            out[[i, j]] = scale * lap;
        }
    }
    ScalarField::new(*f.spec(), out)
}

/// Time derivative across the pair; convection and diffusion evaluated on
/// the later frame's velocities.
pub fn compute_terms(frame_now: &StateFrame, frame_next: &StateFrame) -> Result<PhysicsTerms> {
    ensure_same(&frame_now.u, &frame_next.u)?;
    let spec = *frame_next.spec();
    let (h, w) = frame_next.u.dim();
    let (u, v) = (&frame_next.u, &frame_next.v);
    let conv = convection_mask(h, w);
    let diff = diffusion_mask(h, w);
    let valid_mask = Array2::from_shape_fn((h, w), |ij| conv[ij] && diff[ij]);
    Ok(PhysicsTerms {
        ddt_u: ddt_forward(&frame_now.u, u, spec.dt_seconds)?,
        ddt_v: ddt_forward(&frame_now.v, v, spec.dt_seconds)?,
        conv_u: convection(u, v, u, spec.dx_meters)?,
        conv_v: convection(u, v, v, spec.dx_meters)?,
        diff_u: diffusion(u, spec.dx_meters, spec.nu)?,
        diff_v: diffusion(v, spec.dx_meters, spec.nu)?,
        valid_mask,
    })
}

/// Vector–Jacobian products of the stencils, used to backpropagate the
/// physics losses onto predicted velocities.
pub mod adjoint {
    use ndarray::Array2;

    /// Gradient of `Σ g·convection(u, v, f)` with respect to `(u, v, f)`,
    /// accumulated into the output buffers.
    pub fn convection(
        u: &Array2<f64>,
        v: &Array2<f64>,
        f: &Array2<f64>,
        dx: f64,
        g: &Array2<f64>,
        du: &mut Array2<f64>,
        dv: &mut Array2<f64>,
        df: &mut Array2<f64>,
    ) {
        let (h, w) = f.dim();
        for i in 0..h.saturating_sub(1) {
            for j in 0..w.saturating_sub(1) {
                let gij = g[[i, j]];
                if gij == 0.0 {
                    continue;
                }
                let fx = (f[[i, j + 1]] - f[[i, j]]) / dx;
                let fy = (f[[i + 1, j]] - f[[i, j]]) / dx;
                du[[i, j]] += gij * fx;
                dv[[i, j]] += gij * fy;
                let cu = gij * u[[i, j]] / dx;
                let cv = gij * v[[i, j]] / dx;
                df[[i, j + 1]] += cu;
                df[[i + 1, j]] += cv;
                df[[i, j]] -= cu + cv;
            }
        }
    }

    /// Gradient of `Σ g·diffusion(f)` with respect to `f`.
    pub fn diffusion(dx: f64, nu: f64, g: &Array2<f64>, df: &mut Array2<f64>) {
        let (h, w) = g.dim();
        let scale = nu / (dx * dx);
        for i in 1..h.saturating_sub(1) {
            for j in 1..w.saturating_sub(1) {
                let s = scale * g[[i, j]];
                if s == 0.0 {
                    continue;
                }
                df[[i, j + 1]] += s;
                df[[i, j - 1]] += s;
                df[[i + 1, j]] += s;
                df[[i - 1, j]] += s;
                df[[i, j]] -= 4.0 * s;
            }
        }
    }
}

/// Summary of one term over valid cells.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TermStats {
    pub mean: f64,
    pub max_abs: f64,
}

/// Mean and max-abs of `field` over cells where `mask` is true.
pub fn masked_stats(field: &ScalarField, mask: &Array2<bool>) -> TermStats {
    let mut sum = 0.0;
    let mut max_abs: f64 = 0.0;
    let mut n = 0usize;
    for (v, &keep) in field.values().iter().zip(mask.iter()) {
        if keep {
            sum += v;
            max_abs = max_abs.max(v.abs());
            n += 1;
        }
    }
    TermStats {
        mean: if n == 0 { 0.0 } else { sum / n as f64 },
        max_abs,
    }
}

/// `‖ddt + conv‖₂ / ‖conv‖₂` over valid cells for the u and v components;
/// near zero when the velocity is carried by its own flow.
pub fn advective_residual_ratio(terms: &PhysicsTerms) -> [f64; 2] {
    let ratio = |ddt: &ScalarField, conv: &ScalarField| {
        let (mut res, mut norm) = (0.0, 0.0);
        for ((d, c), &keep) in ddt.values().iter().zip(conv.values()).zip(&terms.valid_mask) {
            if keep {
                res += (d + c) * (d + c);
                norm += c * c;
            }
        }
        if norm == 0.0 {
            if res == 0.0 { 0.0 } else { f64::INFINITY }
        } else {
            (res / norm).sqrt()
        }
    };
    [ratio(&terms.ddt_u, &terms.conv_u), ratio(&terms.ddt_v, &terms.conv_v)]
}
