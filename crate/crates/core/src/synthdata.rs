//! Deterministic synthetic ocean: a time-periodic double-gyre flow stirs a
//! temperature field, and cells with a steep temperature gradient form the
//! front mask.

use std::f64::consts::PI;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::grid::{GridSpec, ScalarField, StateFrame};
use crate::{Error, Result};

/// Front fraction bounds enforced on every generated sequence.
pub const FRONT_FRACTION_RANGE: (f64, f64) = (0.02, 0.4);

/// Secondary knobs of the generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthDynamics {
    /// Steps simulated and discarded before the first emitted frame.
    pub spin_up_days: usize,
    /// Period of the gyre oscillation.
    pub period_days: f64,
    /// Lateral oscillation amplitude of the gyre boundary.
    pub perturbation: f64,
    /// Restoring time scale pulling temperature back to its reference
    /// state.
    pub restoring_days: f64,
    /// Mean northward temperature gradient of the reference state (K/m).
    pub background_gradient: f64,
    /// Half-width of the reference front band, as a fraction of the domain
    /// height.
    pub front_width: f64,
    /// North–south excursion of the reference front axis, as a fraction of
    /// the domain height.
    pub meander: f64,
    /// Part of the north–south contrast carried by a uniform gradient rather
    /// than the front band.
    pub background_share: f64,
    /// Relative amplitude of the slow random modulation of gyre strength.
    pub modulation: f64,
    /// Correlation time of that modulation.
    pub modulation_days: f64,
}

impl Default for SynthDynamics {
    fn default() -> Self {
        SynthDynamics {
            spin_up_days: 40,
            period_days: 10.0,
            perturbation: 0.25,
            restoring_days: 5.0,
            background_gradient: 1e-5,
            front_width: 0.05,
            meander: 0.15,
            background_share: 0.2,
            modulation: 0.9,
            modulation_days: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub grid: GridSpec,
    pub num_days: usize,
    pub num_gyres: usize,
    /// Largest speed reached anywhere in the sequence (m/s).
    pub max_speed: f64,
    /// Gradient magnitude above which a cell is front (K/m).
    pub front_threshold: f64,
    pub seed: u64,
    #[serde(default)]
    pub dynamics: SynthDynamics,
}

impl SynthConfig {
    pub const DEFAULT_MAX_SPEED: f64 = 0.8;
    pub const DEFAULT_FRONT_THRESHOLD: f64 = 2.7e-5;

    pub fn new(grid: GridSpec, num_days: usize, seed: u64) -> Self {
        SynthConfig {
            grid,
            num_days,
            num_gyres: 2,
            max_speed: Self::DEFAULT_MAX_SPEED,
            front_threshold: Self::DEFAULT_FRONT_THRESHOLD,
            seed,
            dynamics: SynthDynamics::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        let d = &self.dynamics;
        let checks = [
            (self.num_days >= 8, "num_days must be at least 8"),
            (self.num_gyres >= 1, "num_gyres must be at least 1"),
            (self.max_speed >= 0.0 && self.max_speed.is_finite(), "max_speed must be finite and non-negative"),
            (self.front_threshold >= 0.0 && self.front_threshold.is_finite(), "front_threshold must be finite and non-negative"),
            (d.period_days > 0.0 && d.period_days.is_finite(), "period_days must be positive"),
            (d.restoring_days > 0.0 && d.restoring_days.is_finite(), "restoring_days must be positive"),
            (d.modulation_days > 0.0 && d.modulation_days.is_finite(), "modulation_days must be positive"),
            (d.perturbation.is_finite() && d.background_gradient.is_finite(), "dynamics must be finite"),
            (d.front_width > 0.0 && d.front_width.is_finite(), "front_width must be positive"),
            (d.meander.is_finite() && d.background_share.is_finite() && d.modulation.is_finite(), "dynamics must be finite"),
        ];
        match checks.iter().find(|(ok, _)| !ok) {
            Some((_, msg)) => Err(Error::InvalidConfig((*msg).into())),
            None => Ok(()),
        }
    }
}

/// Frames plus the temperature field each front mask was derived from.
#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub frames: Vec<StateFrame>,
    pub temperature: Vec<Array2<f64>>,
}

impl SynthOutput {
    pub fn front_fraction(&self) -> f64 {
        front_fraction(&self.frames)
    }
}

pub fn front_fraction(frames: &[StateFrame]) -> f64 {
    let cells: usize = frames.iter().map(|f| f.spec().cells()).sum();
    let fronts: f64 = frames.iter().map(|f| f.front.values().sum()).sum();
    fronts / cells.max(1) as f64
}

pub fn generate_sequence(cfg: &SynthConfig) -> Result<Vec<StateFrame>> {
    generate(cfg).map(|out| out.frames)
}

/// Runs the generator and enforces the front-fraction guardrail.
pub fn generate(cfg: &SynthConfig) -> Result<SynthOutput> {
    let out = simulate(cfg)?;
    let fraction = out.front_fraction();
    let (low, high) = FRONT_FRACTION_RANGE;
    if !(fraction > low && fraction < high) {
        return Err(Error::FrontFraction { fraction, low, high });
    }
    Ok(out)
}

/// The generator without the guardrail.
pub fn simulate(cfg: &SynthConfig) -> Result<SynthOutput> {
    cfg.validate()?;
    let grid = cfg.grid;
    let dyn_ = cfg.dynamics;
    let total = dyn_.spin_up_days + cfg.num_days;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    // |strength| < 1 + modulation, so scaling the unmodulated peak by that
    // bound keeps every speed under max_speed whatever the sequence length.
    let strength = modulation_series(&mut rng, total, dyn_.modulation, dyn_.modulation_days);
    let mut velocities: Vec<(Array2<f64>, Array2<f64>)> = (0..total)
        .map(|n| gyre_velocity(&grid, cfg.num_gyres, n as f64, &dyn_, 1.0))
        .collect();
    let peak = velocities
        .iter()
        .flat_map(|(u, v)| u.iter().zip(v.iter()).map(|(a, b)| a.hypot(*b)))
        .fold(0.0, f64::max);
    let bound = peak * (1.0 + dyn_.modulation.abs());
    let scale = if bound > 0.0 {
        cfg.max_speed * (1.0 - 1e-6) / bound
    } else {
        0.0
    };
    for ((u, v), s) in velocities.iter_mut().zip(&strength) {
        u.mapv_inplace(|x| round_f32(x * s * scale));
        v.mapv_inplace(|x| round_f32(x * s * scale));
    }

    let reference = reference_temperature(&grid, &dyn_, &mut rng);
    let relax = 1.0 - (-1.0 / dyn_.restoring_days).exp();
    let mut temp = reference.clone();
    let mut out = SynthOutput {
        frames: Vec::with_capacity(cfg.num_days),
        temperature: Vec::with_capacity(cfg.num_days),
    };
    for (n, (u, v)) in velocities.iter().enumerate() {
        if n >= dyn_.spin_up_days {
            let day = (n - dyn_.spin_up_days) as i64;
            out.frames.push(make_frame(&grid, &temp, u, v, cfg.front_threshold, day)?);
            out.temperature.push(temp.clone());
        }
        temp = advect(&temp, u, v, grid.dt_seconds / grid.dx_meters);
        temp.zip_mut_with(&reference, |t, r| *t += (r - *t) * relax);
    }
    Ok(out)
}

fn round_f32(x: f64) -> f64 {
    f64::from(x as f32)
}

/// Multiplier `1 + amplitude·tanh(x)` driven by a unit Ornstein–Uhlenbeck
/// process `x`.
fn modulation_series(rng: &mut impl Rng, n: usize, amplitude: f64, days: f64) -> Vec<f64> {
    let a = (-1.0 / days).exp();
    let kick = (1.0 - a * a).sqrt();
    let mut x = 0.0;
    (0..n)
        .map(|_| {
            x = a * x + kick * standard_normal(rng);
            1.0 + amplitude * x.tanh()
        })
        .collect()
}

fn standard_normal(rng: &mut impl Rng) -> f64 {
    // Box–Muller; the lower bound keeps ln away from zero
    let u1: f64 = rng.random_range(f64::EPSILON..1.0);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
}

/// Velocities from forward differences of a stream function sampled on
/// cell corners, so the forward-difference divergence vanishes exactly.
fn gyre_velocity(
    grid: &GridSpec,
    gyres: usize,
    day: f64,
    dyn_: &SynthDynamics,
    strength: f64,
) -> (Array2<f64>, Array2<f64>) {
    let (h, w) = (grid.height, grid.width);
    let n = gyres as f64;
    let omega = 2.0 * PI / dyn_.period_days;
    let eps = dyn_.perturbation * (omega * day).sin();
    let psi = Array2::from_shape_fn((h + 1, w + 1), |(a, b)| {
        let x = n * b as f64 / w as f64;
        let y = a as f64 / h as f64;
        let f = x - eps * x * (n - x) * 2.0 / n;
        strength * (PI * f).sin() * (PI * y).sin()
    });
    let dx = grid.dx_meters;
    let u = Array2::from_shape_fn((h, w), |(i, j)| -(psi[[i + 1, j]] - psi[[i, j]]) / dx);
    let v = Array2::from_shape_fn((h, w), |(i, j)| (psi[[i, j + 1]] - psi[[i, j]]) / dx);
    (u, v)
}

/// A meandering tanh front across the basin on top of a weak northward
/// gradient. The mean north–south gradient is `background_gradient`; the
/// band width scales with the domain, so the peak gradient does not depend
/// on the grid size.
fn reference_temperature(grid: &GridSpec, dyn_: &SynthDynamics, rng: &mut impl Rng) -> Array2<f64> {
    let (h, w) = (grid.height, grid.width);
    let contrast = dyn_.background_gradient * h as f64 * grid.dx_meters;
    let modes: Vec<(f64, f64, f64)> = (0..3)
        .map(|_| {
            let k = rng.random_range(1..=2) as f64;
            let phase = rng.random_range(0.0..2.0 * PI);
            let amp = rng.random_range(0.3..1.0);
            (k, phase, amp)
        })
        .collect();
    let norm: f64 = modes.iter().map(|m| m.2).sum();
    Array2::from_shape_fn((h, w), |(i, j)| {
        let y = (i as f64 + 0.5) / h as f64;
        let x = (j as f64 + 0.5) / w as f64;
        let meander: f64 = modes.iter().map(|&(k, p, a)| a * (2.0 * PI * k * x + p).sin()).sum::<f64>() / norm;
        let axis = 0.5 + dyn_.meander * meander;
        let band = 0.5 * ((y - axis) / dyn_.front_width).tanh();
        contrast * ((1.0 - dyn_.background_share) * band + dyn_.background_share * y)
    })
}

/// Semi-Lagrangian step: each cell takes the bilinearly interpolated value
/// at its departure point. `courant` converts m/s into cells per step.
fn advect(t: &Array2<f64>, u: &Array2<f64>, v: &Array2<f64>, courant: f64) -> Array2<f64> {
    let (h, w) = t.dim();
    Array2::from_shape_fn((h, w), |(i, j)| {
        let y = (i as f64 - v[[i, j]] * courant).clamp(0.0, (h - 1) as f64);
        let x = (j as f64 - u[[i, j]] * courant).clamp(0.0, (w - 1) as f64);
        bilinear(t, y, x)
    })
}

fn bilinear(t: &Array2<f64>, y: f64, x: f64) -> f64 {
    let (h, w) = t.dim();
    let i0 = (y.floor() as usize).min(h - 1);
    let j0 = (x.floor() as usize).min(w - 1);
    let (i1, j1) = ((i0 + 1).min(h - 1), (j0 + 1).min(w - 1));
    let (fy, fx) = (y - i0 as f64, x - j0 as f64);
    let top = t[[i0, j0]] * (1.0 - fx) + t[[i0, j1]] * fx;
    let bottom = t[[i1, j0]] * (1.0 - fx) + t[[i1, j1]] * fx;
    top * (1.0 - fy) + bottom * fy
}

/// `‖∇T‖` with central differences inside and one-sided ones on the edge.
pub fn gradient_magnitude(t: &Array2<f64>, dx: f64) -> Array2<f64> {
    let (h, w) = t.dim();
    let diff = |lo: usize, hi: usize, a: f64, b: f64| (b - a) / ((hi - lo) as f64 * dx);
    Array2::from_shape_fn((h, w), |(i, j)| {
        let (il, ih) = (i.saturating_sub(1), (i + 1).min(h - 1));
        let (jl, jh) = (j.saturating_sub(1), (j + 1).min(w - 1));
        let gy = diff(il, ih, t[[il, j]], t[[ih, j]]);
        let gx = diff(jl, jh, t[[i, jl]], t[[i, jh]]);
        gx.hypot(gy)
    })
}

fn make_frame(
    grid: &GridSpec,
    temp: &Array2<f64>,
    u: &Array2<f64>,
    v: &Array2<f64>,
    threshold: f64,
    day: i64,
) -> Result<StateFrame> {
    let front = gradient_magnitude(temp, grid.dx_meters).mapv(|g| if g > threshold { 1.0 } else { 0.0 });
    StateFrame::new(
        ScalarField::new(*grid, front)?,
        ScalarField::new(*grid, u.clone())?,
        ScalarField::new(*grid, v.clone())?,
        day,
    )
}

/// A near-pure self-advection sequence: a periodic velocity perturbation of
/// relative size `perturbation` riding on a uniform eastward current that
/// moves exactly one cell per step. Columns wrap around, so the front and
/// velocity patterns translate rigidly and `∂u/∂t + (u·∇)u` is of order
/// `perturbation` relative to the convection term.
pub fn translating_flow_sequence(grid: GridSpec, num_days: usize, perturbation: f64, seed: u64) -> Result<Vec<StateFrame>> {
    grid.validate()?;
    if num_days < 2 {
        return Err(Error::InvalidConfig("translating sequence needs at least 2 days".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = (grid.height, grid.width);
    let c = grid.dx_meters / grid.dt_seconds;
    let phases: [f64; 4] = std::array::from_fn(|_| rng.random_range(0.0..2.0 * PI));
    let pattern = |k: usize, i: usize, x: usize| -> f64 {
        let xa = 2.0 * PI * x as f64 / w as f64;
        let ya = PI * (i as f64 + 0.5) / h as f64;
        (xa + phases[k]).sin() * (ya + phases[k + 2]).sin()
    };
    (0..num_days)
        .map(|n| {
            let src = |j: usize| (j + w - n % w) % w;
            let u = Array2::from_shape_fn((h, w), |(i, j)| round_f32(c * (1.0 + perturbation * pattern(0, i, src(j)))));
            let v = Array2::from_shape_fn((h, w), |(i, j)| round_f32(c * perturbation * pattern(1, i, src(j))));
            let front = Array2::from_shape_fn((h, w), |(i, j)| if pattern(0, i, src(j)) > 0.6 { 1.0 } else { 0.0 });
            StateFrame::new(
                ScalarField::new(grid, front)?,
                ScalarField::new(grid, u)?,
                ScalarField::new(grid, v)?,
                n as i64,
            )
        })
        .collect()
}
