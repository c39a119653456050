//! Moment-based feedback: error-signal estimation, the gain law with its
//! square-root clamp, and the feedback potential `a1 x + a2 x^2 + b |psi_t|^2`.
//!
//! Moments are expectation values of the unit-normalised trapped field:
//! `mean_x = <x>`, `mean_x2 = <x^2>` and `pointiness = int |phi|^4 dx` with
//! `phi = psi_t / sqrt(N)`. With these the critical-damping gains act per atom
//! and the `b` loop gain does not scale with the atom number.

use num_complex::Complex64;

use crate::error::{check_len, Result};
use crate::grid::Grid;
use crate::model::{PhysicalParams, HBAR};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    /// `<x>`, m.
    pub mean_x: f64,
    /// `<x^2>`, m^2.
    pub mean_x2: f64,
    /// `int |phi|^4 dx`, 1/m.
    pub pointiness: f64,
    /// `int |psi_t|^2 dx`.
    pub n_atoms: f64,
    /// Set when the field has zero norm; the other moments are then reported as 0.
    pub empty: bool,
}

impl Moments {
    pub fn is_finite(&self) -> bool {
        self.mean_x.is_finite()
            && self.mean_x2.is_finite()
            && self.pointiness.is_finite()
            && self.n_atoms.is_finite()
    }
}

/// Time derivatives of the three error signals.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MomentRates {
    /// d<x>/dt, m/s.
    pub mean_x: f64,
    /// d<x^2>/dt, m^2/s.
    pub mean_x2: f64,
    /// d(pointiness)/dt, 1/(m s).
    pub pointiness: f64,
}

/// Control amplitudes of the feedback potential.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Controls {
    /// J/m.
    pub a1: f64,
    /// J/m^2.
    pub a2: f64,
    /// J m.
    pub b: f64,
}

impl Controls {
    pub fn is_zero(&self) -> bool {
        self.a1 == 0.0 && self.a2 == 0.0 && self.b == 0.0
    }
}

/// How the moment derivatives are obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DerivativeMode {
    /// Backward differences of the sampled moments with single-pole smoothing.
    Sampled,
    /// Exact derivatives from the instantaneous field equations (validation mode).
    Exact,
}

impl DerivativeMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            DerivativeMode::Sampled => "sampled",
            DerivativeMode::Exact => "exact",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackConfig {
    pub mode: DerivativeMode,
    /// Weight of the newest backward difference in the smoothed derivative, (0, 1].
    pub smoothing: f64,
    /// When the clamp fires, also drop the `a2` control rather than only the
    /// `c2` contribution inside `c1`'s square root.
    pub clamp_zeroes_a2: bool,
    /// Replaces the default `c3 = hbar^2 / (m omega N)`.
    pub c3_override: Option<f64>,
}

impl Default for FeedbackConfig {
    fn default() -> Self {
        FeedbackConfig {
            mode: DerivativeMode::Sampled,
            smoothing: 0.5,
            clamp_zeroes_a2: false,
            c3_override: None,
        }
    }
}

/// Gain constants for one control update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gains {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    /// The quantity under `c1`'s square root went negative.
    pub clamped: bool,
}

/// `c2 = m^2 w^2 / hbar`, `c1 = 2 sqrt(m (m w^2 + 2 c2 d<x^2>/dt))` falling back to
/// `2 m w` when the root argument is negative, `c3 = hbar^2 / (m w N)` with `N >= 1`.
pub fn gains(params: &PhysicalParams, d_mean_x2: f64, n_atoms: f64, config: &FeedbackConfig) -> Gains {
    let m = params.mass;
    let w = params.omega;
    let c2 = m * m * w * w / HBAR;
    let s = m * w * w + 2.0 * c2 * d_mean_x2;
    let (c1, clamped) = if s < 0.0 {
        (2.0 * m * w, true)
    } else {
        (2.0 * (m * s).sqrt(), false)
    };
    let c3 = config
        .c3_override
        .unwrap_or_else(|| HBAR * HBAR / (m * w * n_atoms.max(1.0)));
    Gains { c1, c2, c3, clamped }
}

/// Control law `a1 = c1 d<x>/dt`, `a2 = c2 d<x^2>/dt`, `b = c3 d(pointiness)/dt`.
pub fn controls_from_rates(
    rates: &MomentRates,
    n_atoms: f64,
    params: &PhysicalParams,
    config: &FeedbackConfig,
) -> (Controls, Gains) {
    let g = gains(params, rates.mean_x2, n_atoms, config);
    let a2 = if g.clamped && config.clamp_zeroes_a2 {
        0.0
    } else {
        g.c2 * rates.mean_x2
    };
    let controls = Controls {
        a1: g.c1 * rates.mean_x,
        a2,
        b: g.c3 * rates.pointiness,
    };
    (controls, g)
}

/// Plain Riemann sums with weight `dx`.
pub fn measure_moments(psi_t: &[Complex64], grid: &Grid) -> Moments {
    let dx = grid.dx();
    let mut n = 0.0;
    let mut sx = 0.0;
    let mut sx2 = 0.0;
    let mut s4 = 0.0;
    for (p, x) in psi_t.iter().zip(grid.x()) {
        let r = p.norm_sqr();
        n += r;
        sx += x * r;
        sx2 += x * x * r;
        s4 += r * r;
    }
    let n_atoms = n * dx;
    if n_atoms <= 0.0 {
        return Moments {
            mean_x: 0.0,
            mean_x2: 0.0,
            pointiness: 0.0,
            n_atoms: 0.0,
            empty: true,
        };
    }
    Moments {
        mean_x: sx / n,
        mean_x2: sx2 / n,
        pointiness: s4 * dx / (n_atoms * n_atoms),
        n_atoms,
        empty: false,
    }
}

/// Exact moment derivatives given the field and its time derivative.
pub fn moment_rates(psi_t: &[Complex64], dpsi_t: &[Complex64], grid: &Grid) -> MomentRates {
    let dx = grid.dx();
    let m = measure_moments(psi_t, grid);
    if m.empty {
        return MomentRates::default();
    }
    let (mut dn, mut dsx, mut dsx2, mut ds4) = (0.0, 0.0, 0.0, 0.0);
    for ((p, d), x) in psi_t.iter().zip(dpsi_t).zip(grid.x()) {
        let dr = 2.0 * (p.conj() * d).re;
        let r = p.norm_sqr();
        dn += dr;
        dsx += x * dr;
        dsx2 += x * x * dr;
        ds4 += 2.0 * r * dr;
    }
    let n = m.n_atoms;
    let (dn, dsx, dsx2, ds4) = (dn * dx, dsx * dx, dsx2 * dx, ds4 * dx);
    MomentRates {
        mean_x: (dsx - m.mean_x * dn) / n,
        mean_x2: (dsx2 - m.mean_x2 * dn) / n,
        pointiness: ds4 / (n * n) - 2.0 * m.pointiness * dn / n,
    }
}

/// Running controller state: last sample, smoothed derivatives and current controls.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FeedbackState {
    pub previous: Option<(Moments, f64)>,
    pub rates: Option<MomentRates>,
    pub controls: Controls,
    pub clamped: bool,
    /// Set when a non-finite moment forced the controls to zero.
    pub fault: bool,
}

impl FeedbackState {
    /// Folds a new sample into the smoothed backward-difference derivatives.
    /// Returns `None` until two samples exist.
    pub fn observe(&mut self, current: &Moments, t: f64, smoothing: f64) -> Option<MomentRates> {
        let raw = match self.previous {
            Some((prev, t_prev)) if t > t_prev => {
                let h = t - t_prev;
                Some(MomentRates {
                    mean_x: (current.mean_x - prev.mean_x) / h,
                    mean_x2: (current.mean_x2 - prev.mean_x2) / h,
                    pointiness: (current.pointiness - prev.pointiness) / h,
                })
            }
            _ => None,
        };
        self.previous = Some((*current, t));
        if let Some(raw) = raw {
            let smoothed = match self.rates {
                Some(old) => MomentRates {
                    mean_x: smoothing * raw.mean_x + (1.0 - smoothing) * old.mean_x,
                    mean_x2: smoothing * raw.mean_x2 + (1.0 - smoothing) * old.mean_x2,
                    pointiness: smoothing * raw.pointiness + (1.0 - smoothing) * old.pointiness,
                },
                None => raw,
            };
            self.rates = Some(smoothed);
        }
        self.rates
    }

    /// Sets the controls from explicit rates, zeroing them on non-finite input.
    pub fn apply_rates(
        &mut self,
        rates: &MomentRates,
        n_atoms: f64,
        params: &PhysicalParams,
        config: &FeedbackConfig,
    ) {
        let finite = rates.mean_x.is_finite()
            && rates.mean_x2.is_finite()
            && rates.pointiness.is_finite()
            && n_atoms.is_finite();
        if !finite {
            self.controls = Controls::default();
            self.fault = true;
            return;
        }
        let (controls, g) = controls_from_rates(rates, n_atoms, params, config);
        self.controls = controls;
        self.clamped = g.clamped;
        self.fault = false;
    }
}

/// One sampled control update: backward-difference derivatives over
/// `dt_sample`, then the gain law. Controls stay zero until two samples exist.
pub fn update_controls(
    current: &Moments,
    fb: &FeedbackState,
    params: &PhysicalParams,
    config: &FeedbackConfig,
    dt_sample: f64,
) -> FeedbackState {
    let mut next = fb.clone();
    if !current.is_finite() {
        next.controls = Controls::default();
        next.fault = true;
        return next;
    }
    let t = fb.previous.map(|(_, t)| t + dt_sample).unwrap_or(0.0);
    match next.observe(current, t, config.smoothing) {
        Some(rates) => next.apply_rates(&rates, current.n_atoms, params, config),
        None => next.controls = Controls::default(),
    }
    next
}

/// `V_fb = a1 x + a2 x^2 + b |psi_t|^2`, J.
pub fn feedback_potential(controls: &Controls, psi_t: &[Complex64], grid: &Grid) -> Result<Vec<f64>> {
    check_len(grid.n_points(), psi_t.len())?;
    Ok(grid
        .x()
        .iter()
        .zip(psi_t)
        .map(|(x, p)| controls.a1 * x + controls.a2 * x * x + controls.b * p.norm_sqr())
        .collect())
}
