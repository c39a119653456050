//! Energy functionals, feedback power terms and the two-window modal stability analysis.

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{check_len, Error, Result};
use crate::grid::{Grid, Spectral};
use crate::model::{FieldState, Model, PhysicalParams, HBAR};

/// `<T>` of a field in J (not per particle), via Parseval on the unnormalised transform.
fn kinetic_energy(spectral: &mut Spectral, kinetic: &[f64], psi: &[Complex64], dx: f64) -> f64 {
    let mut buf = psi.to_vec();
    spectral.forward(&mut buf);
    let n = psi.len() as f64;
    buf.iter().zip(kinetic).map(|(f, t)| f.norm_sqr() * t).sum::<f64>() * dx / n
}

fn energy_sum(kinetic_total: f64, trap: &[f64], u_tt: f64, psi: &[Complex64], dx: f64) -> (f64, f64) {
    let mut n = 0.0;
    let mut pot = 0.0;
    let mut quartic = 0.0;
    for (p, v) in psi.iter().zip(trap) {
        let r = p.norm_sqr();
        n += r;
        pot += v * r;
        quartic += r * r;
    }
    let n_atoms = n * dx;
    let e = kinetic_total + pot * dx + 0.5 * u_tt * quartic * dx;
    (e, n_atoms)
}

/// Energy per trapped atom `(<T> + <V_t> + U_tt/2 int |psi_t|^4) / N_t`, J. The
/// feedback potential is not part of this energy.
pub fn energy_per_particle(state: &FieldState, grid: &Grid, params: &PhysicalParams) -> Result<f64> {
    check_len(grid.n_points(), state.psi_t.len())?;
    let mut spectral = Spectral::new(grid);
    let kinetic: Vec<f64> = grid
        .k()
        .iter()
        .map(|k| HBAR * HBAR * k * k / (2.0 * params.mass))
        .collect();
    let trap = crate::model::trap_potential(grid, params);
    let ke = kinetic_energy(&mut spectral, &kinetic, &state.psi_t, grid.dx());
    let (e, n) = energy_sum(ke, &trap, params.interactions().u_tt, &state.psi_t, grid.dx());
    if !(n > 0.0) {
        return Err(Error::Analysis("energy per particle undefined: no trapped atoms".into()));
    }
    Ok(e / n)
}

/// Same as [`energy_per_particle`] reusing a model's transforms. Returns NaN for an empty trap.
pub fn energy_per_particle_with(model: &mut Model, psi_t: &[Complex64]) -> f64 {
    let dx = model.grid().dx();
    let u_tt = model.interactions().u_tt;
    let kinetic = model.kinetic().to_vec();
    let ke = kinetic_energy(model.spectral(), &kinetic, psi_t, dx);
    let (e, n) = energy_sum(ke, model.trap(), u_tt, psi_t, dx);
    if n > 0.0 {
        e / n
    } else {
        f64::NAN
    }
}

/// Feedback contributions to the energy rate, W.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeedbackPower {
    /// Cross term between outcoupling and feedback:
    /// `-2 kappa_out int V_fb Im(psi_t* e^{ikx} psi_u) dx`.
    pub outcoupling: f64,
    /// Current-divergence term `(hbar/m) int V_fb Im(psi_t* lap psi_t) dx`, which is
    /// `-int V_fb (d rho/dt)_kinetic dx`. Non-positive under the control law.
    pub current: f64,
}

pub fn de_dt_feedback_interaction(
    state: &FieldState,
    v_fb: &[f64],
    grid: &Grid,
    params: &PhysicalParams,
) -> Result<FeedbackPower> {
    state.check_shape(grid)?;
    check_len(grid.n_points(), v_fb.len())?;
    if v_fb.iter().all(|v| *v == 0.0) {
        return Ok(FeedbackPower {
            outcoupling: 0.0,
            current: 0.0,
        });
    }
    let dx = grid.dx();
    let lap = crate::grid::second_derivative(&state.psi_t, grid)?;
    let mut cross = 0.0;
    let mut current = 0.0;
    for i in 0..grid.n_points() {
        let phase = Complex64::from_polar(1.0, params.kick * grid.x()[i]);
        cross += v_fb[i] * (state.psi_t[i].conj() * phase * state.psi_u[i]).im;
        current += v_fb[i] * (state.psi_t[i].conj() * lap[i]).im;
    }
    Ok(FeedbackPower {
        outcoupling: -2.0 * params.kappa_out * cross * dx,
        current: HBAR / params.mass * current * dx,
    })
}

/// Total energy rate `dE/dt` of a recorded series, W, by central differences
/// (one-sided at the ends). Subtracting the feedback terms leaves the pump, loss
/// and outcoupling contribution.
pub fn energy_rate(times: &[f64], energies: &[f64]) -> Result<Vec<f64>> {
    check_len(times.len(), energies.len())?;
    let n = times.len();
    if n < 2 {
        return Err(Error::Analysis("energy rate needs at least two samples".into()));
    }
    Ok((0..n)
        .map(|i| {
            let (lo, hi) = (i.saturating_sub(1), (i + 1).min(n - 1));
            (energies[hi] - energies[lo]) / (times[hi] - times[lo])
        })
        .collect())
}

/// One-sided power spectrum of a window, frequencies in Hz.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub window: (f64, f64),
    pub frequencies: Vec<f64>,
    /// `|X_k|^2 / n^2` of the mean-subtracted, Hann-tapered samples, bins `0..=n/2`.
    pub power: Vec<f64>,
}

/// Minimum number of samples in an analysis window.
pub const MIN_WINDOW_SAMPLES: usize = 64;

/// Samples with `t0 <= t <= t1`, assuming uniform sampling.
pub fn window_power_spectrum(times: &[f64], values: &[f64], window: (f64, f64)) -> Result<Spectrum> {
    check_len(times.len(), values.len())?;
    let (t0, t1) = window;
    let slack = 1e-9 * (t1 - t0).abs().max(f64::MIN_POSITIVE);
    let picked: Vec<(f64, f64)> = times
        .iter()
        .zip(values)
        .filter(|(t, _)| **t >= t0 - slack && **t <= t1 + slack)
        .map(|(t, v)| (*t, *v))
        .collect();
    spectrum_of(&picked, window)
}

fn spectrum_of(picked: &[(f64, f64)], window: (f64, f64)) -> Result<Spectrum> {
    let n = picked.len();
    if n < MIN_WINDOW_SAMPLES {
        return Err(Error::Analysis(format!(
            "window [{:e}, {:e}] s holds {n} samples; at least {MIN_WINDOW_SAMPLES} are needed",
            window.0, window.1
        )));
    }
    let dt = (picked[n - 1].0 - picked[0].0) / (n - 1) as f64;
    if !(dt > 0.0) {
        return Err(Error::Analysis("window samples are not increasing in time".into()));
    }
    let mean = picked.iter().map(|(_, v)| v).sum::<f64>() / n as f64;
    let mut buf: Vec<Complex64> = picked
        .iter()
        .enumerate()
        .map(|(i, (_, v))| {
            let w = 0.5 * (1.0 - (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos());
            Complex64::new((v - mean) * w, 0.0)
        })
        .collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let scale = 1.0 / (n as f64 * n as f64);
    let bins = n / 2 + 1;
    Ok(Spectrum {
        window,
        frequencies: (0..bins).map(|k| k as f64 / (n as f64 * dt)).collect(),
        power: buf[..bins].iter().map(|c| c.norm_sqr() * scale).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Classification {
    AbsolutelyStable,
    PartiallyStable,
    AbsolutelyUnstable,
}

impl Classification {
    pub fn as_str(&self) -> &'static str {
        match self {
            Classification::AbsolutelyStable => "AbsolutelyStable",
            Classification::PartiallyStable => "PartiallyStable",
            Classification::AbsolutelyUnstable => "AbsolutelyUnstable",
        }
    }

    /// Unstable < Partial < Stable.
    pub fn rank(&self) -> u8 {
        match self {
            Classification::AbsolutelyUnstable => 0,
            Classification::PartiallyStable => 1,
            Classification::AbsolutelyStable => 2,
        }
    }
}

impl fmt::Display for Classification {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Classification {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "AbsolutelyStable" => Ok(Classification::AbsolutelyStable),
            "PartiallyStable" => Ok(Classification::PartiallyStable),
            "AbsolutelyUnstable" => Ok(Classification::AbsolutelyUnstable),
            other => Err(Error::Analysis(format!("unknown classification `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Band {
    /// Centre frequency, Hz.
    pub frequency: f64,
    pub power_a: f64,
    pub power_b: f64,
    pub growing: bool,
    /// `max(power_a, power_b)` exceeds the noise floor.
    pub above_floor: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityReport {
    pub window_a: (f64, f64),
    pub window_b: (f64, f64),
    pub bands: Vec<Band>,
    pub classification: Classification,
    pub growth_threshold: f64,
    pub floor: f64,
}

impl StabilityReport {
    pub fn growing_bands(&self) -> usize {
        self.bands.iter().filter(|b| b.above_floor && b.growing).count()
    }
}

pub const DEFAULT_THRESHOLD: f64 = 1.1;
pub const DEFAULT_FLOOR: f64 = 1e-6;

/// Groups bins into bands of three around every local maximum of the combined
/// spectrum (DC excluded) and compares the two windows band by band.
///
/// A band grows when `power_b > threshold * power_a` and `power_b > floor * max(power_b)`.
/// Only bands with `max(power_a, power_b) > floor * peak` take part in the verdict.
pub fn classify_stability(
    spec_a: &Spectrum,
    spec_b: &Spectrum,
    threshold: f64,
    floor: f64,
) -> Result<StabilityReport> {
    if spec_a.power.len() != spec_b.power.len()
        || spec_a
            .frequencies
            .iter()
            .zip(&spec_b.frequencies)
            .any(|(a, b)| (a - b).abs() > 1e-9 * a.abs().max(b.abs()))
    {
        return Err(Error::Analysis(
            "spectra have different frequency bins; windows must hold equal sample counts".into(),
        ));
    }
    if !(threshold > 0.0 && floor >= 0.0) {
        return Err(Error::Analysis("threshold must be positive and floor non-negative".into()));
    }
    let m = spec_a.power.len();
    let combined: Vec<f64> = spec_a.power.iter().zip(&spec_b.power).map(|(a, b)| a + b).collect();
    let mut bands = Vec::new();
    for k in 1..m {
        let left = combined[k - 1];
        let right = if k + 1 < m { combined[k + 1] } else { f64::NEG_INFINITY };
        if combined[k] > 0.0 && combined[k] > left && combined[k] >= right {
            let lo = k - 1;
            let hi = (k + 1).min(m - 1);
            let pa: f64 = spec_a.power[lo..=hi].iter().sum();
            let pb: f64 = spec_b.power[lo..=hi].iter().sum();
            bands.push(Band {
                frequency: spec_a.frequencies[k],
                power_a: pa,
                power_b: pb,
                growing: false,
                above_floor: false,
            });
        }
    }
    let max_b = bands.iter().map(|b| b.power_b).fold(0.0, f64::max);
    let peak = bands.iter().map(|b| b.power_a.max(b.power_b)).fold(0.0, f64::max);
    for b in bands.iter_mut() {
        b.growing = b.power_b > threshold * b.power_a && b.power_b > floor * max_b;
        b.above_floor = peak > 0.0 && b.power_a.max(b.power_b) > floor * peak;
    }
    let active: Vec<&Band> = bands.iter().filter(|b| b.above_floor).collect();
    let growing = active.iter().filter(|b| b.growing).count();
    let classification = if growing == 0 {
        Classification::AbsolutelyStable
    } else if growing == active.len() {
        Classification::AbsolutelyUnstable
    } else {
        Classification::PartiallyStable
    };
    Ok(StabilityReport {
        window_a: spec_a.window,
        window_b: spec_b.window,
        bands,
        classification,
        growth_threshold: threshold,
        floor,
    })
}

/// The two analysis windows `[t0 + T/2, t0 + 3T/4]` and `[t0 + 3T/4, t0 + T]` of a series spanning `T`.
pub fn analysis_windows(t_start: f64, t_end: f64) -> ((f64, f64), (f64, f64)) {
    let span = t_end - t_start;
    let mid = t_start + 0.75 * span;
    ((t_start + 0.5 * span, mid), (mid, t_end))
}

/// Two-window analysis of a sampled series over its second half. Both windows
/// are trimmed to the same sample count.
pub fn analyze_series(times: &[f64], values: &[f64], threshold: f64, floor: f64) -> Result<StabilityReport> {
    check_len(times.len(), values.len())?;
    if times.len() < 2 {
        return Err(Error::Analysis("series needs at least two samples".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Analysis("series contains non-finite values".into()));
    }
    let (wa, wb) = analysis_windows(times[0], times[times.len() - 1]);
    let pick = |w: (f64, f64)| -> Vec<(f64, f64)> {
        let slack = 1e-9 * (w.1 - w.0).abs().max(f64::MIN_POSITIVE);
        times
            .iter()
            .zip(values)
            .filter(|(t, _)| **t >= w.0 - slack && **t <= w.1 + slack)
            .map(|(t, v)| (*t, *v))
            .collect()
    };
    let mut a = pick(wa);
    let mut b = pick(wb);
    let n = a.len().min(b.len());
    a.truncate(n);
    // Keep the latest samples of the second window.
    let drop = b.len() - n;
    b.drain(..drop);
    let sa = spectrum_of(&a, wa)?;
    let sb = spectrum_of(&b, wb)?;
    classify_stability(&sa, &sb, threshold, floor)
}
