//! Fixed-step fourth-order Runge-Kutta time stepping with recording hooks.
//!
//! The fields are advanced with classical RK4 in the lab frame. A provider may
//! also supply an exactly solvable linear part through
//! [`DerivativeProvider::propagate_linear`]; the step then becomes the
//! interaction-picture RK4 variant, which reduces to plain RK4 when that part
//! is the identity. The field model uses it only for reservoir diffusion.

use num_complex::Complex64;

use crate::diagnostics::energy_per_particle_with;
use crate::error::{Error, Result};
use crate::feedback::{
    measure_moments, moment_rates, Controls, FeedbackConfig, FeedbackState, DerivativeMode,
};
use crate::grid::Grid;
use crate::model::{FeedbackTerm, FieldState, Model, PhysicalParams};

/// A state vector RK4 can combine linearly.
pub trait OdeState: Clone {
    /// `self += a * x`.
    fn axpy(&mut self, a: f64, x: &Self);
    /// Overwrites `self` with `x` without reallocating.
    fn assign(&mut self, x: &Self);
    fn is_finite(&self) -> bool;
}

pub trait DerivativeProvider<S> {
    fn derivative(&mut self, state: &S, out: &mut S) -> Result<()>;

    /// Applies `exp(L h)` for the provider's linear part `L`, if any.
    fn propagate_linear(&mut self, _state: &mut S, _h: f64) {}
}

impl OdeState for Vec<Complex64> {
    fn axpy(&mut self, a: f64, x: &Self) {
        for (s, v) in self.iter_mut().zip(x) {
            *s += v * a;
        }
    }

    fn assign(&mut self, x: &Self) {
        self.copy_from_slice(x);
    }

    fn is_finite(&self) -> bool {
        self.iter().all(|v| v.re.is_finite() && v.im.is_finite())
    }
}

impl OdeState for FieldState {
    fn axpy(&mut self, a: f64, x: &Self) {
        self.psi_t.axpy(a, &x.psi_t);
        self.psi_u.axpy(a, &x.psi_u);
        for (s, v) in self.n.iter_mut().zip(&x.n) {
            *s += a * v;
        }
    }

    fn assign(&mut self, x: &Self) {
        self.psi_t.copy_from_slice(&x.psi_t);
        self.psi_u.copy_from_slice(&x.psi_u);
        self.n.copy_from_slice(&x.n);
        self.t = x.t;
    }

    fn is_finite(&self) -> bool {
        FieldState::is_finite(self)
    }
}

/// RK4 stepper holding its stage buffers.
pub struct Rk4<S> {
    y_i: S,
    k1: S,
    k2: S,
    k3: S,
    k4: S,
    tmp: S,
}

impl<S: OdeState> Rk4<S> {
    pub fn new(template: &S) -> Self {
        Rk4 {
            y_i: template.clone(),
            k1: template.clone(),
            k2: template.clone(),
            k3: template.clone(),
            k4: template.clone(),
            tmp: template.clone(),
        }
    }

    /// Advances `y` by `h` in place. Does not touch any time stamp.
    pub fn step<P: DerivativeProvider<S>>(&mut self, y: &mut S, h: f64, provider: &mut P) -> Result<()> {
        let half = 0.5 * h;
        self.y_i.assign(y);
        provider.propagate_linear(&mut self.y_i, half);

        provider.derivative(y, &mut self.k1)?;
        provider.propagate_linear(&mut self.k1, half);

        self.tmp.assign(&self.y_i);
        self.tmp.axpy(half, &self.k1);
        provider.derivative(&self.tmp, &mut self.k2)?;

        self.tmp.assign(&self.y_i);
        self.tmp.axpy(half, &self.k2);
        provider.derivative(&self.tmp, &mut self.k3)?;

        self.tmp.assign(&self.y_i);
        self.tmp.axpy(h, &self.k3);
        provider.propagate_linear(&mut self.tmp, half);
        provider.derivative(&self.tmp, &mut self.k4)?;

        y.assign(&self.y_i);
        y.axpy(h / 6.0, &self.k1);
        y.axpy(h / 3.0, &self.k2);
        y.axpy(h / 3.0, &self.k3);
        provider.propagate_linear(y, half);
        y.axpy(h / 6.0, &self.k4);
        Ok(())
    }
}

/// Field equations with the feedback potential held fixed over a step.
pub struct FieldDerivative<'a> {
    pub model: &'a mut Model,
    pub controls: Option<Controls>,
}

impl DerivativeProvider<FieldState> for FieldDerivative<'_> {
    fn derivative(&mut self, state: &FieldState, out: &mut FieldState) -> Result<()> {
        let term = match self.controls {
            Some(c) if !c.is_zero() => FeedbackTerm::Controls(c),
            _ => FeedbackTerm::Off,
        };
        self.model.rates(state, term, out);
        Ok(())
    }

    fn propagate_linear(&mut self, state: &mut FieldState, h: f64) {
        self.model.propagate_diffusion(&mut state.n, h);
    }
}

/// One RK4 step of the field equations; the returned state has `t + dt`.
pub fn rk4_step(state: &FieldState, dt: f64, model: &mut Model, controls: Option<Controls>) -> Result<FieldState> {
    let mut next = state.clone();
    let mut stepper = Rk4::new(state);
    stepper.step(&mut next, dt, &mut FieldDerivative { model, controls })?;
    next.t = state.t + dt;
    if !next.is_finite() {
        return Err(Error::BlowUp {
            t: next.t,
            message: "non-finite field after step".into(),
        });
    }
    Ok(next)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub dt: f64,
    pub t_final: f64,
    pub record_interval: f64,
    pub feedback_enabled: bool,
    pub feedback_start_time: f64,
    pub feedback: FeedbackConfig,
    /// Largest tolerated `|psi|`, m^-1/2.
    pub blowup_ceiling: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dt: 1e-6,
            t_final: 2.0,
            record_interval: 1e-4,
            feedback_enabled: false,
            feedback_start_time: 0.0,
            feedback: FeedbackConfig::default(),
            blowup_ceiling: 1e10,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::config("dt", format!("must be positive, got {}", self.dt)));
        }
        if !(self.t_final.is_finite() && self.t_final >= 0.0) {
            return Err(Error::config("duration", format!("must be non-negative, got {}", self.t_final)));
        }
        if !(self.record_interval.is_finite() && self.record_interval >= self.dt * (1.0 - 1e-9)) {
            return Err(Error::config(
                "record_interval",
                format!("must be at least dt ({:e}), got {:e}", self.dt, self.record_interval),
            ));
        }
        if !(self.feedback.smoothing > 0.0 && self.feedback.smoothing <= 1.0) {
            return Err(Error::config("smoothing", "must lie in (0, 1]"));
        }
        if !(self.blowup_ceiling > 0.0) {
            return Err(Error::config("blowup_ceiling", "must be positive"));
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        (self.t_final / self.dt).round() as usize
    }

    /// Steps between samples.
    pub fn record_every(&self) -> usize {
        ((self.record_interval / self.dt).round() as usize).max(1)
    }
}

/// Rejects a time step beyond the kinetic-phase guard and warns when close to it.
pub fn check_time_step(model: &Model, dt: f64) -> Result<()> {
    let phase = model.max_kinetic_rate() * dt;
    if phase >= 0.5 {
        return Err(Error::config(
            "dt",
            format!("kinetic phase per step {phase:.3} exceeds 0.5; reduce dt or grid_points"),
        ));
    }
    if phase > 0.1 {
        log::warn!("kinetic phase per step is {phase:.3}; accuracy may suffer");
    }
    Ok(())
}

/// One recorded diagnostic sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub n_t: f64,
    pub n_u: f64,
    pub central_density: f64,
    pub mean_x: f64,
    pub mean_x2: f64,
    pub pointiness: f64,
    /// NaN when the trap is empty.
    pub energy_per_particle: f64,
    pub a1: f64,
    pub a2: f64,
    pub b: f64,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub final_state: FieldState,
    pub samples: Vec<Sample>,
    /// Reservoir atoms removed by clipping negative density, summed over the run.
    pub clipped_reservoir: f64,
    pub steps: usize,
}

/// Steps `initial` to `run.t_final`. At every sample the controls are updated
/// (when feedback is active) and `recorder` receives the sample and the state.
/// On blow-up the recorder has already seen every sample up to the failure.
pub fn run_simulation<F>(
    params: &PhysicalParams,
    run: &RunConfig,
    grid: &Grid,
    initial: FieldState,
    mut recorder: F,
) -> Result<RunResult>
where
    F: FnMut(&Sample, &FieldState) -> Result<()>,
{
    run.validate()?;
    initial.check_shape(grid)?;
    let mut model = Model::new(grid, params)?;
    check_time_step(&model, run.dt)?;

    let steps = run.steps();
    let every = run.record_every();
    if ((every as f64) * run.dt - run.record_interval).abs() > 1e-9 * run.record_interval {
        log::warn!(
            "record_interval {:e} is not a multiple of dt; sampling every {:e} s",
            run.record_interval,
            every as f64 * run.dt
        );
    }
    let dx = grid.dx();
    let center = grid.center_index();

    let mut state = initial;
    state.t = 0.0;
    let mut stepper = Rk4::new(&state);
    let mut scratch = state.clone();
    let mut fb = FeedbackState::default();
    let mut samples = Vec::with_capacity(steps / every + 1);
    let mut clipped = 0.0;

    for i in 0..=steps {
        let t = i as f64 * run.dt;
        state.t = t;
        if i % every == 0 {
            let moments = measure_moments(&state.psi_t, grid);
            let active = run.feedback_enabled && t >= run.feedback_start_time - 0.5 * run.dt;
            if active {
                match run.feedback.mode {
                    DerivativeMode::Sampled => {
                        if moments.is_finite() && fb.observe(&moments, t, run.feedback.smoothing).is_some() {
                            let rates = fb.rates.expect("observe returned rates");
                            fb.apply_rates(&rates, moments.n_atoms, params, &run.feedback);
                        } else if !moments.is_finite() {
                            fb.controls = Controls::default();
                            fb.fault = true;
                        }
                    }
                    DerivativeMode::Exact => {
                        model.rates(&state, FeedbackTerm::Off, &mut scratch);
                        let rates = moment_rates(&state.psi_t, &scratch.psi_t, grid);
                        fb.apply_rates(&rates, moments.n_atoms, params, &run.feedback);
                    }
                }
            } else {
                fb = FeedbackState::default();
            }
            let n_t = moments.n_atoms;
            let energy = if n_t > 0.0 {
                energy_per_particle_with(&mut model, &state.psi_t)
            } else {
                f64::NAN
            };
            let sample = Sample {
                t,
                n_t,
                n_u: state.untrapped_atoms(dx),
                central_density: state.psi_t[center].norm_sqr(),
                mean_x: moments.mean_x,
                mean_x2: moments.mean_x2,
                pointiness: moments.pointiness,
                energy_per_particle: energy,
                a1: fb.controls.a1,
                a2: fb.controls.a2,
                b: fb.controls.b,
            };
            recorder(&sample, &state)?;
            samples.push(sample);
        }
        if i == steps {
            break;
        }

        let controls = if fb.controls.is_zero() { None } else { Some(fb.controls) };
        stepper.step(&mut state, run.dt, &mut FieldDerivative { model: &mut model, controls })?;
        let t_next = (i + 1) as f64 * run.dt;
        state.t = t_next;
        let mut peak: f64 = 0.0;
        let mut finite = true;
        for v in state.psi_t.iter().chain(&state.psi_u) {
            let a = v.norm_sqr();
            finite &= a.is_finite();
            peak = peak.max(a);
        }
        for v in state.n.iter_mut() {
            finite &= v.is_finite();
            if *v < 0.0 {
                clipped -= *v * dx;
                *v = 0.0;
            }
        }
        if !finite {
            return Err(Error::BlowUp {
                t: t_next,
                message: "non-finite field".into(),
            });
        }
        if peak.sqrt() > run.blowup_ceiling {
            return Err(Error::BlowUp {
                t: t_next,
                message: format!("|psi| = {:e} exceeds ceiling {:e}", peak.sqrt(), run.blowup_ceiling),
            });
        }
    }
    if clipped > 0.0 {
        log::info!("clipped {clipped:e} reservoir atoms from negative density");
    }
    Ok(RunResult {
        final_state: state,
        samples,
        clipped_reservoir: clipped,
        steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::gaussian;

    #[derive(Clone)]
    struct Scalar(f64);

    impl OdeState for Scalar {
        fn axpy(&mut self, a: f64, x: &Self) {
            self.0 += a * x.0;
        }
        fn assign(&mut self, x: &Self) {
            self.0 = x.0;
        }
        fn is_finite(&self) -> bool {
            self.0.is_finite()
        }
    }

    struct Decay;

    impl DerivativeProvider<Scalar> for Decay {
        fn derivative(&mut self, s: &Scalar, out: &mut Scalar) -> Result<()> {
            out.0 = -s.0;
            Ok(())
        }
    }

    /// dy/dt = -a y - b y with the `-a y` part solved exactly.
    struct SplitDecay(f64, f64);

    impl DerivativeProvider<Scalar> for SplitDecay {
        fn derivative(&mut self, s: &Scalar, out: &mut Scalar) -> Result<()> {
            out.0 = -self.1 * s.0;
            Ok(())
        }
        fn propagate_linear(&mut self, s: &mut Scalar, h: f64) {
            s.0 *= (-self.0 * h).exp();
        }
    }

    #[test]
    fn scalar_decay_matches_rk4_value() {
        let mut y = Scalar(1.0);
        Rk4::new(&y).step(&mut y, 0.1, &mut Decay).unwrap();
        // Classical RK4 on y' = -y: 1 - h + h^2/2 - h^3/6 + h^4/24.
        let h: f64 = 0.1;
        let poly = 1.0 - h + h * h / 2.0 - h.powi(3) / 6.0 + h.powi(4) / 24.0;
        assert!((y.0 - poly).abs() < 1e-15);
        assert!((y.0 - 0.9048375).abs() < 1e-7);
        assert!((y.0 - (-0.1f64).exp()).abs() < 1e-7);
    }

    #[test]
    fn exact_linear_part_is_fourth_order() {
        let err = |h: f64| {
            let mut y = Scalar(1.0);
            let mut rk = Rk4::new(&y);
            let steps = (1.0 / h).round() as usize;
            for _ in 0..steps {
                rk.step(&mut y, h, &mut SplitDecay(30.0, 1.0)).unwrap();
            }
            (y.0 - (-31.0f64).exp()).abs() / (-31.0f64).exp()
        };
        let ratio = err(0.02) / err(0.01);
        assert!(ratio > 2f64.powf(3.5) && ratio < 2f64.powf(4.5), "ratio {ratio}");
        // A stiff linear part that would wreck explicit RK4 at this step stays stable.
        let mut y = Scalar(1.0);
        Rk4::new(&y).step(&mut y, 0.1, &mut SplitDecay(1e4, 0.0)).unwrap();
        assert!(y.0.abs() < 1e-10);
    }

    fn small_setup() -> (Grid, PhysicalParams) {
        let grid = Grid::new(256, 1.0e-4).unwrap();
        let params = PhysicalParams {
            scattering_length: 0.0,
            ..PhysicalParams::default().isolated()
        };
        (grid, params)
    }

    #[test]
    fn zero_derivative_keeps_state() {
        let (grid, params) = small_setup();
        let params = PhysicalParams {
            omega: 1e-30,
            ..params
        };
        let mut model = Model::new(&grid, &params).unwrap();
        let mut state = FieldState::zeros(256);
        state.t = 0.5;
        let next = rk4_step(&state, 1e-6, &mut model, None).unwrap();
        assert_eq!(next.psi_t, state.psi_t);
        assert_eq!(next.n, state.n);
        assert_eq!(next.t, 0.5 + 1e-6);
    }

    #[test]
    fn displaced_packet_follows_ehrenfest_cosine() {
        let (grid, params) = small_setup();
        let x0 = 5e-6;
        let initial = FieldState::seeded(&grid, &params, 1.0, x0);
        let period = 2.0 * std::f64::consts::PI / params.omega;
        let dt = 1e-4 / params.omega;
        let run = RunConfig {
            dt,
            t_final: period,
            record_interval: 50.0 * dt,
            ..Default::default()
        };
        let result = run_simulation(&params, &run, &grid, initial, |_, _| Ok(())).unwrap();
        let worst = result
            .samples
            .iter()
            .map(|s| (s.mean_x - x0 * (params.omega * s.t).cos()).abs() / x0)
            .fold(0.0, f64::max);
        assert!(worst < 1e-9, "worst relative deviation {worst:e}");
    }

    #[test]
    fn isolated_norm_is_conserved() {
        let (grid, params) = small_setup();
        let params = PhysicalParams {
            scattering_length: 1e-10,
            ..params
        };
        let initial = FieldState::seeded(&grid, &params, 1e4, 2e-6);
        let run = RunConfig {
            dt: 5e-6,
            t_final: 0.2,
            record_interval: 1e-3,
            ..Default::default()
        };
        let r = run_simulation(&params, &run, &grid, initial, |_, _| Ok(())).unwrap();
        let n0 = r.samples[0].n_t;
        let e0 = r.samples[0].energy_per_particle;
        for s in &r.samples {
            assert!((s.n_t / n0 - 1.0).abs() < 1e-10);
            assert!((s.energy_per_particle / e0 - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn symmetric_state_keeps_zero_mean() {
        let (grid, params) = small_setup();
        let params = PhysicalParams {
            scattering_length: 5e-9,
            ..params
        };
        // A breathing (wrong-width) symmetric packet.
        let mut initial = FieldState::zeros(256);
        initial.psi_t = gaussian(&grid, 2.0 * params.oscillator_length(), 0.0, 1e4);
        let run = RunConfig {
            dt: 5e-6,
            t_final: 0.05,
            record_interval: 1e-3,
            ..Default::default()
        };
        let r = run_simulation(&params, &run, &grid, initial, |_, _| Ok(())).unwrap();
        for s in &r.samples {
            assert!(s.mean_x.abs() < 1e-10 * s.mean_x2.sqrt());
        }
    }

    #[test]
    fn field_error_converges_at_fourth_order() {
        let (grid, params) = small_setup();
        let params = PhysicalParams {
            scattering_length: 2e-8,
            ..params
        };
        let mut initial = FieldState::zeros(256);
        initial.psi_t = gaussian(&grid, 1.5 * params.oscillator_length(), 3e-6, 1e4);
        let t_final = 0.02;
        let solve = |dt: f64| {
            let run = RunConfig {
                dt,
                t_final,
                record_interval: t_final,
                ..Default::default()
            };
            run_simulation(&params, &run, &grid, initial.clone(), |_, _| Ok(()))
                .unwrap()
                .final_state
        };
        let base = 8e-6;
        let reference = solve(base / 16.0);
        let err = |s: &FieldState| {
            s.psi_t
                .iter()
                .zip(&reference.psi_t)
                .map(|(a, b)| (a - b).norm_sqr())
                .sum::<f64>()
                .sqrt()
        };
        let e1 = err(&solve(base));
        let e2 = err(&solve(base / 2.0));
        let order = (e1 / e2).log2();
        assert!((3.5..=4.5).contains(&order), "measured order {order}");
    }

    #[test]
    fn zero_duration_records_only_initial_sample() {
        let (grid, params) = small_setup();
        let run = RunConfig {
            t_final: 0.0,
            ..Default::default()
        };
        let initial = FieldState::seeded(&grid, &params, 10.0, 0.0);
        let r = run_simulation(&params, &run, &grid, initial, |_, _| Ok(())).unwrap();
        assert_eq!(r.samples.len(), 1);
        assert_eq!(r.samples[0].t, 0.0);
    }

    #[test]
    fn runs_are_bit_identical() {
        let grid = Grid::new(128, 5.4e-5).unwrap();
        let params = PhysicalParams {
            absorber_width: 1e-5,
            ..Default::default()
        };
        let run = RunConfig {
            t_final: 2e-3,
            record_interval: 1e-4,
            feedback_enabled: true,
            ..Default::default()
        };
        let initial = FieldState::seeded(&grid, &params, 1e3, 1e-6);
        let a = run_simulation(&params, &run, &grid, initial.clone(), |_, _| Ok(())).unwrap();
        let b = run_simulation(&params, &run, &grid, initial, |_, _| Ok(())).unwrap();
        assert_eq!(a.samples, b.samples);
        assert_eq!(a.final_state, b.final_state);
    }

    #[test]
    fn guard_rejects_large_steps() {
        let (grid, params) = small_setup();
        let model = Model::new(&grid, &params).unwrap();
        let dt = 0.6 / model.max_kinetic_rate();
        assert!(matches!(check_time_step(&model, dt), Err(Error::Config { .. })));
        assert!(check_time_step(&model, 0.05 / model.max_kinetic_rate()).is_ok());
    }

    #[test]
    fn ceiling_triggers_blow_up_with_partial_record() {
        let (grid, params) = small_setup();
        let run = RunConfig {
            t_final: 1e-3,
            record_interval: 1e-4,
            blowup_ceiling: 1.0,
            ..Default::default()
        };
        let initial = FieldState::seeded(&grid, &params, 1e4, 0.0);
        let mut seen = 0;
        let err = run_simulation(&params, &run, &grid, initial, |_, _| {
            seen += 1;
            Ok(())
        })
        .unwrap_err();
        assert!(matches!(err, Error::BlowUp { .. }));
        assert_eq!(seen, 1);
    }

    #[test]
    fn controls_stay_off_before_start() {
        let (grid, params) = small_setup();
        let run = RunConfig {
            dt: 5e-6,
            t_final: 0.02,
            record_interval: 1e-3,
            feedback_enabled: true,
            feedback_start_time: 0.01,
            ..Default::default()
        };
        let initial = FieldState::seeded(&grid, &params, 1e3, 3e-6);
        let r = run_simulation(&params, &run, &grid, initial, |_, _| Ok(())).unwrap();
        for s in &r.samples {
            if s.t < 0.01 - 1e-9 {
                assert_eq!((s.a1, s.a2, s.b), (0.0, 0.0, 0.0));
            }
        }
        assert!(r.samples.iter().any(|s| s.a1 != 0.0));
    }
}
