//! Physics of the pumped, outcoupled atom laser: potentials, pump and absorber
//! profiles, and the right-hand side of the coupled trapped / untrapped /
//! reservoir equations.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{check_len, Error, Result};
use crate::feedback::Controls;
use crate::grid::{Grid, Spectral};

/// Reduced Planck constant, J s.
pub const HBAR: f64 = 1.054_571_817e-34;

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

/// Effective 1D interaction strengths in J m.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interactions {
    pub u_tt: f64,
    pub u_uu: f64,
    pub u_tu: f64,
}

/// Every constant and rate appearing in the field equations, SI units.
#[derive(Debug, Clone, PartialEq)]
pub struct PhysicalParams {
    /// Atomic mass, kg.
    pub mass: f64,
    /// Trap angular frequency, rad/s.
    pub omega: f64,
    /// Gravitational acceleration, m/s^2, acting toward negative x.
    pub gravity: f64,
    /// s-wave scattering length, m. Sets `U_tt = U_uu = 2 U_tu = 4 pi hbar^2 a / m`.
    pub scattering_length: f64,
    /// Explicit overrides of the interaction strengths derived from the scattering length.
    pub u_tt: Option<f64>,
    pub u_uu: Option<f64>,
    pub u_tu: Option<f64>,
    /// One-body losses, 1/s.
    pub gamma_t1: f64,
    pub gamma_u1: f64,
    /// Two-body losses, m/s.
    pub gamma_t2: f64,
    pub gamma_u2: f64,
    pub gamma_tu2: f64,
    /// Outcoupling rate, rad/s; the coupling energy is `hbar * kappa_out`.
    pub kappa_out: f64,
    /// Outcoupling momentum kick, 1/m.
    pub kick: f64,
    /// Peak pump rate, m/s.
    pub kappa0: f64,
    /// Pump width, m.
    pub sigma: f64,
    /// Reservoir fill rate, 1/(m s).
    pub fill_rate: f64,
    /// Reservoir loss, 1/s.
    pub gamma_p: f64,
    /// Reservoir diffusion, m^2/s.
    pub diffusion: f64,
    /// Absorbing boundary peak rate, 1/s.
    pub absorber_strength: f64,
    /// Absorbing boundary width measured from each domain edge, m.
    pub absorber_width: f64,
    /// Apply the untrapped-field Hamiltonian to the trapped field, as the
    /// equation is literally printed, instead of to the untrapped field.
    pub literal_untrapped_bracket: bool,
}

impl Default for PhysicalParams {
    fn default() -> Self {
        PhysicalParams {
            mass: 1.4095e-25,
            omega: 50.0,
            gravity: 9.8,
            scattering_length: 1.0e-10,
            u_tt: None,
            u_uu: None,
            u_tu: None,
            gamma_t1: 7.0e-3,
            gamma_u1: 7.0e-3,
            gamma_t2: 1.7e-8,
            gamma_u2: 3.3e-9,
            gamma_tu2: 8.3e-9,
            kappa_out: 300.0,
            kick: 1.0e-6,
            kappa0: 4.2e-4,
            sigma: 9.0e-6,
            fill_rate: 3.7e8,
            gamma_p: 5.0,
            diffusion: 0.01,
            absorber_strength: 5.0e4,
            absorber_width: 2.7e-5,
            literal_untrapped_bracket: false,
        }
    }
}

impl PhysicalParams {
    /// Interaction strength `4 pi hbar^2 a / m` used as the trapped-trapped coupling.
    pub fn contact_strength(&self) -> f64 {
        4.0 * PI * HBAR * HBAR * self.scattering_length / self.mass
    }

    pub fn interactions(&self) -> Interactions {
        let u = self.contact_strength();
        Interactions {
            u_tt: self.u_tt.unwrap_or(u),
            u_uu: self.u_uu.unwrap_or(u),
            u_tu: self.u_tu.unwrap_or(0.5 * u),
        }
    }

    /// Harmonic oscillator length `sqrt(hbar / (m omega))`.
    pub fn oscillator_length(&self) -> f64 {
        (HBAR / (self.mass * self.omega)).sqrt()
    }

    /// Trap quantum `hbar omega`, J.
    pub fn trap_quantum(&self) -> f64 {
        HBAR * self.omega
    }

    /// Same trap and interactions with pump, all losses, outcoupling and absorber off.
    pub fn isolated(&self) -> Self {
        PhysicalParams {
            gamma_t1: 0.0,
            gamma_u1: 0.0,
            gamma_t2: 0.0,
            gamma_u2: 0.0,
            gamma_tu2: 0.0,
            kappa_out: 0.0,
            kappa0: 0.0,
            fill_rate: 0.0,
            absorber_strength: 0.0,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [("mass", self.mass), ("omega", self.omega)];
        for (key, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(key, format!("must be positive, got {v}")));
            }
        }
        let non_negative = [
            ("gravity", self.gravity),
            ("gamma_t1", self.gamma_t1),
            ("gamma_u1", self.gamma_u1),
            ("gamma_t2", self.gamma_t2),
            ("gamma_u2", self.gamma_u2),
            ("gamma_tu2", self.gamma_tu2),
            ("kappa_out", self.kappa_out),
            ("kick", self.kick),
            ("kappa0", self.kappa0),
            ("sigma", self.sigma),
            ("fill_rate", self.fill_rate),
            ("gamma_p", self.gamma_p),
            ("diffusion", self.diffusion),
            ("absorber_strength", self.absorber_strength),
            ("absorber_width", self.absorber_width),
        ];
        for (key, v) in non_negative {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::config(key, format!("must be non-negative, got {v}")));
            }
        }
        if !self.scattering_length.is_finite() {
            return Err(Error::config("scattering_length", "must be finite"));
        }
        for (key, v) in [("u_tt", self.u_tt), ("u_uu", self.u_uu), ("u_tu", self.u_tu)] {
            if matches!(v, Some(u) if !u.is_finite()) {
                return Err(Error::config(key, "must be finite"));
            }
        }
        Ok(())
    }
}

/// Trapped field, untrapped field, reservoir density and time.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldState {
    /// Trapped condensate, m^-1/2.
    pub psi_t: Vec<Complex64>,
    /// Outcoupled beam, m^-1/2.
    pub psi_u: Vec<Complex64>,
    /// Reservoir density, 1/m.
    pub n: Vec<f64>,
    pub t: f64,
}

impl FieldState {
    pub fn zeros(n_points: usize) -> Self {
        FieldState {
            psi_t: vec![ZERO; n_points],
            psi_u: vec![ZERO; n_points],
            n: vec![0.0; n_points],
            t: 0.0,
        }
    }

    /// Empty beam and reservoir with a trapped Gaussian of the trap ground-state
    /// width holding `atoms`, centred at `offset`.
    pub fn seeded(grid: &Grid, params: &PhysicalParams, atoms: f64, offset: f64) -> Self {
        let mut state = FieldState::zeros(grid.n_points());
        state.psi_t = gaussian(grid, params.oscillator_length(), offset, atoms);
        state
    }

    pub fn len(&self) -> usize {
        self.psi_t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.psi_t.is_empty()
    }

    pub fn check_shape(&self, grid: &Grid) -> Result<()> {
        check_len(grid.n_points(), self.psi_t.len())?;
        check_len(grid.n_points(), self.psi_u.len())?;
        check_len(grid.n_points(), self.n.len())
    }

    pub fn trapped_atoms(&self, dx: f64) -> f64 {
        norm_sqr(&self.psi_t) * dx
    }

    pub fn untrapped_atoms(&self, dx: f64) -> f64 {
        norm_sqr(&self.psi_u) * dx
    }

    pub fn is_finite(&self) -> bool {
        self.psi_t.iter().all(|v| v.re.is_finite() && v.im.is_finite())
            && self.psi_u.iter().all(|v| v.re.is_finite() && v.im.is_finite())
            && self.n.iter().all(|v| v.is_finite())
    }
}

pub(crate) fn norm_sqr(psi: &[Complex64]) -> f64 {
    psi.iter().map(|v| v.norm_sqr()).sum()
}

/// `exp(-(x-x0)^2 / (2 w^2))` on the grid, normalised to `atoms`.
pub fn gaussian(grid: &Grid, width: f64, offset: f64, atoms: f64) -> Vec<Complex64> {
    let mut psi: Vec<Complex64> = grid
        .x()
        .iter()
        .map(|x| {
            let s = (x - offset) / width;
            Complex64::new((-0.5 * s * s).exp(), 0.0)
        })
        .collect();
    let norm = norm_sqr(&psi) * grid.dx();
    if norm > 0.0 {
        let scale = (atoms / norm).sqrt();
        psi.iter_mut().for_each(|v| *v *= scale);
    }
    psi
}

/// Harmonic trap `m omega^2 x^2 / 2`, J.
pub fn trap_potential(grid: &Grid, params: &PhysicalParams) -> Vec<f64> {
    let k = 0.5 * params.mass * params.omega * params.omega;
    grid.x().iter().map(|x| k * x * x).collect()
}

/// Gaussian pump coupling `kappa0 exp(-x^2 / sigma^2)`, m/s.
pub fn pump_profile(grid: &Grid, params: &PhysicalParams) -> Result<Vec<f64>> {
    if !(params.sigma > 0.0) {
        return Err(Error::config("sigma", "pump width must be positive"));
    }
    let s2 = params.sigma * params.sigma;
    Ok(grid
        .x()
        .iter()
        .map(|x| params.kappa0 * (-x * x / s2).exp())
        .collect())
}

/// Imaginary-potential rate, 1/s: zero in the interior, rising as a cos^2 ramp to
/// `absorber_strength` at each domain edge over `absorber_width`.
pub fn absorber_profile(grid: &Grid, params: &PhysicalParams) -> Result<Vec<f64>> {
    let width = params.absorber_width;
    if params.absorber_strength == 0.0 {
        return Ok(vec![0.0; grid.n_points()]);
    }
    if width >= 0.25 * grid.length() {
        return Err(Error::config(
            "absorber_width",
            format!(
                "must be below a quarter of the domain ({:e} m), got {width:e}",
                0.25 * grid.length()
            ),
        ));
    }
    let half = 0.5 * grid.length();
    Ok(grid
        .x()
        .iter()
        .map(|x| {
            let d = half - x.abs();
            if width > 0.0 && d < width {
                let c = (0.5 * PI * d / width).cos();
                params.absorber_strength * c * c
            } else {
                0.0
            }
        })
        .collect())
}

/// Feedback potential source for one right-hand-side evaluation.
#[derive(Debug, Clone, Copy)]
pub enum FeedbackTerm<'a> {
    Off,
    /// A precomputed potential, J.
    Potential(&'a [f64]),
    /// `a1 x + a2 x^2 + b |psi_t|^2` with the current trapped field.
    Controls(Controls),
}

/// Precomputed profiles plus scratch space for evaluating the field equations
/// on one grid. Each running simulation owns its own `Model`.
pub struct Model {
    grid: Grid,
    params: PhysicalParams,
    spectral: Spectral,
    interactions: Interactions,
    kinetic: Vec<f64>,
    trap: Vec<f64>,
    gravity: Vec<f64>,
    pump: Vec<f64>,
    absorber: Vec<f64>,
    kick_phase: Vec<Complex64>,
    diffusion_cache: Option<(f64, Vec<f64>)>,
    kin_t: Vec<Complex64>,
    kin_u: Vec<Complex64>,
    scratch: Vec<Complex64>,
}

impl Model {
    pub fn new(grid: &Grid, params: &PhysicalParams) -> Result<Self> {
        params.validate()?;
        let pump = pump_profile(grid, params)?;
        let absorber = absorber_profile(grid, params)?;
        let n = grid.n_points();
        let kinetic = grid
            .k()
            .iter()
            .map(|k| HBAR * HBAR * k * k / (2.0 * params.mass))
            .collect();
        let gravity = grid
            .x()
            .iter()
            .map(|x| params.mass * params.gravity * x)
            .collect();
        let kick_phase = grid
            .x()
            .iter()
            .map(|x| Complex64::from_polar(1.0, params.kick * x))
            .collect();
        Ok(Model {
            grid: grid.clone(),
            params: params.clone(),
            spectral: Spectral::new(grid),
            interactions: params.interactions(),
            kinetic,
            trap: trap_potential(grid, params),
            gravity,
            pump,
            absorber,
            kick_phase,
            diffusion_cache: None,
            kin_t: vec![ZERO; n],
            kin_u: vec![ZERO; n],
            scratch: vec![ZERO; n],
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn params(&self) -> &PhysicalParams {
        &self.params
    }

    pub fn trap(&self) -> &[f64] {
        &self.trap
    }

    pub fn pump(&self) -> &[f64] {
        &self.pump
    }

    pub fn absorber(&self) -> &[f64] {
        &self.absorber
    }

    /// Kinetic energy `hbar^2 k^2 / 2m` per wavenumber, J.
    pub fn kinetic(&self) -> &[f64] {
        &self.kinetic
    }

    pub fn interactions(&self) -> Interactions {
        self.interactions
    }

    pub fn spectral(&mut self) -> &mut Spectral {
        &mut self.spectral
    }

    /// Largest kinetic phase rate `hbar k_max^2 / 2m`, rad/s.
    pub fn max_kinetic_rate(&self) -> f64 {
        HBAR * self.grid.k_max().powi(2) / (2.0 * self.params.mass)
    }

    /// Full time derivative of every field, reservoir diffusion included.
    pub fn rhs(&mut self, state: &FieldState, v_fb: &[f64]) -> Result<FieldState> {
        state.check_shape(&self.grid)?;
        check_len(self.grid.n_points(), v_fb.len())?;
        if !state.is_finite() || v_fb.iter().any(|v| !v.is_finite()) {
            return Err(Error::BlowUp {
                t: state.t,
                message: "non-finite value in right-hand-side input".into(),
            });
        }
        let mut out = FieldState::zeros(self.grid.n_points());
        self.rates(state, FeedbackTerm::Potential(v_fb), &mut out);
        let mut lap = std::mem::take(&mut self.scratch);
        for (l, n) in lap.iter_mut().zip(&state.n) {
            *l = Complex64::new(*n, 0.0);
        }
        self.spectral.forward(&mut lap);
        for (l, k) in lap.iter_mut().zip(self.grid.k()) {
            *l *= -k * k;
        }
        self.spectral.inverse(&mut lap);
        for (d, l) in out.n.iter_mut().zip(&lap) {
            *d += self.params.diffusion * l.re;
        }
        self.scratch = lap;
        out.t = state.t;
        Ok(out)
    }

    /// Time derivative of every field except reservoir diffusion, which the
    /// integrator applies exactly through [`Model::propagate_diffusion`].
    pub fn rates(&mut self, state: &FieldState, feedback: FeedbackTerm<'_>, out: &mut FieldState) {
        let p = &self.params;
        let Interactions { u_tt, u_uu, u_tu } = self.interactions;
        let literal = p.literal_untrapped_bracket;

        // An all-zero field (empty beam, isolated runs) needs no transform.
        for (psi, kin) in [(&state.psi_t, &mut self.kin_t), (&state.psi_u, &mut self.kin_u)] {
            if psi.iter().all(|v| *v == ZERO) {
                kin.fill(ZERO);
            } else {
                kin.copy_from_slice(psi);
                self.spectral.apply_diagonal(kin, &self.kinetic);
            }
        }

        let minus_i_over_hbar = Complex64::new(0.0, -1.0 / HBAR);
        let minus_i_kappa = Complex64::new(0.0, -p.kappa_out);
        let x = self.grid.x();
        for i in 0..state.psi_t.len() {
            let pt = state.psi_t[i];
            let pu = state.psi_u[i];
            let rt = pt.norm_sqr();
            let ru = pu.norm_sqr();
            let n = state.n[i];
            let v_fb = match feedback {
                FeedbackTerm::Off => 0.0,
                FeedbackTerm::Potential(v) => v[i],
                FeedbackTerm::Controls(c) => c.a1 * x[i] + c.a2 * x[i] * x[i] + c.b * rt,
            };
            let kappa = self.pump[i];
            let absorb = self.absorber[i];
            let phase = self.kick_phase[i];

            let potential_t = self.trap[i] + v_fb + u_tt * rt + u_tu * ru;
            let damping_t = p.gamma_t1 + p.gamma_t2 * rt + p.gamma_tu2 * ru + absorb - 0.5 * kappa * n;
            out.psi_t[i] = minus_i_over_hbar * (self.kin_t[i] + pt * potential_t) - pt * damping_t
                + minus_i_kappa * phase * pu;

            let potential_u = self.gravity[i] + u_uu * ru + u_tu * rt;
            let pair_loss_u = p.gamma_u2 * ru + p.gamma_tu2 * rt;
            let coupling_u = minus_i_kappa * phase.conj() * pt;
            out.psi_u[i] = if literal {
                minus_i_over_hbar * (self.kin_t[i] + pt * potential_u) - pt * pair_loss_u
                    - pu * (p.gamma_u1 + absorb)
                    + coupling_u
            } else {
                minus_i_over_hbar * (self.kin_u[i] + pu * potential_u)
                    - pu * (p.gamma_u1 + pair_loss_u + absorb)
                    + coupling_u
            };

            out.n[i] = p.fill_rate - p.gamma_p * n - kappa * rt * n;
        }
        out.t = state.t;
    }

    /// Exact reservoir diffusion over `h`: `n <- F^-1[exp(-lambda k^2 h) F[n]]`.
    pub fn propagate_diffusion(&mut self, n: &mut [f64], h: f64) {
        let lambda = self.params.diffusion;
        if lambda == 0.0 || h == 0.0 {
            return;
        }
        let stale = !matches!(&self.diffusion_cache, Some((cached, _)) if *cached == h);
        if stale {
            let factor = self
                .grid
                .k()
                .iter()
                .map(|k| (-lambda * k * k * h).exp())
                .collect();
            self.diffusion_cache = Some((h, factor));
        }
        let factor = &self.diffusion_cache.as_ref().expect("cached above").1;
        for (s, v) in self.scratch.iter_mut().zip(n.iter()) {
            *s = Complex64::new(*v, 0.0);
        }
        self.spectral.apply_diagonal(&mut self.scratch, factor);
        for (v, s) in n.iter_mut().zip(&self.scratch) {
            *v = s.re;
        }
    }

    /// Applies the kinetic operator `T psi` into `out`.
    pub fn kinetic_into(&mut self, psi: &[Complex64], out: &mut [Complex64]) {
        out.copy_from_slice(psi);
        self.spectral.apply_diagonal(out, &self.kinetic);
    }
}
