//! Flat `key = value` configuration files.
//!
//! `#` starts a comment, blank lines are ignored, every quantity is SI and
//! unknown or repeated keys are rejected. Optional settings are simply left out.

use std::fmt::Write as _;

use crate::diagnostics::{DEFAULT_FLOOR, DEFAULT_THRESHOLD};
use crate::error::{Error, Result};
use crate::feedback::{DerivativeMode, FeedbackConfig};
use crate::grid::Grid;
use crate::groundstate::{GroundStateSettings, InitialGuess};
use crate::integrator::RunConfig;
use crate::model::PhysicalParams;

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub grid_points: usize,
    pub length: f64,
    pub params: PhysicalParams,
    /// Atoms in the initial trapped Gaussian.
    pub seed_atoms: f64,
    /// Centre of the initial Gaussian, m.
    pub seed_offset: f64,
    pub run: RunConfig,
    /// Period of field snapshots written by `simulate`, s. None writes only the final state.
    pub snapshot_interval: Option<f64>,
    pub threshold: f64,
    pub floor: f64,
    pub gs_atoms: f64,
    pub gs_dtau: Option<f64>,
    pub gs_tol: f64,
    pub gs_max_iters: usize,
    pub sweep_a: Vec<f64>,
    pub sweep_sigma: Vec<f64>,
    /// 0 uses every available core.
    pub sweep_workers: usize,
    pub sweep_checkpoint: Option<String>,
}

impl Default for Config {
    fn default() -> Self {
        let gs = GroundStateSettings::default();
        Config {
            grid_points: 512,
            length: 2.7e-4,
            params: PhysicalParams::default(),
            seed_atoms: 1e3,
            seed_offset: 0.0,
            run: RunConfig::default(),
            snapshot_interval: None,
            threshold: DEFAULT_THRESHOLD,
            floor: DEFAULT_FLOOR,
            gs_atoms: 1e4,
            gs_dtau: gs.dtau,
            gs_tol: gs.tol,
            gs_max_iters: gs.max_iters,
            sweep_a: Vec::new(),
            sweep_sigma: Vec::new(),
            sweep_workers: 0,
            sweep_checkpoint: None,
        }
    }
}

fn parse_f64(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("`{s}` is not a number"))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("`{s}` is not finite"))
    }
}

fn parse_usize(s: &str) -> std::result::Result<usize, String> {
    s.parse().map_err(|_| format!("`{s}` is not a non-negative integer"))
}

fn parse_bool(s: &str) -> std::result::Result<bool, String> {
    match s {
        "on" | "true" | "yes" => Ok(true),
        "off" | "false" | "no" => Ok(false),
        _ => Err(format!("`{s}` is not on/off")),
    }
}

fn parse_list(s: &str) -> std::result::Result<Vec<f64>, String> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(',').map(|v| parse_f64(v.trim())).collect()
}

/// Shortest text that parses back to the same value.
fn fmt_f64(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 || (1e-3..1e7).contains(&a) {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

fn fmt_bool(v: bool) -> &'static str {
    if v {
        "on"
    } else {
        "off"
    }
}

impl Config {
    fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        let p = &mut self.params;
        match key {
            "grid_points" => self.grid_points = parse_usize(value)?,
            "length" => self.length = parse_f64(value)?,
            "mass" => p.mass = parse_f64(value)?,
            "omega" => p.omega = parse_f64(value)?,
            "gravity" => p.gravity = parse_f64(value)?,
            "scattering_length" => p.scattering_length = parse_f64(value)?,
            "u_tt" => p.u_tt = Some(parse_f64(value)?),
            "u_uu" => p.u_uu = Some(parse_f64(value)?),
            "u_tu" => p.u_tu = Some(parse_f64(value)?),
            "gamma_t1" => p.gamma_t1 = parse_f64(value)?,
            "gamma_t2" => p.gamma_t2 = parse_f64(value)?,
            "gamma_u1" => p.gamma_u1 = parse_f64(value)?,
            "gamma_u2" => p.gamma_u2 = parse_f64(value)?,
            "gamma_tu2" => p.gamma_tu2 = parse_f64(value)?,
            "kappa_out" => p.kappa_out = parse_f64(value)?,
            "kick" => p.kick = parse_f64(value)?,
            "kappa0" => p.kappa0 = parse_f64(value)?,
            "sigma" => p.sigma = parse_f64(value)?,
            "fill_rate" => p.fill_rate = parse_f64(value)?,
            "gamma_p" => p.gamma_p = parse_f64(value)?,
            "diffusion" => p.diffusion = parse_f64(value)?,
            "absorber_strength" => p.absorber_strength = parse_f64(value)?,
            "absorber_width" => p.absorber_width = parse_f64(value)?,
            "literal_untrapped_bracket" => p.literal_untrapped_bracket = parse_bool(value)?,
            "seed_atoms" => self.seed_atoms = parse_f64(value)?,
            "seed_offset" => self.seed_offset = parse_f64(value)?,
            "dt" => self.run.dt = parse_f64(value)?,
            "duration" => self.run.t_final = parse_f64(value)?,
            "record_interval" => self.run.record_interval = parse_f64(value)?,
            "snapshot_interval" => self.snapshot_interval = Some(parse_f64(value)?),
            "blowup_ceiling" => self.run.blowup_ceiling = parse_f64(value)?,
            "feedback" => self.run.feedback_enabled = parse_bool(value)?,
            "feedback_start" => self.run.feedback_start_time = parse_f64(value)?,
            "derivative_mode" => {
                self.run.feedback.mode = match value {
                    "sampled" => DerivativeMode::Sampled,
                    "exact" => DerivativeMode::Exact,
                    _ => return Err(format!("`{value}` is not sampled/exact")),
                }
            }
            "smoothing" => self.run.feedback.smoothing = parse_f64(value)?,
            "clamp_zeroes_a2" => self.run.feedback.clamp_zeroes_a2 = parse_bool(value)?,
            "c3" => self.run.feedback.c3_override = Some(parse_f64(value)?),
            "threshold" => self.threshold = parse_f64(value)?,
            "floor" => self.floor = parse_f64(value)?,
            "gs_atoms" => self.gs_atoms = parse_f64(value)?,
            "gs_dtau" => self.gs_dtau = Some(parse_f64(value)?),
            "gs_tol" => self.gs_tol = parse_f64(value)?,
            "gs_max_iters" => self.gs_max_iters = parse_usize(value)?,
            "sweep_a" => self.sweep_a = parse_list(value)?,
            "sweep_sigma" => self.sweep_sigma = parse_list(value)?,
            "sweep_workers" => self.sweep_workers = parse_usize(value)?,
            "sweep_checkpoint" => self.sweep_checkpoint = Some(value.to_string()),
            _ => return Err("unknown key".into()),
        }
        Ok(())
    }

    /// Every setting as `(key, value)` in file order; unset optional settings are skipped.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let p = &self.params;
        let f = fmt_f64;
        let mut out = vec![
            ("grid_points", self.grid_points.to_string()),
            ("length", f(self.length)),
            ("mass", f(p.mass)),
            ("omega", f(p.omega)),
            ("gravity", f(p.gravity)),
            ("scattering_length", f(p.scattering_length)),
        ];
        for (k, v) in [("u_tt", p.u_tt), ("u_uu", p.u_uu), ("u_tu", p.u_tu)] {
            if let Some(v) = v {
                out.push((k, f(v)));
            }
        }
        out.extend([
            ("gamma_t1", f(p.gamma_t1)),
            ("gamma_t2", f(p.gamma_t2)),
            ("gamma_u1", f(p.gamma_u1)),
            ("gamma_u2", f(p.gamma_u2)),
            ("gamma_tu2", f(p.gamma_tu2)),
            ("kappa_out", f(p.kappa_out)),
            ("kick", f(p.kick)),
            ("kappa0", f(p.kappa0)),
            ("sigma", f(p.sigma)),
            ("fill_rate", f(p.fill_rate)),
            ("gamma_p", f(p.gamma_p)),
            ("diffusion", f(p.diffusion)),
            ("absorber_strength", f(p.absorber_strength)),
            ("absorber_width", f(p.absorber_width)),
            ("literal_untrapped_bracket", fmt_bool(p.literal_untrapped_bracket).into()),
            ("seed_atoms", f(self.seed_atoms)),
            ("seed_offset", f(self.seed_offset)),
            ("dt", f(self.run.dt)),
            ("duration", f(self.run.t_final)),
            ("record_interval", f(self.run.record_interval)),
        ]);
        if let Some(v) = self.snapshot_interval {
            out.push(("snapshot_interval", f(v)));
        }
        out.extend([
            ("blowup_ceiling", f(self.run.blowup_ceiling)),
            ("feedback", fmt_bool(self.run.feedback_enabled).into()),
            ("feedback_start", f(self.run.feedback_start_time)),
            ("derivative_mode", self.run.feedback.mode.as_str().into()),
            ("smoothing", f(self.run.feedback.smoothing)),
            ("clamp_zeroes_a2", fmt_bool(self.run.feedback.clamp_zeroes_a2).into()),
        ]);
        if let Some(v) = self.run.feedback.c3_override {
            out.push(("c3", f(v)));
        }
        out.extend([
            ("threshold", f(self.threshold)),
            ("floor", f(self.floor)),
            ("gs_atoms", f(self.gs_atoms)),
        ]);
        if let Some(v) = self.gs_dtau {
            out.push(("gs_dtau", f(v)));
        }
        out.extend([("gs_tol", f(self.gs_tol)), ("gs_max_iters", self.gs_max_iters.to_string())]);
        let list = |v: &[f64]| v.iter().map(|x| f(*x)).collect::<Vec<_>>().join(", ");
        if !self.sweep_a.is_empty() {
            out.push(("sweep_a", list(&self.sweep_a)));
        }
        if !self.sweep_sigma.is_empty() {
            out.push(("sweep_sigma", list(&self.sweep_sigma)));
        }
        out.push(("sweep_workers", self.sweep_workers.to_string()));
        if let Some(v) = &self.sweep_checkpoint {
            out.push(("sweep_checkpoint", v.clone()));
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    pub fn grid(&self) -> Result<Grid> {
        Grid::new(self.grid_points, self.length)
    }

    pub fn ground_state_settings(&self) -> GroundStateSettings {
        GroundStateSettings {
            dtau: self.gs_dtau,
            tol: self.gs_tol,
            max_iters: self.gs_max_iters,
            initial: InitialGuess::Gaussian,
            ..Default::default()
        }
    }

    pub fn feedback_config(&self) -> &FeedbackConfig {
        &self.run.feedback
    }

    /// Checks every setting and the consistency between them.
    pub fn validate(&self) -> Result<()> {
        let grid = self.grid()?;
        self.params.validate()?;
        if !(self.params.sigma > 0.0) {
            return Err(Error::config("sigma", "pump width must be positive"));
        }
        crate::model::absorber_profile(&grid, &self.params)?;
        self.run.validate()?;
        if let Some(v) = self.snapshot_interval {
            if !(v > 0.0) {
                return Err(Error::config("snapshot_interval", "must be positive"));
            }
        }
        if !(self.seed_atoms >= 0.0) {
            return Err(Error::config("seed_atoms", "must be non-negative"));
        }
        if !(self.threshold > 0.0) {
            return Err(Error::config("threshold", "must be positive"));
        }
        if !(self.floor >= 0.0) {
            return Err(Error::config("floor", "must be non-negative"));
        }
        if !(self.gs_atoms > 0.0) {
            return Err(Error::config("gs_atoms", "must be positive"));
        }
        if !(self.gs_tol > 0.0) {
            return Err(Error::config("gs_tol", "must be positive"));
        }
        if matches!(self.gs_dtau, Some(v) if !(v > 0.0)) {
            return Err(Error::config("gs_dtau", "must be positive"));
        }
        for (key, axis) in [("sweep_a", &self.sweep_a), ("sweep_sigma", &self.sweep_sigma)] {
            if axis.windows(2).any(|w| w[1] <= w[0]) {
                return Err(Error::config(key, "values must be strictly increasing"));
            }
        }
        if self.sweep_sigma.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::config("sweep_sigma", "pump widths must be positive"));
        }
        Ok(())
    }
}

/// Parses and validates a configuration. Missing keys keep their defaults.
pub fn parse_config(text: &str) -> Result<Config> {
    let mut config = Config::default();
    let mut seen: Vec<String> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let Some((key, value)) = content.split_once('=') else {
            return Err(Error::Parse {
                line,
                key: content.to_string(),
                message: "expected `key = value`".into(),
            });
        };
        let key = key.trim();
        let value = value.trim();
        if seen.iter().any(|k| k == key) {
            return Err(Error::Parse {
                line,
                key: key.into(),
                message: "key given twice".into(),
            });
        }
        config.set(key, value).map_err(|message| Error::Parse {
            line,
            key: key.into(),
            message,
        })?;
        seen.push(key.to_string());
    }
    config.validate()?;
    Ok(config)
}
