//! Command-line front end: `simulate`, `groundstate`, `sweep` and `analyze`.
//!
//! Exit codes: 0 success, 1 configuration or usage error, 2 numerical blow-up or
//! non-convergence, 3 I/O or checkpoint error.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::{parse_config, Config};
use crate::diagnostics::{analyze_series, StabilityReport};
use crate::error::{Error, Result};
use crate::groundstate::imaginary_time_solve;
use crate::integrator::{run_simulation, Sample};
use crate::io::{read_timeseries, report_text, write_report, write_snapshot, write_timeseries};
use crate::model::{FieldState, HBAR};
use crate::sweep::{boundaries_csv, extract_boundaries, monotone_fraction, phase_csv, run_sweep, SweepSpec};

#[derive(Debug, Parser)]
#[command(name = "atomlaser", version, about = "Pumped 1D atom laser simulator with moment feedback")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Time-evolve the coupled fields and write the sampled diagnostics.
    Simulate(Common),
    /// Relax to the trapped ground state in imaginary time.
    Groundstate(Common),
    /// Classify a grid of (scattering length, pump width) cells.
    Sweep(Common),
    /// Classify stability from an existing time series CSV.
    Analyze {
        /// Time series written by `simulate`.
        timeseries: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Debug, Args)]
struct Common {
    /// Configuration file (`key = value` lines); defaults apply to missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Switch the feedback controller on or off.
    #[arg(long, value_parser = ["on", "off"])]
    feedback: Option<String>,
    /// Simulated time, s.
    #[arg(long)]
    duration: Option<f64>,
    #[arg(long)]
    grid_points: Option<usize>,
    /// Time step, s.
    #[arg(long)]
    dt: Option<f64>,
    /// Growth threshold of the stability classifier.
    #[arg(long)]
    threshold: Option<f64>,
    /// Sweep worker threads (0 = all cores).
    #[arg(long)]
    workers: Option<usize>,
}

impl Common {
    fn load(&self) -> Result<Config> {
        let mut cfg = match &self.config {
            Some(path) => parse_config(&fs::read_to_string(path)?)?,
            None => Config::default(),
        };
        if let Some(f) = &self.feedback {
            cfg.run.feedback_enabled = f == "on";
        }
        if let Some(v) = self.duration {
            cfg.run.t_final = v;
        }
        if let Some(v) = self.grid_points {
            cfg.grid_points = v;
        }
        if let Some(v) = self.dt {
            cfg.run.dt = v;
        }
        if let Some(v) = self.threshold {
            cfg.threshold = v;
        }
        if let Some(v) = self.workers {
            cfg.sweep_workers = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn out_dir(&self) -> Result<&Path> {
        fs::create_dir_all(&self.out)?;
        Ok(&self.out)
    }
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).try_init();
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Simulate(c) => simulate(&c),
        Command::Groundstate(c) => groundstate(&c),
        Command::Sweep(c) => sweep(&c),
        Command::Analyze { timeseries, common } => analyze(&timeseries, &common),
    }
}

fn stability_of(samples: &[Sample], cfg: &Config) -> Result<StabilityReport> {
    let times: Vec<f64> = samples.iter().map(|s| s.t).collect();
    let values: Vec<f64> = samples.iter().map(|s| s.central_density).collect();
    analyze_series(&times, &values, cfg.threshold, cfg.floor)
}

fn simulate(c: &Common) -> Result<()> {
    let cfg = c.load()?;
    let out = c.out_dir()?;
    let grid = cfg.grid()?;
    let initial = FieldState::seeded(&grid, &cfg.params, cfg.seed_atoms, cfg.seed_offset);
    let mut samples = Vec::new();
    let mut snapshots = 0usize;
    let outcome = run_simulation(&cfg.params, &cfg.run, &grid, initial, |s, state| {
        samples.push(*s);
        if let Some(every) = cfg.snapshot_interval {
            if s.t + 0.5 * cfg.run.dt >= snapshots as f64 * every {
                write_snapshot(state, &grid, &out.join(format!("snapshot_{snapshots:06}.bin")))?;
                snapshots += 1;
            }
        }
        Ok(())
    });
    if !samples.is_empty() {
        write_timeseries(&samples, &out.join("timeseries.csv"))?;
    }
    let result = outcome?;
    write_snapshot(&result.final_state, &grid, &out.join("final.bin"))?;
    let last = samples.last().expect("at least the initial sample");
    println!(
        "t = {:.6} s  N_t = {:.6e}  N_u = {:.6e}  E/N = {:.6} hbar omega",
        last.t,
        last.n_t,
        last.n_u,
        last.energy_per_particle / (HBAR * cfg.params.omega)
    );
    match stability_of(&samples, &cfg) {
        Ok(report) => {
            write_report(&report, &out.join("stability.txt"))?;
            println!("stability: {}", report.classification);
        }
        Err(Error::Analysis(msg)) => {
            println!("stability: not analysed ({msg})");
        }
        Err(e) => return Err(e),
    }
    Ok(())
}

fn groundstate(c: &Common) -> Result<()> {
    let cfg = c.load()?;
    let out = c.out_dir()?;
    let grid = cfg.grid()?;
    let r = imaginary_time_solve(&cfg.params, cfg.gs_atoms, &grid, &cfg.ground_state_settings())?;
    let mut state = FieldState::zeros(grid.n_points());
    state.psi_t = r.psi.clone();
    write_snapshot(&state, &grid, &out.join("groundstate.bin"))?;
    let hw = HBAR * cfg.params.omega;
    let record = format!(
        "n_atoms,energy_per_particle,chemical_potential,energy_per_particle_hbar_omega,iterations,residual\n\
         {:.16e},{:.16e},{:.16e},{:.16e},{},{:.16e}\n",
        cfg.gs_atoms,
        r.energy_per_particle,
        r.chemical_potential,
        r.energy_per_particle / hw,
        r.iterations,
        r.residual
    );
    fs::write(out.join("groundstate.csv"), record)?;
    println!(
        "E/N = {:.9} hbar omega  mu = {:.9} hbar omega  ({} iterations, residual {:.2e})",
        r.energy_per_particle / hw,
        r.chemical_potential / hw,
        r.iterations,
        r.residual
    );
    Ok(())
}

fn sweep(c: &Common) -> Result<()> {
    let mut cfg = c.load()?;
    let out = c.out_dir()?;
    if cfg.sweep_checkpoint.is_none() {
        cfg.sweep_checkpoint = Some(out.join("sweep_checkpoint.txt").display().to_string());
    }
    let spec = SweepSpec::from_config(cfg);
    let diagram = run_sweep(&spec)?;
    fs::write(out.join("phase.csv"), phase_csv(&diagram))?;
    fs::write(out.join("boundaries.csv"), boundaries_csv(&extract_boundaries(&diagram)))?;
    println!(
        "{} cells; columns monotone in a: {:.0}%",
        diagram.cells.len(),
        100.0 * monotone_fraction(&diagram)
    );
    Ok(())
}

fn analyze(path: &Path, c: &Common) -> Result<()> {
    let cfg = c.load()?;
    let samples = read_timeseries(path)?;
    let report = stability_of(&samples, &cfg)?;
    let out = c.out_dir()?;
    write_report(&report, &out.join("stability.txt"))?;
    print!("{}", report_text(&report));
    Ok(())
}
