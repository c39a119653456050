//! Phase diagrams over scattering length and pump width.
//!
//! Cells run as independent jobs on a bounded pool of scoped threads. Results are
//! keyed by `(a index, sigma index)` and every finished cell is appended to the
//! checkpoint file and flushed, so an interrupted sweep resumes where it stopped.
//!
//! Checkpoint format: a header line `# atomlaser-sweep v1 <sha256>` where the hash
//! covers the sweep configuration, then one `i,j,classification,blowup` line per
//! finished cell in completion order.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;

use sha2::{Digest, Sha256};

use crate::config::Config;
use crate::diagnostics::{analyze_series, Classification};
use crate::error::{Error, Result};
use crate::integrator::run_simulation;
use crate::model::{FieldState, PhysicalParams};

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    /// Base configuration; its `sweep_a` and `sweep_sigma` are the axes and its
    /// fill rate, run settings and feedback switch apply to every cell.
    pub config: Config,
    /// 0 uses every available core.
    pub workers: usize,
    pub checkpoint: Option<PathBuf>,
}

impl SweepSpec {
    pub fn from_config(config: Config) -> Self {
        let workers = config.sweep_workers;
        let checkpoint = config.sweep_checkpoint.clone().map(PathBuf::from);
        SweepSpec {
            config,
            workers,
            checkpoint,
        }
    }

    pub fn a_values(&self) -> &[f64] {
        &self.config.sweep_a
    }

    pub fn sigma_values(&self) -> &[f64] {
        &self.config.sweep_sigma
    }

    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        if self.a_values().is_empty() {
            return Err(Error::config("sweep_a", "needs at least one value"));
        }
        if self.sigma_values().is_empty() {
            return Err(Error::config("sweep_sigma", "needs at least one value"));
        }
        // The analysis windows must hold enough samples; check on a dummy series.
        let run = &self.config.run;
        let every = run.record_every();
        let count = run.steps() / every + 1;
        let times: Vec<f64> = (0..count).map(|i| (i * every) as f64 * run.dt).collect();
        analyze_series(&times, &vec![0.0; count], self.config.threshold, self.config.floor)
            .map_err(|e| Error::config("duration", format!("too short for stability analysis: {e}")))?;
        Ok(())
    }

    /// Hash of everything that determines the cell results.
    pub fn fingerprint(&self) -> String {
        let mut c = self.config.clone();
        c.sweep_workers = 0;
        c.sweep_checkpoint = None;
        let digest = Sha256::digest(c.to_text().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    fn cell_params(&self, i: usize, j: usize) -> PhysicalParams {
        PhysicalParams {
            scattering_length: self.a_values()[i],
            sigma: self.sigma_values()[j],
            ..self.config.params.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellResult {
    pub i: usize,
    pub j: usize,
    pub a: f64,
    pub sigma: f64,
    pub classification: Classification,
    pub blowup: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseDiagram {
    pub a_values: Vec<f64>,
    pub sigma_values: Vec<f64>,
    /// Sorted by `(i, j)`.
    pub cells: Vec<CellResult>,
}

impl PhaseDiagram {
    pub fn get(&self, i: usize, j: usize) -> Option<&CellResult> {
        self.cells.iter().find(|c| c.i == i && c.j == j)
    }
}

/// Simulates one cell and classifies its central-density series. Divergence
/// counts as absolutely unstable.
pub fn run_cell(spec: &SweepSpec, i: usize, j: usize) -> Result<CellResult> {
    let cfg = &spec.config;
    let params = spec.cell_params(i, j);
    let grid = cfg.grid()?;
    let initial = FieldState::seeded(&grid, &params, cfg.seed_atoms, cfg.seed_offset);
    let (classification, blowup) = match run_simulation(&params, &cfg.run, &grid, initial, |_, _| Ok(())) {
        Ok(result) => {
            let times: Vec<f64> = result.samples.iter().map(|s| s.t).collect();
            let values: Vec<f64> = result.samples.iter().map(|s| s.central_density).collect();
            let report = analyze_series(&times, &values, cfg.threshold, cfg.floor)?;
            (report.classification, false)
        }
        Err(Error::BlowUp { t, message }) => {
            log::info!("cell ({i}, {j}) diverged at t = {t:e} s: {message}");
            (Classification::AbsolutelyUnstable, true)
        }
        Err(e) => return Err(e),
    };
    Ok(CellResult {
        i,
        j,
        a: params.scattering_length,
        sigma: params.sigma,
        classification,
        blowup,
    })
}

fn checkpoint_header(spec: &SweepSpec) -> String {
    format!("# atomlaser-sweep v1 {}", spec.fingerprint())
}

fn checkpoint_line(c: &CellResult) -> String {
    format!("{},{},{},{}", c.i, c.j, c.classification, c.blowup)
}

type Finished = BTreeMap<(usize, usize), CellResult>;

/// Reads finished cells from a checkpoint. A trailing line without a newline is
/// an interrupted write and is dropped; returns the byte length of the valid prefix.
fn read_checkpoint(spec: &SweepSpec, path: &Path) -> Result<(Finished, usize)> {
    let mut text = String::new();
    File::open(path)?
        .read_to_string(&mut text)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    let mut done = BTreeMap::new();
    let valid_len = text.rfind('\n').map(|p| p + 1).unwrap_or(0);
    let complete = &text[..valid_len];
    let mut lines = complete.lines();
    let header = checkpoint_header(spec);
    match lines.next() {
        Some(h) if h == header => {}
        Some(h) if h.starts_with("# atomlaser-sweep") => {
            return Err(Error::Checkpoint(format!(
                "{} was written for a different sweep configuration",
                path.display()
            )))
        }
        None => return Ok((done, 0)),
        Some(_) => return Err(Error::Checkpoint(format!("{}: missing header", path.display()))),
    }
    let (na, ns) = (spec.a_values().len(), spec.sigma_values().len());
    for (k, line) in lines.enumerate() {
        let corrupt = |why: &str| Error::Checkpoint(format!("{} line {}: {why}", path.display(), k + 2));
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 4 {
            return Err(corrupt("expected 4 fields"));
        }
        let i: usize = parts[0].parse().map_err(|_| corrupt("bad a index"))?;
        let j: usize = parts[1].parse().map_err(|_| corrupt("bad sigma index"))?;
        if i >= na || j >= ns {
            return Err(corrupt("cell index out of range"));
        }
        let classification: Classification = parts[2].parse().map_err(|_| corrupt("bad classification"))?;
        let blowup: bool = parts[3].parse().map_err(|_| corrupt("bad blowup flag"))?;
        let cell = CellResult {
            i,
            j,
            a: spec.a_values()[i],
            sigma: spec.sigma_values()[j],
            classification,
            blowup,
        };
        if let Some(prev) = done.insert((i, j), cell) {
            if prev != cell {
                return Err(corrupt("conflicting records for one cell"));
            }
        }
    }
    Ok((done, valid_len))
}

fn open_checkpoint(spec: &SweepSpec, path: &Path) -> Result<(Finished, File)> {
    let ck = |e: std::io::Error| Error::Checkpoint(format!("{}: {e}", path.display()));
    if path.exists() {
        let (done, valid_len) = read_checkpoint(spec, path)?;
        let mut file = OpenOptions::new().write(true).open(path).map_err(ck)?;
        if valid_len == 0 {
            file.set_len(0).map_err(ck)?;
            writeln!(file, "{}", checkpoint_header(spec)).map_err(ck)?;
        } else {
            file.set_len(valid_len as u64).map_err(ck)?;
        }
        drop(file);
        let mut file = OpenOptions::new().append(true).open(path).map_err(ck)?;
        file.flush().map_err(ck)?;
        Ok((done, file))
    } else {
        let mut file = File::create(path).map_err(ck)?;
        writeln!(file, "{}", checkpoint_header(spec)).map_err(ck)?;
        file.flush().map_err(ck)?;
        Ok((BTreeMap::new(), file))
    }
}

fn worker_count(requested: usize, jobs: usize) -> usize {
    let n = if requested == 0 {
        std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
    } else {
        requested
    };
    n.clamp(1, jobs.max(1))
}

/// Runs every cell not already in the checkpoint and returns the full diagram.
pub fn run_sweep(spec: &SweepSpec) -> Result<PhaseDiagram> {
    spec.validate()?;
    let (mut done, mut file) = match &spec.checkpoint {
        Some(path) => {
            let (d, f) = open_checkpoint(spec, path)?;
            (d, Some(f))
        }
        None => (BTreeMap::new(), None),
    };
    let na = spec.a_values().len();
    let ns = spec.sigma_values().len();
    let pending: Vec<(usize, usize)> = (0..na)
        .flat_map(|i| (0..ns).map(move |j| (i, j)))
        .filter(|key| !done.contains_key(key))
        .collect();
    if !done.is_empty() {
        log::info!("resuming sweep: {} of {} cells already done", done.len(), na * ns);
    }

    let workers = worker_count(spec.workers, pending.len());
    let next = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel::<Result<CellResult>>();
    let mut first_error: Option<Error> = None;
    std::thread::scope(|scope| {
        for _ in 0..workers {
            let tx = tx.clone();
            let next = &next;
            let pending = &pending;
            scope.spawn(move || loop {
                let k = next.fetch_add(1, Ordering::SeqCst);
                let Some(&(i, j)) = pending.get(k) else { break };
                let result = run_cell(spec, i, j);
                let failed = result.is_err();
                if tx.send(result).is_err() || failed {
                    // Stop handing out work after a failure.
                    next.store(pending.len(), Ordering::SeqCst);
                    break;
                }
            });
        }
        drop(tx);
        for result in rx {
            match result {
                Ok(cell) => {
                    if let Some(f) = file.as_mut() {
                        let write = writeln!(f, "{}", checkpoint_line(&cell)).and_then(|_| f.flush());
                        if let Err(e) = write {
                            first_error.get_or_insert(Error::Checkpoint(e.to_string()));
                            next.store(pending.len(), Ordering::SeqCst);
                        }
                    }
                    log::info!(
                        "cell a = {:e}, sigma = {:e}: {}{}",
                        cell.a,
                        cell.sigma,
                        cell.classification,
                        if cell.blowup { " (blow-up)" } else { "" }
                    );
                    done.insert((cell.i, cell.j), cell);
                }
                Err(e) => {
                    first_error.get_or_insert(e);
                }
            }
        }
    });
    if let Some(e) = first_error {
        return Err(e);
    }
    Ok(PhaseDiagram {
        a_values: spec.a_values().to_vec(),
        sigma_values: spec.sigma_values().to_vec(),
        cells: done.into_values().collect(),
    })
}

/// Per pump width: the lowest absolutely stable `a` and the highest absolutely unstable `a`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Boundary {
    pub sigma: f64,
    /// None marks an open boundary: no stable cell in the column.
    pub lowest_stable_a: Option<f64>,
    /// None when the column has no unstable cell.
    pub highest_unstable_a: Option<f64>,
}

pub fn extract_boundaries(diagram: &PhaseDiagram) -> Vec<Boundary> {
    diagram
        .sigma_values
        .iter()
        .enumerate()
        .map(|(j, &sigma)| {
            let column: Vec<&CellResult> = diagram.cells.iter().filter(|c| c.j == j).collect();
            let lowest_stable_a = column
                .iter()
                .filter(|c| c.classification == Classification::AbsolutelyStable)
                .map(|c| c.i)
                .min()
                .map(|i| diagram.a_values[i]);
            let highest_unstable_a = column
                .iter()
                .filter(|c| c.classification == Classification::AbsolutelyUnstable)
                .map(|c| c.i)
                .max()
                .map(|i| diagram.a_values[i]);
            Boundary {
                sigma,
                lowest_stable_a,
                highest_unstable_a,
            }
        })
        .collect()
}

/// Fraction of columns whose stability rank never drops as `a` increases.
pub fn monotone_fraction(diagram: &PhaseDiagram) -> f64 {
    let ns = diagram.sigma_values.len();
    if ns == 0 {
        return 0.0;
    }
    let monotone = (0..ns)
        .filter(|&j| {
            let mut column: Vec<&CellResult> = diagram.cells.iter().filter(|c| c.j == j).collect();
            column.sort_by_key(|c| c.i);
            column
                .windows(2)
                .all(|w| w[1].classification.rank() >= w[0].classification.rank())
        })
        .count();
    monotone as f64 / ns as f64
}

pub fn phase_csv(diagram: &PhaseDiagram) -> String {
    let mut s = String::from("a,sigma,classification,blowup\n");
    for c in &diagram.cells {
        s.push_str(&format!("{:.16e},{:.16e},{},{}\n", c.a, c.sigma, c.classification, c.blowup));
    }
    s
}

pub fn boundaries_csv(boundaries: &[Boundary]) -> String {
    let mut s = String::from("sigma,lowest_stable_a,highest_unstable_a\n");
    for b in boundaries {
        let stable = b.lowest_stable_a.map(|a| format!("{a:.16e}")).unwrap_or_else(|| "open".into());
        let unstable = b.highest_unstable_a.map(|a| format!("{a:.16e}")).unwrap_or_else(|| "none".into());
        s.push_str(&format!("{:.16e},{stable},{unstable}\n", b.sigma));
    }
    s
}
