//! Output files: the sampled time series CSV, binary field snapshots and the
//! stability report.
//!
//! Snapshot layout, all little-endian with no padding:
//! `b"ALSNAP1\0"`, `u64 n_points`, `f64 length`, `f64 t`, then `psi_t` as
//! interleaved re/im `f64`, `psi_u` likewise, then `n` as `f64`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use num_complex::Complex64;

use crate::diagnostics::StabilityReport;
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::integrator::Sample;
use crate::model::FieldState;

pub const TIMESERIES_HEADER: &str =
    "t,N_t,N_u,central_density,mean_x,mean_x2,pointiness,energy_per_particle,a1,a2,b";

pub const SNAPSHOT_MAGIC: &[u8; 8] = b"ALSNAP1\0";

fn sample_fields(s: &Sample) -> [f64; 11] {
    [
        s.t,
        s.n_t,
        s.n_u,
        s.central_density,
        s.mean_x,
        s.mean_x2,
        s.pointiness,
        s.energy_per_particle,
        s.a1,
        s.a2,
        s.b,
    ]
}

/// One CSV row with 17 significant digits per value.
pub fn timeseries_row(s: &Sample) -> String {
    sample_fields(s)
        .iter()
        .map(|v| format!("{v:.16e}"))
        .collect::<Vec<_>>()
        .join(",")
}

pub fn write_timeseries(samples: &[Sample], path: &Path) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::Analysis("no samples to write".into()));
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(TIMESERIES_HEADER.as_bytes())?;
    w.write_all(b"\n")?;
    for s in samples {
        w.write_all(timeseries_row(s).as_bytes())?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_timeseries(path: &Path) -> Result<Vec<Sample>> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines();
    let header = lines.next().transpose()?.unwrap_or_default();
    if header.trim_end() != TIMESERIES_HEADER {
        return Err(Error::Parse {
            line: 1,
            key: "header".into(),
            message: format!("expected `{TIMESERIES_HEADER}`"),
        });
    }
    let mut samples = Vec::new();
    for (idx, line) in lines.enumerate() {
        let line = line?;
        let line_no = idx + 2;
        if line.trim().is_empty() {
            continue;
        }
        let values: Vec<f64> = line
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse {
                line: line_no,
                key: "row".into(),
                message: e.to_string(),
            })?;
        if values.len() != 11 {
            return Err(Error::Parse {
                line: line_no,
                key: "row".into(),
                message: format!("expected 11 columns, found {}", values.len()),
            });
        }
        samples.push(Sample {
            t: values[0],
            n_t: values[1],
            n_u: values[2],
            central_density: values[3],
            mean_x: values[4],
            mean_x2: values[5],
            pointiness: values[6],
            energy_per_particle: values[7],
            a1: values[8],
            a2: values[9],
            b: values[10],
        });
    }
    Ok(samples)
}

pub fn snapshot_bytes(state: &FieldState, grid: &Grid) -> Result<Vec<u8>> {
    state.check_shape(grid)?;
    let n = grid.n_points();
    let mut buf = Vec::with_capacity(32 + 40 * n);
    buf.extend_from_slice(SNAPSHOT_MAGIC);
    buf.extend_from_slice(&(n as u64).to_le_bytes());
    buf.extend_from_slice(&grid.length().to_le_bytes());
    buf.extend_from_slice(&state.t.to_le_bytes());
    for field in [&state.psi_t, &state.psi_u] {
        for v in field.iter() {
            buf.extend_from_slice(&v.re.to_le_bytes());
            buf.extend_from_slice(&v.im.to_le_bytes());
        }
    }
    for v in &state.n {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    Ok(buf)
}

pub fn write_snapshot(state: &FieldState, grid: &Grid, path: &Path) -> Result<()> {
    let bytes = snapshot_bytes(state, grid)?;
    let mut f = File::create(path)?;
    f.write_all(&bytes)?;
    f.flush()?;
    Ok(())
}

/// A decoded snapshot: the state plus the grid it was written on.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub n_points: usize,
    pub length: f64,
    pub state: FieldState,
}

pub fn parse_snapshot(bytes: &[u8]) -> Result<Snapshot> {
    let bad = |m: &str| Error::Parse {
        line: 0,
        key: "snapshot".into(),
        message: m.into(),
    };
    if bytes.len() < 32 || &bytes[..8] != SNAPSHOT_MAGIC {
        return Err(bad("missing ALSNAP1 header"));
    }
    let word = |i: usize| -> [u8; 8] { bytes[i..i + 8].try_into().expect("8-byte slice") };
    let n = u64::from_le_bytes(word(8)) as usize;
    let length = f64::from_le_bytes(word(16));
    let t = f64::from_le_bytes(word(24));
    if bytes.len() != 32 + 40 * n {
        return Err(bad(&format!("expected {} bytes for {n} points, found {}", 32 + 40 * n, bytes.len())));
    }
    let f = |i: usize| f64::from_le_bytes(word(i));
    let complex = |base: usize| -> Vec<Complex64> {
        (0..n).map(|j| Complex64::new(f(base + 16 * j), f(base + 16 * j + 8))).collect()
    };
    let psi_t = complex(32);
    let psi_u = complex(32 + 16 * n);
    let n_base = 32 + 32 * n;
    let res = (0..n).map(|j| f(n_base + 8 * j)).collect();
    Ok(Snapshot {
        n_points: n,
        length,
        state: FieldState {
            psi_t,
            psi_u,
            n: res,
            t,
        },
    })
}

pub fn read_snapshot(path: &Path) -> Result<Snapshot> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    parse_snapshot(&bytes)
}

/// Flat `key,value` record followed by one line per band.
pub fn report_text(report: &StabilityReport) -> String {
    let mut s = String::new();
    let mut kv = |k: &str, v: String| {
        s.push_str(k);
        s.push(',');
        s.push_str(&v);
        s.push('\n');
    };
    kv("classification", report.classification.to_string());
    kv("growth_threshold", format!("{:e}", report.growth_threshold));
    kv("floor", format!("{:e}", report.floor));
    kv("window_a_start", format!("{:.16e}", report.window_a.0));
    kv("window_a_end", format!("{:.16e}", report.window_a.1));
    kv("window_b_start", format!("{:.16e}", report.window_b.0));
    kv("window_b_end", format!("{:.16e}", report.window_b.1));
    kv("bands", report.bands.len().to_string());
    kv("growing_bands", report.growing_bands().to_string());
    s.push_str("frequency,power_a,power_b,growing,above_floor\n");
    for b in &report.bands {
        s.push_str(&format!(
            "{:.16e},{:.16e},{:.16e},{},{}\n",
            b.frequency, b.power_a, b.power_b, b.growing, b.above_floor
        ));
    }
    s
}

pub fn write_report(report: &StabilityReport, path: &Path) -> Result<()> {
    std::fs::write(path, report_text(report))?;
    Ok(())
}
