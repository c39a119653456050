//! Uniform periodic grid and the spectral transform used by every field equation.
//!
//! Transform normalization: the forward transform is unnormalized and the
//! inverse carries the `1/n_points` factor, so `inverse(forward(f)) == f`.
//! With this choice Parseval reads `sum |f|^2 dx == sum |F|^2 dx / n_points`.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{check_len, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    n_points: usize,
    length: f64,
    dx: f64,
    x: Vec<f64>,
    k: Vec<f64>,
}

impl Grid {
    /// Builds a grid of `n_points` over `[-length/2, length/2)`, with `x = 0` at
    /// index `n_points / 2` and wavenumbers in standard FFT order.
    pub fn new(n_points: usize, length: f64) -> Result<Self> {
        if n_points < 8 || !n_points.is_multiple_of(2) {
            return Err(Error::config(
                "grid_points",
                format!("must be even and at least 8, got {n_points}"),
            ));
        }
        if !(length.is_finite() && length > 0.0) {
            return Err(Error::config("length", format!("must be positive, got {length}")));
        }
        let dx = length / n_points as f64;
        let half = (n_points / 2) as i64;
        let x = (0..n_points as i64).map(|i| (i - half) as f64 * dx).collect();
        let dk = 2.0 * PI / length;
        let k = (0..n_points as i64)
            .map(|j| {
                let f = if j < half { j } else { j - n_points as i64 };
                f as f64 * dk
            })
            .collect();
        Ok(Grid {
            n_points,
            length,
            dx,
            x,
            k,
        })
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn k(&self) -> &[f64] {
        &self.k
    }

    /// Largest representable wavenumber, `pi / dx`.
    pub fn k_max(&self) -> f64 {
        PI / self.dx
    }

    /// Index of the grid point at `x = 0`.
    pub fn center_index(&self) -> usize {
        self.n_points / 2
    }
}

/// Per-caller FFT plans and scratch space. Not shared between threads.
pub struct Spectral {
    n: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    scratch: Vec<Complex64>,
}

impl Spectral {
    pub fn new(grid: &Grid) -> Self {
        let n = grid.n_points();
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(n);
        let inverse = planner.plan_fft_inverse(n);
        let scratch_len = forward
            .get_inplace_scratch_len()
            .max(inverse.get_inplace_scratch_len());
        Spectral {
            n,
            forward,
            inverse,
            scratch: vec![Complex64::new(0.0, 0.0); scratch_len],
        }
    }

    pub fn forward(&mut self, buf: &mut [Complex64]) {
        debug_assert_eq!(buf.len(), self.n);
        self.forward.process_with_scratch(buf, &mut self.scratch);
    }

    pub fn inverse(&mut self, buf: &mut [Complex64]) {
        debug_assert_eq!(buf.len(), self.n);
        self.inverse.process_with_scratch(buf, &mut self.scratch);
        let scale = 1.0 / self.n as f64;
        for v in buf.iter_mut() {
            *v *= scale;
        }
    }

    /// Applies a diagonal operator in k-space: `buf <- F^-1[ factor(k) F[buf] ]`.
    pub fn apply_diagonal(&mut self, buf: &mut [Complex64], factor: &[f64]) {
        self.forward(buf);
        for (v, f) in buf.iter_mut().zip(factor) {
            *v *= *f;
        }
        self.inverse(buf);
    }

    /// Writes the spectral second derivative of `field` into `out`.
    pub fn second_derivative_into(
        &mut self,
        field: &[Complex64],
        grid: &Grid,
        out: &mut [Complex64],
    ) -> Result<()> {
        check_len(grid.n_points(), field.len())?;
        check_len(grid.n_points(), out.len())?;
        out.copy_from_slice(field);
        self.forward(out);
        for (v, k) in out.iter_mut().zip(grid.k()) {
            *v *= -k * k;
        }
        self.inverse(out);
        Ok(())
    }
}

/// Spectral second derivative `F^-1[-k^2 F[field]]` with periodic boundaries.
pub fn second_derivative(field: &[Complex64], grid: &Grid) -> Result<Vec<Complex64>> {
    let mut out = vec![Complex64::new(0.0, 0.0); grid.n_points()];
    Spectral::new(grid).second_derivative_into(field, grid, &mut out)?;
    Ok(out)
}
