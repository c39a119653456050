//! Pumped, damped and outcoupled one-dimensional atom laser: coupled
//! Gross-Pitaevskii and reservoir equations on a pseudospectral grid, a
//! moment-feedback controller and a two-window Fourier stability classifier.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod diagnostics;
pub mod error;
pub mod feedback;
pub mod grid;
pub mod groundstate;
pub mod integrator;
pub mod io;
pub mod model;
pub mod sweep;

pub use error::{Error, Result};
