//! Numerical laboratory for quasiperiodic and skew-shift Schrödinger operators.
//!
//! The crate is organised bottom-up:
//!
//! * [`precision`] – fixed-point torus coordinates and high-precision frequencies.
//! * [`torus`] – shifts and skew-shifts of `T^d`, orbits, distances.
//! * [`arithmetic`] – continued fractions, Diophantine scans, simultaneous
//!   approximation, Liouville-type frequencies.
//! * [`equidistribution`] – box / isotropic discrepancy, ETK and Van der Corput
//!   bounds, decay-rate fits.
//! * [`brs`] – bounded remainder sets and their transfer functions.
//! * [`covering`] – covering times of the torus by orbits of balls.
//! * [`cocycle`] – Schrödinger transfer-matrix cocycles and Lyapunov exponents.
//! * [`transport`] – finite-box wavepacket evolution and transport exponents.
//! * [`harness`] – JSON-configured experiments and result records.
//! * [`acceptance`] – the acceptance criteria and their report.
//!
//! Inner loops (grid scans, phase averages, energy sweeps) go through
//! [`exec::Exec`], which uses rayon when the `parallel` feature is enabled and
//! falls back to plain iteration otherwise. Reductions are always performed in
//! index order so results do not depend on the worker count.

pub mod acceptance;
pub mod arithmetic;
pub mod brs;
pub mod cocycle;
pub mod covering;
pub mod equidistribution;
pub mod error;
pub mod exec;
pub mod harness;
pub mod precision;
pub mod quadrature;
pub mod torus;
pub mod transport;

pub use error::{Error, Result};
pub use exec::Exec;
pub use precision::{Frequency, Turn};
pub use torus::{MapSpec, TorusPoint};
