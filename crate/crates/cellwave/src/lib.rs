//! Numerical workbench for waves in a one-dimensional two-phase periodic
//! medium, built on the boundary-triple representation of the periodicity
//! cell.
//!
//! The library works fibre by fibre: the Gelfand transform turns the
//! full-line operator −d/dx(a(x/ε)d/dx) into a family of cell operators
//! parametrised by the quasimomentum χ, and every fibre object here is
//! exact up to scalar root finding. The main layers are
//!
//! * [`medium`] — the two-phase cell and its coupling constants,
//! * [`triple`] — boundary maps, the Weyl function M(z, χ), and the
//!   rank-two solution operator behind the resolvent formula,
//! * [`dispersion`] — Bloch eigenvalues from the zero set of the Weyl
//!   determinant and from the transfer-matrix discriminant,
//! * [`homog`] — effective constants (dispersion curvature, fourth-order
//!   correction, time-dispersion coefficient) and the rank-one and
//!   rank-two effective fibre models,
//! * [`resolvent`] — dense-kernel operator-norm comparisons between the
//!   exact fibre resolvent and its effective approximations,
//! * [`wave`] — fibre wave propagators, long-time error envelopes, and
//!   synthesis back to the full line,
//! * [`oracle`] — an independent finite-difference discretisation used to
//!   cross-check everything above,
//! * [`experiments`] — the sweep drivers and the self-test suite exposed
//!   by the command-line tool.
//!
//! Scalar conventions: inner products are linear in the first argument;
//! the spectral parameter z is complex with the principal square root
//! k = √z; quasimomenta live in [−π, π).

pub mod dispersion;
pub mod error;
pub mod experiments;
pub mod grid;
pub mod homog;
pub mod medium;
pub mod numerics;
pub mod oracle;
pub mod resolvent;
pub mod triple;
pub mod wave;

pub use error::{Error, Result};
pub use grid::{CellFunction, CellGrid, Phase};
pub use medium::{Medium, Quasimomentum};
