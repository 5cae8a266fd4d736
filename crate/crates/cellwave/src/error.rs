use num_complex::Complex64;
use thiserror::Error;

/// Failure modes shared across the workbench.
///
/// Most computations are closed-form and cannot fail; the variants below
/// capture the genuine mathematical obstructions (degeneracies, spectral
/// poles, divergent expansions) plus the two numerical ones (bracketing and
/// iterative convergence).
#[derive(Debug, Clone, Error)]
pub enum Error {
    /// The coupling coefficient ξ vanishes, so the rank-one eigenstructure
    /// of Λ (and everything built on ψ∥) is undefined.
    #[error("coupling xi vanishes at chi = {chi:.6e}; band-edge degeneracy, no parallel eigenvector")]
    DegenerateCoupling { chi: f64 },

    /// The spectral parameter sits on (or numerically too close to) an
    /// eigenvalue of the relevant operator.
    #[error("z = {z} is within relative distance {tol:.1e} of the spectral point {pole:.12e}")]
    SpectralPole { z: Complex64, pole: f64, tol: f64 },

    /// A Neumann-series evaluation was requested outside its disc of
    /// convergence.
    #[error("|z| = {z_abs:.6e} is not below the series convergence radius {radius:.6e}")]
    SeriesDivergence { z_abs: f64, radius: f64 },

    /// A root search failed to bracket a sign change. Should not happen for
    /// valid media; indicates a scan-resolution problem.
    #[error("no sign change bracketed in [{lo:.6e}, {hi:.6e}] while locating root #{index}")]
    RootNotBracketed { lo: f64, hi: f64, index: usize },

    /// The 2x2 Dirichlet-to-Neumann matrix is numerically singular, which
    /// makes the resolvent correction term meaningless.
    #[error("det M(z) = {det} has modulus below {tol:.1e} at z = {z}")]
    SingularM { z: Complex64, det: Complex64, tol: f64 },

    /// The continued-fraction denominator c·z - q1 vanishes.
    #[error("continued fraction hits its pole: c z - q1 = {value}")]
    PoleAtQ1 { value: Complex64 },

    /// An iterative method did not reach its tolerance within the
    /// iteration budget.
    #[error("iteration failed to converge after {iters} steps (residual {residual:.3e})")]
    NonConvergence { iters: usize, residual: f64 },

    /// Invalid argument combinations that type invariants cannot rule out.
    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }
}
