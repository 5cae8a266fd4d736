//! Independent finite-difference discretisation of the fibre operator.
//!
//! Everything else in the library goes through closed forms: transfer
//! matrices, Weyl functions, explicit kernels. This module solves the
//! same fibre problems by a method that shares none of that machinery,
//! so agreement between the two is a genuine cross-check rather than a
//! tautology.
//!
//! The discretisation works in the twisted gauge w(y) = e^{iχy} u(y),
//! where the fibre operator becomes −(a w′)′ with the quasi-periodic
//! wrap w(y + 1) = e^{iχ} w(y). On the uniform grid y_j = jh the
//! conservative two-point flux scheme gives a Hermitian matrix that is
//! tridiagonal apart from two wrap entries in the corners. Flux
//! coefficients are cell averages of the coefficient; the harmonic
//! average keeps second-order accuracy when an interface falls inside
//! a cell, the arithmetic average is kept only to demonstrate how the
//! order degrades.

use ndarray::{Array1, Array2};
use ndarray_linalg::{Eigh, Solve, UPLO};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::medium::{Medium, Quasimomentum};
use crate::wave::sine_kernel;

/// Largest matrix handed to the dense Hermitian eigensolver. Resolvent
/// solves are O(n) and take no cap.
pub const DENSE_EIGEN_CAP: usize = 2048;

/// Relative residual above which the cyclic Thomas solve is distrusted
/// and the dense LU fallback runs instead.
const THOMAS_RESIDUAL_TOL: f64 = 1e-10;

/// Relative spectral distance below which a resolvent request is
/// rejected as sitting on an eigenvalue.
const FD_POLE_TOL: f64 = 1e-8;

/// How the coefficient is averaged over a grid cell that straddles the
/// interface.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FluxAverage {
    Harmonic,
    Arithmetic,
}

/// Finite-difference fibre operator on a uniform periodic grid.
///
/// The matrix is stored in the twisted gauge: real tridiagonal entries
/// plus one complex wrap coefficient in each corner. Public methods take
/// and return values of u itself at the nodes; the gauge factor stays
/// internal.
#[derive(Debug, Clone)]
pub struct FdFibre {
    chi: Quasimomentum,
    n: usize,
    h: f64,
    /// a_{j+1/2} / h² for j = 0..n−1; the last entry is the wrap flux.
    flux: Vec<f64>,
    /// Row sums of the two adjacent fluxes.
    diag: Vec<f64>,
    /// e^{iχ}, the quasi-periodicity factor.
    twist: Complex64,
}

/// Builds the scheme for one fibre.
pub fn fd_fibre(
    medium: &Medium,
    chi: Quasimomentum,
    n: usize,
    average: FluxAverage,
) -> Result<FdFibre> {
    if n < 16 {
        return Err(Error::invalid(format!("grid needs at least 16 nodes, got {n}")));
    }
    let h = 1.0 / n as f64;
    let inv_h2 = 1.0 / (h * h);
    let mut flux = Vec::with_capacity(n);
    for j in 0..n {
        let lo = j as f64 * h;
        flux.push(cell_average(medium, lo, lo + h, average) * inv_h2);
    }
    let mut diag = Vec::with_capacity(n);
    for j in 0..n {
        let left = flux[(j + n - 1) % n];
        diag.push(left + flux[j]);
    }
    let twist = Complex64::from_polar(1.0, chi.angle());
    Ok(FdFibre { chi, n, h, flux, diag, twist })
}

/// Coefficient average over one cell (lo, hi) ⊂ [0, 1].
fn cell_average(medium: &Medium, lo: f64, hi: f64, average: FluxAverage) -> f64 {
    let l = medium.interface();
    let below = (l.clamp(lo, hi) - lo) / (hi - lo);
    match average {
        FluxAverage::Harmonic => 1.0 / (below / medium.a_minus() + (1.0 - below) / medium.a_plus()),
        FluxAverage::Arithmetic => below * medium.a_minus() + (1.0 - below) * medium.a_plus(),
    }
}

/// Eigenvalue of the constant-coefficient scheme on the plane wave with
/// total frequency χ + 2πm. These are the exact eigenvalues of the
/// discrete matrix, not of the differential operator.
pub fn discrete_symbol(a: f64, chi: Quasimomentum, n: usize, mode: i64) -> f64 {
    let h = 1.0 / n as f64;
    let phase = 0.5 * h * (chi.angle() + std::f64::consts::TAU * mode as f64);
    let s = 2.0 * phase.sin() / h;
    a * s * s
}

impl FdFibre {
    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn step(&self) -> f64 {
        self.h
    }

    pub fn quasimomentum(&self) -> Quasimomentum {
        self.chi
    }

    /// Grid nodes y_j = jh; the right endpoint is identified with 0.
    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n).map(|j| j as f64 * self.h).collect()
    }

    /// Samples a function of y at the nodes.
    pub fn sample(&self, f: impl Fn(f64) -> Complex64) -> Vec<Complex64> {
        (0..self.n).map(|j| f(j as f64 * self.h)).collect()
    }

    fn gauge(&self, values: &[Complex64], sign: f64) -> Vec<Complex64> {
        let chi = self.chi.angle();
        values
            .iter()
            .enumerate()
            .map(|(j, v)| v * Complex64::from_polar(1.0, sign * chi * j as f64 * self.h))
            .collect()
    }

    /// Applies the twisted matrix to a twisted-gauge vector.
    fn apply_twisted(&self, w: &[Complex64]) -> Vec<Complex64> {
        let n = self.n;
        let mut out = vec![Complex64::default(); n];
        for j in 0..n {
            let right = if j + 1 < n { w[j + 1] } else { self.twist * w[0] };
            let left = if j > 0 { w[j - 1] } else { w[n - 1] * self.twist.conj() };
            out[j] = self.diag[j] * w[j] - self.flux[j] * right - self.flux[(j + n - 1) % n] * left;
        }
        out
    }

    /// Applies the operator to node values of u.
    pub fn apply(&self, u: &[Complex64]) -> Vec<Complex64> {
        let w = self.gauge(u, 1.0);
        self.gauge(&self.apply_twisted(&w), -1.0)
    }

    /// Dense twisted-gauge matrix, Hermitian with two wrap corners.
    pub fn dense(&self) -> Array2<Complex64> {
        let n = self.n;
        let mut m = Array2::<Complex64>::default((n, n));
        for j in 0..n {
            m[(j, j)] = self.diag[j].into();
            if j + 1 < n {
                m[(j, j + 1)] = (-self.flux[j]).into();
                m[(j + 1, j)] = (-self.flux[j]).into();
            }
        }
        let wrap = -self.flux[n - 1];
        m[(0, n - 1)] = wrap * self.twist.conj();
        m[(n - 1, 0)] = wrap * self.twist;
        m
    }

    /// All eigenvalues in ascending order, by dense Hermitian solve.
    pub fn eigenvalues(&self) -> Result<Vec<f64>> {
        Ok(self.eigenpairs()?.0)
    }

    fn eigenpairs(&self) -> Result<(Vec<f64>, Array2<Complex64>)> {
        if self.n > DENSE_EIGEN_CAP {
            return Err(Error::invalid(format!(
                "dense eigensolve capped at n = {DENSE_EIGEN_CAP}, got {}",
                self.n
            )));
        }
        let (vals, mut vecs) = self
            .dense()
            .eigh(UPLO::Lower)
            .map_err(|e| Error::invalid(format!("dense eigensolve failed: {e}")))?;
        // the row-major array reaches LAPACK as its transpose, i.e. the
        // conjugate matrix, so the returned basis diagonalises that one;
        // conjugating restores eigenvectors of the matrix itself
        vecs.mapv_inplace(|v| v.conj());
        Ok((vals.to_vec(), vecs))
    }

    /// Applies the resolvent (A − z)⁻¹ to node values of u.
    ///
    /// Solves the twisted system by the cyclic Thomas reduction: one
    /// rank-one update turns the wrap corners into a plain tridiagonal
    /// problem, so the cost is two tridiagonal sweeps. A residual check
    /// guards the unpivoted elimination and falls back to a dense LU
    /// solve; a request too close to an eigenvalue is rejected with the
    /// estimated spectral point.
    pub fn resolve(&self, z: Complex64, data: &[Complex64]) -> Result<Vec<Complex64>> {
        if data.len() != self.n {
            return Err(Error::invalid(format!(
                "data has {} nodes, operator has {}",
                data.len(),
                self.n
            )));
        }
        let f = self.gauge(data, 1.0);
        let w = match self.solve_cyclic(z, &f) {
            Some(w) if self.relative_residual(z, &w, &f) <= THOMAS_RESIDUAL_TOL => w,
            _ => self.solve_dense(z, &f)?,
        };
        self.reject_pole(z, &w, &f)?;
        Ok(self.gauge(&w, -1.0))
    }

    /// Quadratic form h·⟨(A − z)⁻¹ f, f⟩ of the resolvent, the scalar
    /// used for grid-refinement extrapolation.
    pub fn quadratic_form(&self, z: Complex64, data: &[Complex64]) -> Result<Complex64> {
        let x = self.resolve(z, data)?;
        let mut acc = Complex64::default();
        for j in 0..self.n {
            acc += x[j] * data[j].conj();
        }
        Ok(acc * self.h)
    }

    /// Wave field at time t from velocity data, through the full eigen
    /// decomposition: Σ_k sin(√(λ_k) t/ε)·ε/√λ_k ⟨v, e_k⟩ e_k.
    pub fn propagate(&self, eps: f64, time: f64, velocity: &[Complex64]) -> Result<Vec<Complex64>> {
        if velocity.len() != self.n {
            return Err(Error::invalid(format!(
                "data has {} nodes, operator has {}",
                velocity.len(),
                self.n
            )));
        }
        if !(eps > 0.0) || !eps.is_finite() || !time.is_finite() || time < 0.0 {
            return Err(Error::invalid(format!("bad propagation scale eps = {eps}, t = {time}")));
        }
        let (vals, vecs) = self.eigenpairs()?;
        let v = Array1::from_vec(self.gauge(velocity, 1.0));
        let mut out = Array1::<Complex64>::default(self.n);
        for (k, &lambda) in vals.iter().enumerate() {
            let mode = vecs.column(k);
            let mut coef = Complex64::default();
            for j in 0..self.n {
                coef += v[j] * mode[j].conj();
            }
            let kernel = sine_kernel(lambda.max(0.0) / (eps * eps), time);
            for j in 0..self.n {
                out[j] += kernel * coef * mode[j];
            }
        }
        Ok(self.gauge(out.as_slice().unwrap(), -1.0))
    }

    /// Sherman–Morrison split: A − z = T + u u* with u = (1, 0, …, ḡ)
    /// and g the lower wrap entry, so T is tridiagonal. Returns None
    /// when an unpivoted sweep or the correction denominator degenerates.
    fn solve_cyclic(&self, z: Complex64, f: &[Complex64]) -> Option<Vec<Complex64>> {
        let n = self.n;
        let wrap = Complex64::from(-self.flux[n - 1]) * self.twist;
        let mut diag: Vec<Complex64> = self.diag.iter().map(|&d| Complex64::from(d) - z).collect();
        diag[0] -= Complex64::from(1.0);
        diag[n - 1] -= wrap.norm_sqr();
        let mut u = vec![Complex64::default(); n];
        u[0] = Complex64::from(1.0);
        u[n - 1] = wrap;

        let y = self.solve_tridiagonal(&diag, f)?;
        let s = self.solve_tridiagonal(&diag, &u)?;
        let dot = |a: &[Complex64]| a[0] + wrap.conj() * a[n - 1];
        let den = Complex64::from(1.0) + dot(&s);
        if den.norm() <= 1e-14 * (1.0 + s[0].norm()) {
            return None;
        }
        let scale = dot(&y) / den;
        Some((0..n).map(|j| y[j] - scale * s[j]).collect())
    }

    /// Thomas sweep on the symmetric tridiagonal part with the given
    /// diagonal. Off-diagonal entries are the negated fluxes.
    fn solve_tridiagonal(&self, diag: &[Complex64], rhs: &[Complex64]) -> Option<Vec<Complex64>> {
        let n = self.n;
        let scale: f64 = self.diag.iter().fold(0.0, |m, d| m.max(d.abs()));
        let mut c = vec![Complex64::default(); n];
        let mut x = vec![Complex64::default(); n];
        let mut den = diag[0];
        if den.norm() <= 1e-300 * scale {
            return None;
        }
        c[0] = Complex64::from(-self.flux[0]) / den;
        x[0] = rhs[0] / den;
        for j in 1..n {
            let off = Complex64::from(-self.flux[j - 1]);
            den = diag[j] - off * c[j - 1];
            if den.norm() <= 1e-300 * scale {
                return None;
            }
            if j + 1 < n {
                c[j] = Complex64::from(-self.flux[j]) / den;
            }
            x[j] = (rhs[j] - off * x[j - 1]) / den;
        }
        for j in (0..n - 1).rev() {
            let next = x[j + 1];
            x[j] -= c[j] * next;
        }
        Some(x)
    }

    fn solve_dense(&self, z: Complex64, f: &[Complex64]) -> Result<Vec<Complex64>> {
        let mut m = self.dense();
        for j in 0..self.n {
            m[(j, j)] -= z;
        }
        let b = Array1::from_vec(f.to_vec());
        let x = m.solve(&b).map_err(|e| Error::invalid(format!("dense solve failed: {e}")))?;
        Ok(x.to_vec())
    }

    fn relative_residual(&self, z: Complex64, w: &[Complex64], f: &[Complex64]) -> f64 {
        let aw = self.apply_twisted(w);
        let mut num = 0.0;
        let mut den = 0.0;
        for j in 0..self.n {
            num += (aw[j] - z * w[j] - f[j]).norm_sqr();
            den += f[j].norm_sqr();
        }
        if den == 0.0 {
            0.0
        } else {
            (num / den).sqrt()
        }
    }

    /// Estimates the distance to the spectrum from the solution size and
    /// rejects the request when it falls under the pole tolerance. For a
    /// solution dominated by one eigenvector the Rayleigh-type ratio
    /// ⟨f, x⟩/⟨x, x⟩ recovers λ − z, which locates the offending point.
    fn reject_pole(&self, z: Complex64, x: &[Complex64], f: &[Complex64]) -> Result<()> {
        let mut xf = Complex64::default();
        let mut xx = 0.0;
        let mut ff = 0.0;
        for j in 0..self.n {
            xf += f[j] * x[j].conj();
            xx += x[j].norm_sqr();
            ff += f[j].norm_sqr();
        }
        if xx == 0.0 {
            return Ok(());
        }
        let distance = (ff / xx).sqrt();
        if distance < FD_POLE_TOL * (1.0 + z.norm()) {
            let pole = (z + xf / xx).re;
            return Err(Error::SpectralPole { z, pole, tol: FD_POLE_TOL });
        }
        Ok(())
    }
}
