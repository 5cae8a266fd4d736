//! Fibre resolvents: the exact solver through the boundary-triple
//! formula, the one- and two-pole effective models, and dense kernels
//! for operator-norm comparisons between all of them.
//!
//! Everything here lives on one fibre. The exact resolvent is
//! R(z) = R⁰(z) − S(z) M(z)⁻¹ S(z̄)*, with R⁰ the Dirichlet resolvent,
//! S the solution operator, and M the Weyl matrix from [`crate::triple`];
//! the correction is rank two, so the whole kernel is the block Green
//! function plus a rank-two term and can be assembled densely in O(n²).

use std::sync::Arc;

use ndarray::Array2;
use ndarray_linalg::SVD;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::dispersion::BlochBand;
use crate::error::{Error, Result};
use crate::grid::{CellFunction, CellGrid, Phase};
use crate::homog::{
    a_hat0, a_hom_closed_form, second_order_matrix, theta_projection, EffectiveFibre,
};
use crate::medium::Quasimomentum;
use crate::triple::{
    dirichlet_resolvent, edge_basis, m_matrix, pole_guard, solution_operator,
    solution_operator_adjoint, Mat2, TOL_POLE,
};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// Relative floor on det M(z); the determinant vanishes exactly at the
/// fibre eigenvalues, where no resolvent exists.
pub const SINGULAR_REL_TOL: f64 = 1e-12;

/// Relative contact tolerance for the scalar poles of the effective
/// models.
const EFFECTIVE_POLE_TOL: f64 = 1e-13;

// ---------------------------------------------------------------------------
// Pointwise solvers
// ---------------------------------------------------------------------------

/// (A_χ − z)⁻¹ f for the self-adjoint extension cut out by Γ₁u = 0:
/// Dirichlet solve, then the rank-two Weyl-matrix correction.
pub fn krein_resolvent(
    chi: Quasimomentum,
    z: Complex64,
    f: &CellFunction,
) -> Result<CellFunction> {
    let grid = f.grid().clone();
    let medium = *grid.medium();
    let mut out = dirichlet_resolvent(chi, z, f)?;
    let trace = solution_operator_adjoint(&grid, chi, z, f)?;
    let minv = m_matrix(&medium, chi, z)?
        .matrix
        .try_inverse(z, SINGULAR_REL_TOL)?;
    let corr = solution_operator(&grid, chi, z, minv.apply(trace))?;
    out.axpy(-ONE, &corr);
    Ok(out)
}

/// Resolvent through an explicit eigenfunction expansion. All but the
/// last listed mode enter the sum; the last eigenvalue only bounds the
/// remainder, ‖tail‖ ≤ ‖f − Pf‖ / dist(z, [λ_last, ∞)). Returns the
/// partial sum together with that tail bound.
pub fn spectral_resolvent(
    band: &BlochBand,
    z: Complex64,
    f: &CellFunction,
) -> Result<(CellFunction, f64)> {
    let n = band.eigenvalues.len();
    if n < 2 {
        return Err(Error::invalid(
            "spectral resolvent needs at least two modes; the last one bounds the tail",
        ));
    }
    let lambda_tail = band.eigenvalues[n - 1];
    let dist = if z.re <= lambda_tail {
        (Complex64::new(lambda_tail, 0.0) - z).norm()
    } else {
        z.im.abs()
    };
    if dist <= TOL_POLE * lambda_tail.max(1.0) {
        return Err(Error::SpectralPole { z, pole: lambda_tail, tol: TOL_POLE });
    }
    let mut out = CellFunction::zeros(f.grid().clone());
    let mut captured = 0.0;
    for j in 0..n - 1 {
        let lambda = band.eigenvalues[j];
        let den = Complex64::new(lambda, 0.0) - z;
        if den.norm() <= TOL_POLE * lambda.max(1.0) {
            return Err(Error::SpectralPole { z, pole: lambda, tol: TOL_POLE });
        }
        let c = f.inner(&band.eigenfunctions[j]);
        out.axpy(c / den, &band.eigenfunctions[j]);
        captured += c.norm_sqr();
    }
    let tail = (f.norm().powi(2) - captured).max(0.0).sqrt() / dist;
    Ok((out, tail))
}

/// One-pole effective resolvent (ε⁻² a_hom(χ) − z)⁻¹ Θ_χ f. Rank one:
/// data orthogonal to the Θ direction is annihilated.
pub fn first_order_resolvent(
    grid: &Arc<CellGrid>,
    chi: Quasimomentum,
    eps: f64,
    z: Complex64,
    f: &CellFunction,
) -> Result<CellFunction> {
    let theta = theta_projection(grid, chi)?;
    let pole = a_hom_closed_form(grid.medium(), chi)? / (eps * eps);
    let den = Complex64::new(pole, 0.0) - z;
    if den.norm() <= EFFECTIVE_POLE_TOL * (1.0 + pole + z.norm()) {
        return Err(Error::SpectralPole { z, pole, tol: EFFECTIVE_POLE_TOL });
    }
    let mut out = theta.direction().clone();
    out.scale(theta.coefficient(f) / den);
    Ok(out)
}

/// Scalar symbol of the two-pole model on the Θ direction: embed the
/// coefficient as (x, 0)ᵀ, apply (ε⁻²B − z/2)⁻¹, read the first
/// component. B has eigenvalues ζ±/2, so the poles sit at z = ε⁻²ζ±
/// and the entry equals Σ± 2(v±)₁²/(ε⁻²ζ± − z).
pub(crate) fn second_order_scalar(
    fib: &EffectiveFibre,
    eps: f64,
    z: Complex64,
) -> Result<Complex64> {
    let (p_minus, p_plus) = fib.poles(eps);
    for pole in [p_minus, p_plus] {
        let d = Complex64::new(pole, 0.0) - z;
        if d.norm() <= EFFECTIVE_POLE_TOL * (1.0 + pole + z.norm()) {
            return Err(Error::SpectralPole { z, pole, tol: EFFECTIVE_POLE_TOL });
        }
    }
    let ie2 = 1.0 / (eps * eps);
    let half_z = 0.5 * z;
    let m = Mat2([
        [
            Complex64::new(ie2 * fib.matrix[0][0], 0.0) - half_z,
            Complex64::new(ie2 * fib.matrix[0][1], 0.0),
        ],
        [
            Complex64::new(ie2 * fib.matrix[1][0], 0.0),
            Complex64::new(ie2 * fib.matrix[1][1], 0.0) - half_z,
        ],
    ]);
    let inv = m.try_inverse(z, SINGULAR_REL_TOL)?;
    Ok(inv.0[0][0])
}

/// Two-pole effective resolvent on the Θ direction.
pub fn second_order_resolvent(
    grid: &Arc<CellGrid>,
    chi: Quasimomentum,
    eps: f64,
    z: Complex64,
    f: &CellFunction,
) -> Result<CellFunction> {
    let theta = theta_projection(grid, chi)?;
    let medium = grid.medium();
    let fib = second_order_matrix(a_hom_closed_form(medium, chi)?, a_hat0(medium, chi)?);
    let scalar = second_order_scalar(&fib, eps, z)?;
    let mut out = theta.direction().clone();
    out.scale(theta.coefficient(f) * scalar);
    Ok(out)
}

// ---------------------------------------------------------------------------
// Dense kernels
// ---------------------------------------------------------------------------

/// Dense realization k(x_i, x_j) of an integral operator on the cell,
/// contracted against grid functions through the quadrature weights.
#[derive(Clone)]
pub struct CellKernel {
    grid: Arc<CellGrid>,
    matrix: Array2<Complex64>,
}

impl CellKernel {
    pub fn zeros(grid: Arc<CellGrid>) -> Self {
        let n = grid.len();
        CellKernel { grid, matrix: Array2::from_elem((n, n), ZERO) }
    }

    /// coeff · left(x) conj(right(s)).
    pub fn rank_one(left: &CellFunction, right: &CellFunction, coeff: Complex64) -> Self {
        let grid = left.grid().clone();
        let n = grid.len();
        let mut matrix = Array2::from_elem((n, n), ZERO);
        for (i, li) in left.values().iter().enumerate() {
            let row = coeff * li;
            for (j, rj) in right.values().iter().enumerate() {
                matrix[[i, j]] = row * rj.conj();
            }
        }
        CellKernel { grid, matrix }
    }

    pub fn grid(&self) -> &Arc<CellGrid> {
        &self.grid
    }

    pub fn matrix(&self) -> &Array2<Complex64> {
        &self.matrix
    }

    /// self ← self + c · other.
    pub fn add_scaled(&mut self, c: Complex64, other: &CellKernel) {
        debug_assert_eq!(self.matrix.dim(), other.matrix.dim());
        for (v, w) in self.matrix.iter_mut().zip(other.matrix.iter()) {
            *v += c * w;
        }
    }

    pub fn scale(&mut self, c: Complex64) {
        for v in self.matrix.iter_mut() {
            *v *= c;
        }
    }

    /// Quadrature contraction (K f)(x_i) = Σ_j k(x_i, x_j) w_j f(x_j).
    pub fn apply(&self, f: &CellFunction) -> CellFunction {
        let wf: Vec<Complex64> = f
            .values()
            .iter()
            .zip(self.grid.weights())
            .map(|(v, &w)| v * w)
            .collect();
        let values: Vec<Complex64> = self
            .matrix
            .outer_iter()
            .map(|row| row.iter().zip(&wf).map(|(k, q)| k * q).sum())
            .collect();
        CellFunction::from_values(self.grid.clone(), values).expect("kernel grid mismatch")
    }

    /// Spectral norm with respect to the quadrature inner product: the
    /// largest singular value of D^{1/2} K D^{1/2}, D = diag(weights).
    /// The dense SVD value is authoritative; [`CellKernel::power_norm`]
    /// provides the independent cross-check.
    pub fn operator_norm(&self) -> Result<f64> {
        svd_top(&self.weighted())
    }

    /// Largest singular value by power iteration on K*K from several
    /// seeded random starts. Errors with NonConvergence when no start
    /// settles within the iteration budget; callers then fall back to
    /// the dense SVD value.
    pub fn power_norm(&self, starts: usize, rel_tol: f64, max_iter: usize) -> Result<f64> {
        power_top(&self.weighted(), starts, rel_tol, max_iter)
    }

    fn weighted(&self) -> Array2<Complex64> {
        let sw: Vec<f64> = self.grid.weights().iter().map(|w| w.sqrt()).collect();
        let mut b = self.matrix.clone();
        for (i, mut row) in b.outer_iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v *= sw[i] * sw[j];
            }
        }
        b
    }
}

/// ‖A − B‖ in the quadrature L² norm on the shared grid.
pub fn operator_norm_diff(a: &CellKernel, b: &CellKernel) -> Result<f64> {
    if a.grid.len() != b.grid.len() {
        return Err(Error::invalid(
            "operator-norm comparison needs both kernels on the same grid",
        ));
    }
    let mut diff = a.clone();
    diff.add_scaled(-ONE, b);
    diff.operator_norm()
}

/// Kernel of the Dirichlet resolvent (A⁰ − z)⁻¹: the block Green
/// function e^{−iχ(x−s)} sl(x∧s) sr(x∨s)/dk on each edge, zero across
/// edges.
pub fn dirichlet_kernel(
    grid: &Arc<CellGrid>,
    chi: Quasimomentum,
    z: Complex64,
) -> Result<CellKernel> {
    let medium = *grid.medium();
    pole_guard(&medium, z, TOL_POLE)?;
    let x = chi.angle();
    let mut k = CellKernel::zeros(grid.clone());
    for phase in [Phase::Minus, Phase::Plus] {
        let idx: Vec<usize> = grid.block_range(phase).collect();
        let (alpha, beta, a) = grid.block_edge(phase);
        let nodes: Vec<f64> = idx.iter().map(|&i| grid.nodes()[i]).collect();
        let basis = edge_basis(&nodes, alpha, beta, a, z)?;
        let phases: Vec<Complex64> = nodes
            .iter()
            .map(|&y| Complex64::from_polar(1.0, -x * y))
            .collect();
        let inv_dk = ONE / basis.dk;
        for (il, &i) in idx.iter().enumerate() {
            for (jl, &j) in idx.iter().enumerate() {
                let (lo, hi) = if il <= jl { (il, jl) } else { (jl, il) };
                k.matrix[[i, j]] =
                    phases[il] * phases[jl].conj() * basis.sl[lo] * basis.sr[hi] * inv_dk;
            }
        }
    }
    Ok(k)
}

/// Kernel of the exact fibre resolvent: Dirichlet Green function minus
/// the rank-two correction S(z) M(z)⁻¹ S(z̄)*.
pub fn krein_kernel(
    grid: &Arc<CellGrid>,
    chi: Quasimomentum,
    z: Complex64,
) -> Result<CellKernel> {
    let medium = *grid.medium();
    let mut k = dirichlet_kernel(grid, chi, z)?;
    let minv = m_matrix(&medium, chi, z)?
        .matrix
        .try_inverse(z, SINGULAR_REL_TOL)?;
    let s = [
        solution_operator(grid, chi, z, [ONE, ZERO])?,
        solution_operator(grid, chi, z, [ZERO, ONE])?,
    ];
    let sb = [
        solution_operator(grid, chi, z.conj(), [ONE, ZERO])?,
        solution_operator(grid, chi, z.conj(), [ZERO, ONE])?,
    ];
    let n = grid.len();
    for col in 0..2 {
        let left: Vec<Complex64> = (0..n)
            .map(|i| s[0].values()[i] * minv.0[0][col] + s[1].values()[i] * minv.0[1][col])
            .collect();
        for (i, li) in left.iter().enumerate() {
            for (j, r) in sb[col].values().iter().enumerate() {
                k.matrix[[i, j]] -= li * r.conj();
            }
        }
    }
    Ok(k)
}

/// (ε⁻² A_χ − z)⁻¹ = ε² (A_χ − ε²z)⁻¹: the exact resolvent at the
/// homogenisation scaling.
pub fn exact_scaled_kernel(
    grid: &Arc<CellGrid>,
    chi: Quasimomentum,
    eps: f64,
    z: Complex64,
) -> Result<CellKernel> {
    let e2 = eps * eps;
    let mut k = krein_kernel(grid, chi, z * e2)?;
    k.scale(Complex64::new(e2, 0.0));
    Ok(k)
}

/// Rank-one kernel of the one-pole model (ε⁻² a_hom − z)⁻¹ Θ_χ.
pub fn first_order_kernel(
    grid: &Arc<CellGrid>,
    chi: Quasimomentum,
    eps: f64,
    z: Complex64,
) -> Result<CellKernel> {
    let theta = theta_projection(grid, chi)?;
    let pole = a_hom_closed_form(grid.medium(), chi)? / (eps * eps);
    let den = Complex64::new(pole, 0.0) - z;
    if den.norm() <= EFFECTIVE_POLE_TOL * (1.0 + pole + z.norm()) {
        return Err(Error::SpectralPole { z, pole, tol: EFFECTIVE_POLE_TOL });
    }
    let coeff = ONE / den / theta.mass();
    Ok(CellKernel::rank_one(theta.direction(), theta.direction(), coeff))
}

/// Rank-one kernel of the two-pole model on the Θ direction.
pub fn second_order_kernel(
    grid: &Arc<CellGrid>,
    chi: Quasimomentum,
    eps: f64,
    z: Complex64,
) -> Result<CellKernel> {
    let theta = theta_projection(grid, chi)?;
    let medium = grid.medium();
    let fib = second_order_matrix(a_hom_closed_form(medium, chi)?, a_hat0(medium, chi)?);
    let scalar = second_order_scalar(&fib, eps, z)?;
    Ok(CellKernel::rank_one(
        theta.direction(),
        theta.direction(),
        scalar / theta.mass(),
    ))
}

// ---------------------------------------------------------------------------
// Norm backends
// ---------------------------------------------------------------------------

fn svd_top(b: &Array2<Complex64>) -> Result<f64> {
    let (_, s, _) = b
        .svd(false, false)
        .map_err(|e| Error::invalid(format!("dense SVD failed: {e}")))?;
    Ok(s.iter().fold(0.0_f64, |m, &v| m.max(v)))
}

fn matvec(b: &Array2<Complex64>, v: &[Complex64]) -> Vec<Complex64> {
    b.outer_iter()
        .map(|row| row.iter().zip(v).map(|(k, x)| k * x).sum())
        .collect()
}

fn matvec_adj(b: &Array2<Complex64>, u: &[Complex64]) -> Vec<Complex64> {
    let mut out = vec![ZERO; b.ncols()];
    for (i, row) in b.outer_iter().enumerate() {
        let ui = u[i];
        for (j, k) in row.iter().enumerate() {
            out[j] += k.conj() * ui;
        }
    }
    out
}

fn vec_norm(v: &[Complex64]) -> f64 {
    v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

fn power_top(
    b: &Array2<Complex64>,
    starts: usize,
    rel_tol: f64,
    max_iter: usize,
) -> Result<f64> {
    let n = b.nrows();
    if n == 0 {
        return Ok(0.0);
    }
    let mut best: Option<f64> = None;
    let mut worst_residual = f64::INFINITY;
    for start in 0..starts {
        let mut rng = ChaCha20Rng::seed_from_u64(0x7031_u64 + start as u64);
        let mut v: Vec<Complex64> = (0..n)
            .map(|_| Complex64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5))
            .collect();
        let nv = vec_norm(&v);
        for x in &mut v {
            *x /= nv;
        }
        let mut sigma_prev = -1.0;
        let mut converged = None;
        for _ in 0..max_iter {
            let u = matvec(b, &v);
            let sigma = vec_norm(&u);
            if sigma == 0.0 {
                converged = Some(0.0);
                break;
            }
            let delta = (sigma - sigma_prev).abs();
            if delta <= rel_tol * sigma {
                converged = Some(sigma);
                break;
            }
            worst_residual = worst_residual.min(delta / sigma);
            sigma_prev = sigma;
            let mut w = matvec_adj(b, &u);
            let wn = vec_norm(&w);
            if wn == 0.0 {
                converged = Some(0.0);
                break;
            }
            for x in &mut w {
                *x /= wn;
            }
            v = w;
        }
        if let Some(sig) = converged {
            best = Some(best.map_or(sig, |acc| acc.max(sig)));
        }
    }
    best.ok_or(Error::NonConvergence { iters: max_iter, residual: worst_residual })
}
