//! Boundary maps on the two-edge cell.
//!
//! The cell [0,1] with stiffness jump at l is treated as a two-edge graph
//! with vertices {0≡1} and {l}. For each quasimomentum χ the maximal
//! operator −(d/dy+iχ) a (d/dy+iχ) carries two boundary maps into ℂ²: the
//! vertex values Γ₀u = (u₋(0), u₊(l)) and the flux imbalances
//! Γ₁u = (a₋(∂+iχ)u₋(0) − a₊(∂+iχ)u₊(1), a₊(∂+iχ)u₊(l) − a₋(∂+iχ)u₋(l)).
//!
//! Everything the rest of the crate needs is generated by four objects:
//!
//! * the decoupled resolvent (A⁰ − z)⁻¹ with Γ₀ = 0 on both edges,
//! * the lift Π mapping φ ∈ ℂ² to the solution of Ãu = 0, Γ₀u = φ,
//! * the Weyl matrix M(z) = Γ₁ S(z), a 2×2 matrix-valued Herglotz
//!   function with M(0) = Λ,
//! * the solution operator S(z) of Ãu = zu, Γ₀u = φ, equal to
//!   (I − z(A⁰)⁻¹)⁻¹Π.
//!
//! All four reduce, in the gauge v = e^{iχy}u, to constant-coefficient
//! two-point problems with explicit sine/cosine solutions, so the only
//! numerics left are quadratures and scalar special functions. The two
//! scalar kernels are θcotθ and θ/sinθ, implemented as functions of
//! w = θ² (they are even in θ, which also settles the branch of √z), with
//! power series takeover near w = 0 where the naive forms lose digits.

use crate::error::{Error, Result};
use crate::grid::{CellFunction, CellGrid, Phase};
use crate::medium::{require_coupling, Medium, Quasimomentum};
use num_complex::Complex64;
use std::sync::Arc;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// Relative distance to a Dirichlet eigenvalue below which z is treated
/// as a spectral pole.
pub const TOL_POLE: f64 = 1e-8;

// ---------------------------------------------------------------------------
// 2×2 complex matrices
// ---------------------------------------------------------------------------

/// Dense 2×2 complex matrix, row-major.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mat2(pub [[Complex64; 2]; 2]);

impl Mat2 {
    pub fn zero() -> Self {
        Mat2([[ZERO; 2]; 2])
    }

    pub fn identity() -> Self {
        Mat2([[ONE, ZERO], [ZERO, ONE]])
    }

    pub fn mul(&self, other: &Mat2) -> Mat2 {
        let mut out = Mat2::zero();
        for i in 0..2 {
            for j in 0..2 {
                out.0[i][j] = self.0[i][0] * other.0[0][j] + self.0[i][1] * other.0[1][j];
            }
        }
        out
    }

    pub fn apply(&self, v: [Complex64; 2]) -> [Complex64; 2] {
        [
            self.0[0][0] * v[0] + self.0[0][1] * v[1],
            self.0[1][0] * v[0] + self.0[1][1] * v[1],
        ]
    }

    pub fn add(&self, other: &Mat2) -> Mat2 {
        let mut out = *self;
        for i in 0..2 {
            for j in 0..2 {
                out.0[i][j] += other.0[i][j];
            }
        }
        out
    }

    pub fn sub(&self, other: &Mat2) -> Mat2 {
        let mut out = *self;
        for i in 0..2 {
            for j in 0..2 {
                out.0[i][j] -= other.0[i][j];
            }
        }
        out
    }

    pub fn scale(&self, c: Complex64) -> Mat2 {
        let mut out = *self;
        for i in 0..2 {
            for j in 0..2 {
                out.0[i][j] *= c;
            }
        }
        out
    }

    pub fn adjoint(&self) -> Mat2 {
        Mat2([
            [self.0[0][0].conj(), self.0[1][0].conj()],
            [self.0[0][1].conj(), self.0[1][1].conj()],
        ])
    }

    pub fn det(&self) -> Complex64 {
        self.0[0][0] * self.0[1][1] - self.0[0][1] * self.0[1][0]
    }

    pub fn trace(&self) -> Complex64 {
        self.0[0][0] + self.0[1][1]
    }

    pub fn frobenius(&self) -> f64 {
        self.0
            .iter()
            .flatten()
            .map(|c| c.norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    /// Spectral norm from the closed-form singular values.
    pub fn op_norm(&self) -> f64 {
        let f2 = self
            .0
            .iter()
            .flatten()
            .map(|c| c.norm_sqr())
            .sum::<f64>();
        let d = self.det().norm();
        let disc = (f2 * f2 - 4.0 * d * d).max(0.0).sqrt();
        (0.5 * (f2 + disc)).sqrt()
    }

    /// ‖M − M*‖_F, zero exactly when the matrix is Hermitian.
    pub fn hermitian_defect(&self) -> f64 {
        self.sub(&self.adjoint()).frobenius()
    }

    /// Inverse, guarded against near-singularity at the given spectral
    /// parameter (recorded in the error for diagnostics).
    pub fn try_inverse(&self, z: Complex64, rel_tol: f64) -> Result<Mat2> {
        let det = self.det();
        let scale = self.frobenius();
        if det.norm() <= rel_tol * scale * scale {
            return Err(Error::SingularM { z, det, tol: rel_tol });
        }
        let inv_det = ONE / det;
        Ok(Mat2([
            [self.0[1][1] * inv_det, -self.0[0][1] * inv_det],
            [-self.0[1][0] * inv_det, self.0[0][0] * inv_det],
        ]))
    }
}

/// ℂ² inner product, linear in the first argument.
pub fn dot2(f: [Complex64; 2], g: [Complex64; 2]) -> Complex64 {
    f[0] * g[0].conj() + f[1] * g[1].conj()
}

pub fn norm2(f: [Complex64; 2]) -> f64 {
    (f[0].norm_sqr() + f[1].norm_sqr()).sqrt()
}

// ---------------------------------------------------------------------------
// The vertex matrix Λ and its eigenpairs
// ---------------------------------------------------------------------------

/// Λ(χ) = [[−D, conj ξ], [ξ, −D]], the z = 0 value of the Weyl matrix.
pub fn lambda_matrix(medium: &Medium, chi: Quasimomentum) -> Mat2 {
    let d = medium.vertex_sum_d();
    let xi = medium.coupling_xi(chi);
    Mat2([
        [Complex64::new(-d, 0.0), xi.conj()],
        [xi, Complex64::new(-d, 0.0)],
    ])
}

/// Eigenpairs of Λ(χ). The top branch μ∥ = −D + |ξ| vanishes only at
/// χ = 0 and controls the bottom of the first Bloch band.
#[derive(Debug, Clone, Copy)]
pub struct LambdaEigen {
    pub mu_parallel: f64,
    pub mu_perp: f64,
    pub psi_parallel: [Complex64; 2],
    pub psi_perp: [Complex64; 2],
    /// The unimodular factor ξ/|ξ| entering both eigenvectors.
    pub phase: Complex64,
}

pub fn lambda_eigen(medium: &Medium, chi: Quasimomentum) -> Result<LambdaEigen> {
    let xi = require_coupling(
        medium,
        chi,
        crate::medium::COUPLING_REL_FLOOR * medium.vertex_sum_d(),
    )?;
    let phase = xi / xi.norm();
    let d = medium.vertex_sum_d();
    let inv_sqrt2 = std::f64::consts::FRAC_1_SQRT_2;
    Ok(LambdaEigen {
        // computed as −(D − |ξ|) through the cancellation-free deficit
        mu_parallel: -medium.coupling_deficit(chi),
        mu_perp: -(d + xi.norm()),
        psi_parallel: [Complex64::new(inv_sqrt2, 0.0), phase * inv_sqrt2],
        psi_perp: [Complex64::new(inv_sqrt2, 0.0), -phase * inv_sqrt2],
        phase,
    })
}

// ---------------------------------------------------------------------------
// Dirichlet spectrum of the decoupled operator
// ---------------------------------------------------------------------------

/// One Dirichlet eigenvalue of the decoupled cell, tagged by its edge.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DirichletMode {
    pub eigenvalue: f64,
    pub phase: Phase,
    /// 1-based sine index on its edge.
    pub index: usize,
}

fn edge_eigenvalue(a: f64, len: f64, m: usize) -> f64 {
    let s = m as f64 * std::f64::consts::PI / len;
    a * s * s
}

/// The lowest `count` Dirichlet eigenvalues of A⁰, merged over both edges,
/// ascending. Independent of χ: the gauge removes the quasimomentum from
/// the decoupled problems.
pub fn dirichlet_modes(medium: &Medium, count: usize) -> Vec<DirichletMode> {
    let mut out = Vec::with_capacity(count);
    let (mut m_minus, mut m_plus) = (1usize, 1usize);
    let l = medium.interface();
    while out.len() < count {
        let next_minus = edge_eigenvalue(medium.a_minus(), l, m_minus);
        let next_plus = edge_eigenvalue(medium.a_plus(), 1.0 - l, m_plus);
        if next_minus <= next_plus {
            out.push(DirichletMode { eigenvalue: next_minus, phase: Phase::Minus, index: m_minus });
            m_minus += 1;
        } else {
            out.push(DirichletMode { eigenvalue: next_plus, phase: Phase::Plus, index: m_plus });
            m_plus += 1;
        }
    }
    out
}

/// Just the eigenvalues of [`dirichlet_modes`].
pub fn dirichlet_spectrum(medium: &Medium, count: usize) -> Vec<f64> {
    dirichlet_modes(medium, count).iter().map(|m| m.eigenvalue).collect()
}

/// Nearest Dirichlet eigenvalue to z and the distance |z − λ|.
pub fn nearest_dirichlet_pole(medium: &Medium, z: Complex64) -> (f64, f64) {
    let mut best = (0.0f64, f64::INFINITY);
    let l = medium.interface();
    for (a, len) in [(medium.a_minus(), l), (medium.a_plus(), 1.0 - l)] {
        // candidates bracket the index where a(mπ/len)² crosses |z|
        let m_star = len * z.norm().sqrt() / (std::f64::consts::PI * a.sqrt());
        for m in [m_star.floor() as i64, m_star.ceil() as i64, 1] {
            let m = m.max(1) as usize;
            let lam = edge_eigenvalue(a, len, m);
            let dist = (z - Complex64::new(lam, 0.0)).norm();
            if dist < best.1 {
                best = (lam, dist);
            }
        }
    }
    best
}

pub(crate) fn pole_guard(medium: &Medium, z: Complex64, tol: f64) -> Result<()> {
    let (pole, dist) = nearest_dirichlet_pole(medium, z);
    if dist <= tol * pole.max(1.0) {
        return Err(Error::SpectralPole { z, pole, tol });
    }
    Ok(())
}

/// Normalized Dirichlet eigenfunction of A⁰ sampled on the grid:
/// e^{−iχy}√(2/L) sin(mπ(y−α)/L) on its edge, zero on the other one.
pub fn dirichlet_mode_function(
    grid: &Arc<CellGrid>,
    chi: Quasimomentum,
    mode: &DirichletMode,
) -> CellFunction {
    let (alpha, beta, _) = grid.block_edge(mode.phase);
    let len = beta - alpha;
    let amp = (2.0 / len).sqrt();
    let freq = mode.index as f64 * std::f64::consts::PI / len;
    let x = chi.angle();
    let mut f = CellFunction::zeros(grid.clone());
    for i in grid.block_range(mode.phase) {
        let y = grid.nodes()[i];
        f.values_mut()[i] =
            Complex64::from_polar(amp * (freq * (y - alpha)).sin(), -x * y);
    }
    // gauge derivative e^{−iχy}(v' − iχv); v vanishes at the edge ends
    let dv_alpha = amp * freq;
    let dv_beta = amp * freq * if mode.index % 2 == 0 { 1.0 } else { -1.0 };
    let mut deriv = [ZERO; 4];
    let (i_a, i_b) = match mode.phase {
        Phase::Minus => (0, 1),
        Phase::Plus => (2, 3),
    };
    deriv[i_a] = Complex64::from_polar(dv_alpha, -x * alpha);
    deriv[i_b] = Complex64::from_polar(1.0, -x * beta) * dv_beta;
    f.with_deriv_traces(deriv)
}

// ---------------------------------------------------------------------------
// Scalar kernels as functions of w = θ²
// ---------------------------------------------------------------------------

/// Power series of 1 − θcotθ in w = θ², m = 1..8.
const COT_DEFICIT_SERIES: [f64; 8] = [
    1.0 / 3.0,
    1.0 / 45.0,
    2.0 / 945.0,
    1.0 / 4725.0,
    2.0 / 93555.0,
    1382.0 / 638512875.0,
    4.0 / 18243225.0,
    3617.0 / 162820783125.0,
];

/// Power series of θ/sinθ − 1 in w = θ², m = 1..8.
const CSC_EXCESS_SERIES: [f64; 8] = [
    1.0 / 6.0,
    7.0 / 360.0,
    31.0 / 15120.0,
    127.0 / 604800.0,
    73.0 / 3421440.0,
    1414477.0 / 653837184000.0,
    8191.0 / 37362124800.0,
    118518239.0 / 5335311421440000.0,
];

const SERIES_W_THRESHOLD: f64 = 0.05;
const IM_THETA_MAX: f64 = 600.0;

fn series_sum(coeff: &[f64], w: Complex64) -> Complex64 {
    let mut acc = ZERO;
    for &c in coeff.iter().rev() {
        acc = (acc + c) * w;
    }
    acc
}

fn theta_from(w: Complex64) -> Result<Complex64> {
    let theta = w.sqrt();
    if theta.im.abs() > IM_THETA_MAX {
        return Err(Error::invalid(format!(
            "spectral parameter too deep in the complex plane: |Im θ| = {}",
            theta.im.abs()
        )));
    }
    Ok(theta)
}

/// 1 − θcotθ evaluated at w = θ². Series for small |w| keeps full
/// relative accuracy where the direct form cancels.
fn theta_cot_deficit(w: Complex64) -> Result<Complex64> {
    if w.norm() <= SERIES_W_THRESHOLD {
        return Ok(series_sum(&COT_DEFICIT_SERIES, w));
    }
    let theta = theta_from(w)?;
    Ok(ONE - theta * theta.cos() / theta.sin())
}

/// θ/sinθ − 1 evaluated at w = θ².
fn theta_csc_excess(w: Complex64) -> Result<Complex64> {
    if w.norm() <= SERIES_W_THRESHOLD {
        return Ok(series_sum(&CSC_EXCESS_SERIES, w));
    }
    let theta = theta_from(w)?;
    Ok(theta / theta.sin() - ONE)
}

// ---------------------------------------------------------------------------
// The Weyl matrix
// ---------------------------------------------------------------------------

/// Weyl matrix value together with the spectral parameter it was taken at.
#[derive(Debug, Clone, Copy)]
pub struct MMatrix {
    pub matrix: Mat2,
    pub z: Complex64,
}

/// Deviation of the Weyl matrix from its z = 0 value, entry by entry:
/// M₁₁ = −D + m11, M₁₂ = conj(ξ) + m12, M₂₁ = ξ + m21, M₂₂ = M₁₁.
///
/// The deviations vanish linearly at z = 0; keeping them separate lets
/// dispersion computations at small z avoid the D − |ξ| cancellation.
#[derive(Debug, Clone, Copy)]
pub struct MDeviation {
    pub m11: Complex64,
    pub m12: Complex64,
    pub m21: Complex64,
}

pub fn m_deviation(medium: &Medium, chi: Quasimomentum, z: Complex64) -> Result<MDeviation> {
    pole_guard(medium, z, TOL_POLE)?;
    let x = chi.angle();
    let l = medium.interface();
    let edges = [
        (medium.a_minus(), l, Complex64::from_polar(1.0, x * l)),
        (medium.a_plus(), 1.0 - l, Complex64::from_polar(1.0, -x * (1.0 - l))),
    ];
    let (mut m11, mut m12, mut m21) = (ZERO, ZERO, ZERO);
    for (a, len, phase) in edges {
        let weight = a / len;
        let w = z * len * len / a;
        let deficit = theta_cot_deficit(w)?;
        let excess = theta_csc_excess(w)?;
        m11 += weight * deficit;
        m12 += phase * weight * excess;
        m21 += phase.conj() * weight * excess;
    }
    Ok(MDeviation { m11, m12, m21 })
}

/// M(z, χ) in closed form. Both diagonal entries coincide; at z = 0 the
/// value is exactly Λ(χ). Entries are even functions of √z, so the branch
/// of the square root never matters.
pub fn m_matrix(medium: &Medium, chi: Quasimomentum, z: Complex64) -> Result<MMatrix> {
    let dev = m_deviation(medium, chi, z)?;
    let d = medium.vertex_sum_d();
    let xi = medium.coupling_xi(chi);
    let m11 = Complex64::new(-d, 0.0) + dev.m11;
    Ok(MMatrix {
        matrix: Mat2([[m11, xi.conj() + dev.m12], [xi + dev.m21, m11]]),
        z,
    })
}

/// Radius of the power series of M around z = 0: the first Dirichlet
/// eigenvalue.
pub fn m_series_radius(medium: &Medium) -> f64 {
    dirichlet_spectrum(medium, 1)[0]
}

/// Closed form of the j-th series coefficient of M(z) − Λ (the matrix
/// multiplying z^{j+1}). Tabulated through j = 6.
pub fn series_coefficient(medium: &Medium, chi: Quasimomentum, j: usize) -> Result<Mat2> {
    if j >= 7 {
        return Err(Error::invalid(format!(
            "closed-form series coefficients are tabulated through j = 6, got {j}"
        )));
    }
    let c = COT_DEFICIT_SERIES[j];
    let d = CSC_EXCESS_SERIES[j];
    let x = chi.angle();
    let l = medium.interface();
    let p = 2 * j as i32 + 1;
    let weight_minus = l.powi(p) / medium.a_minus().powi(j as i32);
    let weight_plus = (1.0 - l).powi(p) / medium.a_plus().powi(j as i32);
    let phase_minus = Complex64::from_polar(1.0, x * l);
    let phase_plus = Complex64::from_polar(1.0, -x * (1.0 - l));
    let c11 = Complex64::new(c * (weight_minus + weight_plus), 0.0);
    let c12 = d * (phase_minus * weight_minus + phase_plus * weight_plus);
    let c21 = d * (phase_minus.conj() * weight_minus + phase_plus.conj() * weight_plus);
    Ok(Mat2([[c11, c12], [c21, c11]]))
}

/// The same coefficient computed by quadrature: Gram-type inner products
/// of the lifted basis vectors against j-fold applications of (A⁰)⁻¹.
pub fn series_coefficient_quadrature(
    grid: &Arc<CellGrid>,
    chi: Quasimomentum,
    j: usize,
) -> Result<Mat2> {
    let pi1 = lift(grid, chi, [ONE, ZERO]);
    let pi2 = lift(grid, chi, [ZERO, ONE]);
    let mut g1 = pi1.clone();
    let mut g2 = pi2.clone();
    for _ in 0..j {
        g1 = dirichlet_resolvent(chi, ZERO, &g1)?;
        g2 = dirichlet_resolvent(chi, ZERO, &g2)?;
    }
    Ok(Mat2([
        [g1.inner(&pi1), g2.inner(&pi1)],
        [g1.inner(&pi2), g2.inner(&pi2)],
    ]))
}

/// Truncated power series of M(z): Λ + Σ_{j=0..n} z^{j+1} C_j with the
/// coefficients from [`series_coefficient_quadrature`]. Valid for |z|
/// strictly inside the series radius.
pub fn m_series_truncation(
    grid: &Arc<CellGrid>,
    chi: Quasimomentum,
    z: Complex64,
    n: usize,
) -> Result<MMatrix> {
    let medium = *grid.medium();
    let radius = m_series_radius(&medium);
    if z.norm() >= radius {
        return Err(Error::SeriesDivergence { z_abs: z.norm(), radius });
    }
    let mut acc = lambda_matrix(&medium, chi);
    let mut zp = z;
    for j in 0..=n {
        let cj = series_coefficient_quadrature(grid, chi, j)?;
        acc = acc.add(&cj.scale(zp));
        zp *= z;
    }
    Ok(MMatrix { matrix: acc, z })
}

/// Upper bound for the norm of the series remainder after the z^{n+1}
/// term: |z|^{n+2} ‖Π‖² / (λ₁^{n+1} (1 − |z|/λ₁)).
pub fn m_series_tail_bound(medium: &Medium, z_abs: f64, n: usize) -> Result<f64> {
    let radius = m_series_radius(medium);
    if z_abs >= radius {
        return Err(Error::SeriesDivergence { z_abs, radius });
    }
    // ‖Π‖² = largest eigenvalue of the Gram matrix Π*Π (equal diagonal)
    let gram = series_coefficient(medium, Quasimomentum::new(0.0)?, 0)?;
    let pi_norm_sq = gram.0[0][0].re + gram.0[0][1].norm();
    Ok(z_abs.powi(n as i32 + 2) * pi_norm_sq
        / (radius.powi(n as i32 + 1) * (1.0 - z_abs / radius)))
}

// ---------------------------------------------------------------------------
// Lift and traces
// ---------------------------------------------------------------------------

/// Harmonic lift Π(χ)φ: the unique u with Ãu = 0 and Γ₀u = φ. In the
/// gauge v = e^{iχy}u it is piecewise linear through the vertex values
/// v(0) = φ₁, v(l) = e^{iχl}φ₂, v(1) = e^{iχ}φ₁.
pub fn lift(grid: &Arc<CellGrid>, chi: Quasimomentum, phi: [Complex64; 2]) -> CellFunction {
    let x = chi.angle();
    let l = grid.medium().interface();
    let v0 = phi[0];
    let vl = Complex64::from_polar(1.0, x * l) * phi[1];
    let v1 = Complex64::from_polar(1.0, x) * phi[0];
    let dv_minus = (vl - v0) / l;
    let dv_plus = (v1 - vl) / (1.0 - l);
    let mut f = CellFunction::zeros(grid.clone());
    for i in 0..grid.len() {
        let y = grid.nodes()[i];
        let v = match grid.phase_of(i) {
            Phase::Minus => v0 + dv_minus * y,
            Phase::Plus => vl + dv_plus * (y - l),
        };
        f.values_mut()[i] = Complex64::from_polar(1.0, -x * y) * v;
    }
    let i_x = Complex64::new(0.0, x);
    let e_l = Complex64::from_polar(1.0, -x * l);
    let e_1 = Complex64::from_polar(1.0, -x);
    f.with_deriv_traces([
        dv_minus - i_x * v0,
        e_l * (dv_minus - i_x * vl),
        e_l * (dv_plus - i_x * vl),
        e_1 * (dv_plus - i_x * v1),
    ])
}

/// Vertex values Γ₀u = (u₋(0), u₊(l)).
pub fn dirichlet_trace(u: &CellFunction) -> [Complex64; 2] {
    [
        u.value_trace(crate::grid::TRACE_ORIGIN),
        u.value_trace(crate::grid::TRACE_INTERFACE_PLUS),
    ]
}

/// Flux imbalances at the two vertices:
/// Γ₁u = (a₋(∂+iχ)u₋(0) − a₊(∂+iχ)u₊(1), a₊(∂+iχ)u₊(l) − a₋(∂+iχ)u₋(l)).
pub fn neumann_trace(chi: Quasimomentum, u: &CellFunction) -> [Complex64; 2] {
    let medium = u.grid().medium();
    let i_x = Complex64::new(0.0, chi.angle());
    let g = |i: usize| u.deriv_trace(i) + i_x * u.value_trace(i);
    let flux_0 = medium.a_minus() * g(crate::grid::TRACE_ORIGIN);
    let flux_lm = medium.a_minus() * g(crate::grid::TRACE_INTERFACE_MINUS);
    let flux_lp = medium.a_plus() * g(crate::grid::TRACE_INTERFACE_PLUS);
    let flux_1 = medium.a_plus() * g(crate::grid::TRACE_END);
    [flux_0 - flux_1, flux_lp - flux_lm]
}

// ---------------------------------------------------------------------------
// Decoupled resolvent
// ---------------------------------------------------------------------------

/// Prefix integrals p[j] = ∫_{x₀}^{x_j} f on a uniform block: cumulative
/// Simpson for even prefixes, one 3/8 panel to absorb odd parity. Exact
/// for piecewise cubics whose kinks sit on panel edges; O(h⁴) otherwise.
fn prefix_integrals(f: &[Complex64], h: f64) -> Vec<Complex64> {
    let n = f.len() - 1;
    let mut p = vec![ZERO; n + 1];
    for k in (2..=n).step_by(2) {
        p[k] = p[k - 2] + h / 3.0 * (f[k - 2] + 4.0 * f[k - 1] + f[k]);
    }
    if n >= 1 {
        p[1] = if f.len() >= 4 {
            // cubic through the first four nodes, integrated over [x₀,x₁]
            h / 24.0 * (9.0 * f[0] + 19.0 * f[1] - 5.0 * f[2] + f[3])
        } else if f.len() == 3 {
            h / 12.0 * (5.0 * f[0] + 8.0 * f[1] - f[2])
        } else {
            h / 2.0 * (f[0] + f[1])
        };
    }
    for k in (3..=n).step_by(2) {
        p[k] = p[k - 3] + 3.0 * h / 8.0 * (f[k - 3] + 3.0 * f[k - 2] + 3.0 * f[k - 1] + f[k]);
    }
    p
}

fn suffix_integrals(f: &[Complex64], h: f64) -> Vec<Complex64> {
    let rev: Vec<Complex64> = f.iter().rev().copied().collect();
    let p = prefix_integrals(&rev, h);
    let n = f.len() - 1;
    (0..=n).map(|j| p[n - j]).collect()
}

/// Fundamental pair for one edge: sl(y) vanishing at α, sr(y) vanishing
/// at β, the Green denominator dk, and the endpoint slope factor of sl.
pub(crate) struct EdgeBasis {
    pub(crate) sl: Vec<Complex64>,
    pub(crate) sr: Vec<Complex64>,
    pub(crate) dk: Complex64,
    pub(crate) fac: Complex64,
}

pub(crate) fn edge_basis(
    nodes: &[f64],
    alpha: f64,
    beta: f64,
    a: f64,
    z: Complex64,
) -> Result<EdgeBasis> {
    let len = beta - alpha;
    let w = z * len * len / a;
    if w.norm() < 1e-12 {
        Ok(EdgeBasis {
            sl: nodes.iter().map(|&y| Complex64::new(y - alpha, 0.0)).collect(),
            sr: nodes.iter().map(|&y| Complex64::new(beta - y, 0.0)).collect(),
            dk: Complex64::new(a * len, 0.0),
            fac: ONE,
        })
    } else {
        let kappa = (z / Complex64::new(a, 0.0)).sqrt();
        if (kappa.im * len).abs() > IM_THETA_MAX {
            return Err(Error::invalid(format!(
                "spectral parameter too deep in the complex plane: |Im κL| = {}",
                (kappa.im * len).abs()
            )));
        }
        Ok(EdgeBasis {
            sl: nodes.iter().map(|&y| (kappa * (y - alpha)).sin()).collect(),
            sr: nodes.iter().map(|&y| (kappa * (beta - y)).sin()).collect(),
            dk: a * kappa * (kappa * len).sin(),
            fac: kappa,
        })
    }
}

/// (A⁰ − z)⁻¹ f: independent Dirichlet solves on the two edges by Green
/// quadrature in the gauge, O(n) per edge through prefix/suffix integrals.
pub fn dirichlet_resolvent(
    chi: Quasimomentum,
    z: Complex64,
    f: &CellFunction,
) -> Result<CellFunction> {
    let grid = f.grid().clone();
    let medium = *grid.medium();
    pole_guard(&medium, z, TOL_POLE)?;
    let x = chi.angle();
    let mut values = vec![ZERO; grid.len()];
    let mut deriv = [ZERO; 4];
    for phase in [Phase::Minus, Phase::Plus] {
        let idx: Vec<usize> = grid.block_range(phase).collect();
        let (alpha, beta, a) = grid.block_edge(phase);
        let nb = idx.len() - 1;
        let h = (beta - alpha) / nb as f64;
        let nodes: Vec<f64> = idx.iter().map(|&i| grid.nodes()[i]).collect();
        let basis = edge_basis(&nodes, alpha, beta, a, z)?;
        let p: Vec<Complex64> = idx
            .iter()
            .map(|&i| Complex64::from_polar(1.0, x * grid.nodes()[i]) * f.values()[i])
            .collect();
        let slp: Vec<Complex64> = basis.sl.iter().zip(&p).map(|(s, q)| s * q).collect();
        let srp: Vec<Complex64> = basis.sr.iter().zip(&p).map(|(s, q)| s * q).collect();
        let lpre = prefix_integrals(&slp, h);
        let rsuf = suffix_integrals(&srp, h);
        for (local, &i) in idx.iter().enumerate() {
            let v = (basis.sr[local] * lpre[local] + basis.sl[local] * rsuf[local]) / basis.dk;
            values[i] = Complex64::from_polar(1.0, -x * nodes[local]) * v;
        }
        let vp_alpha = basis.fac * rsuf[0] / basis.dk;
        let vp_beta = -basis.fac * lpre[nb] / basis.dk;
        match phase {
            Phase::Minus => {
                deriv[0] = vp_alpha;
                deriv[1] = Complex64::from_polar(1.0, -x * beta) * vp_beta;
            }
            Phase::Plus => {
                deriv[2] = Complex64::from_polar(1.0, -x * alpha) * vp_alpha;
                deriv[3] = Complex64::from_polar(1.0, -x * beta) * vp_beta;
            }
        }
    }
    Ok(CellFunction::from_values(grid, values)?.with_deriv_traces(deriv))
}

// ---------------------------------------------------------------------------
// Solution operator
// ---------------------------------------------------------------------------

/// S(z)φ by direct two-point solves: in the gauge, each edge carries
/// v = A cos(κ(y−α)) + B sin(κ(y−α)) through the vertex values. Reduces
/// to the lift at z = 0.
pub fn solution_operator(
    grid: &Arc<CellGrid>,
    chi: Quasimomentum,
    z: Complex64,
    phi: [Complex64; 2],
) -> Result<CellFunction> {
    let medium = *grid.medium();
    pole_guard(&medium, z, TOL_POLE)?;
    let x = chi.angle();
    let l = medium.interface();
    let v_vertex = [
        phi[0],
        Complex64::from_polar(1.0, x * l) * phi[1],
        Complex64::from_polar(1.0, x) * phi[0],
    ];
    let mut values = vec![ZERO; grid.len()];
    let mut deriv = [ZERO; 4];
    for phase in [Phase::Minus, Phase::Plus] {
        let (alpha, beta, a) = grid.block_edge(phase);
        let len = beta - alpha;
        let (v_a, v_b) = match phase {
            Phase::Minus => (v_vertex[0], v_vertex[1]),
            Phase::Plus => (v_vertex[1], v_vertex[2]),
        };
        let w = z * len * len / a;
        // closures v(t), v'(t) on the gauge side, t = y − α
        let (value_at, slope_at): (Box<dyn Fn(f64) -> Complex64>, Box<dyn Fn(f64) -> Complex64>) =
            if w.norm() < 1e-12 {
                let dv = (v_b - v_a) / len;
                (
                    Box::new(move |t: f64| v_a + dv * t),
                    Box::new(move |_t: f64| dv),
                )
            } else {
                let kappa = (z / Complex64::new(a, 0.0)).sqrt();
                if (kappa.im * len).abs() > IM_THETA_MAX {
                    return Err(Error::invalid(format!(
                        "spectral parameter too deep in the complex plane: |Im κL| = {}",
                        (kappa.im * len).abs()
                    )));
                }
                let b = (v_b - v_a * (kappa * len).cos()) / (kappa * len).sin();
                (
                    Box::new(move |t: f64| {
                        v_a * (kappa * t).cos() + b * (kappa * t).sin()
                    }),
                    Box::new(move |t: f64| {
                        kappa * (b * (kappa * t).cos() - v_a * (kappa * t).sin())
                    }),
                )
            };
        for i in grid.block_range(phase) {
            let y = grid.nodes()[i];
            values[i] = Complex64::from_polar(1.0, -x * y) * value_at(y - alpha);
        }
        let i_x = Complex64::new(0.0, x);
        let d_alpha =
            Complex64::from_polar(1.0, -x * alpha) * (slope_at(0.0) - i_x * v_a);
        let d_beta = Complex64::from_polar(1.0, -x * beta) * (slope_at(len) - i_x * v_b);
        match phase {
            Phase::Minus => {
                deriv[0] = d_alpha;
                deriv[1] = d_beta;
            }
            Phase::Plus => {
                deriv[2] = d_alpha;
                deriv[3] = d_beta;
            }
        }
    }
    Ok(CellFunction::from_values(grid.clone(), values)?.with_deriv_traces(deriv))
}

/// S(z)φ by the spectral route: Πφ + z Σ_m ⟨Πφ, φ_m⟩/(λ_m − z) φ_m over
/// the Dirichlet eigenbasis, with the sine coefficients of the piecewise
/// linear gauge data in closed form. Independent of [`solution_operator`]
/// except for the shared lift; the two must agree to the truncation tail
/// O(n_modes^{−5/2}).
pub fn solution_operator_modes(
    grid: &Arc<CellGrid>,
    chi: Quasimomentum,
    z: Complex64,
    phi: [Complex64; 2],
    n_modes: usize,
) -> Result<CellFunction> {
    let medium = *grid.medium();
    pole_guard(&medium, z, TOL_POLE)?;
    let x = chi.angle();
    let l = medium.interface();
    let mut out = lift(grid, chi, phi);
    let v_vertex = [
        phi[0],
        Complex64::from_polar(1.0, x * l) * phi[1],
        Complex64::from_polar(1.0, x) * phi[0],
    ];
    let mut deriv = [out.deriv_trace(0), out.deriv_trace(1), out.deriv_trace(2), out.deriv_trace(3)];
    for phase in [Phase::Minus, Phase::Plus] {
        let (alpha, beta, a) = grid.block_edge(phase);
        let len = beta - alpha;
        let (v_a, v_b) = match phase {
            Phase::Minus => (v_vertex[0], v_vertex[1]),
            Phase::Plus => (v_vertex[1], v_vertex[2]),
        };
        let idx: Vec<usize> = grid.block_range(phase).collect();
        let amp = (2.0 / len).sqrt();
        let mut gauge_add = vec![ZERO; idx.len()];
        let (mut dv_alpha, mut dv_beta) = (ZERO, ZERO);
        for m in 1..=n_modes {
            let freq = m as f64 * std::f64::consts::PI / len;
            let lam = a * freq * freq;
            let parity = if m % 2 == 0 { 1.0 } else { -1.0 };
            // ⟨Πφ, φ_m⟩ for linear gauge data: amp·(L/(mπ))·(v_a − (−1)^m v_b)
            let coeff = amp * len / (m as f64 * std::f64::consts::PI) * (v_a - parity * v_b);
            let gain = z * coeff / (Complex64::new(lam, 0.0) - z);
            for (local, &i) in idx.iter().enumerate() {
                let t = grid.nodes()[i] - alpha;
                gauge_add[local] += gain * amp * (freq * t).sin();
            }
            dv_alpha += gain * amp * freq;
            dv_beta += gain * amp * freq * parity;
        }
        for (local, &i) in idx.iter().enumerate() {
            let y = grid.nodes()[i];
            out.values_mut()[i] += Complex64::from_polar(1.0, -x * y) * gauge_add[local];
        }
        let (i_a, i_b) = match phase {
            Phase::Minus => (0, 1),
            Phase::Plus => (2, 3),
        };
        deriv[i_a] += Complex64::from_polar(1.0, -x * alpha) * dv_alpha;
        deriv[i_b] += Complex64::from_polar(1.0, -x * beta) * dv_beta;
    }
    Ok(out.with_deriv_traces(deriv))
}

/// Adjoint applied to f: the ℂ² vector (⟨f, S(z̄)e₁⟩, ⟨f, S(z̄)e₂⟩), by
/// quadrature. With the conjugated parameter this is exactly the rank-two
/// factor appearing next to M(z)⁻¹ in the resolvent difference formula.
pub fn solution_operator_adjoint(
    grid: &Arc<CellGrid>,
    chi: Quasimomentum,
    z: Complex64,
    f: &CellFunction,
) -> Result<[Complex64; 2]> {
    let s1 = solution_operator(grid, chi, z.conj(), [ONE, ZERO])?;
    let s2 = solution_operator(grid, chi, z.conj(), [ZERO, ONE])?;
    Ok([f.inner(&s1), f.inner(&s2)])
}

// ---------------------------------------------------------------------------
// Residual of the differential expression
// ---------------------------------------------------------------------------

/// Relative interior residual of (−(∂+iχ)a(∂+iχ) − z)u = rhs, measured by
/// a fourth-order stencil in the gauge on each block. The return value is
/// the RMS residual over interior nodes divided by max(‖rhs‖, (1+|z|)‖u‖).
pub fn fibre_residual(
    chi: Quasimomentum,
    z: Complex64,
    u: &CellFunction,
    rhs: Option<&CellFunction>,
) -> f64 {
    let grid = u.grid();
    let x = chi.angle();
    let mut sum = 0.0;
    let mut count = 0usize;
    for phase in [Phase::Minus, Phase::Plus] {
        let idx: Vec<usize> = grid.block_range(phase).collect();
        let (alpha, beta, a) = grid.block_edge(phase);
        let h = (beta - alpha) / (idx.len() - 1) as f64;
        let v: Vec<Complex64> = idx
            .iter()
            .map(|&i| Complex64::from_polar(1.0, x * grid.nodes()[i]) * u.values()[i])
            .collect();
        for local in 2..idx.len() - 2 {
            let vpp = (-v[local - 2] + 16.0 * v[local - 1] - 30.0 * v[local]
                + 16.0 * v[local + 1]
                - v[local + 2])
                / (12.0 * h * h);
            let i = idx[local];
            let g = match rhs {
                Some(r) => Complex64::from_polar(1.0, x * grid.nodes()[i]) * r.values()[i],
                None => ZERO,
            };
            let r = -a * vpp - z * v[local] - g;
            sum += r.norm_sqr();
            count += 1;
        }
    }
    let rms = (sum / count.max(1) as f64).sqrt();
    let denom = rhs
        .map(|r| r.norm())
        .unwrap_or(0.0)
        .max((1.0 + z.norm()) * u.norm())
        .max(f64::MIN_POSITIVE);
    rms / denom
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(chi: f64) -> Quasimomentum {
        Quasimomentum::new(chi).unwrap()
    }

    fn medium_141() -> Medium {
        Medium::new(1.0, 4.0, 0.5).unwrap()
    }

    fn medium_sym() -> Medium {
        Medium::new(1.0, 1.0, 0.5).unwrap()
    }

    fn medium_253() -> Medium {
        Medium::new(2.0, 5.0, 1.0 / 3.0).unwrap()
    }

    #[test]
    fn vertex_matrix_symmetric_cell() {
        let m = lambda_matrix(&medium_sym(), q(0.0));
        let expect = Mat2([
            [Complex64::new(-4.0, 0.0), Complex64::new(4.0, 0.0)],
            [Complex64::new(4.0, 0.0), Complex64::new(-4.0, 0.0)],
        ]);
        assert!(m.sub(&expect).frobenius() < 1e-14);
    }

    #[test]
    fn vertex_matrix_trace_and_entries() {
        for chi in [-2.0, 0.3, 1.0, 2.9] {
            let med = medium_141();
            let m = lambda_matrix(&med, q(chi));
            let d = med.vertex_sum_d();
            assert!((m.trace() - Complex64::new(-2.0 * d, 0.0)).norm() < 1e-12);
            let xi = med.coupling_xi(q(chi));
            assert!((m.0[1][0] - xi).norm() < 1e-14);
            assert!((m.0[0][1] - xi.conj()).norm() < 1e-14);
        }
    }

    #[test]
    fn vertex_eigenpairs() {
        let e = lambda_eigen(&medium_sym(), q(0.0)).unwrap();
        assert!(e.mu_parallel.abs() < 1e-14);
        assert!((e.psi_parallel[0].re - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-14);
        assert!((e.psi_parallel[1].re - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-14);

        let e = lambda_eigen(&medium_sym(), q(std::f64::consts::FRAC_PI_2)).unwrap();
        let expect = -4.0 + 2.0 * std::f64::consts::SQRT_2;
        assert!((e.mu_parallel - expect).abs() < 1e-12, "{}", e.mu_parallel);

        for (med, chi) in [(medium_141(), 0.7), (medium_253(), -1.9)] {
            let m = lambda_matrix(&med, q(chi));
            let e = lambda_eigen(&med, q(chi)).unwrap();
            for (mu, psi) in [(e.mu_parallel, e.psi_parallel), (e.mu_perp, e.psi_perp)] {
                let r = m.apply(psi);
                let res = norm2([r[0] - mu * psi[0], r[1] - mu * psi[1]]);
                assert!(res < 1e-12, "eigen residual {res}");
                assert!((norm2(psi) - 1.0).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn lift_of_zero_vanishes() {
        let grid = CellGrid::new(medium_141(), 64).unwrap();
        let u = lift(&grid, q(0.9), [ZERO, ZERO]);
        assert!(u.norm() < 1e-15);
    }

    #[test]
    fn lift_reproduces_tent() {
        let grid = CellGrid::new(medium_sym(), 64).unwrap();
        let u = lift(&grid, q(0.0), [ONE, -ONE]);
        for (i, &y) in grid.nodes().iter().enumerate() {
            let expect = if y <= 0.5 { 1.0 - 4.0 * y } else { 4.0 * y - 3.0 };
            assert!((u.values()[i] - Complex64::new(expect, 0.0)).norm() < 1e-13);
        }
    }

    #[test]
    fn lift_matches_displayed_formula_for_top_eigenvector() {
        // piecewise form of Π ψ∥ in the gauge: on (0,l) the chord from 1 to
        // e^{iχl}ξ/|ξ|, on (l,1) the chord onward to e^{iχ}, all over √2
        let med = medium_141();
        let chi = 0.7;
        let grid = CellGrid::new(med, 128).unwrap();
        let eig = lambda_eigen(&med, q(chi)).unwrap();
        let u = lift(&grid, q(chi), eig.psi_parallel);
        let l = med.interface();
        let s2 = 2.0f64.sqrt();
        let x_l = Complex64::from_polar(1.0, chi * l) * eig.phase;
        let e_1 = Complex64::from_polar(1.0, chi);
        for (i, &y) in grid.nodes().iter().enumerate() {
            let v = match grid.phase_of(i) {
                Phase::Minus => (ONE + (x_l - ONE) * (y / l)) / s2,
                Phase::Plus => (x_l * (1.0 - y) + e_1 * (y - l)) / ((1.0 - l) * s2),
            };
            let expect = Complex64::from_polar(1.0, -chi * y) * v;
            assert!((u.values()[i] - expect).norm() < 1e-12);
        }
    }

    #[test]
    fn neumann_of_lift_is_vertex_matrix() {
        for (med, chi) in [
            (medium_sym(), 0.0),
            (medium_141(), std::f64::consts::FRAC_PI_2),
            (medium_141(), -1.3),
            (medium_253(), 2.2),
        ] {
            let grid = CellGrid::new(med, 32).unwrap();
            let lam = lambda_matrix(&med, q(chi));
            for (c, phi) in [
                (0, [ONE, ZERO]),
                (1, [ZERO, ONE]),
                (2, [Complex64::new(0.3, -1.1), Complex64::new(2.0, 0.4)]),
            ] {
                let u = lift(&grid, q(chi), phi);
                let got = neumann_trace(q(chi), &u);
                let expect = lam.apply(phi);
                let err = norm2([got[0] - expect[0], got[1] - expect[1]]);
                assert!(err < 1e-11, "case {c}: flux mismatch {err}");
                let g0 = dirichlet_trace(&u);
                assert!(norm2([g0[0] - phi[0], g0[1] - phi[1]]) < 1e-13);
            }
        }
    }

    #[test]
    fn neumann_of_constant_gauge_vanishes() {
        let med = medium_141();
        let chi = 1.1;
        let grid = CellGrid::new(med, 32).unwrap();
        let mut u = CellFunction::from_fn(grid, |y, _| Complex64::from_polar(1.0, -chi * y));
        let e = |y: f64| Complex64::from_polar(1.0, -chi * y) * Complex64::new(0.0, -chi);
        u = u.with_deriv_traces([e(0.0), e(0.5), e(0.5), e(1.0)]);
        let g = neumann_trace(q(chi), &u);
        assert!(norm2(g) < 1e-12);
    }

    #[test]
    fn dirichlet_spectrum_values() {
        let pi2 = std::f64::consts::PI * std::f64::consts::PI;
        let s = dirichlet_spectrum(&medium_141(), 4);
        let expect = [4.0 * pi2, 16.0 * pi2, 16.0 * pi2, 36.0 * pi2];
        for (a, b) in s.iter().zip(expect) {
            assert!((a - b).abs() < 1e-9 * b, "{a} vs {b}");
        }
        // the merged list is ascending
        let s = dirichlet_spectrum(&medium_253(), 12);
        assert!(s.windows(2).all(|p| p[0] <= p[1]));
    }

    #[test]
    fn dirichlet_mode_functions_are_orthonormal_eigenfunctions() {
        let med = medium_253();
        let chi = q(0.8);
        let grid = CellGrid::new(med, 256).unwrap();
        let modes = dirichlet_modes(&med, 4);
        for (i, mi) in modes.iter().enumerate() {
            let fi = dirichlet_mode_function(&grid, chi, mi);
            // eigen-residual of the differential expression
            let r = fibre_residual(chi, Complex64::new(mi.eigenvalue, 0.0), &fi, None);
            assert!(r < 1e-6, "mode {i} residual {r}");
            for (j, mj) in modes.iter().enumerate() {
                let fj = dirichlet_mode_function(&grid, chi, mj);
                let g = fi.inner(&fj);
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((g - Complex64::new(expect, 0.0)).norm() < 1e-8);
            }
        }
    }

    #[test]
    fn resolvent_defining_identity() {
        let med = medium_141();
        let chi = q(0.6);
        let grid = CellGrid::new(med, 512).unwrap();
        let f = CellFunction::from_fn(grid.clone(), |y, _| {
            Complex64::new((2.0 * y).sin(), (1.0 - y) * y)
        });
        for z in [
            Complex64::new(-1.0, 0.0),
            Complex64::new(5.0, 0.0),
            Complex64::new(20.0, 3.0),
        ] {
            let u = dirichlet_resolvent(chi, z, &f).unwrap();
            // boundary values vanish on both edges
            for i in 0..4 {
                assert!(u.value_trace(i).norm() < 1e-13);
            }
            let r = fibre_residual(chi, z, &u, Some(&f));
            assert!(r < 1e-7, "z = {z}: residual {r}");
        }
    }

    #[test]
    fn resolvent_is_symmetric_at_real_z() {
        let med = medium_253();
        let chi = q(-0.4);
        let grid = CellGrid::new(med, 256).unwrap();
        let f = CellFunction::from_fn(grid.clone(), |y, _| Complex64::new(y, 0.5 - y));
        let g = CellFunction::from_fn(grid.clone(), |y, _| {
            Complex64::new((3.0 * y).cos(), y * y)
        });
        let z = Complex64::new(-2.5, 0.0);
        let rf = dirichlet_resolvent(chi, z, &f).unwrap();
        let rg = dirichlet_resolvent(chi, z, &g).unwrap();
        let lhs = rf.inner(&g);
        let rhs = f.inner(&rg);
        assert!((lhs - rhs).norm() < 1e-9 * f.norm() * g.norm());
    }

    #[test]
    fn resolvent_rejects_spectral_poles() {
        let med = medium_141();
        let grid = CellGrid::new(med, 64).unwrap();
        let f = CellFunction::from_fn(grid, |y, _| Complex64::new(y, 0.0));
        let lam1 = dirichlet_spectrum(&med, 1)[0];
        let err = dirichlet_resolvent(q(0.3), Complex64::new(lam1, 0.0), &f).unwrap_err();
        assert!(matches!(err, Error::SpectralPole { .. }));
    }

    #[test]
    fn weyl_matrix_limits_and_symmetries() {
        let med = medium_141();
        let chi = q(0.9);
        // z → 0 recovers the vertex matrix
        let m = m_matrix(&med, chi, Complex64::new(1e-12, 0.0)).unwrap();
        let lam = lambda_matrix(&med, chi);
        assert!(m.matrix.sub(&lam).frobenius() < 1e-8);
        // Hermitian at real z below the Dirichlet spectrum
        for zr in [-5.0, -1.0, 0.5 * m_series_radius(&med)] {
            let m = m_matrix(&med, chi, Complex64::new(zr, 0.0)).unwrap();
            assert!(m.matrix.hermitian_defect() < 1e-12, "z = {zr}");
        }
        // reflection z ↦ conj z is the adjoint
        let z = Complex64::new(3.0, 1.2);
        let m1 = m_matrix(&med, chi, z).unwrap();
        let m2 = m_matrix(&med, chi, z.conj()).unwrap();
        assert!(m1.matrix.adjoint().sub(&m2.matrix).frobenius() < 1e-12);
        // equal diagonal entries
        assert!((m1.matrix.0[0][0] - m1.matrix.0[1][1]).norm() < 1e-14);
    }

    #[test]
    fn weyl_matrix_continuous_across_series_threshold() {
        // the series/trig switch at |w| = 0.05 must be seamless
        let med = medium_141();
        let chi = q(1.4);
        let a_min = 1.0f64;
        let l = 0.5f64;
        // pick z so the minus-edge w crosses the threshold
        let z_at = |w: f64| w * a_min / (l * l);
        let below = m_matrix(&med, chi, Complex64::new(z_at(0.0499), 0.0)).unwrap();
        let above = m_matrix(&med, chi, Complex64::new(z_at(0.0501), 0.0)).unwrap();
        let jump = below.matrix.sub(&above.matrix).frobenius();
        // entries move by O(Δz·C₀) ≈ 2e−4 here; anything much larger would
        // signal a branch mismatch
        assert!(jump < 5e-3, "threshold jump {jump}");
        let z = Complex64::new(z_at(0.05), 0.0);
        let series = m_matrix(&med, chi, z * (1.0 - 1e-12)).unwrap();
        let trig = m_matrix(&med, chi, z * (1.0 + 1e-12)).unwrap();
        assert!(series.matrix.sub(&trig.matrix).frobenius() < 1e-11);
    }

    #[test]
    fn weyl_eigenvalues_increase_below_spectrum() {
        let med = medium_253();
        let chi = q(2.0);
        let radius = m_series_radius(&med);
        let mut prev: Option<(f64, f64)> = None;
        for i in 0..40 {
            let zr = -10.0 + (0.9 * radius + 10.0) * (i as f64) / 39.0;
            let m = m_matrix(&med, chi, Complex64::new(zr, 0.0)).unwrap().matrix;
            let mu_plus = m.0[0][0].re + m.0[0][1].norm();
            let mu_minus = m.0[0][0].re - m.0[0][1].norm();
            if let Some((p_plus, p_minus)) = prev {
                assert!(mu_plus >= p_plus - 1e-10, "top branch not monotone at z = {zr}");
                assert!(mu_minus >= p_minus - 1e-10, "bottom branch not monotone at z = {zr}");
            }
            prev = Some((mu_plus, mu_minus));
        }
    }

    #[test]
    fn gram_coefficient_matches_closed_form() {
        let grid = CellGrid::new(medium_sym(), 128).unwrap();
        let c0 = series_coefficient_quadrature(&grid, q(0.0), 0).unwrap();
        assert!((c0.0[0][0].re - 1.0 / 3.0).abs() < 1e-10);
        assert!(c0.hermitian_defect() < 1e-12);
        // positive definite: equal diagonal, so both eigenvalues are
        // c₁₁ ± |c₁₂|
        assert!(c0.0[0][0].re - c0.0[0][1].norm() > 0.0);

        for (med, chi, j) in [
            (medium_141(), 0.8, 0),
            (medium_141(), 0.8, 1),
            (medium_253(), -1.2, 1),
            (medium_253(), 2.4, 2),
        ] {
            let grid = CellGrid::new(med, 256).unwrap();
            let qd = series_coefficient_quadrature(&grid, q(chi), j).unwrap();
            let cf = series_coefficient(&med, q(chi), j).unwrap();
            let rel = qd.sub(&cf).frobenius() / cf.frobenius();
            assert!(rel < 1e-8, "j = {j}: quadrature vs closed form {rel}");
        }
    }

    #[test]
    fn series_truncation_matches_weyl_matrix() {
        let med = medium_141();
        let chi = q(0.9);
        let grid = CellGrid::new(med, 256).unwrap();
        let radius = m_series_radius(&med);
        let z = Complex64::new(0.05 * radius, 0.0);
        let m = m_matrix(&med, chi, z).unwrap();
        let s = m_series_truncation(&grid, chi, z, 6).unwrap();
        let rel = m.matrix.sub(&s.matrix).frobenius() / m.matrix.frobenius();
        assert!(rel < 1e-9, "series agreement {rel}");
    }

    #[test]
    fn series_remainder_shrinks_at_advertised_order() {
        // with the closed-form coefficients the only discrepancy against
        // the Weyl matrix is the z^{N+2} remainder; halving z must shrink
        // it by about 2^{N+2}
        let med = medium_141();
        let chi = q(0.9);
        let radius = m_series_radius(&med);
        let n = 4;
        let err_at = |zr: f64| {
            let z = Complex64::new(zr, 0.0);
            let mut acc = lambda_matrix(&med, chi);
            let mut zp = z;
            for j in 0..=n {
                acc = acc.add(&series_coefficient(&med, q(0.9), j).unwrap().scale(zp));
                zp *= z;
            }
            m_matrix(&med, chi, z).unwrap().matrix.sub(&acc).frobenius()
        };
        let e1 = err_at(0.2 * radius);
        let e2 = err_at(0.1 * radius);
        let order = (e1 / e2).log2();
        assert!(
            (order - (n as f64 + 2.0)).abs() < 0.35,
            "remainder order {order}, expected {}",
            n + 2
        );
        // and the remainder is controlled by the stated tail bound
        let bound = m_series_tail_bound(&med, 0.2 * radius, n).unwrap();
        assert!(e1 <= bound, "remainder {e1} exceeds bound {bound}");
    }

    #[test]
    fn series_rejects_large_z() {
        let med = medium_141();
        let grid = CellGrid::new(med, 64).unwrap();
        let z = Complex64::new(1.1 * m_series_radius(&med), 0.0);
        let err = m_series_truncation(&grid, q(0.0), z, 2).unwrap_err();
        assert!(matches!(err, Error::SeriesDivergence { .. }));
    }

    #[test]
    fn solution_operator_at_zero_is_lift() {
        let med = medium_253();
        let chi = q(1.7);
        let grid = CellGrid::new(med, 64).unwrap();
        let phi = [Complex64::new(0.6, -0.2), Complex64::new(-1.0, 0.9)];
        let s0 = solution_operator(&grid, chi, ZERO, phi).unwrap();
        let pi = lift(&grid, chi, phi);
        assert!(s0.distance(&pi) < 1e-13);
    }

    #[test]
    fn solution_operator_interpolates_and_solves() {
        let med = medium_141();
        let chi = q(-0.8);
        let grid = CellGrid::new(med, 512).unwrap();
        let phi = [ONE, Complex64::new(0.2, 0.5)];
        for z in [Complex64::new(-1.0, 0.0), Complex64::new(7.3, 0.4)] {
            let s = solution_operator(&grid, chi, z, phi).unwrap();
            let g0 = dirichlet_trace(&s);
            assert!(norm2([g0[0] - phi[0], g0[1] - phi[1]]) < 1e-12);
            let r = fibre_residual(chi, z, &s, None);
            assert!(r < 1e-7, "z = {z}: interior residual {r}");
        }
    }

    #[test]
    fn solution_operator_routes_agree() {
        let med = medium_141();
        let chi = q(0.6);
        let grid = CellGrid::new(med, 256).unwrap();
        let phi = [Complex64::new(0.8, 0.1), Complex64::new(-0.3, 1.1)];
        let z = Complex64::new(-1.0, 0.0);
        let direct = solution_operator(&grid, chi, z, phi).unwrap();
        let spectral = solution_operator_modes(&grid, chi, z, phi, 2000).unwrap();
        let rel = direct.distance(&spectral) / direct.norm();
        assert!(rel < 1e-8, "route discrepancy {rel}");
        // derivative traces: the sine series differentiated at an endpoint
        // converges only like 1/n_modes, so the comparison is loose
        for i in 0..4 {
            assert!(
                (direct.deriv_trace(i) - spectral.deriv_trace(i)).norm() < 2e-3,
                "trace {i}"
            );
        }
    }

    #[test]
    fn weyl_matrix_is_flux_of_solution_operator() {
        // M(z)φ = Γ₁ S(z)φ: the closed form and the ODE route must agree
        let med = medium_253();
        let chi = q(1.3);
        let grid = CellGrid::new(med, 64).unwrap();
        let z = Complex64::new(4.5, 0.7);
        let m = m_matrix(&med, chi, z).unwrap().matrix;
        for phi in [[ONE, ZERO], [ZERO, ONE], [Complex64::new(0.4, 0.3), ONE]] {
            let s = solution_operator(&grid, chi, z, phi).unwrap();
            let got = neumann_trace(chi, &s);
            let expect = m.apply(phi);
            let err = norm2([got[0] - expect[0], got[1] - expect[1]]);
            assert!(err < 1e-9 * m.frobenius(), "flux mismatch {err}");
        }
    }

    #[test]
    fn adjoint_identity_holds() {
        let med = medium_141();
        let chi = q(0.5);
        let grid = CellGrid::new(med, 128).unwrap();
        let f = CellFunction::from_fn(grid.clone(), |y, _| {
            Complex64::new((1.7 * y).sin(), 0.3 * y * y)
        });
        let phi = [Complex64::new(0.2, -0.7), Complex64::new(1.1, 0.4)];
        for z in [Complex64::new(-1.0, 0.0), Complex64::new(2.0, 1.5)] {
            let s_phi = solution_operator(&grid, chi, z, phi).unwrap();
            let lhs = s_phi.inner(&f);
            // the adjoint routine applies S(z̄)*; passing z̄ yields S(z)*
            let star = solution_operator_adjoint(&grid, chi, z.conj(), &f).unwrap();
            let rhs = dot2(phi, star);
            assert!((lhs - rhs).norm() < 1e-10, "z = {z}");
        }
    }

    #[test]
    fn prefix_integrals_are_exact_for_cubics() {
        let n = 9;
        let h = 0.1;
        let f: Vec<Complex64> = (0..=n)
            .map(|i| {
                let t = i as f64 * h;
                Complex64::new(t * t * t - 2.0 * t + 1.0, t * t)
            })
            .collect();
        let p = prefix_integrals(&f, h);
        for j in 0..=n {
            let t = j as f64 * h;
            let exact = Complex64::new(t * t * t * t / 4.0 - t * t + t, t * t * t / 3.0);
            assert!((p[j] - exact).norm() < 1e-14, "prefix at {j}");
        }
    }
}
