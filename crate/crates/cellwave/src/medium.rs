//! The two-phase unit cell and its elementary derived constants.
//!
//! The cell is [0,1] with stiffness a₋ on (0,l) and a₊ on (l,1). Everything
//! downstream is driven by two scalars per quasimomentum χ:
//!
//! * the vertex sum D = a₋/l + a₊/(1−l), and
//! * the coupling ξ(χ) = (a₋/l)·e^{−iχl} + (a₊/(1−l))·e^{iχ(1−l)}.
//!
//! |ξ(χ)| ≤ D always, with equality exactly at χ = 0. The deficit D − |ξ|
//! is the quantity that opens the first spectral gap; it is computed here in
//! a cancellation-free form because the plain difference loses all digits
//! for |χ| ≲ 10⁻⁴.

use crate::error::{Error, Result};
use num_complex::Complex64;

/// Piecewise-constant two-phase medium on the unit cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Medium {
    a_minus: f64,
    a_plus: f64,
    l: f64,
}

impl Medium {
    /// Validates positivity of both stiffnesses and 0 < l < 1.
    pub fn new(a_minus: f64, a_plus: f64, l: f64) -> Result<Self> {
        if !(a_minus.is_finite() && a_minus > 0.0) {
            return Err(Error::invalid(format!("a_minus must be positive, got {a_minus}")));
        }
        if !(a_plus.is_finite() && a_plus > 0.0) {
            return Err(Error::invalid(format!("a_plus must be positive, got {a_plus}")));
        }
        if !(l.is_finite() && 0.0 < l && l < 1.0) {
            return Err(Error::invalid(format!("interface l must lie in (0,1), got {l}")));
        }
        Ok(Medium { a_minus, a_plus, l })
    }

    pub fn a_minus(&self) -> f64 {
        self.a_minus
    }

    pub fn a_plus(&self) -> f64 {
        self.a_plus
    }

    /// Interface position l.
    pub fn interface(&self) -> f64 {
        self.l
    }

    /// Stiffness at a point of the cell; the interface itself is assigned
    /// the left phase (a set of measure zero, irrelevant to any integral).
    pub fn a_at(&self, y: f64) -> f64 {
        if y <= self.l {
            self.a_minus
        } else {
            self.a_plus
        }
    }

    /// D = a₋/l + a₊/(1−l).
    pub fn vertex_sum_d(&self) -> f64 {
        self.a_minus / self.l + self.a_plus / (1.0 - self.l)
    }

    /// ξ(χ) = (a₋/l)·e^{−iχl} + (a₊/(1−l))·e^{iχ(1−l)}.
    pub fn coupling_xi(&self, chi: Quasimomentum) -> Complex64 {
        let x = chi.angle();
        let w_minus = self.a_minus / self.l;
        let w_plus = self.a_plus / (1.0 - self.l);
        w_minus * Complex64::from_polar(1.0, -x * self.l)
            + w_plus * Complex64::from_polar(1.0, x * (1.0 - self.l))
    }

    /// D − |ξ(χ)| evaluated without catastrophic cancellation.
    ///
    /// Uses |ξ|² = D² − (2a₋a₊/(l(1−l)))·(1−cos χ), so
    /// D − |ξ| = (2a₋a₊/(l(1−l)))·(1−cos χ) / (D + |ξ|)
    /// with 1−cos χ = 2·sin²(χ/2). Exact to machine precision even at
    /// χ ~ 10⁻⁸, where the naive difference has no correct digits.
    pub fn coupling_deficit(&self, chi: Quasimomentum) -> f64 {
        let x = chi.angle();
        let d = self.vertex_sum_d();
        let s = (x / 2.0).sin();
        let gap_num = 4.0 * self.a_minus * self.a_plus / (self.l * (1.0 - self.l)) * s * s;
        gap_num / (d + self.coupling_xi(chi).norm())
    }

    /// The cell traversed in the opposite direction: (a₋,l) and (a₊,1−l)
    /// exchange roles. Useful for symmetry tests; the spectrum is invariant.
    pub fn reflected(&self) -> Medium {
        Medium {
            a_minus: self.a_plus,
            a_plus: self.a_minus,
            l: 1.0 - self.l,
        }
    }

    /// Transit time of a unit-speed ray through one period,
    /// l/√a₋ + (1−l)/√a₊. Sets the asymptotic eigenvalue spacing
    /// λ_j ≈ (jπ/τ)², which the band scanner uses to size its grid.
    pub fn optical_thickness(&self) -> f64 {
        self.l / self.a_minus.sqrt() + (1.0 - self.l) / self.a_plus.sqrt()
    }

    /// Harmonic mean (l/a₋ + (1−l)/a₊)⁻¹, the classical effective stiffness.
    pub fn harmonic_mean(&self) -> f64 {
        1.0 / (self.l / self.a_minus + (1.0 - self.l) / self.a_plus)
    }
}

/// Bloch phase per period, reduced to the fundamental window [−π, π).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quasimomentum(f64);

impl Quasimomentum {
    /// Reduces any finite real to [−π, π) modulo 2π.
    pub fn new(chi: f64) -> Result<Self> {
        if !chi.is_finite() {
            return Err(Error::invalid(format!("quasimomentum must be finite, got {chi}")));
        }
        let two_pi = 2.0 * std::f64::consts::PI;
        let mut r = (chi + std::f64::consts::PI).rem_euclid(two_pi) - std::f64::consts::PI;
        if r >= std::f64::consts::PI {
            r -= two_pi;
        }
        Ok(Quasimomentum(r))
    }

    pub fn angle(&self) -> f64 {
        self.0
    }

    pub fn is_zero(&self) -> bool {
        self.0 == 0.0
    }
}

/// Rejects quasimomenta inside the exclusion band around a zero of |ξ|.
///
/// ξ can vanish only at χ = ±π, and only for media with a₋/l = a₊/(1−l);
/// nevertheless every caller that divides by |ξ| goes through this guard.
pub fn require_coupling(medium: &Medium, chi: Quasimomentum, min_abs: f64) -> Result<Complex64> {
    let xi = medium.coupling_xi(chi);
    if xi.norm() <= min_abs {
        return Err(Error::DegenerateCoupling { chi: chi.angle() });
    }
    Ok(xi)
}

/// Default width of the exclusion band |χ − χ₀| < δ around zeros of |ξ|
/// applied by sweep drivers.
pub const DEFAULT_EXCLUSION_BAND: f64 = 1e-6;

/// Relative floor under which |ξ| counts as vanished: a coupling below
/// `COUPLING_REL_FLOOR`·D is rounding noise around an exact zero, not a
/// usable direction.
pub const COUPLING_REL_FLOOR: f64 = 1e-12;

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn q(chi: f64) -> Quasimomentum {
        Quasimomentum::new(chi).unwrap()
    }

    #[test]
    fn vertex_sum_matches_arithmetic() {
        let m = Medium::new(1.0, 1.0, 0.5).unwrap();
        assert_eq!(m.vertex_sum_d(), 4.0);
        let m = Medium::new(1.0, 4.0, 0.5).unwrap();
        assert_eq!(m.vertex_sum_d(), 10.0);
        let m = Medium::new(2.0, 2.0, 0.25).unwrap();
        assert!((m.vertex_sum_d() - 32.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn coupling_at_zero_equals_vertex_sum() {
        for (am, ap, l) in [(1.0, 4.0, 0.5), (2.0, 5.0, 1.0 / 3.0), (0.3, 7.0, 0.81)] {
            let m = Medium::new(am, ap, l).unwrap();
            let xi = m.coupling_xi(q(0.0));
            assert!((xi.re - m.vertex_sum_d()).abs() < 1e-12);
            assert!(xi.im.abs() < 1e-15);
        }
    }

    #[test]
    fn symmetric_coupling_is_cosine() {
        let m = Medium::new(1.0, 1.0, 0.5).unwrap();
        for chi in [-2.5, -1.0, 0.0, 0.3, 1.7, 3.0] {
            let xi = m.coupling_xi(q(chi));
            assert!((xi.re - 4.0 * (chi / 2.0).cos()).abs() < 1e-12);
            assert!(xi.im.abs() < 1e-12);
        }
        // degenerate point: chi = -pi is the reduced representative of pi
        let xi = m.coupling_xi(q(PI));
        assert!(xi.norm() < 1e-12);
    }

    #[test]
    fn deficit_is_stable_at_tiny_chi() {
        let m = Medium::new(1.0, 4.0, 0.5).unwrap();
        let chi = 1e-7;
        let deficit = m.coupling_deficit(q(chi));
        // leading order a-.a+ chi^2 / (2 l (1-l) D), relative error O(chi^2)
        let l = m.interface();
        let expect =
            m.a_minus() * m.a_plus() * chi * chi / (2.0 * l * (1.0 - l) * m.vertex_sum_d());
        assert!((deficit / expect - 1.0).abs() < 1e-6, "deficit {deficit}, expect {expect}");
    }

    #[test]
    fn quasimomentum_reduces_to_window() {
        assert!((q(3.0 * PI).angle() - (-PI)).abs() < 1e-12);
        assert!((q(PI).angle() - (-PI)).abs() < 1e-12);
        assert!((q(-PI).angle() - (-PI)).abs() < 1e-12);
        assert!((q(2.0 * PI).angle()).abs() < 1e-12);
        assert!((q(0.7).angle() - 0.7).abs() < 1e-15);
    }

    #[test]
    fn reflection_conjugates_coupling() {
        let m = Medium::new(2.0, 5.0, 1.0 / 3.0).unwrap();
        let r = m.reflected();
        for chi in [0.0, 0.4, -1.3, 2.9] {
            let xi = m.coupling_xi(q(chi));
            let xi_r = r.coupling_xi(q(chi));
            assert!((xi_r - xi.conj()).norm() < 1e-12);
            assert!((r.vertex_sum_d() - m.vertex_sum_d()).abs() < 1e-12);
        }
    }
}
