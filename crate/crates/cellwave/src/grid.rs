//! Sampling grid on the unit cell and functions sampled on it.
//!
//! The grid is uniform within each phase, with the interface l snapped to a
//! node so that no quadrature panel straddles the stiffness jump. The
//! interface node is stored twice, once per phase, because functions of
//! interest have two-sided limits there (derivatives jump, and so do the
//! eigenfunctions' fluxes). Simpson weights are assembled per block, which
//! keeps the composite rule at full fourth order despite the discontinuity.

use crate::error::{Error, Result};
use crate::medium::Medium;
use num_complex::Complex64;
use std::sync::Arc;

/// Which phase a sample point belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Minus,
    Plus,
}

/// Block-uniform grid on [0,1] with the interface as a shared (duplicated)
/// node. Node layout: indices 0..=n_minus cover [0,l], indices
/// n_minus+1..=n_minus+n_plus+1 cover [l,1].
#[derive(Debug)]
pub struct CellGrid {
    medium: Medium,
    nodes: Vec<f64>,
    weights: Vec<f64>,
    n_minus: usize,
    n_plus: usize,
}

impl CellGrid {
    /// Builds a grid with roughly `n_cell` subintervals split between the
    /// phases in proportion to their lengths. Each block gets an even
    /// number (at least four) of subintervals, enough for Simpson's rule
    /// and for the five-point derivative stencils at the trace points.
    pub fn new(medium: Medium, n_cell: usize) -> Result<Arc<Self>> {
        if n_cell < 4 {
            return Err(Error::invalid(format!("cell grid needs at least 4 intervals, got {n_cell}")));
        }
        let l = medium.interface();
        let mut n_minus = ((n_cell as f64) * l).round() as usize;
        n_minus += n_minus % 2;
        n_minus = n_minus.max(4);
        let mut n_plus = n_cell.saturating_sub(n_minus);
        n_plus += n_plus % 2;
        n_plus = n_plus.max(4);

        let mut nodes = Vec::with_capacity(n_minus + n_plus + 2);
        let h_minus = l / n_minus as f64;
        for i in 0..=n_minus {
            nodes.push(if i == n_minus { l } else { i as f64 * h_minus });
        }
        let h_plus = (1.0 - l) / n_plus as f64;
        for i in 0..=n_plus {
            nodes.push(if i == n_plus { 1.0 } else { l + i as f64 * h_plus });
        }

        let mut weights = Vec::with_capacity(nodes.len());
        push_simpson(&mut weights, h_minus, n_minus);
        push_simpson(&mut weights, h_plus, n_plus);

        Ok(Arc::new(CellGrid { medium, nodes, weights, n_minus, n_plus }))
    }

    pub fn medium(&self) -> &Medium {
        &self.medium
    }

    /// Total number of stored sample points (interface counted twice).
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// Simpson quadrature weights aligned with [`Self::nodes`].
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Index of the interface node in the minus block.
    pub fn interface_minus(&self) -> usize {
        self.n_minus
    }

    /// Index of the interface node in the plus block.
    pub fn interface_plus(&self) -> usize {
        self.n_minus + 1
    }

    /// Number of subintervals in each block (minus, plus).
    pub fn block_sizes(&self) -> (usize, usize) {
        (self.n_minus, self.n_plus)
    }

    /// Node index ranges of the two blocks, inclusive of both endpoints.
    pub fn block_range(&self, phase: Phase) -> std::ops::RangeInclusive<usize> {
        match phase {
            Phase::Minus => 0..=self.n_minus,
            Phase::Plus => self.n_minus + 1..=self.n_minus + self.n_plus + 1,
        }
    }

    /// Endpoints and stiffness of a block: (α, β, a).
    pub fn block_edge(&self, phase: Phase) -> (f64, f64, f64) {
        match phase {
            Phase::Minus => (0.0, self.medium.interface(), self.medium.a_minus()),
            Phase::Plus => (self.medium.interface(), 1.0, self.medium.a_plus()),
        }
    }

    pub fn phase_of(&self, index: usize) -> Phase {
        if index <= self.n_minus {
            Phase::Minus
        } else {
            Phase::Plus
        }
    }

    /// Stiffness at a node, honouring which side of the interface it
    /// represents.
    pub fn a_node(&self, index: usize) -> f64 {
        match self.phase_of(index) {
            Phase::Minus => self.medium.a_minus(),
            Phase::Plus => self.medium.a_plus(),
        }
    }

    /// ∫₀¹ f·conj(g) by composite Simpson.
    pub fn inner(&self, f: &[Complex64], g: &[Complex64]) -> Complex64 {
        debug_assert_eq!(f.len(), self.len());
        debug_assert_eq!(g.len(), self.len());
        let mut acc = Complex64::new(0.0, 0.0);
        for i in 0..self.len() {
            acc += self.weights[i] * f[i] * g[i].conj();
        }
        acc
    }

    /// L² norm by composite Simpson.
    pub fn norm(&self, f: &[Complex64]) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.len() {
            acc += self.weights[i] * f[i].norm_sqr();
        }
        acc.max(0.0).sqrt()
    }
}

fn push_simpson(weights: &mut Vec<f64>, h: f64, n: usize) {
    debug_assert!(n >= 2 && n % 2 == 0);
    for i in 0..=n {
        let w = if i == 0 || i == n {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        weights.push(w * h / 3.0);
    }
}

/// The four trace locations, in storage order: y = 0, l⁻, l⁺, 1.
pub const TRACE_ORIGIN: usize = 0;
pub const TRACE_INTERFACE_MINUS: usize = 1;
pub const TRACE_INTERFACE_PLUS: usize = 2;
pub const TRACE_END: usize = 3;

/// A complex-valued function sampled on a [`CellGrid`], together with
/// one-sided derivative traces at y ∈ {0, l⁻, l⁺, 1}.
///
/// Constructions with an analytic derivative (lifts, resolvent outputs,
/// eigenfunctions) install exact traces; generic sampling falls back to
/// one-sided fourth-order finite differences.
#[derive(Debug, Clone)]
pub struct CellFunction {
    grid: Arc<CellGrid>,
    values: Vec<Complex64>,
    deriv_traces: [Complex64; 4],
}

impl CellFunction {
    pub fn zeros(grid: Arc<CellGrid>) -> Self {
        let values = vec![Complex64::new(0.0, 0.0); grid.len()];
        CellFunction { grid, values, deriv_traces: [Complex64::new(0.0, 0.0); 4] }
    }

    /// Samples `f(y, phase)`; the phase argument distinguishes the two
    /// copies of the interface node. Derivative traces are estimated from
    /// the samples; override with [`Self::with_deriv_traces`] when the
    /// analytic values are known.
    pub fn from_fn<F: FnMut(f64, Phase) -> Complex64>(grid: Arc<CellGrid>, mut f: F) -> Self {
        let values: Vec<Complex64> = (0..grid.len())
            .map(|i| f(grid.nodes()[i], grid.phase_of(i)))
            .collect();
        let deriv_traces = fd_traces(&grid, &values);
        CellFunction { grid, values, deriv_traces }
    }

    pub fn from_values(grid: Arc<CellGrid>, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::invalid(format!(
                "value vector length {} does not match grid size {}",
                values.len(),
                grid.len()
            )));
        }
        let deriv_traces = fd_traces(&grid, &values);
        Ok(CellFunction { grid, values, deriv_traces })
    }

    /// Replaces the estimated derivative traces with analytic ones.
    pub fn with_deriv_traces(mut self, traces: [Complex64; 4]) -> Self {
        self.deriv_traces = traces;
        self
    }

    pub fn grid(&self) -> &Arc<CellGrid> {
        &self.grid
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Complex64] {
        &mut self.values
    }

    /// One-sided derivative du/dy at trace point `i` (see the TRACE_*
    /// constants for the ordering).
    pub fn deriv_trace(&self, i: usize) -> Complex64 {
        self.deriv_traces[i]
    }

    /// One-sided value at trace point `i`; read straight from the samples,
    /// which store the interface node once per phase.
    pub fn value_trace(&self, i: usize) -> Complex64 {
        match i {
            TRACE_ORIGIN => self.values[0],
            TRACE_INTERFACE_MINUS => self.values[self.grid.interface_minus()],
            TRACE_INTERFACE_PLUS => self.values[self.grid.interface_plus()],
            TRACE_END => *self.values.last().unwrap(),
            _ => panic!("trace index out of range: {i}"),
        }
    }

    pub fn inner(&self, other: &CellFunction) -> Complex64 {
        self.grid.inner(&self.values, &other.values)
    }

    pub fn norm(&self) -> f64 {
        self.grid.norm(&self.values)
    }

    pub fn scale(&mut self, c: Complex64) {
        for v in &mut self.values {
            *v *= c;
        }
        for t in &mut self.deriv_traces {
            *t *= c;
        }
    }

    /// self ← self + c·other, traces included.
    pub fn axpy(&mut self, c: Complex64, other: &CellFunction) {
        debug_assert_eq!(self.values.len(), other.values.len());
        for (v, w) in self.values.iter_mut().zip(&other.values) {
            *v += c * w;
        }
        for (t, s) in self.deriv_traces.iter_mut().zip(&other.deriv_traces) {
            *t += c * s;
        }
    }

    /// Pointwise residual norm against another sampled function.
    pub fn distance(&self, other: &CellFunction) -> f64 {
        let mut diff = self.clone();
        diff.axpy(Complex64::new(-1.0, 0.0), other);
        diff.norm()
    }
}

/// Fourth-order one-sided derivative estimates at the four trace points.
fn fd_traces(grid: &CellGrid, values: &[Complex64]) -> [Complex64; 4] {
    let im = grid.interface_minus();
    let ip = grid.interface_plus();
    let n = grid.len();
    let forward = |start: usize, h: f64| -> Complex64 {
        (-25.0 * values[start] + 48.0 * values[start + 1] - 36.0 * values[start + 2]
            + 16.0 * values[start + 3]
            - 3.0 * values[start + 4])
            / (12.0 * h)
    };
    let backward = |end: usize, h: f64| -> Complex64 {
        (25.0 * values[end] - 48.0 * values[end - 1] + 36.0 * values[end - 2]
            - 16.0 * values[end - 3]
            + 3.0 * values[end - 4])
            / (12.0 * h)
    };
    let h_minus = grid.nodes()[1] - grid.nodes()[0];
    let h_plus = grid.nodes()[ip + 1] - grid.nodes()[ip];
    [
        forward(0, h_minus),
        backward(im, h_minus),
        forward(ip, h_plus),
        backward(n - 1, h_plus),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize) -> Arc<CellGrid> {
        CellGrid::new(Medium::new(1.0, 4.0, 0.5).unwrap(), n).unwrap()
    }

    #[test]
    fn interface_is_duplicated_node() {
        let g = grid(64);
        let im = g.interface_minus();
        let ip = g.interface_plus();
        assert_eq!(ip, im + 1);
        assert_eq!(g.nodes()[im], 0.5);
        assert_eq!(g.nodes()[ip], 0.5);
        assert_eq!(g.phase_of(im), Phase::Minus);
        assert_eq!(g.phase_of(ip), Phase::Plus);
        assert_eq!(g.a_node(im), 1.0);
        assert_eq!(g.a_node(ip), 4.0);
        assert_eq!(g.nodes()[0], 0.0);
        assert_eq!(*g.nodes().last().unwrap(), 1.0);
    }

    #[test]
    fn weights_sum_to_one() {
        for n in [8, 64, 257] {
            let g = grid(n);
            let total: f64 = g.weights().iter().sum();
            assert!((total - 1.0).abs() < 1e-14, "n={n}, total={total}");
        }
    }

    #[test]
    fn simpson_is_exact_for_piecewise_cubics() {
        let g = grid(16);
        // f(y) = y^3 on the minus block, (1-y)^3 on the plus block;
        // exact integral l^4/4 + (1-l)^4/4 = 1/32
        let f = CellFunction::from_fn(g.clone(), |y, phase| {
            let v = match phase {
                Phase::Minus => y * y * y,
                Phase::Plus => (1.0 - y) * (1.0 - y) * (1.0 - y),
            };
            Complex64::new(v, 0.0)
        });
        let one = CellFunction::from_fn(g, |_, _| Complex64::new(1.0, 0.0));
        let integral = f.inner(&one);
        assert!((integral.re - 1.0 / 32.0).abs() < 1e-15);
        assert!(integral.im.abs() < 1e-16);
    }

    #[test]
    fn bloch_wave_has_unit_norm() {
        let g = grid(128);
        let w = CellFunction::from_fn(g, |y, _| Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * y));
        assert!((w.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn stiffness_integral_is_exact() {
        // blocks align with the jump, so Simpson integrates a(y) exactly
        let g = grid(12);
        let a = CellFunction::from_fn(g.clone(), |_, phase| {
            Complex64::new(
                match phase {
                    Phase::Minus => g.medium().a_minus(),
                    Phase::Plus => g.medium().a_plus(),
                },
                0.0,
            )
        });
        let one = CellFunction::from_fn(g, |_, _| Complex64::new(1.0, 0.0));
        let integral = a.inner(&one).re;
        assert!((integral - 2.5).abs() < 1e-14);
    }

    #[test]
    fn estimated_traces_converge_at_fourth_order() {
        let errs: Vec<f64> = [32usize, 64]
            .iter()
            .map(|&n| {
                let g = grid(n);
                let f = CellFunction::from_fn(g, |y, _| {
                    Complex64::from_polar(1.0, 3.0 * y) * (2.0 * y).cosh()
                });
                let exact = |y: f64| {
                    Complex64::from_polar(1.0, 3.0 * y)
                        * (Complex64::new(0.0, 3.0) * (2.0 * y).cosh() + 2.0 * (2.0 * y).sinh())
                };
                [0.0, 0.5, 0.5, 1.0]
                    .iter()
                    .enumerate()
                    .map(|(i, &y)| (f.deriv_trace(i) - exact(y)).norm())
                    .fold(0.0f64, f64::max)
            })
            .collect();
        let rate = (errs[0] / errs[1]).log2();
        assert!(rate > 3.5, "trace estimate order {rate}, errors {errs:?}");
    }

    #[test]
    fn linear_ops_carry_traces() {
        let g = grid(32);
        let f = CellFunction::from_fn(g.clone(), |y, _| Complex64::new(y * y, 0.0));
        let mut h = f.clone();
        h.axpy(Complex64::new(2.0, 0.0), &f);
        h.scale(Complex64::new(0.0, 1.0));
        let expect = Complex64::new(0.0, 3.0) * f.deriv_trace(TRACE_END);
        assert!((h.deriv_trace(TRACE_END) - expect).norm() < 1e-13);
    }

    #[test]
    fn asymmetric_interface_lands_on_node() {
        let m = Medium::new(2.0, 5.0, 1.0 / 3.0).unwrap();
        let g = CellGrid::new(m, 100).unwrap();
        let im = g.interface_minus();
        assert_eq!(g.nodes()[im], 1.0 / 3.0);
        assert_eq!(g.nodes()[im + 1], 1.0 / 3.0);
        let total: f64 = g.weights().iter().sum();
        assert!((total - 1.0).abs() < 1e-14);
    }
}
