//! Scalar numerical utilities shared across the crate: bracketed root
//! finding, least-squares slope fits on log axes, Richardson extrapolation,
//! and grid builders.

use crate::error::{Error, Result};

/// Relative tolerance used by [`bisect`] when the caller does not override it.
pub const ROOT_REL_TOL: f64 = 1e-13;

/// Iteration cap for bisection.
pub const ROOT_MAX_ITERS: usize = 200;

/// Bisection on a bracket [lo, hi] with f(lo)·f(hi) ≤ 0, refined to a
/// relative interval width of `rel_tol`, followed by a fixed number of
/// Newton steps using a centred finite-difference derivative. The Newton
/// polish is safeguarded: a step that leaves the bracket is discarded.
pub fn bisect<F: FnMut(f64) -> f64>(
    mut f: F,
    lo: f64,
    hi: f64,
    rel_tol: f64,
    index: usize,
) -> Result<f64> {
    let (mut lo, mut hi) = (lo, hi);
    let (mut flo, fhi) = (f(lo), f(hi));
    if flo == 0.0 {
        return Ok(lo);
    }
    if fhi == 0.0 {
        return Ok(hi);
    }
    if flo.signum() == fhi.signum() {
        return Err(Error::RootNotBracketed { lo, hi, index });
    }
    let mut iters = 0usize;
    while (hi - lo) > rel_tol * hi.abs().max(lo.abs()).max(f64::MIN_POSITIVE) {
        iters += 1;
        if iters > ROOT_MAX_ITERS {
            return Err(Error::NonConvergence { iters, residual: hi - lo });
        }
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break;
        }
        let fm = f(mid);
        if fm == 0.0 {
            lo = mid;
            hi = mid;
            break;
        }
        if fm.signum() == flo.signum() {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    let mut x = 0.5 * (lo + hi);
    let scale = x.abs().max(1.0);
    for _ in 0..3 {
        let h = 1e-7 * scale;
        let fp = (f(x + h) - f(x - h)) / (2.0 * h);
        if fp == 0.0 || !fp.is_finite() {
            break;
        }
        let step = f(x) / fp;
        let cand = x - step;
        if cand.is_finite() && cand > lo - (hi - lo) && cand < hi + (hi - lo) {
            x = cand;
        } else {
            break;
        }
    }
    Ok(x)
}

/// Least-squares straight line through (x_i, y_i); returns (slope, intercept).
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Result<(f64, f64)> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::invalid(format!(
            "linear fit needs two or more paired points, got {} and {}",
            xs.len(),
            ys.len()
        )));
    }
    let n = xs.len() as f64;
    let sx: f64 = xs.iter().sum();
    let sy: f64 = ys.iter().sum();
    let sxx: f64 = xs.iter().map(|x| x * x).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| x * y).sum();
    let denom = n * sxx - sx * sx;
    if denom.abs() < 1e-30 * sxx.abs().max(1.0) {
        return Err(Error::invalid("degenerate abscissae in linear fit".to_string()));
    }
    let slope = (n * sxy - sx * sy) / denom;
    let intercept = (sy - slope * sx) / n;
    Ok((slope, intercept))
}

/// Slope of log|y| against log x, ignoring pairs where y vanishes; the usual
/// convergence-rate estimator. Requires at least two usable points.
pub fn log_log_slope(xs: &[f64], ys: &[f64]) -> Result<f64> {
    let pairs: Vec<(f64, f64)> = xs
        .iter()
        .zip(ys)
        .filter(|(x, y)| **x > 0.0 && y.abs() > 0.0)
        .map(|(x, y)| (x.ln(), y.abs().ln()))
        .collect();
    let lx: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let ly: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    linear_fit(&lx, &ly).map(|(s, _)| s)
}

/// One Richardson step for a quantity with error C·hᵖ: given g(h) and g(h/2),
/// returns the p-th order extrapolant (2ᵖ·g(h/2) − g(h))/(2ᵖ − 1).
pub fn richardson(g_h: f64, g_half: f64, p: f64) -> f64 {
    let w = 2f64.powf(p);
    (w * g_half - g_h) / (w - 1.0)
}

/// Geometric grid of n points from `lo` to `hi` inclusive (both positive).
pub fn geometric_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    assert!(lo > 0.0 && hi > 0.0 && n >= 2, "geometric grid needs positive span");
    let ratio = (hi / lo).powf(1.0 / (n as f64 - 1.0));
    (0..n)
        .map(|i| if i == n - 1 { hi } else { lo * ratio.powi(i as i32) })
        .collect()
}

/// Uniform grid of n points from `lo` to `hi` inclusive.
pub fn uniform_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    assert!(n >= 2, "uniform grid needs at least two points");
    let h = (hi - lo) / (n as f64 - 1.0);
    (0..n)
        .map(|i| if i == n - 1 { hi } else { lo + h * i as f64 })
        .collect()
}
