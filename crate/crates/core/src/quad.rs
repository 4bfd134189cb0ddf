//! Gauss–Legendre quadrature: fixed panels and an adaptive driver used as the
//! fallback when no closed-form integral is available.

use crate::error::{Error, Result};
use std::sync::OnceLock;

const GL_N: usize = 16;

/// Nodes and weights of the 16-point Gauss–Legendre rule on [-1, 1],
/// found by Newton iteration on the Legendre polynomial.
fn gl16() -> &'static ([f64; GL_N], [f64; GL_N]) {
    static CACHE: OnceLock<([f64; GL_N], [f64; GL_N])> = OnceLock::new();
    CACHE.get_or_init(|| {
        let n = GL_N;
        let mut nodes = [0.0; GL_N];
        let mut weights = [0.0; GL_N];
        for i in 0..n {
            // Chebyshev-style initial guess.
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            for _ in 0..100 {
                let (p, dp) = legendre(n, x);
                let dx = p / dp;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, dp) = legendre(n, x);
            nodes[i] = x;
            weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
        }
        (nodes, weights)
    })
}

/// Legendre polynomial P_n and its derivative at x.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

/// One Gauss–Legendre panel on [lo, hi].
pub(crate) fn gl_panel<F: Fn(f64) -> f64>(f: &F, lo: f64, hi: f64) -> f64 {
    let (nodes, weights) = gl16();
    let c = 0.5 * (hi - lo);
    let m = 0.5 * (hi + lo);
    let mut acc = 0.0;
    for i in 0..GL_N {
        acc += weights[i] * f(m + c * nodes[i]);
    }
    acc * c
}

/// Composite rule with a fixed number of equal panels.
pub(crate) fn gl_panels<F: Fn(f64) -> f64>(f: &F, lo: f64, hi: f64, panels: usize) -> f64 {
    let n = panels.max(1);
    let h = (hi - lo) / n as f64;
    (0..n).map(|k| gl_panel(f, lo + k as f64 * h, lo + (k + 1) as f64 * h)).sum()
}

/// Adaptive bisection on top of the 16-point rule, absolute tolerance.
pub(crate) fn adaptive_gl<F: Fn(f64) -> f64>(f: &F, lo: f64, hi: f64, tol: f64) -> Result<f64> {
    fn recurse<F: Fn(f64) -> f64>(
        f: &F,
        lo: f64,
        hi: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> Result<f64> {
        let mid = 0.5 * (lo + hi);
        let left = gl_panel(f, lo, mid);
        let right = gl_panel(f, mid, hi);
        let err = (left + right - whole).abs();
        if err <= tol || hi - lo < 1e-14 {
            return Ok(left + right);
        }
        if depth >= 48 {
            return Err(Error::Numeric(format!(
                "adaptive quadrature failed to converge on [{lo}, {hi}] (residual {err:.3e})"
            )));
        }
        Ok(recurse(f, lo, mid, left, 0.5 * tol, depth + 1)?
            + recurse(f, mid, hi, right, 0.5 * tol, depth + 1)?)
    }
    if hi <= lo {
        return Ok(0.0);
    }
    let whole = gl_panel(f, lo, hi);
    recurse(f, lo, hi, whole, tol, 0)
}
