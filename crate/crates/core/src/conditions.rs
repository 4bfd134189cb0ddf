//! Linear functionals on paths, represented as signed finite Borel measures
//! on [0, T]: point atoms plus a piecewise-polynomial density. Restricting to
//! this class keeps every integral in the library exact: a functional applied
//! to a piecewise-linear path or to a piecewise-polynomial function reduces to
//! closed-form polynomial integrals, so cross-method tests are not confounded
//! by quadrature error.

use crate::error::{Error, Result};
use crate::exppoly::{poly_eval, poly_integral, poly_mul, ExpPoly, Seg, Term};
use crate::kernel::Path;
use serde::{Deserialize, Serialize};

/// Point mass of weight `w` at time `t`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub t: f64,
    pub w: f64,
}

/// Polynomial on [lo, hi], coefficients ascending by degree.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolyPiece {
    pub lo: f64,
    pub hi: f64,
    pub coeffs: Vec<f64>,
}

impl PolyPiece {
    pub fn eval(&self, x: f64) -> f64 {
        poly_eval(&self.coeffs, x)
    }
}

/// Piecewise-polynomial function on [0, T]. Zero outside its pieces.
///
/// Evaluation at an interior piece boundary uses the lower piece (pieces are
/// read as left-open, right-closed); the left endpoint of the first piece
/// belongs to that piece.
#[derive(Clone, Debug, PartialEq)]
pub struct PiecewisePoly {
    pieces: Vec<PolyPiece>,
}

impl PiecewisePoly {
    pub fn new(mut pieces: Vec<PolyPiece>) -> Result<Self> {
        pieces.sort_by(|a, b| a.lo.total_cmp(&b.lo));
        for p in &pieces {
            if !(p.lo < p.hi) {
                return Err(Error::Domain(format!(
                    "piece [{}, {}] must satisfy lo < hi",
                    p.lo, p.hi
                )));
            }
        }
        for w in pieces.windows(2) {
            if w[1].lo < w[0].hi - 1e-14 {
                return Err(Error::Domain(format!(
                    "pieces [{}, {}] and [{}, {}] overlap",
                    w[0].lo, w[0].hi, w[1].lo, w[1].hi
                )));
            }
        }
        Ok(PiecewisePoly { pieces })
    }

    /// Constant function on [0, t_max].
    pub fn constant(value: f64, t_max: f64) -> Self {
        PiecewisePoly { pieces: vec![PolyPiece { lo: 0.0, hi: t_max, coeffs: vec![value] }] }
    }

    pub fn pieces(&self) -> &[PolyPiece] {
        &self.pieces
    }

    pub fn eval(&self, x: f64) -> f64 {
        if let Some(first) = self.pieces.first() {
            if x == first.lo {
                return first.eval(x);
            }
        }
        for p in &self.pieces {
            if p.lo < x && x <= p.hi {
                return p.eval(x);
            }
        }
        0.0
    }

    pub(crate) fn to_exppoly(&self) -> ExpPoly {
        ExpPoly::new(
            self.pieces
                .iter()
                .map(|p| Seg {
                    lo: p.lo,
                    hi: p.hi,
                    terms: p
                        .coeffs
                        .iter()
                        .enumerate()
                        .map(|(n, &c)| Term::poly(c, n as u32))
                        .collect(),
                })
                .collect(),
        )
    }
}

/// A signed finite Borel measure on [0, T], acting on continuous paths.
#[derive(Clone, Debug, PartialEq)]
pub struct Condition {
    horizon: f64,
    atoms: Vec<Atom>,
    density: Vec<PolyPiece>,
}

impl Condition {
    pub fn new(horizon: f64, mut atoms: Vec<Atom>, mut density: Vec<PolyPiece>) -> Result<Self> {
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::Domain(format!("horizon must be positive, got {horizon}")));
        }
        for a in &atoms {
            if !(0.0..=horizon).contains(&a.t) || !a.w.is_finite() {
                return Err(Error::Domain(format!(
                    "atom (t={}, w={}) outside [0, {horizon}]",
                    a.t, a.w
                )));
            }
        }
        atoms.sort_by(|a, b| a.t.total_cmp(&b.t));
        density.sort_by(|a, b| a.lo.total_cmp(&b.lo));
        for p in &density {
            if !(p.lo < p.hi) || p.lo < 0.0 || p.hi > horizon {
                return Err(Error::Domain(format!(
                    "density piece [{}, {}] invalid within [0, {horizon}]",
                    p.lo, p.hi
                )));
            }
        }
        for w in density.windows(2) {
            if w[1].lo < w[0].hi - 1e-14 {
                return Err(Error::Domain(format!(
                    "density pieces [{}, {}] and [{}, {}] overlap",
                    w[0].lo, w[0].hi, w[1].lo, w[1].hi
                )));
            }
        }
        Ok(Condition { horizon, atoms, density })
    }

    /// Point evaluation at the horizon: f -> f(T).
    pub fn endpoint(horizon: f64) -> Self {
        Condition::new(horizon, vec![Atom { t: horizon, w: 1.0 }], Vec::new()).unwrap()
    }

    /// Point evaluation at time t: f -> w * f(t).
    pub fn point(horizon: f64, t: f64, w: f64) -> Result<Self> {
        Condition::new(horizon, vec![Atom { t, w }], Vec::new())
    }

    /// The path integral: f -> int_0^T f(s) ds.
    pub fn unit_density(horizon: f64) -> Self {
        Condition::new(
            horizon,
            Vec::new(),
            vec![PolyPiece { lo: 0.0, hi: horizon, coeffs: vec![1.0] }],
        )
        .unwrap()
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn density(&self) -> &[PolyPiece] {
        &self.density
    }

    /// Linear combination of conditions over a common horizon.
    pub fn combine(terms: &[(f64, &Condition)]) -> Result<Condition> {
        let horizon = terms
            .first()
            .map(|(_, c)| c.horizon)
            .ok_or_else(|| Error::Domain("empty combination".into()))?;
        if terms.iter().any(|(_, c)| c.horizon != horizon) {
            return Err(Error::Domain("conditions have different horizons".into()));
        }
        let mut atoms: Vec<Atom> = Vec::new();
        for (alpha, c) in terms {
            for a in &c.atoms {
                atoms.push(Atom { t: a.t, w: alpha * a.w });
            }
        }
        atoms.sort_by(|a, b| a.t.total_cmp(&b.t));
        let mut merged: Vec<Atom> = Vec::new();
        for a in atoms {
            match merged.last_mut() {
                Some(last) if last.t == a.t => last.w += a.w,
                _ => merged.push(a),
            }
        }
        merged.retain(|a| a.w != 0.0);

        // Re-segment densities over the union of piece boundaries.
        let mut cuts: Vec<f64> = Vec::new();
        for (_, c) in terms {
            for p in &c.density {
                cuts.push(p.lo);
                cuts.push(p.hi);
            }
        }
        cuts.sort_by(f64::total_cmp);
        cuts.dedup();
        let mut density = Vec::new();
        for w in cuts.windows(2) {
            let (lo, hi) = (w[0], w[1]);
            let mid = 0.5 * (lo + hi);
            let mut coeffs: Vec<f64> = Vec::new();
            for (alpha, c) in terms {
                for p in &c.density {
                    if p.lo <= mid && mid < p.hi {
                        if coeffs.len() < p.coeffs.len() {
                            coeffs.resize(p.coeffs.len(), 0.0);
                        }
                        for (k, &v) in p.coeffs.iter().enumerate() {
                            coeffs[k] += alpha * v;
                        }
                    }
                }
            }
            if coeffs.iter().any(|&v| v != 0.0) {
                density.push(PolyPiece { lo, hi, coeffs });
            }
        }
        Condition::new(horizon, merged, density)
    }

    pub fn scaled(&self, alpha: f64) -> Condition {
        Condition::combine(&[(alpha, self)]).expect("scaling preserves validity")
    }

    /// Apply the functional to a path, read as the piecewise-linear
    /// interpolant of its grid values. Exact: polynomial x linear segments
    /// are integrated in closed form.
    pub fn apply(&self, path: &Path) -> Result<f64> {
        let (span_lo, span_hi) = path.span();
        let mut acc = 0.0;
        for a in &self.atoms {
            if a.t < span_lo || a.t > span_hi {
                return Err(Error::Domain(format!(
                    "atom at t={} outside path span [{span_lo}, {span_hi}]",
                    a.t
                )));
            }
            acc += a.w * path.value_at(a.t);
        }
        for p in &self.density {
            if p.lo < span_lo - 1e-12 || p.hi > span_hi + 1e-12 {
                return Err(Error::Domain(format!(
                    "density piece [{}, {}] outside path span [{span_lo}, {span_hi}]",
                    p.lo, p.hi
                )));
            }
            acc += path.integrate_against_poly(p);
        }
        Ok(acc)
    }

    /// Exact integral of a piecewise polynomial against the restriction of
    /// the measure to (lo, hi]: atoms exactly at `lo` are excluded, atoms at
    /// `hi` included.
    pub fn apply_poly(&self, q: &PiecewisePoly, lo: f64, hi: f64) -> f64 {
        let mut acc = 0.0;
        for a in &self.atoms {
            if a.t > lo && a.t <= hi {
                acc += a.w * q.eval(a.t);
            }
        }
        for dp in &self.density {
            let a = dp.lo.max(lo);
            let b = dp.hi.min(hi);
            if b <= a {
                continue;
            }
            for qp in q.pieces() {
                let qa = qp.lo.max(a);
                let qb = qp.hi.min(b);
                if qb > qa {
                    acc += poly_integral(&poly_mul(&dp.coeffs, &qp.coeffs), qa, qb);
                }
            }
        }
        acc
    }

    /// Same restriction convention as [`apply_poly`](Self::apply_poly), for
    /// the internal exponential-polynomial carriers.
    pub(crate) fn apply_exppoly(&self, q: &ExpPoly, lo: f64, hi: f64) -> f64 {
        let mut acc = 0.0;
        for a in &self.atoms {
            if a.t > lo && a.t <= hi {
                acc += a.w * q.eval(a.t);
            }
        }
        let dens = self.density_exppoly();
        acc + dens.mul(q).integral(lo, hi)
    }

    /// Atom part of the restricted application, exposed for carriers that
    /// handle their smooth part separately.
    pub(crate) fn atom_apply<F: Fn(f64) -> f64>(&self, f: F, lo: f64, hi: f64) -> f64 {
        self.atoms.iter().filter(|a| a.t > lo && a.t <= hi).map(|a| a.w * f(a.t)).sum()
    }

    pub(crate) fn density_exppoly(&self) -> ExpPoly {
        ExpPoly::new(
            self.density
                .iter()
                .map(|p| Seg {
                    lo: p.lo,
                    hi: p.hi,
                    terms: p
                        .coeffs
                        .iter()
                        .enumerate()
                        .map(|(n, &c)| Term::poly(c, n as u32))
                        .collect(),
                })
                .collect(),
        )
    }

    /// Density value at x (left-open right-closed pieces; the left endpoint
    /// of the first piece belongs to it).
    pub(crate) fn density_value(&self, x: f64) -> f64 {
        if let Some(first) = self.density.first() {
            if x == first.lo {
                return first.eval(x);
            }
        }
        for p in &self.density {
            if p.lo < x && x <= p.hi {
                return p.eval(x);
            }
        }
        0.0
    }

    /// Apply the functional restricted to [0, hi] (atoms exactly at hi
    /// included) to a path covering that range.
    pub(crate) fn apply_up_to(&self, path: &Path, hi: f64) -> f64 {
        let mut acc: f64 =
            self.atoms.iter().filter(|a| a.t <= hi).map(|a| a.w * path.value_at(a.t)).sum();
        for p in &self.density {
            let b = p.hi.min(hi);
            if b > p.lo {
                acc += path.integrate_against_poly(&PolyPiece {
                    lo: p.lo,
                    hi: b,
                    coeffs: p.coeffs.clone(),
                });
            }
        }
        acc
    }

    /// c([x, T]): total mass from x (inclusive) to the horizon.
    pub fn tail_mass(&self, x: f64) -> f64 {
        let atom_part: f64 = self.atoms.iter().filter(|a| a.t >= x).map(|a| a.w).sum();
        let dens_part: f64 = self
            .density
            .iter()
            .filter(|p| p.hi > x)
            .map(|p| poly_integral(&p.coeffs, p.lo.max(x), p.hi))
            .sum();
        atom_part + dens_part
    }

    /// Total variation: sum of |atom weights| plus the integral of |density|.
    pub fn total_variation(&self) -> f64 {
        let atom_part: f64 = self.atoms.iter().map(|a| a.w.abs()).sum();
        let dens_part: f64 = self.density.iter().map(|p| poly_abs_integral(&p.coeffs, p.lo, p.hi)).sum();
        atom_part + dens_part
    }
}

/// Integral of |p(x)| over [lo, hi]: isolate sign changes by scanning and
/// bisection, then integrate signed pieces exactly.
fn poly_abs_integral(coeffs: &[f64], lo: f64, hi: f64) -> f64 {
    const SCAN: usize = 256;
    let h = (hi - lo) / SCAN as f64;
    let mut cuts = vec![lo];
    let mut prev = poly_eval(coeffs, lo);
    for k in 1..=SCAN {
        let x = lo + k as f64 * h;
        let v = poly_eval(coeffs, x);
        if v == 0.0 {
            // root exactly on a scan node
            cuts.push(x);
        } else if prev * v < 0.0 {
            let (mut a, mut b) = (x - h, x);
            for _ in 0..80 {
                let m = 0.5 * (a + b);
                if poly_eval(coeffs, a) * poly_eval(coeffs, m) <= 0.0 {
                    b = m;
                } else {
                    a = m;
                }
            }
            cuts.push(0.5 * (a + b));
        }
        if v != 0.0 {
            prev = v;
        }
    }
    cuts.push(hi);
    let mut acc = 0.0;
    for w in cuts.windows(2) {
        acc += poly_integral(coeffs, w[0], w[1]).abs();
    }
    acc
}
