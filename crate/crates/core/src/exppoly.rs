//! Piecewise exponential-polynomial functions: finite sums of
//! `c * x^n * exp(a*x)` on disjoint intervals.
//!
//! This class is closed under addition, multiplication and antidifferentiation,
//! which is what makes every kernel/measure integral in the library exact for
//! the built-in kernels (polynomial factors have rate 0, exponential factors a
//! nonzero rate). Rates very close to zero are integrated through a series
//! fallback to avoid the cancellation in the closed-form antiderivative.

// ---------------------------------------------------------------------------
// plain polynomial helpers (coefficients ascending by degree)
// ---------------------------------------------------------------------------

pub(crate) fn poly_eval(coeffs: &[f64], x: f64) -> f64 {
    let mut acc = 0.0;
    for &c in coeffs.iter().rev() {
        acc = acc * x + c;
    }
    acc
}

pub(crate) fn poly_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, &ai) in a.iter().enumerate() {
        for (j, &bj) in b.iter().enumerate() {
            out[i + j] += ai * bj;
        }
    }
    out
}

/// Exact integral of a polynomial over [lo, hi].
pub(crate) fn poly_integral(coeffs: &[f64], lo: f64, hi: f64) -> f64 {
    let mut acc = 0.0;
    for (n, &c) in coeffs.iter().enumerate() {
        acc += c * int_pow(lo, hi, n as u32);
    }
    acc
}

/// (hi^{n+1} - lo^{n+1}) / (n+1)
pub(crate) fn int_pow(lo: f64, hi: f64, n: u32) -> f64 {
    let m = n as i32 + 1;
    (hi.powi(m) - lo.powi(m)) / m as f64
}

/// Exact integral of x^n * exp(a*x) over [lo, hi].
///
/// Closed form when the exponent varies enough over the interval; otherwise a
/// rapidly converging series in `a` (the closed-form coefficients scale like
/// n!/a^{n+1} and cancel catastrophically as a -> 0).
pub(crate) fn int_xn_exp(n: u32, a: f64, lo: f64, hi: f64) -> f64 {
    if a == 0.0 {
        return int_pow(lo, hi, n);
    }
    if a.abs() * lo.abs().max(hi.abs()) < 0.25 {
        let mut acc = 0.0;
        let mut fac = 1.0; // a^k / k!
        for k in 0..60u32 {
            let term = fac * int_pow(lo, hi, n + k);
            acc += term;
            if term.abs() <= 1e-18 * acc.abs().max(1e-300) {
                break;
            }
            fac *= a / (k as f64 + 1.0);
        }
        return acc;
    }
    exp_antideriv_eval(n, a, hi) - exp_antideriv_eval(n, a, lo)
}

/// Antiderivative of x^n e^{ax} for a != 0, evaluated at x:
/// e^{ax} * sum_k s_k x^{n-k} with s_0 = 1/a, s_k = -(n-k+1)/a * s_{k-1}.
fn exp_antideriv_eval(n: u32, a: f64, x: f64) -> f64 {
    let mut s = 1.0 / a;
    let mut acc = s * x.powi(n as i32);
    for k in 1..=n {
        s *= -((n - k + 1) as f64) / a;
        acc += s * x.powi((n - k) as i32);
    }
    acc * (a * x).exp()
}

/// Integrals of x^m sin(w x) and x^m cos(w x) over [lo, hi], w != 0.
/// Returns (sin-integral, cos-integral). Standard integration-by-parts
/// recursion; the frequencies used here are bounded away from zero.
pub(crate) fn int_xn_trig(m: u32, w: f64, lo: f64, hi: f64) -> (f64, f64) {
    assert!(w != 0.0, "trig integral frequency must be nonzero");
    let brack = |f: &dyn Fn(f64) -> f64| f(hi) - f(lo);
    let mut s = brack(&|x: f64| -(w * x).cos() / w);
    let mut c = brack(&|x: f64| (w * x).sin() / w);
    for k in 1..=m {
        let kf = k as f64;
        let s_next = brack(&|x: f64| -x.powi(k as i32) * (w * x).cos() / w) + kf / w * c;
        let c_next = brack(&|x: f64| x.powi(k as i32) * (w * x).sin() / w) - kf / w * s;
        s = s_next;
        c = c_next;
    }
    (s, c)
}

// ---------------------------------------------------------------------------
// exponential-polynomial terms and piecewise functions
// ---------------------------------------------------------------------------

/// One term `coeff * x^pow * exp(rate * x)`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Term {
    pub coeff: f64,
    pub pow: u32,
    pub rate: f64,
}

impl Term {
    pub fn poly(coeff: f64, pow: u32) -> Self {
        Term { coeff, pow, rate: 0.0 }
    }

    pub fn eval(&self, x: f64) -> f64 {
        let e = if self.rate == 0.0 { 1.0 } else { (self.rate * x).exp() };
        self.coeff * x.powi(self.pow as i32) * e
    }

    pub fn integral(&self, lo: f64, hi: f64) -> f64 {
        self.coeff * int_xn_exp(self.pow, self.rate, lo, hi)
    }

    fn mul(&self, other: &Term) -> Term {
        Term {
            coeff: self.coeff * other.coeff,
            pow: self.pow + other.pow,
            rate: self.rate + other.rate,
        }
    }
}

/// Antiderivative of a term list as a term list (constant of integration 0).
fn antiderivative(terms: &[Term]) -> Vec<Term> {
    let mut out = Vec::new();
    for t in terms {
        if t.rate == 0.0 {
            out.push(Term::poly(t.coeff / (t.pow as f64 + 1.0), t.pow + 1));
        } else {
            let mut s = t.coeff / t.rate;
            out.push(Term { coeff: s, pow: t.pow, rate: t.rate });
            for k in 1..=t.pow {
                s *= -((t.pow - k + 1) as f64) / t.rate;
                out.push(Term { coeff: s, pow: t.pow - k, rate: t.rate });
            }
        }
    }
    merge_terms(out)
}

fn merge_terms(mut terms: Vec<Term>) -> Vec<Term> {
    terms.sort_by_key(|t| (t.pow, t.rate.to_bits()));
    let mut out: Vec<Term> = Vec::with_capacity(terms.len());
    for t in terms {
        match out.last_mut() {
            Some(last) if last.pow == t.pow && last.rate == t.rate => last.coeff += t.coeff,
            _ => out.push(t),
        }
    }
    out.retain(|t| t.coeff != 0.0);
    out
}

fn eval_terms(terms: &[Term], x: f64) -> f64 {
    terms.iter().map(|t| t.eval(x)).sum()
}

/// One interval [lo, hi] carrying a term sum.
#[derive(Clone, Debug)]
pub(crate) struct Seg {
    pub lo: f64,
    pub hi: f64,
    pub terms: Vec<Term>,
}

/// Piecewise exponential-polynomial function. Zero outside its segments.
#[derive(Clone, Debug, Default)]
pub(crate) struct ExpPoly {
    pub segs: Vec<Seg>,
}

impl ExpPoly {
    pub fn new(mut segs: Vec<Seg>) -> Self {
        segs.retain(|s| s.hi > s.lo);
        segs.sort_by(|a, b| a.lo.total_cmp(&b.lo));
        ExpPoly { segs }
    }

    pub fn zero() -> Self {
        ExpPoly { segs: Vec::new() }
    }

    /// Constant function on [lo, hi].
    pub fn constant(value: f64, lo: f64, hi: f64) -> Self {
        ExpPoly::new(vec![Seg { lo, hi, terms: vec![Term::poly(value, 0)] }])
    }

    pub fn support(&self) -> Option<(f64, f64)> {
        if self.segs.is_empty() {
            None
        } else {
            Some((self.segs[0].lo, self.segs[self.segs.len() - 1].hi))
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        // Segments are disjoint; boundary points take the earlier segment
        // (the carried functions are continuous, so ties are immaterial).
        for s in &self.segs {
            if x >= s.lo && x <= s.hi {
                return eval_terms(&s.terms, x);
            }
        }
        0.0
    }

    pub fn integral(&self, lo: f64, hi: f64) -> f64 {
        let mut acc = 0.0;
        for s in &self.segs {
            let a = s.lo.max(lo);
            let b = s.hi.min(hi);
            if b > a {
                acc += s.terms.iter().map(|t| t.integral(a, b)).sum::<f64>();
            }
        }
        acc
    }

    pub fn add(&self, other: &ExpPoly) -> ExpPoly {
        let mut cuts: Vec<f64> = Vec::new();
        for s in self.segs.iter().chain(other.segs.iter()) {
            cuts.push(s.lo);
            cuts.push(s.hi);
        }
        cuts.sort_by(f64::total_cmp);
        cuts.dedup();
        let mut segs = Vec::new();
        for w in cuts.windows(2) {
            let (lo, hi) = (w[0], w[1]);
            let mid = 0.5 * (lo + hi);
            let mut terms = Vec::new();
            for src in [self, other] {
                if let Some(seg) = src.seg_containing(mid) {
                    terms.extend_from_slice(&seg.terms);
                }
            }
            let terms = merge_terms(terms);
            if !terms.is_empty() {
                segs.push(Seg { lo, hi, terms });
            }
        }
        ExpPoly::new(segs)
    }

    pub fn mul(&self, other: &ExpPoly) -> ExpPoly {
        let mut cuts: Vec<f64> = Vec::new();
        for s in self.segs.iter().chain(other.segs.iter()) {
            cuts.push(s.lo);
            cuts.push(s.hi);
        }
        cuts.sort_by(f64::total_cmp);
        cuts.dedup();
        let mut segs = Vec::new();
        for w in cuts.windows(2) {
            let (lo, hi) = (w[0], w[1]);
            let mid = 0.5 * (lo + hi);
            let (a, b) = (self.seg_containing(mid), other.seg_containing(mid));
            if let (Some(a), Some(b)) = (a, b) {
                let mut terms = Vec::new();
                for ta in &a.terms {
                    for tb in &b.terms {
                        terms.push(ta.mul(tb));
                    }
                }
                let terms = merge_terms(terms);
                if !terms.is_empty() {
                    segs.push(Seg { lo, hi, terms });
                }
            }
        }
        ExpPoly::new(segs)
    }

    fn seg_containing(&self, x: f64) -> Option<&Seg> {
        self.segs.iter().find(|s| x >= s.lo && x <= s.hi)
    }

    /// Evaluation preferring the segment to the right of a shared boundary
    /// (for right-derivatives of functions with corners).
    pub fn eval_from_right(&self, x: f64) -> f64 {
        for s in &self.segs {
            if x >= s.lo && x < s.hi {
                return eval_terms(&s.terms, x);
            }
        }
        self.eval(x)
    }

    /// Exact termwise derivative.
    pub fn derivative(&self) -> ExpPoly {
        let segs = self
            .segs
            .iter()
            .map(|s| {
                let mut terms = Vec::with_capacity(2 * s.terms.len());
                for t in &s.terms {
                    if t.pow > 0 {
                        terms.push(Term {
                            coeff: t.coeff * t.pow as f64,
                            pow: t.pow - 1,
                            rate: t.rate,
                        });
                    }
                    if t.rate != 0.0 {
                        terms.push(Term { coeff: t.coeff * t.rate, pow: t.pow, rate: t.rate });
                    }
                }
                Seg { lo: s.lo, hi: s.hi, terms: merge_terms(terms) }
            })
            .collect();
        ExpPoly { segs }
    }

    /// x -> integral of self over [support_lo, x], as an ExpPoly on the
    /// support (constant across interior gaps).
    pub fn prefix_integral(&self) -> ExpPoly {
        let mut segs = Vec::new();
        let mut head = 0.0;
        let mut prev_hi: Option<f64> = None;
        for s in &self.segs {
            if let Some(ph) = prev_hi {
                if s.lo > ph {
                    segs.push(Seg { lo: ph, hi: s.lo, terms: vec![Term::poly(head, 0)] });
                }
            }
            let anti = antiderivative(&s.terms);
            let at_lo = eval_terms(&anti, s.lo);
            let mut terms = anti;
            terms.push(Term::poly(head - at_lo, 0));
            let total = s.terms.iter().map(|t| t.integral(s.lo, s.hi)).sum::<f64>();
            head += total;
            segs.push(Seg { lo: s.lo, hi: s.hi, terms: merge_terms(terms) });
            prev_hi = Some(s.hi);
        }
        ExpPoly::new(segs)
    }

    /// x -> integral of self over [x, support_hi], as an ExpPoly on the
    /// support (constant across interior gaps).
    pub fn suffix_integral(&self) -> ExpPoly {
        let mut segs = Vec::new();
        let mut tail = 0.0;
        let mut prev_lo: Option<f64> = None;
        for s in self.segs.iter().rev() {
            if let Some(pl) = prev_lo {
                if s.hi < pl {
                    segs.push(Seg { lo: s.hi, hi: pl, terms: vec![Term::poly(tail, 0)] });
                }
            }
            let anti = antiderivative(&s.terms);
            let at_hi = eval_terms(&anti, s.hi);
            let mut terms: Vec<Term> =
                anti.into_iter().map(|t| Term { coeff: -t.coeff, ..t }).collect();
            terms.push(Term::poly(tail + at_hi, 0));
            let total = s.terms.iter().map(|t| t.integral(s.lo, s.hi)).sum::<f64>();
            tail += total;
            segs.push(Seg { lo: s.lo, hi: s.hi, terms: merge_terms(terms) });
            prev_lo = Some(s.lo);
        }
        ExpPoly::new(segs)
    }
}
