//! Scalar root finding, bounded 1-D maximization, orthogonal complements and
//! symmetric positive-definite solves.
//!
//! Everything here is a pure function of its arguments.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// A search interval `[lo, hi]` with `lo < hi`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarBracket {
    lo: f64,
    hi: f64,
}

impl ScalarBracket {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::InvalidBracket { lo, hi });
        }
        Ok(Self { lo, hi })
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

/// Stopping rules shared by the scalar solvers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    /// Absolute tolerance on the argument (bracket width).
    pub root_abs: f64,
    /// Absolute tolerance on the function residual.
    pub residual_abs: f64,
    pub max_iter: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            root_abs: 1e-10,
            residual_abs: 1e-10,
            max_iter: 200,
        }
    }
}

impl Tolerances {
    pub fn validate(&self) -> Result<()> {
        if self.root_abs > 0.0 && self.residual_abs > 0.0 && self.max_iter > 0 {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!(
                "tolerances must be strictly positive: {self:?}"
            )))
        }
    }
}

/// Bisection root finder.
///
/// Stops as soon as `|g(x)| <= residual_abs` or the bracket has shrunk to
/// `root_abs`. The returned point always lies inside the initial bracket.
pub fn bisect_root<G>(g: G, bracket: ScalarBracket, tol: Tolerances) -> Result<f64>
where
    G: Fn(f64) -> f64,
{
    let (mut lo, mut hi) = (bracket.lo, bracket.hi);
    let mut g_lo = g(lo);
    let g_hi = g(hi);
    if g_lo == 0.0 {
        return Ok(lo);
    }
    if g_hi == 0.0 {
        return Ok(hi);
    }
    if g_lo.signum() == g_hi.signum() || g_lo.is_nan() || g_hi.is_nan() {
        return Err(Error::NoSignChange { lo, hi });
    }
    for _ in 0..tol.max_iter {
        let mid = 0.5 * (lo + hi);
        let g_mid = g(mid);
        if g_mid.abs() <= tol.residual_abs || 0.5 * (hi - lo) <= tol.root_abs {
            return Ok(mid);
        }
        // Bracket collapsed to adjacent floats.
        if mid <= lo || mid >= hi {
            return Ok(mid);
        }
        if g_mid.signum() == g_lo.signum() {
            lo = mid;
            g_lo = g_mid;
        } else {
            hi = mid;
        }
    }
    Err(Error::MaxIterations {
        iterations: tol.max_iter,
    })
}

/// Location and value of a maximum found by [`maximize_1d`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Maximum {
    pub argmax: f64,
    pub value: f64,
}

const SCAN_POINTS: usize = 33;
const INV_PHI: f64 = 0.618_033_988_749_894_8;

/// Maximizes `u` on `[lo, hi]`.
///
/// A coarse uniform scan (endpoints included) picks the best cell, which is
/// then refined by golden-section search until it is narrower than
/// `tol.root_abs`. Endpoints are returned bit-exactly when they win, so a
/// maximum sitting on a constraint is reported on the constraint.
pub fn maximize_1d<U>(u: U, lo: f64, hi: f64, tol: Tolerances) -> Result<Maximum>
where
    U: Fn(f64) -> f64,
{
    let bracket = ScalarBracket::new(lo, hi)?;
    let step = bracket.width() / (SCAN_POINTS - 1) as f64;
    let grid = |i: usize| {
        if i + 1 == SCAN_POINTS {
            hi
        } else {
            lo + step * i as f64
        }
    };

    let mut best = Maximum {
        argmax: lo,
        value: f64::NEG_INFINITY,
    };
    let mut best_idx = 0;
    for i in 0..SCAN_POINTS {
        let x = grid(i);
        let v = u(x);
        if v > best.value {
            best = Maximum { argmax: x, value: v };
            best_idx = i;
        }
    }

    let mut a = grid(best_idx.saturating_sub(1));
    let mut b = grid((best_idx + 1).min(SCAN_POINTS - 1));
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = u(c);
    let mut fd = u(d);
    let mut iterations = 0;
    while b - a > tol.root_abs {
        if iterations == tol.max_iter {
            return Err(Error::MaxIterations {
                iterations: tol.max_iter,
            });
        }
        iterations += 1;
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = u(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = u(d);
        }
    }
    for (x, v) in [(c, fc), (d, fd)] {
        if v > best.value {
            best = Maximum { argmax: x, value: v };
        }
    }
    Ok(best)
}

/// Orthonormal basis of the orthogonal complement of `span(vectors)` in
/// `R^dim`, one basis vector per column.
///
/// The input set is orthonormalized first (vectors whose residual falls
/// below `1e-12` of the largest input norm count as dependent); the
/// complement is then grown by pivoted Gram–Schmidt over the canonical basis,
/// always taking the canonical direction with the largest residual.
pub fn orth_complement_basis(vectors: &[DVector<f64>], dim: usize) -> DMatrix<f64> {
    let max_norm = vectors.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let threshold = 1e-12 * max_norm;

    let mut span: Vec<DVector<f64>> = Vec::with_capacity(dim);
    for v in vectors {
        assert_eq!(v.len(), dim, "input vector length must equal dim");
        let mut r = v.clone();
        orthogonalize(&mut r, &span);
        let n = r.norm();
        if max_norm > 0.0 && n > threshold {
            span.push(r / n);
        }
    }
    let rank = span.len();

    let mut complement: Vec<DVector<f64>> = Vec::with_capacity(dim - rank);
    for _ in rank..dim {
        // Residual norm of e_j against the current span is 1 - |row j of Q|^2.
        let mut weight = vec![0.0; dim];
        for q in span.iter().chain(complement.iter()) {
            for (w, x) in weight.iter_mut().zip(q.iter()) {
                *w += x * x;
            }
        }
        let pivot = weight
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .map(|(j, _)| j)
            .expect("dim >= 1");
        let mut r = DVector::zeros(dim);
        r[pivot] = 1.0;
        let mut all = span.clone();
        all.extend(complement.iter().cloned());
        orthogonalize(&mut r, &all);
        let n = r.norm();
        complement.push(r / n);
    }

    let mut out = DMatrix::zeros(dim, complement.len());
    for (j, c) in complement.iter().enumerate() {
        out.set_column(j, c);
    }
    out
}

// Classical Gram-Schmidt applied twice.
fn orthogonalize(r: &mut DVector<f64>, basis: &[DVector<f64>]) {
    for _ in 0..2 {
        for q in basis {
            let proj = q.dot(r);
            r.axpy(-proj, q, 1.0);
        }
    }
}

/// Cholesky factor of a symmetric positive-definite matrix.
pub fn spd_factor(a: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    a.clone().cholesky().ok_or(Error::NotPositiveDefinite)
}

/// Solves `A x = b` for symmetric positive-definite `A`.
pub fn spd_solve(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    Ok(spd_factor(a)?.solve(b))
}
