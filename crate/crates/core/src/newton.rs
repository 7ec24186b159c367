//! Small dense Newton maximizer used by every M-step component.
//!
//! The objectives are smooth and concave near the optimum but not globally,
//! so each step is safeguarded: the Newton direction is taken only when the
//! negated Hessian admits a Cholesky factorization (i.e. the Hessian is
//! negative definite), otherwise a single gradient-ascent step is tried, and
//! the step length is halved until the objective does not decrease. Iterates
//! are projected into a box to tame quasi-separation.

use crate::error::{Error, Result};
use crate::num::{scalar, Scalar};

/// Dense symmetric matrix in row-major full storage.
#[derive(Debug, Clone)]
pub struct SymMatrix<S> {
    n: usize,
    a: Vec<S>,
}

impl<S: Scalar> SymMatrix<S> {
    pub fn zeros(n: usize) -> Self {
        SymMatrix {
            n,
            a: vec![S::zero(); n * n],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> S {
        self.a[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: S) {
        self.a[i * self.n + j] = v;
    }

    /// Adds `v` at (i, j) and mirrors it to (j, i) when off-diagonal.
    #[inline]
    pub fn add_sym(&mut self, i: usize, j: usize, v: S) {
        self.a[i * self.n + j] += v;
        if i != j {
            self.a[j * self.n + i] += v;
        }
    }

    /// Solves `A x = b` for symmetric positive definite `A` via Cholesky;
    /// returns `None` when a pivot is not strictly positive.
    pub fn solve_spd(&self, b: &[S]) -> Option<Vec<S>> {
        let n = self.n;
        debug_assert_eq!(b.len(), n);
        let mut l = vec![S::zero(); n * n];
        for j in 0..n {
            let mut d = self.get(j, j);
            for k in 0..j {
                d -= l[j * n + k] * l[j * n + k];
            }
            if !(d > S::zero()) || !d.is_finite() {
                return None;
            }
            let dj = d.sqrt();
            l[j * n + j] = dj;
            for i in j + 1..n {
                let mut s = self.get(i, j);
                for k in 0..j {
                    s -= l[i * n + k] * l[j * n + k];
                }
                l[i * n + j] = s / dj;
            }
        }
        // forward then backward substitution
        let mut y = vec![S::zero(); n];
        for i in 0..n {
            let mut s = b[i];
            for k in 0..i {
                s -= l[i * n + k] * y[k];
            }
            y[i] = s / l[i * n + i];
        }
        let mut x = vec![S::zero(); n];
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in i + 1..n {
                s -= l[k * n + i] * x[k];
            }
            x[i] = s / l[i * n + i];
        }
        if x.iter().any(|v| !v.is_finite()) {
            return None;
        }
        Some(x)
    }
}

/// A maximization problem over a free coordinate vector.
pub trait Objective<S: Scalar> {
    fn dim(&self) -> usize;

    /// Objective value only (used during line search).
    fn value(&self, x: &[S]) -> S;

    /// Value, gradient and Hessian at `x`.
    fn value_grad_hess(&self, x: &[S]) -> (S, Vec<S>, SymMatrix<S>);

    /// Projects `x` into the feasible box.
    fn clamp(&self, x: &mut [S]);
}

/// Result of a Newton maximization.
#[derive(Debug, Clone)]
pub struct NewtonOutcome<S> {
    pub x: Vec<S>,
    pub value: S,
    pub grad_norm: S,
    pub iterations: usize,
    /// Gradient norm reached the tolerance (as opposed to stalling).
    pub converged: bool,
    /// Some coordinate ended on the box boundary.
    pub clamped: bool,
}

const MAX_HALVINGS: usize = 30;

fn inf_norm<S: Scalar>(xs: &[S]) -> S {
    xs.iter().fold(S::zero(), |m, x| m.max(x.abs()))
}

/// Maximizes `obj` from `x0` by safeguarded Newton with step-halving.
///
/// Guarantees the returned value is at least the value at `x0` (up to the
/// objective's own evaluation noise): a step is accepted only if it does not
/// decrease the objective.
pub fn maximize<S: Scalar, O: Objective<S>>(
    obj: &O,
    mut x: Vec<S>,
    component: &'static str,
    max_iter: usize,
    grad_tol: S,
) -> Result<NewtonOutcome<S>> {
    debug_assert_eq!(x.len(), obj.dim());
    obj.clamp(&mut x);
    if x.is_empty() {
        return Ok(NewtonOutcome {
            x,
            value: S::zero(),
            grad_norm: S::zero(),
            iterations: 0,
            converged: true,
            clamped: false,
        });
    }
    let (mut f, mut g, mut h) = obj.value_grad_hess(&x);
    if !f.is_finite() {
        return Err(Error::MStepFailure {
            component,
            detail: format!("non-finite objective at the starting point (f = {f})"),
        });
    }

    let armijo = scalar::<S>(1e-4);
    let mut iterations = 0;
    let mut converged = false;
    let mut clamped = false;

    for _ in 0..max_iter {
        let gnorm = inf_norm(&g);
        if gnorm <= grad_tol {
            converged = true;
            break;
        }
        iterations += 1;

        // Newton direction requires -H positive definite
        let mut neg_h = SymMatrix::zeros(h.n());
        for i in 0..h.n() {
            for j in 0..h.n() {
                neg_h.set(i, j, -h.get(i, j));
            }
        }
        let newton_dir = neg_h.solve_spd(&g).filter(|d| {
            let slope: S = g.iter().zip(d).map(|(&gi, &di)| gi * di).sum();
            slope > S::zero()
        });
        let (dir, mut alpha) = match newton_dir {
            Some(d) => (d, S::one()),
            // single gradient-ascent step, scaled to unit max component
            None => (g.clone(), S::one() / S::one().max(gnorm)),
        };
        let slope: S = g.iter().zip(&dir).map(|(&gi, &di)| gi * di).sum();

        let mut accepted: Option<(Vec<S>, S)> = None;
        for _ in 0..MAX_HALVINGS {
            let mut xt: Vec<S> = x
                .iter()
                .zip(&dir)
                .map(|(&xi, &di)| xi + alpha * di)
                .collect();
            obj.clamp(&mut xt);
            let ft = obj.value(&xt);
            if ft.is_finite() && ft >= f + armijo * alpha * slope && ft >= f {
                accepted = Some((xt, ft));
                break;
            }
            alpha = alpha * scalar(0.5);
        }
        let Some((xt, ft)) = accepted else {
            // no non-decreasing step found; keep the current iterate
            break;
        };
        let raw: Vec<S> = x
            .iter()
            .zip(&dir)
            .map(|(&xi, &di)| xi + alpha * di)
            .collect();
        if raw != xt {
            // the accepted step was cut by the box: separation-style drift
            clamped = true;
        }
        let improvement = ft - f;
        x = xt;
        let refreshed = obj.value_grad_hess(&x);
        f = refreshed.0;
        g = refreshed.1;
        h = refreshed.2;
        if improvement <= scalar::<S>(1e-14) * (S::one() + f.abs()) {
            converged = inf_norm(&g) <= grad_tol;
            break;
        }
    }

    let gnorm = inf_norm(&g);
    if gnorm <= grad_tol {
        converged = true;
    }
    Ok(NewtonOutcome {
        value: f,
        grad_norm: gnorm,
        iterations,
        converged,
        clamped,
        x,
    })
}
