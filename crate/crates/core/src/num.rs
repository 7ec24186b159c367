//! Scalar abstraction and numerically stable logistic-scale primitives.
//!
//! All model math is generic over [`Scalar`], which is implemented for `f32`
//! and `f64`. Probabilities are manipulated on the log scale wherever they can
//! underflow; the helpers here are the single source of truth for those
//! transforms.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign};

/// Floating-point scalar usable for model computations (f32 or f64).
pub trait Scalar:
    Float + FromPrimitive + NumAssign + Sum<Self> + Debug + Display + Send + Sync + 'static
{
}

impl<T> Scalar for T where
    T: Float + FromPrimitive + NumAssign + Sum<T> + Debug + Display + Send + Sync + 'static
{
}

/// Converts an `f64` constant into the working scalar type.
#[inline]
pub fn scalar<S: Scalar>(x: f64) -> S {
    S::from_f64(x).expect("f64 constant must be representable in the scalar type")
}

/// Converts a count into the working scalar type.
#[inline]
pub fn from_count<S: Scalar>(n: usize) -> S {
    S::from_usize(n).expect("count must be representable in the scalar type")
}

/// Inverse logit, computed from the negated magnitude so neither branch
/// overflows: expit(x) = 1/(1+e^{-x}) for x >= 0, e^x/(1+e^x) otherwise.
#[inline]
pub fn expit<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

/// Logit of a probability in (0, 1).
#[inline]
pub fn logit<S: Scalar>(p: S) -> S {
    (p / (S::one() - p)).ln()
}

/// ln(1 + e^x) without overflow for large |x|.
#[inline]
pub fn softplus<S: Scalar>(x: S) -> S {
    let cut = scalar::<S>(30.0);
    if x > cut {
        // e^{-x} below working precision
        x
    } else if x < -cut {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

/// log expit(x) = -softplus(-x); exact even when expit(x) underflows.
#[inline]
pub fn log_expit<S: Scalar>(x: S) -> S {
    -softplus(-x)
}

/// log(e^a + e^b) guarded against -inf inputs.
#[inline]
pub fn log_sum_exp_pair<S: Scalar>(a: S, b: S) -> S {
    if a == S::neg_infinity() {
        return b;
    }
    if b == S::neg_infinity() {
        return a;
    }
    if a >= b {
        a + (b - a).exp().ln_1p()
    } else {
        b + (a - b).exp().ln_1p()
    }
}

/// log sum of exponentials of a slice; empty input yields -inf.
pub fn log_sum_exp<S: Scalar>(xs: &[S]) -> S {
    let mut m = S::neg_infinity();
    for &x in xs {
        if x > m {
            m = x;
        }
    }
    if m == S::neg_infinity() {
        return m;
    }
    let mut acc = S::zero();
    for &x in xs {
        acc += (x - m).exp();
    }
    m + acc.ln()
}

/// Normalizes log weights into a probability vector (in place, linear scale).
pub fn normalize_from_log<S: Scalar>(log_w: &mut [S]) {
    let lse = log_sum_exp(log_w);
    for w in log_w.iter_mut() {
        *w = (*w - lse).exp();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn expit_matches_naive_in_safe_range() {
        for i in -40..=40 {
            let x = i as f64 / 4.0;
            assert_relative_eq!(expit(x), 1.0 / (1.0 + (-x).exp()), max_relative = 1e-14);
        }
    }

    #[test]
    fn expit_saturates_without_overflow() {
        assert_eq!(expit(800.0_f64), 1.0);
        assert_eq!(expit(-800.0_f64), 0.0);
        assert!(expit(-800.0_f32).is_finite());
    }

    #[test]
    fn log_expit_exact_in_tails() {
        // expit(-60) underflows relative to 1, but log expit(-60) = -60 - e^{-60}-ish
        assert_relative_eq!(log_expit(-60.0_f64), -60.0, max_relative = 1e-12);
        assert_relative_eq!(log_expit(60.0_f64), -(-60.0_f64).exp(), max_relative = 1e-6);
    }

    #[test]
    fn logit_inverts_expit() {
        for i in -30..=30 {
            let x = i as f64 / 3.0;
            assert_relative_eq!(logit(expit(x)), x, max_relative = 1e-10);
        }
    }

    #[test]
    fn log_sum_exp_handles_extremes() {
        assert_relative_eq!(
            log_sum_exp(&[1000.0_f64, 1000.0]),
            1000.0 + 2.0_f64.ln(),
            max_relative = 1e-14
        );
        assert_eq!(log_sum_exp::<f64>(&[]), f64::NEG_INFINITY);
        assert_eq!(
            log_sum_exp(&[f64::NEG_INFINITY, f64::NEG_INFINITY]),
            f64::NEG_INFINITY
        );
        assert_relative_eq!(
            log_sum_exp_pair(f64::NEG_INFINITY, -3.0),
            -3.0,
            max_relative = 1e-14
        );
    }

    #[test]
    fn normalize_from_log_sums_to_one() {
        let mut w = [-1000.0_f64, -1001.0, -999.5];
        normalize_from_log(&mut w);
        let total: f64 = w.iter().sum();
        assert_relative_eq!(total, 1.0, max_relative = 1e-12);
        assert!(w.iter().all(|&p| p > 0.0));
    }
}
