//! Link functions mapping parameters plus covariates to probabilities: the
//! Rasch response curve, the softmax for cluster-class membership, and the
//! cumulative ("global") logit parametrization of the ordinal latent states.
//!
//! Every linear-scale function has a log-scale twin; the log versions stay
//! exact when the linear probabilities underflow, and the estimation code
//! uses only those.

use crate::error::{Error, Result};
use crate::num::{expit, log_expit, log_sum_exp, scalar, Scalar};
use crate::params::Parameters;

/// Probability of a correct response for ability `theta_v` and difficulty
/// `beta_d`: expit(theta - beta), overflow-safe for large gaps.
pub fn rasch_prob<S: Scalar>(theta_v: S, beta_d: S) -> Result<S> {
    if !theta_v.is_finite() || !beta_d.is_finite() {
        return Err(Error::invalid_argument(
            "rasch_prob requires finite ability and difficulty",
        ));
    }
    Ok(expit(theta_v - beta_d))
}

/// (log lambda, log(1 - lambda)) for the Rasch curve; exact in both tails.
#[inline]
pub(crate) fn log_rasch_prob_pair<S: Scalar>(theta_v: S, beta_d: S) -> (S, S) {
    let x = theta_v - beta_d;
    (log_expit(x), log_expit(-x))
}

/// Inverts cumulative logits `g = (g_2, .., g_k)` into the probability vector
/// `(pi_1, .., pi_k)` with `pi_v = expit(g_v) - expit(g_{v+1})`.
///
/// Adjacent ties yield an exact zero probability; a strictly increasing step
/// would produce a negative probability and is rejected, which signals a
/// broken ordering constraint upstream.
pub fn invert_global_logits<S: Scalar>(g: &[S]) -> Result<Vec<S>> {
    log_global_logit_probs(g).map(|log_p| log_p.into_iter().map(|lp| lp.exp()).collect())
}

/// Log-scale version of [`invert_global_logits`]; entries can be `-inf` when
/// a category has exactly zero probability.
pub fn log_global_logit_probs<S: Scalar>(g: &[S]) -> Result<Vec<S>> {
    for w in g.windows(2) {
        if w[1] > w[0] {
            return Err(Error::ConstraintViolation(format!(
                "cumulative logits must be non-increasing, got step {} -> {}",
                w[0], w[1]
            )));
        }
    }
    let k = g.len() + 1;
    let mut out = Vec::with_capacity(k);
    if k == 1 {
        out.push(S::zero()); // log 1
        return Ok(out);
    }
    // pi_1 = 1 - expit(g_2) = expit(-g_2)
    out.push(log_expit(-g[0]));
    // pi_v = expit(g_v) - expit(g_{v+1})
    //      = expit(g_v) * expit(-g_{v+1}) * (1 - e^{g_{v+1} - g_v})
    for v in 1..k - 1 {
        let hi = g[v - 1];
        let lo = g[v];
        let tail = if lo == hi {
            S::neg_infinity()
        } else {
            (-((lo - hi).exp())).ln_1p()
        };
        out.push(log_expit(hi) + log_expit(-lo) + tail);
    }
    // pi_k = expit(g_k)
    out.push(log_expit(g[k - 2]));
    Ok(out)
}

impl<S: Scalar> Parameters<S> {
    /// Cluster-class membership probabilities for cluster covariates `x`,
    /// softmax over `gamma0[u] + x' gamma1[u]` with class 1 as reference.
    pub fn cluster_class_probs(&self, x: &[S]) -> Result<Vec<S>> {
        self.log_cluster_class_probs(x)
            .map(|lp| lp.into_iter().map(|l| l.exp()).collect())
    }

    /// Log-scale cluster-class membership probabilities.
    pub fn log_cluster_class_probs(&self, x: &[S]) -> Result<Vec<S>> {
        if x.len() != self.dims.p_cluster {
            return Err(Error::dims("cluster covariates", self.dims.p_cluster, x.len()));
        }
        let mut logits = Vec::with_capacity(self.dims.k1);
        logits.push(S::zero());
        for u in 0..self.dims.k1 - 1 {
            let mut a = self.gamma0[u];
            for (xi, gi) in x.iter().zip(&self.gamma1[u]) {
                a += *xi * *gi;
            }
            logits.push(a);
        }
        let lse = log_sum_exp(&logits);
        Ok(logits.into_iter().map(|a| a - lse).collect())
    }

    /// Cumulative logits of the initial-state distribution for class `u`
    /// (0-based) and occasion-1 covariates `z`; length k2 - 1.
    pub fn initial_global_logits(&self, z: &[S], u: usize) -> Result<Vec<S>> {
        if u >= self.dims.k1 {
            return Err(Error::invalid_argument(format!(
                "class index {u} out of range (k1 = {})",
                self.dims.k1
            )));
        }
        if z.len() != self.dims.p_subject {
            return Err(Error::dims("subject covariates", self.dims.p_subject, z.len()));
        }
        if self.dims.k2 == 1 {
            return Ok(Vec::new());
        }
        let class_term = if u == 0 { S::zero() } else { self.delta0[u - 1] };
        let mut shared = class_term;
        for (zi, di) in z.iter().zip(&self.delta2) {
            shared += *zi * *di;
        }
        Ok(self.delta1.iter().map(|&d1| shared + d1).collect())
    }

    /// Initial-state probabilities `pi(v | u)` for class `u` (0-based).
    pub fn initial_probs(&self, z: &[S], u: usize) -> Result<Vec<S>> {
        invert_global_logits(&self.initial_global_logits(z, u)?)
    }

    /// Log-scale initial-state probabilities.
    pub fn log_initial_probs(&self, z: &[S], u: usize) -> Result<Vec<S>> {
        log_global_logit_probs(&self.initial_global_logits(z, u)?)
    }

    /// Cumulative logits of one transition row: from state `v0` (0-based) at
    /// occasion `t` (0-based, `t >= 1`) for class `u` (0-based).
    pub fn transition_global_logits(
        &self,
        z: &[S],
        u: usize,
        t: usize,
        v0: usize,
    ) -> Result<Vec<S>> {
        if t < 1 || t >= self.dims.n_occasions {
            return Err(Error::invalid_argument(format!(
                "transition occasion {t} out of range 1..{}",
                self.dims.n_occasions
            )));
        }
        if u >= self.dims.k1 || v0 >= self.dims.k2 {
            return Err(Error::invalid_argument(
                "class or state index out of range".to_string(),
            ));
        }
        if z.len() != self.dims.p_subject {
            return Err(Error::dims("subject covariates", self.dims.p_subject, z.len()));
        }
        if self.dims.k2 == 1 {
            return Ok(Vec::new());
        }
        let ti = t - 1;
        let class_term = if u == 0 { S::zero() } else { self.eta0[ti][u - 1] };
        let mut shared = class_term;
        for (zi, ei) in z.iter().zip(&self.eta2[ti]) {
            shared += *zi * *ei;
        }
        Ok(self.eta1[ti][v0].iter().map(|&e1| shared + e1).collect())
    }

    /// Row-stochastic k2 x k2 transition matrix into occasion `t` (0-based,
    /// `t >= 1`) for class `u` (0-based); row `v0`, column `v1`.
    pub fn transition_matrix(&self, z: &[S], u: usize, t: usize) -> Result<Vec<Vec<S>>> {
        (0..self.dims.k2)
            .map(|v0| invert_global_logits(&self.transition_global_logits(z, u, t, v0)?))
            .collect()
    }

    /// Log-scale transition matrix.
    pub fn log_transition_matrix(&self, z: &[S], u: usize, t: usize) -> Result<Vec<Vec<S>>> {
        (0..self.dims.k2)
            .map(|v0| log_global_logit_probs(&self.transition_global_logits(z, u, t, v0)?))
            .collect()
    }
}

/// Forward construction used by the round-trip property: cumulative logits of
/// a strictly positive probability vector.
pub fn global_logits_of<S: Scalar>(pi: &[S]) -> Vec<S> {
    let k = pi.len();
    let mut out = Vec::with_capacity(k.saturating_sub(1));
    let mut tail = pi.iter().copied().sum::<S>();
    for v in 0..k.saturating_sub(1) {
        tail -= pi[v];
        // logit of P(V >= v+1)
        out.push((tail / (S::one() - tail)).ln());
    }
    out
}

/// Clamp used when initializing difficulties from observed frequencies.
pub(crate) fn clamp_unit_interval<S: Scalar>(p: S) -> S {
    p.max(scalar(0.01)).min(scalar(0.99))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{ModelDims, Parameters};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn rasch_prob_reference_values() {
        // symmetry of the logistic at zero
        assert_relative_eq!(rasch_prob(1.3, 1.3).unwrap(), 0.5, max_relative = 1e-14);
        // expit(ln 3) = 3/4
        assert_relative_eq!(
            rasch_prob(3.0_f64.ln(), 0.0).unwrap(),
            0.75,
            max_relative = 1e-14
        );
        // direct expit evaluation at a published ability level
        assert_relative_eq!(
            rasch_prob(2.698, 0.0).unwrap(),
            0.9369,
            epsilon = 5e-5
        );
        assert!(rasch_prob(f64::NAN, 0.0).is_err());
        assert!(rasch_prob(0.0, f64::INFINITY).is_err());
    }

    #[test]
    fn rasch_prob_monotone_on_grids() {
        let grid: Vec<f64> = (-20..=20).map(|i| i as f64 / 2.0).collect();
        for &b in &grid {
            let mut last = -1.0;
            for &t in &grid {
                let p = rasch_prob(t, b).unwrap();
                assert!(p > last, "not increasing in theta");
                last = p;
            }
        }
        for &t in &grid {
            let mut last = 2.0;
            for &b in &grid {
                let p = rasch_prob(t, b).unwrap();
                assert!(p < last, "not decreasing in beta");
                last = p;
            }
        }
    }

    #[test]
    fn invert_global_logits_reference_values() {
        assert_eq!(invert_global_logits::<f64>(&[]).unwrap(), vec![1.0]);
        let p = invert_global_logits(&[0.0]).unwrap();
        assert_relative_eq!(p[0], 0.5, max_relative = 1e-14);
        assert_relative_eq!(p[1], 0.5, max_relative = 1e-14);

        let p = invert_global_logits(&[1.0, -1.0]).unwrap();
        assert_relative_eq!(p[0], 0.2689414213699951, max_relative = 1e-12);
        assert_relative_eq!(p[1], 0.4621171572600098, max_relative = 1e-12);
        assert_relative_eq!(p[2], 0.2689414213699951, max_relative = 1e-12);

        // saturation: expit(-30) is far below 1e-12
        let p = invert_global_logits(&[0.0, -30.0]).unwrap();
        assert_relative_eq!(p[0], 0.5, max_relative = 1e-10);
        assert_relative_eq!(p[1], 0.5, max_relative = 1e-10);
        assert!(p[2] < 1e-12 && p[2] > 0.0);

        assert!(invert_global_logits(&[-1.0, 0.0]).is_err());
    }

    #[test]
    fn cluster_class_probs_reference_values() {
        let dims = ModelDims {
            k1: 3,
            k2: 1,
            n_occasions: 1,
            n_difficulties: 1,
            p_cluster: 2,
            p_subject: 0,
        };
        let mut p = Parameters::<f64>::zeros(dims).unwrap();
        // all gamma zero: uniform
        let rho = p.cluster_class_probs(&[0.3, -0.7]).unwrap();
        for r in &rho {
            assert_relative_eq!(*r, 1.0 / 3.0, max_relative = 1e-14);
        }
        // softmax(0, 1, -1)
        p.gamma0 = vec![1.0, -1.0];
        let rho = p.cluster_class_probs(&[2.0, 5.0]).unwrap();
        assert_relative_eq!(rho[0], 0.24472847105479764, max_relative = 1e-12);
        assert_relative_eq!(rho[1], 0.6652409557748219, max_relative = 1e-12);
        assert_relative_eq!(rho[2], 0.09003057317038046, max_relative = 1e-12);
        assert!(p.cluster_class_probs(&[1.0]).is_err());
    }

    #[test]
    fn two_class_logit_reference() {
        let dims = ModelDims {
            k1: 2,
            k2: 1,
            n_occasions: 1,
            n_difficulties: 1,
            p_cluster: 1,
            p_subject: 0,
        };
        let mut p = Parameters::<f64>::zeros(dims).unwrap();
        p.gamma0 = vec![3.0_f64.ln()];
        let rho = p.cluster_class_probs(&[0.0]).unwrap();
        assert_relative_eq!(rho[0], 0.25, max_relative = 1e-12);
        assert_relative_eq!(rho[1], 0.75, max_relative = 1e-12);
    }

    #[test]
    fn initial_probs_reference_values() {
        // k2 = 1 degenerates to a point mass
        let dims = ModelDims {
            k1: 1,
            k2: 1,
            n_occasions: 1,
            n_difficulties: 1,
            p_cluster: 0,
            p_subject: 0,
        };
        let p = Parameters::<f64>::zeros(dims).unwrap();
        assert_eq!(p.initial_probs(&[], 0).unwrap(), vec![1.0]);

        // u = 1 reference, all zeros, k2 = 2 -> (0.5, 0.5)
        let dims = ModelDims {
            k1: 1,
            k2: 2,
            n_occasions: 1,
            n_difficulties: 1,
            p_cluster: 0,
            p_subject: 0,
        };
        let p = Parameters::<f64>::zeros(dims).unwrap();
        let pi = p.initial_probs(&[], 0).unwrap();
        assert_relative_eq!(pi[0], 0.5, max_relative = 1e-14);

        // published class-C intercept: expit(1.140)
        let dims = ModelDims {
            k1: 3,
            k2: 2,
            n_occasions: 1,
            n_difficulties: 1,
            p_cluster: 0,
            p_subject: 0,
        };
        let mut p = Parameters::<f64>::zeros(dims).unwrap();
        p.delta0 = vec![0.0, 1.140];
        let pi = p.initial_probs(&[], 2).unwrap();
        assert_relative_eq!(pi[0], 0.242, epsilon = 5e-4);
        assert_relative_eq!(pi[1], 0.758, epsilon = 5e-4);
    }

    #[test]
    fn transition_matrix_reference_values() {
        // k2 = 1 -> 1x1 identity
        let dims = ModelDims {
            k1: 1,
            k2: 1,
            n_occasions: 2,
            n_difficulties: 1,
            p_cluster: 0,
            p_subject: 0,
        };
        let p = Parameters::<f64>::zeros(dims).unwrap();
        assert_eq!(p.transition_matrix(&[], 0, 1).unwrap(), vec![vec![1.0]]);

        // all eta zero, k2 = 2 -> uniform rows
        let dims = ModelDims {
            k1: 1,
            k2: 2,
            n_occasions: 2,
            n_difficulties: 1,
            p_cluster: 0,
            p_subject: 0,
        };
        let mut p = Parameters::<f64>::zeros(dims).unwrap();
        let m = p.transition_matrix(&[], 0, 1).unwrap();
        for row in &m {
            assert_relative_eq!(row[0], 0.5, max_relative = 1e-14);
            assert_relative_eq!(row[1], 0.5, max_relative = 1e-14);
        }

        // saturated negative intercepts absorb into state 1
        p.eta1 = vec![vec![vec![-30.0], vec![-30.0]]];
        let m = p.transition_matrix(&[], 0, 1).unwrap();
        for row in &m {
            assert_relative_eq!(row[0], 1.0, max_relative = 1e-10);
            assert!(row[1] < 1e-12);
        }
    }

    #[test]
    fn transition_rows_ignore_covariates_with_zero_coefficient() {
        let dims = ModelDims {
            k1: 2,
            k2: 3,
            n_occasions: 2,
            n_difficulties: 1,
            p_cluster: 0,
            p_subject: 2,
        };
        let mut p = Parameters::<f64>::zeros(dims).unwrap();
        p.eta1 = vec![vec![vec![1.0, -1.0], vec![0.5, -0.5], vec![0.0, -1.5]]];
        p.eta2 = vec![vec![0.0, 0.8]];
        let base = p.transition_matrix(&[5.0, 0.25], 1, 1).unwrap();
        let shifted = p.transition_matrix(&[-3.0, 0.25], 1, 1).unwrap();
        for (r1, r2) in base.iter().zip(&shifted) {
            for (a, b) in r1.iter().zip(r2) {
                assert_relative_eq!(a, b, max_relative = 1e-13);
            }
        }
    }

    proptest! {
        #[test]
        fn emitted_probability_vectors_are_simplex(
            g2 in -8.0_f64..8.0,
            drop1 in 0.01_f64..6.0,
            drop2 in 0.01_f64..6.0,
        ) {
            let g = vec![g2, g2 - drop1, g2 - drop1 - drop2];
            let p = invert_global_logits(&g).unwrap();
            let total: f64 = p.iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
            prop_assert!(p.iter().all(|&x| (0.0..=1.0).contains(&x)));
        }

        #[test]
        fn global_logit_round_trip(
            w in proptest::collection::vec(0.05_f64..1.0, 2..6)
        ) {
            let total: f64 = w.iter().sum();
            let pi: Vec<f64> = w.iter().map(|x| x / total).collect();
            let g = global_logits_of(&pi);
            let back = invert_global_logits(&g).unwrap();
            for (a, b) in pi.iter().zip(&back) {
                prop_assert!((a - b).abs() < 1e-10);
            }
        }

        #[test]
        fn softmax_vectors_are_simplex(
            a in -20.0_f64..20.0,
            b in -20.0_f64..20.0,
            x in -3.0_f64..3.0,
        ) {
            let dims = ModelDims {
                k1: 3, k2: 1, n_occasions: 1, n_difficulties: 1,
                p_cluster: 1, p_subject: 0,
            };
            let mut p = Parameters::<f64>::zeros(dims).unwrap();
            p.gamma0 = vec![a, b];
            p.gamma1 = vec![vec![a / 2.0], vec![-b / 3.0]];
            let rho = p.cluster_class_probs(&[x]).unwrap();
            let total: f64 = rho.iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
            prop_assert!(rho.iter().all(|&r| (0.0..=1.0).contains(&r)));
        }
    }
}
