//! Likelihood evaluation: per-occasion emission log-probabilities, the
//! forward recursion over latent states, and the cluster/total observed-data
//! log-likelihood.
//!
//! The recursion is the standard hidden-Markov forward pass conditioned on
//! the cluster class, run entirely in log space with per-occasion rescaling.
//! At realistic item counts the raw-probability recursion underflows, so the
//! rescaled log form is the only one implemented; `ForwardPass` keeps the
//! normalized vector and the accumulated scale separately so downstream
//! smoothing can reuse both.

use rayon::prelude::*;

use crate::data::{Cluster, Dataset, Subject};
use crate::design::ItemDesign;
use crate::error::Result;
use crate::link::log_rasch_prob_pair;
use crate::num::{log_sum_exp, Scalar};
use crate::params::Parameters;

/// Rescaled forward quantities for one (subject, class) chain.
///
/// `exp(log_q[t][v] + log_scale[t])` is the joint probability of the
/// responses up to occasion `t` and state `v`; `log_q[t]` is shifted so its
/// maximum is zero.
#[derive(Debug, Clone)]
pub struct ForwardPass<S> {
    pub log_q: Vec<Vec<S>>,
    pub log_scale: Vec<S>,
    /// log p(all responses | class) for this chain.
    pub loglik: S,
}

/// Rescaled backward quantities; `exp(log_r[t][v] + log_scale[t])` is the
/// probability of the responses after occasion `t` given state `v`.
#[derive(Debug, Clone)]
pub struct BackwardPass<S> {
    pub log_r: Vec<Vec<S>>,
    pub log_scale: Vec<S>,
}

fn shift_to_max<S: Scalar>(v: &mut [S]) -> S {
    let mut m = S::neg_infinity();
    for &x in v.iter() {
        if x > m {
            m = x;
        }
    }
    if m == S::neg_infinity() {
        // impossible prefix: keep the -inf vector, contribute no scale
        return S::zero();
    }
    for x in v.iter_mut() {
        *x -= m;
    }
    m
}

/// Forward recursion on raw log inputs.
///
/// `log_transition[t - 1]` is the matrix into occasion `t` (0-based, t >= 1);
/// `log_emission[t][v]` the per-state response log-probability at occasion `t`.
pub fn forward_pass<S: Scalar>(
    log_initial: &[S],
    log_transition: &[Vec<Vec<S>>],
    log_emission: &[Vec<S>],
) -> ForwardPass<S> {
    let n_states = log_initial.len();
    let n_occ = log_emission.len();
    debug_assert_eq!(log_transition.len() + 1, n_occ);

    let mut log_q = Vec::with_capacity(n_occ);
    let mut log_scale = Vec::with_capacity(n_occ);

    let mut first: Vec<S> = (0..n_states)
        .map(|v| log_emission[0][v] + log_initial[v])
        .collect();
    let m = shift_to_max(&mut first);
    log_q.push(first);
    log_scale.push(m);

    for t in 1..n_occ {
        let prev = &log_q[t - 1];
        let trans = &log_transition[t - 1];
        let mut next: Vec<S> = (0..n_states)
            .map(|v1| {
                let terms: Vec<S> = (0..n_states).map(|v0| prev[v0] + trans[v0][v1]).collect();
                log_emission[t][v1] + log_sum_exp(&terms)
            })
            .collect();
        let m = shift_to_max(&mut next);
        let scale = log_scale[t - 1] + m;
        log_q.push(next);
        log_scale.push(scale);
    }

    let loglik = log_scale[n_occ - 1] + log_sum_exp(&log_q[n_occ - 1]);
    ForwardPass {
        log_q,
        log_scale,
        loglik,
    }
}

/// Backward recursion on raw log inputs; same index conventions as
/// [`forward_pass`].
pub fn backward_pass<S: Scalar>(
    log_transition: &[Vec<Vec<S>>],
    log_emission: &[Vec<S>],
) -> BackwardPass<S> {
    let n_occ = log_emission.len();
    let n_states = log_emission[0].len();
    let mut log_r = vec![vec![S::zero(); n_states]; n_occ];
    let mut log_scale = vec![S::zero(); n_occ];

    for t in (0..n_occ - 1).rev() {
        let mut cur: Vec<S> = (0..n_states)
            .map(|v0| {
                let terms: Vec<S> = (0..n_states)
                    .map(|v1| log_transition[t][v0][v1] + log_emission[t + 1][v1] + log_r[t + 1][v1])
                    .collect();
                log_sum_exp(&terms)
            })
            .collect();
        let m = shift_to_max(&mut cur);
        log_r[t] = cur;
        log_scale[t] = log_scale[t + 1] + m;
    }

    BackwardPass { log_r, log_scale }
}

/// Per-state log-probability of one occasion's response row: the sum of
/// Bernoulli terms over non-missing items. Missing responses contribute
/// nothing (an empty product).
pub fn emission_logprobs<S: Scalar>(
    params: &Parameters<S>,
    design: &ItemDesign,
    responses: &[Option<bool>],
    t: usize,
) -> Vec<S> {
    let k2 = params.dims.k2;
    let mut out = vec![S::zero(); k2];
    for (j, resp) in responses.iter().enumerate() {
        let Some(y) = resp else { continue };
        let d = design.difficulty_index(t, j);
        for (v, slot) in out.iter_mut().enumerate() {
            let (log_p1, log_p0) = log_rasch_prob_pair(params.theta[v], params.beta[d]);
            *slot += if *y { log_p1 } else { log_p0 };
        }
    }
    out
}

/// Emission log-probabilities for every occasion of one subject.
pub fn subject_emission_logprobs<S: Scalar>(
    params: &Parameters<S>,
    design: &ItemDesign,
    subject: &Subject<S>,
) -> Vec<Vec<S>> {
    subject
        .responses
        .iter()
        .enumerate()
        .map(|(t, row)| emission_logprobs(params, design, row, t))
        .collect()
}

/// Latent-chain inputs of one subject conditional on cluster class `u`.
pub(crate) fn subject_chain_inputs<S: Scalar>(
    params: &Parameters<S>,
    subject: &Subject<S>,
    u: usize,
) -> Result<(Vec<S>, Vec<Vec<Vec<S>>>)> {
    let log_initial = params.log_initial_probs(&subject.covariates[0], u)?;
    let n_occ = subject.responses.len();
    let mut log_transition = Vec::with_capacity(n_occ.saturating_sub(1));
    for t in 1..n_occ {
        log_transition.push(params.log_transition_matrix(&subject.covariates[t], u, t)?);
    }
    Ok((log_initial, log_transition))
}

/// log p(subject responses | cluster class u), u 0-based.
pub fn subject_loglik_given_u<S: Scalar>(
    params: &Parameters<S>,
    design: &ItemDesign,
    subject: &Subject<S>,
    u: usize,
) -> Result<S> {
    let log_emission = subject_emission_logprobs(params, design, subject);
    let (log_initial, log_transition) = subject_chain_inputs(params, subject, u)?;
    Ok(forward_pass(&log_initial, &log_transition, &log_emission).loglik)
}

/// log p(cluster responses): class prior mixed with the per-subject
/// conditional likelihoods via log-sum-exp.
pub fn cluster_loglik<S: Scalar>(
    params: &Parameters<S>,
    design: &ItemDesign,
    cluster: &Cluster<S>,
) -> Result<S> {
    let log_rho = params.log_cluster_class_probs(&cluster.covariates)?;
    let mut branches = Vec::with_capacity(log_rho.len());
    for (u, &lr) in log_rho.iter().enumerate() {
        let mut acc = lr;
        for subject in &cluster.subjects {
            acc += subject_loglik_given_u(params, design, subject, u)?;
        }
        branches.push(acc);
    }
    Ok(log_sum_exp(&branches))
}

/// Observed-data log-likelihood: the sum of cluster log-likelihoods.
///
/// Clusters are evaluated in parallel but reduced in index order, so the
/// result is bit-identical regardless of thread count.
pub fn total_loglik<S: Scalar>(
    params: &Parameters<S>,
    design: &ItemDesign,
    data: &Dataset<S>,
) -> Result<S> {
    let per_cluster: Vec<Result<S>> = data
        .clusters
        .par_iter()
        .map(|cluster| cluster_loglik(params, design, cluster))
        .collect();
    let mut total = S::zero();
    for r in per_cluster {
        total += r?;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Cluster, Dataset, Subject};
    use crate::link::rasch_prob;
    use crate::params::ModelDims;
    use approx::assert_relative_eq;

    fn subject(responses: Vec<Vec<Option<bool>>>, n_z: usize) -> Subject<f64> {
        let n_occ = responses.len();
        Subject {
            id: "s".into(),
            responses,
            covariates: vec![vec![0.0; n_z]; n_occ],
        }
    }

    #[test]
    fn all_missing_responses_give_zero_emission_vector() {
        let dims = ModelDims {
            k1: 1,
            k2: 3,
            n_occasions: 1,
            n_difficulties: 2,
            p_cluster: 0,
            p_subject: 0,
        };
        let mut p = Parameters::<f64>::zeros(dims).unwrap();
        p.theta = vec![0.0, 1.0, 2.0];
        let design = ItemDesign::unlinked(&[2]).unwrap();
        let e = emission_logprobs(&p, &design, &[None, None], 0);
        assert_eq!(e, vec![0.0; 3]);
    }

    #[test]
    fn single_item_at_matched_difficulty_gives_log_half() {
        let dims = ModelDims {
            k1: 1,
            k2: 2,
            n_occasions: 1,
            n_difficulties: 1,
            p_cluster: 0,
            p_subject: 0,
        };
        let mut p = Parameters::<f64>::zeros(dims).unwrap();
        p.theta = vec![0.0, 1.3];
        p.beta = vec![1.3];
        let design = ItemDesign::unlinked(&[1]).unwrap();
        let e = emission_logprobs(&p, &design, &[Some(true)], 0);
        assert_relative_eq!(e[1], 0.5_f64.ln(), max_relative = 1e-14);
    }

    #[test]
    fn emission_matches_direct_bernoulli_product() {
        let dims = ModelDims {
            k1: 1,
            k2: 2,
            n_occasions: 1,
            n_difficulties: 2,
            p_cluster: 0,
            p_subject: 0,
        };
        let mut p = Parameters::<f64>::zeros(dims).unwrap();
        p.theta = vec![0.0, 0.8];
        p.beta = vec![-0.4, 0.9];
        let design = ItemDesign::unlinked(&[2]).unwrap();
        let y = vec![Some(true), Some(false)];
        let e = emission_logprobs(&p, &design, &y, 0);
        for v in 0..2 {
            let l1 = rasch_prob(p.theta[v], p.beta[0]).unwrap();
            let l2 = rasch_prob(p.theta[v], p.beta[1]).unwrap();
            assert_relative_eq!(e[v], (l1 * (1.0 - l2)).ln(), max_relative = 1e-12);
        }
    }

    #[test]
    fn single_occasion_single_state_equals_emission() {
        let dims = ModelDims {
            k1: 1,
            k2: 1,
            n_occasions: 1,
            n_difficulties: 2,
            p_cluster: 0,
            p_subject: 0,
        };
        let mut p = Parameters::<f64>::zeros(dims).unwrap();
        p.beta = vec![0.7, -0.7];
        let design = ItemDesign::unlinked(&[2]).unwrap();
        let s = subject(vec![vec![Some(true), Some(false)]], 0);
        let ll = subject_loglik_given_u(&p, &design, &s, 0).unwrap();
        let e = emission_logprobs(&p, &design, &s.responses[0], 0);
        assert_relative_eq!(ll, e[0], max_relative = 1e-14);
    }

    #[test]
    fn two_occasions_match_explicit_path_sum() {
        let dims = ModelDims {
            k1: 1,
            k2: 2,
            n_occasions: 2,
            n_difficulties: 2,
            p_cluster: 0,
            p_subject: 0,
        };
        let mut p = Parameters::<f64>::zeros(dims).unwrap();
        p.theta = vec![0.0, 1.4];
        p.beta = vec![0.3, -0.2];
        p.delta1 = vec![0.6];
        p.eta1 = vec![vec![vec![1.1], vec![-0.9]]];
        p.validate().unwrap();
        let design = ItemDesign::unlinked(&[1, 1]).unwrap();
        let s = subject(vec![vec![Some(true)], vec![Some(false)]], 0);

        let pi = p.initial_probs(&[], 0).unwrap();
        let trans = p.transition_matrix(&[], 0, 1).unwrap();
        let mut direct = 0.0;
        for v1 in 0..2 {
            for v2 in 0..2 {
                let e1 = rasch_prob(p.theta[v1], p.beta[0]).unwrap();
                let e2 = 1.0 - rasch_prob(p.theta[v2], p.beta[1]).unwrap();
                direct += pi[v1] * trans[v1][v2] * e1 * e2;
            }
        }
        let ll = subject_loglik_given_u(&p, &design, &s, 0).unwrap();
        assert_relative_eq!(ll, direct.ln(), max_relative = 1e-12);
    }

    #[test]
    fn uniform_emissions_factor_out_of_the_chain() {
        // theta = beta everywhere makes every response probability 0.5,
        // so the chain marginalizes away: loglik = J_total * ln(0.5)
        let dims = ModelDims {
            k1: 1,
            k2: 2,
            n_occasions: 3,
            n_difficulties: 1,
            p_cluster: 0,
            p_subject: 0,
        };
        let mut p = Parameters::<f64>::zeros(dims).unwrap();
        p.theta = vec![0.0, 0.0];
        p.beta = vec![0.0];
        p.delta1 = vec![0.35];
        p.eta1 = vec![
            vec![vec![0.5], vec![-0.5]],
            vec![vec![1.0], vec![0.2]],
        ];
        p.validate().unwrap();
        let design = ItemDesign::new(vec![vec![0, 0], vec![0], vec![0, 0, 0]]).unwrap();
        let s = subject(
            vec![
                vec![Some(true), Some(false)],
                vec![Some(true)],
                vec![Some(false), Some(true), Some(true)],
            ],
            0,
        );
        let ll = subject_loglik_given_u(&p, &design, &s, 0).unwrap();
        assert_relative_eq!(ll, 6.0 * 0.5_f64.ln(), max_relative = 1e-12);
    }

    #[test]
    fn forward_backward_scales_are_consistent() {
        let log_init = vec![0.6_f64.ln(), 0.4_f64.ln()];
        let log_trans = vec![vec![
            vec![0.7_f64.ln(), 0.3_f64.ln()],
            vec![0.2_f64.ln(), 0.8_f64.ln()],
        ]];
        let log_emis = vec![
            vec![0.9_f64.ln(), 0.05_f64.ln()],
            vec![0.5_f64.ln(), 0.25_f64.ln()],
        ];
        let f = forward_pass(&log_init, &log_trans, &log_emis);
        let b = backward_pass(&log_trans, &log_emis);
        // combine at t = 0: sum_v q_0(v) r_0(v) must reproduce the likelihood
        let combined: Vec<f64> = (0..2).map(|v| f.log_q[0][v] + b.log_r[0][v]).collect();
        let ll = log_sum_exp(&combined) + f.log_scale[0] + b.log_scale[0];
        assert_relative_eq!(ll, f.loglik, max_relative = 1e-12);
    }

    #[test]
    fn degenerate_mixture_uses_only_the_unit_mass_branch() {
        let dims = ModelDims {
            k1: 2,
            k2: 1,
            n_occasions: 1,
            n_difficulties: 1,
            p_cluster: 0,
            p_subject: 0,
        };
        let mut p = Parameters::<f64>::zeros(dims).unwrap();
        p.beta = vec![0.4];
        // exp(-746) underflows to exactly zero mass on class 2
        p.gamma0 = vec![-746.0];
        let design = ItemDesign::unlinked(&[1]).unwrap();
        let cluster = Cluster {
            id: "c".into(),
            covariates: vec![],
            subjects: vec![subject(vec![vec![Some(true)]], 0)],
        };
        let ll = cluster_loglik(&p, &design, &cluster).unwrap();
        let branch = subject_loglik_given_u(&p, &design, &cluster.subjects[0], 0).unwrap();
        assert_relative_eq!(ll, branch, max_relative = 1e-14);
    }

    #[test]
    fn single_class_cluster_is_sum_of_subject_logliks() {
        let dims = ModelDims {
            k1: 1,
            k2: 2,
            n_occasions: 2,
            n_difficulties: 2,
            p_cluster: 0,
            p_subject: 0,
        };
        let mut p = Parameters::<f64>::zeros(dims).unwrap();
        p.theta = vec![0.0, 1.0];
        p.beta = vec![0.2, -0.3];
        p.delta1 = vec![0.0];
        p.eta1 = vec![vec![vec![0.4], vec![-0.4]]];
        let design = ItemDesign::unlinked(&[1, 1]).unwrap();
        let s1 = subject(vec![vec![Some(true)], vec![Some(true)]], 0);
        let s2 = subject(vec![vec![Some(false)], vec![None]], 0);
        let cluster = Cluster {
            id: "c".into(),
            covariates: vec![],
            subjects: vec![s1.clone(), s2.clone()],
        };
        let ll = cluster_loglik(&p, &design, &cluster).unwrap();
        let direct = subject_loglik_given_u(&p, &design, &s1, 0).unwrap()
            + subject_loglik_given_u(&p, &design, &s2, 0).unwrap();
        assert_relative_eq!(ll, direct, max_relative = 1e-14);
    }

    #[test]
    fn total_loglik_is_additive_and_zero_on_empty_data() {
        let dims = ModelDims {
            k1: 1,
            k2: 1,
            n_occasions: 1,
            n_difficulties: 1,
            p_cluster: 0,
            p_subject: 0,
        };
        let mut p = Parameters::<f64>::zeros(dims).unwrap();
        p.beta = vec![-0.25];
        let design = ItemDesign::unlinked(&[1]).unwrap();
        let empty: Dataset<f64> = Dataset::new(vec![], 0, 0);
        assert_eq!(total_loglik(&p, &design, &empty).unwrap(), 0.0);

        let clusters: Vec<Cluster<f64>> = (0..3)
            .map(|i| Cluster {
                id: format!("c{i}"),
                covariates: vec![],
                subjects: vec![subject(vec![vec![Some(i % 2 == 0)]], 0)],
            })
            .collect();
        let mut expected = 0.0;
        for c in &clusters {
            expected += cluster_loglik(&p, &design, c).unwrap();
        }
        let data = Dataset::new(clusters, 0, 0);
        assert_relative_eq!(
            total_loglik(&p, &design, &data).unwrap(),
            expected,
            max_relative = 1e-14
        );
    }

    #[test]
    fn single_state_chain_reduces_to_independent_bernoulli() {
        let dims = ModelDims {
            k1: 1,
            k2: 1,
            n_occasions: 2,
            n_difficulties: 2,
            p_cluster: 0,
            p_subject: 0,
        };
        let mut p = Parameters::<f64>::zeros(dims).unwrap();
        p.beta = vec![0.9, -1.1];
        let design = ItemDesign::unlinked(&[1, 1]).unwrap();
        let s = subject(vec![vec![Some(false)], vec![Some(true)]], 0);
        let ll = subject_loglik_given_u(&p, &design, &s, 0).unwrap();
        let p1 = rasch_prob(0.0, p.beta[0]).unwrap();
        let p2 = rasch_prob(0.0, p.beta[1]).unwrap();
        assert_relative_eq!(ll, ((1.0 - p1) * p2).ln(), max_relative = 1e-13);
    }
}
