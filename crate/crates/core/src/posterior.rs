//! Smoothed posterior quantities: cluster-class weights, per-occasion state
//! marginals, and two-slice transition marginals, computed by the rescaled
//! backward recursion and mixed over cluster classes.
//!
//! The class-conditional quantities are retained alongside the mixed ones
//! because the weighted logit M-steps need the joint weight of (class u,
//! state v), not just the mixture.

use rayon::prelude::*;

use crate::data::{Cluster, Dataset, Subject};
use crate::design::ItemDesign;
use crate::error::Result;
use crate::likelihood::{
    backward_pass, forward_pass, subject_chain_inputs, subject_emission_logprobs,
};
use crate::num::{log_sum_exp, normalize_from_log, Scalar};
use crate::params::Parameters;

/// Smoothed posteriors for one subject.
#[derive(Debug, Clone)]
pub struct SubjectPosteriors<S> {
    /// Mixed state marginals `[t][v]`.
    pub state: Vec<Vec<S>>,
    /// Mixed two-slice marginals `[t-1][v0][v1]` (index s is the transition
    /// into occasion s+1).
    pub pair: Vec<Vec<Vec<S>>>,
    /// Class-conditional state marginals `[u][t][v]`.
    pub cond_state: Vec<Vec<Vec<S>>>,
    /// Class-conditional two-slice marginals `[u][t-1][v0][v1]`.
    pub cond_pair: Vec<Vec<Vec<Vec<S>>>>,
    /// log p(subject responses | class u) `[u]`.
    pub cond_loglik: Vec<S>,
}

/// Smoothed posteriors for one cluster.
#[derive(Debug, Clone)]
pub struct ClusterPosteriors<S> {
    /// Posterior class membership weights over u.
    pub class_weights: Vec<S>,
    pub subjects: Vec<SubjectPosteriors<S>>,
}

/// Full E-step output over the dataset, plus the observed-data
/// log-likelihood evaluated at the same parameters as a byproduct.
#[derive(Debug, Clone)]
pub struct PosteriorQuantities<S> {
    pub clusters: Vec<ClusterPosteriors<S>>,
    pub loglik: S,
}

/// MAP decodings derived from the smoothed posteriors.
#[derive(Debug, Clone)]
pub struct Decoding {
    /// Per-cluster most probable class (0-based), ties toward the lower index.
    pub cluster_classes: Vec<usize>,
    /// Per-subject most probable state at each occasion `[h][i][t]`.
    pub subject_states: Vec<Vec<Vec<usize>>>,
}

fn argmax_low_tie<S: Scalar>(xs: &[S]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// State and two-slice posteriors of one subject conditional on class `u`
/// (0-based), plus the conditional log-likelihood.
pub fn subject_posteriors_given_u<S: Scalar>(
    params: &Parameters<S>,
    design: &ItemDesign,
    subject: &Subject<S>,
    u: usize,
) -> Result<(Vec<Vec<S>>, Vec<Vec<Vec<S>>>, S)> {
    let log_emission = subject_emission_logprobs(params, design, subject);
    let (log_initial, log_transition) = subject_chain_inputs(params, subject, u)?;
    let fwd = forward_pass(&log_initial, &log_transition, &log_emission);
    let bwd = backward_pass(&log_transition, &log_emission);
    let n_occ = log_emission.len();
    let k2 = params.dims.k2;

    let mut state = Vec::with_capacity(n_occ);
    for t in 0..n_occ {
        let mut row: Vec<S> = (0..k2)
            .map(|v| fwd.log_q[t][v] + bwd.log_r[t][v])
            .collect();
        normalize_from_log(&mut row);
        state.push(row);
    }

    let mut pair = Vec::with_capacity(n_occ.saturating_sub(1));
    for t in 1..n_occ {
        let mut flat: Vec<S> = Vec::with_capacity(k2 * k2);
        for v0 in 0..k2 {
            for v1 in 0..k2 {
                flat.push(
                    fwd.log_q[t - 1][v0]
                        + log_transition[t - 1][v0][v1]
                        + log_emission[t][v1]
                        + bwd.log_r[t][v1],
                );
            }
        }
        normalize_from_log(&mut flat);
        let matrix: Vec<Vec<S>> = (0..k2)
            .map(|v0| flat[v0 * k2..(v0 + 1) * k2].to_vec())
            .collect();
        pair.push(matrix);
    }

    Ok((state, pair, fwd.loglik))
}

/// Posterior cluster-class membership weights for one cluster.
pub fn cluster_posterior_w<S: Scalar>(
    params: &Parameters<S>,
    design: &ItemDesign,
    cluster: &Cluster<S>,
) -> Result<Vec<S>> {
    Ok(cluster_posteriors(params, design, cluster)?.class_weights)
}

fn cluster_posteriors<S: Scalar>(
    params: &Parameters<S>,
    design: &ItemDesign,
    cluster: &Cluster<S>,
) -> Result<ClusterPosteriors<S>> {
    let k1 = params.dims.k1;
    let k2 = params.dims.k2;
    let log_rho = params.log_cluster_class_probs(&cluster.covariates)?;

    let mut subjects: Vec<SubjectPosteriors<S>> = Vec::with_capacity(cluster.subjects.len());
    for subject in &cluster.subjects {
        let n_occ = subject.responses.len();
        let mut cond_state = Vec::with_capacity(k1);
        let mut cond_pair = Vec::with_capacity(k1);
        let mut cond_loglik = Vec::with_capacity(k1);
        for u in 0..k1 {
            let (state, pair, ll) = subject_posteriors_given_u(params, design, subject, u)?;
            cond_state.push(state);
            cond_pair.push(pair);
            cond_loglik.push(ll);
        }
        subjects.push(SubjectPosteriors {
            state: vec![vec![S::zero(); k2]; n_occ],
            pair: vec![vec![vec![S::zero(); k2]; k2]; n_occ.saturating_sub(1)],
            cond_state,
            cond_pair,
            cond_loglik,
        });
    }

    // w(u) on the log scale: prior plus all subject conditional likelihoods
    let mut log_w: Vec<S> = (0..k1)
        .map(|u| {
            let mut acc = log_rho[u];
            for s in &subjects {
                acc += s.cond_loglik[u];
            }
            acc
        })
        .collect();
    normalize_from_log(&mut log_w);
    let class_weights = log_w;

    // mix the conditional posteriors over u
    for s in &mut subjects {
        for (u, &w) in class_weights.iter().enumerate() {
            for (t, row) in s.cond_state[u].iter().enumerate() {
                for (v, &p) in row.iter().enumerate() {
                    s.state[t][v] += w * p;
                }
            }
            for (ti, mat) in s.cond_pair[u].iter().enumerate() {
                for (v0, row) in mat.iter().enumerate() {
                    for (v1, &p) in row.iter().enumerate() {
                        s.pair[ti][v0][v1] += w * p;
                    }
                }
            }
        }
    }

    Ok(ClusterPosteriors {
        class_weights,
        subjects,
    })
}

/// Full E-step over the dataset. Clusters are processed in parallel and
/// collected in index order.
pub fn estep<S: Scalar>(
    params: &Parameters<S>,
    design: &ItemDesign,
    data: &Dataset<S>,
) -> Result<PosteriorQuantities<S>> {
    let log_rho_branches: Vec<Result<(ClusterPosteriors<S>, S)>> = data
        .clusters
        .par_iter()
        .map(|cluster| {
            let post = cluster_posteriors(params, design, cluster)?;
            let log_rho = params.log_cluster_class_probs(&cluster.covariates)?;
            let branches: Vec<S> = (0..params.dims.k1)
                .map(|u| {
                    let mut acc = log_rho[u];
                    for s in &post.subjects {
                        acc += s.cond_loglik[u];
                    }
                    acc
                })
                .collect();
            let cluster_ll = log_sum_exp(&branches);
            Ok((post, cluster_ll))
        })
        .collect();

    let mut clusters = Vec::with_capacity(data.clusters.len());
    let mut loglik = S::zero();
    for r in log_rho_branches {
        let (post, ll) = r?;
        loglik += ll;
        clusters.push(post);
    }
    Ok(PosteriorQuantities { clusters, loglik })
}

impl<S: Scalar> PosteriorQuantities<S> {
    /// Degenerate posteriors that put all mass on known labels; used to
    /// evaluate the complete-data objective at a realized latent draw.
    /// The conditional blocks repeat the indicators for every class so the
    /// one-hot class weights select them unchanged.
    pub fn from_labels(
        k1: usize,
        k2: usize,
        cluster_classes: &[usize],
        state_paths: &[Vec<Vec<usize>>],
    ) -> Self {
        let clusters = cluster_classes
            .iter()
            .zip(state_paths)
            .map(|(&u_true, paths)| {
                let mut w = vec![S::zero(); k1];
                w[u_true] = S::one();
                let subjects = paths
                    .iter()
                    .map(|path| {
                        let n_occ = path.len();
                        let mut state = vec![vec![S::zero(); k2]; n_occ];
                        for (t, &v) in path.iter().enumerate() {
                            state[t][v] = S::one();
                        }
                        let mut pair = vec![vec![vec![S::zero(); k2]; k2]; n_occ - 1];
                        for t in 1..n_occ {
                            pair[t - 1][path[t - 1]][path[t]] = S::one();
                        }
                        SubjectPosteriors {
                            cond_state: vec![state.clone(); k1],
                            cond_pair: vec![pair.clone(); k1],
                            cond_loglik: vec![S::nan(); k1],
                            state,
                            pair,
                        }
                    })
                    .collect();
                ClusterPosteriors {
                    class_weights: w,
                    subjects,
                }
            })
            .collect();
        PosteriorQuantities {
            clusters,
            loglik: S::nan(),
        }
    }
}

/// MAP decoding: arg-max class per cluster and arg-max state per
/// subject-occasion, ties broken toward the lower index.
pub fn decode<S: Scalar>(
    params: &Parameters<S>,
    design: &ItemDesign,
    data: &Dataset<S>,
) -> Result<Decoding> {
    Ok(decode_posteriors(&estep(params, design, data)?))
}

/// Decoding from an already computed E-step.
pub fn decode_posteriors<S: Scalar>(post: &PosteriorQuantities<S>) -> Decoding {
    let cluster_classes = post
        .clusters
        .iter()
        .map(|c| argmax_low_tie(&c.class_weights))
        .collect();
    let subject_states = post
        .clusters
        .iter()
        .map(|c| {
            c.subjects
                .iter()
                .map(|s| s.state.iter().map(|row| argmax_low_tie(row)).collect())
                .collect()
        })
        .collect();
    Decoding {
        cluster_classes,
        subject_states,
    }
}
