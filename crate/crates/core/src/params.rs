//! The model parameter vector, its identifiability constraints, and its
//! serialized form.
//!
//! Blocks follow the generative structure: Rasch abilities/difficulties
//! (`theta`, `beta`), the cluster-class multinomial logit (`gamma0`,
//! `gamma1`), the initial-state global logits (`delta0`, `delta1`, `delta2`)
//! and the per-occasion transition global logits (`eta0`, `eta1`, `eta2`).
//! Identifiability: `theta[0] = 0` with `theta` non-decreasing; the class
//! `u = 1` is the reference for `gamma0`/`delta0`/`eta0`; `delta1` and each
//! `eta1` row are non-increasing so the cumulative logits invert to a proper
//! distribution.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::num::{scalar, Scalar};

/// Model dimensions shared by a parameter vector and the data it applies to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    /// Number of cluster-level latent classes.
    pub k1: usize,
    /// Number of subject-level latent states.
    pub k2: usize,
    /// Number of occasions T.
    pub n_occasions: usize,
    /// Number of distinct item difficulties D.
    pub n_difficulties: usize,
    /// Cluster covariate count.
    pub p_cluster: usize,
    /// Subject covariate count.
    pub p_subject: usize,
}

impl ModelDims {
    pub fn validate(&self) -> Result<()> {
        if self.k1 < 1 || self.k2 < 1 || self.n_occasions < 1 || self.n_difficulties < 1 {
            return Err(Error::invalid_argument(
                "k1, k2, occasions and difficulties must all be at least 1",
            ));
        }
        Ok(())
    }
}

/// Full parameter vector of the multilevel latent Markov Rasch model.
///
/// Empty blocks encode the degenerate cases: with `k2 = 1` the latent chain
/// is constant and every `delta`/`eta` block is empty; with `k1 = 1` the
/// `gamma` blocks and the class-specific intercepts `delta0`/`eta0` are empty.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters<S> {
    pub dims: ModelDims,
    /// Ability of each latent state, `theta[0] = 0`, non-decreasing; length k2.
    pub theta: Vec<S>,
    /// Item difficulties; length D.
    pub beta: Vec<S>,
    /// Cluster-class intercepts for u = 2..k1; length k1-1.
    pub gamma0: Vec<S>,
    /// Cluster-class regression coefficients for u = 2..k1; (k1-1) x p_cluster.
    pub gamma1: Vec<Vec<S>>,
    /// Initial-logit class intercepts for u = 2..k1 (empty when k2 = 1).
    pub delta0: Vec<S>,
    /// Initial-logit state intercepts for v = 2..k2, non-increasing.
    pub delta1: Vec<S>,
    /// Initial-logit covariate coefficients; length p_subject (empty when k2 = 1).
    pub delta2: Vec<S>,
    /// Transition-logit class intercepts; `eta0[t-2][u-2]`, (T-1) x (k1-1).
    pub eta0: Vec<Vec<S>>,
    /// Transition-logit state intercepts; `eta1[t-2][v0][v1-2]`,
    /// (T-1) x k2 x (k2-1), each row non-increasing in v1.
    pub eta1: Vec<Vec<Vec<S>>>,
    /// Transition-logit covariate coefficients; `eta2[t-2]`, (T-1) x p_subject.
    pub eta2: Vec<Vec<S>>,
}

impl<S: Scalar> Parameters<S> {
    /// All-zero parameter vector with the block shapes implied by `dims`.
    pub fn zeros(dims: ModelDims) -> Result<Self> {
        dims.validate()?;
        let k1 = dims.k1;
        let k2 = dims.k2;
        let t_trans = dims.n_occasions - 1;
        let chain = k2 > 1;
        let z = S::zero();
        Ok(Parameters {
            dims,
            theta: vec![z; k2],
            beta: vec![z; dims.n_difficulties],
            gamma0: vec![z; k1 - 1],
            gamma1: vec![vec![z; dims.p_cluster]; k1 - 1],
            delta0: if chain { vec![z; k1 - 1] } else { Vec::new() },
            delta1: if chain { vec![z; k2 - 1] } else { Vec::new() },
            delta2: if chain {
                vec![z; dims.p_subject]
            } else {
                Vec::new()
            },
            eta0: if chain {
                vec![vec![z; k1 - 1]; t_trans]
            } else {
                Vec::new()
            },
            eta1: if chain {
                vec![vec![vec![z; k2 - 1]; k2]; t_trans]
            } else {
                Vec::new()
            },
            eta2: if chain {
                vec![vec![z; dims.p_subject]; t_trans]
            } else {
                Vec::new()
            },
        })
    }

    /// Checks block shapes, fixed zeros, and ordering constraints.
    pub fn validate(&self) -> Result<()> {
        let d = &self.dims;
        d.validate()?;
        let k1 = d.k1;
        let k2 = d.k2;
        let chain = k2 > 1;
        let t_trans = d.n_occasions - 1;

        let expect = |what: &str, expected: usize, actual: usize| -> Result<()> {
            if expected != actual {
                Err(Error::dims(what, expected, actual))
            } else {
                Ok(())
            }
        };

        expect("theta", k2, self.theta.len())?;
        expect("beta", d.n_difficulties, self.beta.len())?;
        expect("gamma0", k1 - 1, self.gamma0.len())?;
        expect("gamma1", k1 - 1, self.gamma1.len())?;
        for (i, g) in self.gamma1.iter().enumerate() {
            expect(&format!("gamma1[{}]", i + 2), d.p_cluster, g.len())?;
        }
        let chain_len = |n: usize| if chain { n } else { 0 };
        expect("delta0", chain_len(k1 - 1), self.delta0.len())?;
        expect("delta1", chain_len(k2 - 1), self.delta1.len())?;
        expect("delta2", chain_len(d.p_subject), self.delta2.len())?;
        expect("eta0", chain_len(t_trans), self.eta0.len())?;
        expect("eta1", chain_len(t_trans), self.eta1.len())?;
        expect("eta2", chain_len(t_trans), self.eta2.len())?;
        for (ti, block) in self.eta0.iter().enumerate() {
            expect(&format!("eta0[t={}]", ti + 2), k1 - 1, block.len())?;
        }
        for (ti, block) in self.eta1.iter().enumerate() {
            expect(&format!("eta1[t={}]", ti + 2), k2, block.len())?;
            for (v0, row) in block.iter().enumerate() {
                expect(
                    &format!("eta1[t={},v0={}]", ti + 2, v0 + 1),
                    k2 - 1,
                    row.len(),
                )?;
            }
        }
        for (ti, block) in self.eta2.iter().enumerate() {
            expect(&format!("eta2[t={}]", ti + 2), d.p_subject, block.len())?;
        }

        let finite = |name: &str, xs: &[S]| -> Result<()> {
            if xs.iter().any(|x| !x.is_finite()) {
                Err(Error::invalid_argument(format!(
                    "non-finite value in {name}"
                )))
            } else {
                Ok(())
            }
        };
        finite("theta", &self.theta)?;
        finite("beta", &self.beta)?;
        finite("gamma0", &self.gamma0)?;
        for g in &self.gamma1 {
            finite("gamma1", g)?;
        }
        finite("delta0", &self.delta0)?;
        finite("delta1", &self.delta1)?;
        finite("delta2", &self.delta2)?;
        for b in &self.eta0 {
            finite("eta0", b)?;
        }
        for b in &self.eta1 {
            for r in b {
                finite("eta1", r)?;
            }
        }
        for b in &self.eta2 {
            finite("eta2", b)?;
        }

        if self.theta[0] != S::zero() {
            return Err(Error::ConstraintViolation(
                "theta[1] must be fixed at 0".into(),
            ));
        }
        if self.theta.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::ConstraintViolation(
                "theta must be non-decreasing".into(),
            ));
        }
        if self.delta1.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::ConstraintViolation(
                "delta1 must be non-increasing in v".into(),
            ));
        }
        for (ti, block) in self.eta1.iter().enumerate() {
            for (v0, row) in block.iter().enumerate() {
                if row.windows(2).any(|w| w[1] > w[0]) {
                    return Err(Error::ConstraintViolation(format!(
                        "eta1[t={},v0={}] must be non-increasing in v1",
                        ti + 2,
                        v0 + 1
                    )));
                }
            }
        }
        Ok(())
    }

    /// Number of free parameters of the model.
    pub fn n_free_params(&self) -> usize {
        let d = &self.dims;
        count_parameters(
            d.k1,
            d.k2,
            d.n_difficulties,
            d.p_cluster,
            d.p_subject,
            d.n_occasions,
        )
    }

    /// Reads one scalar parameter by its public id.
    pub fn get(&self, id: ParamId) -> Result<S> {
        self.slot(id).map(|r| *r)
    }

    /// Writes one scalar parameter by its public id.
    pub fn set(&mut self, id: ParamId, value: S) -> Result<()> {
        *self.slot_mut(id)? = value;
        Ok(())
    }

    fn slot(&self, id: ParamId) -> Result<&S> {
        let d = self.dims;
        let bad = || Error::UnsupportedParam(format!("{id} out of range for model dims"));
        match id {
            ParamId::Theta(v) => {
                if (2..=d.k2).contains(&v) {
                    Ok(&self.theta[v - 1])
                } else {
                    Err(bad())
                }
            }
            ParamId::Beta(i) => self.beta.get(i - 1).ok_or_else(bad),
            ParamId::Gamma0(u) => {
                if (2..=d.k1).contains(&u) {
                    Ok(&self.gamma0[u - 2])
                } else {
                    Err(bad())
                }
            }
            ParamId::Gamma1(u, j) => {
                if (2..=d.k1).contains(&u) && (1..=d.p_cluster).contains(&j) {
                    Ok(&self.gamma1[u - 2][j - 1])
                } else {
                    Err(bad())
                }
            }
            ParamId::Delta0(u) => {
                if d.k2 > 1 && (2..=d.k1).contains(&u) {
                    Ok(&self.delta0[u - 2])
                } else {
                    Err(bad())
                }
            }
            ParamId::Delta1(v) => {
                if d.k2 > 1 && (2..=d.k2).contains(&v) {
                    Ok(&self.delta1[v - 2])
                } else {
                    Err(bad())
                }
            }
            ParamId::Delta2(j) => {
                if d.k2 > 1 && (1..=d.p_subject).contains(&j) {
                    Ok(&self.delta2[j - 1])
                } else {
                    Err(bad())
                }
            }
            ParamId::Eta0(t, u) => {
                if d.k2 > 1 && (2..=d.n_occasions).contains(&t) && (2..=d.k1).contains(&u) {
                    Ok(&self.eta0[t - 2][u - 2])
                } else {
                    Err(bad())
                }
            }
            ParamId::Eta1(t, v0, v1) => {
                if d.k2 > 1
                    && (2..=d.n_occasions).contains(&t)
                    && (1..=d.k2).contains(&v0)
                    && (2..=d.k2).contains(&v1)
                {
                    Ok(&self.eta1[t - 2][v0 - 1][v1 - 2])
                } else {
                    Err(bad())
                }
            }
            ParamId::Eta2(t, j) => {
                if d.k2 > 1 && (2..=d.n_occasions).contains(&t) && (1..=d.p_subject).contains(&j) {
                    Ok(&self.eta2[t - 2][j - 1])
                } else {
                    Err(bad())
                }
            }
        }
    }

    fn slot_mut(&mut self, id: ParamId) -> Result<&mut S> {
        // mirror of `slot`; resolve the index once then reborrow mutably
        self.slot(id)?;
        let d = self.dims;
        Ok(match id {
            ParamId::Theta(v) => &mut self.theta[v - 1],
            ParamId::Beta(i) => &mut self.beta[i - 1],
            ParamId::Gamma0(u) => &mut self.gamma0[u - 2],
            ParamId::Gamma1(u, j) => &mut self.gamma1[u - 2][j - 1],
            ParamId::Delta0(u) => &mut self.delta0[u - 2],
            ParamId::Delta1(v) => &mut self.delta1[v - 2],
            ParamId::Delta2(j) => &mut self.delta2[j - 1],
            ParamId::Eta0(t, u) => &mut self.eta0[t - 2][u - 2],
            ParamId::Eta1(t, v0, v1) => &mut self.eta1[t - 2][v0 - 1][v1 - 2],
            ParamId::Eta2(t, j) => {
                debug_assert!(t >= 2 && j >= 1 && t <= d.n_occasions);
                &mut self.eta2[t - 2][j - 1]
            }
        })
    }

    /// Ids of the parameters that live in unordered blocks, in report order.
    /// These are the parameters eligible for zero-constraint profiling.
    pub fn unordered_param_ids(&self) -> Vec<ParamId> {
        let d = self.dims;
        let mut out = Vec::new();
        for u in 2..=d.k1 {
            out.push(ParamId::Gamma0(u));
            for j in 1..=d.p_cluster {
                out.push(ParamId::Gamma1(u, j));
            }
        }
        if d.k2 > 1 {
            for u in 2..=d.k1 {
                out.push(ParamId::Delta0(u));
            }
            for j in 1..=d.p_subject {
                out.push(ParamId::Delta2(j));
            }
            for t in 2..=d.n_occasions {
                for u in 2..=d.k1 {
                    out.push(ParamId::Eta0(t, u));
                }
            }
            for t in 2..=d.n_occasions {
                for j in 1..=d.p_subject {
                    out.push(ParamId::Eta2(t, j));
                }
            }
        }
        out
    }

    /// Relabels the cluster classes by `perm` (`perm[new_u - 1] = old_u - 1`)
    /// and re-anchors the reference class so the fixed zeros hold. The
    /// distribution of the data is unchanged; useful for aligning fits to a
    /// simulated truth.
    pub fn permute_cluster_classes(&self, perm: &[usize]) -> Result<Self> {
        let k1 = self.dims.k1;
        if perm.len() != k1 {
            return Err(Error::dims("class permutation", k1, perm.len()));
        }
        let mut seen = vec![false; k1];
        for &p in perm {
            if p >= k1 || seen[p] {
                return Err(Error::invalid_argument("not a permutation of 1..k1"));
            }
            seen[p] = true;
        }
        let mut out = self.clone();
        // full logit vectors with the old reference entry prepended as 0
        let full = |v: &[S]| -> Vec<S> {
            let mut f = Vec::with_capacity(k1);
            f.push(S::zero());
            f.extend_from_slice(v);
            f
        };
        let g0 = full(&self.gamma0);
        let anchor = g0[perm[0]];
        for u in 2..=k1 {
            out.gamma0[u - 2] = g0[perm[u - 1]] - anchor;
        }
        let full_rows: Vec<Vec<S>> = {
            let mut f = vec![vec![S::zero(); self.dims.p_cluster]];
            f.extend(self.gamma1.iter().cloned());
            f
        };
        for u in 2..=k1 {
            for j in 0..self.dims.p_cluster {
                out.gamma1[u - 2][j] = full_rows[perm[u - 1]][j] - full_rows[perm[0]][j];
            }
        }
        if self.dims.k2 > 1 {
            let d0 = full(&self.delta0);
            let shift = d0[perm[0]];
            for u in 2..=k1 {
                out.delta0[u - 2] = d0[perm[u - 1]] - shift;
            }
            // the reference shift moves into the state intercepts
            for v in &mut out.delta1 {
                *v += shift;
            }
            for (ti, block) in self.eta0.iter().enumerate() {
                let e0 = full(block);
                let shift = e0[perm[0]];
                for u in 2..=k1 {
                    out.eta0[ti][u - 2] = e0[perm[u - 1]] - shift;
                }
                for row in &mut out.eta1[ti] {
                    for v in row.iter_mut() {
                        *v += shift;
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Number of free parameters given the model dimensions.
///
/// Counts difficulties, the k2-1 free abilities, the cluster logit block, and
/// (only when the chain is non-degenerate, k2 > 1) the initial and per-step
/// transition logit blocks. Terms tied to k1 vanish at k1 = 1.
pub fn count_parameters(
    k1: usize,
    k2: usize,
    n_difficulties: usize,
    p_cluster: usize,
    p_subject: usize,
    n_occasions: usize,
) -> usize {
    let mut r = n_difficulties + (k2 - 1) + (k1 - 1) * (1 + p_cluster);
    if k2 > 1 {
        r += (k1 - 1) + (k2 - 1) + p_subject;
        r += (n_occasions - 1) * ((k1 - 1) + k2 * (k2 - 1) + p_subject);
    }
    r
}

/// Address of one scalar parameter; indices are 1-based as in reports,
/// with `t` the actual occasion number (2..T for transition blocks).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ParamId {
    Theta(usize),
    Beta(usize),
    Gamma0(usize),
    Gamma1(usize, usize),
    Delta0(usize),
    Delta1(usize),
    Delta2(usize),
    Eta0(usize, usize),
    Eta1(usize, usize, usize),
    Eta2(usize, usize),
}

impl ParamId {
    /// True for coordinates inside ordering-constrained blocks.
    pub fn is_ordered_block(&self) -> bool {
        matches!(
            self,
            ParamId::Theta(_) | ParamId::Delta1(_) | ParamId::Eta1(..)
        )
    }
}

impl fmt::Display for ParamId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamId::Theta(v) => write!(f, "theta[{v}]"),
            ParamId::Beta(d) => write!(f, "beta[{d}]"),
            ParamId::Gamma0(u) => write!(f, "gamma0[{u}]"),
            ParamId::Gamma1(u, j) => write!(f, "gamma1[{u},{j}]"),
            ParamId::Delta0(u) => write!(f, "delta0[{u}]"),
            ParamId::Delta1(v) => write!(f, "delta1[{v}]"),
            ParamId::Delta2(j) => write!(f, "delta2[{j}]"),
            ParamId::Eta0(t, u) => write!(f, "eta0[{t},{u}]"),
            ParamId::Eta1(t, v0, v1) => write!(f, "eta1[{t},{v0},{v1}]"),
            ParamId::Eta2(t, j) => write!(f, "eta2[{t},{j}]"),
        }
    }
}

impl FromStr for ParamId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let open = s
            .find('[')
            .ok_or_else(|| Error::invalid_argument(format!("malformed parameter id `{s}`")))?;
        if !s.ends_with(']') {
            return Err(Error::invalid_argument(format!(
                "malformed parameter id `{s}`"
            )));
        }
        let name = &s[..open];
        let idx: Vec<usize> = s[open + 1..s.len() - 1]
            .split(',')
            .map(|p| {
                p.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::invalid_argument(format!("bad index in `{s}`")))
            })
            .collect::<Result<_>>()?;
        let want = |n: usize| -> Result<()> {
            if idx.len() == n {
                Ok(())
            } else {
                Err(Error::invalid_argument(format!(
                    "`{name}` takes {n} indices, got {} in `{s}`",
                    idx.len()
                )))
            }
        };
        Ok(match name {
            "theta" => {
                want(1)?;
                ParamId::Theta(idx[0])
            }
            "beta" => {
                want(1)?;
                ParamId::Beta(idx[0])
            }
            "gamma0" => {
                want(1)?;
                ParamId::Gamma0(idx[0])
            }
            "gamma1" => {
                want(2)?;
                ParamId::Gamma1(idx[0], idx[1])
            }
            "delta0" => {
                want(1)?;
                ParamId::Delta0(idx[0])
            }
            "delta1" => {
                want(1)?;
                ParamId::Delta1(idx[0])
            }
            "delta2" => {
                want(1)?;
                ParamId::Delta2(idx[0])
            }
            "eta0" => {
                want(2)?;
                ParamId::Eta0(idx[0], idx[1])
            }
            "eta1" => {
                want(3)?;
                ParamId::Eta1(idx[0], idx[1], idx[2])
            }
            "eta2" => {
                want(2)?;
                ParamId::Eta2(idx[0], idx[1])
            }
            _ => {
                return Err(Error::invalid_argument(format!(
                    "unknown parameter block `{name}`"
                )))
            }
        })
    }
}

/// Serialized form of [`Parameters`]: a flat document keyed by block name
/// where each entry carries its explicit 1-based index tuple and value.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParametersDoc {
    pub k1: usize,
    pub k2: usize,
    pub n_occasions: usize,
    pub n_difficulties: usize,
    pub p_cluster: usize,
    pub p_subject: usize,
    pub theta: Vec<(usize, f64)>,
    pub beta: Vec<(usize, f64)>,
    pub gamma0: Vec<(usize, f64)>,
    pub gamma1: Vec<(usize, usize, f64)>,
    pub delta0: Vec<(usize, f64)>,
    pub delta1: Vec<(usize, f64)>,
    pub delta2: Vec<(usize, f64)>,
    pub eta0: Vec<(usize, usize, f64)>,
    pub eta1: Vec<(usize, usize, usize, f64)>,
    pub eta2: Vec<(usize, usize, f64)>,
}

impl<S: Scalar> Parameters<S> {
    pub fn to_doc(&self) -> ParametersDoc {
        let f = |x: &S| x.to_f64().unwrap_or(f64::NAN);
        let d = self.dims;
        ParametersDoc {
            k1: d.k1,
            k2: d.k2,
            n_occasions: d.n_occasions,
            n_difficulties: d.n_difficulties,
            p_cluster: d.p_cluster,
            p_subject: d.p_subject,
            theta: self
                .theta
                .iter()
                .enumerate()
                .map(|(i, x)| (i + 1, f(x)))
                .collect(),
            beta: self
                .beta
                .iter()
                .enumerate()
                .map(|(i, x)| (i + 1, f(x)))
                .collect(),
            gamma0: self
                .gamma0
                .iter()
                .enumerate()
                .map(|(i, x)| (i + 2, f(x)))
                .collect(),
            gamma1: self
                .gamma1
                .iter()
                .enumerate()
                .flat_map(|(i, row)| {
                    row.iter()
                        .enumerate()
                        .map(move |(j, x)| (i + 2, j + 1, f(x)))
                        .collect::<Vec<_>>()
                })
                .collect(),
            delta0: self
                .delta0
                .iter()
                .enumerate()
                .map(|(i, x)| (i + 2, f(x)))
                .collect(),
            delta1: self
                .delta1
                .iter()
                .enumerate()
                .map(|(i, x)| (i + 2, f(x)))
                .collect(),
            delta2: self
                .delta2
                .iter()
                .enumerate()
                .map(|(i, x)| (i + 1, f(x)))
                .collect(),
            eta0: self
                .eta0
                .iter()
                .enumerate()
                .flat_map(|(ti, row)| {
                    row.iter()
                        .enumerate()
                        .map(move |(u, x)| (ti + 2, u + 2, f(x)))
                        .collect::<Vec<_>>()
                })
                .collect(),
            eta1: self
                .eta1
                .iter()
                .enumerate()
                .flat_map(|(ti, block)| {
                    block
                        .iter()
                        .enumerate()
                        .flat_map(move |(v0, row)| {
                            row.iter()
                                .enumerate()
                                .map(move |(v1, x)| (ti + 2, v0 + 1, v1 + 2, f(x)))
                                .collect::<Vec<_>>()
                        })
                        .collect::<Vec<_>>()
                })
                .collect(),
            eta2: self
                .eta2
                .iter()
                .enumerate()
                .flat_map(|(ti, row)| {
                    row.iter()
                        .enumerate()
                        .map(move |(j, x)| (ti + 2, j + 1, f(x)))
                        .collect::<Vec<_>>()
                })
                .collect(),
        }
    }

    pub fn from_doc(doc: &ParametersDoc) -> Result<Self> {
        let dims = ModelDims {
            k1: doc.k1,
            k2: doc.k2,
            n_occasions: doc.n_occasions,
            n_difficulties: doc.n_difficulties,
            p_cluster: doc.p_cluster,
            p_subject: doc.p_subject,
        };
        let mut params = Parameters::zeros(dims)?;
        let s = |x: f64| -> Result<S> {
            S::from_f64(x).ok_or_else(|| Error::invalid_argument("unrepresentable value"))
        };
        for &(v, x) in &doc.theta {
            if v == 1 {
                if x != 0.0 {
                    return Err(Error::ConstraintViolation("theta[1] must be 0".into()));
                }
                continue;
            }
            params.set(ParamId::Theta(v), s(x)?)?;
        }
        for &(d, x) in &doc.beta {
            params.set(ParamId::Beta(d), s(x)?)?;
        }
        for &(u, x) in &doc.gamma0 {
            params.set(ParamId::Gamma0(u), s(x)?)?;
        }
        for &(u, j, x) in &doc.gamma1 {
            params.set(ParamId::Gamma1(u, j), s(x)?)?;
        }
        for &(u, x) in &doc.delta0 {
            params.set(ParamId::Delta0(u), s(x)?)?;
        }
        for &(v, x) in &doc.delta1 {
            params.set(ParamId::Delta1(v), s(x)?)?;
        }
        for &(j, x) in &doc.delta2 {
            params.set(ParamId::Delta2(j), s(x)?)?;
        }
        for &(t, u, x) in &doc.eta0 {
            params.set(ParamId::Eta0(t, u), s(x)?)?;
        }
        for &(t, v0, v1, x) in &doc.eta1 {
            params.set(ParamId::Eta1(t, v0, v1), s(x)?)?;
        }
        for &(t, j, x) in &doc.eta2 {
            params.set(ParamId::Eta2(t, j), s(x)?)?;
        }
        params.validate()?;
        Ok(params)
    }
}

/// Equispaced grid of `k` points spanning `[-(k-1), k-1]`, ascending.
pub(crate) fn ascending_grid<S: Scalar>(k: usize) -> Vec<S> {
    (0..k)
        .map(|i| scalar::<S>(2.0 * i as f64 - (k as f64 - 1.0)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dims(k1: usize, k2: usize) -> ModelDims {
        ModelDims {
            k1,
            k2,
            n_occasions: 3,
            n_difficulties: 4,
            p_cluster: 2,
            p_subject: 1,
        }
    }

    #[test]
    fn zeros_has_consistent_shapes() {
        let p = Parameters::<f64>::zeros(dims(3, 2)).unwrap();
        p.validate().unwrap();
        assert_eq!(p.gamma0.len(), 2);
        assert_eq!(p.eta1.len(), 2);
        assert_eq!(p.eta1[0].len(), 2);
        assert_eq!(p.eta1[0][0].len(), 1);
        assert_eq!(p.n_free_params(), count_parameters(3, 2, 4, 2, 1, 3));
    }

    #[test]
    fn degenerate_chain_has_empty_logit_blocks() {
        let p = Parameters::<f64>::zeros(dims(3, 1)).unwrap();
        p.validate().unwrap();
        assert!(p.delta0.is_empty() && p.delta1.is_empty() && p.delta2.is_empty());
        assert!(p.eta0.is_empty() && p.eta1.is_empty() && p.eta2.is_empty());
        // only difficulties plus the cluster logit block remain
        assert_eq!(p.n_free_params(), 4 + 2 * 3);
    }

    #[test]
    fn ordering_violations_detected() {
        let mut p = Parameters::<f64>::zeros(dims(2, 3)).unwrap();
        p.theta = vec![0.0, 2.0, 1.0];
        assert!(p.validate().is_err());
        p.theta = vec![0.0, 1.0, 2.0];
        p.validate().unwrap();
        p.delta1 = vec![-1.0, 0.5];
        assert!(p.validate().is_err());
    }

    #[test]
    fn count_parameters_matches_reference_cells() {
        // spot anchors; the full published grid is covered by the acceptance suite
        assert_eq!(count_parameters(1, 1, 85, 3, 4, 3), 85);
        assert_eq!(count_parameters(4, 6, 85, 3, 4, 3), 188);
        assert_eq!(count_parameters(5, 7, 85, 3, 4, 3), 221);
    }

    #[test]
    fn param_id_round_trips_through_strings() {
        let ids = [
            ParamId::Theta(2),
            ParamId::Beta(13),
            ParamId::Gamma1(2, 3),
            ParamId::Eta1(3, 1, 2),
            ParamId::Eta2(2, 1),
        ];
        for id in ids {
            let s = id.to_string();
            assert_eq!(s.parse::<ParamId>().unwrap(), id);
        }
        assert!("nosuch[1]".parse::<ParamId>().is_err());
        assert!("theta[1,2]".parse::<ParamId>().is_err());
    }

    #[test]
    fn doc_round_trip_preserves_values() {
        let mut p = Parameters::<f64>::zeros(dims(2, 3)).unwrap();
        p.theta = vec![0.0, 0.9, 1.7];
        p.beta = vec![-0.5, 0.25, 1.0, 2.0];
        p.gamma0 = vec![0.3];
        p.gamma1 = vec![vec![0.1, -0.2]];
        p.delta0 = vec![-0.4];
        p.delta1 = vec![0.6, -0.6];
        p.delta2 = vec![0.05];
        p.eta0 = vec![vec![0.2], vec![-0.1]];
        p.eta1 = vec![
            vec![vec![1.0, -1.0], vec![0.5, -0.5], vec![0.0, -2.0]],
            vec![vec![2.0, 0.0], vec![1.5, -0.5], vec![1.0, -1.0]],
        ];
        p.eta2 = vec![vec![0.7], vec![-0.7]];
        p.validate().unwrap();
        let doc = p.to_doc();
        let json = serde_json::to_string(&doc).unwrap();
        let back: ParametersDoc = serde_json::from_str(&json).unwrap();
        let q = Parameters::<f64>::from_doc(&back).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn class_permutation_preserves_distribution() {
        use crate::num::expit;
        let mut p = Parameters::<f64>::zeros(dims(3, 2)).unwrap();
        p.theta = vec![0.0, 1.0];
        p.gamma0 = vec![0.4, -0.3];
        p.gamma1 = vec![vec![0.2, -0.1], vec![0.0, 0.5]];
        p.delta0 = vec![0.7, -0.2];
        p.delta1 = vec![0.1];
        p.delta2 = vec![-0.3];
        p.eta0 = vec![vec![0.3, 0.6], vec![-0.5, 0.2]];
        p.eta1 = vec![
            vec![vec![0.5], vec![-0.5]],
            vec![vec![1.0], vec![0.0]],
        ];
        p.eta2 = vec![vec![0.2], vec![0.1]];
        p.validate().unwrap();

        // swap classes 1 and 3
        let q = p.permute_cluster_classes(&[2, 1, 0]).unwrap();
        q.validate().unwrap();
        let x = vec![0.8, -1.2];
        let rho_p = p.cluster_class_probs(&x).unwrap();
        let rho_q = q.cluster_class_probs(&x).unwrap();
        for (new_u, &old) in [2usize, 1, 0].iter().enumerate() {
            assert!((rho_q[new_u] - rho_p[old]).abs() < 1e-12);
        }
        // initial probabilities conditional on the relabeled class agree
        let z = vec![0.4];
        for (new_u, &old) in [2usize, 1, 0].iter().enumerate() {
            let a = p.initial_probs(&z, old).unwrap();
            let b = q.initial_probs(&z, new_u).unwrap();
            for v in 0..2 {
                assert!((a[v] - b[v]).abs() < 1e-12, "initial mismatch");
            }
        }
        let _ = expit(0.0f64);
    }
}
