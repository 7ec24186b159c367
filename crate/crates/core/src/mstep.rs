//! Weighted-logit M-step components.
//!
//! Each EM iteration maximizes the expected complete-data objective, which
//! separates into four independent blocks: the Rasch block (theta, beta), the
//! cluster-class multinomial logit (gamma), the initial-state global logit
//! (delta), and one transition global logit per occasion (eta). Every block
//! is solved by safeguarded Newton on a reparametrized free vector in which
//! the ordering constraints are structural: ordered ability/intercept blocks
//! are expressed through log-gaps, so constraint violation is impossible at
//! any iterate.
//!
//! Zero-freezing of individual unordered coordinates (used by profile
//! standard errors) removes the coordinate from the free vector while its
//! natural value stays pinned at zero.

use std::collections::BTreeSet;

use crate::data::Dataset;
use crate::design::ItemDesign;
use crate::error::{Error, Result};
use crate::link::log_global_logit_probs;
use crate::newton::{maximize, Objective, SymMatrix};
use crate::num::{expit, log_expit, scalar, Scalar};
use crate::params::{ParamId, Parameters};
use crate::posterior::PosteriorQuantities;

/// Box bound for unordered coordinates; published fits show quasi-separated
/// coefficients exceeding 40, so the box must sit comfortably above that.
const COORD_BOUND: f64 = 50.0;
/// Log-gap bounds for ordered blocks: gaps live in [e^-50, 50].
const MAX_LOG_GAP: f64 = 3.912023005428146; // ln 50
const MIN_LOG_GAP: f64 = -50.0;

/// Inner Newton solver settings.
#[derive(Debug, Clone, Copy)]
pub struct NewtonSettings {
    pub max_iter: usize,
    pub grad_tol: f64,
}

impl Default for NewtonSettings {
    fn default() -> Self {
        NewtonSettings {
            max_iter: 30,
            grad_tol: 1e-8,
        }
    }
}

/// Set of scalar parameters frozen at zero during estimation.
#[derive(Debug, Clone, Default)]
pub struct Constraints {
    frozen: BTreeSet<ParamId>,
}

impl Constraints {
    pub fn none() -> Self {
        Constraints::default()
    }

    /// Freezes one parameter at zero. Coordinates of ordering-constrained
    /// blocks cannot be frozen: a zero pin inside an ordered block collapses
    /// its neighbours and does not define a comparable nested model.
    pub fn freeze(&mut self, id: ParamId) -> Result<()> {
        if id.is_ordered_block() {
            return Err(Error::UnsupportedParam(format!(
                "{id} lies in an ordering-constrained block and cannot be zero-frozen"
            )));
        }
        self.frozen.insert(id);
        Ok(())
    }

    pub fn single(id: ParamId) -> Result<Self> {
        let mut c = Constraints::none();
        c.freeze(id)?;
        Ok(c)
    }

    pub fn is_frozen(&self, id: ParamId) -> bool {
        self.frozen.contains(&id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &ParamId> {
        self.frozen.iter()
    }
}

/// Outcome summary of one M-step component.
#[derive(Debug, Clone, Copy)]
pub struct MStepStatus {
    /// Component had nothing to optimize (degenerate dimension or all frozen).
    pub skipped: bool,
    pub iterations: usize,
    pub grad_norm: f64,
    pub converged: bool,
    /// Some coordinate was cut by the box bound (quasi-separation guard).
    pub clamped: bool,
}

impl MStepStatus {
    fn skipped() -> Self {
        MStepStatus {
            skipped: true,
            iterations: 0,
            grad_norm: 0.0,
            converged: true,
            clamped: false,
        }
    }
}

// ---------------------------------------------------------------------------
// Reparametrization between free and natural coordinates
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub(crate) enum Segment {
    /// Unordered coordinates; `true` marks a slot frozen at zero.
    Identity(Vec<bool>),
    /// p_i = sum_{w <= i} exp(x_w): increasing from an implicit 0 anchor.
    OrderedIncreasing(usize),
    /// p_0 = x_0, p_i = p_{i-1} - exp(x_i): anchored, strictly decreasing.
    OrderedDecreasing(usize),
}

impl Segment {
    fn n_natural(&self) -> usize {
        match self {
            Segment::Identity(mask) => mask.len(),
            Segment::OrderedIncreasing(m) | Segment::OrderedDecreasing(m) => *m,
        }
    }

    fn n_free(&self) -> usize {
        match self {
            Segment::Identity(mask) => mask.iter().filter(|f| !**f).count(),
            Segment::OrderedIncreasing(m) | Segment::OrderedDecreasing(m) => *m,
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Reparam {
    segs: Vec<Segment>,
}

impl Reparam {
    pub(crate) fn new(segs: Vec<Segment>) -> Self {
        Reparam { segs }
    }

    pub(crate) fn n_natural(&self) -> usize {
        self.segs.iter().map(Segment::n_natural).sum()
    }

    pub(crate) fn n_free(&self) -> usize {
        self.segs.iter().map(Segment::n_free).sum()
    }

    /// Maps the free vector to natural coordinates.
    pub(crate) fn to_natural<S: Scalar>(&self, x: &[S]) -> Vec<S> {
        let mut out = Vec::with_capacity(self.n_natural());
        let mut xi = 0;
        for seg in &self.segs {
            match seg {
                Segment::Identity(mask) => {
                    for &frozen in mask {
                        if frozen {
                            out.push(S::zero());
                        } else {
                            out.push(x[xi]);
                            xi += 1;
                        }
                    }
                }
                Segment::OrderedIncreasing(m) => {
                    let mut acc = S::zero();
                    for _ in 0..*m {
                        acc += x[xi].exp();
                        xi += 1;
                        out.push(acc);
                    }
                }
                Segment::OrderedDecreasing(m) => {
                    let mut acc = S::zero();
                    for w in 0..*m {
                        if w == 0 {
                            acc = x[xi];
                        } else {
                            acc -= x[xi].exp();
                        }
                        xi += 1;
                        out.push(acc);
                    }
                }
            }
        }
        out
    }

    /// Inverse of [`Reparam::to_natural`]; gaps are floored so that ties in
    /// the input stay representable.
    pub(crate) fn from_natural<S: Scalar>(&self, p: &[S]) -> Vec<S> {
        let floor = scalar::<S>(1e-8);
        let mut out = Vec::with_capacity(self.n_free());
        let mut pi = 0;
        for seg in &self.segs {
            match seg {
                Segment::Identity(mask) => {
                    for &frozen in mask {
                        if !frozen {
                            out.push(p[pi]);
                        }
                        pi += 1;
                    }
                }
                Segment::OrderedIncreasing(m) => {
                    let mut prev = S::zero();
                    for _ in 0..*m {
                        out.push((p[pi] - prev).max(floor).ln());
                        prev = p[pi];
                        pi += 1;
                    }
                }
                Segment::OrderedDecreasing(m) => {
                    let mut prev = S::zero();
                    for w in 0..*m {
                        if w == 0 {
                            out.push(p[pi]);
                        } else {
                            out.push((prev - p[pi]).max(floor).ln());
                        }
                        prev = p[pi];
                        pi += 1;
                    }
                }
            }
        }
        out
    }

    /// Pulls a natural-coordinate gradient and Hessian back to the free
    /// coordinates: `g_x = J' g_p`, `H_x = J' H_p J + diag(second order)`.
    pub(crate) fn pullback<S: Scalar>(
        &self,
        x: &[S],
        g_nat: &[S],
        h_nat: &SymMatrix<S>,
    ) -> (Vec<S>, SymMatrix<S>) {
        let n_nat = self.n_natural();
        let n_free = self.n_free();
        let mut jac = vec![vec![S::zero(); n_free]; n_nat];
        let mut corr = vec![S::zero(); n_free];

        let mut row = 0;
        let mut col = 0;
        let mut xi = 0;
        for seg in &self.segs {
            match seg {
                Segment::Identity(mask) => {
                    for &frozen in mask {
                        if !frozen {
                            jac[row][col] = S::one();
                            col += 1;
                            xi += 1;
                        }
                        row += 1;
                    }
                }
                Segment::OrderedIncreasing(m) => {
                    for w in 0..*m {
                        let e = x[xi + w].exp();
                        let mut tail_grad = S::zero();
                        for i in w..*m {
                            jac[row + i][col + w] = e;
                            tail_grad += g_nat[row + i];
                        }
                        corr[col + w] = e * tail_grad;
                    }
                    row += *m;
                    col += *m;
                    xi += *m;
                }
                Segment::OrderedDecreasing(m) => {
                    // anchor column: identity on all rows of the block
                    for i in 0..*m {
                        jac[row + i][col] = S::one();
                    }
                    for w in 1..*m {
                        let e = x[xi + w].exp();
                        let mut tail_grad = S::zero();
                        for i in w..*m {
                            jac[row + i][col + w] = -e;
                            tail_grad += g_nat[row + i];
                        }
                        corr[col + w] = -e * tail_grad;
                    }
                    row += *m;
                    col += *m;
                    xi += *m;
                }
            }
        }

        let mut g_free = vec![S::zero(); n_free];
        for i in 0..n_nat {
            let gi = g_nat[i];
            if gi == S::zero() {
                continue;
            }
            for (w, &jw) in jac[i].iter().enumerate() {
                if jw != S::zero() {
                    g_free[w] += jw * gi;
                }
            }
        }

        // H_free = J' H J computed as (H J) then J' (.)
        let mut hj = vec![vec![S::zero(); n_free]; n_nat];
        for i in 0..n_nat {
            for j in 0..n_nat {
                let hij = h_nat.get(i, j);
                if hij == S::zero() {
                    continue;
                }
                for w in 0..n_free {
                    let jw = jac[j][w];
                    if jw != S::zero() {
                        hj[i][w] += hij * jw;
                    }
                }
            }
        }
        let mut h_free = SymMatrix::zeros(n_free);
        for w in 0..n_free {
            for v in w..n_free {
                let mut acc = S::zero();
                for i in 0..n_nat {
                    let jiw = jac[i][w];
                    if jiw != S::zero() {
                        acc += jiw * hj[i][v];
                    }
                }
                h_free.set(w, v, acc);
                h_free.set(v, w, acc);
            }
        }
        for w in 0..n_free {
            let d = h_free.get(w, w) + corr[w];
            h_free.set(w, w, d);
        }
        (g_free, h_free)
    }

    /// Projects free coordinates into the feasible box.
    pub(crate) fn clamp<S: Scalar>(&self, x: &mut [S]) {
        let bound = scalar::<S>(COORD_BOUND);
        let max_gap = scalar::<S>(MAX_LOG_GAP);
        let min_gap = scalar::<S>(MIN_LOG_GAP);
        let mut xi = 0;
        for seg in &self.segs {
            match seg {
                Segment::Identity(mask) => {
                    for &frozen in mask {
                        if !frozen {
                            x[xi] = x[xi].max(-bound).min(bound);
                            xi += 1;
                        }
                    }
                }
                Segment::OrderedIncreasing(m) => {
                    for _ in 0..*m {
                        x[xi] = x[xi].max(min_gap).min(max_gap);
                        xi += 1;
                    }
                }
                Segment::OrderedDecreasing(m) => {
                    for w in 0..*m {
                        if w == 0 {
                            x[xi] = x[xi].max(-bound).min(bound);
                        } else {
                            x[xi] = x[xi].max(min_gap).min(max_gap);
                        }
                        xi += 1;
                    }
                }
            }
        }
    }
}

fn floor_prob<S: Scalar>(p: S) -> S {
    // keeps divisions by tiny category probabilities finite
    p.max(S::min_positive_value().sqrt())
}

// ---------------------------------------------------------------------------
// Rasch component: weighted logistic fit of (theta, beta)
// ---------------------------------------------------------------------------

/// Expected-count sufficient statistics and free-vector layout for the Rasch
/// block. Natural coordinates are `[theta_2..theta_k2, beta_1..beta_D]`.
pub struct RaschObjective<S> {
    k2: usize,
    n_difficulties: usize,
    /// Weighted correct counts per (state, difficulty).
    n_correct: Vec<Vec<S>>,
    /// Weighted totals per (state, difficulty).
    n_total: Vec<Vec<S>>,
    reparam: Reparam,
}

impl<S: Scalar> RaschObjective<S> {
    pub fn from_posteriors(
        post: &PosteriorQuantities<S>,
        design: &ItemDesign,
        data: &Dataset<S>,
        params: &Parameters<S>,
        constraints: &Constraints,
    ) -> Self {
        let k2 = params.dims.k2;
        let n_diff = params.dims.n_difficulties;
        let mut n_correct = vec![vec![S::zero(); n_diff]; k2];
        let mut n_total = vec![vec![S::zero(); n_diff]; k2];
        for (cluster, cpost) in data.clusters.iter().zip(&post.clusters) {
            for (subject, spost) in cluster.subjects.iter().zip(&cpost.subjects) {
                for (t, row) in subject.responses.iter().enumerate() {
                    for (j, resp) in row.iter().enumerate() {
                        let Some(y) = resp else { continue };
                        let d = design.difficulty_index(t, j);
                        for v in 0..k2 {
                            let w = spost.state[t][v];
                            n_total[v][d] += w;
                            if *y {
                                n_correct[v][d] += w;
                            }
                        }
                    }
                }
            }
        }
        let beta_mask: Vec<bool> = (1..=n_diff)
            .map(|d| constraints.is_frozen(ParamId::Beta(d)))
            .collect();
        let reparam = Reparam::new(vec![
            Segment::OrderedIncreasing(k2 - 1),
            Segment::Identity(beta_mask),
        ]);
        RaschObjective {
            k2,
            n_difficulties: n_diff,
            n_correct,
            n_total,
            reparam,
        }
    }

    /// Free vector corresponding to the current parameters.
    pub fn free_point(&self, params: &Parameters<S>) -> Vec<S> {
        let mut nat = Vec::with_capacity(self.reparam.n_natural());
        nat.extend_from_slice(&params.theta[1..]);
        nat.extend_from_slice(&params.beta);
        self.reparam.from_natural(&nat)
    }

    /// Writes an optimized free vector back into the parameters.
    pub fn store(&self, x: &[S], params: &mut Parameters<S>) {
        let nat = self.reparam.to_natural(x);
        params.theta = std::iter::once(S::zero())
            .chain(nat[..self.k2 - 1].iter().copied())
            .collect();
        params.beta = nat[self.k2 - 1..].to_vec();
    }

    fn natural_eval(&self, nat: &[S], with_derivs: bool) -> (S, Vec<S>, SymMatrix<S>) {
        let k2 = self.k2;
        let n_diff = self.n_difficulties;
        let theta = |v: usize| if v == 0 { S::zero() } else { nat[v - 1] };
        let beta_off = k2 - 1;
        let mut f = S::zero();
        let n_nat = self.reparam.n_natural();
        let mut g = vec![S::zero(); n_nat];
        let mut h = SymMatrix::zeros(if with_derivs { n_nat } else { 0 });
        for v in 0..k2 {
            for d in 0..n_diff {
                let n = self.n_total[v][d];
                if n == S::zero() {
                    continue;
                }
                let n1 = self.n_correct[v][d];
                let x = theta(v) - nat[beta_off + d];
                f += n1 * log_expit(x) + (n - n1) * log_expit(-x);
                if !with_derivs {
                    continue;
                }
                let lam = expit(x);
                let resid = n1 - n * lam;
                let info = n * lam * (S::one() - lam);
                if v > 0 {
                    g[v - 1] += resid;
                    let hv = h.get(v - 1, v - 1) - info;
                    h.set(v - 1, v - 1, hv);
                    h.add_sym(v - 1, beta_off + d, info);
                }
                g[beta_off + d] -= resid;
                let hd = h.get(beta_off + d, beta_off + d) - info;
                h.set(beta_off + d, beta_off + d, hd);
            }
        }
        (f, g, h)
    }
}

impl<S: Scalar> Objective<S> for RaschObjective<S> {
    fn dim(&self) -> usize {
        self.reparam.n_free()
    }

    fn value(&self, x: &[S]) -> S {
        let nat = self.reparam.to_natural(x);
        self.natural_eval(&nat, false).0
    }

    fn value_grad_hess(&self, x: &[S]) -> (S, Vec<S>, SymMatrix<S>) {
        let nat = self.reparam.to_natural(x);
        let (f, g_nat, h_nat) = self.natural_eval(&nat, true);
        let (g, h) = self.reparam.pullback(x, &g_nat, &h_nat);
        (f, g, h)
    }

    fn clamp(&self, x: &mut [S]) {
        self.reparam.clamp(x);
    }
}

// ---------------------------------------------------------------------------
// Cluster-class component: weighted multinomial logit over clusters
// ---------------------------------------------------------------------------

/// Weighted multinomial logit for the cluster-class distribution. Natural
/// coordinates are `[gamma0_u, gamma1_u1..gamma1_up]` for u = 2..k1.
pub struct ClusterLogitObjective<S> {
    k1: usize,
    p: usize,
    /// One row per cluster: posterior class weights and covariates.
    rows: Vec<(Vec<S>, Vec<S>)>,
    reparam: Reparam,
}

impl<S: Scalar> ClusterLogitObjective<S> {
    pub fn from_posteriors(
        post: &PosteriorQuantities<S>,
        data: &Dataset<S>,
        params: &Parameters<S>,
        constraints: &Constraints,
    ) -> Self {
        let k1 = params.dims.k1;
        let p = params.dims.p_cluster;
        let rows = data
            .clusters
            .iter()
            .zip(&post.clusters)
            .map(|(c, cp)| (cp.class_weights.clone(), c.covariates.clone()))
            .collect();
        let mut mask = Vec::with_capacity((k1 - 1) * (1 + p));
        for u in 2..=k1 {
            mask.push(constraints.is_frozen(ParamId::Gamma0(u)));
            for j in 1..=p {
                mask.push(constraints.is_frozen(ParamId::Gamma1(u, j)));
            }
        }
        ClusterLogitObjective {
            k1,
            p,
            rows,
            reparam: Reparam::new(vec![Segment::Identity(mask)]),
        }
    }

    pub fn free_point(&self, params: &Parameters<S>) -> Vec<S> {
        let mut nat = Vec::new();
        for u in 0..self.k1 - 1 {
            nat.push(params.gamma0[u]);
            nat.extend_from_slice(&params.gamma1[u]);
        }
        self.reparam.from_natural(&nat)
    }

    pub fn store(&self, x: &[S], params: &mut Parameters<S>) {
        let nat = self.reparam.to_natural(x);
        let stride = 1 + self.p;
        for u in 0..self.k1 - 1 {
            params.gamma0[u] = nat[u * stride];
            params.gamma1[u] = nat[u * stride + 1..(u + 1) * stride].to_vec();
        }
    }

    fn natural_eval(&self, nat: &[S], with_derivs: bool) -> (S, Vec<S>, SymMatrix<S>) {
        let k1 = self.k1;
        let stride = 1 + self.p;
        let n_nat = self.reparam.n_natural();
        let mut f = S::zero();
        let mut g = vec![S::zero(); n_nat];
        let mut h = SymMatrix::zeros(if with_derivs { n_nat } else { 0 });
        for (w, x) in &self.rows {
            // class logits, reference class first
            let mut a = Vec::with_capacity(k1);
            a.push(S::zero());
            for u in 0..k1 - 1 {
                let mut s = nat[u * stride];
                for (j, xj) in x.iter().enumerate() {
                    s += *xj * nat[u * stride + 1 + j];
                }
                a.push(s);
            }
            let lse = crate::num::log_sum_exp(&a);
            for u in 0..k1 {
                if w[u] != S::zero() {
                    f += w[u] * (a[u] - lse);
                }
            }
            if !with_derivs {
                continue;
            }
            let rho: Vec<S> = a.iter().map(|&ai| (ai - lse).exp()).collect();
            // total posterior weight per row is 1 by construction
            for u in 1..k1 {
                let e = w[u] - rho[u];
                let base = (u - 1) * stride;
                g[base] += e;
                for (j, xj) in x.iter().enumerate() {
                    g[base + 1 + j] += e * *xj;
                }
                for u2 in u..k1 {
                    let cross = if u == u2 {
                        -(rho[u] * (S::one() - rho[u]))
                    } else {
                        rho[u] * rho[u2]
                    };
                    let base2 = (u2 - 1) * stride;
                    // feature outer product over (1, x)
                    for i in 0..stride {
                        let fi = if i == 0 { S::one() } else { x[i - 1] };
                        let j_start = if u == u2 { i } else { 0 };
                        for j in j_start..stride {
                            let fj = if j == 0 { S::one() } else { x[j - 1] };
                            let val = cross * fi * fj;
                            if u == u2 && i == j {
                                let cur = h.get(base + i, base2 + j);
                                h.set(base + i, base2 + j, cur + val);
                            } else {
                                h.add_sym(base + i, base2 + j, val);
                            }
                        }
                    }
                }
            }
        }
        (f, g, h)
    }
}

impl<S: Scalar> Objective<S> for ClusterLogitObjective<S> {
    fn dim(&self) -> usize {
        self.reparam.n_free()
    }

    fn value(&self, x: &[S]) -> S {
        let nat = self.reparam.to_natural(x);
        self.natural_eval(&nat, false).0
    }

    fn value_grad_hess(&self, x: &[S]) -> (S, Vec<S>, SymMatrix<S>) {
        let nat = self.reparam.to_natural(x);
        let (f, g_nat, h_nat) = self.natural_eval(&nat, true);
        let (g, h) = self.reparam.pullback(x, &g_nat, &h_nat);
        (f, g, h)
    }

    fn clamp(&self, x: &mut [S]) {
        self.reparam.clamp(x);
    }
}

// ---------------------------------------------------------------------------
// Ordinal global-logit component (initial distribution and transition rows)
// ---------------------------------------------------------------------------

struct OrdinalRow<S> {
    /// 0-based class; class 0 is the reference with no intercept column.
    class: usize,
    /// Which ordered-intercept block this row uses (0 for the initial
    /// distribution, the originating state v0 for transitions).
    block: usize,
    covariates: Vec<S>,
    /// Posterior weights over the k2 categories.
    weights: Vec<S>,
}

/// Weighted cumulative-logit fit shared by the initial-distribution and
/// transition components. Natural coordinates are
/// `[class intercepts (k1-1) | ordered blocks (n_blocks x (k2-1)) | coefs (p)]`.
pub struct OrdinalLogitObjective<S> {
    k1: usize,
    k2: usize,
    p: usize,
    n_blocks: usize,
    rows: Vec<OrdinalRow<S>>,
    reparam: Reparam,
}

impl<S: Scalar> OrdinalLogitObjective<S> {
    fn new(
        k1: usize,
        k2: usize,
        p: usize,
        n_blocks: usize,
        rows: Vec<OrdinalRow<S>>,
        class_mask: Vec<bool>,
        coef_mask: Vec<bool>,
    ) -> Self {
        let mut segs = vec![Segment::Identity(class_mask)];
        for _ in 0..n_blocks {
            segs.push(Segment::OrderedDecreasing(k2 - 1));
        }
        segs.push(Segment::Identity(coef_mask));
        OrdinalLogitObjective {
            k1,
            k2,
            p,
            n_blocks,
            rows,
            reparam: Reparam::new(segs),
        }
    }

    /// Rows for the initial-state component: one per (cluster, subject,
    /// class) with weights w(u) z^(1)(v | u).
    pub fn initial_from_posteriors(
        post: &PosteriorQuantities<S>,
        data: &Dataset<S>,
        params: &Parameters<S>,
        constraints: &Constraints,
    ) -> Self {
        let k1 = params.dims.k1;
        let k2 = params.dims.k2;
        let p = params.dims.p_subject;
        let mut rows = Vec::new();
        for (cluster, cpost) in data.clusters.iter().zip(&post.clusters) {
            for (subject, spost) in cluster.subjects.iter().zip(&cpost.subjects) {
                for (u, &wu) in cpost.class_weights.iter().enumerate() {
                    if wu == S::zero() {
                        continue;
                    }
                    let weights: Vec<S> = spost.cond_state[u][0].iter().map(|&z| wu * z).collect();
                    rows.push(OrdinalRow {
                        class: u,
                        block: 0,
                        covariates: subject.covariates[0].clone(),
                        weights,
                    });
                }
            }
        }
        let class_mask = (2..=k1)
            .map(|u| constraints.is_frozen(ParamId::Delta0(u)))
            .collect();
        let coef_mask = (1..=p)
            .map(|j| constraints.is_frozen(ParamId::Delta2(j)))
            .collect();
        Self::new(k1, k2, p, 1, rows, class_mask, coef_mask)
    }

    /// Rows for the transition component into 0-based occasion `t >= 1`: one
    /// per (cluster, subject, class, origin state) with weights
    /// w(u) z^(t)(v0, v1 | u).
    pub fn transition_from_posteriors(
        post: &PosteriorQuantities<S>,
        data: &Dataset<S>,
        params: &Parameters<S>,
        t: usize,
        constraints: &Constraints,
    ) -> Self {
        let k1 = params.dims.k1;
        let k2 = params.dims.k2;
        let p = params.dims.p_subject;
        let mut rows = Vec::new();
        for (cluster, cpost) in data.clusters.iter().zip(&post.clusters) {
            for (subject, spost) in cluster.subjects.iter().zip(&cpost.subjects) {
                for (u, &wu) in cpost.class_weights.iter().enumerate() {
                    if wu == S::zero() {
                        continue;
                    }
                    for v0 in 0..k2 {
                        let weights: Vec<S> = spost.cond_pair[u][t - 1][v0]
                            .iter()
                            .map(|&z| wu * z)
                            .collect();
                        rows.push(OrdinalRow {
                            class: u,
                            block: v0,
                            covariates: subject.covariates[t].clone(),
                            weights,
                        });
                    }
                }
            }
        }
        let occ = t + 1; // 1-based occasion number used in parameter ids
        let class_mask = (2..=k1)
            .map(|u| constraints.is_frozen(ParamId::Eta0(occ, u)))
            .collect();
        let coef_mask = (1..=p)
            .map(|j| constraints.is_frozen(ParamId::Eta2(occ, j)))
            .collect();
        Self::new(k1, k2, p, k2, rows, class_mask, coef_mask)
    }

    fn ordered_start(&self) -> usize {
        self.k1 - 1
    }

    fn coef_start(&self) -> usize {
        self.k1 - 1 + self.n_blocks * (self.k2 - 1)
    }

    /// Natural point for the initial-distribution layout.
    pub fn free_point_initial(&self, params: &Parameters<S>) -> Vec<S> {
        let mut nat = Vec::with_capacity(self.reparam.n_natural());
        nat.extend_from_slice(&params.delta0);
        nat.extend_from_slice(&params.delta1);
        nat.extend_from_slice(&params.delta2);
        self.reparam.from_natural(&nat)
    }

    pub fn store_initial(&self, x: &[S], params: &mut Parameters<S>) {
        let nat = self.reparam.to_natural(x);
        let os = self.ordered_start();
        let cs = self.coef_start();
        params.delta0 = nat[..os].to_vec();
        params.delta1 = nat[os..cs].to_vec();
        params.delta2 = nat[cs..].to_vec();
    }

    /// Natural point for the transition layout into 0-based occasion `t`.
    pub fn free_point_transition(&self, params: &Parameters<S>, t: usize) -> Vec<S> {
        let ti = t - 1;
        let mut nat = Vec::with_capacity(self.reparam.n_natural());
        nat.extend_from_slice(&params.eta0[ti]);
        for row in &params.eta1[ti] {
            nat.extend_from_slice(row);
        }
        nat.extend_from_slice(&params.eta2[ti]);
        self.reparam.from_natural(&nat)
    }

    pub fn store_transition(&self, x: &[S], params: &mut Parameters<S>, t: usize) {
        let ti = t - 1;
        let nat = self.reparam.to_natural(x);
        let os = self.ordered_start();
        let cs = self.coef_start();
        params.eta0[ti] = nat[..os].to_vec();
        let k2m1 = self.k2 - 1;
        for v0 in 0..self.k2 {
            params.eta1[ti][v0] = nat[os + v0 * k2m1..os + (v0 + 1) * k2m1].to_vec();
        }
        params.eta2[ti] = nat[cs..].to_vec();
    }

    fn row_logits(&self, nat: &[S], row: &OrdinalRow<S>) -> Vec<S> {
        let os = self.ordered_start();
        let cs = self.coef_start();
        let k2m1 = self.k2 - 1;
        let mut shared = if row.class == 0 {
            S::zero()
        } else {
            nat[row.class - 1]
        };
        for (j, zj) in row.covariates.iter().enumerate() {
            shared += *zj * nat[cs + j];
        }
        (0..k2m1)
            .map(|a| shared + nat[os + row.block * k2m1 + a])
            .collect()
    }

    fn natural_eval(&self, nat: &[S], with_derivs: bool) -> (S, Vec<S>, SymMatrix<S>) {
        let k2 = self.k2;
        let k2m1 = k2 - 1;
        let os = self.ordered_start();
        let cs = self.coef_start();
        let n_nat = self.reparam.n_natural();
        let mut f = S::zero();
        let mut g = vec![S::zero(); n_nat];
        let mut h = SymMatrix::zeros(if with_derivs { n_nat } else { 0 });

        // scratch for the per-row natural column map of logit a:
        // columns (class intercept, ordered slot, each coefficient)
        for row in &self.rows {
            let logits = self.row_logits(nat, row);
            let log_pi = log_global_logit_probs(&logits)
                .expect("reparametrized cumulative logits are non-increasing");
            for (v, &c) in row.weights.iter().enumerate() {
                if c != S::zero() {
                    f += c * log_pi[v];
                }
            }
            if !with_derivs {
                continue;
            }
            let e: Vec<S> = logits.iter().map(|&gv| expit(gv)).collect();
            let wq: Vec<S> = e.iter().map(|&ev| ev * (S::one() - ev)).collect();
            let mut pi = vec![S::zero(); k2];
            pi[0] = S::one() - e[0];
            for v in 1..k2m1 {
                pi[v] = e[v - 1] - e[v];
            }
            pi[k2m1] = e[k2m1 - 1];

            // gradient and tridiagonal Hessian in logit space
            let ratio = |v: usize| row.weights[v] / floor_prob(pi[v]);
            let ratio2 = |v: usize| row.weights[v] / (floor_prob(pi[v]) * floor_prob(pi[v]));
            let mut dg = vec![S::zero(); k2m1];
            let mut hg = vec![vec![S::zero(); k2m1]; k2m1];
            for a in 0..k2m1 {
                let b = ratio(a + 1) - ratio(a);
                dg[a] = wq[a] * b;
                let wprime = wq[a] * (S::one() - (S::one() + S::one()) * e[a]);
                hg[a][a] = wprime * b - wq[a] * wq[a] * (ratio2(a + 1) + ratio2(a));
                if a + 1 < k2m1 {
                    let off = wq[a] * wq[a + 1] * ratio2(a + 1);
                    hg[a][a + 1] = off;
                    hg[a + 1][a] = off;
                }
            }

            // chain into natural coordinates: each logit a loads the class
            // intercept (weight 1), its ordered slot (weight 1), and every
            // coefficient (weight z_j)
            let n_cols = 2 + row.covariates.len();
            let mut cols = vec![(0usize, S::zero()); n_cols];
            let fill_cols = |a: usize, cols: &mut Vec<(usize, S)>| {
                cols.clear();
                if row.class > 0 {
                    cols.push((row.class - 1, S::one()));
                }
                cols.push((os + row.block * k2m1 + a, S::one()));
                for (j, zj) in row.covariates.iter().enumerate() {
                    if *zj != S::zero() {
                        cols.push((cs + j, *zj));
                    }
                }
            };
            let mut cols2 = vec![(0usize, S::zero()); n_cols];
            for a in 0..k2m1 {
                fill_cols(a, &mut cols);
                for &(ci, wi) in &cols {
                    g[ci] += wi * dg[a];
                }
                for a2 in a..(a + 2).min(k2m1) {
                    let hval = hg[a][a2];
                    if hval == S::zero() {
                        continue;
                    }
                    fill_cols(a2, &mut cols2);
                    for &(ci, wi) in &cols {
                        for &(cj, wj) in &cols2 {
                            let val = wi * wj * hval;
                            if a == a2 {
                                if ci <= cj {
                                    h.add_sym(ci, cj, val);
                                }
                            } else {
                                h.add_sym(ci, cj, val);
                            }
                        }
                    }
                }
            }
        }
        (f, g, h)
    }
}

impl<S: Scalar> Objective<S> for OrdinalLogitObjective<S> {
    fn dim(&self) -> usize {
        self.reparam.n_free()
    }

    fn value(&self, x: &[S]) -> S {
        let nat = self.reparam.to_natural(x);
        self.natural_eval(&nat, false).0
    }

    fn value_grad_hess(&self, x: &[S]) -> (S, Vec<S>, SymMatrix<S>) {
        let nat = self.reparam.to_natural(x);
        let (f, g_nat, h_nat) = self.natural_eval(&nat, true);
        let (g, h) = self.reparam.pullback(x, &g_nat, &h_nat);
        (f, g, h)
    }

    fn clamp(&self, x: &mut [S]) {
        self.reparam.clamp(x);
    }
}

// ---------------------------------------------------------------------------
// Public component drivers
// ---------------------------------------------------------------------------

fn run_component<S: Scalar, O: Objective<S>>(
    obj: &O,
    x0: Vec<S>,
    component: &'static str,
    settings: &NewtonSettings,
) -> Result<(Vec<S>, MStepStatus)> {
    let out = maximize(
        obj,
        x0,
        component,
        settings.max_iter,
        scalar(settings.grad_tol),
    )?;
    let status = MStepStatus {
        skipped: false,
        iterations: out.iterations,
        grad_norm: out.grad_norm.to_f64().unwrap_or(f64::NAN),
        converged: out.converged,
        clamped: out.clamped,
    };
    Ok((out.x, status))
}

/// Maximizes the Rasch block of the expected complete-data objective and
/// writes the updated `(theta, beta)` into `params`.
pub fn mstep_rasch<S: Scalar>(
    post: &PosteriorQuantities<S>,
    design: &ItemDesign,
    data: &Dataset<S>,
    params: &mut Parameters<S>,
    settings: &NewtonSettings,
    constraints: &Constraints,
) -> Result<MStepStatus> {
    let obj = RaschObjective::from_posteriors(post, design, data, params, constraints);
    if obj.dim() == 0 {
        return Ok(MStepStatus::skipped());
    }
    let x0 = obj.free_point(params);
    let (x, status) = run_component(&obj, x0, "rasch", settings)?;
    obj.store(&x, params);
    Ok(status)
}

/// Maximizes the cluster-class multinomial logit block; no-op when k1 = 1.
pub fn mstep_cluster_logit<S: Scalar>(
    post: &PosteriorQuantities<S>,
    data: &Dataset<S>,
    params: &mut Parameters<S>,
    settings: &NewtonSettings,
    constraints: &Constraints,
) -> Result<MStepStatus> {
    if params.dims.k1 == 1 {
        return Ok(MStepStatus::skipped());
    }
    let obj = ClusterLogitObjective::from_posteriors(post, data, params, constraints);
    if obj.dim() == 0 {
        return Ok(MStepStatus::skipped());
    }
    let x0 = obj.free_point(params);
    let (x, status) = run_component(&obj, x0, "cluster_logit", settings)?;
    obj.store(&x, params);
    Ok(status)
}

/// Maximizes the initial-state global-logit block; no-op when k2 = 1.
pub fn mstep_initial<S: Scalar>(
    post: &PosteriorQuantities<S>,
    data: &Dataset<S>,
    params: &mut Parameters<S>,
    settings: &NewtonSettings,
    constraints: &Constraints,
) -> Result<MStepStatus> {
    if params.dims.k2 == 1 {
        return Ok(MStepStatus::skipped());
    }
    let obj = OrdinalLogitObjective::initial_from_posteriors(post, data, params, constraints);
    let x0 = obj.free_point_initial(params);
    let (x, status) = run_component(&obj, x0, "initial_logit", settings)?;
    obj.store_initial(&x, params);
    Ok(status)
}

/// Maximizes the transition global-logit block into 0-based occasion
/// `t >= 1`; no-op when k2 = 1.
pub fn mstep_transition<S: Scalar>(
    post: &PosteriorQuantities<S>,
    data: &Dataset<S>,
    params: &mut Parameters<S>,
    t: usize,
    settings: &NewtonSettings,
    constraints: &Constraints,
) -> Result<MStepStatus> {
    if params.dims.k2 == 1 {
        return Ok(MStepStatus::skipped());
    }
    if t < 1 || t >= params.dims.n_occasions {
        return Err(Error::invalid_argument(format!(
            "transition occasion {t} out of range 1..{}",
            params.dims.n_occasions
        )));
    }
    let obj = OrdinalLogitObjective::transition_from_posteriors(post, data, params, t, constraints);
    let x0 = obj.free_point_transition(params, t);
    let (x, status) = run_component(&obj, x0, "transition_logit", settings)?;
    obj.store_transition(&x, params, t);
    Ok(status)
}
