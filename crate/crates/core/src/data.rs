//! Observed data: clusters of subjects with binary item responses and
//! covariates at the cluster and subject-occasion level.

use crate::design::ItemDesign;
use crate::error::{Error, Result};
use crate::num::Scalar;

/// One subject's longitudinal record.
#[derive(Debug, Clone, PartialEq)]
pub struct Subject<S> {
    pub id: String,
    /// `responses[t][j]`: `Some(true)` correct, `Some(false)` incorrect,
    /// `None` missing. Shape must match the item design.
    pub responses: Vec<Vec<Option<bool>>>,
    /// `covariates[t]`: the subject's covariate vector at occasion `t`
    /// (length `p_subject`, possibly 0).
    pub covariates: Vec<Vec<S>>,
}

/// A cluster (e.g. a school class) of subjects sharing cluster covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct Cluster<S> {
    pub id: String,
    /// Cluster covariate vector (length `p_cluster`, possibly 0).
    pub covariates: Vec<S>,
    pub subjects: Vec<Subject<S>>,
}

/// The full sample: all clusters plus covariate metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<S> {
    pub clusters: Vec<Cluster<S>>,
    pub p_cluster: usize,
    pub p_subject: usize,
    /// Column names used when reading/writing covariate files; defaults to
    /// `x1..` / `z1..` when data are built in memory.
    pub cluster_covariate_names: Vec<String>,
    pub subject_covariate_names: Vec<String>,
}

impl<S: Scalar> Dataset<S> {
    /// Builds a dataset and fills in default covariate column names.
    pub fn new(clusters: Vec<Cluster<S>>, p_cluster: usize, p_subject: usize) -> Self {
        Dataset {
            clusters,
            p_cluster,
            p_subject,
            cluster_covariate_names: (1..=p_cluster).map(|i| format!("x{i}")).collect(),
            subject_covariate_names: (1..=p_subject).map(|i| format!("z{i}")).collect(),
        }
    }

    /// Total number of level-1 units (subjects) across clusters.
    pub fn n_subjects(&self) -> usize {
        self.clusters.iter().map(|c| c.subjects.len()).sum()
    }

    pub fn n_clusters(&self) -> usize {
        self.clusters.len()
    }

    /// Checks shapes against the design: response arrays match J_t per
    /// occasion and covariate vectors have the declared lengths.
    pub fn validate(&self, design: &ItemDesign) -> Result<()> {
        let t_count = design.n_occasions();
        for cluster in &self.clusters {
            if cluster.covariates.len() != self.p_cluster {
                return Err(Error::dims(
                    format!("cluster {} covariates", cluster.id),
                    self.p_cluster,
                    cluster.covariates.len(),
                ));
            }
            for subject in &cluster.subjects {
                if subject.responses.len() != t_count {
                    return Err(Error::dims(
                        format!("subject {}/{} occasions", cluster.id, subject.id),
                        t_count,
                        subject.responses.len(),
                    ));
                }
                for (t, row) in subject.responses.iter().enumerate() {
                    if row.len() != design.items_at(t) {
                        return Err(Error::dims(
                            format!(
                                "subject {}/{} responses at occasion {}",
                                cluster.id,
                                subject.id,
                                t + 1
                            ),
                            design.items_at(t),
                            row.len(),
                        ));
                    }
                }
                if subject.covariates.len() != t_count {
                    return Err(Error::dims(
                        format!("subject {}/{} covariate occasions", cluster.id, subject.id),
                        t_count,
                        subject.covariates.len(),
                    ));
                }
                for (t, z) in subject.covariates.iter().enumerate() {
                    if z.len() != self.p_subject {
                        return Err(Error::dims(
                            format!(
                                "subject {}/{} covariates at occasion {}",
                                cluster.id,
                                subject.id,
                                t + 1
                            ),
                            self.p_subject,
                            z.len(),
                        ));
                    }
                }
            }
        }
        Ok(())
    }
}
