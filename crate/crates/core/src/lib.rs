//! Multilevel latent Markov Rasch models for clustered longitudinal binary
//! item responses: exact forward/backward likelihood evaluation, EM
//! estimation with weighted logit M-steps, BIC model selection, profile
//! standard errors, posterior decoding, and a generative simulator.
//!
//! All numerics are generic over a floating [`Scalar`]; the `*F64` aliases
//! below are the instantiations used by the command-line tool.

pub mod data;
pub mod design;
pub mod error;
pub mod likelihood;
pub mod link;
pub mod newton;
pub mod num;
pub mod params;
pub mod posterior;

pub use data::{Cluster, Dataset, Subject};
pub use design::ItemDesign;
pub use error::{Error, Result};
pub use likelihood::{cluster_loglik, subject_loglik_given_u, total_loglik};
pub use num::Scalar;
pub use params::{count_parameters, ModelDims, ParamId, Parameters, ParametersDoc};
pub use posterior::{decode, estep, Decoding, PosteriorQuantities};

/// Concrete f64 instantiations used by the CLI and most callers.
pub type ParametersF64 = Parameters<f64>;
pub type DatasetF64 = Dataset<f64>;
pub type ClusterF64 = Cluster<f64>;
pub type SubjectF64 = Subject<f64>;
