//! Multilevel functional mixed-membership models.
//!
//! Each subject contributes `J` curves (channels) observed on a shared grid.
//! Every curve is a convex combination of `K` latent functional features,
//! each with its own mean function and covariance built from `M`
//! pseudo-eigenfunctions on a fixed B-spline basis. Memberships of a
//! subject's channels scatter around a subject-level centroid, and the
//! centroids follow a repulsive point process on the simplex.
//!
//! The crate covers generative simulation ([`simulate`]), MCMC posterior
//! inference ([`sampler`]) and posterior summaries including model
//! selection over `K` ([`posterior`]).

pub mod basis;
pub mod dist;
pub mod error;
pub mod model;
pub mod posterior;
pub mod priors;
pub mod sampler;
pub mod simulate;
pub mod validation;

pub use error::{FunmixError, Result};
