//! Online (constant-memory) estimation of hidden Markov models whose
//! observations are Riemannian-Gaussian points on a Hadamard manifold —
//! the Poincaré disk or the SPD(d) cone under the affine-invariant metric.
//!
//! The estimator has two phases: Riemannian K-means on a data prefix
//! (transition counting plus mean/dispersion estimation through the
//! δ = E[d²] natural-parameter bridge), followed by a stochastic-
//! approximation filter that keeps only a Δ-sized observation window and
//! updates the transition matrix multiplicatively and the component means
//! along geodesics.
//!
//! Modules:
//! - [`manifold`]: distances, geodesics, translations, Karcher means;
//! - [`gaussian`]: Riemannian Gaussian density, normalizer, δ↔σ, sampling;
//! - [`markov`]: parameter container, validation, chain simulation;
//! - [`kmeans`]: initialization phase;
//! - [`online`]: the constant-memory fine-tuning filter;
//! - [`experiment`]/[`config`]: decoding, scoring, and the experiment grid.

pub mod config;
pub mod error;
pub mod experiment;
pub mod gaussian;
pub mod kmeans;
pub mod manifold;
pub mod markov;
pub mod online;

pub use config::ExperimentConfig;
pub use error::{Error, Result};
pub use gaussian::{delta_from_sigma, log_normalizer, sigma_from_delta, RiemannianGaussian};
pub use kmeans::{estimate_initial_params, kmeans_fit, seed_filter, KMeansResult};
pub use manifold::{
    distance, exp_map, geodesic_point, karcher_mean, log_map, squared_distance, translate_from,
    translate_to, ManifoldKind, ManifoldPoint, Tangent,
};
pub use markov::{simulate_chain, ChainSample, HmmParams};
pub use online::{run_online, FilterState, OnlineOptions, OnlineRun, SmoothingSlice};
