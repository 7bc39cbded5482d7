//! Bayesian feature learning in a restricted Boltzmann machine with a single
//! hidden unit and binary synapses.
//!
//! - [`model`]: the generative model, seeded sampling, estimators and overlaps
//! - [`io`]: CSV datasets and MNIST IDX ingestion
//! - [`rbm_mp`], [`rbm_amp`], [`hidden_field`]: message passing for the RBM posterior
//! - [`hopfield`]: message passing for its small-`beta` Hopfield approximation
//! - [`meanfield`]: density evolution and replica-symmetric saddle points
//! - [`hyperparam`]: EM learning of the inverse temperature
//! - [`oracle`]: exact enumeration for small `N`
//! - [`ensemble`]: seeded ensembles of planted instances

pub mod ensemble;
pub mod error;
pub mod hidden_field;
pub mod hopfield;
pub mod hyperparam;
pub mod io;
pub mod meanfield;
pub mod model;
pub mod mp;
pub mod oracle;
pub mod quadrature;
pub mod rbm_amp;
pub mod rbm_mp;
pub mod rng;

pub use error::{Error, Result};
pub use model::{
    mpm_estimate, overlaps, sample_dataset, Dataset, FeatureVector, Marginals, ModelParams, Overlaps, Variant,
};
pub use mp::{BetheObservables, ConvergenceReport, InitKind, MpOptions, RunRecord, Schedule};
