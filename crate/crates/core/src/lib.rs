//! Data-efficient learning toolkit.
//!
//! Learns good solutions from a few dozen expensive trials by combining:
//!
//! * Gaussian-process surrogates and Bayesian trial selection ([`gp`], [`bayes_opt`]),
//! * an offline MAP-Elites illumination of the intact system ([`map_elites`]),
//! * map-guided online adaptation after damage ([`adaptation`]),
//! * model learning from every per-tick sample of a trial ([`episode`]),
//!
//! evaluated on analytic testbeds ([`testbeds`]) through a reproducible
//! experiment harness ([`harness`]).

pub mod adaptation;
pub mod bayes_opt;
pub mod episode;
pub mod error;
pub mod gp;
pub mod harness;
pub mod map_elites;
pub mod rng;
pub mod testbeds;

pub use error::{Error, Result, RunAborted};

/// A point in the normalized search space `[0, 1]^d`.
pub type ParamVector = Vec<f64>;
