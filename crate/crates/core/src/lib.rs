//! Graph-based multivariate conditional autoregressive (MCAR) models for
//! areal data.
//!
//! The joint field `U` (units x responses) is a Gaussian Markov random field
//! whose adjacency combines a spatial graph and a response graph. Three
//! parameterizations of its precision are provided, together with a
//! G-Wishart sampler, a hierarchical MCMC fitter for binomial and Poisson
//! counts, and DIC-based comparison.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod fit;
pub mod graph;
pub mod gwishart;
pub mod io;
pub mod kernels;
pub mod precision;
pub mod sparse;
pub mod synth;

pub use data::{ArealDataset, Likelihood};
pub use error::{Error, Result};
pub use graph::{build_joint_adjacency, maximal_cliques, nu, AdjacencyGraph, CliqueSet, JointAdjacency, Variant};
pub use precision::{
    validate, Model1Params, Model2Params, Model3Params, ModelGraphs, ModelKind, ModelParams, Violation,
};
pub use sparse::{cholesky, CholeskyFactor, SparseSymMatrix};
