//! Bound and estimate classifier fairness metrics when only two overlapping
//! marginal datasets are available.
//!
//! The crate enumerates the feasible set of joint distributions consistent
//! with an internal marginal (predictive attributes) and an external marginal
//! (protected attribute), propagates a fixed classifier through each feasible
//! joint to bound Disparate Impact and Demographic Disparity, and compares the
//! bounds against single-point structural estimators (latent Naive Bayes
//! fitted by a two-dataset EM, and marginal preservation). A simulation-study
//! harness and a real-data experiment pipeline drive the two approaches end
//! to end.

pub mod fairness;
pub mod feasible;
pub mod pipeline;
pub mod prob;
pub mod simulation;
pub mod structural;

pub use prob::{
    kl_divergence, sample_dirichlet, AxisPair, BinaryJoint3, CategoricalDataset,
    CategoricalTable, Marginal2, ProbError, RngSeed, Variable,
};
