//! Edge-mask explanations for graph neural network classifiers, scored
//! through in-distribution proxy graphs.
//!
//! The pipeline: generate synthetic motif datasets ([`datasets`]), train a
//! small graph classifier ([`models`]), fit an edge-mask explainer whose
//! faithfulness term is evaluated on proxy graphs produced by a paired
//! graph autoencoder ([`explainer`], [`proxy`], [`trainer`]), and measure
//! explanation quality against ground-truth motifs and distribution shift
//! ([`eval`]). Baseline explainers live in [`baselines`].
//!
//! Everything is deterministic given a seed: same inputs, same bytes out.

pub mod autodiff;
pub mod baselines;
pub mod datasets;
pub mod eval;
pub mod explainer;
pub mod graph;
pub mod models;
pub mod optim;
pub mod proxy;
mod seed;
pub mod trainer;
