//! Detection of observations that unduly influence high-dimensional variable
//! selection.
//!
//! The central quantity is the generalized difference in model selection
//! (GDF): for an observation `i`, the number of predictors whose
//! selected/unselected status flips when `i` is removed from (or added to) the
//! data. The crate provides
//!
//! - penalized selectors (LASSO, scaled LASSO, SCAD, MCP) for linear and
//!   logistic models, with cross-validated tuning ([`selectors`]),
//! - the GDF profile of a dataset ([`influence`]),
//! - ten threshold backends: the normal approximation, six parametric count
//!   families fitted by maximum likelihood ([`count_models`], [`thresholds`])
//!   and three bootstraps ([`bootstrap`]),
//! - the clustering-based ClusMIP detector and the HIM, MIP and DF(LASSO)
//!   baselines ([`clustering`], [`detection`]),
//! - a simulation harness for power / false-positive-rate studies
//!   ([`simharness`]).

// `!(x > 0.0)` is used deliberately so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod bootstrap;
pub mod clustering;
pub mod count_models;
pub mod datamodel;
pub mod detection;
mod error;
pub mod influence;
pub mod io;
pub mod rng;
pub mod selectors;
pub mod simharness;
pub mod thresholds;

pub use datamodel::{validate_dataset, Dataset, IndexSet, SelectionFit, Selector, Task};
pub use error::{Error, Result};
