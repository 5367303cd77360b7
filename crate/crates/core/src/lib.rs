//! Multilevel regression and poststratification for categorical survey data.
//!
//! The pipeline runs bottom-up through these modules:
//!
//! * [`schema`]: factor space, cell numbering, spatial adjacency
//! * [`ingest`]: survey CSV cleaning, recoding, merge and holdout split
//! * [`census`]: cell population counts and subpopulation weights
//! * [`lgm`]: latent Gaussian model blocks, precisions and hyperpriors
//! * [`inference`]: nested Laplace inference over a hyperparameter grid
//! * [`criteria`]: WAIC and the quantile Brier score
//! * [`poststrat`]: per-draw poststratified estimands and summaries
//! * [`cluster`]: latent class segmentation by EM
//! * [`synthgen`]: synthetic populations and biased samples

pub mod census;
pub mod cluster;
pub mod criteria;
pub mod error;
pub mod inference;
pub mod ingest;
pub mod lgm;
pub mod poststrat;
pub mod rng;
pub mod schema;
pub mod stats;
pub mod synthgen;

pub use error::{Error, Result};
pub use schema::{CategoricalSchema, CellIndex, Factor, SpatialGraph};
