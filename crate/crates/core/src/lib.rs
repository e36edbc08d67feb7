//! Temporally coherent Bayesian nonparametric tracklet clustering.
//!
//! A video is a topologically sorted sequence of tracklets (short runs of
//! detections represented by one mean feature vector each). Entities are
//! Gaussian mixture components discovered with seating-process priors
//! that respect temporal coherence: spatio-temporally close tracklets
//! tend to keep their label, frame-overlapping tracklets can never share
//! one, and a fixed wide component absorbs false detections. The
//! franchise variant additionally gates components per temporal segment
//! through a buffet-style activation prior.
//!
//! The crate provides forward samplers for synthetic data with ground
//! truth, collapsed blocked Gibbs inference plus a single-pass online
//! variant, the evaluation metric suite, dataset and result file formats,
//! and the `tcclust` command-line tool built on top of them.

pub mod config;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod inference;
pub mod model;
pub mod results;
pub mod synthesis;
pub mod types;

pub use error::{Error, Result};
