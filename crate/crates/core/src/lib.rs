//! Crash-report deduplication that ranks candidate groups for an incoming
//! stack trace using every report-to-group similarity plus report timestamps.
//!
//! The pipeline is: [`harness::filtrate`] open groups with a fast TF-IDF pass,
//! rescore the surviving members with a [`similarity::SimilarityModel`], then
//! rank groups with the max-similarity baseline, the linear
//! [`ranker::LinearAggregator`], or one of the [`knn`] voting schemes.

pub mod error;
pub mod experiment;
pub mod features;
pub mod harness;
pub mod ingest;
pub mod knn;
pub mod model;
pub mod ranker;
pub mod similarity;

pub use error::{Error, Result};
pub use model::{Frame, Group, GroupId, GroupStore, Report, Timestamp};
