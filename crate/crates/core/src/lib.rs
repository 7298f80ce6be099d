//! MQM-based human evaluation of machine translation.
//!
//! The crate is organised around the lifecycle of an MQM study:
//!
//! - [`taxonomy`]: error hierarchy, severities and weighting schemes.
//! - [`corpus`]: segments, ratings and metric scores, plus the TSV importers.
//! - [`scoring`]: segment/document/system scores, category breakdowns, ranks,
//!   per-rater tables and the Major-weight stability sweep.
//! - [`analysis`]: Pearson, Kendall tau-b and the WMT Kendall-like statistic,
//!   correlation reports against a chosen gold standard and document profiles.
//! - [`budget`]: a two-level Gaussian model of MQM ratings used to simulate
//!   rating projects and estimate how many ratings a reliable ranking needs.
//! - [`campaign`]: rater assignment, submission validation, an append-only
//!   event log and export back to corpus TSV.

pub mod analysis;
pub mod budget;
pub mod campaign;
pub mod corpus;
pub mod scoring;
pub mod synth;
pub mod taxonomy;
mod tsv;

pub use corpus::{
    Corpus, ErrorAnnotation, ImportMode, ScalarRating, Scale, SegmentKey, SegmentRating, Side,
    Span,
};
pub use scoring::{Orientation, RankTable, ScoreReport};
pub use taxonomy::{ErrorCategory, Severity, SubCategory, TopLevel, WeightScheme};

/// Seed used whenever the caller does not supply one.
pub const DEFAULT_SEED: u64 = 20_210_429;
