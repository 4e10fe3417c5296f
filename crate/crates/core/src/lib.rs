//! Comorbidity profiling from longitudinal medical-claims records.
//!
//! The library computes complete, age- and gender-resolved comorbidity
//! profiles for an index disease from claims data:
//!
//! * [`model`] / [`ingest`]: the claims data model and validated CSV
//!   ingestion (patients, diagnoses, prescriptions).
//! * [`cohort`]: index-disease cohort and comparison-population selection.
//! * [`stats`]: 2x2 contingency tables, relative risk with confidence
//!   interval, chi-squared independence test, Benjamini-Hochberg FDR control.
//! * [`scan`]: the age-resolved co-occurrence scan producing a
//!   [`scan::ComorbidityProfile`].
//! * [`gender`]: log-quotient gender-ratio statistics for comorbidities and
//!   for per-patient diagnosis/prescription counts.
//! * [`leadlag`]: two-year temporal lead/lag indicators with a
//!   surrogate-data permutation test.
//! * [`synthgen`]: a synthetic-cohort generator with planted effects, used
//!   as the verification oracle for everything above.
//! * [`config`] / [`pipeline`]: run configuration and batch orchestration
//!   backing the `comorbscan` CLI.
//!
//! All analysis entry points are deterministic: a fixed dataset, config, and
//! seed produce byte-identical output files regardless of thread count.

pub mod cohort;
pub mod config;
mod error;
mod fingerprint;
pub mod gender;
pub mod ingest;
pub mod leadlag;
pub mod model;
pub mod pipeline;
pub mod scan;
pub mod stats;
pub mod synthgen;

pub use error::Error;
pub use fingerprint::Fnv1a;

pub type Result<T, E = Error> = std::result::Result<T, E>;
