//! Tract-level homeownership equity analysis: parcel ingest, owner-entity
//! classification, surname-geography race imputation, tract aggregation,
//! classifier evaluation and report generation.

pub mod analytics;
pub mod entity;
pub mod evaluation;
pub mod impute;
pub mod ingest;
pub mod lowess;
pub mod pipeline;
pub mod race;
pub mod report;
pub mod synth;

pub use race::{RaceCategory, RaceDistribution, RaceMap};
