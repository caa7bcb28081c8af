//! Experiment harness: configuration, comparators, analytics and reports.

pub mod analysis;
pub mod audit;
pub mod comparator;
pub mod config;
pub mod experiment;
