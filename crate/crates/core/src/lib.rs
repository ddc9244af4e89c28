//! Core of the feasibility-consistency harness.

pub mod classify;
pub mod config;
pub mod domain;
pub mod metrics;
pub mod perturb;
pub mod pipeline;
pub mod prompt;
pub mod providers;
pub mod review;
pub mod seed;
pub mod state;
pub mod store;
pub mod taskgen;
