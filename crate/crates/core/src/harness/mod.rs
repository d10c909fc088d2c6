pub mod cli;
pub mod config;
pub mod manifest;
pub mod plot;
pub mod seed;
pub mod stages;

pub use seed::{derive_seed, stage_rng};
