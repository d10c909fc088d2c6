//! Adaptive teacher-student collaboration for diffusion sampling.
//!
//! A few-step consistency student generates first; a tractable quality
//! estimator scores each sample against a percentile cut-off, and samples
//! that fall below it are handed to a many-step teacher for refinement or
//! regeneration. Everything runs on low-dimensional conditional Gaussian
//! mixtures so every quantity has an exact reference.
//!
//! Module map:
//!
//! - [`tensor`], [`nn`]: dense tensors, the MLP noise predictor, Adam, EMA
//! - [`diffusion`]: noise schedules, the forward kernel, guidance, exact scores
//! - [`solvers`]: DDIM, second-order multistep DPM, multistep consistency sampling
//! - [`teacher`]: denoising-loss training of the teacher
//! - [`distill`]: consistency distillation of the student
//! - [`oracle`]: quality scoring, threshold calibration, decisions
//! - [`cascade`]: the adaptive pipeline with NFE accounting
//! - [`analysis`]: curvature, distances, correlations, win-rate buckets
//! - [`harness`]: configuration, manifests, seeding, plots and the CLI stages

pub mod analysis;
pub mod cascade;
pub mod diffusion;
pub mod distill;
pub mod error;
pub mod harness;
pub mod nn;
pub mod oracle;
pub mod solvers;
pub mod teacher;
pub mod tensor;

pub use error::{Error, Result};
