//! Desk-scale plate-clearing stack built around a learned latent model of
//! plate dynamics.
//!
//! The crate is organized as a pipeline:
//!
//! - [`platesim`]: a deterministic, seeded 2D granular plate environment with
//!   acquire/rearrange dynamics, a weighted pickup/coverage reward, and mask
//!   rendering.
//! - [`perception`]: mask-space action instantiation — Gaussian density maps,
//!   densest/furthest pixel extraction, push geometry, principal-axis
//!   orientation, background-subtraction labeling, and the Dice metric.
//! - [`dynamics`]: a recurrent latent dynamics model (encoder, transition
//!   prior, observation decoder, reward head) with analytic gradients.
//! - [`trainer`]: replay-driven training loop with Adam, gradient clipping,
//!   and binary checkpoints.
//! - [`planner`]: exhaustive receding-horizon planning over primitive
//!   sequences, the full perception-action loop, and two baselines.
//! - [`harness`]: experiment orchestration and results emission.
//!
//! Everything is deterministic per seed: identical seeds and configs yield
//! bit-identical logs, metrics, and checkpoints.

pub mod config;
pub mod dynamics;
pub mod grid;
pub mod harness;
pub mod perception;
pub mod planner;
pub mod platesim;
pub mod random;
pub mod trainer;
