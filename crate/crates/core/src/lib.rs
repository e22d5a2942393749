//! Parsimonious latent-space world models on exactly simulable grid worlds.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`], [`tape`], [`nn`], [`optim`]: dense `f64` tensors, reverse-mode
//!   differentiation, MLPs and Adam.
//! - [`envs`]: the heart, wall and shapes environments and transition datasets.
//! - [`model`]: encoder, query network and residual dynamics for every variant.
//! - [`training`]: losses and the minibatch training loop.
//! - [`eval`]: multi-step prediction, delta clustering, norms and probes.
//! - [`config`], [`suite`], [`cli`]: experiment files, study bundles and the
//!   command-line driver.

pub mod cli;
pub mod config;
pub mod container;
pub mod envs;
pub mod eval;
pub mod model;
pub mod nn;
pub mod optim;
pub mod rng;
pub mod suite;
pub mod tape;
pub mod tensor;
pub mod training;
