//! Core library of the muonlab workspace.
//!
//! A small laboratory for studying how optimizer geometry shapes learning
//! dynamics. It implements the Muon / Spectral-GD family next to classical
//! baselines (GD, momentum GD, Adam), two linear architectures whose
//! training dynamics admit closed forms (a 2-layer deep linear network and
//! a gated multi-source routing network), the closed-form trajectory
//! oracles those dynamics follow, seedable data generators, and experiment
//! runners that record trajectories and derived metrics to disk.
//!
//! Module map:
//! - [`linalg`]: dense matrices, deterministic Jacobi SVD, exact and
//!   Newton-Schulz orthogonalization, spectral diagnostics.
//! - [`optim`]: optimizer update rules as explicit state machines.
//! - [`models`]: forward passes, losses, and analytic gradients.
//! - [`theory`]: closed-form singular-value trajectories, learn times,
//!   phase schedules, and the gating-race ODE integrator.
//! - [`datagen`]: seeded generators for regression data, initializations,
//!   routing batches, and the spurious-feature dataset.
//! - [`experiments`]: reproducible runners and their output files.
//! - [`config`]: strict JSON experiment configuration.

pub mod config;
pub mod datagen;
pub mod error;
pub mod experiments;
pub mod linalg;
pub mod models;
pub mod optim;
pub mod theory;

pub use error::{Error, Result};
pub use linalg::Matrix;
