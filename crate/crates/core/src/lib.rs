//! Simulation library for communication-efficient distributed and federated
//! optimization.
//!
//! The crate is organized by subsystem:
//!
//! - [`datasets`]: LibSVM parsing, synthetic fixtures and client partitioning.
//! - [`problems`]: finite-sum objectives, smoothness constants, reference solvers.
//! - [`compressors`]: the sparsifier zoo with certified `(eta, omega)` parameters.
//! - [`efbv`]: EF-BV with EF21 and DIANA as parameter settings.
//! - [`scafflix`]: FLIX personalization, Scafflix, i-Scaffnew and FLIX-GD.
//! - [`sppm`]: stochastic proximal point with arbitrary cohort sampling.
//! - [`harness`]: experiment configs, traces, sweeps and the CLI plumbing.
//!
//! Every randomized routine draws from counter-based streams keyed by
//! `(seed, client, round)` (see [`rng`]), so runs are reproducible bit for bit.

pub mod compressors;
pub mod datasets;
pub mod efbv;
pub mod error;
pub mod harness;
pub mod kmeans;
pub mod linalg;
pub mod minimize;
pub mod problems;
pub mod rng;
pub mod scafflix;
pub mod sppm;
pub mod trace;

pub use error::{Error, Result};
pub use trace::{Record, Trace, TraceMeta};
