//! HANF: joint hyperparameter and neural architecture search over
//! simulated federated clients.
//!
//! The crate is organized around four subsystems:
//!
//! - [`diffcore`]: a reverse-mode autodiff tape with the convolutional
//!   primitives, losses, and SGD needed by the cell networks.
//! - [`supernet`]: the continuous cell-based architecture space, its
//!   discretization into a [`supernet::Genotype`], and the evaluation
//!   network built from one.
//! - [`bandit`]: the n-armed-bandit engine over a discrete hyperparameter
//!   space, with entropy-scheduled exploration budgets.
//! - [`fedsim`]: data partitioning, client-local training steps, FedAvg
//!   aggregation, and the alternating two-stage server loop.
//!
//! Dataset ingestion (IDX and synthetic) lives in [`data`], experiment
//! configuration in [`config`], and artifact-writing orchestration in
//! [`runner`]. See the `examples/` directory for one runnable example per
//! capability; the `hanf` binary exposes `search`, `eval`, and `both`
//! subcommands over the same machinery.

// Forward passes allocate one buffer per recorded operation; the system
// allocator round-trips those through mmap, which dominates runtime.
#[global_allocator]
static ALLOCATOR: mimalloc::MiMalloc = mimalloc::MiMalloc;

pub mod bandit;
pub mod config;
pub mod data;
pub mod diffcore;
pub mod error;
pub mod fedsim;
pub mod rng;
pub mod runner;
pub mod supernet;

pub use error::{HanfError, Result};
