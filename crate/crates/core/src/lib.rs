//! Energy-optimal offloading of sequential tasks in mobile edge computing.
//!
//! A task is a chain of sub-tasks; the device runs a prefix locally, uploads
//! the input of one sub-task and the edge server finishes the chain. The
//! crate solves the joint offloading decision and resource allocation under
//! three channel regimes:
//!
//! - [`slow`]: the gain is known and constant. Closed-form local frequencies
//!   plus golden-section search over the upload duration.
//! - [`fastdp`] and [`policy`]: the gain changes every coherence block.
//!   Offline value tables and an online stopping rule.
//! - [`ergodic`]: the coherence time tends to zero. Water-filling power
//!   allocation and an offline choice of the offload index.
//!
//! [`oracle`] holds brute-force references used by the test-suites and the
//! `verify` command.

pub mod channel;
pub mod cli;
pub mod config;
pub mod ergodic;
pub mod error;
pub mod fastdp;
pub mod model;
pub mod oracle;
pub mod policy;
pub mod slow;

pub use error::{Error, Result};
pub use model::{Duration, Energy, Gain, SystemParams, TaskProfile};
