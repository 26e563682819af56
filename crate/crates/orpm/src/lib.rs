//! File formats, synthetic harness, experiments and benchmarks around
//! [`orpm_core`]. The `orpm` binary exposes all of it on the command line.

pub mod bench;
pub mod experiment;
pub mod formats;
pub mod harness;

pub use orpm_core as core;
