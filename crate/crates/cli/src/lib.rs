//! Pipeline, benchmarks and synthetic data behind the `dssc` binary.

pub mod bench;
pub mod pipeline;
pub mod synth;
pub mod tune;
