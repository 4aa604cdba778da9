//! Experiment harness: synthetic-data experiment drivers, cost benchmarks,
//! and report plumbing shared by the `tenfact` binary and the test suites.

pub mod bench;
pub mod experiments;
pub mod report;
