// SPDX-License-Identifier: Apache-2.0

//! Benchmark harness for the node / auto-scaler / load-balancer use case.

pub mod harness;
pub mod report;
pub mod scenario;

pub use harness::{BenchError, BenchResult, Harness, LoadReport, ObjectCounts, ScenarioReport, SetupReport, Transport};
pub use report::BenchReport;
pub use scenario::ScenarioConfig;

/// Provenance chain expected for the node added by the ex1 scenario.
pub const EXAMPLE1_CHAIN: [&str; 5] = ["Insert", "ProcCall", "TriggerFire", "Update", "ExternalRequest"];

/// Object counts `setup_example1` must produce.
pub const SETUP_COUNTS: ObjectCounts = ObjectCounts {
    schemas: 7,
    tables: 7,
    procedures: 9,
    triggers: 5,
};
