//! Independent oracles and the property suites behind `deltanet check`.

pub mod oracle;
pub mod suites;

pub use suites::{run_suite, CheckResult, Fingerprint, ReportBundle, Suite, SuiteSize};
