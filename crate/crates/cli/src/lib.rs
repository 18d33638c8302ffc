//! Command-line front end: config parsing, parallel trial and sweep
//! execution, report files and the brute-force oracle.

pub mod config;
pub mod oracle;
pub mod report;
pub mod run;

pub use config::{parse_config, parse_oracle, ConfigError, ConfigFile, OracleSpec, SweepAxis, SweepSpec};
pub use oracle::run_oracle;
pub use report::{read_report, write_reports};
pub use run::{pool, run_config, run_sweep, write_sweep};
