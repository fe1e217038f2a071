//! Batch key-rate scans over channel, amplitude and postselection grids.

pub mod checks;
pub mod config;
pub mod output;
pub mod scan;

pub use config::{ConfigError, ScanConfig};
pub use output::{emit, parse_csv, to_csv_string, Format, OutputError, CSV_HEADER};
pub use scan::{run_scan, run_scan_with_jobs, solve_grid, PointResult, ResultRow, ScanOptions, Status};
