//! Scans Debian-format package corpora for x86-64 instructions that touch
//! vector registers, attributes them to source, and aggregates the results.

pub mod ar;
pub mod binobj;
pub mod classify;
pub mod corpus;
pub mod decode;
pub mod error;
pub mod lineage;
pub mod metrics;
pub mod report;
pub mod scan;
pub mod warning;

pub use error::{Error, Result};
pub use metrics::{BinaryReport, CorpusReport, PackageReport};
pub use report::{run_scan, ScanConfig};
pub use scan::{scan_file, Execution, ScanOptions};
pub use warning::Warning;
