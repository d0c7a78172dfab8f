//! AUC, the benchmark grid and its reports.

mod auc;
mod benchmark;
mod report;

pub use auc::auc;
pub use benchmark::{
    mean_std, run_benchmark, run_benchmark_with_progress, BenchmarkConfig, BenchmarkReport, CellStatus, EvalCell,
    Progress, ReportMetadata, ReportRow, SeedResult, DEFAULT_SEEDS, DEFAULT_SHOTS,
};
pub use report::{format_cell_value, parse_report_json, render_report, ReportFormat, ERROR_MARK, NOT_APPLICABLE};
