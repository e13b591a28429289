//! On-disk report: `replications.csv`, `summary.csv`, `tests.csv`, the three
//! CI plots, and `metadata.json`.
//!
//! Everything except `metadata.json` is a pure function of the specs and
//! their seeds. Wall-clock timings and failure notes go to the metadata file
//! so the rest stays byte-for-byte reproducible.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use crate::grid::ExperimentSpec;
use crate::plots::ci_plot_svg;
use crate::runner::{
    ExperimentReport, Metric, ReplicationFailure, ReplicationRow, SummaryRow, TestRow, Timings,
};
use crate::HarnessError;

pub const REPLICATIONS_FILE: &str = "replications.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const TESTS_FILE: &str = "tests.csv";
pub const METADATA_FILE: &str = "metadata.json";

pub const REPLICATIONS_HEADER: [&str; 8] = [
    "experiment_id",
    "train_idx",
    "test_idx",
    "method",
    "cutoff",
    "fi",
    "pmd",
    "mape",
];
pub const SUMMARY_HEADER: [&str; 8] = [
    "experiment_id",
    "method",
    "cutoff",
    "metric",
    "mean",
    "ci_low",
    "ci_high",
    "n",
];
pub const TESTS_HEADER: [&str; 7] = [
    "experiment_id",
    "cutoff",
    "metric",
    "t_stat",
    "dof",
    "significant",
    "better_method",
];

pub fn ci_plot_file(metric: Metric) -> String {
    format!("ci_plot_{}.svg", metric.name())
}

/// Header row always, then one record per row; an empty slice gives a
/// header-only file.
fn write_csv<T: Serialize>(path: &Path, header: &[&str], rows: &[T]) -> Result<(), HarnessError> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| HarnessError::csv(path, e))?;
    w.write_record(header)
        .map_err(|e| HarnessError::csv(path, e))?;
    for row in rows {
        w.serialize(row).map_err(|e| HarnessError::csv(path, e))?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

#[derive(Serialize)]
struct ExperimentMetadata<'a> {
    spec: &'a ExperimentSpec,
    expected_replications: usize,
    completed_replications: usize,
    partial: bool,
    failures: &'a [ReplicationFailure],
    timings: &'a Timings,
}

#[derive(Serialize)]
struct Metadata<'a> {
    tool: &'static str,
    version: &'static str,
    experiments: Vec<ExperimentMetadata<'a>>,
}

fn write_text(path: &Path, text: &str) -> Result<(), HarnessError> {
    let mut f = BufWriter::new(File::create(path).map_err(|e| HarnessError::io(path, e))?);
    f.write_all(text.as_bytes())
        .map_err(|e| HarnessError::io(path, e))?;
    f.flush().map_err(|e| HarnessError::io(path, e))
}

/// Writes the combined report for `reports` (one or more experiments) into
/// `dir`, creating it if needed.
pub fn emit_report(reports: &[ExperimentReport], dir: &Path) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let rows: Vec<&ReplicationRow> = reports.iter().flat_map(|r| &r.rows).collect();
    let summaries: Vec<&SummaryRow> = reports.iter().flat_map(|r| &r.summaries).collect();
    let tests: Vec<&TestRow> = reports.iter().flat_map(|r| &r.tests).collect();
    write_csv(&dir.join(REPLICATIONS_FILE), &REPLICATIONS_HEADER, &rows)?;
    write_csv(&dir.join(SUMMARY_FILE), &SUMMARY_HEADER, &summaries)?;
    write_csv(&dir.join(TESTS_FILE), &TESTS_HEADER, &tests)?;

    let owned_summaries: Vec<SummaryRow> = summaries.into_iter().cloned().collect();
    let owned_tests: Vec<TestRow> = tests.into_iter().cloned().collect();
    for metric in Metric::ALL {
        let svg = ci_plot_svg(&owned_summaries, &owned_tests, metric);
        write_text(&dir.join(ci_plot_file(metric)), &svg)?;
    }

    let meta = Metadata {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        experiments: reports
            .iter()
            .map(|r| ExperimentMetadata {
                spec: &r.spec,
                expected_replications: r.expected_replications,
                completed_replications: r.completed_replications,
                partial: r.is_partial(),
                failures: &r.failures,
                timings: &r.timings,
            })
            .collect(),
    };
    let json =
        serde_json::to_string_pretty(&meta).map_err(|e| HarnessError::Config(e.to_string()))?;
    write_text(&dir.join(METADATA_FILE), &json)
}
