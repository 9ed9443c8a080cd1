//! Render a benchmark report as JSON (lossless), CSV (flat rows), or
//! Markdown (per-seed tables shaped like the write-up: baselines first, then
//! each method's best row), and write the chosen formats to disk.

use super::{
    AblationTable, BenchmarkReport, ReportFormat, RunRow, RunStatus, SweepTable,
};
use crate::error::{Error, Result};
use std::path::{Path, PathBuf};

/// Lossless JSON: parsing it back and re-rendering reproduces the same bytes.
pub fn render_json(report: &BenchmarkReport) -> String {
    let mut text = serde_json::to_string_pretty(report).expect("report serializes");
    text.push('\n');
    text
}

pub fn parse_json(text: &str) -> Result<BenchmarkReport> {
    let report: BenchmarkReport = serde_json::from_str(text)?;
    if report.version != super::REPORT_VERSION {
        return Err(Error::Parse(format!(
            "report version {} not supported (expected {})",
            report.version,
            super::REPORT_VERSION
        )));
    }
    Ok(report)
}

const CSV_HEADER: [&str; 15] = [
    "seed",
    "method",
    "lr",
    "status",
    "f1_test",
    "f1_forget",
    "mia",
    "elapsed_secs",
    "u",
    "e",
    "t",
    "gum",
    "nomus",
    "speedup",
    "error",
];

fn csv_fields(row: &RunRow) -> Vec<String> {
    let mut fields = vec![
        row.seed.to_string(),
        row.method.to_string(),
        row.lr.to_string(),
        match row.status {
            RunStatus::Completed => "completed".into(),
            RunStatus::Failed => "failed".into(),
        },
    ];
    match &row.record {
        Some(r) => fields.extend(
            [r.f1_test, r.f1_forget, r.mia, r.elapsed_secs, r.u, r.e, r.t, r.gum, r.nomus,
             r.speedup]
            .iter()
            .map(f64::to_string),
        ),
        None => fields.extend(std::iter::repeat(String::new()).take(10)),
    }
    fields.push(row.error.clone().unwrap_or_default());
    fields
}

fn write_csv<I>(header: &[&str], rows: I) -> String
where
    I: IntoIterator<Item = Vec<String>>,
{
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record(header).expect("csv header");
    for row in rows {
        writer.write_record(&row).expect("csv row");
    }
    String::from_utf8(writer.into_inner().expect("csv flush")).expect("csv utf8")
}

/// Flat CSV, one line per row (baselines and grid cells alike). Failed rows
/// keep their identity columns; their metric columns are empty.
pub fn render_csv(report: &BenchmarkReport) -> String {
    write_csv(&CSV_HEADER, report.rows.iter().map(csv_fields))
}

fn fmt3(v: f64) -> String {
    format!("{v:.3}")
}

fn markdown_row(label: &str, lr: &str, row: Option<&RunRow>) -> String {
    match row.and_then(|r| r.record.as_ref()) {
        Some(r) => format!(
            "| {label} | {lr} | {} | {} | {} | {} | {:.2}x |",
            fmt3(r.f1_test),
            fmt3(r.f1_forget),
            fmt3(r.mia),
            fmt3(r.gum),
            r.speedup,
        ),
        None => format!("| {label} | {lr} | - | - | - | - | - |"),
    }
}

/// One table per seed: the original and gold rows first, then each method's
/// best completed row (highest GUM, ties to the smaller learning rate).
/// Methods whose every run failed still get a placeholder row.
pub fn render_markdown(report: &BenchmarkReport) -> String {
    let mut out = String::from("# Unlearning benchmark\n");
    let methods = report.methods();
    for &seed in &report.config.seeds {
        out.push_str(&format!("\n## Seed {seed}\n\n"));
        out.push_str("| Method | LR | F1_T | F1_F | MIA | GUM | Speedup |\n");
        out.push_str("|---|---|---|---|---|---|---|\n");
        for method in [crate::unlearn::Method::Original, crate::unlearn::Method::Gold] {
            let row = report.baseline_row(method, seed);
            out.push_str(&markdown_row(method.as_str(), "-", row));
            out.push('\n');
        }
        for &method in &methods {
            let row = report.best_row(method, seed);
            let lr = row.map_or_else(|| "-".to_string(), |r| format!("{:e}", r.lr));
            out.push_str(&markdown_row(method.as_str(), &lr, row));
            out.push('\n');
        }
    }
    out
}

/// Plot-ready CSV for a learning-rate sweep.
pub fn render_sweep_csv(table: &SweepTable) -> String {
    let header = ["lr", "f1_test", "f1_forget", "mia", "status", "error"];
    write_csv(
        &header,
        table.rows.iter().map(|row| {
            let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
            vec![
                row.lr.to_string(),
                opt(row.f1_test),
                opt(row.f1_forget),
                opt(row.mia),
                match row.status {
                    RunStatus::Completed => "completed".into(),
                    RunStatus::Failed => "failed".into(),
                },
                row.error.clone().unwrap_or_default(),
            ]
        }),
    )
}

/// CSV for the epoch ablation, one row per (seed, epoch budget).
pub fn render_ablation_csv(table: &AblationTable) -> String {
    let header = [
        "epochs",
        "seed",
        "f1_test",
        "f1_test_gold",
        "mia_unlearned",
        "mia_gold",
        "mia_original",
        "gum",
        "status",
        "error",
    ];
    write_csv(
        &header,
        table.rows.iter().map(|row| {
            let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
            vec![
                row.epochs.to_string(),
                row.seed.to_string(),
                opt(row.f1_test),
                row.f1_test_gold.to_string(),
                opt(row.mia_unlearned),
                row.mia_gold.to_string(),
                row.mia_original.to_string(),
                opt(row.gum),
                match row.status {
                    RunStatus::Completed => "completed".into(),
                    RunStatus::Failed => "failed".into(),
                },
                row.error.clone().unwrap_or_default(),
            ]
        }),
    )
}

pub fn format_file_name(format: ReportFormat) -> &'static str {
    match format {
        ReportFormat::Json => "report.json",
        ReportFormat::Csv => "report.csv",
        ReportFormat::Markdown => "report.md",
    }
}

/// Write the report to `out_dir` in every format the config asks for and
/// return the written paths.
pub fn emit_report(report: &BenchmarkReport, out_dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    for &format in &report.config.report_formats {
        let text = match format {
            ReportFormat::Json => render_json(report),
            ReportFormat::Csv => render_csv(report),
            ReportFormat::Markdown => render_markdown(report),
        };
        let path = out_dir.join(format_file_name(format));
        std::fs::write(&path, text)?;
        written.push(path);
    }
    Ok(written)
}

/// Write a sweep table as JSON plus plot-ready CSV.
pub fn emit_sweep(table: &SweepTable, out_dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir)?;
    let json_path = out_dir.join("sweep.json");
    let mut json = serde_json::to_string_pretty(table)?;
    json.push('\n');
    std::fs::write(&json_path, json)?;
    let csv_path = out_dir.join("sweep.csv");
    std::fs::write(&csv_path, render_sweep_csv(table))?;
    Ok(vec![json_path, csv_path])
}

/// Write an ablation table as JSON plus CSV.
pub fn emit_ablation(table: &AblationTable, out_dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir)?;
    let json_path = out_dir.join("ablation.json");
    let mut json = serde_json::to_string_pretty(table)?;
    json.push('\n');
    std::fs::write(&json_path, json)?;
    let csv_path = out_dir.join("ablation.csv");
    std::fs::write(&csv_path, render_ablation_csv(table))?;
    Ok(vec![json_path, csv_path])
}
