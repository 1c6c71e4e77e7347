//! Append-only result reports: `report.csv` and `report.jsonl` side by side.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::Path;

use hibert_core::eval::ReportRow;

use crate::dataset::read_jsonl;
use crate::error::{data_err, CliError, Result};

pub const CSV_FILE: &str = "report.csv";
pub const JSONL_FILE: &str = "report.jsonl";

/// Append `rows` to both files in `dir`; the CSV header is written once.
pub fn append_rows(dir: &Path, rows: &[ReportRow]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let csv_path = dir.join(CSV_FILE);
    let fresh = fs::metadata(&csv_path).map(|m| m.len() == 0).unwrap_or(true);
    let file = OpenOptions::new().create(true).append(true).open(&csv_path).map_err(|e| CliError::io(&csv_path, e))?;
    let mut w = csv::WriterBuilder::new().has_headers(fresh).from_writer(file);
    for r in rows {
        w.serialize(r).map_err(|e| data_err(format!("{}: {e}", csv_path.display())))?;
    }
    w.flush().map_err(|e| CliError::io(&csv_path, e))?;

    let json_path = dir.join(JSONL_FILE);
    let mut file = OpenOptions::new().create(true).append(true).open(&json_path).map_err(|e| CliError::io(&json_path, e))?;
    let mut text = String::new();
    for r in rows {
        text.push_str(&serde_json::to_string(r).expect("rows always serialize"));
        text.push('\n');
    }
    file.write_all(text.as_bytes()).map_err(|e| CliError::io(&json_path, e))
}

pub fn read_rows(dir: &Path) -> Result<Vec<ReportRow>> {
    read_jsonl(&dir.join(JSONL_FILE))
}

pub fn read_csv_rows(dir: &Path) -> Result<Vec<ReportRow>> {
    let path = dir.join(CSV_FILE);
    let mut r = csv::Reader::from_path(&path).map_err(|e| data_err(format!("{}: {e}", path.display())))?;
    r.deserialize().map(|row| row.map_err(|e| data_err(format!("{}: {e}", path.display())))).collect()
}
