//! Pose and sequence CSV files.
//!
//! ```text
//! # pose-csv v1
//! pelvis_x,pelvis_y,pelvis_z,...
//! 0.01,-0.2,0.13,...
//! ```
//!
//! Sequence files carry an extra leading `time_s` column.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{MotionSequence, PoseDataset};
use crate::error::{Error, Result};

pub const MAGIC: &str = "# pose-csv v1";
pub const TIME_COLUMN: &str = "time_s";

struct Table {
    columns: Vec<String>,
    rows: Vec<Vec<f64>>,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|source| Error::Io { path: path.to_path_buf(), source })
}

fn parse_table(text: &str) -> Result<Table> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, l)) if l.trim() == MAGIC => {}
        _ => {
            return Err(Error::Parse { row: 1, col: 1, msg: format!("expected `{MAGIC}` header") })
        }
    }
    let columns: Vec<String> = match lines.next() {
        Some((_, l)) => l.split(',').map(|c| c.trim().to_string()).collect(),
        None => return Err(Error::Parse { row: 2, col: 1, msg: "missing column header".into() }),
    };
    if columns.iter().any(|c| c.is_empty()) {
        return Err(Error::Parse { row: 2, col: 1, msg: "empty column name".into() });
    }
    let mut rows = Vec::new();
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let row_no = idx + 1;
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != columns.len() {
            return Err(Error::Parse {
                row: row_no,
                col: cells.len().min(columns.len()) + 1,
                msg: format!("expected {} values, found {}", columns.len(), cells.len()),
            });
        }
        let mut row = Vec::with_capacity(cells.len());
        for (c, cell) in cells.iter().enumerate() {
            let v: f64 = cell.trim().parse().map_err(|_| Error::Parse {
                row: row_no,
                col: c + 1,
                msg: format!("non-numeric value `{}`", cell.trim()),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse { row: row_no, col: c + 1, msg: "non-finite value".into() });
            }
            row.push(v);
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::EmptyBody);
    }
    Ok(Table { columns, rows })
}

fn format_table(columns: &[String], rows: &[Vec<f64>]) -> String {
    let mut out = String::new();
    out.push_str(MAGIC);
    out.push('\n');
    out.push_str(&columns.join(","));
    out.push('\n');
    for row in rows {
        for (i, v) in row.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            // Display of f64 is the shortest representation that parses back exactly.
            write!(out, "{v}").unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn parse_pose_csv(text: &str, source: &str) -> Result<PoseDataset> {
    let table = parse_table(text)?;
    PoseDataset::new(table.rows, source)?.with_columns(table.columns)
}

pub fn load_pose_csv(path: &Path) -> Result<PoseDataset> {
    parse_pose_csv(&read(path)?, &path.display().to_string())
}

pub fn format_pose_csv(data: &PoseDataset) -> String {
    format_table(&data.columns, &data.samples)
}

pub fn save_pose_csv(data: &PoseDataset, path: &Path) -> Result<()> {
    write(path, &format_pose_csv(data))
}

pub fn parse_sequence_csv(text: &str) -> Result<MotionSequence> {
    let table = parse_table(text)?;
    if table.columns[0] != TIME_COLUMN {
        return Err(Error::Parse { row: 2, col: 1, msg: format!("first column must be `{TIME_COLUMN}`") });
    }
    if table.columns.len() < 2 {
        return Err(Error::Parse { row: 2, col: 2, msg: "no pose columns".into() });
    }
    let (timestamps, poses) = table.rows.into_iter().map(|r| (r[0], r[1..].to_vec())).unzip();
    let mut seq = MotionSequence::new(timestamps, poses)?;
    seq.columns = table.columns[1..].to_vec();
    Ok(seq)
}

pub fn load_sequence_csv(path: &Path) -> Result<MotionSequence> {
    parse_sequence_csv(&read(path)?)
}

pub fn format_sequence_csv(seq: &MotionSequence) -> String {
    let mut columns = vec![TIME_COLUMN.to_string()];
    columns.extend(seq.columns.iter().cloned());
    let rows: Vec<Vec<f64>> = seq
        .timestamps()
        .iter()
        .zip(seq.poses())
        .map(|(t, p)| {
            let mut r = vec![*t];
            r.extend_from_slice(p);
            r
        })
        .collect();
    format_table(&columns, &rows)
}

pub fn save_sequence_csv(seq: &MotionSequence, path: &Path) -> Result<()> {
    write(path, &format_sequence_csv(seq))
}
