//! CSV readers and writers for streams, labels and scores.

use std::path::Path;

use chrono::{DateTime, NaiveDate, NaiveDateTime};
use nalgebra::DMatrix;

use crate::datagen::Dataset;
use crate::engine::CpdScore;
use crate::error::{CpdError, Result};

/// A stream read from CSV with its column roles resolved.
#[derive(Debug, Clone)]
pub struct StreamTable {
    pub state_names: Vec<String>,
    pub control_names: Vec<String>,
    pub states: DMatrix<f64>,
    pub controls: DMatrix<f64>,
    /// Timestamps as written in the file (or the row index).
    pub raw_timestamps: Vec<String>,
    pub timestamps: Vec<f64>,
}

impl StreamTable {
    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }
}

/// Parses an integer/decimal index or an ISO-8601 date-time (seconds since
/// the epoch).
pub fn parse_timestamp(s: &str) -> Option<f64> {
    let s = s.trim();
    if let Ok(v) = s.parse::<f64>() {
        return v.is_finite().then_some(v);
    }
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Some(t.timestamp_micros() as f64 * 1e-6);
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M"] {
        if let Ok(t) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(t.and_utc().timestamp_micros() as f64 * 1e-6);
        }
    }
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .ok()
        .and_then(|d| d.and_hms_opt(0, 0, 0))
        .map(|t| t.and_utc().timestamp() as f64)
}

fn csv_error(path: &Path, e: csv::Error) -> CpdError {
    match e.kind() {
        csv::ErrorKind::Io(_) => CpdError::Io(std::io::Error::other(format!("{}: {e}", path.display()))),
        _ => CpdError::Data(format!("{}: {e}", path.display())),
    }
}

/// Reads a stream CSV (header row required).
///
/// Without explicit state columns every column that is not the timestamp,
/// a control or the label becomes a state. A column named `timestamp` is
/// used as the time axis unless another one is named.
pub fn read_stream(
    path: &Path,
    state_cols: &[String],
    control_cols: &[String],
    timestamp_col: Option<&str>,
    label_col: Option<&str>,
) -> Result<StreamTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| csv_error(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    let find = |name: &str| -> Result<usize> {
        headers.iter().position(|h| h == name).ok_or_else(|| {
            CpdError::config(format!("{}: no column named {name:?}", path.display()))
        })
    };
    let ts_idx = match timestamp_col {
        Some(n) => Some(find(n)?),
        None => headers.iter().position(|h| h == "timestamp"),
    };
    let label_idx = label_col.map(find).transpose()?;
    let control_idx: Vec<usize> = control_cols.iter().map(|c| find(c)).collect::<Result<_>>()?;
    let state_idx: Vec<usize> = if state_cols.is_empty() {
        (0..headers.len())
            .filter(|i| Some(*i) != ts_idx && Some(*i) != label_idx && !control_idx.contains(i))
            .collect()
    } else {
        state_cols.iter().map(|c| find(c)).collect::<Result<_>>()?
    };
    if state_idx.is_empty() {
        return Err(CpdError::config(format!("{}: no state columns", path.display())));
    }

    let mut states: Vec<f64> = Vec::new();
    let mut controls: Vec<f64> = Vec::new();
    let mut raw_ts = Vec::new();
    let mut ts = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        // Row numbers count the header as row 1.
        let line = row + 2;
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let cell = |i: usize| -> Result<f64> {
            let s = rec.get(i).ok_or_else(|| {
                CpdError::Data(format!("{} row {line}: missing column {}", path.display(), headers[i]))
            })?;
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| {
                    CpdError::Data(format!(
                        "{} row {line}: {:?} in column {} is not a finite number",
                        path.display(),
                        s,
                        headers[i]
                    ))
                })
        };
        for &i in &state_idx {
            states.push(cell(i)?);
        }
        for &i in &control_idx {
            controls.push(cell(i)?);
        }
        match ts_idx {
            Some(i) => {
                let s = rec.get(i).unwrap_or("");
                let t = parse_timestamp(s).ok_or_else(|| {
                    CpdError::Data(format!("{} row {line}: bad timestamp {s:?}", path.display()))
                })?;
                raw_ts.push(s.to_string());
                ts.push(t);
            }
            None => {
                raw_ts.push(row.to_string());
                ts.push(row as f64);
            }
        }
    }
    let n = ts.len();
    Ok(StreamTable {
        state_names: state_idx.iter().map(|&i| headers[i].clone()).collect(),
        control_names: control_idx.iter().map(|&i| headers[i].clone()).collect(),
        states: DMatrix::from_column_slice(state_idx.len(), n, &states),
        controls: DMatrix::from_column_slice(control_idx.len(), n, &controls),
        raw_timestamps: raw_ts,
        timestamps: ts,
    })
}

/// Reads change-point indices, one per line; a non-numeric first line is
/// taken as a header.
pub fn read_labels(path: &Path) -> Result<Vec<usize>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let first = line.split(',').next().unwrap_or("").trim();
        match first.parse::<usize>() {
            Ok(v) => out.push(v),
            Err(_) if no == 0 => {}
            Err(_) => {
                return Err(CpdError::Data(format!(
                    "{} line {}: {first:?} is not an index",
                    path.display(),
                    no + 1
                )))
            }
        }
    }
    out.sort_unstable();
    Ok(out)
}

pub fn write_labels(path: &Path, labels: &[usize]) -> Result<()> {
    let mut s = String::from("index\n");
    for l in labels {
        s.push_str(&format!("{l}\n"));
    }
    std::fs::write(path, s)?;
    Ok(())
}

/// Writes a generated dataset with an integer time axis.
pub fn write_dataset(path: &Path, data: &Dataset, state_names: &[&str], control_names: &[&str]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut header = vec!["timestamp".to_string()];
    header.extend(state_names.iter().map(|s| s.to_string()));
    header.extend(control_names.iter().map(|s| s.to_string()));
    w.write_record(&header).map_err(|e| csv_error(path, e))?;
    for k in 0..data.len() {
        let mut row = vec![k.to_string()];
        row.extend(data.states.column(k).iter().map(|v| format!("{v}")));
        row.extend(data.controls.column(k).iter().map(|v| format!("{v}")));
        w.write_record(&row).map_err(|e| csv_error(path, e))?;
    }
    w.flush()?;
    Ok(())
}

pub const SCORE_HEADER: [&str; 7] = ["k", "timestamp", "E_B", "E_T", "Q_ratio", "Q_diff", "alarm"];

/// Writes one row per score; `timestamps` maps step indices back to the
/// original timestamp strings.
pub fn write_scores(path: &Path, scores: &[CpdScore], timestamps: &[String]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(SCORE_HEADER).map_err(|e| csv_error(path, e))?;
    for s in scores {
        let ts = timestamps
            .get(s.step)
            .cloned()
            .unwrap_or_else(|| format!("{}", s.timestamp));
        w.write_record([
            s.step.to_string(),
            ts,
            format!("{:e}", s.base_error),
            format!("{:e}", s.test_error),
            format!("{:e}", s.ratio),
            format!("{:e}", s.difference),
            u8::from(s.alarm).to_string(),
        ])
        .map_err(|e| csv_error(path, e))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a score file written by [`write_scores`].
pub fn read_scores(path: &Path) -> Result<Vec<CpdScore>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let headers = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
    let col = |name: &str| -> Result<usize> {
        headers.iter().position(|h| h == name).ok_or_else(|| {
            CpdError::Data(format!("{}: score file lacks column {name}", path.display()))
        })
    };
    let (ik, ieb, iet, ir, id, ia) = (
        col("k")?,
        col("E_B")?,
        col("E_T")?,
        col("Q_ratio")?,
        col("Q_diff")?,
        col("alarm")?,
    );
    let its = headers.iter().position(|h| h == "timestamp");
    let mut out = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let line = row + 2;
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let num = |i: usize| -> Result<f64> {
            rec.get(i)
                .and_then(|s| s.parse::<f64>().ok())
                .ok_or_else(|| CpdError::Data(format!("{} row {line}: malformed score", path.display())))
        };
        let step = rec
            .get(ik)
            .and_then(|s| s.parse::<usize>().ok())
            .ok_or_else(|| CpdError::Data(format!("{} row {line}: malformed step", path.display())))?;
        let alarm = matches!(rec.get(ia), Some("1") | Some("true"));
        out.push(CpdScore {
            step,
            timestamp: its
                .and_then(|i| rec.get(i))
                .and_then(parse_timestamp)
                .unwrap_or(step as f64),
            base_error: num(ieb)?,
            test_error: num(iet)?,
            ratio: num(ir)?,
            difference: num(id)?,
            alarm,
            degenerate_base: false,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn timestamp_formats() {
        assert_eq!(parse_timestamp("42"), Some(42.0));
        assert_eq!(parse_timestamp("1970-01-01T00:01:00Z"), Some(60.0));
        assert_eq!(parse_timestamp("1970-01-01 00:00:30"), Some(30.0));
        assert_eq!(parse_timestamp("1970-01-02"), Some(86400.0));
        assert_eq!(parse_timestamp("yesterday"), None);
    }
}
