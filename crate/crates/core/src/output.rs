//! CSV writers for report tables and loaders for the small auxiliary inputs
//! (prediction profiles, bare response columns).

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::report::{MrseRow, ParameterSummary, PredictionRow, ProfilePoint};
use crate::simulation::StudyReport;

/// Create `path` and any missing parent directories.
pub fn create_file(path: &Path) -> Result<fs::File> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::File::create(path).map_err(|e| Error::io(path, e))
}

fn finish<W: Write>(mut w: csv::Writer<W>) -> Result<()> {
    w.flush().map_err(|e| Error::io("<output>", e))
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

pub fn write_summary<W: Write>(out: W, rows: &[ParameterSummary]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["parameter", "mean", "sd", "lower", "upper", "significant"])?;
    for r in rows {
        w.write_record([
            r.name.clone(),
            r.mean.to_string(),
            r.sd.to_string(),
            r.lower.to_string(),
            r.upper.to_string(),
            r.significant.to_string(),
        ])?;
    }
    finish(w)
}

/// Empty bins are written with `m = 0` and blank cells.
pub fn write_mrse<W: Write>(out: W, rows: &[MrseRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "lambda_lower",
        "lambda_upper",
        "m",
        "mrse",
        "measurement",
        "sampling",
        "cross",
        "measurement_share",
        "sampling_share",
        "cross_share",
    ])?;
    for r in rows {
        let shares = r.shares();
        w.write_record([
            r.lower.to_string(),
            r.upper.to_string(),
            r.m.to_string(),
            opt(r.mrse),
            opt(r.measurement),
            opt(r.sampling),
            opt(r.cross),
            opt(shares.map(|s| s.0)),
            opt(shares.map(|s| s.1)),
            opt(shares.map(|s| s.2)),
        ])?;
    }
    finish(w)
}

pub fn write_predictions<W: Write>(out: W, rows: &[PredictionRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["group", "time", "mean", "lower", "upper"])?;
    for r in rows {
        w.write_record([
            r.group.clone(),
            r.time.to_string(),
            r.mean.to_string(),
            r.lower.to_string(),
            r.upper.to_string(),
        ])?;
    }
    finish(w)
}

pub fn write_study_report<W: Write>(out: W, report: &StudyReport) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["parameter", "model", "truth", "mse", "bias", "var", "avg_var", "coverage", "bias_t"])?;
    for r in &report.rows {
        w.write_record([
            r.parameter.clone(),
            r.model.name().to_string(),
            r.truth.to_string(),
            r.mse.to_string(),
            r.bias.to_string(),
            r.var.to_string(),
            r.avg_var.to_string(),
            r.coverage.to_string(),
            r.bias_t.to_string(),
        ])?;
    }
    finish(w)
}

fn data_error(path: &Path, row: usize, column: &str, message: impl Into<String>) -> Error {
    Error::Data {
        path: path.display().to_string(),
        row,
        column: column.to_string(),
        message: message.into(),
    }
}

fn reader(path: &Path) -> Result<(csv::Reader<fs::File>, Vec<String>)> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::Reader::from_reader(f);
    let header = r.headers()?.iter().map(|h| h.trim().to_string()).collect();
    Ok((r, header))
}

/// Profile CSV: `group,time,<alpha names>` in any column order.
pub fn load_profile(path: &Path, alpha_names: &[String]) -> Result<Vec<ProfilePoint>> {
    let (mut r, header) = reader(path)?;
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| data_error(path, 1, name, "missing column"))
    };
    let group = col("group")?;
    let time = col("time")?;
    let xs = alpha_names.iter().map(|n| col(n)).collect::<Result<Vec<_>>>()?;
    let mut out = Vec::new();
    for (k, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = k + 2;
        let num = |c: usize| -> Result<f64> {
            rec.get(c)
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| data_error(path, line, &header[c], "expected a number"))
        };
        out.push(ProfilePoint {
            group: rec.get(group).unwrap_or_default().trim().to_string(),
            time: num(time)?,
            x: xs.iter().map(|&c| num(c)).collect::<Result<_>>()?,
        });
    }
    Ok(out)
}

/// The `y` column of a data file, without schema validation.
pub fn load_responses(path: &Path) -> Result<Vec<u64>> {
    let (mut r, header) = reader(path)?;
    let y = header
        .iter()
        .position(|h| h == "y")
        .ok_or_else(|| data_error(path, 1, "y", "missing column"))?;
    r.records()
        .enumerate()
        .map(|(k, rec)| {
            rec?.get(y)
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| data_error(path, k + 2, "y", "expected a non-negative integer"))
        })
        .collect()
}
