//! Long-format observation files: `subject_id, time, y, <covariates…>`.
//!
//! Covariate columns are matched by name against a [`Schema`]. Missing
//! visits are simply absent rows. Numbers are written with Rust's shortest
//! round-trip formatting, so a written file reloads to identical values.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mcmc::FitData;
use crate::prem::{ModelSpec, ObservationDesign};

/// Which file columns feed the mean and rate models.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schema {
    /// Mean-model covariates, in coefficient order.
    pub alpha: Vec<String>,
    /// Subset of `alpha` that is constant within subject.
    #[serde(default)]
    pub fixed: Vec<String>,
    /// Rate-model covariates, in coefficient order.
    #[serde(default)]
    pub psi: Vec<String>,
    #[serde(default)]
    pub rate_random_effect: bool,
}

impl Schema {
    pub fn validate(&self) -> Result<()> {
        for f in &self.fixed {
            if !self.alpha.contains(f) {
                return Err(Error::config(format!("fixed covariate `{f}` is not in the alpha list")));
            }
        }
        for (list, what) in [(&self.alpha, "alpha"), (&self.psi, "psi")] {
            for (k, name) in list.iter().enumerate() {
                if list[..k].contains(name) {
                    return Err(Error::config(format!("duplicate {what} covariate `{name}`")));
                }
            }
        }
        Ok(())
    }

    /// Covariate columns in file order: alpha names, then rate-only names.
    pub fn columns(&self) -> Vec<String> {
        let mut cols = self.alpha.clone();
        cols.extend(self.psi.iter().filter(|p| !self.alpha.contains(p)).cloned());
        cols
    }

    pub fn model_spec(&self) -> Result<ModelSpec> {
        self.validate()?;
        let (fixed, varying): (Vec<usize>, Vec<usize>) =
            (0..self.alpha.len()).partition(|&k| self.fixed.contains(&self.alpha[k]));
        ModelSpec::new(self.alpha.len(), 1, self.psi.len(), fixed, varying, self.rate_random_effect)
    }
}

/// One parsed row.
#[derive(Debug, Clone, PartialEq)]
pub struct DataRow {
    pub subject: String,
    pub time: f64,
    pub y: u64,
    /// Values of [`Schema::columns`].
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub schema: Schema,
    /// Grouped by subject in order of first appearance; times increase
    /// within subject.
    pub rows: Vec<DataRow>,
}

impl Dataset {
    pub fn new(schema: Schema, rows: Vec<DataRow>) -> Result<Self> {
        let ds = Self { schema, rows };
        ds.validate("<memory>")?;
        Ok(ds)
    }

    fn validate(&self, path: &str) -> Result<()> {
        self.schema.validate()?;
        let cols = self.schema.columns();
        let fixed: Vec<usize> = self
            .schema
            .fixed
            .iter()
            .map(|f| cols.iter().position(|c| c == f).unwrap_or(0))
            .collect();
        let err = |row: usize, column: &str, message: String| Error::Data {
            path: path.to_string(),
            row,
            column: column.to_string(),
            message,
        };
        let mut seen: HashMap<&str, usize> = HashMap::new();
        for (k, r) in self.rows.iter().enumerate() {
            let line = k + 2;
            if r.values.len() != cols.len() {
                return Err(err(line, "", format!("expected {} covariates, got {}", cols.len(), r.values.len())));
            }
            if !r.time.is_finite() {
                return Err(err(line, "time", "time must be finite".into()));
            }
            if let Some(v) = r.values.iter().position(|v| !v.is_finite()) {
                return Err(err(line, &cols[v], "covariate must be finite".into()));
            }
            let prev = k.checked_sub(1).map(|p| &self.rows[p]);
            match prev {
                Some(p) if p.subject == r.subject => {
                    if r.time <= p.time {
                        return Err(err(line, "time", "times must increase within subject".into()));
                    }
                    let first = &self.rows[seen[r.subject.as_str()]];
                    for &f in &fixed {
                        if r.values[f] != first.values[f] {
                            return Err(err(
                                line,
                                &cols[f],
                                "time-fixed covariate changes within subject".into(),
                            ));
                        }
                    }
                }
                _ => {
                    if seen.insert(&r.subject, k).is_some() {
                        return Err(err(
                            line,
                            "subject_id",
                            format!("rows of subject `{}` are not contiguous", r.subject),
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    /// Number of subjects.
    pub fn n_subjects(&self) -> usize {
        let mut n = 0;
        for (k, r) in self.rows.iter().enumerate() {
            if k == 0 || self.rows[k - 1].subject != r.subject {
                n += 1;
            }
        }
        n
    }

    /// Number of observations.
    pub fn n_obs(&self) -> usize {
        self.rows.len()
    }

    pub fn responses(&self) -> Vec<u64> {
        self.rows.iter().map(|r| r.y).collect()
    }

    /// Design rows for the sampler, subjects numbered by first appearance.
    pub fn observations(&self) -> Vec<ObservationDesign> {
        let cols = self.schema.columns();
        let index = |name: &String| cols.iter().position(|c| c == name).unwrap_or(0);
        let ax: Vec<usize> = self.schema.alpha.iter().map(index).collect();
        let wx: Vec<usize> = self.schema.psi.iter().map(index).collect();
        let mut subject = 0usize;
        self.rows
            .iter()
            .enumerate()
            .map(|(k, r)| {
                if k > 0 && self.rows[k - 1].subject != r.subject {
                    subject += 1;
                }
                ObservationDesign {
                    subject_index: subject,
                    time: r.time,
                    y: r.y,
                    x: ax.iter().map(|&c| r.values[c]).collect(),
                    h: vec![1.0],
                    w: wx.iter().map(|&c| r.values[c]).collect(),
                }
            })
            .collect()
    }

    pub fn fit_data(&self) -> Result<FitData> {
        FitData::new(self.schema.model_spec()?, self.observations())
    }
}

/// Parse a long-format CSV against a schema.
pub fn load_dataset(path: &Path, schema: &Schema) -> Result<Dataset> {
    schema.validate()?;
    let shown = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::Data {
                path: shown.clone(),
                row: 1,
                column: String::new(),
                message: format!("{other:?}"),
            },
        })?;
    let headers = reader.headers()?.clone();
    let err = |row: usize, column: &str, message: String| Error::Data {
        path: shown.clone(),
        row,
        column: column.to_string(),
        message,
    };
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| err(1, name, "missing column".into()))
    };
    let (si, ti, yi) = (find("subject_id")?, find("time")?, find("y")?);
    let cols = schema.columns();
    let ci = cols.iter().map(|c| find(c)).collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    for (k, rec) in reader.records().enumerate() {
        let line = k + 2;
        let rec = rec?;
        let cell = |i: usize| rec.get(i).unwrap_or("");
        let num = |i: usize, name: &str| -> Result<f64> {
            cell(i)
                .parse::<f64>()
                .map_err(|_| err(line, name, format!("`{}` is not a number", cell(i))))
        };
        let y_text = cell(yi);
        let y = match y_text.parse::<i64>() {
            Ok(v) if v >= 0 => v as u64,
            Ok(v) => return Err(err(line, "y", format!("negative count {v}"))),
            Err(_) => return Err(err(line, "y", format!("`{y_text}` is not a count"))),
        };
        let subject = cell(si).to_string();
        if subject.is_empty() {
            return Err(err(line, "subject_id", "empty subject id".into()));
        }
        rows.push(DataRow {
            subject,
            time: num(ti, "time")?,
            y,
            values: ci.iter().zip(&cols).map(|(&i, n)| num(i, n)).collect::<Result<_>>()?,
        });
    }
    if rows.is_empty() {
        return Err(err(1, "", "no observations".into()));
    }
    let ds = Dataset {
        schema: schema.clone(),
        rows,
    };
    ds.validate(&shown)?;
    Ok(ds)
}

/// Write the canonical form read by [`load_dataset`].
pub fn write_dataset<W: Write>(ds: &Dataset, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["subject_id".to_string(), "time".into(), "y".into()];
    header.extend(ds.schema.columns());
    w.write_record(&header)?;
    for r in &ds.rows {
        let mut rec = vec![r.subject.clone(), r.time.to_string(), r.y.to_string()];
        rec.extend(r.values.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("<output>", e))?;
    Ok(())
}

pub fn write_dataset_file(ds: &Dataset, path: &Path) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_dataset(ds, std::io::BufWriter::new(f))
}
