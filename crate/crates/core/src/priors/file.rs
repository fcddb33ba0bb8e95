//! Sectioned text format for prior configuration.
//!
//! ```text
//! [alpha]
//! intercept, 0, 1.74
//! idu, 0.78, 1.33
//! [alpha.cov]          # optional off-diagonal covariances
//! idu, intercept, 0.05
//! [psi]
//! intercept, 0, 2.24
//! [dbeta]
//! shape, 3
//! scale, 2
//! [depsilon]           # only with a rate random effect
//! shape, 3
//! scale, 2
//! [da]                 # replaces [alpha]/[psi] with a summarised DA prior
//! prem_data, da_prem.csv
//! bd_data, da_bd.csv
//! ```
//!
//! `#` starts a comment. Relative paths resolve against the prior file.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};

use super::da::{DaBdRow, DaPremRow, DaPriorData, DaSummaryConfig};
use super::{summarize_da_prior, InverseGammaPrior, NormalPrior, PriorSpec};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum PriorFile {
    Explicit(PriorSpec),
    DataAugmentation {
        prem_data: PathBuf,
        bd_data: PathBuf,
        pre_prior: InverseGammaPrior,
        d_epsilon: Option<InverseGammaPrior>,
        config: DaSummaryConfig,
    },
}

impl PriorFile {
    /// Produce a prior ordered by the given coefficient names.
    pub fn resolve(&self, alpha_names: &[String], psi_names: &[String]) -> Result<PriorSpec> {
        match self {
            PriorFile::Explicit(spec) => spec.reordered(alpha_names, psi_names),
            PriorFile::DataAugmentation {
                prem_data,
                bd_data,
                pre_prior,
                d_epsilon,
                config,
            } => {
                let data = load_da_data(prem_data, bd_data, alpha_names, psi_names)?;
                let summary = summarize_da_prior(
                    &data,
                    alpha_names.len(),
                    psi_names.len(),
                    *pre_prior,
                    config,
                )?;
                summary.to_prior(alpha_names.to_vec(), psi_names.to_vec(), *d_epsilon)
            }
        }
    }
}

struct Section {
    name: String,
    line: usize,
    rows: Vec<(usize, Vec<String>)>,
}

fn parse_sections(text: &str, path: &Path) -> Result<Vec<Section>> {
    let mut sections: Vec<Section> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            sections.push(Section {
                name: name.trim().to_ascii_lowercase(),
                line: line_no,
                rows: Vec::new(),
            });
            continue;
        }
        let Some(current) = sections.last_mut() else {
            return Err(file_error(path, line_no, "entry outside of any [section]"));
        };
        let fields = line.split(',').map(|f| f.trim().to_string()).collect();
        current.rows.push((line_no, fields));
    }
    Ok(sections)
}

fn file_error(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Data {
        path: path.display().to_string(),
        row: line,
        column: String::new(),
        message: message.into(),
    }
}

fn number(path: &Path, line: usize, field: &str) -> Result<f64> {
    field
        .parse::<f64>()
        .map_err(|_| file_error(path, line, format!("`{field}` is not a number")))
}

fn coefficient_table(section: &Section, path: &Path) -> Result<(Vec<String>, Vec<f64>, Vec<f64>)> {
    let mut names = Vec::new();
    let mut means = Vec::new();
    let mut sds = Vec::new();
    for (line, fields) in &section.rows {
        if fields.len() != 3 {
            return Err(file_error(path, *line, "expected `name, mean, sd`"));
        }
        if names.contains(&fields[0]) {
            return Err(file_error(path, *line, format!("duplicate coefficient `{}`", fields[0])));
        }
        names.push(fields[0].clone());
        means.push(number(path, *line, &fields[1])?);
        let sd = number(path, *line, &fields[2])?;
        if !(sd > 0.0 && sd.is_finite()) {
            return Err(file_error(path, *line, "sd must be positive"));
        }
        sds.push(sd);
    }
    Ok((names, means, sds))
}

fn key_values(section: &Section, path: &Path) -> Result<BTreeMap<String, (usize, String)>> {
    let mut map = BTreeMap::new();
    for (line, fields) in &section.rows {
        if fields.len() != 2 {
            return Err(file_error(path, *line, "expected `key, value`"));
        }
        map.insert(fields[0].to_ascii_lowercase(), (*line, fields[1].clone()));
    }
    Ok(map)
}

fn inverse_gamma(section: &Section, path: &Path) -> Result<InverseGammaPrior> {
    let kv = key_values(section, path)?;
    let get = |key: &str| -> Result<f64> {
        let (line, v) = kv
            .get(key)
            .ok_or_else(|| file_error(path, section.line, format!("[{}] needs `{key}`", section.name)))?;
        number(path, *line, v)
    };
    InverseGammaPrior::new(get("shape")?, get("scale")?)
}

fn normal_with_cov(
    table: (Vec<String>, Vec<f64>, Vec<f64>),
    cov_section: Option<&Section>,
    path: &Path,
) -> Result<(Vec<String>, NormalPrior)> {
    let (names, means, sds) = table;
    let k = names.len();
    let mut cov = DMatrix::from_diagonal(&DVector::from_iterator(k, sds.iter().map(|s| s * s)));
    if let Some(section) = cov_section {
        for (line, fields) in &section.rows {
            if fields.len() != 3 {
                return Err(file_error(path, *line, "expected `name, name, covariance`"));
            }
            let find = |n: &str| {
                names
                    .iter()
                    .position(|x| x == n)
                    .ok_or_else(|| file_error(path, *line, format!("unknown coefficient `{n}`")))
            };
            let (a, b) = (find(&fields[0])?, find(&fields[1])?);
            let v = number(path, *line, &fields[2])?;
            cov[(a, b)] = v;
            cov[(b, a)] = v;
        }
    }
    Ok((names, NormalPrior::new(DVector::from_vec(means), cov)?))
}

/// Parse a prior configuration file.
pub fn load_prior_file(path: &Path) -> Result<PriorFile> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let sections = parse_sections(&text, path)?;
    let find = |name: &str| sections.iter().find(|s| s.name == name);
    for s in &sections {
        if !matches!(
            s.name.as_str(),
            "alpha" | "alpha.cov" | "psi" | "psi.cov" | "dbeta" | "depsilon" | "da"
        ) {
            return Err(file_error(path, s.line, format!("unknown section [{}]", s.name)));
        }
    }
    let d_beta = match find("dbeta") {
        Some(s) => inverse_gamma(s, path)?,
        None => InverseGammaPrior::new(3.0, 2.0)?,
    };
    let d_epsilon = find("depsilon").map(|s| inverse_gamma(s, path)).transpose()?;
    let base = path.parent().unwrap_or(Path::new("."));

    if let Some(da) = find("da") {
        let kv = key_values(da, path)?;
        let path_of = |key: &str| -> Result<PathBuf> {
            let (_, v) = kv
                .get(key)
                .ok_or_else(|| file_error(path, da.line, format!("[da] needs `{key}`")))?;
            Ok(base.join(v))
        };
        let mut config = DaSummaryConfig::default();
        for (key, (line, value)) in &kv {
            match key.as_str() {
                "prem_data" | "bd_data" => {}
                "sweeps" => config.sweeps = number(path, *line, value)? as usize,
                "burn_in" => config.burn_in = number(path, *line, value)? as usize,
                "seed" => config.seed = number(path, *line, value)? as u64,
                "vague_sd" => {
                    let v = number(path, *line, value)?;
                    config.vague_sd = (v > 0.0).then_some(v);
                }
                other => return Err(file_error(path, *line, format!("unknown [da] key `{other}`"))),
            }
        }
        return Ok(PriorFile::DataAugmentation {
            prem_data: path_of("prem_data")?,
            bd_data: path_of("bd_data")?,
            pre_prior: d_beta,
            d_epsilon,
            config,
        });
    }

    let alpha_section =
        find("alpha").ok_or_else(|| file_error(path, 0, "missing [alpha] section"))?;
    let psi_section = find("psi");
    let (alpha_names, alpha) =
        normal_with_cov(coefficient_table(alpha_section, path)?, find("alpha.cov"), path)?;
    let (psi_names, psi) = match psi_section {
        Some(s) => normal_with_cov(coefficient_table(s, path)?, find("psi.cov"), path)?,
        None => (Vec::new(), NormalPrior::new(DVector::zeros(0), DMatrix::zeros(0, 0))?),
    };
    let spec = PriorSpec {
        alpha_names,
        alpha,
        psi_names,
        psi,
        d_beta,
        d_epsilon,
    };
    spec.validate()?;
    Ok(PriorFile::Explicit(spec))
}

fn column_map(headers: &csv::StringRecord, leading: &[&str], names: &[String], path: &Path) -> Result<Vec<usize>> {
    for (i, lead) in leading.iter().enumerate() {
        if headers.get(i).map(str::trim) != Some(*lead) {
            return Err(Error::Data {
                path: path.display().to_string(),
                row: 1,
                column: lead.to_string(),
                message: format!("expected column {} to be `{lead}`", i + 1),
            });
        }
    }
    names
        .iter()
        .map(|n| {
            headers
                .iter()
                .position(|h| h.trim() == n)
                .ok_or_else(|| Error::Data {
                    path: path.display().to_string(),
                    row: 1,
                    column: n.clone(),
                    message: "missing covariate column".into(),
                })
        })
        .collect()
}

fn read_rows(path: &Path) -> Result<(csv::StringRecord, Vec<csv::StringRecord>)> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::Csv(csv::Error::from(std::io::Error::other(format!("{other:?}")))),
        })?;
    let headers = reader.headers()?.clone();
    let rows = reader.records().collect::<std::result::Result<Vec<_>, _>>()?;
    Ok((headers, rows))
}

fn cell<T: std::str::FromStr>(rec: &csv::StringRecord, idx: usize, row: usize, col: &str, path: &Path) -> Result<T> {
    rec.get(idx)
        .and_then(|s| s.parse::<T>().ok())
        .ok_or_else(|| Error::Data {
            path: path.display().to_string(),
            row,
            column: col.to_string(),
            message: format!("invalid value `{}`", rec.get(idx).unwrap_or("")),
        })
}

/// Load artificial prior data. The PREM file has header `z, <alpha names…>`
/// and the birth-death file `y, z, <psi names…>`; covariate columns are
/// matched by name.
pub fn load_da_data(
    prem_path: &Path,
    bd_path: &Path,
    alpha_names: &[String],
    psi_names: &[String],
) -> Result<DaPriorData> {
    let (headers, rows) = read_rows(prem_path)?;
    let cols = column_map(&headers, &["z"], alpha_names, prem_path)?;
    let mut prem_rows = Vec::with_capacity(rows.len());
    for (i, rec) in rows.iter().enumerate() {
        let row = i + 2;
        let z: f64 = cell(rec, 0, row, "z", prem_path)?;
        let x = cols
            .iter()
            .zip(alpha_names)
            .map(|(&c, n)| cell(rec, c, row, n, prem_path))
            .collect::<Result<Vec<f64>>>()?;
        prem_rows.push(DaPremRow { z, x });
    }
    let (headers, rows) = read_rows(bd_path)?;
    let cols = column_map(&headers, &["y", "z"], psi_names, bd_path)?;
    let mut bd_rows = Vec::with_capacity(rows.len());
    for (i, rec) in rows.iter().enumerate() {
        let row = i + 2;
        let y: u64 = cell(rec, 0, row, "y", bd_path)?;
        let z: u64 = cell(rec, 1, row, "z", bd_path)?;
        let w = cols
            .iter()
            .zip(psi_names)
            .map(|(&c, n)| cell(rec, c, row, n, bd_path))
            .collect::<Result<Vec<f64>>>()?;
        bd_rows.push(DaBdRow { y, z, w });
    }
    DaPriorData::new(prem_rows, bd_rows)
}
