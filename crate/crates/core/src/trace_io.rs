//! Trace directories: one CSV per parameter group with the stored-sample
//! index in column 1, plus `adapt.csv` and `obs_means.csv`.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::mcmc::{AdaptRecord, Block, ObsMean, Trace};

fn writer(dir: &Path, name: &str) -> Result<csv::Writer<fs::File>> {
    let path = dir.join(name);
    let f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    Ok(csv::Writer::from_writer(f))
}

fn finish(mut w: csv::Writer<fs::File>, dir: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(dir, e))
}

fn write_matrix(dir: &Path, name: &str, columns: &[String], rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
    let mut w = writer(dir, name)?;
    let mut header = vec!["sample".to_string()];
    header.extend(columns.iter().cloned());
    w.write_record(&header)?;
    for (s, row) in rows.enumerate() {
        let mut rec = vec![(s + 1).to_string()];
        rec.extend(row);
        w.write_record(&rec)?;
    }
    finish(w, dir)
}

fn fmt(xs: &[f64]) -> Vec<String> {
    xs.iter().map(|x| x.to_string()).collect()
}

/// Write every trace file into `dir`, creating it if needed.
pub fn write_trace_dir(dir: &Path, trace: &Trace) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_matrix(dir, "alpha.csv", &trace.alpha_names, trace.alpha.iter().map(|r| fmt(r)))?;
    write_matrix(dir, "psi.csv", &trace.psi_names, trace.psi.iter().map(|r| fmt(r)))?;
    write_matrix(dir, "dbeta.csv", &["d_beta".to_string()], trace.d_beta.iter().map(|d| vec![d.to_string()]))?;
    if !trace.d_epsilon.is_empty() {
        write_matrix(
            dir,
            "depsilon.csv",
            &["d_epsilon".to_string()],
            trace.d_epsilon.iter().map(|d| vec![d.to_string()]),
        )?;
    }
    if !trace.z_selected.is_empty() {
        let cols: Vec<String> = trace.z_selected.iter().map(|k| format!("obs_{k}")).collect();
        write_matrix(
            dir,
            "z_selected.csv",
            &cols,
            trace.z_samples.iter().map(|r| r.iter().map(|z| z.to_string()).collect()),
        )?;
    }
    let mut w = writer(dir, "adapt.csv")?;
    w.write_record(["block", "selections", "proposals", "accepted", "acceptance", "kappa"])?;
    for a in &trace.adapt {
        w.write_record([
            a.block.name().to_string(),
            a.selections.to_string(),
            a.proposals.to_string(),
            a.accepted.to_string(),
            a.acceptance().to_string(),
            a.kappa.map(|k| k.to_string()).unwrap_or_default(),
        ])?;
    }
    finish(w, dir)?;
    let mut w = writer(dir, "obs_means.csv")?;
    w.write_record(["obs", "z_bar", "lambda_bar", "mu_bar"])?;
    for (k, m) in trace.obs_means.iter().enumerate() {
        w.write_record([k.to_string(), m.z.to_string(), m.lambda.to_string(), m.mu.to_string()])?;
    }
    finish(w, dir)
}

struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

fn read_table(path: &Path) -> Result<Table> {
    let mut r = csv::ReaderBuilder::new().from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Csv(csv::Error::from(std::io::Error::other(format!("{other:?}")))),
    })?;
    let header = r.headers()?.iter().map(str::to_string).collect();
    let rows = r
        .records()
        .map(|rec| rec.map(|r| r.iter().map(str::to_string).collect()))
        .collect::<std::result::Result<Vec<Vec<String>>, _>>()?;
    Ok(Table { header, rows })
}

fn parse<T: std::str::FromStr>(path: &Path, row: usize, column: &str, text: &str) -> Result<T> {
    text.parse().map_err(|_| Error::Data {
        path: path.display().to_string(),
        row,
        column: column.to_string(),
        message: format!("cannot parse `{text}`"),
    })
}

fn read_matrix<T: std::str::FromStr>(path: &Path) -> Result<(Vec<String>, Vec<u64>, Vec<Vec<T>>)> {
    let t = read_table(path)?;
    let names = t.header.iter().skip(1).cloned().collect();
    let mut index = Vec::with_capacity(t.rows.len());
    let mut rows = Vec::with_capacity(t.rows.len());
    for (k, r) in t.rows.iter().enumerate() {
        index.push(parse(path, k + 2, "sample", &r[0])?);
        rows.push(
            r.iter()
                .zip(&t.header)
                .skip(1)
                .map(|(v, c)| parse(path, k + 2, c, v))
                .collect::<Result<Vec<T>>>()?,
        );
    }
    Ok((names, index, rows))
}

/// Read a directory written by [`write_trace_dir`].
pub fn read_trace_dir(dir: &Path) -> Result<Trace> {
    let (alpha_names, sample_iteration, alpha) = read_matrix::<f64>(&dir.join("alpha.csv"))?;
    let (psi_names, _, psi) = read_matrix::<f64>(&dir.join("psi.csv"))?;
    let (_, _, d_beta) = read_matrix::<f64>(&dir.join("dbeta.csv"))?;
    let d_beta: Vec<f64> = d_beta.into_iter().map(|r| r[0]).collect();
    let eps_path = dir.join("depsilon.csv");
    let d_epsilon = if eps_path.exists() {
        read_matrix::<f64>(&eps_path)?.2.into_iter().map(|r| r[0]).collect()
    } else {
        Vec::new()
    };
    let z_path = dir.join("z_selected.csv");
    let (z_selected, z_samples) = if z_path.exists() {
        let (names, _, rows) = read_matrix::<u64>(&z_path)?;
        let sel = names
            .iter()
            .map(|n| parse(&z_path, 1, n, n.trim_start_matches("obs_")))
            .collect::<Result<Vec<usize>>>()?;
        (sel, rows)
    } else {
        (Vec::new(), Vec::new())
    };
    let obs_path = dir.join("obs_means.csv");
    let t = read_table(&obs_path)?;
    let obs_means = t
        .rows
        .iter()
        .enumerate()
        .map(|(k, r)| {
            Ok(ObsMean {
                z: parse(&obs_path, k + 2, "z_bar", &r[1])?,
                lambda: parse(&obs_path, k + 2, "lambda_bar", &r[2])?,
                mu: parse(&obs_path, k + 2, "mu_bar", &r[3])?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let adapt_path = dir.join("adapt.csv");
    let t = read_table(&adapt_path)?;
    let adapt = t
        .rows
        .iter()
        .enumerate()
        .map(|(k, r)| {
            let line = k + 2;
            Ok(AdaptRecord {
                block: Block::parse(&r[0]).ok_or_else(|| Error::Data {
                    path: adapt_path.display().to_string(),
                    row: line,
                    column: "block".into(),
                    message: format!("unknown block `{}`", r[0]),
                })?,
                selections: parse(&adapt_path, line, "selections", &r[1])?,
                proposals: parse(&adapt_path, line, "proposals", &r[2])?,
                accepted: parse(&adapt_path, line, "accepted", &r[3])?,
                kappa: if r[5].is_empty() {
                    None
                } else {
                    Some(parse(&adapt_path, line, "kappa", &r[5])?)
                },
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if psi.len() != alpha.len() || d_beta.len() != alpha.len() {
        return Err(Error::domain(format!(
            "trace files in {} disagree on the number of samples",
            dir.display()
        )));
    }
    Ok(Trace {
        alpha_names,
        psi_names,
        sample_iteration,
        alpha,
        psi,
        d_beta,
        d_epsilon,
        z_selected,
        z_samples,
        obs_means,
        adapt,
    })
}
