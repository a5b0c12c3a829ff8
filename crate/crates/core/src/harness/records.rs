use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::asymptotics::AsymptoticDraw;
use crate::glm::io::fmt17;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Fgsm,
    Penalized,
}

impl EstimatorKind {
    pub fn name(&self) -> &'static str {
        match self {
            EstimatorKind::Fgsm => "fgsm",
            EstimatorKind::Penalized => "penalized",
        }
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EstimatorKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "fgsm" => Ok(EstimatorKind::Fgsm),
            "penalized" => Ok(EstimatorKind::Penalized),
            other => Err(format!("unknown estimator `{other}`")),
        }
    }
}

/// One fitted replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub n: usize,
    pub replication_index: usize,
    pub estimator: EstimatorKind,
    pub beta_hat: Vec<f64>,
    /// `sqrt(n) (beta_hat - beta0)`.
    pub scaled_error: Vec<f64>,
    pub active_set: Vec<bool>,
    pub objective_value: f64,
    pub converged: bool,
    pub wall_ms: f64,
}

impl ReplicationRecord {
    /// Sort key of the persisted order.
    pub fn key(&self) -> (usize, usize, EstimatorKind) {
        (self.n, self.replication_index, self.estimator)
    }
}

pub fn records_header(p: usize) -> String {
    let mut cols = vec!["n".to_string(), "rep".into(), "estimator".into()];
    cols.extend((1..=p).map(|j| format!("beta_hat_{j}")));
    cols.extend((1..=p).map(|j| format!("scaled_err_{j}")));
    cols.extend((1..=p).map(|j| format!("active_{j}")));
    cols.extend(["objective".into(), "converged".into(), "wall_ms".into()]);
    cols.join(",")
}

fn format_error(path: &Path, message: impl Into<String>) -> Error {
    Error::Format { path: path.to_path_buf(), message: message.into() }
}

pub fn write_records(path: &Path, p: usize, records: &[ReplicationRecord]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "{}", records_header(p))?;
    for r in records {
        let mut fields = vec![r.n.to_string(), r.replication_index.to_string(), r.estimator.to_string()];
        fields.extend(r.beta_hat.iter().map(|&v| fmt17(v)));
        fields.extend(r.scaled_error.iter().map(|&v| fmt17(v)));
        fields.extend(r.active_set.iter().map(|&a| (a as u8).to_string()));
        fields.push(fmt17(r.objective_value));
        fields.push((r.converged as u8).to_string());
        fields.push(fmt17(r.wall_ms));
        writeln!(out, "{}", fields.join(","))?;
    }
    out.flush()?;
    Ok(())
}

fn parse<T: FromStr>(path: &Path, line: usize, field: &str) -> Result<T> {
    field.trim().parse().map_err(|_| format_error(path, format!("line {line}: cannot parse `{field}`")))
}

fn parse_flag(path: &Path, line: usize, field: &str) -> Result<bool> {
    match field.trim() {
        "0" => Ok(false),
        "1" => Ok(true),
        other => Err(format_error(path, format!("line {line}: expected 0 or 1, found `{other}`"))),
    }
}

fn header_dimension(path: &Path, header: &str, fixed: usize, per_coord: usize) -> Result<usize> {
    let cols = header.split(',').count();
    if cols < fixed || (cols - fixed) % per_coord != 0 {
        return Err(format_error(path, "unexpected header"));
    }
    Ok((cols - fixed) / per_coord)
}

pub fn read_records(path: &Path) -> Result<Vec<ReplicationRecord>> {
    let mut lines = BufReader::new(File::open(path)?).lines();
    let header = lines.next().ok_or_else(|| format_error(path, "empty file"))??;
    let p = header_dimension(path, &header, 6, 3)?;
    if header.trim() != records_header(p) {
        return Err(format_error(path, "unexpected header"));
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let ln = i + 2;
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 6 + 3 * p {
            return Err(format_error(path, format!("line {ln}: expected {} fields", 6 + 3 * p)));
        }
        let floats = |range: std::ops::Range<usize>| range.map(|k| parse::<f64>(path, ln, f[k])).collect::<Result<Vec<_>>>();
        out.push(ReplicationRecord {
            n: parse(path, ln, f[0])?,
            replication_index: parse(path, ln, f[1])?,
            estimator: f[2].trim().parse().map_err(|m: String| format_error(path, format!("line {ln}: {m}")))?,
            beta_hat: floats(3..3 + p)?,
            scaled_error: floats(3 + p..3 + 2 * p)?,
            active_set: (3 + 2 * p..3 + 3 * p).map(|k| parse_flag(path, ln, f[k])).collect::<Result<_>>()?,
            objective_value: parse(path, ln, f[3 + 3 * p])?,
            converged: parse_flag(path, ln, f[4 + 3 * p])?,
            wall_ms: parse(path, ln, f[5 + 3 * p])?,
        });
    }
    Ok(out)
}

pub fn draws_header(p: usize) -> String {
    let mut cols = vec!["draw".to_string()];
    cols.extend((1..=p).map(|j| format!("W_{j}")));
    cols.extend((1..=p).map(|j| format!("u_star_{j}")));
    cols.extend(["d_value".into(), "multimodal".into()]);
    cols.join(",")
}

pub fn write_draws(path: &Path, p: usize, draws: &[AsymptoticDraw]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "{}", draws_header(p))?;
    for (i, d) in draws.iter().enumerate() {
        let mut fields = vec![i.to_string()];
        fields.extend(d.w.iter().map(|&v| fmt17(v)));
        fields.extend(d.u_star.iter().map(|&v| fmt17(v)));
        fields.push(fmt17(d.d_value));
        fields.push((d.multimodal as u8).to_string());
        writeln!(out, "{}", fields.join(","))?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_draws(path: &Path) -> Result<Vec<AsymptoticDraw>> {
    let mut lines = BufReader::new(File::open(path)?).lines();
    let header = lines.next().ok_or_else(|| format_error(path, "empty file"))??;
    let p = header_dimension(path, &header, 3, 2)?;
    if header.trim() != draws_header(p) {
        return Err(format_error(path, "unexpected header"));
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let ln = i + 2;
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 3 + 2 * p {
            return Err(format_error(path, format!("line {ln}: expected {} fields", 3 + 2 * p)));
        }
        let floats = |range: std::ops::Range<usize>| range.map(|k| parse::<f64>(path, ln, f[k])).collect::<Result<Vec<_>>>();
        out.push(AsymptoticDraw {
            w: floats(1..1 + p)?,
            u_star: floats(1 + p..1 + 2 * p)?,
            d_value: parse(path, ln, f[1 + 2 * p])?,
            multimodal: parse_flag(path, ln, f[2 + 2 * p])?,
        });
    }
    Ok(out)
}
