//! Dataset CSV (`x1,...,xp,y`, 17 significant digits) plus a JSON metadata
//! companion carrying `seed`, `n`, `p`, `family` and `beta0`.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{Dataset, LinkFamily};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMetadata {
    pub seed: u64,
    pub n: usize,
    pub p: usize,
    pub family: Option<String>,
    pub beta0: Option<Vec<f64>>,
}

impl DatasetMetadata {
    pub fn of(dataset: &Dataset) -> Self {
        let model = dataset.model_provenance.as_ref();
        DatasetMetadata {
            seed: dataset.seed,
            n: dataset.n(),
            p: dataset.p(),
            family: model.map(|m| m.link.name().to_string()),
            beta0: model.map(|m| m.beta0.clone()),
        }
    }

    pub fn link(&self) -> Option<LinkFamily> {
        match self.family.as_deref() {
            Some("logistic") => Some(LinkFamily::Logistic),
            Some("linear_gaussian") => Some(LinkFamily::LinearGaussian { sigma: 1.0 }),
            _ => None,
        }
    }
}

/// Seventeen significant digits, enough to round-trip any `f64`.
pub(crate) fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

pub(crate) fn write_matrix_csv<W: Write>(
    out: &mut W,
    header: &[String],
    rows: impl Iterator<Item = Vec<f64>>,
) -> std::io::Result<()> {
    writeln!(out, "{}", header.join(","))?;
    for row in rows {
        let cells: Vec<String> = row.into_iter().map(fmt17).collect();
        writeln!(out, "{}", cells.join(","))?;
    }
    Ok(())
}

/// Writes `<stem>.csv` and `<stem>.json` next to each other.
pub fn write_dataset(dataset: &Dataset, csv_path: &Path) -> Result<()> {
    let p = dataset.p();
    let mut header: Vec<String> = (1..=p).map(|j| format!("x{j}")).collect();
    header.push("y".into());
    let mut out = BufWriter::new(fs::File::create(csv_path)?);
    let rows = (0..dataset.n()).map(|i| {
        let mut r: Vec<f64> = dataset.x.row(i).iter().copied().collect();
        r.push(dataset.y[i]);
        r
    });
    write_matrix_csv(&mut out, &header, rows)?;
    out.flush()?;
    let meta = DatasetMetadata::of(dataset);
    fs::write(csv_path.with_extension("json"), serde_json::to_string_pretty(&meta)?)?;
    Ok(())
}

pub fn read_metadata(csv_path: &Path) -> Result<Option<DatasetMetadata>> {
    let meta_path = csv_path.with_extension("json");
    if !meta_path.exists() {
        return Ok(None);
    }
    Ok(Some(serde_json::from_str(&fs::read_to_string(meta_path)?)?))
}

/// Reads a dataset CSV; the seed comes from the metadata file when present.
pub fn read_dataset(csv_path: &Path) -> Result<Dataset> {
    let fail = |message: String| Error::Format { path: csv_path.to_path_buf(), message };
    let text = fs::read_to_string(csv_path)?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<&str> = lines.next().ok_or_else(|| fail("empty file".into()))?.split(',').map(str::trim).collect();
    let p = header.len().saturating_sub(1);
    let expected: Vec<String> = (1..=p).map(|j| format!("x{j}")).chain(std::iter::once("y".into())).collect();
    if p == 0 || header != expected {
        return Err(fail(format!("header must be x1,...,xp,y; got {}", header.join(","))));
    }
    let mut values = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let row: Vec<f64> = line
            .split(',')
            .map(|c| c.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| fail(format!("row {}: {e}", lineno + 1)))?;
        if row.len() != p + 1 {
            return Err(fail(format!("row {} has {} fields, expected {}", lineno + 1, row.len(), p + 1)));
        }
        values.push(row);
    }
    let n = values.len();
    let x = DMatrix::from_fn(n, p, |i, j| values[i][j]);
    let y = DVector::from_iterator(n, values.iter().map(|r| r[p]));
    let seed = read_metadata(csv_path)?.map_or(0, |m| m.seed);
    Dataset::new(x, y, seed, None)
}
