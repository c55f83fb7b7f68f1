//! Model persistence (versioned JSON documents) and numeric CSV exchange.
//!
//! Floating-point values written to CSV carry 17 significant digits, enough
//! for an exact f64 round trip; JSON serialization uses the shortest exact
//! representation, so documents round-trip bit-for-bit.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factor::FactorModel;
use crate::matrix::Matrix;
use crate::solver::{FitResult, Termination};

pub const SCHEMA_VERSION: u32 = 1;

/// Serde adapter storing a matrix as `{rows, cols, data}` with row-major data.
pub mod matrix_serde {
    use super::Matrix;
    use serde::de::Error as DeError;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    struct Encoded {
        rows: usize,
        cols: usize,
        data: Vec<f64>,
    }

    pub fn serialize<S: Serializer>(m: &Matrix, ser: S) -> Result<S::Ok, S::Error> {
        Encoded {
            rows: m.nrows(),
            cols: m.ncols(),
            data: m.iter().copied().collect(),
        }
        .serialize(ser)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(de: D) -> Result<Matrix, D::Error> {
        let enc = Encoded::deserialize(de)?;
        if enc.data.len() != enc.rows * enc.cols {
            return Err(D::Error::custom(format!(
                "matrix payload has {} entries for a {}x{} shape",
                enc.data.len(),
                enc.rows,
                enc.cols
            )));
        }
        Matrix::from_shape_vec((enc.rows, enc.cols), enc.data).map_err(D::Error::custom)
    }
}

/// Format with 17 significant digits (exact f64 round trip).
pub fn fmt_full(v: f64) -> String {
    format!("{v:.16e}")
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Dims {
    pub n: usize,
    pub p: usize,
    pub m: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SvdDocument {
    pub sigma: Vec<f64>,
    #[serde(with = "matrix_serde")]
    pub u: Matrix,
    #[serde(with = "matrix_serde")]
    pub v: Matrix,
    pub rank: usize,
}

/// Fitted-model document written by the `fit`-style commands and consumed by
/// the factor analysis commands.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelDocument {
    pub schema_version: u32,
    pub tau: f64,
    pub lambda: f64,
    /// "given" when the penalty came from the caller, "pivotal" when it was
    /// simulated from the design.
    pub lambda_source: String,
    pub kappa: f64,
    pub dims: Dims,
    /// Coefficient matrix, row-major p x m.
    pub gamma: Vec<f64>,
    pub loss_history: Vec<f64>,
    pub iterations: usize,
    pub termination: Termination,
    pub svd: SvdDocument,
}

impl ModelDocument {
    pub fn from_fit(
        fit: &FitResult,
        factors: &FactorModel,
        tau: f64,
        lambda: f64,
        lambda_source: &str,
        kappa: f64,
        n: usize,
    ) -> Self {
        let (p, m) = (fit.gamma_hat.nrows(), fit.gamma_hat.ncols());
        Self {
            schema_version: SCHEMA_VERSION,
            tau,
            lambda,
            lambda_source: lambda_source.to_string(),
            kappa,
            dims: Dims { n, p, m },
            gamma: fit.gamma_hat.iter().copied().collect(),
            loss_history: fit.loss_history.clone(),
            iterations: fit.iterations,
            termination: fit.termination,
            svd: SvdDocument {
                sigma: factors.singular_values.clone(),
                u: factors.left_vectors.clone(),
                v: factors.loadings.clone(),
                rank: factors.rank,
            },
        }
    }

    pub fn gamma_matrix(&self) -> Result<Matrix> {
        if self.gamma.len() != self.dims.p * self.dims.m {
            return Err(Error::InvalidInput(format!(
                "gamma payload has {} entries for dims {}x{}",
                self.gamma.len(),
                self.dims.p,
                self.dims.m
            )));
        }
        Matrix::from_shape_vec((self.dims.p, self.dims.m), self.gamma.clone())
            .map_err(|e| Error::InvalidInput(e.to_string()))
    }

    pub fn factor_model(&self) -> FactorModel {
        FactorModel {
            singular_values: self.svd.sigma.clone(),
            left_vectors: self.svd.u.clone(),
            loadings: self.svd.v.clone(),
            rank: self.svd.rank,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path)?;
        let mut writer = BufWriter::new(file);
        serde_json::to_writer_pretty(&mut writer, self)?;
        writer.write_all(b"\n")?;
        writer.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path)?;
        let doc: ModelDocument = serde_json::from_reader(BufReader::new(file))?;
        if doc.schema_version != SCHEMA_VERSION {
            return Err(Error::InvalidInput(format!(
                "unsupported model schema version {}",
                doc.schema_version
            )));
        }
        Ok(doc)
    }
}

/// Read a numeric CSV into a matrix. With `has_header` the header cells are
/// returned as column names.
pub fn read_matrix_csv(path: &Path, has_header: bool) -> Result<(Matrix, Option<Vec<String>>)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .from_path(path)?;
    let names = if has_header {
        Some(
            reader
                .headers()?
                .iter()
                .map(|s| s.trim().to_string())
                .collect(),
        )
    } else {
        None
    };
    let mut data: Vec<f64> = Vec::new();
    let mut cols = 0usize;
    let mut rows = 0usize;
    for (row_idx, record) in reader.records().enumerate() {
        let record = record?;
        if rows == 0 {
            cols = record.len();
        } else if record.len() != cols {
            return Err(Error::InvalidInput(format!(
                "row {} has {} fields, expected {cols}",
                row_idx + 1,
                record.len()
            )));
        }
        for (col_idx, field) in record.iter().enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| {
                Error::InvalidInput(format!(
                    "cannot parse '{field}' as a number at row {}, column {}",
                    row_idx + 1,
                    col_idx + 1
                ))
            })?;
            data.push(v);
        }
        rows += 1;
    }
    if rows == 0 || cols == 0 {
        return Err(Error::InvalidInput(format!(
            "{} holds no numeric data",
            path.display()
        )));
    }
    let m = Matrix::from_shape_vec((rows, cols), data)
        .map_err(|e| Error::InvalidInput(e.to_string()))?;
    Ok((m, names))
}

/// Write a matrix as CSV at full precision, with an optional header row.
pub fn write_matrix_csv(path: &Path, m: &Matrix, header: Option<&[String]>) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    if let Some(names) = header {
        writer.write_record(names)?;
    }
    for row in m.rows() {
        writer.write_record(row.iter().map(|&v| fmt_full(v)))?;
    }
    writer.flush()?;
    Ok(())
}

/// Read a time/observation CSV: first column is the time stamp, remaining
/// columns are responses.
pub fn read_time_panel(
    path: &Path,
    has_header: bool,
) -> Result<(Vec<f64>, Matrix, Option<Vec<String>>)> {
    let (full, names) = read_matrix_csv(path, has_header)?;
    if full.ncols() < 2 {
        return Err(Error::InvalidInput(
            "time panel needs a time column and at least one response".into(),
        ));
    }
    let times = full.column(0).to_vec();
    let values = full.slice(ndarray::s![.., 1..]).to_owned();
    let response_names = names.map(|n| n.into_iter().skip(1).collect());
    Ok((times, values, response_names))
}

/// Read a dated panel: header row of series names with a leading date
/// column, rows of ISO dates plus numeric values.
pub fn read_dated_panel(path: &Path) -> Result<(Vec<String>, Vec<String>, Matrix)> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let names: Vec<String> = reader
        .headers()?
        .iter()
        .skip(1)
        .map(|s| s.trim().to_string())
        .collect();
    if names.is_empty() {
        return Err(Error::InvalidInput(
            "dated panel needs a date column plus at least one series".into(),
        ));
    }
    let mut dates = Vec::new();
    let mut data = Vec::new();
    for (row_idx, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() != names.len() + 1 {
            return Err(Error::InvalidInput(format!(
                "row {} has {} fields, expected {}",
                row_idx + 1,
                record.len(),
                names.len() + 1
            )));
        }
        dates.push(record[0].trim().to_string());
        for field in record.iter().skip(1) {
            let v: f64 = field.trim().parse().map_err(|_| {
                Error::InvalidInput(format!(
                    "cannot parse '{field}' as a number at row {}",
                    row_idx + 1
                ))
            })?;
            data.push(v);
        }
    }
    if dates.is_empty() {
        return Err(Error::InvalidInput(format!(
            "{} holds no data rows",
            path.display()
        )));
    }
    let values = Matrix::from_shape_vec((dates.len(), names.len()), data)
        .map_err(|e| Error::InvalidInput(e.to_string()))?;
    Ok((dates, names, values))
}
