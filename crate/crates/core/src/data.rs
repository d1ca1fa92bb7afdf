//! Dataset representations, validation and CSV ingestion.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{CountRegError, Result};

/// Counts within this distance of an integer are accepted and rounded.
const INTEGER_SLACK: f64 = 1e-9;

/// `n × (p+1)` design with a leading intercept column.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    values: Array2<f64>,
    covariate_names: Vec<String>,
}

impl DesignMatrix {
    /// Validates a full design matrix whose first column must be all ones.
    pub fn new(values: Array2<f64>, covariate_names: Vec<String>) -> Result<Self> {
        let (n, cols) = values.dim();
        if n == 0 {
            return Err(CountRegError::InvalidDesign("no observations".into()));
        }
        if cols == 0 {
            return Err(CountRegError::InvalidDesign("missing intercept column".into()));
        }
        if covariate_names.len() != cols - 1 {
            return Err(CountRegError::InvalidDesign(format!(
                "{} covariate names for {} covariate columns",
                covariate_names.len(),
                cols - 1
            )));
        }
        if let Some(i) = values.column(0).iter().position(|&v| v != 1.0) {
            return Err(CountRegError::InvalidDesign(format!(
                "intercept column is not 1 at row {i}"
            )));
        }
        if let Some(((i, j), _)) = values.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(CountRegError::InvalidDesign(format!(
                "non-finite entry at row {i}, column {j}"
            )));
        }
        Ok(Self {
            values,
            covariate_names,
        })
    }

    /// Prepends the intercept column to an `n × p` covariate block.
    pub fn from_covariates(covariates: &Array2<f64>, covariate_names: Vec<String>) -> Result<Self> {
        let (n, p) = covariates.dim();
        let mut values = Array2::ones((n, p + 1));
        values.slice_mut(ndarray::s![.., 1..]).assign(covariates);
        Self::new(values, covariate_names)
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    /// Number of covariates, excluding the intercept.
    pub fn p(&self) -> usize {
        self.values.ncols() - 1
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.values.row(i)
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    /// Covariate block without the intercept.
    pub fn covariates(&self) -> Array2<f64> {
        self.values.slice(ndarray::s![.., 1..]).to_owned()
    }
}

/// `n × D` non-negative integer counts with positive row totals.
#[derive(Debug, Clone, PartialEq)]
pub struct CountMatrix {
    values: Array2<u64>,
    taxa_names: Vec<String>,
    row_totals: Vec<u64>,
}

impl CountMatrix {
    pub fn new(values: Array2<u64>, taxa_names: Vec<String>) -> Result<Self> {
        if taxa_names.len() != values.ncols() {
            return Err(CountRegError::DimensionMismatch(format!(
                "{} taxa names for {} count columns",
                taxa_names.len(),
                values.ncols()
            )));
        }
        let row_totals: Vec<u64> = values.rows().into_iter().map(|r| r.sum()).collect();
        if let Some(row) = row_totals.iter().position(|&t| t == 0) {
            return Err(CountRegError::ZeroTotalRow { row });
        }
        Ok(Self {
            values,
            taxa_names,
            row_totals,
        })
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    /// Number of taxa `D`.
    pub fn taxa(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &Array2<u64> {
        &self.values
    }

    pub fn get(&self, i: usize, d: usize) -> u64 {
        self.values[[i, d]]
    }

    pub fn row_totals(&self) -> &[u64] {
        &self.row_totals
    }

    pub fn taxa_names(&self) -> &[String] {
        &self.taxa_names
    }
}

/// Per-covariate centering and scaling applied at load time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CountDataset {
    pub x: DesignMatrix,
    pub y: CountMatrix,
    pub standardization: Option<Standardization>,
}

impl CountDataset {
    pub fn new(x: DesignMatrix, y: CountMatrix) -> Result<Self> {
        if x.n() != y.n() {
            return Err(CountRegError::DimensionMismatch(format!(
                "design has {} rows, counts have {}",
                x.n(),
                y.n()
            )));
        }
        Ok(Self {
            x,
            y,
            standardization: None,
        })
    }

    pub fn n(&self) -> usize {
        self.x.n()
    }

    pub fn p(&self) -> usize {
        self.x.p()
    }

    pub fn taxa(&self) -> usize {
        self.y.taxa()
    }

    /// Same counts with only the intercept column kept.
    pub fn intercept_only(&self) -> CountDataset {
        let values = self.x.values().slice(ndarray::s![.., 0..1]).to_owned();
        CountDataset {
            x: DesignMatrix {
                values,
                covariate_names: Vec::new(),
            },
            y: self.y.clone(),
            standardization: None,
        }
    }
}

/// `c[i,d] = 1` iff `y[i,d] > 0`.
pub fn indicator_c(y: &CountMatrix) -> Array2<u8> {
    y.values().mapv(|v| u8::from(v > 0))
}

/// Centers and scales each column to mean 0 and population sd 1.
pub fn standardize_columns(
    covariates: &mut Array2<f64>,
    names: &[String],
) -> Result<Standardization> {
    let n = covariates.nrows() as f64;
    let mut means = Vec::with_capacity(covariates.ncols());
    let mut sds = Vec::with_capacity(covariates.ncols());
    for (j, mut col) in covariates.axis_iter_mut(Axis(1)).enumerate() {
        let mean = col.sum() / n;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let sd = var.sqrt();
        if !(sd > 1e-12 * (1.0 + mean.abs())) {
            return Err(CountRegError::ConstantCovariate {
                column: j,
                name: names.get(j).cloned().unwrap_or_default(),
            });
        }
        col.mapv_inplace(|v| (v - mean) / sd);
        means.push(mean);
        sds.push(sd);
    }
    Ok(Standardization { means, sds })
}

fn read_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let parse_err = |message: String| CountRegError::Parse {
        path: path.to_path_buf(),
        message,
    };
    let file = std::fs::File::open(path).map_err(|source| CountRegError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| parse_err(e.to_string()))?
        .iter()
        .map(str::to_owned)
        .collect();
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| parse_err(e.to_string()))?;
        let row = record
            .iter()
            .enumerate()
            .map(|(j, field)| {
                field.parse::<f64>().map_err(|_| {
                    parse_err(format!("row {i}, column {j}: '{field}' is not a number"))
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok((headers, rows))
}

fn to_matrix(rows: &[Vec<f64>], cols: usize) -> Array2<f64> {
    let mut m = Array2::zeros((rows.len(), cols));
    for (i, row) in rows.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            m[[i, j]] = v;
        }
    }
    m
}

/// Reads an `n × D` count table, validating integrality and positive totals.
pub fn read_counts(path: &Path) -> Result<CountMatrix> {
    let (names, rows) = read_table(path)?;
    let mut values = Array2::zeros((rows.len(), names.len()));
    for (i, row) in rows.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            let rounded = v.round();
            if !v.is_finite() || v < 0.0 || (v - rounded).abs() > INTEGER_SLACK {
                return Err(CountRegError::InvalidCount {
                    row: i,
                    column: j,
                    value: v,
                });
            }
            values[[i, j]] = rounded as u64;
        }
    }
    CountMatrix::new(values, names)
}

/// Reads an `n × p` covariate table.
pub fn read_covariates(path: &Path) -> Result<(Array2<f64>, Vec<String>)> {
    let (names, rows) = read_table(path)?;
    Ok((to_matrix(&rows, names.len()), names))
}

pub fn load_dataset(covariates_path: &Path, counts_path: &Path, standardize: bool) -> Result<CountDataset> {
    let (mut covariates, names) = read_covariates(covariates_path)?;
    let y = read_counts(counts_path)?;
    if covariates.nrows() != y.n() {
        return Err(CountRegError::RowCountMismatch {
            covariates_path: covariates_path.to_path_buf(),
            covariate_rows: covariates.nrows(),
            counts_path: counts_path.to_path_buf(),
            count_rows: y.n(),
        });
    }
    let standardization = if standardize && covariates.ncols() > 0 {
        Some(standardize_columns(&mut covariates, &names)?)
    } else {
        None
    };
    let x = DesignMatrix::from_covariates(&covariates, names)?;
    let mut ds = CountDataset::new(x, y)?;
    ds.standardization = standardization;
    Ok(ds)
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    let file = std::fs::File::create(path).map_err(|source| CountRegError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(csv::Writer::from_writer(file))
}

fn csv_io(path: &Path, err: csv::Error) -> CountRegError {
    CountRegError::Parse {
        path: path.to_path_buf(),
        message: err.to_string(),
    }
}

/// Writes covariates (stored values, intercept omitted) and counts as two CSV files.
///
/// Reals use the shortest representation that parses back to the same bits.
pub fn write_dataset(ds: &CountDataset, covariates_path: &Path, counts_path: &Path) -> Result<()> {
    let mut w = csv_writer(covariates_path)?;
    w.write_record(ds.x.covariate_names())
        .map_err(|e| csv_io(covariates_path, e))?;
    for i in 0..ds.n() {
        let row = ds.x.row(i);
        w.write_record(row.iter().skip(1).map(|v| v.to_string()))
            .map_err(|e| csv_io(covariates_path, e))?;
    }
    w.flush().map_err(|source| CountRegError::Io {
        path: covariates_path.to_path_buf(),
        source,
    })?;

    let mut w = csv_writer(counts_path)?;
    w.write_record(ds.y.taxa_names())
        .map_err(|e| csv_io(counts_path, e))?;
    for row in ds.y.values().rows() {
        w.write_record(row.iter().map(|v| v.to_string()))
            .map_err(|e| csv_io(counts_path, e))?;
    }
    w.flush().map_err(|source| CountRegError::Io {
        path: counts_path.to_path_buf(),
        source,
    })?;
    Ok(())
}

/// Column means of a matrix, used by tests and reports.
pub fn column_means(m: &Array2<f64>) -> Array1<f64> {
    m.mean_axis(Axis(0)).unwrap_or_else(|| Array1::zeros(m.ncols()))
}
