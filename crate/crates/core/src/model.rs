//! Core data types, CSV ingestion and the propensity algebra shared by the
//! other modules.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Real;

/// Name given to the ones column when a schema asks for an intercept.
pub const INTERCEPT_NAME: &str = "intercept";

/// Rows of `(X, Z, W, Y)` from an encouragement study.
#[derive(Debug, Clone, PartialEq)]
pub struct EncouragementDataset<T> {
    x: Matrix<T>,
    z: Vec<bool>,
    w: Vec<bool>,
    y: Option<Vec<T>>,
    score_col: usize,
    column_names: Vec<String>,
}

impl<T: Real> EncouragementDataset<T> {
    pub fn new(
        x: Matrix<T>,
        z: Vec<bool>,
        w: Vec<bool>,
        y: Option<Vec<T>>,
        score_col: usize,
        column_names: Vec<String>,
    ) -> Result<Self> {
        let n = x.nrows();
        let d = x.ncols();
        if n == 0 || d == 0 {
            return Err(Error::DomainViolation(format!(
                "dataset must have n >= 1 and d >= 1 (got {n} x {d})"
            )));
        }
        for len in [z.len(), w.len()] {
            if len != n {
                return Err(Error::LengthMismatch { expected: n, got: len });
            }
        }
        if let Some(y) = &y {
            if y.len() != n {
                return Err(Error::LengthMismatch {
                    expected: n,
                    got: y.len(),
                });
            }
            if let Some(i) = y.iter().position(|v| !v.is_finite()) {
                return Err(Error::DomainViolation(format!("non-finite Y at row {i}")));
            }
        }
        if !x.is_finite() {
            return Err(Error::DomainViolation("non-finite covariate".into()));
        }
        if score_col >= d {
            return Err(Error::SchemaViolation(format!(
                "score column {score_col} out of range for d = {d}"
            )));
        }
        if column_names.len() != d {
            return Err(Error::LengthMismatch {
                expected: d,
                got: column_names.len(),
            });
        }
        Ok(Self {
            x,
            z,
            w,
            y,
            score_col,
            column_names,
        })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn d(&self) -> usize {
        self.x.ncols()
    }

    pub fn x(&self) -> &Matrix<T> {
        &self.x
    }

    pub fn z(&self) -> &[bool] {
        &self.z
    }

    pub fn w(&self) -> &[bool] {
        &self.w
    }

    pub fn y(&self) -> Option<&[T]> {
        self.y.as_deref()
    }

    pub fn score_col(&self) -> usize {
        self.score_col
    }

    pub fn column_names(&self) -> &[String] {
        &self.column_names
    }

    /// Values of the designated score column.
    pub fn score(&self) -> Vec<T> {
        self.x.column(self.score_col)
    }

    pub fn require_y(&self) -> Result<&[T]> {
        self.y()
            .ok_or_else(|| Error::SchemaViolation("outcome column Y is required".into()))
    }

    pub fn select_rows(&self, idx: &[usize]) -> Self {
        Self {
            x: self.x.select_rows(idx),
            z: idx.iter().map(|&i| self.z[i]).collect(),
            w: idx.iter().map(|&i| self.w[i]).collect(),
            y: self.y.as_ref().map(|y| idx.iter().map(|&i| y[i]).collect()),
            score_col: self.score_col,
            column_names: self.column_names.clone(),
        }
    }

    /// Appends the rows of `other` (pilot + main merge).
    pub fn merge(&self, other: &Self) -> Result<Self> {
        if self.column_names != other.column_names || self.score_col != other.score_col {
            return Err(Error::SchemaViolation(
                "datasets have different column layouts".into(),
            ));
        }
        let y = match (&self.y, &other.y) {
            (Some(a), Some(b)) => Some(a.iter().chain(b).copied().collect()),
            _ => None,
        };
        Self::new(
            self.x.vstack(&other.x)?,
            self.z.iter().chain(&other.z).copied().collect(),
            self.w.iter().chain(&other.w).copied().collect(),
            y,
            self.score_col,
            self.column_names.clone(),
        )
    }

    /// Rows with the given nudge value.
    pub fn arm(&self, z: bool) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.z[i] == z).collect()
    }
}

/// Column-role mapping for CSV ingestion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schema {
    /// Covariate columns, in order.
    pub x: Vec<String>,
    pub z: String,
    pub w: String,
    #[serde(default)]
    pub y: Option<String>,
    /// Covariate column used as the priority score; must be listed in `x`.
    pub score: String,
    /// Prepend a column of ones named [`INTERCEPT_NAME`].
    #[serde(default)]
    pub intercept: bool,
}

impl Schema {
    /// Parses `x=a,b,c;z=z;w=w;y=y;score=c;intercept`.
    pub fn parse(spec: &str) -> Result<Self> {
        let mut x = None;
        let (mut z, mut w, mut y, mut score) = (None, None, None, None);
        let mut intercept = false;
        for part in spec.split(';').map(str::trim).filter(|p| !p.is_empty()) {
            let (key, value) = match part.split_once('=') {
                Some((k, v)) => (k.trim(), v.trim()),
                None => (part, ""),
            };
            match key {
                "x" => {
                    x = Some(
                        value
                            .split(',')
                            .map(|s| s.trim().to_string())
                            .filter(|s| !s.is_empty())
                            .collect::<Vec<_>>(),
                    )
                }
                "z" => z = Some(value.to_string()),
                "w" => w = Some(value.to_string()),
                "y" => y = Some(value.to_string()),
                "score" => score = Some(value.to_string()),
                "intercept" => {
                    intercept = matches!(value, "" | "true" | "1" | "yes");
                }
                other => {
                    return Err(Error::SchemaViolation(format!("unknown schema key `{other}`")))
                }
            }
        }
        let x = x.ok_or_else(|| Error::SchemaViolation("schema lacks `x=`".into()))?;
        let score = score
            .or_else(|| x.last().cloned())
            .ok_or_else(|| Error::SchemaViolation("schema lacks a score column".into()))?;
        Ok(Self {
            x,
            z: z.unwrap_or_else(|| "z".into()),
            w: w.unwrap_or_else(|| "w".into()),
            y,
            score,
            intercept,
        })
    }

    /// Default roles for a header: `z`, `w` and (optional) `y` by name, every
    /// other column a covariate, score = column named `score` or the last covariate.
    pub fn infer(headers: &[String]) -> Result<Self> {
        let reserved = ["z", "w", "y"];
        let x: Vec<String> = headers
            .iter()
            .filter(|h| !reserved.contains(&h.as_str()))
            .cloned()
            .collect();
        let score = if x.iter().any(|h| h == "score") {
            "score".to_string()
        } else {
            x.last()
                .cloned()
                .ok_or_else(|| Error::SchemaViolation("no covariate columns".into()))?
        };
        Ok(Self {
            x,
            z: "z".into(),
            w: "w".into(),
            y: headers.iter().any(|h| h == "y").then(|| "y".to_string()),
            score,
            intercept: false,
        })
    }
}

fn parse_binary(cell: &str, role: &str, line: usize) -> Result<bool> {
    match cell.trim() {
        "0" => Ok(false),
        "1" => Ok(true),
        other => match other.parse::<f64>() {
            Ok(v) if v == 0.0 => Ok(false),
            Ok(v) if v == 1.0 => Ok(true),
            Ok(v) => Err(Error::DomainViolation(format!(
                "{role} = {v} at line {line} is not in {{0, 1}}"
            ))),
            Err(_) => Err(Error::MalformedCsv {
                line,
                message: format!("cannot parse {role} value `{other}`"),
            }),
        },
    }
}

fn parse_real<T: Real>(cell: &str, col: &str, line: usize) -> Result<T> {
    let v: T = cell.trim().parse().map_err(|_| Error::MalformedCsv {
        line,
        message: format!("cannot parse `{cell}` in column `{col}`"),
    })?;
    if !v.is_finite() {
        return Err(Error::DomainViolation(format!(
            "non-finite value in column `{col}` at line {line}"
        )));
    }
    Ok(v)
}

fn csv_err(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    Error::MalformedCsv {
        line,
        message: e.to_string(),
    }
}

/// Covariates of a cohort awaiting a design; nudge and treatment columns
/// are not required.
#[derive(Debug, Clone, PartialEq)]
pub struct Cohort<T> {
    pub x: Matrix<T>,
    pub score_col: usize,
    pub column_names: Vec<String>,
}

impl<T: Real> Cohort<T> {
    pub fn score(&self) -> Vec<T> {
        self.x.column(self.score_col)
    }
}

struct Table<T> {
    x: Matrix<T>,
    zw: Option<(Vec<bool>, Vec<bool>)>,
    y: Option<Vec<T>>,
    score_col: usize,
    names: Vec<String>,
}

fn read_table<T: Real, R: Read>(reader: R, schema: &Schema, roles: bool) -> Result<Table<T>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers: Vec<String> = rdr
        .headers()
        .map_err(csv_err)?
        .iter()
        .map(str::to_string)
        .collect();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::SchemaViolation(format!("missing column `{name}`")))
    };
    let x_idx = schema
        .x
        .iter()
        .map(|c| find(c))
        .collect::<Result<Vec<_>>>()?;
    if schema.x.is_empty() {
        return Err(Error::SchemaViolation("no covariate columns".into()));
    }
    let zw_idx = if roles {
        Some((find(&schema.z)?, find(&schema.w)?))
    } else {
        None
    };
    let y_idx = if roles {
        schema.y.as_deref().map(find).transpose()?
    } else {
        None
    };
    let score_pos = schema
        .x
        .iter()
        .position(|c| *c == schema.score)
        .ok_or_else(|| {
            Error::SchemaViolation(format!("score column `{}` is not a covariate", schema.score))
        })?;

    let offset = usize::from(schema.intercept);
    let d = schema.x.len() + offset;
    let mut data = Vec::new();
    let mut n = 0;
    let (mut z, mut w) = (Vec::new(), Vec::new());
    let mut y = y_idx.map(|_| Vec::new());
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let line = r + 2;
        let cell = |j: usize| {
            rec.get(j)
                .filter(|s| !s.trim().is_empty())
                .ok_or_else(|| Error::MalformedCsv {
                    line,
                    message: format!("missing value in column `{}`", headers[j]),
                })
        };
        if schema.intercept {
            data.push(T::one());
        }
        for (&j, name) in x_idx.iter().zip(&schema.x) {
            data.push(parse_real(cell(j)?, name, line)?);
        }
        if let Some((zj, wj)) = zw_idx {
            z.push(parse_binary(cell(zj)?, "z", line)?);
            w.push(parse_binary(cell(wj)?, "w", line)?);
        }
        if let (Some(j), Some(y)) = (y_idx, y.as_mut()) {
            y.push(parse_real(cell(j)?, &headers[j], line)?);
        }
        n += 1;
    }
    if n == 0 {
        return Err(Error::DomainViolation("no data rows".into()));
    }
    let mut names = Vec::with_capacity(d);
    if schema.intercept {
        names.push(INTERCEPT_NAME.to_string());
    }
    names.extend(schema.x.iter().cloned());
    Ok(Table {
        x: Matrix::from_row_major(n, d, data)?,
        zw: zw_idx.map(|_| (z, w)),
        y,
        score_col: score_pos + offset,
        names,
    })
}

/// Reads a dataset from any CSV source.
pub fn read_dataset<T: Real, R: Read>(reader: R, schema: &Schema) -> Result<EncouragementDataset<T>> {
    let t = read_table(reader, schema, true)?;
    let (z, w) = t.zw.expect("roles requested");
    EncouragementDataset::new(t.x, z, w, t.y, t.score_col, t.names)
}

/// Reads only the covariate columns named by `schema`.
pub fn read_cohort<T: Real, R: Read>(reader: R, schema: &Schema) -> Result<Cohort<T>> {
    let t = read_table(reader, schema, false)?;
    Ok(Cohort {
        x: t.x,
        score_col: t.score_col,
        column_names: t.names,
    })
}

pub fn load_cohort<T: Real>(path: impl AsRef<Path>, schema: &Schema) -> Result<Cohort<T>> {
    read_cohort(File::open(path)?, schema)
}

/// Header row of a CSV file.
pub fn csv_headers(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(File::open(path)?);
    Ok(rdr.headers().map_err(csv_err)?.iter().map(str::to_string).collect())
}

/// Reads the `e_z` column of a design file.
pub fn read_propensity<T: Real, R: Read>(reader: R) -> Result<NudgePropensity<T>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let col = rdr
        .headers()
        .map_err(csv_err)?
        .iter()
        .position(|h| h == "e_z")
        .ok_or_else(|| Error::SchemaViolation("missing column `e_z`".into()))?;
    let mut e = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let cell = rec.get(col).unwrap_or("");
        e.push(parse_real(cell, "e_z", r + 2)?);
    }
    NudgePropensity::new(e)
}

pub fn load_propensity<T: Real>(path: impl AsRef<Path>) -> Result<NudgePropensity<T>> {
    read_propensity(File::open(path)?)
}

pub fn load_dataset<T: Real>(path: impl AsRef<Path>, schema: &Schema) -> Result<EncouragementDataset<T>> {
    read_dataset(File::open(path)?, schema)
}

/// Writes covariates, `z`, `w` and (if present) `y`. Floats use the shortest
/// representation that parses back to the same value.
pub fn write_dataset_to<T: Real, W: Write>(ds: &EncouragementDataset<T>, out: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    let mut header: Vec<String> = ds.column_names.clone();
    header.push("z".into());
    header.push("w".into());
    if ds.y.is_some() {
        header.push("y".into());
    }
    wtr.write_record(&header).map_err(csv_err)?;
    let mut rec = Vec::with_capacity(header.len());
    for i in 0..ds.n() {
        rec.clear();
        rec.extend(ds.x.row(i).iter().map(|v| v.to_string()));
        rec.push(u8::from(ds.z[i]).to_string());
        rec.push(u8::from(ds.w[i]).to_string());
        if let Some(y) = &ds.y {
            rec.push(y[i].to_string());
        }
        wtr.write_record(&rec).map_err(csv_err)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_dataset<T: Real>(ds: &EncouragementDataset<T>, path: impl AsRef<Path>) -> Result<()> {
    write_dataset_to(ds, File::create(path)?)
}

/// The schema that reloads a file produced by [`write_dataset`].
pub fn schema_for<T: Real>(ds: &EncouragementDataset<T>) -> Schema {
    Schema {
        x: ds.column_names.clone(),
        z: "z".into(),
        w: "w".into(),
        y: ds.y.as_ref().map(|_| "y".to_string()),
        score: ds.column_names[ds.score_col].clone(),
        intercept: false,
    }
}

/// Per-row compliance-class probabilities (no defiers).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct ComplianceProbabilities<T> {
    p_at: Vec<T>,
    p_nt: Vec<T>,
    p_c: Vec<T>,
}

impl<T: Real> ComplianceProbabilities<T> {
    /// Tolerance on `p_at + p_nt + p_c = 1`.
    pub fn sum_tol() -> T {
        T::lit(1e-12).max(T::epsilon() * T::lit(8.0))
    }

    pub fn new(p_at: Vec<T>, p_nt: Vec<T>, p_c: Vec<T>) -> Result<Self> {
        let n = p_at.len();
        for len in [p_nt.len(), p_c.len()] {
            if len != n {
                return Err(Error::LengthMismatch { expected: n, got: len });
            }
        }
        let unit = |v: T| v >= T::zero() && v <= T::one();
        for i in 0..n {
            let (a, nt, c) = (p_at[i], p_nt[i], p_c[i]);
            if !unit(a) || !unit(nt) || !(c > T::zero() && c <= T::one()) {
                return Err(Error::DomainViolation(format!(
                    "invalid compliance triple at row {i}: ({a}, {nt}, {c})"
                )));
            }
            if (a + nt + c - T::one()).abs() > Self::sum_tol() {
                return Err(Error::DomainViolation(format!(
                    "compliance triple at row {i} sums to {}",
                    a + nt + c
                )));
            }
        }
        Ok(Self { p_at, p_nt, p_c })
    }

    /// Builds the triple from `p_at` and `p_c`, with `p_nt = 1 − p_at − p_c`.
    pub fn from_at_c(p_at: Vec<T>, p_c: Vec<T>) -> Result<Self> {
        let p_nt = p_at
            .iter()
            .zip(&p_c)
            .map(|(&a, &c)| (T::one() - a - c).max(T::zero()))
            .collect();
        Self::new(p_at, p_nt, p_c)
    }

    pub fn len(&self) -> usize {
        self.p_at.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p_at.is_empty()
    }

    pub fn p_at(&self) -> &[T] {
        &self.p_at
    }

    pub fn p_nt(&self) -> &[T] {
        &self.p_nt
    }

    pub fn p_c(&self) -> &[T] {
        &self.p_c
    }

    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let pick = |v: &[T]| idx.iter().map(|&i| v[i]).collect();
        Self {
            p_at: pick(&self.p_at),
            p_nt: pick(&self.p_nt),
            p_c: pick(&self.p_c),
        }
    }

    /// Row-wise average of several estimates of the same rows.
    pub fn average(parts: &[Self]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::PreconditionViolated("nothing to average".into()))?;
        let n = first.len();
        let k = T::from_count(parts.len());
        let mut acc = [vec![T::zero(); n], vec![T::zero(); n], vec![T::zero(); n]];
        for p in parts {
            if p.len() != n {
                return Err(Error::LengthMismatch { expected: n, got: p.len() });
            }
            for i in 0..n {
                acc[0][i] = acc[0][i] + p.p_at[i];
                acc[2][i] = acc[2][i] + p.p_c[i];
            }
        }
        let p_at: Vec<T> = acc[0].iter().map(|&v| v / k).collect();
        let p_c: Vec<T> = acc[2].iter().map(|&v| v / k).collect();
        Self::from_at_c(p_at, p_c)
    }
}

/// Nudge assignment probabilities `e_Z`, one per row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent, bound = "T: Real")]
pub struct NudgePropensity<T>(Vec<T>);

impl<T: Real> NudgePropensity<T> {
    pub fn new(e_z: Vec<T>) -> Result<Self> {
        if let Some(i) = e_z
            .iter()
            .position(|&v| !(v >= T::zero() && v <= T::one()))
        {
            return Err(Error::DomainViolation(format!(
                "nudge propensity {} at row {i} outside [0, 1]",
                e_z[i]
            )));
        }
        Ok(Self(e_z))
    }

    pub fn constant(n: usize, v: T) -> Result<Self> {
        Self::new(vec![v; n])
    }

    pub fn as_slice(&self) -> &[T] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<T> {
        self.0
    }

    pub fn select_rows(&self, idx: &[usize]) -> Self {
        Self(idx.iter().map(|&i| self.0[i]).collect())
    }

    pub fn concat(&self, other: &Self) -> Self {
        Self(self.0.iter().chain(&other.0).copied().collect())
    }
}

/// `e_W = p_AT + p_C · e_Z`, row by row.
pub fn induced_treatment_propensity<T: Real>(
    probs: &ComplianceProbabilities<T>,
    e_z: &NudgePropensity<T>,
) -> Result<Vec<T>> {
    if probs.len() != e_z.len() {
        return Err(Error::LengthMismatch {
            expected: probs.len(),
            got: e_z.len(),
        });
    }
    Ok(induced_raw(probs, e_z.as_slice()))
}

pub(crate) fn induced_raw<T: Real>(probs: &ComplianceProbabilities<T>, e_z: &[T]) -> Vec<T> {
    probs
        .p_at
        .iter()
        .zip(&probs.p_c)
        .zip(e_z)
        .map(|((&a, &c), &e)| (a + c * e).max(T::zero()).min(T::one()))
        .collect()
}

/// Rows whose treatment propensity leaves `[eta, 1 − eta]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OverlapReport {
    pub eta: f64,
    pub violations: Vec<usize>,
}

impl OverlapReport {
    pub fn holds(&self) -> bool {
        self.violations.is_empty()
    }
}

pub fn validate_overlap<T: Real>(e_w: &[T], eta: T) -> OverlapReport {
    let hi = T::one() - eta;
    OverlapReport {
        eta: eta.as_f64(),
        violations: e_w
            .iter()
            .enumerate()
            .filter(|(_, &v)| v < eta || v > hi)
            .map(|(i, _)| i)
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn probs(p_at: f64, p_c: f64) -> ComplianceProbabilities<f64> {
        ComplianceProbabilities::from_at_c(vec![p_at], vec![p_c]).unwrap()
    }

    #[test]
    fn load_three_rows() {
        let csv = "x1,z,w,y\n0.5,1,1,2.0\n-1,0,0,3\n2,1,0,-1.5\n";
        let schema = Schema::parse("x=x1;y=y").unwrap();
        let ds: EncouragementDataset<f64> = read_dataset(csv.as_bytes(), &schema).unwrap();
        assert_eq!((ds.n(), ds.d()), (3, 1));
        assert_eq!(ds.y().unwrap(), &[2.0, 3.0, -1.5]);
        assert_eq!(ds.z(), &[true, false, true]);
        assert_eq!(ds.w(), &[true, false, false]);
    }

    #[test]
    fn cohort_needs_only_covariates() {
        let csv = "a,b\n1,0.5\n2,0.25\n";
        let schema = Schema::parse("x=a,b;score=b;intercept").unwrap();
        let c: Cohort<f64> = read_cohort(csv.as_bytes(), &schema).unwrap();
        assert_eq!((c.x.nrows(), c.x.ncols(), c.score_col), (2, 3, 2));
        assert_eq!(c.score(), vec![0.5, 0.25]);
        let e: NudgePropensity<f64> = read_propensity("e_z\n0.5\n1\n".as_bytes()).unwrap();
        assert_eq!(e.as_slice(), &[0.5, 1.0]);
        assert!(read_propensity::<f64, _>("e_z\n1.5\n".as_bytes()).is_err());
    }

    #[test]
    fn missing_w_column_is_schema_violation() {
        let csv = "x1,z,y\n0.5,1,2.0\n";
        let schema = Schema::parse("x=x1;y=y").unwrap();
        let err = read_dataset::<f64, _>(csv.as_bytes(), &schema).unwrap_err();
        assert!(matches!(err, Error::SchemaViolation(_)), "{err}");
    }

    #[test]
    fn nudge_outside_binary_is_domain_violation() {
        let csv = "x1,z,w\n0.5,2,1\n";
        let schema = Schema::parse("x=x1").unwrap();
        let err = read_dataset::<f64, _>(csv.as_bytes(), &schema).unwrap_err();
        assert!(matches!(err, Error::DomainViolation(_)), "{err}");
    }

    #[test]
    fn unparseable_cell_is_malformed() {
        let csv = "x1,z,w\nabc,1,1\n";
        let err = read_dataset::<f64, _>(csv.as_bytes(), &Schema::parse("x=x1").unwrap()).unwrap_err();
        assert!(matches!(err, Error::MalformedCsv { line: 2, .. }), "{err}");
        let csv = "x1,z,w\n,1,1\n";
        let err = read_dataset::<f64, _>(csv.as_bytes(), &Schema::parse("x=x1").unwrap()).unwrap_err();
        assert!(matches!(err, Error::MalformedCsv { .. }), "{err}");
    }

    #[test]
    fn intercept_flag_prepends_ones() {
        let csv = "a,score,z,w\n1,0.2,0,0\n2,0.9,1,1\n";
        let schema = Schema::parse("x=a,score;score=score;intercept").unwrap();
        let ds: EncouragementDataset<f64> = read_dataset(csv.as_bytes(), &schema).unwrap();
        assert_eq!(ds.d(), 3);
        assert_eq!(ds.x().column(0), vec![1.0, 1.0]);
        assert_eq!(ds.score_col(), 2);
        assert_eq!(ds.score(), vec![0.2, 0.9]);
        assert!(ds.y().is_none());
    }

    #[test]
    fn induced_propensity_examples() {
        let e = |p_at, p_c, ez| {
            induced_treatment_propensity(&probs(p_at, p_c), &NudgePropensity::new(vec![ez]).unwrap())
                .unwrap()[0]
        };
        assert_relative_eq!(e(0.2, 0.5, 0.0), 0.2);
        assert_relative_eq!(e(0.2, 0.5, 1.0), 0.7);
        assert_relative_eq!(e(0.1, 0.6, 0.5), 0.4, epsilon = 1e-15);
    }

    #[test]
    fn induced_propensity_length_mismatch() {
        let err = induced_treatment_propensity(&probs(0.1, 0.5), &NudgePropensity::new(vec![0.1, 0.2]).unwrap());
        assert!(matches!(err, Err(Error::LengthMismatch { .. })));
    }

    #[test]
    fn overlap_examples() {
        assert!(validate_overlap(&[0.3, 0.5], 0.05).holds());
        assert_eq!(validate_overlap(&[0.01, 0.5], 0.05).violations, vec![0]);
        assert_eq!(validate_overlap(&[0.95, 0.96], 0.05).violations, vec![1]);
    }

    #[test]
    fn nudge_propensity_rejects_out_of_range() {
        assert!(NudgePropensity::new(vec![0.5, 1.2]).is_err());
        assert!(NudgePropensity::new(vec![f64::NAN]).is_err());
    }

    #[test]
    fn probabilities_must_sum_to_one() {
        assert!(ComplianceProbabilities::new(vec![0.2], vec![0.2], vec![0.2]).is_err());
        assert!(ComplianceProbabilities::new(vec![0.2], vec![0.3], vec![0.5]).is_ok());
        assert!(ComplianceProbabilities::new(vec![0.5], vec![0.5], vec![0.0]).is_err());
    }
}
