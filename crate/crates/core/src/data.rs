//! Trial datasets: observed outcomes, assignments, strata and covariates,
//! plus CSV ingestion, per-stratum bookkeeping and covariate expansion.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Treatment arm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Arm {
    Treated,
    Control,
}

impl Arm {
    pub const BOTH: [Arm; 2] = [Arm::Treated, Arm::Control];

    pub fn as_str(self) -> &'static str {
        match self {
            Arm::Treated => "treatment",
            Arm::Control => "control",
        }
    }

    pub fn from_treated(treated: bool) -> Arm {
        if treated {
            Arm::Treated
        } else {
            Arm::Control
        }
    }

    pub fn is_treated(self) -> bool {
        self == Arm::Treated
    }
}

/// Both potential outcomes of every unit. Only simulated data carries these.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialOutcomes {
    pub treated: Vec<f64>,
    pub control: Vec<f64>,
}

impl PotentialOutcomes {
    /// Sample average of `Y(1) - Y(0)`.
    pub fn sample_effect(&self) -> f64 {
        let n = self.treated.len() as f64;
        self.treated.iter().zip(&self.control).map(|(a, b)| a - b).sum::<f64>() / n
    }
}

#[derive(Debug, Clone)]
pub struct TrialDataset {
    outcomes: Vec<f64>,
    treated: Vec<bool>,
    strata: Vec<usize>,
    stratum_labels: Vec<String>,
    covariates: Matrix,
    covariate_names: Vec<String>,
    truth: Option<PotentialOutcomes>,
}

impl TrialDataset {
    /// Builds a dataset, re-encoding arbitrary stratum labels to contiguous
    /// indices in order of first appearance.
    pub fn new<S: AsRef<str>>(
        outcomes: Vec<f64>,
        treated: Vec<bool>,
        stratum_labels: &[S],
        covariates: Matrix,
        covariate_names: Vec<String>,
    ) -> Result<Self> {
        let n = outcomes.len();
        if treated.len() != n || stratum_labels.len() != n || covariates.rows() != n {
            return Err(Error::Dimension(format!(
                "outcomes {n}, assignments {}, strata {}, covariate rows {}",
                treated.len(),
                stratum_labels.len(),
                covariates.rows()
            )));
        }
        if covariate_names.len() != covariates.cols() {
            return Err(Error::Dimension(format!(
                "{} covariate names for {} columns",
                covariate_names.len(),
                covariates.cols()
            )));
        }
        if n == 0 {
            return Err(Error::Validation("dataset has no units".into()));
        }
        if outcomes.iter().any(|y| !y.is_finite()) {
            return Err(Error::NonFinite("outcomes"));
        }
        if !covariates.is_finite() {
            return Err(Error::NonFinite("covariates"));
        }
        let (strata, labels) = encode_labels(stratum_labels);
        Ok(Self {
            outcomes,
            treated,
            strata,
            stratum_labels: labels,
            covariates,
            covariate_names,
            truth: None,
        })
    }

    /// Attaches potential outcomes; every observed outcome must equal the
    /// potential outcome of the arm the unit received.
    pub fn with_truth(mut self, truth: PotentialOutcomes) -> Result<Self> {
        let n = self.n();
        if truth.treated.len() != n || truth.control.len() != n {
            return Err(Error::Dimension("potential outcome length differs from n".into()));
        }
        for i in 0..n {
            let expected = if self.treated[i] {
                truth.treated[i]
            } else {
                truth.control[i]
            };
            if expected.to_bits() != self.outcomes[i].to_bits() {
                return Err(Error::Validation(format!(
                    "unit {i}: observed outcome differs from its potential outcome"
                )));
            }
        }
        self.truth = Some(truth);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.outcomes.len()
    }

    pub fn p(&self) -> usize {
        self.covariates.cols()
    }

    /// Number of strata.
    pub fn k(&self) -> usize {
        self.stratum_labels.len()
    }

    pub fn outcomes(&self) -> &[f64] {
        &self.outcomes
    }

    pub fn treated(&self) -> &[bool] {
        &self.treated
    }

    /// Zero-based stratum index of every unit.
    pub fn strata(&self) -> &[usize] {
        &self.strata
    }

    pub fn stratum_labels(&self) -> &[String] {
        &self.stratum_labels
    }

    pub fn stratum_label(&self, k: usize) -> &str {
        &self.stratum_labels[k]
    }

    /// Original stratum label of every unit.
    pub fn decoded_strata(&self) -> Vec<&str> {
        self.strata.iter().map(|&k| self.stratum_labels[k].as_str()).collect()
    }

    pub fn covariates(&self) -> &Matrix {
        &self.covariates
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn truth(&self) -> Option<&PotentialOutcomes> {
        self.truth.as_ref()
    }

    pub fn n_treated(&self) -> usize {
        self.treated.iter().filter(|&&t| t).count()
    }

    /// Units of stratum `k` in `arm`.
    pub fn units_in(&self, k: usize, arm: Arm) -> Vec<usize> {
        (0..self.n())
            .filter(|&i| self.strata[i] == k && self.treated[i] == arm.is_treated())
            .collect()
    }

    /// Same units with a subset of the covariate columns.
    pub fn select_covariates(&self, columns: &[usize]) -> TrialDataset {
        TrialDataset {
            covariates: self.covariates.select_cols(columns),
            covariate_names: columns.iter().map(|&j| self.covariate_names[j].clone()).collect(),
            ..self.clone()
        }
    }

    /// Same units with a new covariate matrix.
    pub fn with_covariates(&self, covariates: Matrix, names: Vec<String>) -> Result<TrialDataset> {
        if covariates.rows() != self.n() || names.len() != covariates.cols() {
            return Err(Error::Dimension("replacement covariates do not match dataset".into()));
        }
        Ok(TrialDataset {
            covariates,
            covariate_names: names,
            ..self.clone()
        })
    }

    /// Same units and covariates, with every outcome shifted by `c`.
    pub fn shift_outcomes(&self, c: f64) -> TrialDataset {
        TrialDataset {
            outcomes: self.outcomes.iter().map(|y| y + c).collect(),
            truth: None,
            ..self.clone()
        }
    }
}

fn encode_labels<S: AsRef<str>>(labels: &[S]) -> (Vec<usize>, Vec<String>) {
    let mut index: HashMap<&str, usize> = HashMap::new();
    let mut decoded = Vec::new();
    let codes = labels
        .iter()
        .map(|l| {
            let l = l.as_ref();
            *index.entry(l).or_insert_with(|| {
                decoded.push(l.to_string());
                decoded.len() - 1
            })
        })
        .collect();
    (codes, decoded)
}

/// Column roles for CSV ingestion.
#[derive(Debug, Clone, Default)]
pub struct CsvSchema {
    pub outcome: String,
    pub assignment: String,
    pub stratum: String,
    /// Covariate columns; `None` means every column not otherwise named.
    pub covariates: Option<Vec<String>>,
}

pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<TrialDataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_csv(file, schema)
}

pub fn read_csv<R: Read>(reader: R, schema: &CsvSchema) -> Result<TrialDataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("missing column `{name}`")))
    };
    let y_col = find(&schema.outcome)?;
    let a_col = find(&schema.assignment)?;
    let b_col = find(&schema.stratum)?;
    let cov_names: Vec<String> = match &schema.covariates {
        Some(c) => c.clone(),
        None => headers
            .iter()
            .enumerate()
            .filter(|(j, _)| ![y_col, a_col, b_col].contains(j))
            .map(|(_, h)| h.clone())
            .collect(),
    };
    let cov_cols = cov_names.iter().map(|c| find(c)).collect::<Result<Vec<_>>>()?;

    let mut outcomes = Vec::new();
    let mut treated = Vec::new();
    let mut labels = Vec::new();
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); cov_cols.len()];
    for (row, record) in rdr.records().enumerate() {
        let record = record?;
        let row = row + 1;
        let cell = |j: usize| -> Result<&str> {
            let v = record.get(j).map(str::trim).unwrap_or("");
            if v.is_empty() {
                return Err(Error::Parse {
                    row,
                    column: headers[j].clone(),
                    message: "missing value".into(),
                });
            }
            Ok(v)
        };
        let number = |j: usize| -> Result<f64> {
            let v = cell(j)?;
            v.parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| Error::Parse {
                    row,
                    column: headers[j].clone(),
                    message: format!("`{v}` is not a finite number"),
                })
        };
        outcomes.push(number(y_col)?);
        let a = number(a_col)?;
        if a != 0.0 && a != 1.0 {
            return Err(Error::Parse {
                row,
                column: headers[a_col].clone(),
                message: format!("assignment must be 0 or 1, found {a}"),
            });
        }
        treated.push(a == 1.0);
        labels.push(cell(b_col)?.to_string());
        for (dst, &j) in columns.iter_mut().zip(&cov_cols) {
            dst.push(number(j)?);
        }
    }
    let n = outcomes.len();
    let x = Matrix::from_columns(n, &columns)?;
    TrialDataset::new(outcomes, treated, &labels, x, cov_names)
}

/// Writes `outcome,assignment,stratum,<covariates...>` with full-precision
/// floats, so that `read_csv` reproduces the dataset bit for bit.
pub fn write_csv<W: Write>(ds: &TrialDataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["outcome".to_string(), "assignment".into(), "stratum".into()];
    header.extend(ds.covariate_names().iter().cloned());
    w.write_record(&header)?;
    let mut rec: Vec<String> = Vec::with_capacity(header.len());
    for i in 0..ds.n() {
        rec.clear();
        rec.push(format!("{:?}", ds.outcomes[i]));
        rec.push(if ds.treated[i] { "1" } else { "0" }.into());
        rec.push(ds.stratum_label(ds.strata[i]).to_string());
        for j in 0..ds.p() {
            rec.push(format!("{:?}", ds.covariates.get(i, j)));
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(|source| Error::Io {
        path: "<writer>".into(),
        source,
    })?;
    Ok(())
}

/// Means of one arm inside one stratum.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ArmMeans {
    pub outcome: f64,
    pub covariates: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StratumSummary {
    /// Zero-based stratum index.
    pub k: usize,
    pub label: String,
    pub n: usize,
    pub n_treated: usize,
    pub n_control: usize,
    /// `n_[k] / n`
    pub proportion: f64,
    /// `n_[k]1 / n_[k]`
    pub pi: f64,
    pub treated: Option<ArmMeans>,
    pub control: Option<ArmMeans>,
    /// Covariate means over the whole stratum.
    pub covariate_means: Vec<f64>,
}

impl StratumSummary {
    pub fn arm(&self, arm: Arm) -> Option<&ArmMeans> {
        match arm {
            Arm::Treated => self.treated.as_ref(),
            Arm::Control => self.control.as_ref(),
        }
    }

    pub fn count(&self, arm: Arm) -> usize {
        match arm {
            Arm::Treated => self.n_treated,
            Arm::Control => self.n_control,
        }
    }

    /// The arm with no units, if any.
    pub fn empty_arm(&self) -> Option<Arm> {
        if self.n_treated == 0 {
            Some(Arm::Treated)
        } else if self.n_control == 0 {
            Some(Arm::Control)
        } else {
            None
        }
    }

    pub fn is_arm_empty(&self) -> bool {
        self.empty_arm().is_some()
    }
}

pub fn stratum_summaries(ds: &TrialDataset) -> Vec<StratumSummary> {
    let k_count = ds.k();
    let p = ds.p();
    let n = ds.n();
    let mut counts = vec![[0usize; 2]; k_count];
    let mut y_sums = vec![[0.0f64; 2]; k_count];
    let mut x_sums = vec![[vec![0.0f64; p], vec![0.0f64; p]]; k_count];
    for i in 0..n {
        let k = ds.strata[i];
        let a = usize::from(!ds.treated[i]);
        counts[k][a] += 1;
        y_sums[k][a] += ds.outcomes[i];
    }
    for j in 0..p {
        let col = ds.covariates.col(j);
        for i in 0..n {
            let a = usize::from(!ds.treated[i]);
            x_sums[ds.strata[i]][a][j] += col[i];
        }
    }
    (0..k_count)
        .map(|k| {
            let [n1, n0] = counts[k];
            let nk = n1 + n0;
            let arm_means = |a: usize, c: usize| {
                (c > 0).then(|| ArmMeans {
                    outcome: y_sums[k][a] / c as f64,
                    covariates: x_sums[k][a].iter().map(|s| s / c as f64).collect(),
                })
            };
            let covariate_means = (0..p)
                .map(|j| (x_sums[k][0][j] + x_sums[k][1][j]) / nk as f64)
                .collect();
            StratumSummary {
                k,
                label: ds.stratum_labels[k].clone(),
                n: nk,
                n_treated: n1,
                n_control: n0,
                proportion: nk as f64 / n as f64,
                pi: n1 as f64 / nk as f64,
                treated: arm_means(0, n1),
                control: arm_means(1, n0),
                covariate_means,
            }
        })
        .collect()
}

/// How a column enters the covariate expansion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColumnKind {
    Continuous,
    Binary,
}

#[derive(Debug, Clone)]
pub struct ExpansionSpec {
    /// One entry per input column.
    pub kinds: Vec<ColumnKind>,
    /// Include continuous-by-binary products.
    pub cross: bool,
}

#[derive(Debug, Clone)]
pub struct Expansion {
    pub matrix: Matrix,
    pub names: Vec<String>,
}

/// Polynomial and pairwise-interaction expansion.
///
/// Terms come in a fixed order: for each input column, its powers
/// (`x`, `x^2`, `x^3` for continuous, `x` for binary); then all allowed
/// pairwise products `x_i*x_j` with `i < j` in input order. Generated
/// columns that are exactly constant are dropped.
pub fn expand_covariates(x: &Matrix, names: &[String], spec: &ExpansionSpec) -> Result<Expansion> {
    let p = x.cols();
    let n = x.rows();
    if spec.kinds.len() != p || names.len() != p {
        return Err(Error::Dimension(format!(
            "expansion spec covers {} columns, names {}, matrix has {p}",
            spec.kinds.len(),
            names.len()
        )));
    }
    for (j, kind) in spec.kinds.iter().enumerate() {
        if *kind == ColumnKind::Binary && x.col(j).iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::Validation(format!(
                "column `{}` is declared binary but holds values other than 0/1",
                names[j]
            )));
        }
    }
    let mut cols: Vec<Vec<f64>> = Vec::new();
    let mut out_names = Vec::new();
    let mut push = |c: Vec<f64>, name: String| {
        let first = c.first().copied();
        let constant = first.is_none_or(|f| c.iter().all(|&v| v == f));
        if !constant {
            cols.push(c);
            out_names.push(name);
        }
    };
    for j in 0..p {
        let c = x.col(j);
        push(c.to_vec(), names[j].clone());
        if spec.kinds[j] == ColumnKind::Continuous {
            push(c.iter().map(|v| v * v).collect(), format!("{}^2", names[j]));
            push(c.iter().map(|v| v * v * v).collect(), format!("{}^3", names[j]));
        }
    }
    for i in 0..p {
        for j in i + 1..p {
            let mixed = spec.kinds[i] != spec.kinds[j];
            if mixed && !spec.cross {
                continue;
            }
            let prod = x.col(i).iter().zip(x.col(j)).map(|(a, b)| a * b).collect();
            push(prod, format!("{}*{}", names[i], names[j]));
        }
    }
    Ok(Expansion {
        matrix: Matrix::from_columns(n, &cols)?,
        names: out_names,
    })
}
