//! On-disk formats: curve and label CSVs, coefficient and prediction CSVs,
//! cross-validation reports, and the JSON model file.
//!
//! All renders are deterministic byte for byte. Real numbers are written in
//! their shortest round-trip decimal form ('.' separator, never locale
//! dependent), so a parse-render cycle reproduces the file exactly. Writers
//! go through a temp-file-plus-rename so no partial output survives an
//! error.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::basis::{BasisError, BasisSpec, RawCurve};
use crate::eval::CvReport;
use crate::fit::{FitDiagnostics, FitKind, FittedFolr};
use crate::ordinal::{OrdinalError, OrdinalModel, Thresholds};

const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Error, Debug)]
pub enum PersistError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },

    #[error("model file validation failed: {0}")]
    Validation(String),

    #[error("unsupported model format version {found} (this build reads version {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },

    #[error(
        "curves and labels do not join: labels without curves {missing_curves:?}, curves without labels {missing_labels:?}"
    )]
    Join { missing_curves: Vec<String>, missing_labels: Vec<String> },

    #[error(transparent)]
    Basis(#[from] BasisError),

    #[error(transparent)]
    Ordinal(#[from] OrdinalError),
}

fn io_err(path: &Path, source: std::io::Error) -> PersistError {
    PersistError::Io { path: path.display().to_string(), source }
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> PersistError {
    PersistError::Parse { path: path.display().to_string(), line, msg: msg.into() }
}

/// Writes via a sibling temp file and an atomic rename.
fn write_atomic(path: &Path, contents: &str) -> Result<(), PersistError> {
    let tmp = path.with_extension(match path.extension() {
        Some(ext) => format!("{}.tmp", ext.to_string_lossy()),
        None => "tmp".to_string(),
    });
    fs::write(&tmp, contents).map_err(|e| io_err(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| io_err(path, e))?;
    Ok(())
}

fn read_to_string(path: &Path) -> Result<String, PersistError> {
    fs::read_to_string(path).map_err(|e| io_err(path, e))
}

fn parse_f64(path: &Path, line: usize, field: &str, raw: &str) -> Result<f64, PersistError> {
    raw.trim()
        .parse::<f64>()
        .map_err(|_| parse_err(path, line, format!("field '{field}': '{raw}' is not a number")))
}

// ---------------------------------------------------------------------------
// Model file
// ---------------------------------------------------------------------------

/// The JSON model file: format version, both bases, parameters, and fit
/// metadata. Field order is fixed, so renders are stable.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelFile {
    pub format_version: u32,
    pub fit_kind: FitKind,
    pub lasso_lambda: f64,
    pub seed: u64,
    pub curve_basis: BasisSpec,
    pub beta_basis: BasisSpec,
    pub tau: Vec<f64>,
    pub b: Vec<f64>,
    pub diagnostics: FitDiagnostics,
}

impl ModelFile {
    pub fn from_fit(fit: &FittedFolr) -> Self {
        Self {
            format_version: MODEL_FORMAT_VERSION,
            fit_kind: fit.kind(),
            lasso_lambda: fit.lasso_lambda(),
            seed: fit.seed(),
            curve_basis: fit.curve_basis().clone(),
            beta_basis: fit.beta_basis().clone(),
            tau: fit.model().thresholds().tau().to_vec(),
            b: fit.model().coefficients().to_vec(),
            diagnostics: fit.diagnostics().clone(),
        }
    }

    /// Validates every structural invariant and rebuilds the runtime model
    /// (including the Gram matrix, which is derived, not stored).
    pub fn into_fit(self) -> Result<FittedFolr, PersistError> {
        if self.format_version != MODEL_FORMAT_VERSION {
            return Err(PersistError::UnsupportedVersion {
                found: self.format_version,
                supported: MODEL_FORMAT_VERSION,
            });
        }
        self.curve_basis
            .validate()
            .map_err(|e| PersistError::Validation(format!("curve basis: {e}")))?;
        self.beta_basis
            .validate()
            .map_err(|e| PersistError::Validation(format!("beta basis: {e}")))?;
        if self.b.len() != self.beta_basis.size() {
            return Err(PersistError::Validation(format!(
                "{} coefficients for a beta basis of size {}",
                self.b.len(),
                self.beta_basis.size()
            )));
        }
        let thresholds = Thresholds::new(self.tau)
            .map_err(|e| PersistError::Validation(format!("thresholds not increasing: {e}")))?;
        let model = OrdinalModel::new(thresholds, self.b)
            .map_err(|e| PersistError::Validation(e.to_string()))?;
        let gram = crate::basis::gram(&self.curve_basis, &self.beta_basis)?;
        Ok(FittedFolr::from_parts(
            model,
            gram,
            self.fit_kind,
            self.lasso_lambda,
            self.seed,
            self.diagnostics,
        ))
    }
}

/// Renders a fitted model as deterministic pretty JSON.
pub fn render_model(fit: &FittedFolr) -> Result<String, PersistError> {
    let file = ModelFile::from_fit(fit);
    let mut text = serde_json::to_string_pretty(&file)
        .map_err(|e| PersistError::Validation(format!("cannot render model: {e}")))?;
    text.push('\n');
    Ok(text)
}

/// Parses and validates a model file from its JSON text.
pub fn parse_model(text: &str) -> Result<FittedFolr, PersistError> {
    let file: ModelFile = serde_json::from_str(text)
        .map_err(|e| PersistError::Validation(format!("malformed model file: {e}")))?;
    file.into_fit()
}

pub fn save_model(fit: &FittedFolr, path: impl AsRef<Path>) -> Result<(), PersistError> {
    write_atomic(path.as_ref(), &render_model(fit)?)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<FittedFolr, PersistError> {
    parse_model(&read_to_string(path.as_ref())?)
}

// ---------------------------------------------------------------------------
// Basis file
// ---------------------------------------------------------------------------

pub fn save_basis(basis: &BasisSpec, path: impl AsRef<Path>) -> Result<(), PersistError> {
    let mut text = serde_json::to_string_pretty(basis)
        .map_err(|e| PersistError::Validation(format!("cannot render basis: {e}")))?;
    text.push('\n');
    write_atomic(path.as_ref(), &text)
}

pub fn load_basis(path: impl AsRef<Path>) -> Result<BasisSpec, PersistError> {
    let path = path.as_ref();
    let text = read_to_string(path)?;
    let basis: BasisSpec = serde_json::from_str(&text)
        .map_err(|e| parse_err(path, 1, format!("malformed basis file: {e}")))?;
    basis.validate()?;
    Ok(basis)
}

// ---------------------------------------------------------------------------
// Curve and label CSVs
// ---------------------------------------------------------------------------

/// Reads the long-format curve CSV `curve_id,t,value`. Rows may arrive in
/// any order; curves come back grouped by id in first-appearance order with
/// times sorted. Duplicate `(curve_id, t)` rows are rejected.
pub fn load_curves(path: impl AsRef<Path>) -> Result<Vec<RawCurve>, PersistError> {
    let path = path.as_ref();
    let text = read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim() == "curve_id,t,value" => {}
        Some((_, header)) => {
            return Err(parse_err(path, 1, format!("expected header 'curve_id,t,value', got '{header}'")))
        }
        None => return Err(parse_err(path, 1, "empty file")),
    }

    let mut order: Vec<String> = Vec::new();
    let mut grouped: std::collections::HashMap<String, (Vec<f64>, Vec<f64>)> =
        std::collections::HashMap::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let (id, t, value) = match (fields.next(), fields.next(), fields.next(), fields.next()) {
            (Some(id), Some(t), Some(v), None) => (id.trim(), t, v),
            _ => return Err(parse_err(path, line_no, "expected exactly 3 fields 'curve_id,t,value'")),
        };
        if id.is_empty() {
            return Err(parse_err(path, line_no, "empty curve_id"));
        }
        let t = parse_f64(path, line_no, "t", t)?;
        let value = parse_f64(path, line_no, "value", value)?;
        let entry = grouped.entry(id.to_string()).or_insert_with(|| {
            order.push(id.to_string());
            (Vec::new(), Vec::new())
        });
        if entry.0.contains(&t) {
            return Err(parse_err(path, line_no, format!("duplicate observation ({id}, {t})")));
        }
        entry.0.push(t);
        entry.1.push(value);
    }

    let mut curves = Vec::with_capacity(order.len());
    for id in order {
        let (times, values) = grouped.remove(&id).unwrap();
        curves.push(RawCurve::new(id, times, values)?);
    }
    Ok(curves)
}

pub fn write_curves(curves: &[RawCurve], path: impl AsRef<Path>) -> Result<(), PersistError> {
    let mut out = String::from("curve_id,t,value\n");
    for curve in curves {
        for (t, v) in curve.times().iter().zip(curve.values()) {
            let _ = writeln!(out, "{},{},{}", curve.id(), t, v);
        }
    }
    write_atomic(path.as_ref(), &out)
}

/// Reads the label CSV `curve_id,label` with 1-based labels. When
/// `n_classes` is given, labels outside `1..=n_classes` are rejected;
/// label 0 is always rejected.
pub fn load_labels(
    path: impl AsRef<Path>,
    n_classes: Option<usize>,
) -> Result<Vec<(String, usize)>, PersistError> {
    let path = path.as_ref();
    let text = read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim() == "curve_id,label" => {}
        Some((_, header)) => {
            return Err(parse_err(path, 1, format!("expected header 'curve_id,label', got '{header}'")))
        }
        None => return Err(parse_err(path, 1, "empty file")),
    }
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let (id, label) = match (fields.next(), fields.next(), fields.next()) {
            (Some(id), Some(label), None) => (id.trim(), label.trim()),
            _ => return Err(parse_err(path, line_no, "expected exactly 2 fields 'curve_id,label'")),
        };
        let label: usize = label
            .parse()
            .map_err(|_| parse_err(path, line_no, format!("label '{label}' is not a nonnegative integer")))?;
        if label < 1 {
            return Err(parse_err(path, line_no, "labels are 1-based; 0 is out of range"));
        }
        if let Some(k) = n_classes {
            if label > k {
                return Err(parse_err(path, line_no, format!("label {label} exceeds the declared {k} classes")));
            }
        }
        if !seen.insert(id.to_string()) {
            return Err(parse_err(path, line_no, format!("duplicate label for curve '{id}'")));
        }
        out.push((id.to_string(), label));
    }
    Ok(out)
}

pub fn write_labels(rows: &[(String, usize)], path: impl AsRef<Path>) -> Result<(), PersistError> {
    let mut out = String::from("curve_id,label\n");
    for (id, label) in rows {
        let _ = writeln!(out, "{id},{label}");
    }
    write_atomic(path.as_ref(), &out)
}

/// Joins curves and labels on curve id, preserving curve order. Every
/// labeled id must have a curve and vice versa; offenders are listed in the
/// error.
pub fn join_curves_labels(
    curves: &[RawCurve],
    labels: &[(String, usize)],
) -> Result<Vec<usize>, PersistError> {
    let label_map: std::collections::HashMap<&str, usize> =
        labels.iter().map(|(id, y)| (id.as_str(), *y)).collect();
    let curve_ids: BTreeSet<&str> = curves.iter().map(|c| c.id()).collect();
    let missing_labels: Vec<String> = curves
        .iter()
        .map(|c| c.id())
        .filter(|id| !label_map.contains_key(id))
        .map(String::from)
        .collect();
    let missing_curves: Vec<String> = labels
        .iter()
        .map(|(id, _)| id.clone())
        .filter(|id| !curve_ids.contains(id.as_str()))
        .collect();
    if !missing_curves.is_empty() || !missing_labels.is_empty() {
        return Err(PersistError::Join { missing_curves, missing_labels });
    }
    Ok(curves.iter().map(|c| label_map[c.id()]).collect())
}

// ---------------------------------------------------------------------------
// Coefficient, prediction, and report CSVs
// ---------------------------------------------------------------------------

/// Writes smoothed coefficients as `curve_id,c1,...,cM`.
pub fn write_coeffs(
    rows: &[(String, Vec<f64>)],
    size: usize,
    path: impl AsRef<Path>,
) -> Result<(), PersistError> {
    let mut out = String::from("curve_id");
    for m in 1..=size {
        let _ = write!(out, ",c{m}");
    }
    out.push('\n');
    for (id, coeffs) in rows {
        let _ = write!(out, "{id}");
        for c in coeffs {
            let _ = write!(out, ",{c}");
        }
        out.push('\n');
    }
    write_atomic(path.as_ref(), &out)
}

/// Reads a coefficient CSV back as ids plus coefficient vectors; the width
/// comes from the header.
pub fn load_coeffs(path: impl AsRef<Path>) -> Result<Vec<(String, Vec<f64>)>, PersistError> {
    let path = path.as_ref();
    let text = read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let size = match lines.next() {
        Some((_, header)) => {
            let fields: Vec<&str> = header.split(',').collect();
            if fields.first() != Some(&"curve_id")
                || fields.len() < 2
                || fields[1..].iter().enumerate().any(|(i, f)| *f != format!("c{}", i + 1))
            {
                return Err(parse_err(path, 1, format!("expected header 'curve_id,c1,...', got '{header}'")));
            }
            fields.len() - 1
        }
        None => return Err(parse_err(path, 1, "empty file")),
    };
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != size + 1 {
            return Err(parse_err(path, line_no, format!("expected {} fields, got {}", size + 1, fields.len())));
        }
        let id = fields[0].trim().to_string();
        if !seen.insert(id.clone()) {
            return Err(parse_err(path, line_no, format!("duplicate coefficients for curve '{id}'")));
        }
        let coeffs = fields[1..]
            .iter()
            .enumerate()
            .map(|(i, f)| parse_f64(path, line_no, &format!("c{}", i + 1), f))
            .collect::<Result<Vec<f64>, _>>()?;
        out.push((id, coeffs));
    }
    Ok(out)
}

/// Writes predictions as `curve_id,predicted_class` plus probability columns
/// `p1..pK` when distributions are supplied (the mode rule); the LAD rule
/// passes `None` and the file carries no probabilities at all.
pub fn write_predictions(
    ids: &[String],
    classes: &[usize],
    probabilities: Option<&[Vec<f64>]>,
    path: impl AsRef<Path>,
) -> Result<(), PersistError> {
    let mut out = String::from("curve_id,predicted_class");
    if let Some(probs) = probabilities {
        let k = probs.first().map_or(0, Vec::len);
        for j in 1..=k {
            let _ = write!(out, ",p{j}");
        }
    }
    out.push('\n');
    for (i, (id, class)) in ids.iter().zip(classes).enumerate() {
        let _ = write!(out, "{id},{class}");
        if let Some(probs) = probabilities {
            for p in &probs[i] {
                let _ = write!(out, ",{p}");
            }
        }
        out.push('\n');
    }
    write_atomic(path.as_ref(), &out)
}

/// Writes a per-fold report `fold,mae,accuracy_error` with a closing `mean`
/// row.
pub fn write_cv_report(report: &CvReport, path: impl AsRef<Path>) -> Result<(), PersistError> {
    let mut out = String::from("fold,mae,accuracy_error\n");
    for (i, fold) in report.per_fold.iter().enumerate() {
        let _ = writeln!(out, "{},{},{}", i + 1, fold.mae, fold.accuracy_error);
    }
    let _ = writeln!(out, "mean,{},{}", report.mean_mae, report.mean_accuracy_error);
    write_atomic(path.as_ref(), &out)
}

/// Writes the comparison summary, one row per arm.
pub fn write_summary(rows: &[(String, f64, f64)], path: impl AsRef<Path>) -> Result<(), PersistError> {
    let mut out = String::from("arm,mean_mae,mean_error_rate\n");
    for (arm, mae, err) in rows {
        let _ = writeln!(out, "{arm},{mae},{err}");
    }
    write_atomic(path.as_ref(), &out)
}
