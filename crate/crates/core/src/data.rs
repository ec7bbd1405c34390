//! Datasets of unit-norm feature vectors with bounded scalar labels.
//!
//! A valid [`Dataset`] has every feature row on the unit sphere (within
//! [`UNIT_NORM_TOL`]) and no two rows co-aligned: `|<x_i, x_j>| < 1 - COALIGN_TOL`
//! for every `i != j`. Those two conditions are what makes the infinite-width
//! kernel strictly positive definite.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng as _;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::seed::{derive_rng, Stream};

/// Absolute tolerance on `||x_i|| - 1`.
pub const UNIT_NORM_TOL: f64 = 1e-12;
/// Rows with `|cos| >= 1 - COALIGN_TOL` count as co-aligned.
pub const COALIGN_TOL: f64 = 1e-9;
/// Resampling budget for [`generate_synthetic`], summed over all rows.
pub const MAX_COALIGN_RETRIES: usize = 1000;

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    features: Array2<f64>,
    labels: Array1<f64>,
}

impl Dataset {
    /// Builds a dataset and checks the unit-norm and non-co-alignment
    /// invariants. Labels only need to be finite here; use
    /// [`Dataset::check_label_bound`] for the magnitude bound.
    pub fn new(features: Array2<f64>, labels: Array1<f64>) -> Result<Self> {
        if features.nrows() != labels.len() {
            return Err(Error::Validation(format!(
                "{} feature rows but {} labels",
                features.nrows(),
                labels.len()
            )));
        }
        if features.nrows() == 0 || features.ncols() == 0 {
            return Err(Error::Validation("dataset is empty".into()));
        }
        let ds = Dataset { features, labels };
        ds.validate()?;
        Ok(ds)
    }

    pub fn n(&self) -> usize {
        self.features.nrows()
    }

    pub fn d(&self) -> usize {
        self.features.ncols()
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn labels(&self) -> &Array1<f64> {
        &self.labels
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.features.row(i)
    }

    pub fn validate(&self) -> Result<()> {
        for (i, &y) in self.labels.iter().enumerate() {
            if !y.is_finite() {
                return Err(Error::Validation(format!("label {i} is not finite")));
            }
        }
        for (i, row) in self.features.outer_iter().enumerate() {
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::Validation(format!("row {i} has a non-finite entry")));
            }
            let norm = row.dot(&row).sqrt();
            if (norm - 1.0).abs() > UNIT_NORM_TOL {
                return Err(Error::Validation(format!(
                    "row {i} has norm {norm}, expected unit norm"
                )));
            }
        }
        let gram = self.features.dot(&self.features.t());
        let n = self.n();
        for i in 0..n {
            for j in (i + 1)..n {
                if gram[[i, j]].abs() >= 1.0 - COALIGN_TOL {
                    return Err(Error::Validation(format!(
                        "rows {i} and {j} are co-aligned (cosine {})",
                        gram[[i, j]]
                    )));
                }
            }
        }
        Ok(())
    }

    /// Checks `|y_i| <= label_bound` for all labels.
    pub fn check_label_bound(&self, label_bound: f64) -> Result<()> {
        match self.labels.iter().position(|y| y.abs() > label_bound) {
            Some(i) => Err(Error::Validation(format!(
                "label {i} = {} exceeds bound {label_bound}",
                self.labels[i]
            ))),
            None => Ok(()),
        }
    }

    /// SHA-256 over the little-endian bytes of shape, features and labels.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update((self.n() as u64).to_le_bytes());
        hasher.update((self.d() as u64).to_le_bytes());
        for v in self.features.iter().chain(self.labels.iter()) {
            hasher.update(v.to_le_bytes());
        }
        let digest = hasher.finalize();
        digest.iter().fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }

    /// Serializes to the `f0,...,f{d-1},label` CSV layout. Values use the
    /// shortest round-trip decimal form, so reloading gives identical bits.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::new();
        for c in 0..self.d() {
            let _ = write!(out, "f{c},");
        }
        out.push_str("label\n");
        for (row, y) in self.features.outer_iter().zip(self.labels.iter()) {
            for v in row.iter() {
                let _ = write!(out, "{v},");
            }
            let _ = writeln!(out, "{y}");
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv_string())?;
        Ok(())
    }
}

/// Draws `n` Gaussian directions on the unit sphere in `d` dimensions with
/// labels uniform in `[-label_bound, label_bound]`. A row co-aligned with an
/// earlier one is redrawn.
pub fn generate_synthetic(n: usize, d: usize, label_bound: f64, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::invalid("n", "must be at least 1"));
    }
    if d == 0 {
        return Err(Error::invalid("d", "must be at least 1"));
    }
    if !(label_bound >= 0.0) || !label_bound.is_finite() {
        return Err(Error::invalid("label_bound", "must be finite and non-negative"));
    }
    let mut rng = derive_rng(seed, Stream::Data, &[n as u64, d as u64]);
    let mut features = Array2::<f64>::zeros((n, d));
    let mut retries = 0usize;
    for i in 0..n {
        loop {
            let mut row: Array1<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            let norm = row.dot(&row).sqrt();
            if norm == 0.0 {
                continue;
            }
            row.mapv_inplace(|v| v / norm);
            let clash = (0..i).any(|j| features.row(j).dot(&row).abs() >= 1.0 - COALIGN_TOL);
            if !clash {
                features.row_mut(i).assign(&row);
                break;
            }
            retries += 1;
            if retries > MAX_COALIGN_RETRIES {
                return Err(Error::CoAlignmentRetries {
                    n,
                    d,
                    retries: MAX_COALIGN_RETRIES,
                });
            }
        }
    }
    let labels: Array1<f64> = (0..n)
        .map(|_| {
            if label_bound == 0.0 {
                0.0
            } else {
                rng.random_range(-label_bound..=label_bound)
            }
        })
        .collect();
    Dataset::new(features, labels)
}

pub fn load_csv(path: impl AsRef<Path>, normalize: bool) -> Result<Dataset> {
    let file = std::fs::File::open(path)?;
    parse_csv(file, normalize)
}

/// Parses the `f0,...,f{d-1},label` layout. Rows and columns in errors are
/// 1-based, with the header as row 1.
pub fn parse_csv(reader: impl Read, normalize: bool) -> Result<Dataset> {
    let mut lines = BufReader::new(reader).lines();
    let header = match lines.next() {
        Some(line) => line?,
        None => {
            return Err(Error::Parse {
                row: 1,
                column: 1,
                reason: "missing header".into(),
            })
        }
    };
    let names: Vec<&str> = header.trim_end_matches('\r').split(',').map(str::trim).collect();
    if names.len() < 2 {
        return Err(Error::Parse {
            row: 1,
            column: 1,
            reason: "header needs at least one feature column and a label column".into(),
        });
    }
    let d = names.len() - 1;
    for (c, name) in names[..d].iter().enumerate() {
        if *name != format!("f{c}") {
            return Err(Error::Parse {
                row: 1,
                column: c + 1,
                reason: format!("expected header `f{c}`, found `{name}`"),
            });
        }
    }
    if names[d] != "label" {
        return Err(Error::Parse {
            row: 1,
            column: d + 1,
            reason: format!("expected header `label`, found `{}`", names[d]),
        });
    }

    let mut values = Vec::new();
    let mut labels = Vec::new();
    for (idx, line) in lines.enumerate() {
        let row = idx + 2;
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != d + 1 {
            return Err(Error::Parse {
                row,
                column: fields.len().min(d + 1),
                reason: format!("expected {} fields, found {}", d + 1, fields.len()),
            });
        }
        for (c, field) in fields.iter().enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| Error::Parse {
                row,
                column: c + 1,
                reason: format!("`{}` is not a number", field.trim()),
            })?;
            if c < d {
                values.push(v);
            } else {
                labels.push(v);
            }
        }
    }
    let n = labels.len();
    if n == 0 {
        return Err(Error::Parse {
            row: 2,
            column: 1,
            reason: "no data rows".into(),
        });
    }
    let mut features =
        Array2::from_shape_vec((n, d), values).expect("row lengths checked while parsing");
    if normalize {
        for (i, mut row) in features.outer_iter_mut().enumerate() {
            let norm = row.dot(&row).sqrt();
            if norm == 0.0 {
                return Err(Error::Validation(format!("row {i} is zero and cannot be normalized")));
            }
            row.mapv_inplace(|v| v / norm);
        }
    }
    Dataset::new(features, Array1::from(labels))
}
