//! Neural tangent kernels of the one-hidden-layer ReLU network.
//!
//! - finite width: `H_ij = (xi/m) <x_i,x_j> #{r : <w_r,x_i> >= 0, <w_r,x_j> >= 0}`
//! - masked: same count restricted to the neurons of one subnetwork, scaled
//!   by `1/m` with no `xi`, so its mask-expectation is the finite kernel
//! - infinite width: `xi <x_i,x_j> (pi - arccos<x_i,x_j>) / (2 pi)`, the
//!   Gaussian expectation of the finite kernel's indicator
//!
//! Every matrix is built from its upper triangle and mirrored, so it is
//! exactly symmetric.

use std::f64::consts::PI;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::symmetric_eigenvalues;
use crate::model::preactivations;
use crate::seed::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    Finite,
    Masked,
    Infinite,
}

impl std::fmt::Display for KernelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            KernelKind::Finite => "finite",
            KernelKind::Masked => "masked",
            KernelKind::Infinite => "infinite",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct KernelMatrix {
    entries: Array2<f64>,
    kind: KernelKind,
}

impl KernelMatrix {
    pub fn entries(&self) -> &Array2<f64> {
        &self.entries
    }

    pub fn kind(&self) -> KernelKind {
        self.kind
    }

    pub fn n(&self) -> usize {
        self.entries.nrows()
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> Result<Vec<f64>> {
        symmetric_eigenvalues(&self.entries)
    }

    /// Row-major CSV without header, one matrix row per line.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::new();
        for row in self.entries.outer_iter() {
            let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }
}

/// Fills the upper triangle from `entry(i, j)` and mirrors it.
fn symmetric_from(n: usize, kind: KernelKind, entry: impl Fn(usize, usize) -> f64 + Sync) -> KernelMatrix {
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| (i..n).map(|j| entry(i, j)).collect())
        .collect();
    let mut entries = Array2::zeros((n, n));
    for (i, row) in rows.into_iter().enumerate() {
        for (off, v) in row.into_iter().enumerate() {
            let j = i + off;
            entries[[i, j]] = v;
            entries[[j, i]] = v;
        }
    }
    KernelMatrix { entries, kind }
}

/// `counts[i][j] = sum_r weight_r 1{z_ir >= 0} 1{z_jr >= 0}`.
fn co_activation(weights: ArrayView2<'_, f64>, ds: &Dataset, neuron_weight: &Array1<f64>) -> Array2<f64> {
    let active = preactivations(weights, ds.features().view()).mapv(|z| if z >= 0.0 { 1.0 } else { 0.0 });
    let mut weighted = active.clone();
    for (mut col, &w) in weighted.axis_iter_mut(Axis(1)).zip(neuron_weight.iter()) {
        col.mapv_inplace(|v| v * w);
    }
    weighted.dot(&active.t())
}

pub fn finite_ntk(weights: &Array2<f64>, ds: &Dataset, xi: f64) -> KernelMatrix {
    assert_eq!(weights.ncols(), ds.d(), "weight and data dimensions differ");
    let m = weights.nrows() as f64;
    let counts = co_activation(weights.view(), ds, &Array1::ones(weights.nrows()));
    let gram = ds.features().dot(&ds.features().t());
    symmetric_from(ds.n(), KernelKind::Finite, |i, j| xi * gram[[i, j]] * counts[[i, j]] / m)
}

pub fn masked_ntk(weights: &Array2<f64>, mask_row: &[bool], ds: &Dataset) -> KernelMatrix {
    assert_eq!(weights.ncols(), ds.d(), "weight and data dimensions differ");
    assert_eq!(mask_row.len(), weights.nrows(), "mask length must equal the neuron count");
    let m = weights.nrows() as f64;
    let w: Array1<f64> = mask_row.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
    let counts = co_activation(weights.view(), ds, &w);
    let gram = ds.features().dot(&ds.features().t());
    symmetric_from(ds.n(), KernelKind::Masked, |i, j| gram[[i, j]] * counts[[i, j]] / m)
}

/// Masked kernel with each mask entry replaced by the real weight
/// `mask_values[r]`; `mask_values = [xi; m]` reproduces [`finite_ntk`].
pub fn masked_ntk_weighted(weights: &Array2<f64>, mask_values: &[f64], ds: &Dataset) -> KernelMatrix {
    assert_eq!(mask_values.len(), weights.nrows(), "mask length must equal the neuron count");
    let m = weights.nrows() as f64;
    let counts = co_activation(weights.view(), ds, &Array1::from(mask_values.to_vec()));
    let gram = ds.features().dot(&ds.features().t());
    symmetric_from(ds.n(), KernelKind::Masked, |i, j| gram[[i, j]] * counts[[i, j]] / m)
}

/// Arc-cosine closed form of the infinite-width kernel.
pub fn infinite_ntk(ds: &Dataset, xi: f64) -> KernelMatrix {
    let gram = ds.features().dot(&ds.features().t());
    symmetric_from(ds.n(), KernelKind::Infinite, |i, j| {
        let c = gram[[i, j]].clamp(-1.0, 1.0);
        xi * c * (PI - c.acos()) / (2.0 * PI)
    })
}

/// Monte Carlo estimate of the infinite-width kernel from `samples`
/// standard Gaussian weight vectors.
pub fn mc_infinite_ntk(ds: &Dataset, xi: f64, samples: usize, rng: &mut Rng) -> Result<KernelMatrix> {
    if samples == 0 {
        return Err(Error::invalid("samples", "must be at least 1"));
    }
    crate::masks::check_xi(xi)?;
    let d = ds.d();
    let n = ds.n();
    let mut counts = Array2::<f64>::zeros((n, n));
    // draw in blocks to keep the indicator matrix small
    const BLOCK: usize = 4096;
    let mut remaining = samples;
    while remaining > 0 {
        let b = remaining.min(BLOCK);
        let w = Array2::from_shape_simple_fn((b, d), || StandardNormal.sample(rng));
        counts += &co_activation(w.view(), ds, &Array1::ones(b));
        remaining -= b;
    }
    let gram = ds.features().dot(&ds.features().t());
    let total = samples as f64;
    Ok(symmetric_from(n, KernelKind::Infinite, |i, j| {
        xi * gram[[i, j]] * counts[[i, j]] / total
    }))
}

pub fn min_eigenvalue(k: &KernelMatrix) -> Result<f64> {
    Ok(k.eigenvalues()?[0])
}

pub fn max_eigenvalue(k: &KernelMatrix) -> Result<f64> {
    Ok(*k.eigenvalues()?.last().expect("kernel is non-empty"))
}

/// Smallest eigenvalue of the infinite-width kernel; errors unless positive.
pub fn lambda0(ds: &Dataset, xi: f64) -> Result<f64> {
    let l0 = min_eigenvalue(&infinite_ntk(ds, xi))?;
    if l0 > 0.0 {
        Ok(l0)
    } else {
        Err(Error::NonPositiveLambda0(l0))
    }
}
