//! One-hidden-layer ReLU network `f(W, x) = m^{-1/2} sum_r a_r relu(<w_r, x>)`.
//!
//! The output layer `a` is a fixed vector of signs. Three forward passes are
//! exposed: the whole network scaled by the selection probability `xi`, the
//! masked surrogate (no `xi` factor), and the expected-mask network in which
//! every mask entry is replaced by its mean. The last two agree with the first
//! in expectation and exactly, respectively.
//!
//! Gradients follow the usual NTK-literature convention of dropping the
//! factor 2 of `d/dW ||y - f||^2`, i.e. they are the exact gradients of
//! `0.5 * ||y - f||^2`. The ReLU derivative at zero is taken to be 1.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::seed::{rng_from_seed, Rng};

#[derive(Clone, Debug, PartialEq)]
pub struct ModelState {
    weights: Array2<f64>,
    signs: Array1<f64>,
    kappa: f64,
}

impl ModelState {
    /// `W ~ N(0, kappa^2)` entrywise and `a ~ Unif{-1, +1}`, drawn in that order.
    pub fn init_with_rng(m: usize, d: usize, kappa: f64, rng: &mut Rng) -> Result<Self> {
        if m == 0 {
            return Err(Error::invalid("m", "must be at least 1"));
        }
        if d == 0 {
            return Err(Error::invalid("d", "must be at least 1"));
        }
        if !(kappa > 0.0) || !kappa.is_finite() {
            return Err(Error::invalid("kappa", "must be positive and finite"));
        }
        let normal = Normal::new(0.0, kappa).map_err(|e| Error::invalid("kappa", e.to_string()))?;
        let weights = Array2::from_shape_simple_fn((m, d), || normal.sample(rng));
        let signs = Array1::from_shape_simple_fn(m, || if rng.random_bool(0.5) { 1.0 } else { -1.0 });
        Ok(ModelState {
            weights,
            signs,
            kappa,
        })
    }

    pub fn from_parts(weights: Array2<f64>, signs: Array1<f64>, kappa: f64) -> Result<Self> {
        if weights.nrows() != signs.len() {
            return Err(Error::invalid(
                "signs",
                format!("{} signs for {} neurons", signs.len(), weights.nrows()),
            ));
        }
        if signs.iter().any(|&s| s != 1.0 && s != -1.0) {
            return Err(Error::invalid("signs", "entries must be +1 or -1"));
        }
        if !(kappa > 0.0) {
            return Err(Error::invalid("kappa", "must be positive"));
        }
        Ok(ModelState {
            weights,
            signs,
            kappa,
        })
    }

    pub fn m(&self) -> usize {
        self.weights.nrows()
    }

    pub fn d(&self) -> usize {
        self.weights.ncols()
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    pub fn signs(&self) -> &Array1<f64> {
        &self.signs
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    /// Same signs and scale, new hidden weights.
    pub fn with_weights(&self, weights: Array2<f64>) -> Self {
        assert_eq!(weights.dim(), self.weights.dim(), "weight shape changed");
        ModelState {
            weights,
            signs: self.signs.clone(),
            kappa: self.kappa,
        }
    }
}

pub fn init_model(m: usize, d: usize, kappa: f64, seed: u64) -> Result<ModelState> {
    ModelState::init_with_rng(m, d, kappa, &mut rng_from_seed(seed))
}

/// `Z = X W^T`, shape `n x m`.
pub fn preactivations(weights: ArrayView2<'_, f64>, x: ArrayView2<'_, f64>) -> Array2<f64> {
    x.dot(&weights.t())
}

/// `sum_r coeffs_r relu(<w_r, x_i>)` for every sample.
pub(crate) fn weighted_output(
    weights: ArrayView2<'_, f64>,
    coeffs: &Array1<f64>,
    x: ArrayView2<'_, f64>,
) -> Array1<f64> {
    let mut z = preactivations(weights, x);
    z.mapv_inplace(|v| v.max(0.0));
    z.dot(coeffs)
}

/// Row `r` is `coeffs_r * sum_i residual_i x_i 1{<w_r, x_i> >= 0}`.
pub(crate) fn weighted_gradient(
    weights: ArrayView2<'_, f64>,
    coeffs: &Array1<f64>,
    x: ArrayView2<'_, f64>,
    residual: &Array1<f64>,
) -> Array2<f64> {
    let mut gated = preactivations(weights, x);
    for (mut row, &res) in gated.axis_iter_mut(Axis(0)).zip(residual.iter()) {
        row.mapv_inplace(|z| if z >= 0.0 { res } else { 0.0 });
    }
    let mut grad = gated.t().dot(&x);
    for (mut row, &c) in grad.axis_iter_mut(Axis(0)).zip(coeffs.iter()) {
        row.mapv_inplace(|g| c * g);
    }
    grad
}

/// `a_r * s_r / sqrt(m)` for per-neuron multipliers `s`.
pub(crate) fn output_coeffs(signs: &Array1<f64>, scale: impl Fn(usize) -> f64) -> Array1<f64> {
    let root_m = (signs.len() as f64).sqrt();
    Array1::from_iter(signs.iter().enumerate().map(|(r, &a)| a * scale(r) / root_m))
}

fn mask_coeffs(state: &ModelState, mask_row: &[bool]) -> Array1<f64> {
    assert_eq!(mask_row.len(), state.m(), "mask length must equal the neuron count");
    output_coeffs(&state.signs, |r| if mask_row[r] { 1.0 } else { 0.0 })
}

fn check_dims(state: &ModelState, ds: &Dataset) {
    assert_eq!(state.d(), ds.d(), "model and dataset dimensions differ");
}

/// `u_i = (xi / sqrt(m)) sum_r a_r relu(<w_r, x_i>)`.
pub fn forward_scaled(state: &ModelState, ds: &Dataset, xi: f64) -> Array1<f64> {
    check_dims(state, ds);
    let coeffs = output_coeffs(&state.signs, |_| xi);
    weighted_output(state.weights.view(), &coeffs, ds.features().view())
}

/// Surrogate output of the subnetwork selected by `mask_row`; no `xi` factor.
pub fn forward_surrogate(state: &ModelState, mask_row: &[bool], ds: &Dataset) -> Array1<f64> {
    check_dims(state, ds);
    let coeffs = mask_coeffs(state, mask_row);
    weighted_output(state.weights.view(), &coeffs, ds.features().view())
}

/// Surrogate forward with each mask entry replaced by its mean `xi`.
/// Identical to [`forward_scaled`] bit for bit.
pub fn forward_expected_mask(state: &ModelState, ds: &Dataset, xi: f64) -> Array1<f64> {
    check_dims(state, ds);
    let mean_mask = vec![xi; state.m()];
    let coeffs = output_coeffs(&state.signs, |r| mean_mask[r]);
    weighted_output(state.weights.view(), &coeffs, ds.features().view())
}

/// Squared Euclidean distance `||y - u||^2`.
pub fn loss(y: &Array1<f64>, u: &Array1<f64>) -> f64 {
    assert_eq!(y.len(), u.len(), "label and output lengths differ");
    y.iter().zip(u.iter()).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Gradient of `0.5 * ||y - f_mask(W, X)||^2` in `W`. Rows of masked-out
/// neurons are exactly zero.
pub fn surrogate_gradient(state: &ModelState, mask_row: &[bool], ds: &Dataset) -> Array2<f64> {
    check_dims(state, ds);
    let coeffs = mask_coeffs(state, mask_row);
    let out = weighted_output(state.weights.view(), &coeffs, ds.features().view());
    let residual = &out - ds.labels();
    weighted_gradient(state.weights.view(), &coeffs, ds.features().view(), &residual)
}

/// Gradient of `0.5 * ||y - u||^2` for the `xi`-scaled whole network.
pub fn full_gradient(state: &ModelState, ds: &Dataset, xi: f64) -> Array2<f64> {
    check_dims(state, ds);
    let coeffs = output_coeffs(&state.signs, |_| xi);
    let out = weighted_output(state.weights.view(), &coeffs, ds.features().view());
    let residual = &out - ds.labels();
    weighted_gradient(state.weights.view(), &coeffs, ds.features().view(), &residual)
}

/// Per sample, the number of neurons whose activation indicator differs
/// between `state_now` and `state_init`.
pub fn count_activation_flips(state_now: &ModelState, state_init: &ModelState, ds: &Dataset) -> Vec<usize> {
    activation_flips(state_now.weights.view(), state_init.weights.view(), ds)
}

pub(crate) fn activation_flips(now: ArrayView2<'_, f64>, init: ArrayView2<'_, f64>, ds: &Dataset) -> Vec<usize> {
    assert_eq!(now.dim(), init.dim(), "weight shapes differ");
    let z_now = preactivations(now, ds.features().view());
    let z_init = preactivations(init, ds.features().view());
    z_now
        .outer_iter()
        .zip(z_init.outer_iter())
        .map(|(a, b)| a.iter().zip(b.iter()).filter(|(p, q)| (**p >= 0.0) != (**q >= 0.0)).count())
        .collect()
}
