//! The masked training loop.
//!
//! One global iteration `k`:
//! 1. sample a `p x m` mask from the configured distribution,
//! 2. copy the shared weights into every subnetwork and run `tau` gradient
//!    steps on each subnetwork's surrogate loss,
//! 3. set `w_r <- w_r + weight_r * sum_l delta_r^l`, where `weight_r` is the
//!    inverse of the number of subnetworks holding neuron `r` (0 if none).
//!
//! Subnetwork runs only read the shared weights, their mask row and the data,
//! so they run in parallel. Masks and minibatches come from generators keyed
//! by `(seed, trial, k[, l])`, which makes every trace independent of thread
//! count and scheduling.

use std::fmt::Write as _;

use ndarray::{Array1, Array2, Axis};
use rand::seq::index::sample as sample_indices;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::kernel::{finite_ntk, masked_ntk, min_eigenvalue};
use crate::masks::{compute_stats, sample_bernoulli, sample_categorical, MaskDistribution, MaskMatrix, MaskStats};
use crate::model::{activation_flips, loss, output_coeffs, weighted_gradient, weighted_output, ModelState};
use crate::seed::{derive_rng, derive_seed, rng_from_seed, Rng, Stream};

/// Losses above this abort training.
pub const DIVERGENCE_THRESHOLD: f64 = 1e12;

/// Tolerance when checking that a categorical config uses `xi = 1/p`.
const CATEGORICAL_XI_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Hidden width.
    pub m: usize,
    /// Global iterations `K`.
    pub global_iters: usize,
    /// Local steps per subnetwork.
    pub tau: usize,
    /// Number of subnetworks.
    pub p: usize,
    /// Selection probability; forced to `1/p` for categorical masks.
    pub xi: f64,
    /// Local step size.
    pub eta: f64,
    /// Initialization scale.
    pub kappa: f64,
    pub mask: MaskDistribution,
    pub seed: u64,
    pub trials: usize,
    /// Reuse one initialization for every trial.
    pub fixed_init: bool,
    pub record_ntk: bool,
    pub ntk_interval: usize,
    /// Minibatch size for stochastic local steps; `None` is full batch.
    pub minibatch: Option<usize>,
}

impl TrainConfig {
    pub fn bernoulli(m: usize, global_iters: usize, tau: usize, p: usize, xi: f64, eta: f64, kappa: f64) -> Self {
        TrainConfig {
            m,
            global_iters,
            tau,
            p,
            xi,
            eta,
            kappa,
            mask: MaskDistribution::Bernoulli,
            seed: 0,
            trials: 1,
            fixed_init: true,
            record_ntk: false,
            ntk_interval: 1,
            minibatch: None,
        }
    }

    pub fn categorical(m: usize, global_iters: usize, tau: usize, p: usize, eta: f64, kappa: f64) -> Self {
        TrainConfig {
            mask: MaskDistribution::Categorical,
            ..TrainConfig::bernoulli(m, global_iters, tau, p, 1.0 / p.max(1) as f64, eta, kappa)
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_trials(mut self, trials: usize) -> Self {
        self.trials = trials;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(Error::invalid("m", "must be at least 1"));
        }
        if self.tau == 0 {
            return Err(Error::invalid("tau", "must be at least 1"));
        }
        if self.p == 0 {
            return Err(Error::invalid("p", "must be at least 1"));
        }
        if !(self.eta > 0.0) || !self.eta.is_finite() {
            return Err(Error::invalid("eta", "must be positive and finite"));
        }
        if !(self.kappa > 0.0) || !self.kappa.is_finite() {
            return Err(Error::invalid("kappa", "must be positive and finite"));
        }
        crate::masks::check_xi(self.xi)?;
        if self.mask == MaskDistribution::Categorical && (self.xi - 1.0 / self.p as f64).abs() > CATEGORICAL_XI_TOL {
            return Err(Error::invalid(
                "xi",
                format!("categorical masks require xi = 1/p = {}, got {}", 1.0 / self.p as f64, self.xi),
            ));
        }
        if self.trials == 0 {
            return Err(Error::invalid("trials", "must be at least 1"));
        }
        if self.ntk_interval == 0 {
            return Err(Error::invalid("ntk_interval", "must be at least 1"));
        }
        if self.minibatch == Some(0) {
            return Err(Error::invalid("minibatch", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Sample,
    Local,
    Aggregate,
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Phase::Sample => "sample",
            Phase::Local => "local",
            Phase::Aggregate => "aggregate",
        })
    }
}

/// One loss observation. Global rows (`Sample`, `Aggregate`) carry no
/// subnetwork or step index.
#[derive(Clone, Debug, PartialEq)]
pub struct LossRecord {
    pub trial: usize,
    pub k: usize,
    pub phase: Phase,
    pub subnet: Option<usize>,
    pub step: Option<usize>,
    pub loss: f64,
    pub min_eig: Option<f64>,
}

/// Full record of one training run.
///
/// Per-iteration vectors have `K + 1` entries: index `k` describes the shared
/// weights `W_k` entering global iteration `k` (index `K` is the final model).
#[derive(Clone, Debug, PartialEq)]
pub struct GlobalTrace {
    pub trial: usize,
    pub records: Vec<LossRecord>,
    /// `||y - u_k||^2` on the `xi`-scaled whole network.
    pub global_loss: Vec<f64>,
    /// `max_r ||w_{k,r} - w_{0,r}||`.
    pub perturbation: Vec<f64>,
    /// Per-sample activation flips against the initialization.
    pub flip_counts: Vec<Vec<usize>>,
    /// Smallest eigenvalue of the finite-width kernel, when recorded.
    pub ntk_min_eig: Vec<Option<f64>>,
}

impl GlobalTrace {
    pub fn global_iters(&self) -> usize {
        self.global_loss.len() - 1
    }

    pub fn final_loss(&self) -> f64 {
        *self.global_loss.last().expect("trace holds the initial loss")
    }

    /// Local losses of subnetwork `l` in iteration `k`, ordered by step.
    pub fn local_losses(&self, k: usize, l: usize) -> Vec<f64> {
        self.records
            .iter()
            .filter(|r| r.k == k && r.phase == Phase::Local && r.subnet == Some(l))
            .map(|r| r.loss)
            .collect()
    }

    fn global_row_extras(&self, idx: usize) -> (f64, usize, Option<f64>) {
        (
            self.perturbation[idx],
            self.flip_counts[idx].iter().sum(),
            self.ntk_min_eig[idx],
        )
    }
}

pub const TRACE_CSV_HEADER: &str = "trial,k,phase,l,t,loss,perturbation,flips,min_eig";

/// Renders traces in the `trial,k,phase,l,t,loss,perturbation,flips,min_eig`
/// layout. Global rows use `l = t = -1`; empty cells mean "not recorded".
pub fn traces_to_csv(traces: &[GlobalTrace]) -> String {
    let mut out = String::from(TRACE_CSV_HEADER);
    out.push('\n');
    for trace in traces {
        for rec in &trace.records {
            let l = rec.subnet.map_or(-1, |v| v as i64);
            let t = rec.step.map_or(-1, |v| v as i64);
            let (pert, flips) = match rec.phase {
                Phase::Local => (String::new(), String::new()),
                Phase::Sample => {
                    let (p, f, _) = trace.global_row_extras(rec.k);
                    (p.to_string(), f.to_string())
                }
                Phase::Aggregate => {
                    let (p, f, _) = trace.global_row_extras(rec.k + 1);
                    (p.to_string(), f.to_string())
                }
            };
            let eig = rec.min_eig.map_or(String::new(), |v| v.to_string());
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                rec.trial, rec.k, rec.phase, l, t, rec.loss, pert, flips, eig
            );
        }
    }
    out
}

/// Result of one subnetwork's local run.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalRun {
    /// `W_{k,tau} - W_k`; zero rows for neurons outside the mask.
    pub delta: Array2<f64>,
    /// Surrogate loss before each step and after the last, `tau + 1` values.
    pub losses: Vec<f64>,
}

/// A local run blew up at step `step`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LocalDivergence {
    pub step: usize,
    pub loss: f64,
}

fn diverged(loss: f64) -> bool {
    !loss.is_finite() || loss > DIVERGENCE_THRESHOLD
}

/// `tau` full-batch gradient steps on the surrogate loss of `mask_row`,
/// starting from `w_start`.
pub fn run_local(
    w_start: &Array2<f64>,
    signs: &Array1<f64>,
    mask_row: &[bool],
    ds: &Dataset,
    eta: f64,
    tau: usize,
) -> std::result::Result<LocalRun, LocalDivergence> {
    train_subnetwork(w_start, signs, mask_row, ds, eta, tau, None)
}

/// Local run; with `batch = Some((size, rng))` every step uses the gradient on
/// `size` samples drawn without replacement. Losses are always full-batch.
fn train_subnetwork(
    w_start: &Array2<f64>,
    signs: &Array1<f64>,
    mask_row: &[bool],
    ds: &Dataset,
    eta: f64,
    tau: usize,
    mut batch: Option<(usize, Rng)>,
) -> std::result::Result<LocalRun, LocalDivergence> {
    assert_eq!(mask_row.len(), w_start.nrows(), "mask length must equal the neuron count");
    let active: Vec<usize> = (0..mask_row.len()).filter(|&r| mask_row[r]).collect();
    let x = ds.features();
    let y = ds.labels();
    let mut delta = Array2::zeros(w_start.dim());

    if active.is_empty() {
        let l0 = y.dot(y);
        if diverged(l0) {
            return Err(LocalDivergence { step: 0, loss: l0 });
        }
        return Ok(LocalRun {
            delta,
            losses: vec![l0; tau + 1],
        });
    }

    // Work on the active rows only; the rest of the surrogate is identically zero.
    let mut w = w_start.select(Axis(0), &active);
    let all_coeffs = output_coeffs(signs, |_| 1.0);
    let coeffs: Array1<f64> = active.iter().map(|&r| all_coeffs[r]).collect();

    let mut losses = Vec::with_capacity(tau + 1);
    for t in 0..=tau {
        let out = weighted_output(w.view(), &coeffs, x.view());
        let l = loss(y, &out);
        if diverged(l) {
            return Err(LocalDivergence { step: t, loss: l });
        }
        losses.push(l);
        if t == tau {
            break;
        }
        let grad = match batch.as_mut() {
            None => {
                let residual = &out - y;
                weighted_gradient(w.view(), &coeffs, x.view(), &residual)
            }
            Some((size, rng)) => {
                let size = (*size).min(ds.n());
                let mut rows = sample_indices(rng, ds.n(), size).into_vec();
                rows.sort_unstable();
                let xb = x.select(Axis(0), &rows);
                let residual: Array1<f64> = rows.iter().map(|&i| out[i] - y[i]).collect();
                weighted_gradient(w.view(), &coeffs, xb.view(), &residual)
            }
        };
        w.scaled_add(-eta, &grad);
    }

    for (j, &r) in active.iter().enumerate() {
        let mut row = delta.row_mut(r);
        row.assign(&w.row(j));
        row -= &w_start.row(r);
    }
    Ok(LocalRun { delta, losses })
}

/// `w_r + weight_r * sum_l delta_r^l` for every neuron; unused neurons keep
/// their row.
pub fn aggregate(w_k: &Array2<f64>, deltas: &[Array2<f64>], stats: &MaskStats) -> Array2<f64> {
    assert_eq!(stats.weights.len(), w_k.nrows(), "stats and weights disagree on width");
    let mut next = w_k.clone();
    for (r, &weight) in stats.weights.iter().enumerate() {
        if weight == 0.0 {
            continue;
        }
        let mut sum = Array1::<f64>::zeros(w_k.ncols());
        for delta in deltas {
            sum += &delta.row(r);
        }
        next.row_mut(r).scaled_add(weight, &sum);
    }
    next
}

fn sample_mask(config: &TrainConfig, rng: &mut Rng) -> Result<MaskMatrix> {
    match config.mask {
        MaskDistribution::Bernoulli => sample_bernoulli(config.m, config.p, config.xi, rng),
        MaskDistribution::Categorical => sample_categorical(config.m, config.p, rng),
    }
}

/// Initial model for trial `trial`.
pub fn initial_state(config: &TrainConfig, d: usize, trial: usize) -> Result<ModelState> {
    let slot = if config.fixed_init { 0 } else { trial as u64 };
    let seed = derive_seed(config.seed, Stream::Init, &[slot]);
    ModelState::init_with_rng(config.m, d, config.kappa, &mut rng_from_seed(seed))
}

fn max_row_distance(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.outer_iter()
        .zip(b.outer_iter())
        .map(|(x, y)| x.iter().zip(y.iter()).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt())
        .fold(0.0, f64::max)
}

/// Runs one trial of masked training. Trial `t` draws its masks from the
/// `(seed, t, k)` streams, so the same trial index always reproduces.
pub fn run_trial(config: &TrainConfig, ds: &Dataset, trial: usize) -> Result<GlobalTrace> {
    config.validate()?;
    let state0 = initial_state(config, ds.d(), trial)?;
    let signs = state0.signs().clone();
    let w0 = state0.weights().clone();
    let coeffs = output_coeffs(&signs, |_| config.xi);
    let y = ds.labels();
    let x = ds.features();

    let whole_loss = |w: &Array2<f64>| loss(y, &weighted_output(w.view(), &coeffs, x.view()));
    let ntk_due = |k: usize| config.record_ntk && k % config.ntk_interval == 0;
    let finite_eig = |w: &Array2<f64>, k: usize| -> Result<Option<f64>> {
        if ntk_due(k) {
            Ok(Some(min_eigenvalue(&finite_ntk(w, ds, config.xi))?))
        } else {
            Ok(None)
        }
    };

    let k_total = config.global_iters;
    let mut trace = GlobalTrace {
        trial,
        records: Vec::new(),
        global_loss: Vec::with_capacity(k_total + 1),
        perturbation: Vec::with_capacity(k_total + 1),
        flip_counts: Vec::with_capacity(k_total + 1),
        ntk_min_eig: Vec::with_capacity(k_total + 1),
    };

    let mut w = w0.clone();
    let l0 = whole_loss(&w);
    if diverged(l0) {
        return Err(Error::Divergence {
            k: 0,
            l: None,
            t: None,
            loss: l0,
        });
    }
    trace.global_loss.push(l0);
    trace.perturbation.push(0.0);
    trace.flip_counts.push(vec![0; ds.n()]);
    trace.ntk_min_eig.push(finite_eig(&w, 0)?);

    if k_total == 0 {
        trace.records.push(LossRecord {
            trial,
            k: 0,
            phase: Phase::Sample,
            subnet: None,
            step: None,
            loss: l0,
            min_eig: trace.ntk_min_eig[0],
        });
    }

    for k in 0..k_total {
        trace.records.push(LossRecord {
            trial,
            k,
            phase: Phase::Sample,
            subnet: None,
            step: None,
            loss: trace.global_loss[k],
            min_eig: trace.ntk_min_eig[k],
        });

        let mut mask_rng = derive_rng(config.seed, Stream::Mask, &[trial as u64, k as u64]);
        let mask = sample_mask(config, &mut mask_rng)?;
        let stats = compute_stats(&mask);

        let locals: Vec<(LocalRun, Option<f64>)> = (0..config.p)
            .into_par_iter()
            .map(|l| {
                let batch = config.minibatch.map(|b| {
                    (b, derive_rng(config.seed, Stream::Minibatch, &[trial as u64, k as u64, l as u64]))
                });
                let run = train_subnetwork(&w, &signs, mask.row(l), ds, config.eta, config.tau, batch).map_err(
                    |e| Error::Divergence {
                        k,
                        l: Some(l),
                        t: Some(e.step),
                        loss: e.loss,
                    },
                )?;
                let eig = if ntk_due(k) {
                    Some(min_eigenvalue(&masked_ntk(&w, mask.row(l), ds))?)
                } else {
                    None
                };
                Ok((run, eig))
            })
            .collect::<Result<_>>()?;

        for (l, (run, eig)) in locals.iter().enumerate() {
            for (t, &value) in run.losses.iter().enumerate() {
                trace.records.push(LossRecord {
                    trial,
                    k,
                    phase: Phase::Local,
                    subnet: Some(l),
                    step: Some(t),
                    loss: value,
                    min_eig: if t == 0 { *eig } else { None },
                });
            }
        }

        let deltas: Vec<Array2<f64>> = locals.into_iter().map(|(run, _)| run.delta).collect();
        w = aggregate(&w, &deltas, &stats);

        let next_loss = whole_loss(&w);
        if diverged(next_loss) {
            return Err(Error::Divergence {
                k,
                l: None,
                t: None,
                loss: next_loss,
            });
        }
        let eig = finite_eig(&w, k + 1)?;
        trace.global_loss.push(next_loss);
        trace.perturbation.push(max_row_distance(&w, &w0));
        trace.flip_counts.push(activation_flips(w.view(), w0.view(), ds));
        trace.ntk_min_eig.push(eig);
        trace.records.push(LossRecord {
            trial,
            k,
            phase: Phase::Aggregate,
            subnet: None,
            step: None,
            loss: next_loss,
            min_eig: eig,
        });
    }
    Ok(trace)
}

/// Single run (trial 0).
pub fn run_training(config: &TrainConfig, ds: &Dataset) -> Result<GlobalTrace> {
    run_trial(config, ds, 0)
}

/// `config.trials` independent runs, in trial order.
pub fn run_trials(config: &TrainConfig, ds: &Dataset) -> Result<Vec<GlobalTrace>> {
    config.validate()?;
    (0..config.trials)
        .into_par_iter()
        .map(|trial| run_trial(config, ds, trial))
        .collect()
}
