//! Parameter sweeps over training configurations and per-phase summaries of
//! a training trace.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{estimate_error_region, fit_convergence_rate, mean_and_se};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::masks::MaskDistribution;
use crate::trainer::{run_trials, GlobalTrace, Phase, TrainConfig};

/// Parameters a sweep axis may vary.
pub const AXIS_NAMES: [&str; 7] = ["xi", "p", "tau", "m", "eta", "kappa", "K"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepAxis {
    pub name: String,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub base: TrainConfig,
    pub axis1: SweepAxis,
    pub axis2: Option<SweepAxis>,
    pub trials_per_cell: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub axis1: f64,
    pub axis2: Option<f64>,
    pub trial_count: usize,
    pub b1_hat: f64,
    pub b1_se: f64,
    /// `None` when no usable fit window exists.
    pub rate_hat: Option<f64>,
    pub final_loss_mean: f64,
    pub final_loss_se: f64,
    pub diverged: bool,
    pub plateau_warning: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub axis1_name: String,
    pub axis2_name: Option<String>,
    /// Row-major over `(axis1, axis2)`.
    pub cells: Vec<SweepCell>,
}

fn as_count(name: &str, value: f64) -> Result<usize> {
    if value >= 0.0 && value.fract() == 0.0 && value <= u32::MAX as f64 {
        Ok(value as usize)
    } else {
        Err(Error::Config(format!("axis `{name}` needs a non-negative integer, got {value}")))
    }
}

/// Sets parameter `name` of `config` to `value`. A categorical config keeps
/// `xi = 1/p` when `p` changes.
pub fn apply_axis(config: &mut TrainConfig, name: &str, value: f64) -> Result<()> {
    match name {
        "xi" => config.xi = value,
        "p" => {
            config.p = as_count(name, value)?;
            if config.mask == MaskDistribution::Categorical && config.p > 0 {
                config.xi = 1.0 / config.p as f64;
            }
        }
        "tau" => config.tau = as_count(name, value)?,
        "m" => config.m = as_count(name, value)?,
        "eta" => config.eta = value,
        "kappa" => config.kappa = value,
        "K" => config.global_iters = as_count(name, value)?,
        other => {
            return Err(Error::Config(format!(
                "unknown sweep axis `{other}`; valid axes: {}",
                AXIS_NAMES.join(", ")
            )))
        }
    }
    Ok(())
}

impl SweepSpec {
    /// Configuration of every cell, row-major over `(axis1, axis2)`.
    pub fn cell_configs(&self) -> Result<Vec<(f64, Option<f64>, TrainConfig)>> {
        if self.axis1.values.is_empty() || self.axis2.as_ref().is_some_and(|a| a.values.is_empty()) {
            return Err(Error::Config("sweep axes need at least one value".into()));
        }
        if self.trials_per_cell == 0 {
            return Err(Error::invalid("trials_per_cell", "must be at least 1"));
        }
        let second: Vec<Option<f64>> = match &self.axis2 {
            Some(axis) => axis.values.iter().copied().map(Some).collect(),
            None => vec![None],
        };
        let mut out = Vec::new();
        for &v1 in &self.axis1.values {
            for &v2 in &second {
                let mut config = self.base.clone();
                config.trials = self.trials_per_cell;
                apply_axis(&mut config, &self.axis1.name, v1)?;
                if let (Some(axis), Some(v2)) = (&self.axis2, v2) {
                    apply_axis(&mut config, &axis.name, v2)?;
                }
                config.validate()?;
                out.push((v1, v2, config));
            }
        }
        Ok(out)
    }
}

fn summarize_cell(axis1: f64, axis2: Option<f64>, config: &TrainConfig, ds: &Dataset) -> Result<SweepCell> {
    let traces = match run_trials(config, ds) {
        Ok(t) => t,
        Err(Error::Divergence { .. }) => {
            return Ok(SweepCell {
                axis1,
                axis2,
                trial_count: config.trials,
                b1_hat: f64::NAN,
                b1_se: f64::NAN,
                rate_hat: None,
                final_loss_mean: f64::NAN,
                final_loss_se: f64::NAN,
                diverged: true,
                plateau_warning: false,
            })
        }
        Err(e) => return Err(e),
    };
    let region = estimate_error_region(&traces)?;
    let rate_hat = fit_convergence_rate(&traces, region.b1_hat).ok().map(|s| s.rate_hat);
    let finals: Vec<f64> = traces.iter().map(GlobalTrace::final_loss).collect();
    let (final_loss_mean, final_loss_se) = mean_and_se(&finals);
    Ok(SweepCell {
        axis1,
        axis2,
        trial_count: traces.len(),
        b1_hat: region.b1_hat,
        b1_se: region.b1_se,
        rate_hat,
        final_loss_mean,
        final_loss_se,
        diverged: false,
        plateau_warning: region.plateau_warning,
    })
}

/// Runs every cell of the grid (in parallel) and summarizes it. Divergent
/// cells are flagged and the sweep continues.
pub fn run_sweep(spec: &SweepSpec, ds: &Dataset) -> Result<SweepResult> {
    let configs = spec.cell_configs()?;
    let cells = configs
        .par_iter()
        .map(|(v1, v2, config)| summarize_cell(*v1, *v2, config, ds))
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepResult {
        axis1_name: spec.axis1.name.clone(),
        axis2_name: spec.axis2.as_ref().map(|a| a.name.clone()),
        cells,
    })
}

pub const SWEEP_CSV_HEADER: &str =
    "axis1,axis2,trial_count,b1_hat,b1_se,rate_hat,final_loss_mean,final_loss_se,diverged";

impl SweepResult {
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from(SWEEP_CSV_HEADER);
        out.push('\n');
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
        for c in &self.cells {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                c.axis1,
                opt(c.axis2),
                c.trial_count,
                c.b1_hat,
                c.b1_se,
                opt(c.rate_hat),
                c.final_loss_mean,
                c.final_loss_se,
                c.diverged
            );
        }
        out
    }
}

/// Loss changes around one global iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationDynamics {
    pub k: usize,
    /// Mean first local loss minus the whole-network loss `L_k`.
    pub resample_change: f64,
    /// Mean over subnetworks of last minus first local loss.
    pub local_change: f64,
    /// `L_{k+1}` minus the mean last local loss.
    pub aggregate_change: f64,
    /// Subnetworks whose local losses strictly decreased at every step.
    pub monotone_local_runs: usize,
    pub local_runs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DynamicsReport {
    pub iterations: Vec<IterationDynamics>,
    /// Fraction of iterations whose resample change is positive.
    pub resample_increase_fraction: f64,
    /// Fraction of iterations whose aggregate change is negative.
    pub aggregate_decrease_fraction: f64,
    /// Fraction of all local runs that decrease strictly at every step.
    pub local_monotone_fraction: f64,
}

pub fn dynamics_report(trace: &GlobalTrace) -> DynamicsReport {
    let k_total = trace.global_iters();
    let mut iterations = Vec::with_capacity(k_total);
    for k in 0..k_total {
        let mut runs: Vec<Vec<f64>> = Vec::new();
        for rec in trace.records.iter().filter(|r| r.k == k && r.phase == Phase::Local) {
            let l = rec.subnet.expect("local rows carry a subnetwork");
            if runs.len() <= l {
                runs.resize(l + 1, Vec::new());
            }
            runs[l].push(rec.loss);
        }
        let count = runs.len().max(1) as f64;
        let first = runs.iter().map(|r| r[0]).sum::<f64>() / count;
        let last = runs.iter().map(|r| *r.last().unwrap()).sum::<f64>() / count;
        let monotone = runs.iter().filter(|r| r.windows(2).all(|w| w[1] < w[0])).count();
        iterations.push(IterationDynamics {
            k,
            resample_change: first - trace.global_loss[k],
            local_change: last - first,
            aggregate_change: trace.global_loss[k + 1] - last,
            monotone_local_runs: monotone,
            local_runs: runs.len(),
        });
    }
    let frac = |hits: usize, total: usize| if total == 0 { 0.0 } else { hits as f64 / total as f64 };
    let its = iterations.len();
    let resample = iterations.iter().filter(|d| d.resample_change > 0.0).count();
    let aggregate = iterations.iter().filter(|d| d.aggregate_change < 0.0).count();
    let mono: usize = iterations.iter().map(|d| d.monotone_local_runs).sum();
    let runs: usize = iterations.iter().map(|d| d.local_runs).sum();
    DynamicsReport {
        resample_increase_fraction: frac(resample, its),
        aggregate_decrease_fraction: frac(aggregate, its),
        local_monotone_fraction: frac(mono, runs),
        iterations,
    }
}
