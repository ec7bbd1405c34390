//! JSON run and sweep configuration.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use subnet_core::data::{generate_synthetic, load_csv};
use subnet_core::harness::{SweepAxis, SweepSpec};
use subnet_core::{Dataset, MaskDistribution, TrainConfig};

use crate::CliError;

fn default_label_bound() -> f64 {
    1.0
}

fn default_true() -> bool {
    true
}

fn default_one() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum DatasetSource {
    Synthetic(SyntheticSpec),
    Csv(PathBuf),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    #[serde(default = "default_label_bound")]
    pub label_bound: f64,
    /// Defaults to the run seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl Default for DatasetSource {
    fn default() -> Self {
        DatasetSource::Synthetic(SyntheticSpec {
            label_bound: default_label_bound(),
            seed: None,
        })
    }
}

/// On-disk training configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<usize>,
    pub m: usize,
    pub p: usize,
    pub tau: usize,
    #[serde(rename = "K")]
    pub k: usize,
    /// Required for Bernoulli masks; categorical masks default to `1/p`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub xi: Option<f64>,
    pub eta: f64,
    pub kappa: f64,
    pub mask: MaskDistribution,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_one")]
    pub trials: usize,
    #[serde(default = "default_true")]
    pub fixed_init: bool,
    #[serde(default)]
    pub record_ntk: bool,
    #[serde(default = "default_one")]
    pub ntk_interval: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub minibatch: Option<usize>,
    #[serde(default)]
    pub dataset: DatasetSource,
}

impl RunConfig {
    pub fn train_config(&self) -> Result<TrainConfig, CliError> {
        let xi = match (self.mask, self.xi) {
            (_, Some(xi)) => xi,
            (MaskDistribution::Categorical, None) => 1.0 / self.p.max(1) as f64,
            (MaskDistribution::Bernoulli, None) => {
                return Err(CliError::Validation("`xi` is required for bernoulli masks".into()))
            }
        };
        let config = TrainConfig {
            m: self.m,
            global_iters: self.k,
            tau: self.tau,
            p: self.p,
            xi,
            eta: self.eta,
            kappa: self.kappa,
            mask: self.mask,
            seed: self.seed,
            trials: self.trials,
            fixed_init: self.fixed_init,
            record_ntk: self.record_ntk,
            ntk_interval: self.ntk_interval,
            minibatch: self.minibatch,
        };
        config.validate()?;
        Ok(config)
    }

    /// Builds the dataset. `override_path` replaces the configured source;
    /// relative CSV paths in the config resolve against `base_dir`.
    pub fn dataset(&self, base_dir: &Path, override_path: Option<&Path>, normalize: bool) -> Result<Dataset, CliError> {
        let ds = match (override_path, &self.dataset) {
            (Some(path), _) => load_csv(path, normalize)?,
            (None, DatasetSource::Csv(path)) => load_csv(base_dir.join(path), normalize)?,
            (None, DatasetSource::Synthetic(spec)) => {
                let (n, d) = match (self.n, self.d) {
                    (Some(n), Some(d)) => (n, d),
                    _ => {
                        return Err(CliError::Validation(
                            "`n` and `d` are required for a synthetic dataset".into(),
                        ))
                    }
                };
                generate_synthetic(n, d, spec.label_bound, spec.seed.unwrap_or(self.seed))?
            }
        };
        for (key, want, got) in [("n", self.n, ds.n()), ("d", self.d, ds.d())] {
            if let Some(want) = want {
                if want != got {
                    return Err(CliError::Validation(format!(
                        "config `{key}` = {want} but the dataset has {got}"
                    )));
                }
            }
        }
        Ok(ds)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepFile {
    pub base: RunConfig,
    pub axis1: SweepAxis,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub axis2: Option<SweepAxis>,
    pub trials_per_cell: usize,
}

impl SweepFile {
    pub fn spec(&self) -> Result<SweepSpec, CliError> {
        let spec = SweepSpec {
            base: self.base.train_config()?,
            axis1: self.axis1.clone(),
            axis2: self.axis2.clone(),
            trials_per_cell: self.trials_per_cell,
        };
        spec.cell_configs()?;
        Ok(spec)
    }
}

/// Reads and parses a JSON file; parse errors name the offending key path.
pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    parse_json(&text).map_err(|e| match e {
        CliError::Validation(msg) => CliError::Validation(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn parse_json<T: DeserializeOwned>(text: &str) -> Result<T, CliError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let key = e.path().to_string();
        let inner = e.into_inner();
        if key == "." {
            CliError::Validation(format!("invalid config: {inner}"))
        } else {
            CliError::Validation(format!("invalid config at `{key}`: {inner}"))
        }
    })
}
