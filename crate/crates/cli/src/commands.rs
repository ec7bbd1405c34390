use std::path::{Path, PathBuf};

use rand::Rng as _;
use serde::Serialize;
use subnet_core::analysis::{
    estimate_error_region, fit_convergence_rate, mean_and_se, predicted_rate, verify_global_decomposition,
    verify_initial_scale, verify_initial_scale_exact, verify_mask_moments, verify_mean_decomposition,
    verify_mixing_function_expectation, verify_surrogate_error_bound, VerificationReport, IDENTITY_RTOL,
};
use subnet_core::data::{generate_synthetic, load_csv};
use subnet_core::harness::run_sweep;
use subnet_core::kernel::{finite_ntk, infinite_ntk, lambda0, masked_ntk, max_eigenvalue, min_eigenvalue};
use subnet_core::masks::sample_bernoulli;
use subnet_core::model::init_model;
use subnet_core::seed::{derive_rng, rng_from_seed, Stream};
use subnet_core::trainer::{run_trials, traces_to_csv};
use subnet_core::GlobalTrace;

use crate::config::{read_json, RunConfig, SweepFile};
use crate::{CliError, KindArg};

pub const ARTIFACT_VERSION: &str = concat!("subnet ", env!("CARGO_PKG_VERSION"));

#[derive(Serialize)]
struct RunManifest<'a, C: Serialize> {
    config_echo: &'a C,
    dataset_fingerprint: String,
    artifact_version: &'static str,
    outputs: Vec<String>,
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

/// Writes every `(name, contents)` pair under `dir`, then a manifest listing
/// them.
fn write_outputs<C: Serialize>(
    dir: &Path,
    files: Vec<(&str, String)>,
    config_echo: &C,
    fingerprint: String,
) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let mut outputs = Vec::new();
    for (name, contents) in files {
        let path = dir.join(name);
        std::fs::write(&path, contents).map_err(|e| io_err(&path, e))?;
        outputs.push(path.display().to_string());
    }
    let manifest_path = dir.join("manifest.json");
    outputs.push(manifest_path.display().to_string());
    let manifest = RunManifest {
        config_echo,
        dataset_fingerprint: fingerprint,
        artifact_version: ARTIFACT_VERSION,
        outputs,
    };
    std::fs::write(&manifest_path, to_json_pretty(&manifest)).map_err(|e| io_err(&manifest_path, e))
}

fn to_json_pretty(value: &impl Serialize) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("output types serialize");
    s.push('\n');
    s
}

fn config_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

pub fn gen_data(n: usize, d: usize, label_bound: f64, seed: u64, out: &Path) -> Result<(), CliError> {
    let ds = generate_synthetic(n, d, label_bound, seed)?;
    std::fs::write(out, ds.to_csv_string()).map_err(|e| io_err(out, e))
}

#[derive(Serialize)]
struct TrainSummary {
    trials: usize,
    b1_hat: f64,
    b1_se: f64,
    plateau_warning: bool,
    rate_hat: Option<f64>,
    r_squared: Option<f64>,
    fit_window: Option<(usize, usize)>,
    fit_error: Option<String>,
    lambda0: f64,
    lambda_max: f64,
    predicted_rate: f64,
    initial_loss_mean: f64,
    final_loss_mean: f64,
    final_loss_se: f64,
    config: RunConfig,
}

pub fn train(
    config_path: &Path,
    data: Option<&Path>,
    normalize: bool,
    out_dir: &Path,
    dry_run: bool,
) -> Result<(), CliError> {
    let mut run: RunConfig = read_json(config_path)?;
    let config = run.train_config()?;
    run.xi = Some(config.xi);
    let ds = run.dataset(&config_dir(config_path), data, normalize)?;
    if dry_run {
        return Ok(());
    }

    let traces = run_trials(&config, &ds)?;
    let region = estimate_error_region(&traces)?;
    let fit = fit_convergence_rate(&traces, region.b1_hat);
    let lam0 = lambda0(&ds, config.xi)?;
    let lam_max = max_eigenvalue(&infinite_ntk(&ds, config.xi))?;
    let initial: Vec<f64> = traces.iter().map(|t| t.global_loss[0]).collect();
    let finals: Vec<f64> = traces.iter().map(GlobalTrace::final_loss).collect();
    let (final_loss_mean, final_loss_se) = mean_and_se(&finals);

    let summary = TrainSummary {
        trials: traces.len(),
        b1_hat: region.b1_hat,
        b1_se: region.b1_se,
        plateau_warning: region.plateau_warning,
        rate_hat: fit.as_ref().ok().map(|f| f.rate_hat),
        r_squared: fit.as_ref().ok().map(|f| f.r_squared),
        fit_window: fit.as_ref().ok().map(|f| f.fit_window),
        fit_error: fit.as_ref().err().map(ToString::to_string),
        lambda0: lam0,
        lambda_max: lam_max,
        predicted_rate: predicted_rate(&config, lam0),
        initial_loss_mean: mean_and_se(&initial).0,
        final_loss_mean,
        final_loss_se,
        config: run.clone(),
    };
    write_outputs(
        out_dir,
        vec![("trace.csv", traces_to_csv(&traces)), ("summary.json", to_json_pretty(&summary))],
        &run,
        ds.fingerprint(),
    )
}

pub fn sweep(spec_path: &Path, data: Option<&Path>, normalize: bool, out_dir: &Path) -> Result<(), CliError> {
    let mut file: SweepFile = read_json(spec_path)?;
    let spec = file.spec()?;
    file.base.xi = Some(spec.base.xi);
    let ds = file.base.dataset(&config_dir(spec_path), data, normalize)?;
    let result = run_sweep(&spec, &ds)?;
    write_outputs(
        out_dir,
        vec![("sweep.csv", result.to_csv_string()), ("sweep.json", to_json_pretty(&result))],
        &file,
        ds.fingerprint(),
    )
}

pub const CHECK_NAMES: [&str; 10] = [
    "global_decomposition",
    "mean_decomposition",
    "theta",
    "nu_mean",
    "nu_variance",
    "nu_variance_exact",
    "mixing_function",
    "surrogate_error_bound",
    "initial_scale",
    "initial_scale_exact",
];

const DECOMPOSITION_INSTANCES: usize = 1000;
const MOMENT_SAMPLES: usize = 1_000_000;
const MIXING_SAMPLES: usize = 100_000;
const BOUND_SAMPLES: usize = 20_000;
const INIT_TRIALS: usize = 10_000;

/// Runs an identity check on many random instances and reports the worst
/// relative deviation against the identity tolerance.
fn decomposition_suite(name: &str, seed: u64, group: u64, with_target: bool) -> VerificationReport {
    let mut rng = derive_rng(seed, Stream::Verify, &[group]);
    let mut worst = 0.0f64;
    for _ in 0..DECOMPOSITION_INSTANCES {
        let p = rng.random_range(1..=8);
        let n = rng.random_range(1..=16);
        let mut vector = || ndarray::Array1::from_shape_fn(n, |_| rng.random_range(-5.0..5.0));
        let y = vector();
        let outputs: Vec<_> = (0..p).map(|_| vector()).collect();
        let report = if with_target {
            verify_global_decomposition(&y, &outputs)
        } else {
            verify_mean_decomposition(&outputs)
        };
        let dev = report.max_deviation();
        let relative = if dev == 0.0 {
            0.0
        } else if report.tolerance > 0.0 {
            dev / report.tolerance * IDENTITY_RTOL
        } else {
            f64::INFINITY
        };
        worst = worst.max(relative);
    }
    VerificationReport::new(name, vec![worst], vec![0.0], IDENTITY_RTOL, DECOMPOSITION_INSTANCES)
}

pub fn verify(checks: Option<Vec<String>>, seed: u64, xi: f64, p: usize, kappa: f64) -> Result<(), CliError> {
    let selected: Vec<String> = match checks {
        None => CHECK_NAMES.iter().map(ToString::to_string).collect(),
        Some(list) => {
            let list: Vec<String> = list.into_iter().map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect();
            if let Some(bad) = list.iter().find(|c| !CHECK_NAMES.contains(&c.as_str())) {
                return Err(CliError::Validation(format!(
                    "unknown check `{bad}`; valid checks: {}",
                    CHECK_NAMES.join(", ")
                )));
            }
            list
        }
    };
    let wants = |name: &str| selected.iter().any(|c| c == name);

    let mut reports = Vec::new();
    if wants("global_decomposition") {
        reports.push(decomposition_suite("global_decomposition", seed, 0, true));
    }
    if wants("mean_decomposition") {
        reports.push(decomposition_suite("mean_decomposition", seed, 1, false));
    }
    if ["theta", "nu_mean", "nu_variance", "nu_variance_exact"].iter().any(|c| wants(c)) {
        let mut rng = derive_rng(seed, Stream::Verify, &[2]);
        for r in verify_mask_moments(xi, p, MOMENT_SAMPLES, &mut rng)? {
            if wants(&r.check_name) {
                reports.push(r);
            }
        }
    }
    if wants("mixing_function") {
        let ds = generate_synthetic(8, 4, 1.0, seed)?;
        let state = init_model(64, 4, 1.0, seed)?;
        let mut rng = derive_rng(seed, Stream::Verify, &[3]);
        reports.push(verify_mixing_function_expectation(&state, &ds, xi, p, 0, MIXING_SAMPLES, &mut rng)?);
    }
    if wants("surrogate_error_bound") {
        let ds = generate_synthetic(20, 8, 1.0, seed)?;
        let state = init_model(256, 8, kappa, seed)?;
        let mut rng = derive_rng(seed, Stream::Verify, &[4]);
        reports.push(verify_surrogate_error_bound(&state, &ds, xi, BOUND_SAMPLES, &mut rng)?);
    }
    if wants("initial_scale") || wants("initial_scale_exact") {
        let ds = generate_synthetic(20, 8, 1.0, seed)?;
        if wants("initial_scale") {
            let mut rng = derive_rng(seed, Stream::Verify, &[5]);
            reports.push(verify_initial_scale(&ds, 256, kappa, xi, INIT_TRIALS, &mut rng)?);
        }
        if wants("initial_scale_exact") {
            let mut rng = derive_rng(seed, Stream::Verify, &[6]);
            reports.push(verify_initial_scale_exact(&ds, 256, kappa, xi, INIT_TRIALS, &mut rng)?);
        }
    }

    for r in &reports {
        println!("{}", serde_json::to_string(r).expect("reports serialize"));
    }
    let failed: Vec<&str> = reports.iter().filter(|r| !r.passed()).map(|r| r.check_name.as_str()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Validation(format!("checks failed: {}", failed.join(", "))))
    }
}

pub struct NtkArgs {
    pub kind: KindArg,
    pub data: PathBuf,
    pub normalize: bool,
    pub m: usize,
    pub kappa: f64,
    pub xi: f64,
    pub seed: u64,
    pub mask_xi: Option<f64>,
    pub mask_seed: Option<u64>,
    pub out_dir: PathBuf,
}

#[derive(Serialize)]
struct KernelRecord {
    kind: String,
    n: usize,
    min_eig: f64,
    max_eig: f64,
}

#[derive(Serialize)]
struct NtkEcho {
    kind: String,
    m: usize,
    kappa: f64,
    xi: f64,
    seed: u64,
    mask_xi: Option<f64>,
    mask_seed: Option<u64>,
    data: String,
}

pub fn ntk(args: NtkArgs) -> Result<(), CliError> {
    let ds = load_csv(&args.data, args.normalize)?;
    let kernel = match args.kind {
        KindArg::Infinite => infinite_ntk(&ds, args.xi),
        KindArg::Finite => {
            let state = init_model(args.m, ds.d(), args.kappa, args.seed)?;
            finite_ntk(state.weights(), &ds, args.xi)
        }
        KindArg::Masked => {
            let (Some(mask_xi), Some(mask_seed)) = (args.mask_xi, args.mask_seed) else {
                return Err(CliError::Validation(
                    "the masked kernel needs --mask-xi and --mask-seed".into(),
                ));
            };
            let state = init_model(args.m, ds.d(), args.kappa, args.seed)?;
            let mask = sample_bernoulli(args.m, 1, mask_xi, &mut rng_from_seed(mask_seed))?;
            masked_ntk(state.weights(), mask.row(0), &ds)
        }
    };
    let record = KernelRecord {
        kind: kernel.kind().to_string(),
        n: kernel.n(),
        min_eig: min_eigenvalue(&kernel)?,
        max_eig: max_eigenvalue(&kernel)?,
    };
    let echo = NtkEcho {
        kind: kernel.kind().to_string(),
        m: args.m,
        kappa: args.kappa,
        xi: args.xi,
        seed: args.seed,
        mask_xi: args.mask_xi,
        mask_seed: args.mask_seed,
        data: args.data.display().to_string(),
    };
    write_outputs(
        &args.out_dir,
        vec![("kernel.csv", kernel.to_csv_string()), ("kernel.json", to_json_pretty(&record))],
        &echo,
        ds.fingerprint(),
    )
}
