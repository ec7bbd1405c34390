//! Checks of the algebraic and statistical identities behind masked
//! training, plus error-region and rate estimates extracted from traces.

use ndarray::{Array1, Array2, Axis};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::masks::{check_xi, theta, MaskDistribution};
use crate::model::{loss, ModelState};
use crate::seed::Rng;
use crate::trainer::{GlobalTrace, TrainConfig};

/// Relative tolerance for the exact decomposition identities.
pub const IDENTITY_RTOL: f64 = 1e-10;
/// Minimum draws for the Monte Carlo checks.
pub const MIN_MC_SAMPLES: usize = 10_000;
/// Minimum re-initializations for the initial-scale check.
pub const MIN_INIT_TRIALS: usize = 100;
/// Shortest usable rate-fit window.
pub const MIN_FIT_POINTS: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub check_name: String,
    pub status: Status,
    pub measured: Vec<f64>,
    pub expected: Vec<f64>,
    pub tolerance: f64,
    pub samples: usize,
}

impl VerificationReport {
    /// Passes iff the largest `|measured - expected|` is within `tolerance`.
    pub fn new(name: &str, measured: Vec<f64>, expected: Vec<f64>, tolerance: f64, samples: usize) -> Self {
        assert_eq!(measured.len(), expected.len(), "measured and expected lengths differ");
        let ok = measured
            .iter()
            .zip(&expected)
            .all(|(m, e)| (m - e).abs() <= tolerance);
        Self::with_status(name, ok, measured, expected, tolerance, samples)
    }

    fn with_status(
        name: &str,
        ok: bool,
        measured: Vec<f64>,
        expected: Vec<f64>,
        tolerance: f64,
        samples: usize,
    ) -> Self {
        VerificationReport {
            check_name: name.to_string(),
            status: if ok { Status::Pass } else { Status::Fail },
            measured,
            expected,
            tolerance,
            samples,
        }
    }

    pub fn passed(&self) -> bool {
        self.status == Status::Pass
    }

    pub fn max_deviation(&self) -> f64 {
        self.measured
            .iter()
            .zip(&self.expected)
            .map(|(m, e)| (m - e).abs())
            .fold(0.0, f64::max)
    }
}

fn sq_dist(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
    loss(a, b)
}

fn mean_vector(outputs: &[Array1<f64>]) -> Array1<f64> {
    let mut mean = Array1::zeros(outputs[0].len());
    for u in outputs {
        mean += u;
    }
    mean / outputs.len() as f64
}

/// `sum_l sum_{l' < l} ||u^l - u^{l'}||^2`.
fn pairwise_spread(outputs: &[Array1<f64>]) -> f64 {
    let mut s = 0.0;
    for l in 0..outputs.len() {
        for lp in 0..l {
            s += sq_dist(&outputs[l], &outputs[lp]);
        }
    }
    s
}

fn check_outputs(outputs: &[Array1<f64>]) {
    assert!(!outputs.is_empty(), "need at least one subnetwork output");
    let n = outputs[0].len();
    assert!(outputs.iter().all(|u| u.len() == n), "subnetwork outputs differ in length");
}

/// `||y - mean||^2 = (1/p) sum_l ||y - u^l||^2 - (1/p^2) sum_{l'<l} ||u^l - u^{l'}||^2`.
pub fn verify_global_decomposition(y: &Array1<f64>, outputs: &[Array1<f64>]) -> VerificationReport {
    check_outputs(outputs);
    let p = outputs.len() as f64;
    let lhs = sq_dist(y, &mean_vector(outputs));
    let fit = outputs.iter().map(|u| sq_dist(y, u)).sum::<f64>() / p;
    let spread = pairwise_spread(outputs) / (p * p);
    let rhs = fit - spread;
    let tol = IDENTITY_RTOL * lhs.abs().max(fit).max(spread);
    VerificationReport::new("global_decomposition", vec![lhs], vec![rhs], tol, 1)
}

/// `sum_l ||mean - u^l||^2 = (1/p) sum_{l'<l} ||u^l - u^{l'}||^2`.
pub fn verify_mean_decomposition(outputs: &[Array1<f64>]) -> VerificationReport {
    check_outputs(outputs);
    let p = outputs.len() as f64;
    let mean = mean_vector(outputs);
    let lhs: f64 = outputs.iter().map(|u| sq_dist(&mean, u)).sum();
    let rhs = pairwise_spread(outputs) / p;
    let tol = IDENTITY_RTOL * lhs.max(rhs);
    VerificationReport::new("mean_decomposition", vec![lhs], vec![rhs], tol, 1)
}

/// `xi (1 - xi) E[1/N | N >= 1]` for `N ~ Binomial(p, xi)`: the exact
/// conditional variance of the mixing coefficient between two distinct
/// neurons.
pub fn nu_variance_exact(xi: f64, p: usize) -> f64 {
    let th = theta(xi, p);
    if th == 0.0 {
        return 0.0;
    }
    let mut binom = 1.0;
    let mut acc = 0.0;
    for j in 1..=p {
        binom = binom * (p - j + 1) as f64 / j as f64;
        acc += binom * xi.powi(j as i32) * (1.0 - xi).powi((p - j) as i32) / j as f64;
    }
    xi * (1.0 - xi) * acc / th
}

/// Moments of the mixing coefficient `nu_{r,r'}` between two distinct
/// neurons under Bernoulli(xi) masks with `p` subnetworks.
///
/// Returns four reports: the selection frequency against `theta`, the
/// conditional mean against `xi`, the conditional variance against
/// `(theta - xi^2)/p`, and the conditional variance against its exact value
/// [`nu_variance_exact`]. The last two only coincide at `p = 1`.
pub fn verify_mask_moments(xi: f64, p: usize, samples: usize, rng: &mut Rng) -> Result<Vec<VerificationReport>> {
    check_xi(xi)?;
    if p == 0 {
        return Err(Error::invalid("p", "must be at least 1"));
    }
    if samples < MIN_MC_SAMPLES {
        return Err(Error::invalid("samples", format!("need at least {MIN_MC_SAMPLES}")));
    }
    const TOL: f64 = 0.01;
    let th = theta(xi, p);

    let mut selected = 0usize;
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..samples {
        let mut count = 0usize;
        let mut shared = 0usize;
        for _ in 0..p {
            let in_r = rng.random_bool(xi);
            let in_other = rng.random_bool(xi);
            count += in_r as usize;
            shared += (in_r && in_other) as usize;
        }
        if count > 0 {
            selected += 1;
            let nu = shared as f64 / count as f64;
            sum += nu;
            sum_sq += nu * nu;
        }
    }

    let theta_report = VerificationReport::new("theta", vec![selected as f64 / samples as f64], vec![th], TOL, samples);
    let printed = (th - xi * xi) / p as f64;
    let exact = nu_variance_exact(xi, p);
    if selected == 0 {
        let fail = |name: &str, expected: f64| {
            VerificationReport::with_status(name, false, vec![f64::NAN], vec![expected], TOL, 0)
        };
        return Ok(vec![
            theta_report,
            fail("nu_mean", xi),
            fail("nu_variance", printed),
            fail("nu_variance_exact", exact),
        ]);
    }
    let k = selected as f64;
    let mean = sum / k;
    let var = if selected > 1 { (sum_sq - k * mean * mean) / (k - 1.0) } else { 0.0 };
    Ok(vec![
        theta_report,
        VerificationReport::new("nu_mean", vec![mean], vec![xi], TOL, selected),
        VerificationReport::new("nu_variance", vec![var], vec![printed], TOL, selected),
        VerificationReport::new("nu_variance_exact", vec![var], vec![exact], TOL, selected),
    ])
}

/// `contrib[i][r] = a_r relu(<w_r, x_i>) / sqrt(m)`.
fn neuron_contributions(state: &ModelState, ds: &Dataset) -> Array2<f64> {
    let root_m = (state.m() as f64).sqrt();
    let mut c = crate::model::preactivations(state.weights().view(), ds.features().view());
    for (mut col, &a) in c.axis_iter_mut(Axis(1)).zip(state.signs().iter()) {
        col.mapv_inplace(|z| a * z.max(0.0) / root_m);
    }
    c
}

/// Monte Carlo mean of the mixing function `f_r = w_r sum_l m^l_r u^l`
/// against `theta u + theta (1 - xi) a_r relu(<w_r, x>) / sqrt(m)`.
///
/// Tolerance is three times the largest per-entry standard error, with a
/// floor at `1e-12` for degenerate (deterministic) masks.
pub fn verify_mixing_function_expectation(
    state: &ModelState,
    ds: &Dataset,
    xi: f64,
    p: usize,
    r: usize,
    samples: usize,
    rng: &mut Rng,
) -> Result<VerificationReport> {
    check_xi(xi)?;
    if p == 0 {
        return Err(Error::invalid("p", "must be at least 1"));
    }
    if r >= state.m() {
        return Err(Error::invalid("r", format!("neuron {r} out of range for width {}", state.m())));
    }
    if samples < MIN_MC_SAMPLES {
        return Err(Error::invalid("samples", format!("need at least {MIN_MC_SAMPLES}")));
    }
    let contrib = neuron_contributions(state, ds);
    let (n, m) = contrib.dim();

    let mut sum = Array1::<f64>::zeros(n);
    let mut sum_sq = Array1::<f64>::zeros(n);
    let mut f = Array1::<f64>::zeros(n);
    let mut row = vec![false; m];
    for _ in 0..samples {
        f.fill(0.0);
        let mut count = 0usize;
        for _ in 0..p {
            for v in row.iter_mut() {
                *v = rng.random_bool(xi);
            }
            if row[r] {
                count += 1;
                for (i, out) in f.iter_mut().enumerate() {
                    let c = contrib.row(i);
                    *out += row.iter().zip(c.iter()).filter(|(b, _)| **b).map(|(_, v)| v).sum::<f64>();
                }
            }
        }
        if count > 0 {
            f /= count as f64;
        }
        sum += &f;
        sum_sq += &f.mapv(|v| v * v);
    }

    let s = samples as f64;
    let mean = &sum / s;
    let var = (&sum_sq - &(&mean * &mean * s)) / (s - 1.0);
    let max_se = var.iter().map(|v| (v.max(0.0) / s).sqrt()).fold(0.0, f64::max);

    let th = theta(xi, p);
    let u = contrib.sum_axis(Axis(1)) * xi;
    let expected: Vec<f64> = (0..n)
        .map(|i| th * u[i] + th * (1.0 - xi) * contrib[[i, r]])
        .collect();
    let scale = expected.iter().fold(1.0f64, |acc, v| acc.max(v.abs()));
    let tol = 3.0 * max_se + 1e-12 * scale;
    Ok(VerificationReport::new("mixing_function", mean.to_vec(), expected, tol, samples))
}

/// Monte Carlo estimate of `E ||u - u_mask||^2` over a single Bernoulli(xi)
/// mask row, against the bound `4 xi (1 - xi) n kappa^2`. Passes when the
/// estimate is at most 5% above the bound.
pub fn verify_surrogate_error_bound(
    state: &ModelState,
    ds: &Dataset,
    xi: f64,
    samples: usize,
    rng: &mut Rng,
) -> Result<VerificationReport> {
    check_xi(xi)?;
    if samples < MIN_MC_SAMPLES {
        return Err(Error::invalid("samples", format!("need at least {MIN_MC_SAMPLES}")));
    }
    let contrib = neuron_contributions(state, ds);
    let (n, m) = contrib.dim();
    // same summation order as the masked outputs below, so xi = 1 gives exactly 0
    let u: Array1<f64> = contrib.outer_iter().map(|row| xi * row.iter().sum::<f64>()).collect();

    let mut acc = 0.0;
    let mut masked = Array1::<f64>::zeros(n);
    let mut row = vec![false; m];
    for _ in 0..samples {
        for v in row.iter_mut() {
            *v = rng.random_bool(xi);
        }
        for (i, out) in masked.iter_mut().enumerate() {
            *out = row
                .iter()
                .zip(contrib.row(i).iter())
                .filter(|(b, _)| **b)
                .map(|(_, v)| v)
                .sum();
        }
        acc += sq_dist(&u, &masked);
    }
    let estimate = acc / samples as f64;
    let kappa = state.kappa();
    let bound = 4.0 * xi * (1.0 - xi) * n as f64 * kappa * kappa;
    let tol = 0.05 * bound;
    Ok(VerificationReport::with_status(
        "surrogate_error_bound",
        estimate <= bound + tol,
        vec![estimate],
        vec![bound],
        tol,
        samples,
    ))
}

/// Sample mean of the initial loss `||y - u_0||^2` over `trials` fresh
/// initializations, and its standard error.
fn initial_loss_moments(
    ds: &Dataset,
    m: usize,
    kappa: f64,
    xi: f64,
    trials: usize,
    rng: &mut Rng,
) -> Result<(f64, f64)> {
    check_xi(xi)?;
    if trials < MIN_INIT_TRIALS {
        return Err(Error::invalid("trials", format!("need at least {MIN_INIT_TRIALS}")));
    }
    let mut values = Vec::with_capacity(trials);
    for _ in 0..trials {
        let state = ModelState::init_with_rng(m, ds.d(), kappa, rng)?;
        let u = crate::model::forward_scaled(&state, ds, xi);
        values.push(loss(ds.labels(), &u));
    }
    Ok(mean_and_se(&values))
}

/// Mean and standard error of the mean.
pub fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let k = values.len() as f64;
    let mean = values.iter().sum::<f64>() / k;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (k - 1.0);
    (mean, (var / k).sqrt())
}

/// Mean initial loss against `sum y^2 + xi^2 n`, within 3 standard errors.
///
/// The reference value assumes `E[relu(<w, x>)^2] = 1`, which holds for
/// `kappa = sqrt(2)`; see [`verify_initial_scale_exact`] for other scales.
pub fn verify_initial_scale(
    ds: &Dataset,
    m: usize,
    kappa: f64,
    xi: f64,
    trials: usize,
    rng: &mut Rng,
) -> Result<VerificationReport> {
    let (mean, se) = initial_loss_moments(ds, m, kappa, xi, trials, rng)?;
    let y2 = ds.labels().dot(ds.labels());
    let expected = y2 + xi * xi * ds.n() as f64;
    Ok(VerificationReport::new("initial_scale", vec![mean], vec![expected], 3.0 * se, trials))
}

/// Mean initial loss against `sum y^2 + xi^2 kappa^2 n / 2`, the value for
/// Gaussian weights of standard deviation `kappa`.
pub fn verify_initial_scale_exact(
    ds: &Dataset,
    m: usize,
    kappa: f64,
    xi: f64,
    trials: usize,
    rng: &mut Rng,
) -> Result<VerificationReport> {
    let (mean, se) = initial_loss_moments(ds, m, kappa, xi, trials, rng)?;
    let y2 = ds.labels().dot(ds.labels());
    let expected = y2 + xi * xi * kappa * kappa * ds.n() as f64 / 2.0;
    Ok(VerificationReport::new("initial_scale_exact", vec![mean], vec![expected], 3.0 * se, trials))
}

/// Tail-averaged error level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorRegion {
    pub b1_hat: f64,
    /// Standard error across trials (0 for a single trial).
    pub b1_se: f64,
    /// Half-open range of global-loss indices averaged.
    pub window: (usize, usize),
    /// Slope over the window exceeded 1% of the window mean per iteration.
    pub plateau_warning: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceSummary {
    pub rate_hat: f64,
    pub b1_hat: f64,
    pub fit_window: (usize, usize),
    pub r_squared: f64,
}

fn check_traces(traces: &[GlobalTrace]) -> Result<usize> {
    let first = traces.first().ok_or_else(|| Error::invalid("traces", "need at least one trace"))?;
    let len = first.global_loss.len();
    if traces.iter().any(|t| t.global_loss.len() != len) {
        return Err(Error::invalid("traces", "traces differ in length"));
    }
    Ok(len)
}

/// Across-trial mean of the global loss at each iteration.
pub fn mean_global_loss(traces: &[GlobalTrace]) -> Result<Vec<f64>> {
    let len = check_traces(traces)?;
    Ok((0..len)
        .map(|k| traces.iter().map(|t| t.global_loss[k]).sum::<f64>() / traces.len() as f64)
        .collect())
}

/// Least-squares slope and intercept of `ys` against `xs`, and `r^2`.
fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let k = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    if sxx == 0.0 {
        return (0.0, my, 1.0);
    }
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    (slope, my - slope * mx, r2)
}

/// Averages the last `ceil(0.2 K)` global losses (at least one) of every
/// trace, then averages across trials.
pub fn estimate_error_region(traces: &[GlobalTrace]) -> Result<ErrorRegion> {
    let len = check_traces(traces)?;
    let k_total = len - 1;
    let width = ((0.2 * k_total as f64).ceil() as usize).max(1);
    let start = len - width;

    let per_trial: Vec<f64> = traces
        .iter()
        .map(|t| t.global_loss[start..].iter().sum::<f64>() / width as f64)
        .collect();
    let (b1_hat, b1_se) = mean_and_se(&per_trial);

    let mean = mean_global_loss(traces)?;
    let xs: Vec<f64> = (start..len).map(|k| k as f64).collect();
    let (slope, _, _) = linear_fit(&xs, &mean[start..]);
    let window_mean = mean[start..].iter().sum::<f64>() / width as f64;
    let plateau_warning = slope.abs() > 0.01 * window_mean.abs();

    Ok(ErrorRegion {
        b1_hat,
        b1_se,
        window: (start, len),
        plateau_warning,
    })
}

/// Fits `log(mean L_k - b1) ~ slope k` over the first run of at least five
/// consecutive iterations with a positive argument; `rate_hat = exp(slope)`,
/// capped at 1.
pub fn fit_convergence_rate(traces: &[GlobalTrace], b1_hat: f64) -> Result<ConvergenceSummary> {
    let mean = mean_global_loss(traces)?;
    fit_rate_from_series(&mean, b1_hat)
}

/// [`fit_convergence_rate`] on an explicit loss series.
pub fn fit_rate_from_series(series: &[f64], b1_hat: f64) -> Result<ConvergenceSummary> {
    let positive: Vec<bool> = series.iter().map(|&v| v - b1_hat > 0.0 && (v - b1_hat).is_finite()).collect();
    let mut best = 0usize;
    let mut window = None;
    let mut k = 0;
    while k < series.len() {
        if !positive[k] {
            k += 1;
            continue;
        }
        let start = k;
        while k < series.len() && positive[k] {
            k += 1;
        }
        best = best.max(k - start);
        if k - start >= MIN_FIT_POINTS {
            window = Some((start, k));
            break;
        }
    }
    let (start, end) = window.ok_or(Error::FitWindow {
        found: best,
        needed: MIN_FIT_POINTS,
    })?;
    let xs: Vec<f64> = (start..end).map(|k| k as f64).collect();
    let ys: Vec<f64> = series[start..end].iter().map(|v| (v - b1_hat).ln()).collect();
    let (slope, _, r_squared) = linear_fit(&xs, &ys);
    Ok(ConvergenceSummary {
        rate_hat: slope.exp().min(1.0),
        b1_hat,
        fit_window: (start, end),
        r_squared,
    })
}

/// Theoretical per-global-step contraction factor.
///
/// Bernoulli: `1 - eta theta tau lambda0 / 4`. Categorical:
/// `gamma + (1 - gamma)(1 - eta lambda0 / 2)^tau` with
/// `gamma = (1 - 1/p)^(1/3)`.
pub fn predicted_rate(config: &TrainConfig, lambda0: f64) -> f64 {
    match config.mask {
        MaskDistribution::Bernoulli => {
            1.0 - 0.25 * config.eta * theta(config.xi, config.p) * config.tau as f64 * lambda0
        }
        MaskDistribution::Categorical => {
            let gamma = (1.0 - 1.0 / config.p as f64).cbrt();
            gamma + (1.0 - gamma) * (1.0 - config.eta * lambda0 / 2.0).powi(config.tau as i32)
        }
    }
}

/// Across-trial mean of `(L_k - L_{k+1}) / L_k` for `k = 0..steps`.
pub fn relative_improvements(traces: &[GlobalTrace], steps: usize) -> Result<Vec<f64>> {
    let len = check_traces(traces)?;
    if steps + 1 > len {
        return Err(Error::invalid("steps", format!("traces hold only {} global steps", len - 1)));
    }
    Ok((0..steps)
        .map(|k| {
            traces
                .iter()
                .map(|t| (t.global_loss[k] - t.global_loss[k + 1]) / t.global_loss[k])
                .sum::<f64>()
                / traces.len() as f64
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from_seed;
    use ndarray::array;

    fn trace_from(losses: Vec<f64>) -> GlobalTrace {
        let len = losses.len();
        GlobalTrace {
            trial: 0,
            records: Vec::new(),
            global_loss: losses,
            perturbation: vec![0.0; len],
            flip_counts: vec![Vec::new(); len],
            ntk_min_eig: vec![None; len],
        }
    }

    #[test]
    fn decomposition_trivial_cases() {
        let y = array![1.0, -2.0, 0.5];
        let u = array![0.3, 0.1, -0.4];
        let r = verify_global_decomposition(&y, &[u.clone()]);
        assert!(r.passed());
        assert_eq!(r.measured[0], loss(&y, &u));
        let r = verify_global_decomposition(&y, &[u.clone(), u.clone(), u.clone()]);
        assert!(r.passed());

        assert_eq!(verify_mean_decomposition(&[u.clone()]).measured, vec![0.0]);
        let r = verify_mean_decomposition(&[u.clone(), -u.clone()]);
        assert!(r.passed());
        assert!((r.measured[0] - 2.0 * u.dot(&u)).abs() < 1e-15);
    }

    #[test]
    fn deterministic_masks_have_exact_moments() {
        let mut rng = rng_from_seed(1);
        let reports = verify_mask_moments(1.0, 3, 10_000, &mut rng).unwrap();
        assert_eq!(reports[0].measured, vec![1.0]);
        assert_eq!(reports[1].measured, vec![1.0]);
        assert_eq!(reports[2].measured, vec![0.0]);
        assert!(reports.iter().all(VerificationReport::passed));
    }

    #[test]
    fn exact_variance_reduces_at_one_subnetwork() {
        for xi in [0.2, 0.5, 0.9] {
            let printed = (theta(xi, 1) - xi * xi) / 1.0;
            assert!((nu_variance_exact(xi, 1) - printed).abs() < 1e-15);
        }
        assert_eq!(nu_variance_exact(1.0, 4), 0.0);
    }

    #[test]
    fn moments_reject_small_samples() {
        let mut rng = rng_from_seed(1);
        assert!(verify_mask_moments(0.5, 2, 100, &mut rng).is_err());
    }

    #[test]
    fn initial_scale_zero_labels() {
        let ds = Dataset::new(array![[1.0, 0.0], [0.0, 1.0], [0.6, 0.8]], array![0.0, 0.0, 0.0]).unwrap();
        let mut rng = rng_from_seed(5);
        let r = verify_initial_scale(&ds, 64, std::f64::consts::SQRT_2, 1.0, 2000, &mut rng).unwrap();
        assert_eq!(r.expected, vec![3.0]);
        assert!(r.passed(), "{r:?}");
    }

    #[test]
    fn error_region_constant_trace() {
        let traces = vec![trace_from(vec![2.5; 11]), trace_from(vec![2.5; 11])];
        let e = estimate_error_region(&traces).unwrap();
        assert_eq!(e.b1_hat, 2.5);
        assert_eq!(e.b1_se, 0.0);
        assert_eq!(e.window, (9, 11));
        assert!(!e.plateau_warning);
    }

    #[test]
    fn plateau_warning_on_trend() {
        let traces = vec![trace_from((0..21).map(|k| 100.0 - 4.0 * k as f64).collect())];
        assert!(estimate_error_region(&traces).unwrap().plateau_warning);
    }

    #[test]
    fn rate_fit_geometric() {
        let series: Vec<f64> = (0..30).map(|k| 0.9f64.powi(k)).collect();
        let s = fit_rate_from_series(&series, 0.0).unwrap();
        assert!((s.rate_hat - 0.9).abs() < 1e-6 * 0.9);
        assert!((s.r_squared - 1.0).abs() < 1e-12);

        let shifted: Vec<f64> = (0..30).map(|k| 0.8f64.powi(k) + 0.1).collect();
        let s = fit_rate_from_series(&shifted, 0.1).unwrap();
        assert!((s.rate_hat - 0.8).abs() < 1e-3);
    }

    #[test]
    fn rate_fit_short_window() {
        let err = fit_rate_from_series(&[1.0, 0.5, 0.25, 0.1], 0.0).unwrap_err();
        assert!(matches!(err, Error::FitWindow { found: 4, needed: 5 }));
        // positive run broken by a non-positive point
        let err = fit_rate_from_series(&[1.0, 0.5, 0.0, 0.4, 0.2], 0.0).unwrap_err();
        assert!(matches!(err, Error::FitWindow { found: 2, .. }));
    }

    #[test]
    fn predicted_rate_values() {
        let b = TrainConfig::bernoulli(64, 10, 3, 1, 1.0, 0.1, 1.0);
        assert!((predicted_rate(&b, 0.4) - (1.0 - 0.25 * 0.1 * 3.0 * 0.4)).abs() < 1e-15);
        let c = TrainConfig::categorical(64, 10, 2, 1, 0.1, 1.0);
        assert!((predicted_rate(&c, 0.4) - 0.98f64.powi(2)).abs() < 1e-15);
    }

    #[test]
    fn relative_improvement_values() {
        let traces = vec![trace_from(vec![4.0, 2.0, 1.0, 1.0])];
        assert_eq!(relative_improvements(&traces, 3).unwrap(), vec![0.5, 0.5, 0.0]);
        assert!(relative_improvements(&traces, 4).is_err());
    }
}
