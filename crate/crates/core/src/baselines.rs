//! Comparison methods: the blocks-of-blocks bootstrap for confidence
//! intervals and the AR-sieve bootstrap for confidence and prediction
//! intervals.

use rand::Rng;

use crate::bootstrap::{run_replicates, validate_run, ConfidenceInterval, RootSample};
use crate::error::{BootError, Result};
use crate::prediction::PredictionInterval;
use crate::rng::StreamRng;
use crate::statistic::{centered_autocovariance, StatisticSpec};
use crate::transform::{ceil_index, mean, SeriesSample};

pub const DEFAULT_EMBED_DIM: usize = 5;
pub const DEFAULT_BLOCK_CONSTANT: f64 = 1.5;
/// Presample discarded before an AR-sieve pseudo-series is recorded.
pub const SIEVE_BURN_IN: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockConfig {
    pub block_size: usize,
    pub embed_dim: usize,
}

impl BlockConfig {
    /// `b = ceil(constant * n^(1/3))` with the default embedding dimension.
    pub fn for_len(n: usize, constant: f64) -> Self {
        Self {
            block_size: ((constant * (n as f64).cbrt()).ceil() as usize).max(1),
            embed_dim: DEFAULT_EMBED_DIM,
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.embed_dim == 0 || self.embed_dim > n {
            return Err(BootError::invalid(format!(
                "embedding dimension {} must lie in 1..={n}",
                self.embed_dim
            )));
        }
        let tuples = n - self.embed_dim + 1;
        if self.block_size == 0 || self.block_size > tuples {
            return Err(BootError::invalid(format!(
                "block size {} must lie in 1..={tuples}",
                self.block_size
            )));
        }
        Ok(())
    }
}

/// A statistic evaluated on a sequence of embedded tuples, each given by
/// its start index into the series.
fn tuple_statistic(spec: &StatisticSpec, y: &[f64], starts: &[usize], k: usize) -> Result<f64> {
    let m = starts.len() as f64;
    let first_mean = || starts.iter().map(|&t| y[t]).sum::<f64>() / m;
    let lagged_cov = |lag: usize, c: f64| -> f64 {
        starts
            .iter()
            .map(|&t| (y[t] - c) * (y[t + lag] - c))
            .sum::<f64>()
            / m
    };
    let check = |lag: usize| -> Result<()> {
        if lag >= k {
            return Err(BootError::invalid(format!(
                "lag {lag} is not covered by tuples of dimension {k}"
            )));
        }
        Ok(())
    };
    match *spec {
        StatisticSpec::Mean => Ok(first_mean()),
        StatisticSpec::Autocovariance(lag) => {
            check(lag)?;
            Ok(lagged_cov(lag, first_mean()))
        }
        StatisticSpec::Autocorrelation(lag) => {
            check(lag)?;
            let c = first_mean();
            let g0 = lagged_cov(0, c);
            if !(g0 > 0.0) {
                return Err(BootError::DegenerateSample(
                    "autocorrelation of a constant series".to_string(),
                ));
            }
            Ok(lagged_cov(lag, c) / g0)
        }
        StatisticSpec::Quantile(p) => {
            let mut v: Vec<f64> = starts.iter().map(|&t| y[t]).collect();
            let idx = ceil_index(v.len(), p) - 1;
            let (_, q, _) = v.select_nth_unstable_by(idx, f64::total_cmp);
            Ok(*q)
        }
        StatisticSpec::Spectral { .. } => Err(BootError::invalid(
            "the block bootstrap does not support spectral statistics",
        )),
    }
}

/// Blocks-of-blocks bootstrap interval.
pub fn block_bootstrap_ci(
    sample: &SeriesSample,
    spec: &StatisticSpec,
    cfg: &BlockConfig,
    replicates: usize,
    alpha: f64,
    seed: u64,
) -> Result<(ConfidenceInterval, RootSample)> {
    validate_run(replicates, alpha)?;
    spec.validate()?;
    let y = sample.values();
    cfg.validate(y.len())?;
    let k = cfg.embed_dim;
    let b = cfg.block_size;
    let m = y.len() - k + 1;
    let original: Vec<usize> = (0..m).collect();
    let theta_hat = tuple_statistic(spec, y, &original, k)?;
    let blocks = m.div_ceil(b);
    let stats = run_replicates(replicates, seed, BLOCK_STREAM, |rng| {
        let mut starts = Vec::with_capacity(blocks * b);
        for _ in 0..blocks {
            let s = rng.gen_range(0..=m - b);
            starts.extend(s..s + b);
        }
        starts.truncate(m);
        tuple_statistic(spec, y, &starts, k)
    })?;
    let roots = RootSample {
        roots: stats.into_iter().map(|t| theta_hat - t).collect(),
        theta_hat,
    };
    Ok((ConfidenceInterval::from_roots(&roots, alpha, "bb"), roots))
}

const BLOCK_STREAM: u64 = 0x4242;
const SIEVE_CI_STREAM: u64 = 0x5343;
const SIEVE_PI_STREAM: u64 = 0x5350;

#[derive(Debug, Clone, PartialEq)]
pub struct ArSieveModel {
    pub order: usize,
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    /// Centred one-step residuals.
    pub residuals: Vec<f64>,
    pub innovation_variance: f64,
}

impl ArSieveModel {
    /// `intercept + sum_i phi_i y[len - i]`.
    pub fn predict_next(&self, y: &[f64]) -> f64 {
        let n = y.len();
        self.intercept
            + self
                .coefficients
                .iter()
                .enumerate()
                .map(|(i, phi)| phi * y[n - 1 - i])
                .sum::<f64>()
    }

    /// Stationary variance implied by the fitted recursion and residual
    /// variance, via the Yule-Walker equations solved backwards.
    pub fn implied_variance(&self) -> f64 {
        let s2 = self.residuals.iter().map(|e| e * e).sum::<f64>() / self.residuals.len() as f64;
        // gamma(0) = s2 / prod(1 - kappa_j^2) over the reflection coefficients.
        reflection_coefficients(&self.coefficients)
            .iter()
            .fold(s2, |acc, k| acc / (1.0 - k * k))
    }

    /// Forward simulation of `len` values after the burn-in, starting at the
    /// process mean and driven by resampled residuals.
    pub fn simulate(&self, len: usize, rng: &mut StreamRng) -> Vec<f64> {
        let p = self.order;
        let level = self.intercept / (1.0 - self.coefficients.iter().sum::<f64>());
        let total = SIEVE_BURN_IN + len;
        let mut x = vec![level; p + total];
        let r = self.residuals.len();
        for t in p..p + total {
            let ar: f64 = self
                .coefficients
                .iter()
                .enumerate()
                .map(|(i, phi)| phi * x[t - 1 - i])
                .sum();
            x[t] = self.intercept + ar + self.residuals[rng.gen_range(0..r)];
        }
        x.split_off(p + SIEVE_BURN_IN)
    }
}

/// Step-down recursion from AR coefficients to partial autocorrelations.
pub(crate) fn reflection_coefficients(phi: &[f64]) -> Vec<f64> {
    let mut a = phi.to_vec();
    let mut out = Vec::with_capacity(a.len());
    while let Some(&k) = a.last() {
        out.push(k);
        let p = a.len();
        let denom = 1.0 - k * k;
        let next: Vec<f64> = (0..p - 1)
            .map(|j| (a[j] + k * a[p - 2 - j]) / denom)
            .collect();
        a = next;
    }
    out
}

pub fn default_max_order(n: usize) -> usize {
    (10.0 * (n as f64).log10()).floor() as usize
}

/// Levinson-Durbin solutions of the Yule-Walker equations for orders
/// `0..=p_max`, stopping early if a reflection coefficient reaches the unit
/// circle. Returns `(coefficients, innovation variance)` per order.
fn yule_walker_path(gamma: &[f64], p_max: usize) -> Vec<(Vec<f64>, f64)> {
    let mut path = vec![(Vec::new(), gamma[0])];
    let mut phi: Vec<f64> = Vec::new();
    let mut v = gamma[0];
    for p in 1..=p_max {
        let acc: f64 = gamma[p]
            - phi
                .iter()
                .enumerate()
                .map(|(j, a)| a * gamma[p - 1 - j])
                .sum::<f64>();
        let k = acc / v;
        if !(k.abs() < 1.0) || !k.is_finite() {
            break;
        }
        let mut next: Vec<f64> = (0..p - 1).map(|j| phi[j] - k * phi[p - 2 - j]).collect();
        next.push(k);
        phi = next;
        v *= 1.0 - k * k;
        if !(v > 0.0) {
            break;
        }
        path.push((phi.clone(), v));
    }
    path
}

fn fit_with(y: &[f64], p_max: usize, fixed: Option<usize>) -> Result<ArSieveModel> {
    let n = y.len();
    if n <= p_max + 1 {
        return Err(BootError::invalid(format!(
            "an AR sieve of order up to {p_max} needs more than {} observations, got {n}",
            p_max + 1
        )));
    }
    let m = mean(y);
    let gamma: Vec<f64> = (0..=p_max)
        .map(|k| centered_autocovariance(y, m, k))
        .collect();
    if !(gamma[0] > 0.0) {
        return Err(BootError::DegenerateSample(
            "AR sieve of a constant series".to_string(),
        ));
    }
    let path = yule_walker_path(&gamma, p_max);
    let order = match fixed {
        Some(p) => p.min(path.len() - 1),
        None => {
            let aic = |(p, (_, v)): (usize, &(Vec<f64>, f64))| n as f64 * v.ln() + 2.0 * p as f64;
            path.iter()
                .enumerate()
                .map(|e| (e.0, aic(e)))
                .fold(
                    (0, f64::INFINITY),
                    |best, cur| if cur.1 < best.1 { cur } else { best },
                )
                .0
        }
    };
    let (coefficients, innovation_variance) = path[order].clone();
    let intercept = m * (1.0 - coefficients.iter().sum::<f64>());
    let mut residuals: Vec<f64> = (order..n)
        .map(|t| {
            let ar: f64 = coefficients
                .iter()
                .enumerate()
                .map(|(i, phi)| phi * y[t - 1 - i])
                .sum();
            y[t] - intercept - ar
        })
        .collect();
    let rm = mean(&residuals);
    residuals.iter_mut().for_each(|e| *e -= rm);
    if residuals
        .iter()
        .all(|&e| e.abs() <= 1e-12 * gamma[0].sqrt())
    {
        return Err(BootError::DegenerateSample(
            "AR sieve residuals have zero variance".to_string(),
        ));
    }
    Ok(ArSieveModel {
        order,
        coefficients,
        intercept,
        residuals,
        innovation_variance,
    })
}

/// Yule-Walker AR fit with the order minimising `n ln(sigma^2_p) + 2 p`
/// over `0..=p_max`.
pub fn fit_ar_sieve(sample: &SeriesSample, p_max: usize) -> Result<ArSieveModel> {
    let cap = default_max_order(sample.len());
    if p_max > cap {
        return Err(BootError::invalid(format!(
            "maximum order {p_max} exceeds the cap {cap} for n = {}",
            sample.len()
        )));
    }
    fit_with(sample.values(), p_max, None)
}

/// Yule-Walker fit at a fixed order (lowered only if the recursion hits the
/// unit circle first).
pub fn fit_ar_order(sample: &SeriesSample, order: usize) -> Result<ArSieveModel> {
    fit_with(sample.values(), order, Some(order))
}

pub fn ar_sieve_ci(
    sample: &SeriesSample,
    spec: &StatisticSpec,
    replicates: usize,
    alpha: f64,
    seed: u64,
) -> Result<(ConfidenceInterval, RootSample)> {
    validate_run(replicates, alpha)?;
    let theta_hat = spec.evaluate(sample.values())?;
    let model = fit_ar_sieve(sample, default_max_order(sample.len()))?;
    let n = sample.len();
    let stats = run_replicates(replicates, seed, SIEVE_CI_STREAM, |rng| {
        spec.evaluate(&model.simulate(n, rng))
    })?;
    let roots = RootSample {
        roots: stats.into_iter().map(|t| theta_hat - t).collect(),
        theta_hat,
    };
    Ok((
        ConfidenceInterval::from_roots(&roots, alpha, "ar-sieve"),
        roots,
    ))
}

/// Forward AR-sieve prediction interval for the next observation.
pub fn ar_sieve_pi(
    sample: &SeriesSample,
    replicates: usize,
    alpha: f64,
    seed: u64,
) -> Result<(PredictionInterval, RootSample)> {
    validate_run(replicates, alpha)?;
    let y = sample.values();
    let model = fit_ar_sieve(sample, default_max_order(y.len()))?;
    let point = model.predict_next(y);
    let r = model.residuals.len();
    let roots = run_replicates(replicates, seed, SIEVE_PI_STREAM, |rng| {
        let ystar = SeriesSample::new(model.simulate(y.len(), rng))?;
        let refit = fit_ar_order(&ystar, model.order)?;
        let future = point + model.residuals[rng.gen_range(0..r)];
        Ok(future - refit.predict_next(y))
    })?;
    let roots = RootSample {
        roots,
        theta_hat: point,
    };
    Ok((
        PredictionInterval::from_roots(&roots, alpha, "ar-sieve"),
        roots,
    ))
}
