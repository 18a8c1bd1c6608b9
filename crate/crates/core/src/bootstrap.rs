//! Model-free (MF) and limit model-free (LMF) bootstrap confidence
//! intervals.
//!
//! The transform chain (CDF estimate, latent series, tapered covariance and
//! its Cholesky factor, whitened residuals) is estimated once per sample in
//! [`PreparedTransform`] and shared read-only by every replicate.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::covariance::{
    cholesky_lower, default_taper_bandwidth, pd_correct, CholeskyFactor, TaperConfig,
    ToeplitzCovariance,
};
use crate::error::{BootError, Result};
use crate::rng::{self, StreamRng};
use crate::statistic::StatisticSpec;
use crate::transform::{
    bandwidth_rule, ceil_index, pit_values, pit_values_mapped, CdfEstimate, CdfKind, InverseMap,
    SeriesSample, ThresholdedNormal, TransformedSeries,
};

/// Minimum number of bootstrap replicates accepted by the engines.
pub const MIN_REPLICATES: usize = 100;
/// Attempts per replicate before it is counted as failed.
pub const MAX_REPLICATE_ATTEMPTS: usize = 6;
/// Failed replicates tolerated, as a fraction of the requested count.
pub const FAILURE_BUDGET: f64 = 0.05;
/// Taper bandwidth used when the series is too short for the selection rule.
pub const SHORT_SERIES_TAPER_BANDWIDTH: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Resample the whitened residuals with replacement.
    Mf,
    /// Draw residuals from N(0, 1).
    Lmf,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Mf => "mf",
            Variant::Lmf => "lmf",
        })
    }
}

impl FromStr for Variant {
    type Err = BootError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mf" => Ok(Variant::Mf),
            "lmf" => Ok(Variant::Lmf),
            _ => Err(BootError::invalid(format!("unknown variant '{s}'"))),
        }
    }
}

/// Optional replacements for the data-driven tuning choices.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TransformOverrides {
    pub taper_bandwidth: Option<f64>,
    pub threshold: Option<f64>,
    pub kernel_bandwidth: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapConfig {
    pub variant: Variant,
    pub cdf_kind: CdfKind,
    pub replicates: usize,
    pub alpha: f64,
    pub seed: u64,
    pub overrides: TransformOverrides,
}

impl BootstrapConfig {
    pub fn new(
        variant: Variant,
        cdf_kind: CdfKind,
        replicates: usize,
        alpha: f64,
        seed: u64,
    ) -> Self {
        Self {
            variant,
            cdf_kind,
            replicates,
            alpha,
            seed,
            overrides: TransformOverrides::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        validate_run(self.replicates, self.alpha)
    }
}

pub(crate) fn validate_run(replicates: usize, alpha: f64) -> Result<()> {
    if replicates < MIN_REPLICATES {
        return Err(BootError::invalid(format!(
            "at least {MIN_REPLICATES} replicates are required, got {replicates}"
        )));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(BootError::invalid(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )));
    }
    Ok(())
}

/// The estimated transform chain of one sample.
#[derive(Debug, Clone)]
pub struct PreparedTransform {
    cdf: CdfEstimate,
    inverse: InverseMap,
    threshold: ThresholdedNormal,
    transformed: TransformedSeries,
    taper: TaperConfig,
    covariance: ToeplitzCovariance,
    factor: CholeskyFactor,
}

impl PreparedTransform {
    /// Fit the chain on `sample`. With `extend` the covariance estimate has
    /// dimension `n + 1` (for one-step prediction) and the residuals are
    /// whitened with its leading `n x n` block.
    pub fn new(
        sample: &SeriesSample,
        kind: CdfKind,
        overrides: &TransformOverrides,
        extend: bool,
    ) -> Result<Self> {
        Self::build(sample, kind, overrides, extend, false)
    }

    /// As [`PreparedTransform::new`], but the forward transform is read off
    /// the interpolation table instead of being evaluated exactly. Used for
    /// refits inside bootstrap replicates.
    pub fn refit(
        sample: &SeriesSample,
        kind: CdfKind,
        overrides: &TransformOverrides,
        extend: bool,
    ) -> Result<Self> {
        Self::build(sample, kind, overrides, extend, true)
    }

    fn build(
        sample: &SeriesSample,
        kind: CdfKind,
        overrides: &TransformOverrides,
        extend: bool,
        fast_forward: bool,
    ) -> Result<Self> {
        let y = sample.values();
        let n = y.len();
        let cdf = match (kind, overrides.kernel_bandwidth) {
            (CdfKind::Empirical, _) => CdfEstimate::empirical(y)?,
            (CdfKind::Kernel, Some(h)) => CdfEstimate::kernel(y, h)?,
            (CdfKind::Kernel, None) => CdfEstimate::kernel(y, bandwidth_rule(y)?)?,
        };
        let threshold = match overrides.threshold {
            Some(c) => ThresholdedNormal::new(c)?,
            None => ThresholdedNormal::for_len(n),
        };
        let inverse = InverseMap::new(&cdf);
        let (u, z) = if fast_forward {
            pit_values_mapped(y, &inverse, threshold.threshold())?
        } else {
            pit_values(y, &cdf, threshold.threshold())?
        };
        let taper = TaperConfig::new(match overrides.taper_bandwidth {
            Some(l) => l,
            None => select_taper_bandwidth(&z)?,
        })?;
        let dim = if extend { n + 1 } else { n };
        let covariance = pd_correct(&ToeplitzCovariance::tapered_uncorrected(&z, &taper, dim)?)?;
        let factor = cholesky_lower(&covariance)?;
        let xi = factor.solve_leading(&z)?;
        Ok(Self {
            cdf,
            inverse,
            threshold,
            transformed: TransformedSeries { u, z, xi: Some(xi) },
            taper,
            covariance,
            factor,
        })
    }

    pub fn len(&self) -> usize {
        self.transformed.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transformed.is_empty()
    }

    pub fn cdf(&self) -> &CdfEstimate {
        &self.cdf
    }

    pub fn inverse(&self) -> &InverseMap {
        &self.inverse
    }

    pub fn threshold(&self) -> ThresholdedNormal {
        self.threshold
    }

    pub fn transformed(&self) -> &TransformedSeries {
        &self.transformed
    }

    pub fn latent(&self) -> &[f64] {
        &self.transformed.z
    }

    pub fn residuals(&self) -> &[f64] {
        self.transformed
            .xi
            .as_deref()
            .expect("prepared series is whitened")
    }

    pub fn taper(&self) -> TaperConfig {
        self.taper
    }

    pub fn covariance(&self) -> &ToeplitzCovariance {
        &self.covariance
    }

    /// Cholesky factor of the covariance estimate (dimension `n` or `n + 1`).
    pub fn factor(&self) -> &CholeskyFactor {
        &self.factor
    }

    /// Draw a pseudo-series `Y*` of length `n`.
    pub fn generate(&self, variant: Variant, rng: &mut StreamRng) -> Vec<f64> {
        let z = self.generate_latent(variant, rng);
        z.iter().map(|&v| self.inverse.apply(v)).collect()
    }

    /// Draw the latent pseudo-series `Z* = L xi*` of length `n`.
    pub fn generate_latent(&self, variant: Variant, rng: &mut StreamRng) -> Vec<f64> {
        let n = self.len();
        let xi = self.residuals();
        let draws: Vec<f64> = match variant {
            Variant::Mf => (0..n).map(|_| xi[rng.gen_range(0..n)]).collect(),
            Variant::Lmf => (0..n).map(|_| rng.sample(StandardNormal)).collect(),
        };
        let mut z = vec![0.0; n];
        // Rows 0..n of the factor are the n x n factor when extended.
        for (i, out) in z.iter_mut().enumerate() {
            let (j0, row) = self.factor.row(i);
            *out = row.iter().zip(&draws[j0..=i]).map(|(l, v)| l * v).sum();
        }
        z
    }
}

/// Data-driven taper bandwidth, or the short-series fallback below 20 points.
pub(crate) fn select_taper_bandwidth(z: &[f64]) -> Result<f64> {
    if z.len() < 20 {
        Ok(SHORT_SERIES_TAPER_BANDWIDTH)
    } else {
        default_taper_bandwidth(z)
    }
}

pub fn mf_generate(prepared: &PreparedTransform, rng: &mut StreamRng) -> Vec<f64> {
    prepared.generate(Variant::Mf, rng)
}

pub fn lmf_generate(prepared: &PreparedTransform, rng: &mut StreamRng) -> Vec<f64> {
    prepared.generate(Variant::Lmf, rng)
}

/// Bootstrap roots `theta_hat - theta*` (or predictive roots) in replicate order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RootSample {
    pub roots: Vec<f64>,
    pub theta_hat: f64,
}

impl RootSample {
    /// Lower quantile `inf { r : R(r) >= q }`: the `ceil(B q)`-th order statistic.
    pub fn quantile(&self, q: f64) -> f64 {
        let mut sorted = self.roots.clone();
        sorted.sort_unstable_by(f64::total_cmp);
        order_statistic(&sorted, q)
    }

    /// Equal-tailed interval `(center + R^{-1}(alpha/2), center + R^{-1}(1 - alpha/2))`.
    pub fn interval(&self, center: f64, alpha: f64) -> (f64, f64) {
        let mut sorted = self.roots.clone();
        sorted.sort_unstable_by(f64::total_cmp);
        (
            center + order_statistic(&sorted, alpha / 2.0),
            center + order_statistic(&sorted, 1.0 - alpha / 2.0),
        )
    }
}

pub(crate) fn order_statistic(sorted: &[f64], q: f64) -> f64 {
    sorted[ceil_index(sorted.len(), q) - 1]
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConfidenceInterval {
    pub lower: f64,
    pub upper: f64,
    pub alpha: f64,
    pub theta_hat: f64,
    pub method: String,
}

impl ConfidenceInterval {
    pub fn from_roots(roots: &RootSample, alpha: f64, method: impl Into<String>) -> Self {
        let (lower, upper) = roots.interval(roots.theta_hat, alpha);
        Self {
            lower,
            upper,
            alpha,
            theta_hat: roots.theta_hat,
            method: method.into(),
        }
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    /// Open-interval containment.
    pub fn contains(&self, x: f64) -> bool {
        self.lower < x && x < self.upper
    }
}

/// Run `replicate` for every index in `0..count`, each with its own stream
/// derived from `(seed, tag, index, attempt)`. Numerical failures are retried
/// with a fresh stream; invalid-input errors abort at once.
pub(crate) fn run_replicates<F>(count: usize, seed: u64, tag: u64, replicate: F) -> Result<Vec<f64>>
where
    F: Fn(&mut StreamRng) -> Result<f64> + Sync,
{
    let outcomes: Vec<Result<Option<f64>>> = (0..count)
        .into_par_iter()
        .map(|b| {
            for attempt in 0..MAX_REPLICATE_ATTEMPTS {
                let mut rng = rng::stream(seed, &[tag, b as u64, attempt as u64]);
                match replicate(&mut rng) {
                    Ok(v) if v.is_finite() => return Ok(Some(v)),
                    Ok(_) => {}
                    Err(e) if e.is_numerical() => {}
                    Err(e) => return Err(e),
                }
            }
            Ok(None)
        })
        .collect();
    let mut values = Vec::with_capacity(count);
    let mut failed = 0;
    for o in outcomes {
        match o? {
            Some(v) => values.push(v),
            None => failed += 1,
        }
    }
    let budget = (FAILURE_BUDGET * count as f64).floor() as usize;
    if failed > budget {
        return Err(BootError::ReplicateFailure {
            failed,
            attempted: count,
            budget,
        });
    }
    Ok(values)
}

const CI_STREAM: u64 = 0x4349;

/// Bootstrap roots for `spec` on `sample` (MF or LMF).
pub fn bootstrap_roots(
    sample: &SeriesSample,
    spec: &StatisticSpec,
    cfg: &BootstrapConfig,
) -> Result<RootSample> {
    cfg.validate()?;
    let theta_hat = spec.evaluate(sample.values())?;
    let prepared = PreparedTransform::new(sample, cfg.cdf_kind, &cfg.overrides, false)?;
    bootstrap_roots_prepared(&prepared, theta_hat, spec, cfg)
}

/// As [`bootstrap_roots`] for a transform chain fitted beforehand, so one
/// fit can serve several statistics or variants.
pub fn bootstrap_roots_prepared(
    prepared: &PreparedTransform,
    theta_hat: f64,
    spec: &StatisticSpec,
    cfg: &BootstrapConfig,
) -> Result<RootSample> {
    cfg.validate()?;
    let replicates = run_replicates(cfg.replicates, cfg.seed, CI_STREAM, |rng| {
        let ystar = prepared.generate(cfg.variant, rng);
        spec.evaluate(&ystar)
    })?;
    Ok(RootSample {
        roots: replicates.into_iter().map(|t| theta_hat - t).collect(),
        theta_hat,
    })
}

pub fn method_label(variant: Variant, kind: CdfKind) -> String {
    let k = match kind {
        CdfKind::Empirical => "emp",
        CdfKind::Kernel => "ker",
    };
    format!("{variant}-{k}")
}

/// Equal-tailed `1 - alpha` bootstrap confidence interval.
pub fn run_ci(
    sample: &SeriesSample,
    spec: &StatisticSpec,
    cfg: &BootstrapConfig,
) -> Result<(ConfidenceInterval, RootSample)> {
    let roots = bootstrap_roots(sample, spec, cfg)?;
    let ci =
        ConfidenceInterval::from_roots(&roots, cfg.alpha, method_label(cfg.variant, cfg.cdf_kind));
    Ok((ci, roots))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::Distribution;

    fn normal_series(n: usize, seed: u64) -> SeriesSample {
        let mut r = rng::stream(seed, &[]);
        SeriesSample::new((0..n).map(|_| StandardNormal.sample(&mut r)).collect()).unwrap()
    }

    #[test]
    fn order_statistic_indexing() {
        let roots = RootSample {
            roots: (1..=100).map(|v| v as f64).collect(),
            theta_hat: 0.0,
        };
        // ceil(100 * 0.025) = 3 and ceil(100 * 0.975) = 98.
        assert_eq!(roots.interval(0.0, 0.05), (3.0, 98.0));
        assert_eq!(roots.quantile(0.5), 50.0);
    }

    #[test]
    fn zero_roots_give_zero_width_interval() {
        let roots = RootSample {
            roots: vec![0.0; 200],
            theta_hat: 1.5,
        };
        let ci = ConfidenceInterval::from_roots(&roots, 0.05, "x");
        assert_eq!((ci.lower, ci.upper), (1.5, 1.5));
    }

    #[test]
    fn config_validation() {
        assert!(
            BootstrapConfig::new(Variant::Mf, CdfKind::Kernel, 99, 0.05, 1)
                .validate()
                .is_err()
        );
        assert!(
            BootstrapConfig::new(Variant::Mf, CdfKind::Kernel, 100, 1.0, 1)
                .validate()
                .is_err()
        );
        assert!(
            BootstrapConfig::new(Variant::Mf, CdfKind::Kernel, 100, 0.1, 1)
                .validate()
                .is_ok()
        );
    }

    #[test]
    fn constant_residuals_give_deterministic_latent() {
        let s = normal_series(60, 3);
        let mut p = PreparedTransform::new(
            &s,
            CdfKind::Empirical,
            &TransformOverrides::default(),
            false,
        )
        .unwrap();
        p.transformed.xi = Some(vec![0.7; 60]);
        let a = p.generate_latent(Variant::Mf, &mut rng::stream(1, &[]));
        let b = p.generate_latent(Variant::Mf, &mut rng::stream(2, &[]));
        let expect = crate::covariance::colour(&[0.7; 60], p.factor()).unwrap();
        assert_eq!(a, b);
        for (x, y) in a.iter().zip(&expect) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn empirical_pseudo_series_uses_sample_values() {
        let s = normal_series(80, 4);
        let p = PreparedTransform::new(
            &s,
            CdfKind::Empirical,
            &TransformOverrides::default(),
            false,
        )
        .unwrap();
        let ystar = mf_generate(&p, &mut rng::stream(9, &[]));
        assert_eq!(ystar.len(), 80);
        assert!(ystar.iter().all(|v| s.values().contains(v)));
    }

    #[test]
    fn lmf_is_deterministic_and_handles_two_points() {
        let s = normal_series(50, 5);
        let p = PreparedTransform::new(&s, CdfKind::Kernel, &TransformOverrides::default(), false)
            .unwrap();
        let a = lmf_generate(&p, &mut rng::stream(11, &[]));
        let b = lmf_generate(&p, &mut rng::stream(11, &[]));
        assert_eq!(a, b);

        let tiny = SeriesSample::new(vec![0.3, 1.2]).unwrap();
        let p = PreparedTransform::new(
            &tiny,
            CdfKind::Kernel,
            &TransformOverrides::default(),
            false,
        )
        .unwrap();
        assert_eq!(lmf_generate(&p, &mut rng::stream(1, &[])).len(), 2);
    }

    #[test]
    fn run_ci_is_deterministic_and_ordered() {
        let s = normal_series(150, 6);
        let cfg = BootstrapConfig::new(Variant::Mf, CdfKind::Kernel, 200, 0.05, 77);
        let (a, roots) = run_ci(&s, &StatisticSpec::Mean, &cfg).unwrap();
        let (b, _) = run_ci(&s, &StatisticSpec::Mean, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(roots.roots.len(), 200);
        assert!(a.lower <= a.upper);
        let med = a.theta_hat + roots.quantile(0.5);
        assert!(a.lower <= med && med <= a.upper);
        let (lo90, hi90) = roots.interval(a.theta_hat, 0.10);
        assert!(a.lower <= lo90 && hi90 <= a.upper);
    }

    #[test]
    fn failing_replicates_exhaust_budget() {
        let err = run_replicates(100, 1, 0, |_| Err(BootError::DegenerateSample("x".into())))
            .unwrap_err();
        assert!(matches!(
            err,
            BootError::ReplicateFailure { failed: 100, .. }
        ));
        let err = run_replicates(100, 1, 0, |_| Err(BootError::invalid("bad"))).unwrap_err();
        assert!(matches!(err, BootError::InvalidInput(_)));
        // Index-dependent failures within budget are dropped.
        let ok = run_replicates(100, 1, 0, |rng| {
            if rng.gen::<f64>() < 0.01 {
                Err(BootError::DegenerateSample("x".into()))
            } else {
                Ok(1.0)
            }
        })
        .unwrap();
        assert_eq!(ok.len(), 100);
    }
}
