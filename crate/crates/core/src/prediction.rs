//! One-step-ahead prediction intervals from MF / LMF predictive roots.
//!
//! Every replicate regenerates a pseudo-series, refits the whole transform
//! chain on it and predicts the next point from the refitted chain while
//! conditioning on the original latent series. The root is the gap between
//! a draw of the next point from the original conditional law and that
//! refitted prediction.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::bootstrap::{
    method_label, run_replicates, validate_run, PreparedTransform, RootSample, TransformOverrides,
    Variant,
};
use crate::covariance::CholeskyFactor;
use crate::error::{BootError, Result};
use crate::rng::{self, StreamRng};
use crate::transform::{CdfEstimate, CdfKind, InverseMap, SeriesSample};

/// Smallest series length accepted by [`run_pi`].
pub const MIN_PREDICTION_LEN: usize = 50;
/// Smallest Monte Carlo size for the conditional mean or median.
pub const MIN_DRAWS: usize = 500;
pub const DEFAULT_DRAWS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Loss {
    /// Conditional mean.
    L2,
    /// Conditional median.
    L1,
}

impl fmt::Display for Loss {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Loss::L2 => "l2",
            Loss::L1 => "l1",
        })
    }
}

impl FromStr for Loss {
    type Err = BootError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l2" => Ok(Loss::L2),
            "l1" => Ok(Loss::L1),
            _ => Err(BootError::invalid(format!("unknown predictor '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PredictorKind {
    pub loss: Loss,
    /// Monte Carlo draws used for the conditional mean or median.
    pub draws: usize,
}

impl PredictorKind {
    pub fn new(loss: Loss, draws: usize) -> Result<Self> {
        if draws < MIN_DRAWS {
            return Err(BootError::invalid(format!(
                "at least {MIN_DRAWS} Monte Carlo draws are required, got {draws}"
            )));
        }
        Ok(Self { loss, draws })
    }

    pub fn l2() -> Self {
        Self {
            loss: Loss::L2,
            draws: DEFAULT_DRAWS,
        }
    }

    pub fn l1() -> Self {
        Self {
            loss: Loss::L1,
            draws: DEFAULT_DRAWS,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionConfig {
    pub variant: Variant,
    pub cdf_kind: CdfKind,
    pub predictor: PredictorKind,
    pub replicates: usize,
    pub alpha: f64,
    pub seed: u64,
    pub overrides: TransformOverrides,
}

impl PredictionConfig {
    pub fn new(
        variant: Variant,
        cdf_kind: CdfKind,
        predictor: PredictorKind,
        replicates: usize,
        alpha: f64,
        seed: u64,
    ) -> Self {
        Self {
            variant,
            cdf_kind,
            predictor,
            replicates,
            alpha,
            seed,
            overrides: TransformOverrides::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        validate_run(self.replicates, self.alpha)?;
        PredictorKind::new(self.predictor.loss, self.predictor.draws).map(|_| ())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PredictionInterval {
    pub point_prediction: f64,
    pub lower: f64,
    pub upper: f64,
    pub alpha: f64,
    pub method: String,
}

impl PredictionInterval {
    /// `point + (R^{-1}(alpha/2), R^{-1}(1 - alpha/2))` for predictive roots `R`.
    pub fn from_roots(roots: &RootSample, alpha: f64, method: impl Into<String>) -> Self {
        let (lower, upper) = roots.interval(roots.theta_hat, alpha);
        Self {
            point_prediction: roots.theta_hat,
            lower,
            upper,
            alpha,
            method: method.into(),
        }
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn contains(&self, y: f64) -> bool {
        self.lower < y && y < self.upper
    }
}

/// Row `n` of an `(n + 1)`-dimensional factor applied to `(xi, xi_next)`.
pub fn next_latent(factor: &CholeskyFactor, xi: &[f64], xi_next: f64) -> Result<f64> {
    let (mean, sd) = factor.last_row_conditional(xi)?;
    Ok(mean + sd * xi_next)
}

/// Next latent value built from the sample's own residuals and `xi_next`.
pub fn conditional_next_z_mf(prepared: &PreparedTransform, xi_next: f64) -> Result<f64> {
    next_latent(prepared.factor(), prepared.residuals(), xi_next)
}

/// Latent conditional law `(mean, sd)` of the next point given `z`, using an
/// `(n + 1)`-dimensional factor.
fn conditional_law(factor: &CholeskyFactor, z: &[f64]) -> Result<(f64, f64)> {
    if factor.dim() != z.len() + 1 {
        return Err(BootError::invalid(format!(
            "factor dimension {} does not extend a series of length {}",
            factor.dim(),
            z.len()
        )));
    }
    let w = factor.solve_leading(z)?;
    factor.last_row_conditional(&w)
}

fn summarize(mut values: Vec<f64>, loss: Loss) -> f64 {
    match loss {
        Loss::L2 => values.iter().sum::<f64>() / values.len() as f64,
        Loss::L1 => {
            let m = values.len();
            values.sort_unstable_by(f64::total_cmp);
            if m % 2 == 1 {
                values[m / 2]
            } else {
                0.5 * (values[m / 2 - 1] + values[m / 2])
            }
        }
    }
}

fn mc_predictor(
    map: &InverseMap,
    cond_mean: f64,
    cond_sd: f64,
    draws: usize,
    loss: Loss,
    rng: &mut StreamRng,
) -> Result<f64> {
    if !(cond_sd > 0.0 && cond_sd.is_finite()) || !cond_mean.is_finite() {
        return Err(BootError::invalid(format!(
            "conditional law needs finite mean and positive sd, got ({cond_mean}, {cond_sd})"
        )));
    }
    if draws == 0 {
        return Err(BootError::invalid(
            "at least one Monte Carlo draw is required",
        ));
    }
    let zs: Vec<f64> = (0..draws)
        .map(|_| cond_mean + cond_sd * rng.sample::<f64, _>(StandardNormal))
        .collect();
    Ok(summarize(map.apply_many(&zs), loss))
}

/// Monte Carlo conditional mean of `F^{-1}(Phi(Z))`, `Z ~ N(cond_mean, cond_sd^2)`.
pub fn l2_predictor(
    cdf: &CdfEstimate,
    cond_mean: f64,
    cond_sd: f64,
    draws: usize,
    seed: u64,
) -> Result<f64> {
    mc_predictor(
        &InverseMap::exact(cdf),
        cond_mean,
        cond_sd,
        draws,
        Loss::L2,
        &mut rng::stream(seed, &[]),
    )
}

/// Monte Carlo conditional median from the same draws as [`l2_predictor`].
pub fn l1_predictor(
    cdf: &CdfEstimate,
    cond_mean: f64,
    cond_sd: f64,
    draws: usize,
    seed: u64,
) -> Result<f64> {
    mc_predictor(
        &InverseMap::exact(cdf),
        cond_mean,
        cond_sd,
        draws,
        Loss::L1,
        &mut rng::stream(seed, &[]),
    )
}

/// Predictor under the residual-resampling law: the average (or median)
/// over the residual atoms, computed exactly rather than by redrawing.
fn atom_predictor(
    map: &InverseMap,
    cond_mean: f64,
    cond_sd: f64,
    atoms: &[f64],
    loss: Loss,
) -> f64 {
    let zs: Vec<f64> = atoms.iter().map(|x| cond_mean + cond_sd * x).collect();
    summarize(map.apply_many(&zs), loss)
}

fn point_predictor(
    map: &InverseMap,
    law: (f64, f64),
    atoms: &[f64],
    cfg: &PredictionConfig,
    rng: &mut StreamRng,
) -> Result<f64> {
    let (mean, sd) = law;
    match cfg.variant {
        Variant::Mf => Ok(atom_predictor(map, mean, sd, atoms, cfg.predictor.loss)),
        Variant::Lmf => mc_predictor(map, mean, sd, cfg.predictor.draws, cfg.predictor.loss, rng),
    }
}

const PI_STREAM: u64 = 0x5049;
const POINT_STREAM: u64 = 0x5050;

/// Predictive roots `Y*_{n+1} - Yhat*_{n+1}` centred at the point prediction.
pub fn predictive_roots(sample: &SeriesSample, cfg: &PredictionConfig) -> Result<RootSample> {
    cfg.validate()?;
    let n = sample.len();
    if n < MIN_PREDICTION_LEN {
        return Err(BootError::invalid(format!(
            "prediction needs at least {MIN_PREDICTION_LEN} observations, got {n}"
        )));
    }
    let prepared = PreparedTransform::new(sample, cfg.cdf_kind, &cfg.overrides, true)?;
    let xi = prepared.residuals();
    let law = prepared.factor().last_row_conditional(xi)?;
    let point = point_predictor(
        prepared.inverse(),
        law,
        xi,
        cfg,
        &mut rng::stream(cfg.seed, &[POINT_STREAM]),
    )?;

    let z = prepared.latent();
    let roots = run_replicates(cfg.replicates, cfg.seed, PI_STREAM, |rng| {
        let ystar = SeriesSample::new(prepared.generate(cfg.variant, rng))?;
        let xi_next = match cfg.variant {
            Variant::Mf => xi[rng.gen_range(0..n)],
            Variant::Lmf => rng.sample(StandardNormal),
        };
        let y_next = prepared.inverse().apply(law.0 + law.1 * xi_next);

        let refit = PreparedTransform::refit(&ystar, cfg.cdf_kind, &cfg.overrides, true)?;
        let law_star = conditional_law(refit.factor(), z)?;
        let pred = point_predictor(refit.inverse(), law_star, refit.residuals(), cfg, rng)?;
        Ok(y_next - pred)
    })?;
    Ok(RootSample {
        roots,
        theta_hat: point,
    })
}

/// Equal-tailed `1 - alpha` prediction interval for the next observation.
pub fn run_pi(
    sample: &SeriesSample,
    cfg: &PredictionConfig,
) -> Result<(PredictionInterval, RootSample)> {
    let roots = predictive_roots(sample, cfg)?;
    let pi =
        PredictionInterval::from_roots(&roots, cfg.alpha, method_label(cfg.variant, cfg.cdf_kind));
    Ok((pi, roots))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariance::{cholesky_lower, conditional_gaussian, ToeplitzCovariance};
    use crate::normal;
    use rand_distr::Distribution;

    fn ar1_factor(n: usize, phi: f64) -> (ToeplitzCovariance, CholeskyFactor) {
        let row: Vec<f64> = (0..n)
            .map(|k| phi.powi(k as i32) / (1.0 - phi * phi))
            .collect();
        let m = ToeplitzCovariance::from_first_row(row).unwrap();
        let l = cholesky_lower(&m).unwrap();
        (m, l)
    }

    #[test]
    fn identity_factor_passes_innovation_through() {
        let m = ToeplitzCovariance::from_first_row(vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let l = cholesky_lower(&m).unwrap();
        assert_eq!(next_latent(&l, &[0.3, -1.0, 2.0], 0.42).unwrap(), 0.42);
    }

    #[test]
    fn last_row_matches_schur_mean_and_is_linear() {
        let (m, l) = ar1_factor(9, 0.8);
        let z = [0.1, -0.4, 0.9, 1.3, 0.2, -0.7, 0.5, 1.1];
        let xi = l.solve_leading(&z).unwrap();
        let (mean, _) = conditional_gaussian(&m, &z).unwrap();
        assert!((next_latent(&l, &xi, 0.0).unwrap() - mean).abs() < 1e-9);
        // AR(1): the conditional mean is phi * z_n.
        assert!((mean - 0.8 * 1.1).abs() < 1e-9);
        let (a, b) = (
            next_latent(&l, &xi, 1.7).unwrap(),
            next_latent(&l, &xi, -0.4).unwrap(),
        );
        assert!((a - b - l.get(8, 8) * 2.1).abs() < 1e-12);
    }

    #[test]
    fn known_gaussian_conditional_law() {
        // With the true AR(1) matrix, draws of the next latent value follow
        // N(phi z_n, 1); compare the empirical CDF against it.
        let (_, l) = ar1_factor(31, 0.5);
        let mut r = rng::stream(5, &[]);
        let z: Vec<f64> = (0..30).map(|_| StandardNormal.sample(&mut r)).collect();
        let xi = l.solve_leading(&z).unwrap();
        let mut draws: Vec<f64> = (0..10_000)
            .map(|_| next_latent(&l, &xi, StandardNormal.sample(&mut r)).unwrap())
            .collect();
        draws.sort_unstable_by(f64::total_cmp);
        let m = draws.len() as f64;
        let ks = draws
            .iter()
            .enumerate()
            .map(|(i, &d)| {
                let f = normal::cdf(d - 0.5 * z[29]);
                (f - i as f64 / m).abs().max(((i + 1) as f64 / m - f).abs())
            })
            .fold(0.0, f64::max);
        assert!(ks < 0.03, "ks = {ks}");
    }

    fn near_normal_cdf() -> CdfEstimate {
        let m = 20_000;
        let v: Vec<f64> = (0..m)
            .map(|i| normal::quantile((i as f64 + 0.5) / m as f64))
            .collect();
        CdfEstimate::kernel(&v, 1e-3).unwrap()
    }

    #[test]
    fn gaussian_identity_predictor() {
        let cdf = near_normal_cdf();
        let (mu, sd, draws) = (0.7, 0.6, 4000);
        let p = l2_predictor(&cdf, mu, sd, draws, 3).unwrap();
        assert!(
            (p - mu).abs() < 3.0 * sd / (draws as f64).sqrt() + 1e-3,
            "{p}"
        );
        let med = l1_predictor(&cdf, mu, sd, draws, 3).unwrap();
        assert!(
            (med - mu).abs() < 4.0 * sd / (draws as f64).sqrt() + 1e-3,
            "{med}"
        );
    }

    #[test]
    fn degenerate_spread_returns_point_inverse() {
        let cdf = near_normal_cdf();
        let p = l2_predictor(&cdf, 0.3, 1e-12, 500, 1).unwrap();
        assert!((p - cdf.inverse_pit(0.3)).abs() < 1e-6);
        assert!(l2_predictor(&cdf, 0.3, 0.0, 500, 1).is_err());
    }

    #[test]
    fn symmetric_sample_centres_on_median() {
        let v: Vec<f64> = (-50..=50).map(|i| i as f64 / 10.0).collect();
        let cdf = CdfEstimate::kernel(&v, 0.3).unwrap();
        let small = l2_predictor(&cdf, 0.0, 1.0, 500, 2).unwrap().abs();
        let large = (0..8)
            .map(|s| l2_predictor(&cdf, 0.0, 1.0, 20_000, s).unwrap())
            .sum::<f64>()
            .abs()
            / 8.0;
        assert!(large < 0.05 && large < small + 0.02, "{small} {large}");
    }

    #[test]
    fn config_checks() {
        assert!(PredictorKind::new(Loss::L2, 499).is_err());
        let s = SeriesSample::new((0..40).map(|i| (i as f64).sin()).collect()).unwrap();
        let cfg = PredictionConfig::new(
            Variant::Mf,
            CdfKind::Kernel,
            PredictorKind::l2(),
            100,
            0.05,
            1,
        );
        assert!(matches!(run_pi(&s, &cfg), Err(BootError::InvalidInput(_))));
        assert_eq!("l1".parse::<Loss>().unwrap(), Loss::L1);
    }

    #[test]
    fn run_pi_is_deterministic() {
        let mut r = rng::stream(8, &[]);
        let s =
            SeriesSample::new((0..80).map(|_| StandardNormal.sample(&mut r)).collect()).unwrap();
        for variant in [Variant::Mf, Variant::Lmf] {
            let cfg =
                PredictionConfig::new(variant, CdfKind::Kernel, PredictorKind::l2(), 100, 0.1, 4);
            let (a, roots) = run_pi(&s, &cfg).unwrap();
            let (b, _) = run_pi(&s, &cfg).unwrap();
            assert_eq!(a, b);
            assert!(a.lower <= a.upper);
            let (lo, hi) = roots.interval(a.point_prediction, 0.05);
            assert!(lo <= a.lower && a.upper <= hi);
        }
    }
}
