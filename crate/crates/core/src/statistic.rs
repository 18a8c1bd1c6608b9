//! Statistics the bootstrap can target.

use std::cell::RefCell;
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{BootError, Result};
use crate::transform::{ceil_index, mean, SeriesSample};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StatisticSpec {
    Mean,
    Autocovariance(usize),
    Autocorrelation(usize),
    Quantile(f64),
    /// Kernel-smoothed periodogram at frequency `omega`; `bandwidth` in
    /// radians defaults to `n^(-1/5)`.
    Spectral {
        omega: f64,
        bandwidth: Option<f64>,
    },
}

impl StatisticSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            StatisticSpec::Quantile(p) if !(p > 0.0 && p < 1.0) => Err(BootError::invalid(
                format!("quantile level must lie in (0, 1), got {p}"),
            )),
            StatisticSpec::Spectral { omega, bandwidth } => {
                if !(-PI..=PI).contains(&omega) {
                    return Err(BootError::invalid(format!(
                        "frequency must lie in [-pi, pi], got {omega}"
                    )));
                }
                match bandwidth {
                    Some(h) if !(h > 0.0) => Err(BootError::invalid(format!(
                        "spectral bandwidth must be positive, got {h}"
                    ))),
                    _ => Ok(()),
                }
            }
            _ => Ok(()),
        }
    }

    pub fn evaluate(&self, y: &[f64]) -> Result<f64> {
        self.validate()?;
        let n = y.len();
        if n < 2 {
            return Err(BootError::invalid(
                "statistics need at least 2 observations",
            ));
        }
        match *self {
            StatisticSpec::Mean => Ok(mean(y)),
            StatisticSpec::Autocovariance(k) => {
                check_lag(k, n)?;
                Ok(centered_autocovariance(y, mean(y), k))
            }
            StatisticSpec::Autocorrelation(k) => {
                check_lag(k, n)?;
                let m = mean(y);
                let g0 = centered_autocovariance(y, m, 0);
                if !(g0 > 0.0) {
                    return Err(BootError::DegenerateSample(
                        "autocorrelation of a constant series".to_string(),
                    ));
                }
                Ok(centered_autocovariance(y, m, k) / g0)
            }
            StatisticSpec::Quantile(p) => {
                let mut v = y.to_vec();
                let idx = ceil_index(n, p) - 1;
                let (_, q, _) = v.select_nth_unstable_by(idx, f64::total_cmp);
                Ok(*q)
            }
            StatisticSpec::Spectral { omega, bandwidth } => {
                let h = bandwidth.unwrap_or_else(|| (n as f64).powf(-0.2));
                smoothed_periodogram(y, omega, h)
            }
        }
    }

    /// Largest lag the statistic looks at.
    pub fn max_lag(&self) -> usize {
        match *self {
            StatisticSpec::Autocovariance(k) | StatisticSpec::Autocorrelation(k) => k,
            _ => 0,
        }
    }
}

fn check_lag(k: usize, n: usize) -> Result<()> {
    if k >= n {
        return Err(BootError::invalid(format!(
            "lag {k} must be smaller than the series length {n}"
        )));
    }
    Ok(())
}

pub fn evaluate_statistic(spec: &StatisticSpec, sample: &SeriesSample) -> Result<f64> {
    spec.evaluate(sample.values())
}

/// `(1/n) sum_{t=1}^{n-k} (y_t - m)(y_{t+k} - m)`.
pub(crate) fn centered_autocovariance(y: &[f64], m: f64, k: usize) -> f64 {
    let s: f64 = y.iter().zip(&y[k..]).map(|(a, b)| (a - m) * (b - m)).sum();
    s / y.len() as f64
}

/// Quadratic (Bartlett-Priestley) smoothing kernel on `[-1, 1]`.
#[inline]
fn quadratic_kernel(u: f64) -> f64 {
    if u.abs() <= 1.0 {
        0.75 * (1.0 - u * u)
    } else {
        0.0
    }
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// Periodogram `I(w_j) = |sum_t (y_t - ybar) e^{-i t w_j}|^2 / (2 pi n)` at
/// `w_j = 2 pi j / n`, `j = 0..n`.
pub fn periodogram(y: &[f64]) -> Vec<f64> {
    let n = y.len();
    let m = mean(y);
    let mut buf: Vec<Complex<f64>> = y.iter().map(|&v| Complex::new(v - m, 0.0)).collect();
    let fft = PLANNER.with(|p| p.borrow_mut().plan_fft_forward(n));
    fft.process(&mut buf);
    let scale = 1.0 / (2.0 * PI * n as f64);
    buf.iter().map(|c| c.norm_sqr() * scale).collect()
}

/// Weighted average of periodogram ordinates at the nonzero Fourier
/// frequencies within `h` of `omega` (circular distance), with weights
/// proportional to the quadratic kernel and summing to one.
pub fn smoothed_periodogram(y: &[f64], omega: f64, h: f64) -> Result<f64> {
    let n = y.len();
    let pg = periodogram(y);
    let mut num = 0.0;
    let mut den = 0.0;
    for (j, &ij) in pg.iter().enumerate().skip(1) {
        let wj = 2.0 * PI * j as f64 / n as f64;
        let mut d = (omega - wj).rem_euclid(2.0 * PI);
        if d > PI {
            d -= 2.0 * PI;
        }
        let w = quadratic_kernel(d / h);
        num += w * ij;
        den += w;
    }
    if !(den > 0.0) {
        return Err(BootError::invalid(format!(
            "spectral bandwidth {h} covers no Fourier frequency at n = {n}"
        )));
    }
    Ok(num / den)
}

impl fmt::Display for StatisticSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StatisticSpec::Mean => write!(f, "mean"),
            StatisticSpec::Autocovariance(k) => write!(f, "acov:{k}"),
            StatisticSpec::Autocorrelation(k) => write!(f, "acorr:{k}"),
            StatisticSpec::Quantile(p) => write!(f, "quantile:{p}"),
            StatisticSpec::Spectral {
                omega,
                bandwidth: None,
            } => write!(f, "spectral:{omega}"),
            StatisticSpec::Spectral {
                omega,
                bandwidth: Some(h),
            } => write!(f, "spectral:{omega}:{h}"),
        }
    }
}

impl FromStr for StatisticSpec {
    type Err = BootError;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let mut parts = s.split(':');
        let head = parts.next().unwrap_or_default();
        let args: Vec<&str> = parts.collect();
        let bad = || BootError::invalid(format!("cannot parse statistic '{s}'"));
        let lag = |a: &[&str]| -> Result<usize> {
            match a {
                [k] => k.trim().parse().map_err(|_| bad()),
                _ => Err(bad()),
            }
        };
        let real = |a: &str| -> Result<f64> { a.trim().parse().map_err(|_| bad()) };
        let spec = match head {
            "mean" if args.is_empty() => StatisticSpec::Mean,
            "acov" => StatisticSpec::Autocovariance(lag(&args)?),
            "acorr" => StatisticSpec::Autocorrelation(lag(&args)?),
            "quantile" => match args.as_slice() {
                [p] => StatisticSpec::Quantile(real(p)?),
                _ => return Err(bad()),
            },
            "spectral" => match args.as_slice() {
                [w] => StatisticSpec::Spectral {
                    omega: real(w)?,
                    bandwidth: None,
                },
                [w, h] => StatisticSpec::Spectral {
                    omega: real(w)?,
                    bandwidth: Some(real(h)?),
                },
                _ => return Err(bad()),
            },
            _ => return Err(bad()),
        };
        spec.validate()?;
        Ok(spec)
    }
}
