//! Marginal CDF estimation and the probability-integral-transform chain
//! `Y -> U -> Z` together with its inverse `Z -> Y`.

use serde::{Deserialize, Serialize};

use crate::error::{BootError, Result};
use crate::normal;

/// An observed stationary series. Always holds at least two finite values.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesSample {
    values: Vec<f64>,
}

impl SeriesSample {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(BootError::invalid(format!(
                "a series needs at least 2 observations, got {}",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(BootError::invalid(format!("observation {i} is not finite")));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn mean(&self) -> f64 {
        mean(&self.values)
    }

    /// Sample standard deviation with the `n - 1` divisor.
    pub fn std_dev(&self) -> f64 {
        std_dev(&self.values)
    }
}

pub(crate) fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

pub(crate) fn std_dev(x: &[f64]) -> f64 {
    let m = mean(x);
    let ss: f64 = x.iter().map(|v| (v - m) * (v - m)).sum();
    (ss / (x.len() as f64 - 1.0)).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CdfKind {
    Empirical,
    Kernel,
}

/// Gaussian kernel contributions beyond this many bandwidths underflow to
/// exactly 0 or 1 in double precision.
const FULL_CUTOFF: f64 = 38.5;
/// Smallest window used by the root finder.
const SOLVER_CUTOFF: f64 = 8.5;
const QUANTILE_TOL: f64 = 1e-10;
const MAX_SOLVER_ITERS: usize = 200;

/// Order-statistic index `ceil(n * p)` clamped to `1..=n`.
///
/// The product is nudged down by a few ulps so that `p = k / n` computed in
/// floating point still selects the `k`-th order statistic.
#[inline]
pub(crate) fn ceil_index(n: usize, p: f64) -> usize {
    let x = n as f64 * p;
    let k = (x - x.abs() * 4.0 * f64::EPSILON).ceil();
    (k.max(1.0) as usize).min(n)
}

/// An estimated marginal CDF: either the empirical CDF or a Gaussian-kernel
/// smoothed CDF with bandwidth `h`.
#[derive(Debug, Clone, PartialEq)]
pub struct CdfEstimate {
    kind: CdfKind,
    support: Vec<f64>,
    bandwidth: Option<f64>,
}

#[derive(Clone, Copy)]
enum Tail {
    Lower,
    Upper,
}

impl CdfEstimate {
    /// Empirical CDF of `values`.
    pub fn empirical(values: &[f64]) -> Result<Self> {
        Ok(Self {
            kind: CdfKind::Empirical,
            support: sorted_support(values)?,
            bandwidth: None,
        })
    }

    /// Kernel-smoothed CDF `mean_t Phi((y - Y_t) / h)`.
    pub fn kernel(values: &[f64], h: f64) -> Result<Self> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(BootError::invalid(format!(
                "kernel bandwidth must be positive and finite, got {h}"
            )));
        }
        Ok(Self {
            kind: CdfKind::Kernel,
            support: sorted_support(values)?,
            bandwidth: Some(h),
        })
    }

    /// Fit `kind` on `values`, using the default bandwidth for kernels.
    pub fn fit(kind: CdfKind, values: &[f64]) -> Result<Self> {
        match kind {
            CdfKind::Empirical => Self::empirical(values),
            CdfKind::Kernel => Self::kernel(values, bandwidth_rule(values)?),
        }
    }

    pub fn kind(&self) -> CdfKind {
        self.kind
    }

    pub fn support(&self) -> &[f64] {
        &self.support
    }

    pub fn bandwidth(&self) -> Option<f64> {
        self.bandwidth
    }

    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    /// `F(y)`.
    pub fn forward(&self, y: f64) -> f64 {
        match self.bandwidth {
            None => {
                let count = self.support.partition_point(|&v| v <= y);
                count as f64 / self.len() as f64
            }
            Some(h) => self.kernel_sums(y, h, FULL_CUTOFF, Tail::Lower).0,
        }
    }

    /// `1 - F(y)`, computed without cancellation for the kernel kind.
    pub fn survival(&self, y: f64) -> f64 {
        match self.bandwidth {
            None => 1.0 - self.forward(y),
            Some(h) => self.kernel_sums(y, h, FULL_CUTOFF, Tail::Upper).0,
        }
    }

    /// Density of the kernel estimate; `None` for the empirical kind.
    pub fn density(&self, y: f64) -> Option<f64> {
        self.bandwidth
            .map(|h| self.kernel_sums(y, h, FULL_CUTOFF, Tail::Lower).1)
    }

    /// `inf { y : F(y) >= p }`.
    ///
    /// The empirical kind accepts `p` in `[0, 1]` and returns the
    /// `ceil(n p)`-th order statistic (the minimum for `p = 0`). The kernel
    /// kind requires `p` in `(0, 1)` and solves `F(y) = p` to `1e-10` in `y`.
    pub fn quantile(&self, p: f64) -> Result<f64> {
        match self.bandwidth {
            None => {
                if !(0.0..=1.0).contains(&p) {
                    return Err(BootError::invalid(format!(
                        "quantile level must lie in [0, 1], got {p}"
                    )));
                }
                Ok(self.support[ceil_index(self.len(), p) - 1])
            }
            Some(h) => {
                if !(p > 0.0 && p < 1.0) {
                    return Err(BootError::invalid(format!(
                        "quantile level must lie in (0, 1), got {p}"
                    )));
                }
                let guess = self.support[ceil_index(self.len(), p) - 1];
                Ok(if p <= 0.5 {
                    self.solve(p, Tail::Lower, h, guess, None)
                } else {
                    self.solve(1.0 - p, Tail::Upper, h, guess, None)
                })
            }
        }
    }

    /// `F^{-1}(Phi(z))`. Output of the empirical kind is always a sample value.
    pub fn inverse_pit(&self, z: f64) -> f64 {
        match self.bandwidth {
            None => self.support[ceil_index(self.len(), normal::cdf(z)) - 1],
            Some(h) => self.inverse_pit_kernel(z, h, None, None),
        }
    }

    /// `inverse_pit` for many values at once.
    ///
    /// The kernel kind sorts the inputs and warm-starts each root from the
    /// previous one, which is several times faster than independent solves.
    pub fn inverse_pit_many(&self, zs: &[f64]) -> Vec<f64> {
        let Some(h) = self.bandwidth else {
            return zs.iter().map(|&z| self.inverse_pit(z)).collect();
        };
        let mut order: Vec<usize> = (0..zs.len()).collect();
        order.sort_unstable_by(|&a, &b| zs[a].total_cmp(&zs[b]));
        let mut out = vec![0.0; zs.len()];
        let mut prev: Option<f64> = None;
        for &i in &order {
            let y = self.inverse_pit_kernel(zs[i], h, prev, prev);
            out[i] = y;
            prev = Some(y);
        }
        out
    }

    fn inverse_pit_kernel(&self, z: f64, h: f64, guess: Option<f64>, floor: Option<f64>) -> f64 {
        // Solve in whichever tail keeps the target probability small.
        let (target, tail) = if z <= 0.0 {
            (normal::cdf(z), Tail::Lower)
        } else {
            (normal::cdf(-z), Tail::Upper)
        };
        if target <= 0.0 {
            // Phi(z) underflowed: push past the extreme support point.
            return match tail {
                Tail::Lower => self.support[0] - FULL_CUTOFF * h,
                Tail::Upper => self.support[self.len() - 1] + FULL_CUTOFF * h,
            };
        }
        let guess = guess.unwrap_or_else(|| {
            let p = normal::cdf(z);
            self.support[ceil_index(self.len(), p) - 1]
        });
        self.solve(target, tail, h, guess, floor)
    }

    /// Returns (probability, density) where probability is `F(y)` for the
    /// lower tail and `1 - F(y)` for the upper tail. Support points further
    /// than `cutoff * h` from `y` contribute exactly 0 or 1.
    fn kernel_sums(&self, y: f64, h: f64, cutoff: f64, tail: Tail) -> (f64, f64) {
        let s = &self.support;
        let lo = s.partition_point(|&v| v < y - cutoff * h);
        let hi = s.partition_point(|&v| v <= y + cutoff * h);
        let mut prob = 0.0;
        let mut dens = 0.0;
        for &v in &s[lo..hi] {
            let u = (y - v) / h;
            dens += normal::pdf(u);
            prob += match tail {
                Tail::Lower => normal::cdf(u),
                Tail::Upper => normal::cdf(-u),
            };
        }
        let certain = match tail {
            Tail::Lower => lo,
            Tail::Upper => s.len() - hi,
        };
        let n = s.len() as f64;
        ((prob + certain as f64) / n, dens / (n * h))
    }

    /// `(F(y), 1 - F(y), f(y), f'(y))` in one pass, each tail without
    /// cancellation.
    fn kernel_tails(&self, y: f64, h: f64) -> (f64, f64, f64, f64) {
        let s = &self.support;
        let lo = s.partition_point(|&v| v < y - FULL_CUTOFF * h);
        let hi = s.partition_point(|&v| v <= y + FULL_CUTOFF * h);
        let (mut lower, mut upper, mut dens, mut slope) = (0.0, 0.0, 0.0, 0.0);
        for &v in &s[lo..hi] {
            let u = (y - v) / h;
            let small = normal::cdf(-u.abs());
            let k = normal::pdf(u);
            dens += k;
            slope -= u * k;
            if u <= 0.0 {
                lower += small;
                upper += 1.0 - small;
            } else {
                lower += 1.0 - small;
                upper += small;
            }
        }
        let n = s.len() as f64;
        (
            (lower + lo as f64) / n,
            (upper + (s.len() - hi) as f64) / n,
            dens / (n * h),
            slope / (n * h * h),
        )
    }

    /// Solve `G(y) = target` where `G` is `F` (lower tail) or `1 - F` (upper
    /// tail) by a bracketed Newton iteration that falls back to bisection.
    /// `floor`, when given, is a known lower bound on the root in `y`.
    fn solve(&self, target: f64, tail: Tail, h: f64, guess: f64, floor: Option<f64>) -> f64 {
        // Narrow the evaluation window while keeping the neglected mass far
        // below the target probability.
        let cutoff = SOLVER_CUTOFF.max(3.0 - normal::quantile(target.min(0.5)));
        let residual = |y: f64| -> (f64, f64) {
            let (p, d) = self.kernel_sums(y, h, cutoff, tail);
            match tail {
                Tail::Lower => (p - target, d),
                Tail::Upper => (target - p, d),
            }
        };

        let s_min = self.support[0];
        let s_max = self.support[self.len() - 1];
        let mut lo = s_min - 10.0 * h;
        let mut hi = s_max + 10.0 * h;
        let mut widen = 10.0 * h;
        while residual(lo).0 > 0.0 {
            widen *= 2.0;
            lo = s_min - widen;
        }
        widen = 10.0 * h;
        while residual(hi).0 < 0.0 {
            widen *= 2.0;
            hi = s_max + widen;
        }
        if let Some(f) = floor {
            if f > lo && f < hi && residual(f).0 <= 0.0 {
                lo = f;
            }
        }

        let mut y = guess.clamp(lo, hi);
        for _ in 0..MAX_SOLVER_ITERS {
            let (g, d) = residual(y);
            if g == 0.0 {
                return y;
            }
            if g < 0.0 {
                lo = y;
            } else {
                hi = y;
            }
            let newton = y - g / d;
            let next = if d > 0.0 && newton > lo && newton < hi {
                newton
            } else {
                0.5 * (lo + hi)
            };
            let step = (next - y).abs();
            y = next;
            if step < QUANTILE_TOL || hi - lo < QUANTILE_TOL {
                break;
            }
        }
        y
    }
}

fn sorted_support(values: &[f64]) -> Result<Vec<f64>> {
    if values.len() < 2 {
        return Err(BootError::invalid(format!(
            "a CDF estimate needs at least 2 observations, got {}",
            values.len()
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(BootError::invalid("CDF support contains non-finite values"));
    }
    let mut s = values.to_vec();
    s.sort_unstable_by(f64::total_cmp);
    Ok(s)
}

pub fn fit_empirical_cdf(sample: &SeriesSample) -> Result<CdfEstimate> {
    CdfEstimate::empirical(sample.values())
}

pub fn fit_kernel_cdf(sample: &SeriesSample, h: f64) -> Result<CdfEstimate> {
    CdfEstimate::kernel(sample.values(), h)
}

/// Default kernel bandwidth `s_Y * n^(-1/3)`.
pub fn default_bandwidth(sample: &SeriesSample) -> Result<f64> {
    bandwidth_rule(sample.values())
}

pub(crate) fn bandwidth_rule(values: &[f64]) -> Result<f64> {
    if values.len() < 2 {
        return Err(BootError::invalid(
            "bandwidth needs at least 2 observations",
        ));
    }
    let s = std_dev(values);
    if !(s > 0.0) {
        return Err(BootError::DegenerateSample(
            "sample has zero variance".to_string(),
        ));
    }
    Ok(s * (values.len() as f64).powf(-1.0 / 3.0))
}

/// Standard normal clamped to `[-c, c]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdedNormal {
    c: f64,
}

impl ThresholdedNormal {
    pub fn new(c: f64) -> Result<Self> {
        if !(c > 0.0) {
            return Err(BootError::invalid(format!(
                "threshold must be positive, got {c}"
            )));
        }
        Ok(Self { c })
    }

    /// `max(4, sqrt(2 ln n))`.
    pub fn for_len(n: usize) -> Self {
        Self {
            c: 4.0f64.max((2.0 * (n as f64).ln()).sqrt()),
        }
    }

    pub fn threshold(&self) -> f64 {
        self.c
    }

    pub fn quantile(&self, p: f64) -> Result<f64> {
        thresholded_normal_quantile(p, self.c)
    }
}

pub fn thresholded_normal_quantile(p: f64, c: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(BootError::invalid(format!(
            "probability must lie in (0, 1), got {p}"
        )));
    }
    if !(c > 0.0) {
        return Err(BootError::invalid(format!(
            "threshold must be positive, got {c}"
        )));
    }
    Ok(normal::quantile(p).clamp(-c, c))
}

/// The transformed series `U_t`, `Z_t` and, once whitened, `xi_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformedSeries {
    pub u: Vec<f64>,
    pub z: Vec<f64>,
    pub xi: Option<Vec<f64>>,
}

impl TransformedSeries {
    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }
}

/// `U_t = F(Y_t)` with endpoint correction, then `Z_t = clamp(Phi^{-1}(U_t))`.
pub fn pit_forward(sample: &SeriesSample, cdf: &CdfEstimate, c: f64) -> Result<TransformedSeries> {
    let (u, z) = pit_values(sample.values(), cdf, c)?;
    Ok(TransformedSeries { u, z, xi: None })
}

pub(crate) fn pit_values(
    values: &[f64],
    cdf: &CdfEstimate,
    c: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(c > 0.0) {
        return Err(BootError::invalid(format!(
            "threshold must be positive, got {c}"
        )));
    }
    let n = values.len() as f64;
    let top = (n - 1.0) / n;
    let bottom = 1.0 / n;
    let mut u = Vec::with_capacity(values.len());
    let mut z = Vec::with_capacity(values.len());
    for &y in values {
        let mut ut = cdf.forward(y);
        if ut >= 1.0 {
            ut = top;
        } else if ut <= 0.0 {
            ut = bottom;
        }
        u.push(ut);
        z.push(normal::quantile(ut).clamp(-c, c));
    }
    Ok((u, z))
}

/// As [`pit_values`], reading `Phi^{-1}(F(y))` off the map's table where it
/// covers `y`.
pub(crate) fn pit_values_mapped(
    values: &[f64],
    map: &InverseMap,
    c: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let Some(table) = &map.table else {
        return pit_values(values, &map.cdf, c);
    };
    if !(c > 0.0) {
        return Err(BootError::invalid(format!(
            "threshold must be positive, got {c}"
        )));
    }
    let n = values.len() as f64;
    let top = (n - 1.0) / n;
    let bottom = 1.0 / n;
    let mut u = Vec::with_capacity(values.len());
    let mut z = Vec::with_capacity(values.len());
    for &y in values {
        let (mut ut, mut zt) = match table.latent(y) {
            Some(zt) => (normal::cdf(zt), zt),
            None => {
                let ut = map.cdf.forward(y);
                (ut, normal::quantile(ut))
            }
        };
        if ut >= 1.0 {
            ut = top;
            zt = normal::quantile(ut);
        } else if ut <= 0.0 {
            ut = bottom;
            zt = normal::quantile(ut);
        }
        u.push(ut);
        z.push(zt.clamp(-c, c));
    }
    Ok((u, z))
}

pub fn inverse_pit(z: f64, cdf: &CdfEstimate) -> f64 {
    cdf.inverse_pit(z)
}

/// A precomputed `z -> F^{-1}(Phi(z))` map for repeated evaluation against a
/// fixed CDF estimate.
///
/// The empirical kind is evaluated exactly. For the kernel kind, `F` and its
/// first two derivatives are evaluated exactly on a uniform grid in `y`
/// spanning the support plus eight bandwidths either side. Each node gives
/// `z`, `y`, `dy/dz = phi(z) / f(y)` and `d2y/dz2`, and `y(z)` is
/// interpolated by quintic Hermite splines between nodes. Inputs beyond the outermost nodes
/// are solved exactly.
#[derive(Debug, Clone)]
pub struct InverseMap {
    cdf: CdfEstimate,
    table: Option<HermiteTable>,
}

#[derive(Debug, Clone)]
struct HermiteTable {
    z: Vec<f64>,
    y: Vec<f64>,
    dy: Vec<f64>,
    d2y: Vec<f64>,
}

const TABLE_MARGIN: f64 = 8.0;
const NODES_PER_BANDWIDTH: f64 = 4.0;
const MAX_TABLE_NODES: usize = 200_000;

impl HermiteTable {
    fn build(cdf: &CdfEstimate, h: f64) -> Option<Self> {
        let s = cdf.support();
        let y0 = s[0] - TABLE_MARGIN * h;
        let span = s[s.len() - 1] - s[0] + 2.0 * TABLE_MARGIN * h;
        let count = ((span / h * NODES_PER_BANDWIDTH).ceil() as usize + 1).min(MAX_TABLE_NODES);
        let step = span / (count - 1) as f64;
        let mut t = Self {
            z: Vec::with_capacity(count),
            y: Vec::with_capacity(count),
            dy: Vec::with_capacity(count),
            d2y: Vec::with_capacity(count),
        };
        for i in 0..count {
            let y = y0 + i as f64 * step;
            let (lower, upper, dens, dens_slope) = cdf.kernel_tails(y, h);
            let z = if lower <= 0.5 {
                normal::quantile(lower)
            } else {
                -normal::quantile(upper)
            };
            let slope = normal::pdf(z) / dens;
            // Differentiating dy/dz = phi(z) / f(y) once more in z.
            let curve = -slope * (z + slope * dens_slope / dens);
            let increasing = t.z.last().is_none_or(|&last| z > last);
            if z.is_finite() && slope.is_finite() && curve.is_finite() && dens > 0.0 && increasing {
                t.z.push(z);
                t.y.push(y);
                t.dy.push(slope);
                t.d2y.push(curve);
            }
        }
        (t.z.len() >= 2).then_some(t)
    }

    /// Inverse direction, `z(y)`, from the same node data.
    fn latent(&self, y: f64) -> Option<f64> {
        let last = self.y.len() - 1;
        if !(y >= self.y[0] && y <= self.y[last]) {
            return None;
        }
        let i = self.y.partition_point(|&v| v <= y).clamp(1, last) - 1;
        let dy = self.y[i + 1] - self.y[i];
        let slope = |k: usize| 1.0 / self.dy[k];
        let curve = |k: usize| -self.d2y[k] / self.dy[k].powi(3);
        Some(quintic(
            (y - self.y[i]) / dy,
            (self.z[i], self.z[i + 1]),
            (slope(i) * dy, slope(i + 1) * dy),
            (curve(i) * dy * dy, curve(i + 1) * dy * dy),
        ))
    }

    #[inline]
    fn eval(&self, z: f64) -> Option<f64> {
        let last = self.z.len() - 1;
        if !(z >= self.z[0] && z <= self.z[last]) {
            return None;
        }
        let i = self.z.partition_point(|&v| v <= z).clamp(1, last) - 1;
        let dz = self.z[i + 1] - self.z[i];
        let s = (z - self.z[i]) / dz;
        Some(quintic(
            s,
            (self.y[i], self.y[i + 1]),
            (self.dy[i] * dz, self.dy[i + 1] * dz),
            (self.d2y[i] * dz * dz, self.d2y[i + 1] * dz * dz),
        ))
    }
}

/// Quintic Hermite interpolation on `[0, 1]` from end values and first and
/// second derivatives (already scaled to the unit interval).
#[inline]
fn quintic(s: f64, v: (f64, f64), d1: (f64, f64), d2: (f64, f64)) -> f64 {
    let s2 = s * s;
    let s3 = s2 * s;
    let s4 = s3 * s;
    let s5 = s4 * s;
    let h5 = 10.0 * s3 - 15.0 * s4 + 6.0 * s5;
    (1.0 - h5) * v.0
        + h5 * v.1
        + (s - 6.0 * s3 + 8.0 * s4 - 3.0 * s5) * d1.0
        + (-4.0 * s3 + 7.0 * s4 - 3.0 * s5) * d1.1
        + 0.5 * (s2 - 3.0 * s3 + 3.0 * s4 - s5) * d2.0
        + 0.5 * (s3 - 2.0 * s4 + s5) * d2.1
}

impl InverseMap {
    pub fn new(cdf: &CdfEstimate) -> Self {
        Self {
            cdf: cdf.clone(),
            table: cdf.bandwidth.and_then(|h| HermiteTable::build(cdf, h)),
        }
    }

    /// Map that always solves exactly, without building a table.
    pub fn exact(cdf: &CdfEstimate) -> Self {
        Self {
            cdf: cdf.clone(),
            table: None,
        }
    }

    pub fn cdf(&self) -> &CdfEstimate {
        &self.cdf
    }

    #[inline]
    pub fn apply(&self, z: f64) -> f64 {
        match self.table.as_ref().and_then(|t| t.eval(z)) {
            Some(y) => y,
            None => self.cdf.inverse_pit(z),
        }
    }

    pub fn apply_many(&self, zs: &[f64]) -> Vec<f64> {
        if self.table.is_none() {
            return self.cdf.inverse_pit_many(zs);
        }
        zs.iter().map(|&z| self.apply(z)).collect()
    }
}
