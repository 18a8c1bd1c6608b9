//! Flat-top tapered Toeplitz covariance estimation for the latent Gaussian
//! series, positive-definiteness correction, banded Cholesky factorization
//! and the conditional law of the next observation.
//!
//! A tapered estimate has exactly zero entries beyond lag `floor(2 l)`, so
//! the matrix is banded and its Cholesky factor has the same lower
//! bandwidth. Everything here works in banded storage: factoring costs
//! `O(n q^2)` and whitening or colouring `O(n q)` for bandwidth `q`.

use crate::error::{BootError, Result};

/// Ratio of the minimum admissible eigenvalue to the variance entry.
pub const PD_EPSILON: f64 = 1e-6;
const PD_BISECTION_STEPS: usize = 40;

/// Trapezoidal flat-top taper: 1 on `|x| <= 1`, `2 - |x|` on `(1, 2]`, 0 beyond.
pub fn flat_top_taper(x: f64) -> f64 {
    let a = x.abs();
    if a <= 1.0 {
        1.0
    } else if a <= 2.0 {
        2.0 - a
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaperConfig {
    bandwidth: f64,
    support_edge: f64,
}

impl TaperConfig {
    pub fn new(bandwidth: f64) -> Result<Self> {
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(BootError::invalid(format!(
                "taper bandwidth must be positive, got {bandwidth}"
            )));
        }
        Ok(Self {
            bandwidth,
            support_edge: 2.0,
        })
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn support_edge(&self) -> f64 {
        self.support_edge
    }

    /// `kappa(k / l)`.
    pub fn weight(&self, lag: usize) -> f64 {
        flat_top_taper(lag as f64 / self.bandwidth)
    }

    /// Largest lag that may carry a nonzero weight, `floor(c_kappa * l)`.
    pub fn max_lag(&self) -> usize {
        (self.support_edge * self.bandwidth).floor() as usize
    }
}

/// `(1/n) sum_{t=1}^{n-k} z_t z_{t+k}`, without mean removal.
pub fn sample_autocovariance(z: &[f64], k: usize) -> Result<f64> {
    if k >= z.len() {
        return Err(BootError::invalid(format!(
            "lag {k} must be smaller than the series length {}",
            z.len()
        )));
    }
    Ok(raw_autocovariance(z, k))
}

#[inline]
fn raw_autocovariance(z: &[f64], k: usize) -> f64 {
    let s: f64 = z.iter().zip(&z[k..]).map(|(a, b)| a * b).sum();
    s / z.len() as f64
}

/// Symmetric Toeplitz matrix stored as its first row.
#[derive(Debug, Clone, PartialEq)]
pub struct ToeplitzCovariance {
    first_row: Vec<f64>,
    band: usize,
}

impl ToeplitzCovariance {
    pub fn from_first_row(first_row: Vec<f64>) -> Result<Self> {
        if first_row.is_empty() {
            return Err(BootError::invalid(
                "a covariance matrix needs dimension >= 1",
            ));
        }
        if first_row.iter().any(|v| !v.is_finite()) {
            return Err(BootError::invalid("covariance entries must be finite"));
        }
        let band = first_row.iter().rposition(|&v| v != 0.0).unwrap_or(0);
        Ok(Self { first_row, band })
    }

    /// Tapered estimate of dimension `dim` before any PD correction. Lags
    /// at or beyond `z.len()` are zero.
    pub fn tapered_uncorrected(z: &[f64], cfg: &TaperConfig, dim: usize) -> Result<Self> {
        if z.is_empty() {
            return Err(BootError::invalid(
                "cannot estimate covariance of an empty series",
            ));
        }
        if dim == 0 || dim > z.len() + 1 {
            return Err(BootError::invalid(format!(
                "dimension {dim} must lie in 1..={}",
                z.len() + 1
            )));
        }
        let mut row = vec![0.0; dim];
        let last = cfg.max_lag().min(dim - 1).min(z.len() - 1);
        for (k, entry) in row.iter_mut().enumerate().take(last + 1) {
            let w = cfg.weight(k);
            if w > 0.0 {
                *entry = w * raw_autocovariance(z, k);
            }
        }
        Self::from_first_row(row)
    }

    pub fn dim(&self) -> usize {
        self.first_row.len()
    }

    pub fn first_row(&self) -> &[f64] {
        &self.first_row
    }

    /// Largest lag with a nonzero entry.
    pub fn band(&self) -> usize {
        self.band
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.first_row[i.abs_diff(j)]
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let n = self.dim();
        (0..n)
            .map(|i| (0..n).map(|j| self.get(i, j)).collect())
            .collect()
    }

    /// Leading `m x m` block.
    pub fn leading(&self, m: usize) -> Result<Self> {
        if m == 0 || m > self.dim() {
            return Err(BootError::invalid(format!(
                "leading block size {m} must lie in 1..={}",
                self.dim()
            )));
        }
        Self::from_first_row(self.first_row[..m].to_vec())
    }

    /// True when `self - mu I` is positive definite.
    fn exceeds(&self, mu: f64) -> bool {
        let q = self.band;
        CholeskyFactor::factor_banded(self.dim(), q, |i, j| {
            self.get(i, j) - if i == j { mu } else { 0.0 }
        })
        .is_ok()
    }

    /// Smallest eigenvalue, located by bisection on the shift `mu` using
    /// Cholesky success of `self - mu I` as the test.
    pub fn min_eigenvalue(&self) -> f64 {
        let d = self.first_row[0];
        let off: f64 = self.first_row[1..].iter().map(|v| v.abs()).sum();
        let mut lo = d - 2.0 * off - 1e-12 * d.abs().max(1.0);
        let mut hi = d + 1e-12 * d.abs().max(1.0);
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if self.exceeds(mid) {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-14 * d.abs().max(1e-300) {
                break;
            }
        }
        0.5 * (lo + hi)
    }

    fn shrunk(&self, s: f64) -> Self {
        let mut row = self.first_row.clone();
        for v in &mut row[1..] {
            *v *= s;
        }
        Self {
            first_row: row,
            band: self.band,
        }
    }
}

/// Tapered estimate of dimension `dim` with PD correction applied.
pub fn build_tapered_matrix(
    z: &[f64],
    cfg: &TaperConfig,
    dim: usize,
) -> Result<ToeplitzCovariance> {
    pd_correct(&ToeplitzCovariance::tapered_uncorrected(z, cfg, dim)?)
}

/// Shrink the off-diagonal lags by the largest factor `s` in `[0, 1]` for
/// which the minimum eigenvalue is at least `PD_EPSILON * sigma(0)`.
pub fn pd_correct(m: &ToeplitzCovariance) -> Result<ToeplitzCovariance> {
    let d = m.first_row[0];
    if !(d > 0.0) {
        return Err(BootError::DegenerateCovariance(format!(
            "variance entry must be positive, got {d}"
        )));
    }
    let floor = PD_EPSILON * d;
    if m.exceeds(floor) {
        return Ok(m.clone());
    }
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..PD_BISECTION_STEPS {
        let mid = 0.5 * (lo + hi);
        if m.shrunk(mid).exceeds(floor) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(m.shrunk(lo))
}

/// Lower-triangular Cholesky factor in banded storage.
#[derive(Debug, Clone, PartialEq)]
pub struct CholeskyFactor {
    n: usize,
    q: usize,
    // Row i holds columns i-q ..= i at offsets 0 ..= q.
    data: Vec<f64>,
}

impl CholeskyFactor {
    /// Factor the symmetric matrix with entries `a(i, j)` that vanish for
    /// `|i - j| > q`. Only `j <= i` is queried.
    pub fn factor_banded(n: usize, q: usize, a: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let q = q.min(n.saturating_sub(1));
        let w = q + 1;
        let mut data = vec![0.0; n * w];
        for i in 0..n {
            let j0 = i.saturating_sub(q);
            for j in j0..=i {
                let k0 = j0.max(j.saturating_sub(q));
                let mut s = a(i, j);
                let ri = i * w + q - i;
                let rj = j * w + q - j;
                for k in k0..j {
                    s -= data[ri + k] * data[rj + k];
                }
                if i == j {
                    if !(s > 0.0) || !s.is_finite() {
                        return Err(BootError::FactorizationFailure { row: i });
                    }
                    data[ri + i] = s.sqrt();
                } else {
                    data[ri + j] = s / data[rj + j];
                }
            }
        }
        Ok(Self { n, q, data })
    }

    /// Factor a dense symmetric matrix given by rows.
    pub fn from_dense(a: &[Vec<f64>]) -> Result<Self> {
        let n = a.len();
        if a.iter().any(|r| r.len() != n) {
            return Err(BootError::invalid("matrix must be square"));
        }
        Self::factor_banded(n, n.saturating_sub(1), |i, j| a[i][j])
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.q
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        if j > i || i - j > self.q {
            0.0
        } else {
            self.data[i * (self.q + 1) + self.q + j - i]
        }
    }

    /// Nonzero part of row `i`: the first column index and the entries up
    /// to and including the diagonal.
    #[inline]
    pub fn row(&self, i: usize) -> (usize, &[f64]) {
        let w = self.q + 1;
        let j0 = i.saturating_sub(self.q);
        let start = i * w + self.q - (i - j0);
        (j0, &self.data[start..(i + 1) * w])
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        (0..self.n)
            .map(|i| (0..self.n).map(|j| self.get(i, j)).collect())
            .collect()
    }

    /// Factor of the leading `m x m` block (the first `m` rows).
    pub fn leading(&self, m: usize) -> Result<Self> {
        if m == 0 || m > self.n {
            return Err(BootError::invalid(format!(
                "leading block size {m} must lie in 1..={}",
                self.n
            )));
        }
        let q = self.q.min(m - 1);
        let mut out = Self {
            n: m,
            q,
            data: vec![0.0; m * (q + 1)],
        };
        for i in 0..m {
            for j in i.saturating_sub(q)..=i {
                out.data[i * (q + 1) + q + j - i] = self.get(i, j);
            }
        }
        Ok(out)
    }

    fn check_len(&self, got: usize) -> Result<()> {
        if got != self.n {
            return Err(BootError::invalid(format!(
                "vector length {got} does not match factor dimension {}",
                self.n
            )));
        }
        Ok(())
    }

    /// Solve `L x = b` by forward substitution.
    pub fn solve_lower(&self, b: &[f64]) -> Result<Vec<f64>> {
        self.check_len(b.len())?;
        self.solve_leading(b)
    }

    /// Solve against the leading `b.len() x b.len()` block of `L`.
    pub fn solve_leading(&self, b: &[f64]) -> Result<Vec<f64>> {
        if b.len() > self.n {
            return Err(BootError::invalid(format!(
                "vector length {} exceeds factor dimension {}",
                b.len(),
                self.n
            )));
        }
        let mut x = vec![0.0; b.len()];
        for i in 0..b.len() {
            let (j0, row) = self.row(i);
            let (diag, off) = row.split_last().expect("row includes the diagonal");
            let s: f64 = off.iter().zip(&x[j0..i]).map(|(l, v)| l * v).sum();
            x[i] = (b[i] - s) / diag;
        }
        Ok(x)
    }

    /// `L x`, written into `out`.
    pub fn mul_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        self.check_len(x.len())?;
        self.check_len(out.len())?;
        for (i, o) in out.iter_mut().enumerate() {
            let (j0, row) = self.row(i);
            *o = row.iter().zip(&x[j0..=i]).map(|(l, v)| l * v).sum();
        }
        Ok(())
    }

    /// Conditional law of the last coordinate given the whitened prefix:
    /// returns `(sum_j L[n-1][j] xi_j, L[n-1][n-1])`.
    pub fn last_row_conditional(&self, xi_prefix: &[f64]) -> Result<(f64, f64)> {
        if xi_prefix.len() + 1 != self.n {
            return Err(BootError::invalid(format!(
                "prefix length {} must be one less than dimension {}",
                xi_prefix.len(),
                self.n
            )));
        }
        let i = self.n - 1;
        let (j0, row) = self.row(i);
        let (diag, off) = row.split_last().expect("row includes the diagonal");
        let mean = off.iter().zip(&xi_prefix[j0..]).map(|(l, v)| l * v).sum();
        Ok((mean, *diag))
    }
}

pub fn cholesky_lower(m: &ToeplitzCovariance) -> Result<CholeskyFactor> {
    CholeskyFactor::factor_banded(m.dim(), m.band(), |i, j| m.get(i, j))
}

/// `L^{-1} z`.
pub fn whiten(z: &[f64], l: &CholeskyFactor) -> Result<Vec<f64>> {
    l.solve_lower(z)
}

/// `L xi`.
pub fn colour(xi: &[f64], l: &CholeskyFactor) -> Result<Vec<f64>> {
    let mut out = vec![0.0; xi.len()];
    l.mul_into(xi, &mut out)?;
    Ok(out)
}

/// Mean `S21 S11^{-1} z` and Schur-complement variance of the last
/// coordinate of `m_next` given the first `n` coordinates equal `z`.
pub fn conditional_gaussian(m_next: &ToeplitzCovariance, z: &[f64]) -> Result<(f64, f64)> {
    let n = z.len();
    if m_next.dim() != n + 1 {
        return Err(BootError::invalid(format!(
            "conditioning on {n} values needs a matrix of dimension {}, got {}",
            n + 1,
            m_next.dim()
        )));
    }
    let s11 = cholesky_lower(&m_next.leading(n)?)?;
    let s12: Vec<f64> = (0..n).map(|i| m_next.first_row[n - i]).collect();
    let w = s11.solve_lower(z)?;
    let v = s11.solve_lower(&s12)?;
    let mean = v.iter().zip(&w).map(|(a, b)| a * b).sum();
    let var = m_next.first_row[0] - v.iter().map(|a| a * a).sum::<f64>();
    if !(var > 0.0) {
        return Err(BootError::DegenerateCovariance(format!(
            "conditional variance {var} is not positive"
        )));
    }
    Ok((mean, var))
}

/// Smallest `k >= 1` after which five consecutive sample autocorrelations
/// are inside `+-1.96 sqrt(log10(n) / n)`, capped at `sqrt(n)`.
pub fn default_taper_bandwidth(z: &[f64]) -> Result<f64> {
    let n = z.len();
    if n < 20 {
        return Err(BootError::invalid(format!(
            "bandwidth selection needs at least 20 observations, got {n}"
        )));
    }
    let var = raw_autocovariance(z, 0);
    if !(var > 0.0) {
        return Err(BootError::DegenerateSample(
            "latent series is identically zero".to_string(),
        ));
    }
    let nf = n as f64;
    let cap = nf.sqrt();
    let bound = 1.96 * (nf.log10() / nf).sqrt();
    let small = |k: usize| k < n && (raw_autocovariance(z, k) / var).abs() < bound;
    let mut run = 0usize;
    let mut k = 1usize;
    while (k as f64) <= cap + 4.0 && k < n {
        if small(k) {
            run += 1;
            if run == 5 {
                let start = k - 4;
                return Ok((start as f64).min(cap));
            }
        } else {
            run = 0;
        }
        k += 1;
    }
    Ok(cap)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frob(a: &[Vec<f64>]) -> f64 {
        a.iter().flatten().map(|v| v * v).sum::<f64>().sqrt()
    }

    fn reconstruct(l: &CholeskyFactor) -> Vec<Vec<f64>> {
        let n = l.dim();
        (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| (0..n).map(|k| l.get(i, k) * l.get(j, k)).sum())
                    .collect()
            })
            .collect()
    }

    #[test]
    fn taper_values() {
        assert_eq!(flat_top_taper(0.5), 1.0);
        assert_eq!(flat_top_taper(1.0), 1.0);
        assert_eq!(flat_top_taper(1.5), 0.5);
        assert_eq!(flat_top_taper(-1.5), 0.5);
        assert_eq!(flat_top_taper(2.0), 0.0);
        assert_eq!(flat_top_taper(2.5), 0.0);
        assert!(TaperConfig::new(0.0).is_err());
        assert_eq!(TaperConfig::new(2.6).unwrap().max_lag(), 5);
    }

    #[test]
    fn autocovariance_alternating() {
        let z = [1.0, -1.0, 1.0, -1.0];
        assert_eq!(sample_autocovariance(&z, 1).unwrap(), -0.75);
        assert_eq!(sample_autocovariance(&z, 0).unwrap(), 1.0);
        assert!(sample_autocovariance(&z, 4).is_err());
    }

    #[test]
    fn tapered_matrix_is_banded() {
        let z: Vec<f64> = (0..200).map(|i| ((i * 7919) % 13) as f64 - 6.0).collect();
        let cfg = TaperConfig::new(2.0).unwrap();
        let m = ToeplitzCovariance::tapered_uncorrected(&z, &cfg, 200).unwrap();
        assert!(m.first_row()[4..].iter().all(|&v| v == 0.0));
        assert_eq!(
            m.first_row()[3],
            0.5 * sample_autocovariance(&z, 3).unwrap()
        );
        let p = ToeplitzCovariance::tapered_uncorrected(&z, &cfg, 201).unwrap();
        assert_eq!(p.dim(), 201);
        assert!(ToeplitzCovariance::tapered_uncorrected(&z, &cfg, 202).is_err());
    }

    #[test]
    fn pd_correct_noop_and_errors() {
        let m = ToeplitzCovariance::from_first_row(vec![1.0, 0.3, 0.0]).unwrap();
        assert_eq!(pd_correct(&m).unwrap(), m);
        let zero = ToeplitzCovariance::from_first_row(vec![0.0, 0.0]).unwrap();
        assert!(matches!(
            pd_correct(&zero),
            Err(BootError::DegenerateCovariance(_))
        ));
    }

    #[test]
    fn pd_correct_rank_deficient_ones() {
        let m = ToeplitzCovariance::from_first_row(vec![1.0, 1.0, 1.0]).unwrap();
        let c = pd_correct(&m).unwrap();
        assert_eq!(c.first_row()[0], 1.0);
        // Characteristic polynomial oracle for [[1,a,b],[a,1,a],[b,a,1]]: the
        // eigenvalues are 1 - b and the roots of (1 - x)^2 + b (1 - x) - 2a^2.
        let (a, b) = (c.first_row()[1], c.first_row()[2]);
        let disc = (b * b + 8.0 * a * a).sqrt();
        let roots = [1.0 - b, 1.0 - (-b + disc) / 2.0, 1.0 - (-b - disc) / 2.0];
        let lmin = roots.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(lmin >= 1e-6 * (1.0 - 1e-9), "lambda_min = {lmin}");
        assert!(lmin < 1e-5);
        assert!((c.min_eigenvalue() - lmin).abs() < 1e-10);
    }

    #[test]
    fn cholesky_small_cases() {
        let id = CholeskyFactor::from_dense(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert_eq!(id.to_dense(), vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        let d = CholeskyFactor::from_dense(&[vec![4.0, 0.0], vec![0.0, 9.0]]).unwrap();
        assert_eq!(d.to_dense(), vec![vec![2.0, 0.0], vec![0.0, 3.0]]);
        let m = ToeplitzCovariance::from_first_row(vec![1.0, 0.6]).unwrap();
        let l = cholesky_lower(&m).unwrap();
        assert!((l.get(1, 0) - 0.6).abs() < 1e-15);
        assert!((l.get(1, 1) - 0.8).abs() < 1e-15);
        let bad = ToeplitzCovariance::from_first_row(vec![1.0, 1.0]).unwrap();
        assert!(matches!(
            cholesky_lower(&bad),
            Err(BootError::FactorizationFailure { row: 1 })
        ));
    }

    #[test]
    fn banded_factor_reconstructs() {
        let m = ToeplitzCovariance::from_first_row(
            (0..30)
                .map(|k| if k < 5 { 0.6f64.powi(k) } else { 0.0 })
                .collect(),
        )
        .unwrap();
        let m = pd_correct(&m).unwrap();
        let l = cholesky_lower(&m).unwrap();
        assert_eq!(l.bandwidth(), 4);
        let a = m.to_dense();
        let r = reconstruct(&l);
        let diff: Vec<Vec<f64>> = a
            .iter()
            .zip(&r)
            .map(|(x, y)| x.iter().zip(y).map(|(u, v)| u - v).collect())
            .collect();
        assert!(frob(&diff) / frob(&a) < 1e-12);
        assert!((0..30).all(|i| l.get(i, i) > 0.0));
        let lead = l.leading(10).unwrap();
        let direct = cholesky_lower(&m.leading(10).unwrap()).unwrap();
        assert_eq!(lead, direct);
    }

    #[test]
    fn whiten_colour_roundtrip() {
        let m = ToeplitzCovariance::from_first_row(vec![2.0, 0.8, 0.3, 0.0, 0.0, 0.0]).unwrap();
        let l = cholesky_lower(&m).unwrap();
        let z = [0.3, -1.2, 2.0, 0.5, -0.7, 1.1];
        let back = colour(&whiten(&z, &l).unwrap(), &l).unwrap();
        for (a, b) in z.iter().zip(&back) {
            assert!((a - b).abs() < 1e-12);
        }
        let e = [0.0, 0.0, 1.0, 0.0, 0.0, 0.0];
        let xi = whiten(&colour(&e, &l).unwrap(), &l).unwrap();
        for (a, b) in e.iter().zip(&xi) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(colour(&[0.0; 6], &l).unwrap(), vec![0.0; 6]);
        assert!(whiten(&[1.0, 2.0], &l).is_err());
        assert!(colour(&[1.0, 2.0], &l).is_err());
    }

    #[test]
    fn conditional_gaussian_closed_forms() {
        let id = ToeplitzCovariance::from_first_row(vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(
            conditional_gaussian(&id, &[0.4, -2.0, 3.0]).unwrap(),
            (0.0, 1.0)
        );
        let rho = 0.6;
        let m = ToeplitzCovariance::from_first_row(vec![1.0, rho]).unwrap();
        let (mean, var) = conditional_gaussian(&m, &[1.7]).unwrap();
        assert!((mean - rho * 1.7).abs() < 1e-12);
        assert!((var - (1.0 - rho * rho)).abs() < 1e-12);
        let m0 = ToeplitzCovariance::from_first_row(vec![1.0, 0.0]).unwrap();
        assert_eq!(conditional_gaussian(&m0, &[5.0]).unwrap(), (0.0, 1.0));
        assert!(conditional_gaussian(&m0, &[5.0, 1.0]).is_err());
    }

    #[test]
    fn last_row_matches_schur_complement() {
        let m =
            ToeplitzCovariance::from_first_row(vec![1.5, 0.9, 0.4, 0.1, 0.0, 0.0, 0.0]).unwrap();
        let l = cholesky_lower(&m).unwrap();
        let z = [0.2, -0.4, 1.0, 0.8, -1.3, 0.6];
        let xi = whiten(&z, &l.leading(6).unwrap()).unwrap();
        let (mean, sd) = l.last_row_conditional(&xi).unwrap();
        let (m2, v2) = conditional_gaussian(&m, &z).unwrap();
        assert!((mean - m2).abs() < 1e-12);
        assert!((sd * sd - v2).abs() < 1e-12);
    }

    #[test]
    fn taper_bandwidth_precondition() {
        assert!(default_taper_bandwidth(&[0.1; 10]).is_err());
        assert!(matches!(
            default_taper_bandwidth(&[0.0; 30]),
            Err(BootError::DegenerateSample(_))
        ));
    }
}
