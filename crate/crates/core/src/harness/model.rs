//! ARMA data-generating models and the truth oracle.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::{Mutex, OnceLock};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::baselines::reflection_coefficients;
use crate::error::{BootError, Result};
use crate::rng;
use crate::statistic::StatisticSpec;
use crate::transform::SeriesSample;

/// Discarded presample for models with an autoregressive part.
pub const AR_BURN_IN: usize = 1000;
/// Length of the series the truth oracle evaluates statistics on.
pub const ORACLE_LEN: usize = 10_000_000;
pub const ORACLE_SEED: u64 = 0x00DD_BA11_5EED;
/// Overrides the on-disk location of cached oracle values.
pub const CACHE_DIR_ENV: &str = "MFBOOT_CACHE_DIR";

const SERIES_STREAM: u64 = 0x5345;

/// Nonlinear marginal transformation applied to the ARMA path.
pub fn paper_f(x: f64) -> f64 {
    if x < 0.0 {
        -(-x).sqrt()
    } else {
        (x + 1.0) * (x + 1.0) / 10.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Transfer {
    PaperF,
    Identity,
}

impl Transfer {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Transfer::PaperF => paper_f(x),
            Transfer::Identity => x,
        }
    }
}

impl fmt::Display for Transfer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Transfer::PaperF => "paper_f",
            Transfer::Identity => "identity",
        })
    }
}

impl FromStr for Transfer {
    type Err = BootError;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "paper_f" => Ok(Transfer::PaperF),
            "identity" => Ok(Transfer::Identity),
            other => Err(BootError::invalid(format!("unknown transfer '{other}'"))),
        }
    }
}

/// `W_t = sum phi_i W_{t-i} + e_t + sum theta_j e_{t-j}` with standard
/// normal `e_t`, observed as `Y_t = transfer(W_t)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelSpec {
    pub ar: Vec<f64>,
    pub ma: Vec<f64>,
    pub transfer: Transfer,
    pub label: String,
}

impl ModelSpec {
    pub fn new(
        ar: Vec<f64>,
        ma: Vec<f64>,
        transfer: Transfer,
        label: impl Into<String>,
    ) -> Result<Self> {
        if ar.iter().chain(&ma).any(|v| !v.is_finite()) {
            return Err(BootError::invalid("ARMA coefficients must be finite"));
        }
        let causal = reflection_coefficients(&ar).iter().all(|k| k.abs() < 1.0);
        if !causal {
            return Err(BootError::invalid(format!(
                "AR coefficients {ar:?} do not define a causal process"
            )));
        }
        Ok(Self {
            ar,
            ma,
            transfer,
            label: label.into(),
        })
    }

    /// MA(1) with coefficient -0.5.
    pub fn model1() -> Self {
        Self::new(vec![], vec![-0.5], Transfer::PaperF, "model1").expect("valid preset")
    }

    /// AR(1) with coefficient 0.5.
    pub fn model2() -> Self {
        Self::new(vec![0.5], vec![], Transfer::PaperF, "model2").expect("valid preset")
    }

    /// MA(30) with coefficients 2, 1 and then `10 / k^2`.
    pub fn model3() -> Self {
        let ma = (1..=30)
            .map(|k| match k {
                1 => 2.0,
                2 => 1.0,
                _ => 10.0 / (k * k) as f64,
            })
            .collect();
        Self::new(vec![], ma, Transfer::PaperF, "model3").expect("valid preset")
    }

    pub fn with_transfer(mut self, transfer: Transfer) -> Self {
        self.transfer = transfer;
        self
    }

    /// A preset (`1`, `2`, `3` or `model1` ...) or the path of a model file.
    pub fn resolve(name: &str) -> Result<Self> {
        match name.trim() {
            "1" | "model1" => Ok(Self::model1()),
            "2" | "model2" => Ok(Self::model2()),
            "3" | "model3" => Ok(Self::model3()),
            path => Self::from_file(Path::new(path)),
        }
    }

    /// Reads `key = value` lines with keys `ar`, `ma` (comma-separated
    /// coefficients), `transfer` and `label`. Blank lines and `#` comments
    /// are ignored.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| {
            BootError::invalid(format!("cannot read model file {}: {e}", path.display()))
        })?;
        let mut ar = Vec::new();
        let mut ma = Vec::new();
        let mut transfer = Transfer::PaperF;
        let mut label = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "custom".to_string());
        for (key, value) in super::key_values(&text)? {
            match key.as_str() {
                "ar" => ar = parse_reals(&value)?,
                "ma" => ma = parse_reals(&value)?,
                "transfer" => transfer = value.parse()?,
                "label" => label = value,
                other => return Err(BootError::invalid(format!("unknown model key '{other}'"))),
            }
        }
        Self::new(ar, ma, transfer, label)
    }

    fn burn_in(&self) -> usize {
        if self.ar.is_empty() {
            0
        } else {
            AR_BURN_IN
        }
    }

    /// Latent ARMA path `W_1..W_n` driven by the stream `seed`.
    pub fn generate_latent(&self, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = rng::stream(seed, &[SERIES_STREAM]);
        let (p, q) = (self.ar.len(), self.ma.len());
        let burn = self.burn_in();
        let mut e: Vec<f64> = Vec::with_capacity(q + burn + n);
        e.extend((0..q).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let mut w = vec![0.0; burn + n];
        for t in 0..burn + n {
            let et: f64 = rng.sample(StandardNormal);
            e.push(et);
            let pos = q + t;
            let ma: f64 = self
                .ma
                .iter()
                .enumerate()
                .map(|(j, th)| th * e[pos - 1 - j])
                .sum();
            let ar: f64 = self
                .ar
                .iter()
                .enumerate()
                .take(t.min(p))
                .map(|(i, phi)| phi * w[t - 1 - i])
                .sum();
            w[t] = ar + et + ma;
        }
        w.split_off(burn)
    }

    /// `(W, Y)` paths of length `n`.
    pub fn generate_paths(&self, n: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
        let w = self.generate_latent(n, seed);
        let y = w.iter().map(|&v| self.transfer.apply(v)).collect();
        (w, y)
    }

    fn oracle_key(&self, spec: &StatisticSpec) -> String {
        let coeffs = |v: &[f64]| {
            v.iter()
                .map(|c| format!("{:016x}", c.to_bits()))
                .collect::<Vec<_>>()
                .join(",")
        };
        format!(
            "ar[{}];ma[{}];{};{};{};{:x}",
            coeffs(&self.ar),
            coeffs(&self.ma),
            self.transfer,
            spec,
            ORACLE_LEN,
            ORACLE_SEED
        )
    }
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label)
    }
}

fn parse_reals(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse()
                .map_err(|_| BootError::invalid(format!("cannot parse coefficient '{t}'")))
        })
        .collect()
}

pub fn generate_series(model: &ModelSpec, n: usize, seed: u64) -> Result<SeriesSample> {
    if n < 2 {
        return Err(BootError::invalid(format!(
            "series length must be at least 2, got {n}"
        )));
    }
    SeriesSample::new(model.generate_paths(n, seed).1)
}

fn cache_dir() -> PathBuf {
    std::env::var_os(CACHE_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("mfboot-oracle"))
}

fn memo() -> &'static Mutex<HashMap<String, f64>> {
    static MEMO: OnceLock<Mutex<HashMap<String, f64>>> = OnceLock::new();
    MEMO.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Value of `spec` on one very long path of `model` with a fixed seed,
/// cached in memory and on disk.
pub fn true_parameter(model: &ModelSpec, spec: &StatisticSpec) -> Result<f64> {
    if matches!(spec, StatisticSpec::Spectral { .. }) {
        return Err(BootError::invalid(
            "no truth oracle for spectral statistics",
        ));
    }
    spec.validate()?;
    let key = model.oracle_key(spec);
    if let Some(&v) = memo().lock().expect("oracle memo").get(&key) {
        return Ok(v);
    }
    let file = cache_dir().join(format!("{:016x}.txt", rng::label(&key)));
    let cached = fs::read_to_string(&file).ok().and_then(|text| {
        let mut lines = text.lines();
        (lines.next()? == key).then_some(())?;
        u64::from_str_radix(lines.next()?.trim(), 16)
            .ok()
            .map(f64::from_bits)
    });
    let value = match cached {
        Some(v) => v,
        None => {
            let y = model.generate_paths(ORACLE_LEN, ORACLE_SEED).1;
            let v = spec.evaluate(&y)?;
            store(&file, &key, v);
            v
        }
    };
    memo().lock().expect("oracle memo").insert(key, value);
    Ok(value)
}

/// Best-effort write; a missing cache only costs recomputation.
fn store(file: &Path, key: &str, value: f64) {
    let Some(dir) = file.parent() else { return };
    if fs::create_dir_all(dir).is_err() {
        return;
    }
    let tmp = file.with_extension(format!("tmp{}", std::process::id()));
    if fs::write(&tmp, format!("{key}\n{:016x}\n", value.to_bits())).is_ok() {
        let _ = fs::rename(&tmp, file);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::statistic::centered_autocovariance;
    use crate::transform::mean;

    #[test]
    fn transfer_values() {
        assert_eq!(paper_f(-4.0), -2.0);
        assert_eq!(paper_f(0.0), 0.1);
        assert!((paper_f(1.0) - 0.4).abs() < 1e-15);
    }

    #[test]
    fn presets_match_coefficient_lists() {
        assert_eq!(ModelSpec::model1().ma, vec![-0.5]);
        assert!(ModelSpec::model1().ar.is_empty());
        assert_eq!(ModelSpec::model2().ar, vec![0.5]);
        let m3 = ModelSpec::model3();
        assert_eq!(m3.ma.len(), 30);
        assert_eq!((m3.ma[0], m3.ma[1]), (2.0, 1.0));
        for k in 3..=30 {
            assert_eq!(m3.ma[k - 1], 10.0 / (k * k) as f64);
        }
    }

    #[test]
    fn non_causal_ar_is_rejected() {
        assert!(ModelSpec::new(vec![1.2], vec![], Transfer::Identity, "x").is_err());
        assert!(ModelSpec::new(vec![0.5, 0.6], vec![], Transfer::Identity, "x").is_err());
        assert!(ModelSpec::new(vec![0.5, 0.3], vec![], Transfer::Identity, "x").is_ok());
    }

    #[test]
    fn arma_moments() {
        let w = ModelSpec::model1()
            .with_transfer(Transfer::Identity)
            .generate_latent(100_000, 1);
        let m = mean(&w);
        assert!((centered_autocovariance(&w, m, 0) - 1.25).abs() < 0.03);
        assert!((centered_autocovariance(&w, m, 1) + 0.5).abs() < 0.03);

        let w = ModelSpec::model2()
            .with_transfer(Transfer::Identity)
            .generate_latent(100_000, 2);
        let m = mean(&w);
        let r1 = centered_autocovariance(&w, m, 1) / centered_autocovariance(&w, m, 0);
        assert!((r1 - 0.5).abs() < 0.02);
    }

    #[test]
    fn generation_is_deterministic() {
        let m = ModelSpec::model3();
        assert_eq!(
            generate_series(&m, 300, 9).unwrap(),
            generate_series(&m, 300, 9).unwrap()
        );
        assert_ne!(
            generate_series(&m, 300, 9).unwrap(),
            generate_series(&m, 300, 10).unwrap()
        );
        assert!(generate_series(&m, 1, 9).is_err());
    }

    #[test]
    fn model_file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("arma.txt");
        fs::write(
            &path,
            "# custom\nar = 0.4, -0.2\nma = 0.3\ntransfer = identity\nlabel = mine\n",
        )
        .unwrap();
        let m = ModelSpec::resolve(path.to_str().unwrap()).unwrap();
        assert_eq!(
            m,
            ModelSpec::new(vec![0.4, -0.2], vec![0.3], Transfer::Identity, "mine").unwrap()
        );
        fs::write(&path, "ar = 0.4\ncolour = red\n").unwrap();
        assert!(ModelSpec::from_file(&path).is_err());
    }
}
