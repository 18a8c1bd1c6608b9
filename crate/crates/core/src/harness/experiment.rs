//! Monte Carlo coverage experiments.

use std::cell::OnceCell;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;

use super::model::{true_parameter, ModelSpec, ORACLE_SEED};
use crate::baselines::{
    ar_sieve_ci, ar_sieve_pi, block_bootstrap_ci, BlockConfig, DEFAULT_BLOCK_CONSTANT,
};
use crate::bootstrap::{
    bootstrap_roots_prepared, BootstrapConfig, ConfidenceInterval, PreparedTransform, Variant,
    FAILURE_BUDGET,
};
use crate::error::{BootError, Result};
use crate::prediction::{run_pi, Loss, PredictionConfig, PredictorKind, DEFAULT_DRAWS};
use crate::rng::{derive_seed, label};
use crate::statistic::StatisticSpec;
use crate::transform::{CdfKind, SeriesSample};

/// Smallest number of experiments per cell.
pub const MIN_REPLICATIONS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    MfKer,
    MfEmp,
    LmfKer,
    LmfEmp,
    Bb,
    ArSieve,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::MfKer,
        Method::MfEmp,
        Method::LmfKer,
        Method::LmfEmp,
        Method::Bb,
        Method::ArSieve,
    ];

    /// Variant and CDF kind for the model-free methods.
    pub fn model_free(self) -> Option<(Variant, CdfKind)> {
        match self {
            Method::MfKer => Some((Variant::Mf, CdfKind::Kernel)),
            Method::MfEmp => Some((Variant::Mf, CdfKind::Empirical)),
            Method::LmfKer => Some((Variant::Lmf, CdfKind::Kernel)),
            Method::LmfEmp => Some((Variant::Lmf, CdfKind::Empirical)),
            Method::Bb | Method::ArSieve => None,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::MfKer => "mf-ker",
            Method::MfEmp => "mf-emp",
            Method::LmfKer => "lmf-ker",
            Method::LmfEmp => "lmf-emp",
            Method::Bb => "bb",
            Method::ArSieve => "ar-sieve",
        })
    }
}

impl FromStr for Method {
    type Err = BootError;
    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.to_string() == s.trim())
            .ok_or_else(|| BootError::invalid(format!("unknown method '{s}'")))
    }
}

/// What an experiment scores: a confidence interval for a statistic or a
/// prediction interval for the next observation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Target {
    Statistic(StatisticSpec),
    Prediction(Loss),
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Target::Statistic(s) => write!(f, "{s}"),
            Target::Prediction(loss) => write!(f, "pi:{loss}"),
        }
    }
}

impl FromStr for Target {
    type Err = BootError;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().strip_prefix("pi:") {
            Some(loss) => Ok(Target::Prediction(loss.parse()?)),
            None => Ok(Target::Statistic(s.parse()?)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub model: ModelSpec,
    pub n_grid: Vec<usize>,
    /// Experiments per cell (`N`).
    pub replications: usize,
    /// Bootstrap replicates per interval (`B`).
    pub replicates: usize,
    pub alpha: f64,
    pub methods: Vec<Method>,
    pub targets: Vec<Target>,
    pub seed: u64,
    /// Worker threads; 0 uses the global pool.
    pub parallelism: usize,
    pub block_constant: f64,
    /// Monte Carlo draws for the LMF predictors.
    pub draws: usize,
}

impl ExperimentConfig {
    pub fn new(
        model: ModelSpec,
        n_grid: Vec<usize>,
        methods: Vec<Method>,
        targets: Vec<Target>,
    ) -> Self {
        Self {
            model,
            n_grid,
            replications: 200,
            replicates: 250,
            alpha: 0.05,
            methods,
            targets,
            seed: 0,
            parallelism: 0,
            block_constant: DEFAULT_BLOCK_CONSTANT,
            draws: DEFAULT_DRAWS,
        }
    }

    /// Parses `key = value` lines. Required keys: `model`, `n`, `methods`,
    /// `statistics`. Optional: `N`, `B`, `alpha`, `seed`, `parallelism`,
    /// `transfer`, `block_constant`, `draws`. Lists are comma-separated;
    /// prediction targets are written `pi:l2` or `pi:l1`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut model = None;
        let mut transfer = None;
        let mut n_grid = None;
        let mut methods = None;
        let mut targets = None;
        let mut rest = Vec::new();
        for (key, value) in super::key_values(text)? {
            match key.as_str() {
                "model" => model = Some(ModelSpec::resolve(&value)?),
                "transfer" => transfer = Some(value.parse()?),
                "n" => n_grid = Some(parse_list(&value, |t| parse_num(t, "n"))?),
                "methods" => methods = Some(parse_list(&value, str::parse)?),
                "statistics" => targets = Some(parse_list(&value, str::parse)?),
                _ => rest.push((key, value)),
            }
        }
        let missing = |k: &str| BootError::invalid(format!("experiment config is missing '{k}'"));
        let mut model: ModelSpec = model.ok_or_else(|| missing("model"))?;
        if let Some(t) = transfer {
            model = model.with_transfer(t);
        }
        let mut cfg = Self::new(
            model,
            n_grid.ok_or_else(|| missing("n"))?,
            methods.ok_or_else(|| missing("methods"))?,
            targets.ok_or_else(|| missing("statistics"))?,
        );
        for (key, value) in rest {
            match key.as_str() {
                "N" => cfg.replications = parse_num(&value, "N")?,
                "B" => cfg.replicates = parse_num(&value, "B")?,
                "alpha" => cfg.alpha = parse_num(&value, "alpha")?,
                "seed" => cfg.seed = parse_num(&value, "seed")?,
                "parallelism" => cfg.parallelism = parse_num(&value, "parallelism")?,
                "block_constant" => cfg.block_constant = parse_num(&value, "block_constant")?,
                "draws" => cfg.draws = parse_num(&value, "draws")?,
                other => return Err(BootError::invalid(format!("unknown config key '{other}'"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            BootError::invalid(format!("cannot read config {}: {e}", path.display()))
        })?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications < MIN_REPLICATIONS {
            return Err(BootError::invalid(format!(
                "at least {MIN_REPLICATIONS} experiments per cell are required, got {}",
                self.replications
            )));
        }
        if self.n_grid.is_empty() || self.methods.is_empty() || self.targets.is_empty() {
            return Err(BootError::invalid(
                "n grid, methods and statistics must be non-empty",
            ));
        }
        if let Some(&n) = self.n_grid.iter().find(|&&n| n < 2) {
            return Err(BootError::invalid(format!(
                "series length must be at least 2, got {n}"
            )));
        }
        if !(self.block_constant > 0.0) {
            return Err(BootError::invalid("block constant must be positive"));
        }
        crate::bootstrap::validate_run(self.replicates, self.alpha)?;
        PredictorKind::new(Loss::L2, self.draws)?;
        for target in &self.targets {
            match target {
                Target::Statistic(spec) => {
                    spec.validate()?;
                    if matches!(spec, StatisticSpec::Spectral { .. }) {
                        return Err(BootError::invalid(
                            "coverage experiments need a truth oracle; spectral targets have none",
                        ));
                    }
                    if self.methods.contains(&Method::Bb)
                        && spec.max_lag() >= crate::baselines::DEFAULT_EMBED_DIM
                    {
                        return Err(BootError::invalid(format!(
                            "the block bootstrap cannot target {spec}"
                        )));
                    }
                }
                Target::Prediction(_) => {
                    if self.methods.contains(&Method::Bb) {
                        return Err(BootError::invalid(
                            "the block bootstrap has no prediction interval",
                        ));
                    }
                }
            }
        }
        Ok(())
    }
}

fn parse_num<T: FromStr>(s: &str, key: &str) -> Result<T> {
    s.trim()
        .parse()
        .map_err(|_| BootError::invalid(format!("cannot parse '{s}' for '{key}'")))
}

fn parse_list<T>(s: &str, item: impl Fn(&str) -> Result<T>) -> Result<Vec<T>> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(item)
        .collect()
}

/// One simulated data set: the first `n` points and the held-out next one.
pub struct Experiment {
    pub sample: SeriesSample,
    pub future: f64,
    prepared: [OnceCell<PreparedTransform>; 2],
}

impl Experiment {
    fn prepared(&self, kind: CdfKind) -> Result<&PreparedTransform> {
        let cell = &self.prepared[match kind {
            CdfKind::Kernel => 0,
            CdfKind::Empirical => 1,
        }];
        if let Some(p) = cell.get() {
            return Ok(p);
        }
        let p = PreparedTransform::new(&self.sample, kind, &Default::default(), false)?;
        Ok(cell.get_or_init(|| p))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExperimentOutcome {
    pub lower: f64,
    pub upper: f64,
    pub covered: bool,
}

/// All experiments of one (method, target, n) combination.
#[derive(Debug, Clone, PartialEq)]
pub struct CoverageCell {
    pub method: Method,
    pub target: Target,
    pub n: usize,
    /// Truth for confidence-interval targets.
    pub truth: Option<f64>,
    /// Per-experiment outcomes in experiment order; `None` marks a failure.
    pub outcomes: Vec<Option<ExperimentOutcome>>,
}

impl CoverageCell {
    pub fn failures(&self) -> usize {
        self.outcomes.iter().filter(|o| o.is_none()).count()
    }

    /// Covered experiments over all experiments; failures count as misses.
    pub fn cvr(&self) -> f64 {
        let covered = self.outcomes.iter().flatten().filter(|o| o.covered).count();
        covered as f64 / self.outcomes.len() as f64
    }

    /// Mean width over successful experiments (NaN if none succeeded).
    pub fn mean_width(&self) -> f64 {
        let widths: Vec<f64> = self
            .outcomes
            .iter()
            .flatten()
            .map(|o| o.upper - o.lower)
            .collect();
        if widths.is_empty() {
            f64::NAN
        } else {
            widths.iter().sum::<f64>() / widths.len() as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoverageReport {
    pub model: String,
    pub replications: usize,
    pub replicates: usize,
    pub alpha: f64,
    /// Seed of the long path the truths were computed on.
    pub oracle_seed: u64,
    pub cells: Vec<CoverageCell>,
}

const DATA_STREAM: u64 = 0x4441;
const INTERVAL_STREAM: u64 = 0x494E;

/// Seed of the data set for experiment `index` at length `n`; it does not
/// depend on the number of experiments or on the methods compared.
pub fn experiment_seed(master: u64, n: usize, index: usize) -> u64 {
    derive_seed(master, &[DATA_STREAM, n as u64, index as u64])
}

fn interval_seed(master: u64, n: usize, index: usize, method: Method, target: &Target) -> u64 {
    derive_seed(
        master,
        &[
            INTERVAL_STREAM,
            n as u64,
            index as u64,
            label(&method.to_string()),
            label(&target.to_string()),
        ],
    )
}

fn simulate_experiment(model: &ModelSpec, n: usize, seed: u64) -> Result<Experiment> {
    let mut y = model.generate_paths(n + 1, seed).1;
    let future = y.pop().expect("n + 1 points");
    Ok(Experiment {
        sample: SeriesSample::new(y)?,
        future,
        prepared: [OnceCell::new(), OnceCell::new()],
    })
}

/// The interval a method produces on one experiment.
pub fn experiment_interval(
    cfg: &ExperimentConfig,
    exp: &Experiment,
    method: Method,
    target: &Target,
    seed: u64,
) -> Result<(f64, f64)> {
    let (b, alpha) = (cfg.replicates, cfg.alpha);
    let ci = |ci: ConfidenceInterval| (ci.lower, ci.upper);
    match (target, method.model_free()) {
        (Target::Statistic(spec), Some((variant, kind))) => {
            let theta_hat = spec.evaluate(exp.sample.values())?;
            let boot = BootstrapConfig::new(variant, kind, b, alpha, seed);
            let roots = bootstrap_roots_prepared(exp.prepared(kind)?, theta_hat, spec, &boot)?;
            Ok(ci(ConfidenceInterval::from_roots(
                &roots,
                alpha,
                method.to_string(),
            )))
        }
        (Target::Statistic(spec), None) => match method {
            Method::Bb => {
                let blocks = BlockConfig::for_len(exp.sample.len(), cfg.block_constant);
                Ok(ci(block_bootstrap_ci(
                    &exp.sample,
                    spec,
                    &blocks,
                    b,
                    alpha,
                    seed,
                )?
                .0))
            }
            _ => Ok(ci(ar_sieve_ci(&exp.sample, spec, b, alpha, seed)?.0)),
        },
        (Target::Prediction(loss), Some((variant, kind))) => {
            let predictor = PredictorKind::new(*loss, cfg.draws)?;
            let pcfg = PredictionConfig::new(variant, kind, predictor, b, alpha, seed);
            let pi = run_pi(&exp.sample, &pcfg)?.0;
            Ok((pi.lower, pi.upper))
        }
        (Target::Prediction(_), None) => match method {
            Method::ArSieve => {
                let pi = ar_sieve_pi(&exp.sample, b, alpha, seed)?.0;
                Ok((pi.lower, pi.upper))
            }
            _ => Err(BootError::invalid(format!(
                "{method} has no prediction interval"
            ))),
        },
    }
}

/// Runs every (method, target, n) cell of `cfg`.
pub fn run_coverage(cfg: &ExperimentConfig) -> Result<CoverageReport> {
    run_coverage_with(cfg, |exp, method, target, seed| {
        experiment_interval(cfg, exp, method, target, seed)
    })
}

/// As [`run_coverage`] with a caller-supplied interval rule.
pub fn run_coverage_with<F>(cfg: &ExperimentConfig, interval: F) -> Result<CoverageReport>
where
    F: Fn(&Experiment, Method, &Target, u64) -> Result<(f64, f64)> + Sync,
{
    cfg.validate()?;
    let truths: Vec<Option<f64>> = cfg
        .targets
        .iter()
        .map(|t| match t {
            Target::Statistic(spec) => true_parameter(&cfg.model, spec).map(Some),
            Target::Prediction(_) => Ok(None),
        })
        .collect::<Result<_>>()?;
    let pairs: Vec<(Method, usize)> = cfg
        .methods
        .iter()
        .flat_map(|&m| (0..cfg.targets.len()).map(move |t| (m, t)))
        .collect();

    let run = || -> Result<Vec<CoverageCell>> {
        let mut cells = Vec::new();
        for &n in &cfg.n_grid {
            let per_experiment: Vec<Vec<Option<ExperimentOutcome>>> = (0..cfg.replications)
                .into_par_iter()
                .map(|i| {
                    let exp = simulate_experiment(&cfg.model, n, experiment_seed(cfg.seed, n, i))?;
                    pairs
                        .iter()
                        .map(|&(method, t)| {
                            let target = &cfg.targets[t];
                            let seed = interval_seed(cfg.seed, n, i, method, target);
                            match interval(&exp, method, target, seed) {
                                Ok((lower, upper)) => {
                                    let point = truths[t].unwrap_or(exp.future);
                                    Ok(Some(ExperimentOutcome {
                                        lower,
                                        upper,
                                        covered: lower < point && point < upper,
                                    }))
                                }
                                Err(e) if e.is_numerical() => Ok(None),
                                Err(e) => Err(e),
                            }
                        })
                        .collect()
                })
                .collect::<Result<_>>()?;
            for (k, &(method, t)) in pairs.iter().enumerate() {
                let cell = CoverageCell {
                    method,
                    target: cfg.targets[t],
                    n,
                    truth: truths[t],
                    outcomes: per_experiment.iter().map(|row| row[k]).collect(),
                };
                let budget = (FAILURE_BUDGET * cfg.replications as f64).floor() as usize;
                let failed = cell.failures();
                if failed > budget {
                    return Err(BootError::ReplicateFailure {
                        failed,
                        attempted: cfg.replications,
                        budget,
                    });
                }
                cells.push(cell);
            }
        }
        Ok(cells)
    };
    let cells = if cfg.parallelism > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.parallelism)
            .build()
            .map_err(|e| BootError::invalid(format!("cannot start worker pool: {e}")))?
            .install(run)?
    } else {
        run()?
    };
    Ok(CoverageReport {
        model: cfg.model.label.clone(),
        replications: cfg.replications,
        replicates: cfg.replicates,
        alpha: cfg.alpha,
        oracle_seed: ORACLE_SEED,
        cells,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick(methods: Vec<Method>, targets: &str) -> ExperimentConfig {
        let text = format!(
            "model = 1\nn = 60, 80\nN = 50\nB = 100\nmethods = {}\nstatistics = {targets}\nseed = 3\n",
            methods.iter().map(|m| m.to_string()).collect::<Vec<_>>().join(", ")
        );
        ExperimentConfig::parse(&text).unwrap()
    }

    #[test]
    fn parsing() {
        let cfg = ExperimentConfig::parse(
            "# grid\nmodel = 2\ntransfer = identity\nn = 100, 200\nN = 60\nB = 120\nalpha = 0.1\n\
             methods = mf-ker, ar-sieve\nstatistics = mean, acov:1, pi:l1\nseed = 11\nparallelism = 1\n",
        )
        .unwrap();
        assert_eq!(cfg.n_grid, vec![100, 200]);
        assert_eq!(cfg.methods, vec![Method::MfKer, Method::ArSieve]);
        assert_eq!(cfg.targets[2], Target::Prediction(Loss::L1));
        assert_eq!(
            (cfg.replications, cfg.replicates, cfg.alpha, cfg.seed),
            (60, 120, 0.1, 11)
        );
        assert_eq!(cfg.model.transfer, super::super::model::Transfer::Identity);
        for bad in [
            "model = 1\nn = 100\nmethods = mf-ker\n",
            "model = 1\nn = 100\nmethods = mf-ker\nstatistics = mean\nN = 10\n",
            "model = 1\nn = 100\nmethods = bb\nstatistics = pi:l2\n",
            "model = 1\nn = 100\nmethods = mf-ker\nstatistics = spectral:0\n",
            "model = 1\nn = 100\nmethods = xx\nstatistics = mean\n",
            "model = 1\nn = 100\nmethods = mf-ker\nstatistics = mean\ncolour = red\n",
        ] {
            assert!(ExperimentConfig::parse(bad).is_err(), "{bad}");
        }
        for m in Method::ALL {
            assert_eq!(m.to_string().parse::<Method>().unwrap(), m);
        }
    }

    #[test]
    fn trivial_interval_rules() {
        let cfg = quick(vec![Method::MfEmp], "pi:l2");
        let all =
            run_coverage_with(&cfg, |_, _, _, _| Ok((f64::NEG_INFINITY, f64::INFINITY))).unwrap();
        assert!(all.cells.iter().all(|c| c.cvr() == 1.0));
        let none =
            run_coverage_with(&cfg, |e, _, _, _| Ok((e.sample.mean(), e.sample.mean()))).unwrap();
        assert!(none
            .cells
            .iter()
            .all(|c| c.cvr() == 0.0 && c.mean_width() == 0.0));
    }

    #[test]
    fn failures_are_counted_and_budgeted() {
        let mut cfg = quick(vec![Method::MfEmp], "pi:l2");
        cfg.n_grid = vec![60];
        // Fail on a fixed subset of data sets: 2 of 50 is within budget.
        let rule = |limit: f64| {
            move |e: &Experiment, _: Method, _: &Target, _: u64| {
                if e.future > limit {
                    Err(BootError::DegenerateSample("x".into()))
                } else {
                    Ok((-1e9, 1e9))
                }
            }
        };
        let mut futures: Vec<f64> = (0..50)
            .map(|i| {
                simulate_experiment(&cfg.model, 60, experiment_seed(3, 60, i))
                    .unwrap()
                    .future
            })
            .collect();
        futures.sort_unstable_by(f64::total_cmp);
        let report = run_coverage_with(&cfg, rule(futures[47] + 1e-12)).unwrap();
        assert_eq!(report.cells[0].failures(), 2);
        assert_eq!(report.cells[0].cvr(), 48.0 / 50.0);
        let err = run_coverage_with(&cfg, rule(futures[46] - 1e-12)).unwrap_err();
        assert!(matches!(err, BootError::ReplicateFailure { failed: 4, .. }));
    }

    #[test]
    fn real_methods_run_and_are_deterministic() {
        let cfg = quick(vec![Method::MfEmp, Method::ArSieve, Method::Bb], "mean");
        let a = run_coverage(&cfg).unwrap();
        assert_eq!(a, run_coverage(&cfg).unwrap());
        assert_eq!(a.cells.len(), 6);
        for c in &a.cells {
            let covered = c.cvr() * 50.0;
            assert!((covered - covered.round()).abs() < 1e-9);
            assert!(c.cvr() > 0.5, "{} {}", c.method, c.cvr());
        }
    }
}
