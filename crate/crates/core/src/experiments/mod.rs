//! Synthetic experiments: data generation, Monte Carlo `L2` error, the
//! convergence-rate study, the covering-number calculator and the
//! verification suites.

mod suites;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Normal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::construct::{assemble_taylor_net, AssemblyConfig};
use crate::error::{Error, Result};
use crate::estimator::{fit, planted_cells_per_axis, FitMode, FitReport, ScheduleConstants, TheoremSchedule};
use crate::taylor::{SmoothTarget, TargetSpec};
use crate::training::Dataset;

pub use suites::{verify_suite, Suite, Verdict, VerifyOptions};

/// Error means at or below this are treated as exact zeros by the slope fit.
pub const DEGENERATE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeSpec {
    Random,
    Planted,
}

/// Overrides for the theorem's step size and step count.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSpec {
    pub step_size: Option<f64>,
    pub steps: Option<usize>,
}

/// How the planted oracle is built: `⌈c·n^(d/(2p+d))⌉` grid cells, inner
/// weights perturbed by uniform noise of half-width `epsilon`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantingSpec {
    #[serde(default = "one")]
    pub cell_constant: f64,
    #[serde(default)]
    pub epsilon: f64,
}

impl Default for PlantingSpec {
    fn default() -> Self {
        Self {
            cell_constant: 1.0,
            epsilon: 0.0,
        }
    }
}

fn one() -> f64 {
    1.0
}

fn default_eval_points() -> usize {
    20_000
}

/// One experiment, read from a JSON file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub target: TargetSpec,
    /// Declared smoothness `(p, C)` of the target.
    pub p: f64,
    pub c: f64,
    /// `X` is uniform on `[−A, A]^d`.
    #[serde(default = "one")]
    pub half_width: f64,
    /// Standard deviation of the Gaussian noise.
    #[serde(default)]
    pub noise_sd: f64,
    pub n_grid: Vec<usize>,
    pub repetitions: usize,
    pub mode: ModeSpec,
    #[serde(default)]
    pub seed: u64,
    /// `K_n`.
    pub subnets: usize,
    #[serde(default)]
    pub constants: ScheduleConstants,
    #[serde(default)]
    pub training: TrainingSpec,
    #[serde(default)]
    pub planting: PlantingSpec,
    #[serde(default = "default_eval_points")]
    pub eval_points: usize,
    /// Fill the `wall_ms` column. Off by default so output is reproducible.
    #[serde(default)]
    pub timing: bool,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn dim(&self) -> usize {
        self.target.clone().into_fn().dim()
    }

    pub fn smooth_target(&self) -> Result<SmoothTarget> {
        SmoothTarget::from_spec(self.target.clone(), self.p, self.c, self.half_width)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_grid.is_empty() {
            return Err(Error::Config("n grid is empty".into()));
        }
        if self.n_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("n grid must be strictly increasing".into()));
        }
        if self.n_grid[0] < 2 {
            return Err(Error::Config("sample sizes must be at least 2".into()));
        }
        if self.repetitions == 0 {
            return Err(Error::Config("need at least one repetition".into()));
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return Err(Error::Config(format!("noise sd must be non-negative, got {}", self.noise_sd)));
        }
        if self.eval_points == 0 {
            return Err(Error::Config("need at least one evaluation point".into()));
        }
        if !(self.planting.cell_constant > 0.0) || !(self.planting.epsilon >= 0.0) {
            return Err(Error::Config("planting constants must be positive".into()));
        }
        self.smooth_target()?;
        Ok(())
    }

    /// Schedule for sample size `n` with the configured overrides.
    pub fn schedule(&self, n: usize) -> Result<TheoremSchedule> {
        let mut s = TheoremSchedule::from_theorem(self.p, self.c, self.dim(), n, self.subnets, self.constants)?;
        if let Some(h) = self.training.step_size {
            s = s.with_step_size(h);
        }
        if let Some(t) = self.training.steps {
            s = s.with_steps(t);
        }
        Ok(s)
    }
}

/// Seed for one `(n, rep)` cell, derived from the base seed by stream
/// selection so cells are independent of scheduling.
pub fn cell_seed(seed: u64, n: usize, rep: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((n as u64) << 32) ^ rep as u64);
    rng.next_u64()
}

/// `n` i.i.d. points uniform on `[−A, A]^d` with `Y = m(X) + N(0, s²)`.
pub fn generate_data(cfg: &ExperimentConfig, n: usize, seed: u64) -> Result<Dataset> {
    let m = cfg.target.clone().into_fn();
    let d = m.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let law = Uniform::new_inclusive(-cfg.half_width, cfg.half_width);
    let xs: Vec<f64> = (0..n * d).map(|_| rng.sample(law)).collect();
    let ys = if cfg.noise_sd > 0.0 {
        let noise = Normal::new(0.0, cfg.noise_sd).expect("validated sd");
        xs.chunks(d).map(|x| m.eval(x) + rng.sample(noise)).collect()
    } else {
        xs.chunks(d).map(|x| m.eval(x)).collect()
    };
    Dataset::new(d, xs, ys)
}

/// Monte Carlo estimate of `∫ |g − m|² dP_X` with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct L2Estimate {
    pub mean: f64,
    pub stderr: f64,
}

pub fn mc_l2_error(
    predictor: impl Fn(&[f64]) -> f64,
    target: impl Fn(&[f64]) -> f64,
    d: usize,
    a: f64,
    m_eval: usize,
    seed: u64,
) -> L2Estimate {
    assert!(m_eval >= 1, "need at least one evaluation point");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let law = Uniform::new_inclusive(-a, a);
    let mut x = vec![0.0; d];
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..m_eval {
        for v in x.iter_mut() {
            *v = rng.sample(law);
        }
        let e = (predictor(&x) - target(&x)).powi(2);
        sum += e;
        sum_sq += e * e;
    }
    let m = m_eval as f64;
    let mean = sum / m;
    let var = if m_eval > 1 {
        ((sum_sq - m * mean * mean) / (m - 1.0)).max(0.0)
    } else {
        0.0
    };
    L2Estimate {
        mean,
        stderr: (var / m).sqrt(),
    }
}

/// One `(n, rep)` cell of a rate study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub n: usize,
    pub rep: usize,
    pub seed: u64,
    pub l2_error: Option<f64>,
    pub stderr: Option<f64>,
    pub wall_ms: Option<f64>,
    /// Why the fit was aborted, when it was.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

/// Aggregate over the repetitions at one `n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeSummary {
    pub n: usize,
    pub mean: Option<f64>,
    /// Standard error of `mean` across repetitions.
    pub stderr: Option<f64>,
    pub completed: usize,
    pub failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub cells: Vec<CellResult>,
    pub sizes: Vec<SizeSummary>,
    /// OLS slope of `ln(mean error)` on `ln n`.
    pub slope: Option<f64>,
    pub intercept: Option<f64>,
    /// Set when some mean error is (numerically) zero, so no log-log fit.
    pub degenerate: bool,
    /// `−2p/(2p+d)`.
    pub theoretical_exponent: f64,
    pub failed_cells: usize,
    /// Sizes left out of the slope fit because every repetition failed.
    pub sizes_without_data: usize,
}

/// Ordinary least squares `y ≈ a + b·x`; returns `(b, a)`.
pub fn ols(xs: &[f64], ys: &[f64]) -> Option<(f64, f64)> {
    let n = xs.len();
    if n < 2 || ys.len() != n {
        return None;
    }
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let b = sxy / sxx;
    Some((b, my - b * mx))
}

fn run_cell(cfg: &ExperimentConfig, target: &SmoothTarget, n: usize, rep: usize) -> CellResult {
    let seed = cell_seed(cfg.seed, n, rep);
    let start = Instant::now();
    let outcome = (|| -> Result<(FitReport, u64)> {
        let schedule = cfg.schedule(n)?;
        let data = generate_data(cfg, n, seed)?;
        let mode = match cfg.mode {
            ModeSpec::Random => FitMode::Random,
            ModeSpec::Planted => {
                let cells = planted_cells_per_axis(n, cfg.p, schedule.d, cfg.planting.cell_constant);
                let net = assemble_taylor_net(target, &AssemblyConfig::new(cells, schedule.depth, schedule.width))?;
                FitMode::Planted {
                    blueprints: net.blueprints,
                    epsilon: cfg.planting.epsilon,
                }
            }
        };
        let report = fit(&data, &schedule, &mode, seed)?;
        let mut eval_rng = ChaCha8Rng::seed_from_u64(seed);
        eval_rng.set_stream(2);
        Ok((report, eval_rng.next_u64()))
    })();
    let wall_ms = cfg.timing.then(|| start.elapsed().as_secs_f64() * 1e3);
    match outcome {
        Ok((report, eval_seed)) => {
            let est = mc_l2_error(
                |x| report.predict(x),
                |x| target.eval(x),
                target.dim(),
                cfg.half_width,
                cfg.eval_points,
                eval_seed,
            );
            CellResult {
                n,
                rep,
                seed,
                l2_error: Some(est.mean),
                stderr: Some(est.stderr),
                wall_ms,
                failure: None,
            }
        }
        Err(e) => CellResult {
            n,
            rep,
            seed,
            l2_error: None,
            stderr: None,
            wall_ms,
            failure: Some(e.to_string()),
        },
    }
}

/// Fits the estimator on every `(n, rep)` cell and summarises the decay of
/// the `L2` error in `n`. Fit failures are recorded per cell.
pub fn rate_study(cfg: &ExperimentConfig) -> Result<RateReport> {
    cfg.validate()?;
    let target = cfg.smooth_target()?;
    let jobs: Vec<(usize, usize)> = cfg
        .n_grid
        .iter()
        .flat_map(|&n| (0..cfg.repetitions).map(move |rep| (n, rep)))
        .collect();
    let mut cells: Vec<CellResult> = jobs
        .par_iter()
        .map(|&(n, rep)| run_cell(cfg, &target, n, rep))
        .collect();
    cells.sort_by_key(|c| (c.n, c.rep));
    Ok(summarize(cells, cfg.p, target.dim()))
}

fn summarize(cells: Vec<CellResult>, p: f64, d: usize) -> RateReport {
    let mut by_n: BTreeMap<usize, Vec<&CellResult>> = BTreeMap::new();
    for c in &cells {
        by_n.entry(c.n).or_default().push(c);
    }
    let sizes: Vec<SizeSummary> = by_n
        .iter()
        .map(|(&n, cs)| {
            let errs: Vec<f64> = cs.iter().filter_map(|c| c.l2_error).collect();
            let k = errs.len();
            let mean = (k > 0).then(|| errs.iter().sum::<f64>() / k as f64);
            let stderr = mean.map(|m| {
                if k > 1 {
                    (errs.iter().map(|e| (e - m).powi(2)).sum::<f64>() / (k - 1) as f64 / k as f64).sqrt()
                } else {
                    0.0
                }
            });
            SizeSummary {
                n,
                mean,
                stderr,
                completed: k,
                failed: cs.len() - k,
            }
        })
        .collect();
    let usable: Vec<(f64, f64)> = sizes
        .iter()
        .filter_map(|s| s.mean.map(|m| (s.n as f64, m)))
        .collect();
    let degenerate = usable.iter().any(|&(_, m)| m <= DEGENERATE_FLOOR);
    let (slope, intercept) = if !degenerate && usable.len() >= 3 {
        let xs: Vec<f64> = usable.iter().map(|(n, _)| n.ln()).collect();
        let ys: Vec<f64> = usable.iter().map(|(_, m)| m.ln()).collect();
        match ols(&xs, &ys) {
            Some((b, a)) => (Some(b), Some(a)),
            None => (None, None),
        }
    } else {
        (None, None)
    };
    RateReport {
        failed_cells: cells.iter().filter(|c| c.l2_error.is_none()).count(),
        sizes_without_data: sizes.iter().filter(|s| s.mean.is_none()).count(),
        cells,
        sizes,
        slope,
        intercept,
        degenerate,
        theoretical_exponent: -2.0 * p / (2.0 * p + d as f64),
    }
}

#[derive(Serialize)]
struct CsvRow {
    n: usize,
    rep: usize,
    seed: u64,
    l2_error: Option<f64>,
    stderr: Option<f64>,
    wall_ms: Option<f64>,
}

impl RateReport {
    /// Writes one row per cell with header `n,rep,seed,l2_error,stderr,wall_ms`.
    /// Failed cells have empty error columns.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for c in &self.cells {
            w.serialize(CsvRow {
                n: c.n,
                rep: c.rep,
                seed: c.seed,
                l2_error: c.l2_error,
                stderr: c.stderr,
                wall_ms: c.wall_ms,
            })?;
        }
        w.flush()?;
        Ok(())
    }

    /// Everything except the per-cell rows.
    pub fn summary_json(&self) -> serde_json::Value {
        let failures: Vec<_> = self
            .cells
            .iter()
            .filter_map(|c| {
                c.failure
                    .as_ref()
                    .map(|f| serde_json::json!({ "n": c.n, "rep": c.rep, "error": f }))
            })
            .collect();
        serde_json::json!({
            "sizes": self.sizes,
            "slope": self.slope,
            "intercept": self.intercept,
            "degenerate": self.degenerate,
            "theoretical_exponent": self.theoretical_exponent,
            "failed_cells": self.failed_cells,
            "sizes_without_data": self.sizes_without_data,
            "failures": failures,
        })
    }
}

/// Parameters of the covering-number bound
/// `(c81·β^p/ε^p)^(c82·α^d·B^((L−1)d)·A^d·(C/ε)^(d/k) + c83)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoveringParams {
    pub alpha: f64,
    pub beta: f64,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub depth: usize,
    pub d: usize,
    /// Derivative order; `f64::INFINITY` is allowed.
    pub k: f64,
    pub epsilon: f64,
    pub p_norm: f64,
    pub c81: f64,
    pub c82: f64,
    pub c83: f64,
}

impl CoveringParams {
    /// All constants `c81..c83` set to 1.
    #[allow(clippy::too_many_arguments)]
    pub fn new(alpha: f64, beta: f64, a: f64, b: f64, c: f64, depth: usize, d: usize, k: f64, epsilon: f64, p_norm: f64) -> Self {
        Self {
            alpha,
            beta,
            a,
            b,
            c,
            depth,
            d,
            k,
            epsilon,
            p_norm,
            c81: 1.0,
            c82: 1.0,
            c83: 1.0,
        }
    }
}

/// Natural log of the covering-number bound.
pub fn covering_bound(p: &CoveringParams) -> Result<f64> {
    if !(p.epsilon > 0.0 && p.epsilon < 1.0) {
        return Err(Error::Config(format!("epsilon must lie in (0, 1), got {}", p.epsilon)));
    }
    for (name, v) in [("alpha", p.alpha), ("beta", p.beta), ("A", p.a), ("B", p.b), ("C", p.c)] {
        if !(v >= 1.0) || v.is_nan() {
            return Err(Error::Config(format!("{name} must be at least 1, got {v}")));
        }
    }
    if p.depth == 0 || p.d == 0 {
        return Err(Error::Config("depth and dimension must be at least 1".into()));
    }
    if !(p.k >= 1.0) {
        return Err(Error::Config(format!("derivative order must be at least 1, got {}", p.k)));
    }
    if !(p.p_norm >= 1.0 && p.p_norm.is_finite()) {
        return Err(Error::Config(format!("norm exponent must be finite and at least 1, got {}", p.p_norm)));
    }
    for (name, v) in [("c81", p.c81), ("c82", p.c82), ("c83", p.c83)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::Config(format!("{name} must be positive, got {v}")));
        }
    }
    let d = p.d as f64;
    let ratio = (p.c / p.epsilon).powf(d / p.k);
    let exponent = p.c82 * p.alpha.powf(d) * p.b.powf((p.depth - 1) as f64 * d) * p.a.powf(d) * ratio + p.c83;
    let log_base = p.c81.ln() + p.p_norm * (p.beta.ln() - p.epsilon.ln());
    Ok(exponent * log_base)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taylor::{AbsSum, Polynomial};

    fn config(target: TargetSpec, noise: f64) -> ExperimentConfig {
        ExperimentConfig {
            target,
            p: 1.0,
            c: 1.0,
            half_width: 1.0,
            noise_sd: noise,
            n_grid: vec![20, 40, 80],
            repetitions: 2,
            mode: ModeSpec::Planted,
            seed: 1,
            subnets: 16,
            constants: ScheduleConstants::default(),
            training: TrainingSpec {
                step_size: Some(0.05),
                steps: Some(50),
            },
            planting: PlantingSpec::default(),
            eval_points: 2000,
            timing: false,
            output: None,
        }
    }

    fn abs1() -> TargetSpec {
        TargetSpec::AbsSum(AbsSum { dim: 1 })
    }

    #[test]
    fn config_validation() {
        let mut c = config(abs1(), 0.1);
        assert!(c.validate().is_ok());
        c.n_grid = vec![20, 20, 40];
        assert!(c.validate().is_err());
        let mut c = config(abs1(), 0.1);
        c.repetitions = 0;
        assert!(c.validate().is_err());
        let c = config(abs1(), -1.0);
        assert!(c.validate().is_err());
    }

    #[test]
    fn config_json_round_trip() {
        let text = r#"{
            "target": {"kind": "abs_sum", "dim": 1},
            "p": 1.0, "c": 1.0,
            "n_grid": [50, 100, 200],
            "repetitions": 3,
            "mode": "planted",
            "subnets": 24,
            "training": {"step_size": 0.1, "steps": 100}
        }"#;
        let c = ExperimentConfig::from_json(text).unwrap();
        assert_eq!(c.half_width, 1.0);
        assert_eq!(c.eval_points, 20_000);
        assert!(!c.timing);
        let back = ExperimentConfig::from_json(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
        assert!(ExperimentConfig::from_json(r#"{"p": 1}"#).is_err());
    }

    #[test]
    fn noiseless_data_is_exact() {
        let c = config(abs1(), 0.0);
        let data = generate_data(&c, 100, 3).unwrap();
        for i in 0..data.len() {
            assert_eq!(data.y(i), data.x(i)[0].abs());
            assert!(data.x(i)[0].abs() <= 1.0);
        }
        assert_eq!(data, generate_data(&c, 100, 3).unwrap());
        assert_ne!(data, generate_data(&c, 100, 4).unwrap());
    }

    #[test]
    fn noise_is_centred() {
        let s = 0.5;
        let c = config(abs1(), s);
        let n = 100_000;
        let data = generate_data(&c, n, 8).unwrap();
        let mean: f64 = (0..n).map(|i| data.y(i) - data.x(i)[0].abs()).sum::<f64>() / n as f64;
        assert!(mean.abs() <= 4.0 * s / (n as f64).sqrt());
    }

    #[test]
    fn mc_error_closed_forms() {
        let e = mc_l2_error(|x| x[0], |x| x[0], 1, 1.0, 100, 0);
        assert_eq!((e.mean, e.stderr), (0.0, 0.0));
        let e = mc_l2_error(|_| 0.0, |_| 1.0, 2, 1.0, 100, 0);
        assert_eq!((e.mean, e.stderr), (1.0, 0.0));
        let e = mc_l2_error(|_| 0.0, |x| x[0], 1, 1.0, 100_000, 5);
        assert!((e.mean - 1.0 / 3.0).abs() <= 3.0 * e.stderr, "{e:?}");
    }

    #[test]
    fn mc_stderr_shrinks_like_inverse_root() {
        let se: Vec<f64> = [1_000, 10_000, 100_000]
            .iter()
            .map(|&m| mc_l2_error(|_| 0.0, |x| x[0], 1, 1.0, m, 17).stderr)
            .collect();
        for w in se.windows(2) {
            let r = w[0] / w[1];
            assert!((r / 10f64.sqrt() - 1.0).abs() <= 0.3, "{se:?}");
        }
    }

    #[test]
    fn cell_seeds_are_distinct_and_stable() {
        assert_eq!(cell_seed(1, 50, 0), cell_seed(1, 50, 0));
        assert_ne!(cell_seed(1, 50, 0), cell_seed(1, 50, 1));
        assert_ne!(cell_seed(1, 50, 0), cell_seed(1, 100, 0));
        assert_ne!(cell_seed(1, 50, 0), cell_seed(2, 50, 0));
    }

    #[test]
    fn ols_recovers_line() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 - 0.5 * x).collect();
        let (b, a) = ols(&xs, &ys).unwrap();
        assert!((b + 0.5).abs() < 1e-12 && (a - 2.0).abs() < 1e-12);
        assert!(ols(&[1.0, 1.0], &[0.0, 1.0]).is_none());
    }

    #[test]
    fn zero_target_is_degenerate() {
        let mut c = config(TargetSpec::Polynomial(Polynomial::constant(1, 0.0)), 0.0);
        c.mode = ModeSpec::Random;
        let r = rate_study(&c).unwrap();
        assert!(r.degenerate);
        assert!(r.slope.is_none());
        assert!(r.cells.iter().all(|c| c.l2_error == Some(0.0)));
    }

    #[test]
    fn failures_are_counted_not_fatal() {
        let mut c = config(abs1(), 0.1);
        c.training.step_size = Some(1e300);
        let r = rate_study(&c).unwrap();
        assert_eq!(r.failed_cells, 6);
        assert_eq!(r.sizes_without_data, 3);
        assert!(r.slope.is_none());
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("n,rep,seed,l2_error,stderr,wall_ms\n"));
        assert!(text.lines().nth(1).unwrap().ends_with(",,,"));
        assert_eq!(r.summary_json()["failures"].as_array().unwrap().len(), 6);
    }

    #[test]
    fn study_is_deterministic() {
        let c = config(abs1(), 0.1);
        let a = rate_study(&c).unwrap();
        let b = rate_study(&c).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.cells.len(), 6);
        assert!(a.slope.is_some());
        assert!(a.cells.iter().all(|c| c.wall_ms.is_none()));
    }

    #[test]
    fn covering_bound_plug_in() {
        let p = CoveringParams::new(1.0, 1.0, 1.0, 1.0, 1.0, 1, 1, 1.0, 0.5, 2.0);
        assert!((covering_bound(&p).unwrap() - 3.0 * 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn covering_bound_monotone() {
        let base = CoveringParams::new(2.0, 3.0, 1.5, 2.0, 2.0, 2, 2, 1.0, 0.5, 2.0);
        let at = |f: &dyn Fn(&mut CoveringParams)| {
            let mut p = base;
            f(&mut p);
            covering_bound(&p).unwrap()
        };
        let v = covering_bound(&base).unwrap();
        assert!(at(&|p| p.epsilon = 0.25) >= v);
        assert!(at(&|p| p.alpha = 3.0) >= v);
        assert!(at(&|p| p.a = 2.0) >= v);
        assert!(at(&|p| p.b = 3.0) >= v);
        assert!(at(&|p| p.c = 3.0) >= v);
    }

    #[test]
    fn covering_bound_infinite_order() {
        let mut p = CoveringParams::new(2.0, 1.0, 1.0, 2.0, 5.0, 2, 1, f64::INFINITY, 0.5, 2.0);
        let expected = (2.0 * 2.0 * 1.0 + 1.0) * 4f64.ln();
        assert!((covering_bound(&p).unwrap() - expected).abs() < 1e-12);
        p.epsilon = 0.1;
        // ε leaves the exponent and only enters the base.
        assert!((covering_bound(&p).unwrap() - 5.0 * 100f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn covering_bound_rejects_domain_errors() {
        let ok = CoveringParams::new(1.0, 1.0, 1.0, 1.0, 1.0, 1, 1, 1.0, 0.5, 2.0);
        for bad in [
            CoveringParams { epsilon: 1.0, ..ok },
            CoveringParams { epsilon: 0.0, ..ok },
            CoveringParams { alpha: 0.5, ..ok },
            CoveringParams { c: f64::NAN, ..ok },
            CoveringParams { depth: 0, ..ok },
        ] {
            assert!(covering_bound(&bad).is_err());
        }
    }
}
