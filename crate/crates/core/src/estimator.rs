//! The end-to-end estimator: hyperparameter schedule, random initialization,
//! optional oracle planting, gradient descent and truncated prediction.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Uniform;
use serde::{Deserialize, Serialize};

use crate::construct::{ceil_log2, embed_blueprints, SubnetBlueprint};
use crate::error::{Error, Result};
use crate::network::{forward, Topology, WeightIndex, WeightVector};
use crate::taylor::smoothness_split;
use crate::training::{run_gd, truncate, Dataset, DescentTrace, GdConfig};

/// Largest number of descent steps [`fit`] will run. The theorem's `t_n` is
/// usually far beyond this; set a desk-scale override instead.
pub const MAX_STEPS: u64 = 10_000_000;

/// Free constants of the schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConstants {
    /// Half-width of the hidden-layer initialization.
    pub c1: f64,
    /// Scale of the input-layer initialization `c2·ln(n)·n^τ`.
    pub c2: f64,
    /// `β_n = c3·ln n`.
    pub c3: f64,
    /// `λ_n = c5 / (n·K_n³)`.
    pub c5: f64,
    /// `t_n = ⌈c6·K_n³/β_n⌉`.
    pub c6: f64,
}

impl Default for ScheduleConstants {
    fn default() -> Self {
        Self {
            c1: 1.0,
            c2: 1.0,
            c3: 10.0 / std::f64::consts::LN_10,
            c5: 1.0,
            c6: 1.0,
        }
    }
}

impl ScheduleConstants {
    fn validate(&self) -> Result<()> {
        for (name, v) in [("c1", self.c1), ("c2", self.c2), ("c3", self.c3), ("c5", self.c5), ("c6", self.c6)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive and finite, got {v}")));
            }
        }
        Ok(())
    }
}

/// Hyperparameters for sample size `n`, computed from the smoothness
/// `(p, C)` and the input dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoremSchedule {
    pub p: f64,
    pub c: f64,
    pub d: usize,
    pub n: usize,
    pub q: usize,
    pub beta: f64,
    pub depth: usize,
    pub width: usize,
    pub tau: f64,
    /// `β_n`, also the truncation level of the predictor.
    pub truncation: f64,
    /// `λ_n`.
    pub step_size: f64,
    /// `t_n`.
    pub steps: u64,
    /// `K_n`.
    pub subnets: usize,
    pub constants: ScheduleConstants,
    /// `K_n` must outgrow `n` raised to this power.
    pub required_subnet_exponent: u64,
    pub step_size_override: Option<f64>,
    pub steps_override: Option<usize>,
    /// Set when `p < 1/2`: the schedule is computed but carries no guarantee.
    pub warning: Option<String>,
}

impl TheoremSchedule {
    pub fn from_theorem(
        p: f64,
        c: f64,
        d: usize,
        n: usize,
        subnets: usize,
        constants: ScheduleConstants,
    ) -> Result<Self> {
        if !(p > 0.0 && p.is_finite()) {
            return Err(Error::Config(format!("smoothness p must be positive, got {p}")));
        }
        if !(c > 0.0) {
            return Err(Error::Config(format!("smoothness constant C must be positive, got {c}")));
        }
        if d == 0 {
            return Err(Error::Config("input dimension must be at least 1".into()));
        }
        if n < 2 {
            return Err(Error::Config(format!("sample size must be at least 2, got {n}")));
        }
        if subnets == 0 {
            return Err(Error::Config("need at least one subnet".into()));
        }
        constants.validate()?;
        let (q, beta) = smoothness_split(p);
        let depth = ceil_log2(q + d) + 1;
        let width = 2 * ((2.0 * p + d as f64).powi(2)).ceil() as usize;
        let tau = 1.0 / (2.0 * p + d as f64);
        let nf = n as f64;
        let kf = subnets as f64;
        let truncation = constants.c3 * nf.ln();
        let step_size = constants.c5 / (nf * kf.powi(3));
        let steps = (constants.c6 * kf.powi(3) / truncation).ceil().min(u64::MAX as f64) as u64;
        let (r, l) = (width as u64, depth as u64);
        let required_subnet_exponent = 4 * r * (r + 1) * (l - 1) + r * (4 * d as u64 + 6) + 6;
        let warning = (p < 0.5).then(|| {
            format!("p = {p} < 1/2: the schedule is computed but the rate guarantee does not apply")
        });
        Ok(Self {
            p,
            c,
            d,
            n,
            q,
            beta,
            depth,
            width,
            tau,
            truncation,
            step_size,
            steps: steps.max(1),
            subnets,
            constants,
            required_subnet_exponent,
            step_size_override: None,
            steps_override: None,
            warning,
        })
    }

    pub fn with_step_size(mut self, step_size: f64) -> Self {
        self.step_size_override = Some(step_size);
        self
    }

    pub fn with_steps(mut self, steps: usize) -> Self {
        self.steps_override = Some(steps);
        self
    }

    pub fn effective_step_size(&self) -> f64 {
        self.step_size_override.unwrap_or(self.step_size)
    }

    pub fn effective_steps(&self) -> u64 {
        self.steps_override.map_or(self.steps, |s| s as u64)
    }

    pub fn topology(&self) -> Result<Topology> {
        Topology::new(self.d, self.subnets, self.depth, self.width)
    }

    /// Half-width `c2·ln(n)·n^τ` of the input-layer initialization.
    pub fn input_init_range(&self) -> f64 {
        let nf = self.n as f64;
        self.constants.c2 * nf.ln() * nf.powf(self.tau)
    }

    /// `log10` of the smallest `K_n` the theorem asks for at this `n`.
    pub fn required_subnets_log10(&self) -> f64 {
        self.required_subnet_exponent as f64 * (self.n as f64).log10()
    }
}

/// Grid cells per axis for the planted oracle:
/// `⌈K̃^(1/d)⌉` with `K̃ = ⌈c·n^(d/(2p+d))⌉` cells in total.
pub fn planted_cells_per_axis(n: usize, p: f64, d: usize, c: f64) -> usize {
    let total = (c * (n as f64).powf(d as f64 / (2.0 * p + d as f64))).ceil().max(1.0);
    let per_axis = total.powf(1.0 / d as f64);
    // Guard against `8^(1/3) = 1.9999…`.
    let rounded = per_axis.round();
    let k = if (per_axis - rounded).abs() < 1e-9 { rounded } else { per_axis.ceil() };
    k.max(1.0) as usize
}

fn check_schedule_topology(t: &Topology, s: &TheoremSchedule) -> Result<()> {
    if t.input_dim != s.d || t.depth != s.depth || t.width != s.width || t.subnets != s.subnets {
        return Err(Error::Config(format!(
            "topology (d={}, K={}, L={}, r={}) does not match schedule (d={}, K={}, L={}, r={})",
            t.input_dim, t.subnets, t.depth, t.width, s.d, s.subnets, s.depth, s.width
        )));
    }
    Ok(())
}

/// Random start: output weights zero, hidden layers uniform on `[−c1, c1]`,
/// input layer uniform on `[−c2·ln(n)·n^τ, c2·ln(n)·n^τ]`.
pub fn init_weights(topology: Topology, schedule: &TheoremSchedule, seed: u64) -> Result<WeightVector> {
    check_schedule_topology(&topology, schedule)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let outer = schedule.input_init_range();
    let input_law = Uniform::new_inclusive(-outer, outer);
    let hidden_law = Uniform::new_inclusive(-schedule.constants.c1, schedule.constants.c1);
    let mut w = WeightVector::zeros(topology);
    let first = topology.layer_cols(0) * topology.width;
    for k in 0..topology.subnets {
        for (i, v) in w.subnet_mut(k).iter_mut().enumerate() {
            *v = if i < first {
                rng.sample(input_law)
            } else {
                rng.sample(hidden_law)
            };
        }
    }
    Ok(w)
}

/// Overwrites the inner weights of subnets `0..blueprints.len()` with the
/// blueprints' inner weights plus independent uniform noise on
/// `[−epsilon, epsilon]`. Output weights are left untouched.
pub fn plant_oracle(
    w0: &WeightVector,
    blueprints: &[SubnetBlueprint],
    epsilon: f64,
    seed: u64,
) -> Result<WeightVector> {
    if !(epsilon >= 0.0 && epsilon.is_finite()) {
        return Err(Error::Config(format!("planting noise must be non-negative, got {epsilon}")));
    }
    let topology = *w0.topology();
    if blueprints.len() > topology.subnets {
        return Err(Error::Slots(format!(
            "{} blueprints do not fit into {} subnets",
            blueprints.len(),
            topology.subnets
        )));
    }
    let slots: Vec<usize> = (0..blueprints.len()).collect();
    let oracle = embed_blueprints(blueprints, topology, &slots)?;
    let mut w = w0.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let noise = (epsilon > 0.0).then(|| Uniform::new_inclusive(-epsilon, epsilon));
    for k in 0..blueprints.len() {
        let dst = w.subnet_mut(k);
        dst.copy_from_slice(oracle.subnet(k));
        if let Some(law) = noise {
            for v in dst.iter_mut() {
                *v += rng.sample(law);
            }
        }
    }
    Ok(w)
}

/// How [`fit`] chooses its starting point.
#[derive(Debug, Clone)]
pub enum FitMode {
    Random,
    Planted {
        blueprints: Vec<SubnetBlueprint>,
        epsilon: f64,
    },
}

/// Result of one [`fit`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitReport {
    pub schedule: TheoremSchedule,
    pub trace: DescentTrace,
    pub wall_time: Duration,
}

impl FitReport {
    /// `T_{β_n} f_{w^(t_n)}(x)`.
    pub fn predict(&self, x: &[f64]) -> f64 {
        truncate(forward(&self.trace.final_weights, x), self.schedule.truncation)
    }

    pub fn weights(&self) -> &WeightVector {
        &self.trace.final_weights
    }

    pub fn initial_risk(&self) -> f64 {
        self.trace.risks[0]
    }

    pub fn final_risk(&self) -> f64 {
        self.trace.final_risk()
    }
}

/// Initializes (and optionally plants), then runs plain gradient descent
/// with the schedule's effective step size and step count.
pub fn fit(data: &Dataset, schedule: &TheoremSchedule, mode: &FitMode, seed: u64) -> Result<FitReport> {
    let start = Instant::now();
    if data.is_empty() {
        return Err(Error::Dataset("cannot fit an empty dataset".into()));
    }
    if data.dim() != schedule.d {
        return Err(Error::Dataset(format!(
            "data has dimension {}, schedule expects {}",
            data.dim(),
            schedule.d
        )));
    }
    let steps = schedule.effective_steps();
    if steps > MAX_STEPS {
        return Err(Error::Config(format!(
            "{steps} descent steps requested (limit {MAX_STEPS}); set a step-count override"
        )));
    }
    let topology = schedule.topology()?;
    let mut w0 = init_weights(topology, schedule, seed)?;
    if let FitMode::Planted { blueprints, epsilon } = mode {
        w0 = plant_oracle(&w0, blueprints, *epsilon, seed)?;
    }
    let cfg = GdConfig {
        seed,
        ..GdConfig::plain(schedule.effective_step_size(), steps as usize, schedule.truncation)
    };
    let trace = run_gd(&w0, data, &cfg)?;
    Ok(FitReport {
        schedule: schedule.clone(),
        trace,
        wall_time: start.elapsed(),
    })
}

/// Output weights of a weight vector, for checks that they are zero.
pub fn output_slice(w: &WeightVector) -> Vec<f64> {
    (0..w.topology().subnets)
        .map(|k| w.get(WeightIndex::Output { subnet: k }))
        .collect()
}
