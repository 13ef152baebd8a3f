//! Empirical risk, its gradient, and full-batch gradient descent.
//!
//! Besides the optimizer itself this module carries the empirical checks of
//! the descent guarantees: a sampled estimate of the smoothness constants
//! ([`lipschitz_probe`]), the projected-descent risk inequality
//! ([`verify_lemma1`]) and the certified input-gradient bound
//! ([`verify_derivative_bound`]).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{self, accumulate_param_grad, forward_with, Scratch, Topology, WeightVector};
use crate::sigmoid::SIGMA_PRIME_SUP;

/// Examples per parallel work unit. Partial sums are reduced in chunk order so
/// results do not depend on scheduling.
const CHUNK: usize = 64;

/// Radius below which the probe treats the ball as a single point.
pub const FROZEN_RADIUS: f64 = 1e-9;

/// `n` labelled points in `R^d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    dim: usize,
    xs: Vec<f64>,
    ys: Vec<f64>,
}

impl Dataset {
    /// Builds a dataset from row-major points.
    pub fn new(dim: usize, xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Dataset("dimension must be at least 1".into()));
        }
        if ys.is_empty() {
            return Err(Error::Dataset("dataset must contain at least one example".into()));
        }
        if xs.len() != dim * ys.len() {
            return Err(Error::Dataset(format!(
                "{} coordinates do not form {} points of dimension {dim}",
                xs.len(),
                ys.len()
            )));
        }
        Ok(Self { dim, xs, ys })
    }

    pub fn from_points(points: &[Vec<f64>], ys: Vec<f64>) -> Result<Self> {
        let dim = points.first().map(Vec::len).unwrap_or(0);
        if points.iter().any(|p| p.len() != dim) {
            return Err(Error::Dataset("points have differing dimensions".into()));
        }
        if points.len() != ys.len() {
            return Err(Error::Dataset(format!(
                "{} points but {} responses",
                points.len(),
                ys.len()
            )));
        }
        Self::new(dim, points.concat(), ys)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ys.is_empty()
    }

    pub fn x(&self, i: usize) -> &[f64] {
        &self.xs[i * self.dim..(i + 1) * self.dim]
    }

    pub fn y(&self, i: usize) -> f64 {
        self.ys[i]
    }

    pub fn ys(&self) -> &[f64] {
        &self.ys
    }

    pub fn with_responses(&self, ys: Vec<f64>) -> Result<Self> {
        Self::new(self.dim, self.xs.clone(), ys)
    }

    fn check(&self, w: &WeightVector) {
        assert_eq!(
            self.dim,
            w.topology().input_dim,
            "dataset dimension {} does not match network input dimension {}",
            self.dim,
            w.topology().input_dim
        );
    }
}

/// `F_n(w) = (1/n) Σ |Y_i − f_w(X_i)|²`.
pub fn empirical_risk(w: &WeightVector, data: &Dataset) -> f64 {
    data.check(w);
    let n = data.len();
    let partial: Vec<f64> = (0..n)
        .collect::<Vec<_>>()
        .par_chunks(CHUNK)
        .map(|idx| {
            let mut scratch = Scratch::new(w.topology());
            idx.iter()
                .map(|&i| {
                    let r = data.y(i) - forward_with(w, data.x(i), &mut scratch);
                    r * r
                })
                .sum::<f64>()
        })
        .collect();
    partial.iter().sum::<f64>() / n as f64
}

/// `(F_n(w), ∇_w F_n(w))` in one pass.
pub fn risk_and_gradient(w: &WeightVector, data: &Dataset) -> (f64, Vec<f64>) {
    data.check(w);
    let n = data.len();
    let len = w.len();
    let chunks: Vec<(f64, Vec<f64>)> = (0..n)
        .collect::<Vec<_>>()
        .par_chunks(CHUNK)
        .map(|idx| {
            let mut scratch = Scratch::new(w.topology());
            let mut grad = vec![0.0; len];
            let mut unit = vec![0.0; len];
            let mut sq = 0.0;
            for &i in idx {
                unit.iter_mut().for_each(|v| *v = 0.0);
                let f = accumulate_param_grad(w, data.x(i), 1.0, &mut unit, &mut scratch);
                let resid = f - data.y(i);
                sq += resid * resid;
                for (g, u) in grad.iter_mut().zip(&unit) {
                    *g += resid * u;
                }
            }
            (sq, grad)
        })
        .collect();
    let mut grad = vec![0.0; len];
    let mut sq = 0.0;
    for (s, g) in chunks {
        sq += s;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
    }
    let scale = 2.0 / n as f64;
    grad.iter_mut().for_each(|g| *g *= scale);
    (sq / n as f64, grad)
}

/// `∇_w F_n(w)` by backpropagation.
///
/// The partial for output weight `k` is `(2/n) Σ (f_w(X_s) − Y_s) f_{k,1}^{(L)}(X_s)`;
/// every inner partial carries a factor of the subnet's output weight.
pub fn gradient(w: &WeightVector, data: &Dataset) -> Vec<f64> {
    risk_and_gradient(w, data).1
}

/// Central-difference approximation of `∇_w F_n` with step `h`.
pub fn finite_difference_gradient(w: &WeightVector, data: &Dataset, h: f64) -> Vec<f64> {
    let mut probe = w.clone();
    (0..w.len())
        .map(|j| {
            let orig = w.values()[j];
            probe.values_mut()[j] = orig + h;
            let up = empirical_risk(&probe, data);
            probe.values_mut()[j] = orig - h;
            let down = empirical_risk(&probe, data);
            probe.values_mut()[j] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Euclidean projection onto the closed ball of `radius` around `center`.
pub fn project_ball(w: &WeightVector, center: &WeightVector, radius: f64) -> WeightVector {
    assert!(radius >= 0.0, "radius must be non-negative");
    let mut out = w.clone();
    project_in_place(out.values_mut(), center.values(), radius);
    out
}

fn project_in_place(w: &mut [f64], center: &[f64], radius: f64) {
    let dist = network::distance(w, center);
    if dist <= radius {
        return;
    }
    let s = radius / dist;
    for (v, c) in w.iter_mut().zip(center) {
        *v = c + s * (*v - c);
    }
}

/// `T_β z = max(min(z, β), −β)`.
#[inline]
pub fn truncate(z: f64, beta: f64) -> f64 {
    assert!(beta > 0.0, "truncation level must be positive");
    z.clamp(-beta, beta)
}

/// Closed ball constraint for projected descent.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub center: WeightVector,
    pub radius: f64,
}

/// Gradient descent schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct GdConfig {
    pub step_size: f64,
    pub steps: usize,
    pub projection: Option<Projection>,
    /// Truncation level `β_n` applied by predictors built from the run.
    pub truncation: f64,
    pub seed: u64,
}

impl GdConfig {
    pub fn plain(step_size: f64, steps: usize, truncation: f64) -> Self {
        Self {
            step_size,
            steps,
            projection: None,
            truncation,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step_size >= 0.0 && self.step_size.is_finite()) {
            return Err(Error::Config(format!(
                "step size must be finite and non-negative, got {}",
                self.step_size
            )));
        }
        if !(self.truncation > 0.0) {
            return Err(Error::Config("truncation level must be positive".into()));
        }
        if let Some(p) = &self.projection {
            if !(p.radius >= 0.0) {
                return Err(Error::Config("projection radius must be non-negative".into()));
            }
        }
        Ok(())
    }
}

/// Per-step record of a descent run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescentTrace {
    /// `F_n(w^(t))` for `t = 0..=steps`.
    pub risks: Vec<f64>,
    /// `‖w^(t) − w^(0)‖` for `t = 0..=steps`.
    pub drifts: Vec<f64>,
    pub final_weights: WeightVector,
}

impl DescentTrace {
    pub fn steps(&self) -> usize {
        self.risks.len() - 1
    }

    pub fn final_risk(&self) -> f64 {
        *self.risks.last().expect("trace is never empty")
    }
}

/// Runs `cfg.steps` full-batch gradient steps from `w0`, projecting after each
/// step when a ball is configured.
pub fn run_gd(w0: &WeightVector, data: &Dataset, cfg: &GdConfig) -> Result<DescentTrace> {
    cfg.validate()?;
    if let Some(p) = &cfg.projection {
        assert_eq!(p.center.topology(), w0.topology(), "projection center topology mismatch");
    }
    let mut w = w0.clone();
    let mut risks = Vec::with_capacity(cfg.steps + 1);
    let mut drifts = Vec::with_capacity(cfg.steps + 1);
    for step in 0..=cfg.steps {
        let last = step == cfg.steps;
        let (risk, grad) = if last {
            (empirical_risk(&w, data), Vec::new())
        } else {
            risk_and_gradient(&w, data)
        };
        if !risk.is_finite() {
            return Err(Error::NonFiniteRisk {
                step,
                step_size: cfg.step_size,
            });
        }
        risks.push(risk);
        drifts.push(w.distance(w0));
        if last {
            break;
        }
        for (v, g) in w.values_mut().iter_mut().zip(&grad) {
            *v -= cfg.step_size * g;
        }
        if let Some(p) = &cfg.projection {
            project_in_place(w.values_mut(), p.center.values(), p.radius);
        }
        if w.values().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteRisk {
                step: step + 1,
                step_size: cfg.step_size,
            });
        }
    }
    Ok(DescentTrace {
        risks,
        drifts,
        final_weights: w,
    })
}

/// Sampled smoothness constants over a ball of weight vectors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LipschitzEstimate {
    /// Largest observed `‖∂_w f_{w1}(x) − ∂_w f_{w2}(x)‖ / ‖w1 − w2‖` over
    /// sampled pairs and data points.
    pub network_lipschitz: f64,
    /// Largest observed `‖∇F_n(w)‖`.
    pub gradient_bound: f64,
    /// Largest observed `‖∇F_n(w1) − ∇F_n(w2)‖ / ‖w1 − w2‖`.
    pub risk_lipschitz: f64,
}

/// Point at a uniformly drawn distance `ρ ∈ [0, radius]` in a uniformly
/// drawn direction. Radially uniform rather than volume-uniform: in high
/// dimension the latter puts almost every point on the boundary shell.
fn sample_in_ball(rng: &mut ChaCha8Rng, center: &[f64], radius: f64) -> Vec<f64> {
    let dir = random_unit(rng, center.len());
    let rho = radius * rng.gen::<f64>();
    center.iter().zip(&dir).map(|(c, d)| c + rho * d).collect()
}

fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    let mut dir: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
    let len = network::norm(&dir).max(f64::MIN_POSITIVE);
    dir.iter_mut().for_each(|v| *v /= len);
    dir
}

/// Approximate top eigenvector of the risk Hessian at `a`, by power
/// iteration on finite-difference Hessian-vector products.
fn top_curvature_direction(
    topo: Topology,
    a: &[f64],
    grad_a: &[f64],
    data: &Dataset,
    h: f64,
    start: Vec<f64>,
) -> Vec<f64> {
    let mut v = start;
    for _ in 0..POWER_STEPS {
        let shifted: Vec<f64> = a.iter().zip(&v).map(|(x, d)| x + h * d).collect();
        let g = gradient(&WeightVector::from_values(topo, shifted).expect("shape preserved"), data);
        let hv: Vec<f64> = g.iter().zip(grad_a).map(|(x, y)| (x - y) / h).collect();
        let len = network::norm(&hv);
        if !(len > 0.0 && len.is_finite()) {
            break;
        }
        v = hv.iter().map(|x| x / len).collect();
    }
    v
}

const POWER_STEPS: usize = 4;

fn per_example_grads(w: &WeightVector, data: &Dataset) -> Vec<Vec<f64>> {
    let mut scratch = Scratch::new(w.topology());
    (0..data.len())
        .map(|i| {
            let mut g = vec![0.0; w.len()];
            accumulate_param_grad(w, data.x(i), 1.0, &mut g, &mut scratch);
            g
        })
        .collect()
}

/// Estimates `(C_n, D_n, L)` by sampling `samples` weight pairs in the ball of
/// `radius` around `center`.
///
/// The first pair is anchored at the centre, the others at radially uniform
/// points of the ball. The partner lies at a log-uniformly chosen distance
/// between `1e-4·radius` and `radius`, so both local curvature and far-apart
/// pairs are seen; on every second pair it lies along an approximate top
/// Hessian direction instead of a random one. Sample `i` depends only on
/// `seed` and `i`, so estimates are maxima over nested sets as `samples`
/// grows.
pub fn lipschitz_probe(
    center: &WeightVector,
    data: &Dataset,
    radius: f64,
    samples: usize,
    seed: u64,
) -> LipschitzEstimate {
    assert!(radius >= 0.0, "probe radius must be non-negative");
    data.check(center);
    let center_grad = gradient(center, data);
    let mut est = LipschitzEstimate {
        network_lipschitz: 0.0,
        gradient_bound: network::norm(&center_grad),
        risk_lipschitz: 0.0,
    };
    if radius < FROZEN_RADIUS {
        return est;
    }
    let topo: Topology = *center.topology();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..samples {
        let (a, b, dist) = loop {
            let a = if i == 0 {
                center.values().to_vec()
            } else {
                sample_in_ball(&mut rng, center.values(), radius)
            };
            let scale = radius * 10f64.powf(-4.0 * rng.gen::<f64>());
            let mut dir = random_unit(&mut rng, a.len());
            if i % 2 == 0 {
                let wa = WeightVector::from_values(topo, a.clone()).expect("shape preserved");
                let ga = gradient(&wa, data);
                dir = top_curvature_direction(topo, &a, &ga, data, 1e-6 * radius.max(1e-3), dir);
            }
            let mut b: Vec<f64> = a.iter().zip(&dir).map(|(x, d)| x + scale * d).collect();
            project_in_place(&mut b, center.values(), radius);
            let dist = network::distance(&a, &b);
            if dist > 0.0 {
                break (a, b, dist);
            }
        };
        let wa = WeightVector::from_values(topo, a).expect("shape preserved");
        let wb = WeightVector::from_values(topo, b).expect("shape preserved");
        let ga = per_example_grads(&wa, data);
        let gb = per_example_grads(&wb, data);
        for (x, y) in ga.iter().zip(&gb) {
            est.network_lipschitz = est.network_lipschitz.max(network::distance(x, y) / dist);
        }
        let fa = gradient(&wa, data);
        let fb = gradient(&wb, data);
        est.gradient_bound = est
            .gradient_bound
            .max(network::norm(&fa))
            .max(network::norm(&fb));
        est.risk_lipschitz = est.risk_lipschitz.max(network::distance(&fa, &fb) / dist);
    }
    est
}

/// Both sides of the projected-descent risk inequality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lemma1Report {
    /// `min_{t < t_n} F_n(w^(t))`.
    pub lhs: f64,
    /// `F_n(w*) + ‖w* − w0‖²/(2λt) + 12βCδ² + λD²/2`.
    pub rhs: f64,
    pub holds: bool,
    pub risk_at_star: f64,
    pub network_lipschitz: f64,
    pub gradient_bound: f64,
}

/// Outcome of [`verify_lemma1`]; precondition failures are reported, not
/// raised.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Lemma1Outcome {
    Checked(Lemma1Report),
    NoProjection,
    CenterNotStart,
    StarOutsideBall { distance: f64, radius: f64 },
    TruncationBelowOne { beta: f64 },
    ResponseExceedsBeta { max_abs_y: f64, beta: f64 },
    StarOutputExceedsBeta { max_abs_f: f64, beta: f64 },
    CurvatureTooLarge { c_delta_sq: f64 },
    NoSteps,
}

impl Lemma1Outcome {
    pub fn holds(&self) -> bool {
        matches!(self, Lemma1Outcome::Checked(r) if r.holds)
    }
}

/// Runs projected descent from `w0` and checks
/// `min_t F_n(w^(t)) ≤ F_n(w*) + ‖w*−w0‖²/(2λt) + 12βCδ² + λD²/2`, with `C`
/// and `D` taken from [`lipschitz_probe`] over the projection ball.
pub fn verify_lemma1(
    w0: &WeightVector,
    w_star: &WeightVector,
    data: &Dataset,
    cfg: &GdConfig,
    probe_samples: usize,
) -> Result<Lemma1Outcome> {
    cfg.validate()?;
    let Some(proj) = &cfg.projection else {
        return Ok(Lemma1Outcome::NoProjection);
    };
    if proj.center != *w0 {
        return Ok(Lemma1Outcome::CenterNotStart);
    }
    if cfg.steps == 0 {
        return Ok(Lemma1Outcome::NoSteps);
    }
    let delta = proj.radius;
    let beta = cfg.truncation;
    let dist = w_star.distance(w0);
    if dist > delta {
        return Ok(Lemma1Outcome::StarOutsideBall {
            distance: dist,
            radius: delta,
        });
    }
    if beta < 1.0 {
        return Ok(Lemma1Outcome::TruncationBelowOne { beta });
    }
    let max_y = data.ys().iter().fold(0.0f64, |m, y| m.max(y.abs()));
    if max_y > beta {
        return Ok(Lemma1Outcome::ResponseExceedsBeta { max_abs_y: max_y, beta });
    }
    let max_f = (0..data.len())
        .map(|i| network::forward(w_star, data.x(i)).abs())
        .fold(0.0f64, f64::max);
    if max_f > beta {
        return Ok(Lemma1Outcome::StarOutputExceedsBeta { max_abs_f: max_f, beta });
    }
    let est = lipschitz_probe(w0, data, delta, probe_samples, cfg.seed);
    let c_n = est.network_lipschitz;
    if c_n * delta * delta > 1.0 {
        return Ok(Lemma1Outcome::CurvatureTooLarge {
            c_delta_sq: c_n * delta * delta,
        });
    }
    let trace = run_gd(w0, data, cfg)?;
    let lhs = trace.risks[..cfg.steps]
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    let risk_at_star = empirical_risk(w_star, data);
    let lambda = cfg.step_size;
    let t = cfg.steps as f64;
    let start_term = if lambda > 0.0 {
        dist * dist / (2.0 * lambda * t)
    } else if dist == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    let rhs = risk_at_star
        + start_term
        + 12.0 * beta * c_n * delta * delta
        + 0.5 * lambda * est.gradient_bound * est.gradient_bound;
    Ok(Lemma1Outcome::Checked(Lemma1Report {
        lhs,
        rhs,
        holds: lhs <= rhs + 1e-9,
        risk_at_star,
        network_lipschitz: c_n,
        gradient_bound: est.gradient_bound,
    }))
}

/// Sampled versus certified sup of `‖∇_x f_w‖_∞`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivativeBoundVerdict {
    pub sample_max: f64,
    pub certified_bound: f64,
    /// `Σ|w_out| · B^(L−1) · A · (r/4)^(L−1) · (d/4)` with `A`, `B` the largest
    /// input-layer and hidden-layer weight magnitudes; never below
    /// `certified_bound`.
    pub closed_form_bound: f64,
    pub holds: bool,
}

/// Layer-by-layer bound on `sup_x |∂f_w/∂x_s|`, maximised over `s`.
///
/// Each neuron carries a per-coordinate bound; a layer multiplies by the
/// absolute weights feeding it and by `sup|σ'| = 1/4`.
pub fn certified_input_gradient_bound(w: &WeightVector) -> f64 {
    let t = w.topology();
    let d = t.input_dim;
    let r = t.width;
    let mut best = vec![0.0f64; d];
    for (k, &wo) in w.output_weights().iter().enumerate() {
        if wo == 0.0 {
            continue;
        }
        let block = w.subnet(k);
        let mut prev: Vec<Vec<f64>> = Vec::new();
        for layer in 0..t.depth {
            let cols = t.layer_cols(layer);
            let off = layer_offset(t, layer);
            let rows = if layer + 1 == t.depth { 1 } else { r };
            let mut cur = vec![vec![0.0; d]; rows];
            for (i, bound) in cur.iter_mut().enumerate() {
                let row = &block[off + i * cols..off + (i + 1) * cols];
                if layer == 0 {
                    for s in 0..d {
                        bound[s] = SIGMA_PRIME_SUP * row[1 + s].abs();
                    }
                } else {
                    for (j, pj) in prev.iter().enumerate() {
                        let a = row[1 + j].abs();
                        for s in 0..d {
                            bound[s] += a * pj[s];
                        }
                    }
                    bound.iter_mut().for_each(|b| *b *= SIGMA_PRIME_SUP);
                }
            }
            prev = cur;
        }
        for s in 0..d {
            best[s] += wo.abs() * prev[0][s];
        }
    }
    best.into_iter().fold(0.0, f64::max)
}

fn layer_offset(t: &Topology, layer: usize) -> usize {
    if layer == 0 {
        0
    } else {
        t.width * (t.input_dim + 1) + (layer - 1) * t.width * (t.width + 1)
    }
}

fn closed_form_bound(w: &WeightVector) -> f64 {
    let t = w.topology();
    let mut a: f64 = 0.0;
    let mut b: f64 = 0.0;
    for k in 0..t.subnets {
        let block = w.subnet(k);
        for layer in 0..t.depth {
            let cols = t.layer_cols(layer);
            let off = layer_offset(t, layer);
            for i in 0..t.width {
                for j in 1..cols {
                    let v = block[off + i * cols + j].abs();
                    if layer == 0 {
                        a = a.max(v);
                    } else {
                        b = b.max(v);
                    }
                }
            }
        }
    }
    let c: f64 = w.output_weights().iter().map(|v| v.abs()).sum();
    let hidden = (t.width as f64 * b * SIGMA_PRIME_SUP).powi(t.depth as i32 - 1);
    c * hidden * a * t.input_dim as f64 * SIGMA_PRIME_SUP
}

/// Compares central-difference input gradients sampled on a `grid^d` lattice
/// over `[−a, a]^d` against [`certified_input_gradient_bound`].
pub fn verify_derivative_bound(w: &WeightVector, a: f64, grid: usize) -> DerivativeBoundVerdict {
    assert!(grid >= 2, "grid needs at least two points per axis");
    let d = w.topology().input_dim;
    let h = 1e-5;
    let total = grid.pow(d as u32);
    let mut x = vec![0.0; d];
    let mut sample_max: f64 = 0.0;
    for flat in 0..total {
        let mut rem = flat;
        for xs in x.iter_mut() {
            let i = rem % grid;
            rem /= grid;
            *xs = -a + 2.0 * a * i as f64 / (grid - 1) as f64;
        }
        for s in 0..d {
            let orig = x[s];
            x[s] = orig + h;
            let up = network::forward(w, &x);
            x[s] = orig - h;
            let down = network::forward(w, &x);
            x[s] = orig;
            sample_max = sample_max.max(((up - down) / (2.0 * h)).abs());
        }
    }
    let certified_bound = certified_input_gradient_bound(w);
    DerivativeBoundVerdict {
        sample_max,
        certified_bound,
        closed_form_bound: closed_form_bound(w),
        // slack covers the O(h²) difference error
        holds: sample_max <= certified_bound * (1.0 + 1e-7) + 1e-9,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::forward;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_weights(t: Topology, seed: u64, scale: f64) -> WeightVector {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = (0..t.weight_count())
            .map(|_| rng.gen_range(-scale..scale))
            .collect();
        WeightVector::from_values(t, values).unwrap()
    }

    fn random_data(d: usize, n: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xs = (0..d * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let ys = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Dataset::new(d, xs, ys).unwrap()
    }

    #[test]
    fn dataset_validation() {
        assert!(Dataset::new(1, vec![], vec![]).is_err());
        assert!(Dataset::new(2, vec![1.0; 3], vec![0.0; 2]).is_err());
        assert!(Dataset::from_points(&[vec![1.0], vec![1.0, 2.0]], vec![0.0, 0.0]).is_err());
        let ds = Dataset::from_points(&[vec![1.0, 2.0], vec![3.0, 4.0]], vec![5.0, 6.0]).unwrap();
        assert_eq!(ds.x(1), &[3.0, 4.0]);
        assert_eq!(ds.y(0), 5.0);
    }

    #[test]
    fn risk_of_zero_network() {
        let t = Topology::new(1, 2, 1, 2).unwrap();
        let w = WeightVector::zeros(t);
        let ds = Dataset::new(1, vec![0.3, -0.2], vec![1.0, -1.0]).unwrap();
        assert_eq!(empirical_risk(&w, &ds), 1.0);
    }

    #[test]
    fn risk_zero_when_interpolating() {
        let t = Topology::new(2, 3, 2, 2).unwrap();
        let w = random_weights(t, 3, 1.0);
        let pts: Vec<Vec<f64>> = vec![vec![0.1, 0.2], vec![-0.5, 0.9], vec![0.0, 0.0]];
        let ys = pts.iter().map(|p| forward(&w, p)).collect();
        let ds = Dataset::from_points(&pts, ys).unwrap();
        assert_eq!(empirical_risk(&w, &ds), 0.0);
    }

    #[test]
    fn risk_matches_direct_sum() {
        let t = Topology::new(2, 3, 2, 3).unwrap();
        let w = random_weights(t, 8, 1.0);
        let ds = random_data(2, 150, 4);
        let direct: f64 = (0..ds.len())
            .map(|i| (ds.y(i) - forward(&w, ds.x(i))).powi(2))
            .sum::<f64>()
            / ds.len() as f64;
        assert!((empirical_risk(&w, &ds) - direct).abs() < 1e-12);
    }

    #[test]
    fn gradient_vanishes_for_zero_residual() {
        let t = Topology::new(2, 2, 2, 3).unwrap();
        let mut w = random_weights(t, 1, 1.0);
        w.output_weights_mut().fill(0.0);
        let ds = random_data(2, 5, 2).with_responses(vec![0.0; 5]).unwrap();
        assert!(gradient(&w, &ds).iter().all(|&g| g == 0.0));
    }

    #[test]
    fn inner_partials_vanish_with_zero_output_layer() {
        let t = Topology::new(2, 2, 2, 3).unwrap();
        let mut w = random_weights(t, 1, 1.0);
        w.output_weights_mut().fill(0.0);
        let ds = random_data(2, 5, 2);
        let g = gradient(&w, &ds);
        let off = t.output_offset();
        assert!(g[..off].iter().all(|&v| v == 0.0));
        assert!(g[off..].iter().any(|&v| v != 0.0));
    }

    #[test]
    fn output_partial_formula() {
        let t = Topology::new(1, 3, 2, 2).unwrap();
        let w = random_weights(t, 6, 1.0);
        let ds = random_data(1, 7, 9);
        let g = gradient(&w, &ds);
        for k in 0..3 {
            let expect: f64 = (0..ds.len())
                .map(|i| {
                    let x = ds.x(i);
                    let top = network::subnet_outputs(&w, x)[k];
                    2.0 * (forward(&w, x) - ds.y(i)) * top
                })
                .sum::<f64>()
                / ds.len() as f64;
            assert!((g[t.output_offset() + k] - expect).abs() < 1e-13);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let t = Topology::new(2, 2, 2, 3).unwrap();
        let w = random_weights(t, 21, 1.0);
        let ds = random_data(2, 5, 22);
        let g = gradient(&w, &ds);
        let fd = finite_difference_gradient(&w, &ds, 1e-5);
        for (a, b) in g.iter().zip(&fd) {
            if a.abs() < 1e-8 {
                assert!((a - b).abs() < 1e-8);
            } else {
                assert!((a - b).abs() / a.abs() < 1e-5, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn projection_cases() {
        let t = Topology::new(1, 1, 1, 1).unwrap();
        let c = WeightVector::zeros(t);
        let inside = WeightVector::from_values(t, vec![0.1, 0.2, 0.1]).unwrap();
        assert_eq!(project_ball(&inside, &c, 1.0), inside);
        let far = WeightVector::from_values(t, vec![2.0, 0.0, 0.0]).unwrap();
        let p = project_ball(&far, &c, 1.0);
        assert_eq!(p.values(), &[1.0, 0.0, 0.0]);
        let v = WeightVector::from_values(t, vec![1.2, -1.6, 0.0]).unwrap();
        let p = project_ball(&v, &c, 1.0);
        assert!(p.values().iter().zip(v.values()).all(|(a, b)| (a - b / 2.0).abs() < 1e-15));
    }

    proptest! {
        #[test]
        fn projection_lands_at_min_radius(vals in proptest::collection::vec(-5.0f64..5.0, 6), cen in proptest::collection::vec(-1.0f64..1.0, 6), radius in 0.0f64..4.0) {
            let t = Topology::new(1, 2, 1, 1).unwrap();
            let w = WeightVector::from_values(t, vals).unwrap();
            let c = WeightVector::from_values(t, cen).unwrap();
            let p = project_ball(&w, &c, radius);
            let expect = radius.min(w.distance(&c));
            prop_assert!((p.distance(&c) - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn truncation_clamps() {
        assert_eq!(truncate(0.3, 1.0), 0.3);
        assert_eq!(truncate(5.0, 1.0), 1.0);
        assert_eq!(truncate(-5.0, 1.0), -1.0);
    }

    #[test]
    fn zero_step_size_keeps_weights() {
        let t = Topology::new(1, 2, 2, 2).unwrap();
        let w = random_weights(t, 1, 1.0);
        let ds = random_data(1, 6, 1);
        let tr = run_gd(&w, &ds, &GdConfig::plain(0.0, 5, 1.0)).unwrap();
        assert_eq!(tr.final_weights, w);
        assert!(tr.risks.windows(2).all(|p| p[0] == p[1]));
        assert_eq!(tr.risks.len(), 6);
        assert!(tr.drifts.iter().all(|&d| d == 0.0));
    }

    #[test]
    fn divergent_step_aborts() {
        let t = Topology::new(1, 2, 1, 2).unwrap();
        let w = random_weights(t, 1, 1.0);
        let ds = random_data(1, 6, 1).with_responses(vec![100.0; 6]).unwrap();
        let err = run_gd(&w, &ds, &GdConfig::plain(1e308, 3, 1.0)).unwrap_err();
        assert!(matches!(err, Error::NonFiniteRisk { .. }));
    }

    #[test]
    fn projected_iterates_stay_in_ball() {
        let t = Topology::new(2, 3, 2, 2).unwrap();
        let w = random_weights(t, 5, 1.0);
        let ds = random_data(2, 10, 5);
        let cfg = GdConfig {
            step_size: 0.5,
            steps: 30,
            projection: Some(Projection { center: w.clone(), radius: 0.05 }),
            truncation: 1.0,
            seed: 0,
        };
        let tr = run_gd(&w, &ds, &cfg).unwrap();
        assert!(tr.drifts.iter().all(|&d| d <= 0.05 + 1e-12));
    }

    #[test]
    fn descent_is_deterministic() {
        let t = Topology::new(2, 3, 2, 3).unwrap();
        let w = random_weights(t, 5, 1.0);
        let ds = random_data(2, 200, 5);
        let cfg = GdConfig::plain(0.1, 10, 1.0);
        let a = run_gd(&w, &ds, &cfg).unwrap();
        let b = run_gd(&w, &ds, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn frozen_probe_reports_zero_curvature() {
        let t = Topology::new(1, 2, 2, 2).unwrap();
        let w = random_weights(t, 2, 1.0);
        let ds = random_data(1, 5, 2);
        let est = lipschitz_probe(&w, &ds, 1e-12, 10, 1);
        assert_eq!(est.network_lipschitz, 0.0);
        assert_eq!(est.risk_lipschitz, 0.0);
        assert!((est.gradient_bound - network::norm(&gradient(&w, &ds))).abs() < 1e-15);
    }

    #[test]
    fn probe_monotone_in_samples() {
        let t = Topology::new(1, 2, 2, 2).unwrap();
        let w = random_weights(t, 2, 1.0);
        let ds = random_data(1, 5, 2);
        let mut prev = lipschitz_probe(&w, &ds, 0.5, 1, 3);
        for m in [2, 4, 8, 16] {
            let cur = lipschitz_probe(&w, &ds, 0.5, m, 3);
            assert!(cur.network_lipschitz >= prev.network_lipschitz);
            assert!(cur.gradient_bound >= prev.gradient_bound);
            assert!(cur.risk_lipschitz >= prev.risk_lipschitz);
            prev = cur;
        }
    }

    #[test]
    fn projected_inequality_trivial_start_case() {
        let t = Topology::new(1, 2, 2, 2).unwrap();
        let w = random_weights(t, 2, 1.0);
        let ds = random_data(1, 6, 2);
        let cfg = GdConfig {
            step_size: 0.1,
            steps: 5,
            projection: Some(Projection { center: w.clone(), radius: 1e-12 }),
            truncation: 2.0,
            seed: 0,
        };
        let out = verify_lemma1(&w, &w, &ds, &cfg, 4).unwrap();
        let Lemma1Outcome::Checked(rep) = out else { panic!("{out:?}") };
        assert!(rep.rhs >= rep.risk_at_star && rep.risk_at_star >= rep.lhs);
        assert!(rep.holds);
    }

    #[test]
    fn projected_inequality_preconditions_reported() {
        let t = Topology::new(1, 2, 1, 2).unwrap();
        let w = random_weights(t, 2, 1.0);
        let ds = random_data(1, 6, 2);
        let far = WeightVector::from_values(t, w.values().iter().map(|v| v + 1.0).collect()).unwrap();
        let mut cfg = GdConfig {
            step_size: 0.1,
            steps: 5,
            projection: Some(Projection { center: w.clone(), radius: 0.1 }),
            truncation: 2.0,
            seed: 0,
        };
        assert!(matches!(
            verify_lemma1(&w, &far, &ds, &cfg, 2).unwrap(),
            Lemma1Outcome::StarOutsideBall { .. }
        ));
        cfg.truncation = 0.5;
        assert!(matches!(
            verify_lemma1(&w, &w, &ds, &cfg, 2).unwrap(),
            Lemma1Outcome::TruncationBelowOne { .. }
        ));
        cfg.truncation = 1.0;
        let big = ds.with_responses(vec![3.0; 6]).unwrap();
        assert!(matches!(
            verify_lemma1(&w, &w, &big, &cfg, 2).unwrap(),
            Lemma1Outcome::ResponseExceedsBeta { .. }
        ));
        cfg.projection = None;
        assert_eq!(verify_lemma1(&w, &w, &ds, &cfg, 2).unwrap(), Lemma1Outcome::NoProjection);
    }

    #[test]
    fn derivative_bound_single_neuron_is_tight() {
        let t = Topology::new(1, 1, 1, 1).unwrap();
        // σ(3x + 0.3), output 1.5
        let w = WeightVector::from_values(t, vec![0.3, 3.0, 1.5]).unwrap();
        let v = verify_derivative_bound(&w, 1.0, 2001);
        assert!((v.certified_bound - 1.5 * 3.0 / 4.0).abs() < 1e-15);
        assert!(v.holds);
        assert!((v.sample_max - v.certified_bound).abs() < 1e-3);
    }

    #[test]
    fn derivative_bound_zero_hidden_weights() {
        let t = Topology::new(2, 2, 2, 3).unwrap();
        let mut w = random_weights(t, 3, 1.0);
        for k in 0..2 {
            let block = w.subnet_mut(k);
            let first = 3 * 3;
            block[first..].fill(0.0);
        }
        let v = verify_derivative_bound(&w, 1.0, 5);
        assert_eq!(v.certified_bound, 0.0);
        assert!(v.sample_max < 1e-9);
        assert!(v.holds);

        let mut w = random_weights(t, 3, 1.0);
        w.output_weights_mut().fill(0.0);
        let v = verify_derivative_bound(&w, 1.0, 5);
        assert_eq!(v.sample_max, 0.0);
    }

    #[test]
    fn certified_bound_below_closed_form() {
        for seed in 0..10 {
            let t = Topology::new(2, 3, 3, 3).unwrap();
            let w = random_weights(t, seed, 2.0);
            let v = verify_derivative_bound(&w, 1.0, 9);
            assert!(v.holds);
            assert!(v.certified_bound <= v.closed_form_bound * (1.0 + 1e-12));
        }
    }
}
