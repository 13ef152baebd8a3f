//! Runnable verification suites over the constructive and optimization
//! machinery, producing a machine-readable verdict list.

use std::collections::BTreeMap;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::construct::{
    assemble_taylor_net, build_monomial_net, build_mult2, build_mult_d, ceil_log2, moment_residual, AssemblyConfig,
    MonomialNetSpec, PreconditionPolicy, MOMENT_TOLERANCE,
};
use crate::error::{Error, Result};
use crate::network::{Topology, WeightVector};
use crate::taylor::{build_pieces, Polynomial, SineRidge, SmoothTarget, TaylorGrid};
use crate::training::{
    empirical_risk, finite_difference_gradient, gradient, lipschitz_probe, project_ball, run_gd,
    verify_derivative_bound, verify_lemma1, Dataset, GdConfig, Projection,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Approx,
    Opt,
    Derivbound,
    All,
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "approx" => Ok(Suite::Approx),
            "opt" => Ok(Suite::Opt),
            "derivbound" => Ok(Suite::Derivbound),
            "all" => Ok(Suite::All),
            _ => Err(Error::Config(format!("unknown suite {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct VerifyOptions {
    pub seed: u64,
    /// Test hook: negate this analytic partial (index modulo the weight
    /// count) in the gradient check.
    pub gradient_fault: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub suite: String,
    pub check: String,
    pub passed: bool,
    pub measured: BTreeMap<String, f64>,
}

fn verdict(suite: &str, check: impl Into<String>, passed: bool, measured: &[(&str, f64)]) -> Verdict {
    Verdict {
        suite: suite.into(),
        check: check.into(),
        passed,
        measured: measured.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
    }
}

/// Runs the requested suites. Individual failures are recorded in the
/// returned verdicts; only configuration errors are raised.
pub fn verify_suite(which: Suite, opts: VerifyOptions) -> Result<Vec<Verdict>> {
    let mut out = Vec::new();
    if matches!(which, Suite::Approx | Suite::All) {
        approx_suite(&mut out)?;
    }
    if matches!(which, Suite::Opt | Suite::All) {
        opt_suite(&mut out, opts)?;
    }
    if matches!(which, Suite::Derivbound | Suite::All) {
        derivbound_suite(&mut out, opts.seed)?;
    }
    Ok(out)
}

fn lattice(d: usize, a: f64, per_axis: usize) -> impl Iterator<Item = Vec<f64>> {
    let total = per_axis.pow(d as u32);
    (0..total).map(move |mut flat| {
        (0..d)
            .map(|_| {
                let i = flat % per_axis;
                flat /= per_axis;
                -a + 2.0 * a * i as f64 / (per_axis - 1) as f64
            })
            .collect()
    })
}

fn sup_error(d: usize, a: f64, per_axis: usize, f: impl Fn(&[f64]) -> f64, g: impl Fn(&[f64]) -> f64) -> f64 {
    lattice(d, a, per_axis)
        .map(|x| (f(&x) - g(&x)).abs())
        .fold(0.0, f64::max)
}

fn in_window(ratio: f64, center: f64) -> bool {
    ratio >= center / 4.0 && ratio <= 4.0 * center
}

fn in_decay_window(ratio: f64, p: f64) -> bool {
    let c = 2f64.powf(-p);
    ratio >= c / 2.0 && ratio <= 2.0 * c
}

const SUITE_APPROX: &str = "approx";
const SUITE_OPT: &str = "opt";
const SUITE_DERIV: &str = "derivbound";

fn approx_suite(out: &mut Vec<Verdict>) -> Result<()> {
    let mut worst: f64 = 0.0;
    for k in 1..=3 {
        for n in (k + 1)..=8 {
            let spec = MonomialNetSpec::new(k, n)?;
            worst = worst.max(moment_residual(k, &spec.betas, &spec.alphas));
        }
    }
    out.push(verdict(SUITE_APPROX, "moment_residual", worst <= MOMENT_TOLERANCE, &[("max_residual", worst)]));

    for k in 1..=3 {
        for n in [4usize, 6] {
            let err = |a: f64| -> Result<f64> {
                let net = build_monomial_net(k, n, a)?;
                Ok(sup_error(1, a, 2001, |x| net.eval(x[0]), |x| x[0].powi(k as i32)))
            };
            let (lo, hi) = (err(0.1)?, err(0.2)?);
            let ratio = hi / lo;
            let mut passed = in_window(ratio, 2f64.powi(n as i32));
            if n == 6 {
                passed &= lo < 1e-4;
            }
            out.push(verdict(
                SUITE_APPROX,
                format!("monomial_scaling_k{k}_n{n}"),
                passed,
                &[("error_a0.1", lo), ("error_a0.2", hi), ("ratio", ratio)],
            ));
        }
    }

    for n in [4usize, 6] {
        let err = |a: f64| -> Result<f64> {
            let net = build_mult2(n, a)?;
            Ok(sup_error(2, a, 101, |x| net.eval(x[0], x[1]), |x| x[0] * x[1]))
        };
        let (lo, hi) = (err(0.1)?, err(0.2)?);
        let ratio = hi / lo;
        out.push(verdict(
            SUITE_APPROX,
            format!("mult2_scaling_n{n}"),
            in_window(ratio, 2f64.powi(n as i32)),
            &[("error_a0.1", lo), ("error_a0.2", hi), ("ratio", ratio)],
        ));
    }

    for d in [2usize, 3] {
        for n in [4usize, 6] {
            let per_axis = if d == 2 { 61 } else { 21 };
            let err = |a: f64| -> Result<f64> {
                let net = build_mult_d(d, n, a, PreconditionPolicy::Report)?;
                Ok(sup_error(d, a, per_axis, |x| net.eval(x), |x| x.iter().product()))
            };
            let (lo, hi) = (err(0.1)?, err(0.2)?);
            let ratio = hi / lo;
            out.push(verdict(
                SUITE_APPROX,
                format!("mult_d_scaling_d{d}_n{n}"),
                in_window(ratio, 2f64.powi(n as i32)),
                &[("error_a0.1", lo), ("error_a0.2", hi), ("ratio", ratio)],
            ));
        }
    }
    for d in 1..=6 {
        let n = 4;
        let net = build_mult_d(d, n, 0.1, PreconditionPolicy::Report)?;
        let widest = net.layer_widths().into_iter().max().unwrap_or(0);
        let passed = net.mult_layers() <= ceil_log2(d).max(1) && widest <= 2 * n * d;
        out.push(verdict(
            SUITE_APPROX,
            format!("mult_d_structure_d{d}"),
            passed,
            &[("mult_layers", net.mult_layers() as f64), ("max_width", widest as f64)],
        ));
    }

    // 1 + x − 2xy + y²/2, reproduced exactly by degree-2 pieces.
    let poly = Polynomial {
        dim: 2,
        terms: vec![
            (vec![0, 0], 1.0),
            (vec![1, 0], 1.0),
            (vec![1, 1], -2.0),
            (vec![0, 2], 0.5),
        ],
    };
    let f = SmoothTarget::new(Arc::new(poly), 3.0, 10.0, 1.0)?;
    let pieces = build_pieces(&f, TaylorGrid::new(1.0, 5, 2)?)?;
    let err = lattice(2, 1.0, 41)
        .map(|x| (pieces.eval_p(&x) - f.eval(&x)).abs())
        .fold(0.0, f64::max);
    out.push(verdict(SUITE_APPROX, "taylor_exact_polynomial", err <= 1e-9, &[("sup_error", err)]));

    let sine = SmoothTarget::new(Arc::new(SineRidge { omega: vec![2.0], phase: 0.0 }), 2.0, 8.0, 1.0)?;
    let pbar_gap = |k: usize| -> Result<f64> {
        let pc = build_pieces(&sine, TaylorGrid::new(1.0, k, 1)?)?;
        Ok(sup_error(1, 1.0, 4001, |x| pc.eval_p(x), |x| pc.eval_pbar(x)))
    };
    let (g8, g16) = (pbar_gap(8)?, pbar_gap(16)?);
    out.push(verdict(
        SUITE_APPROX,
        "pbar_decay_sine",
        in_decay_window(g16 / g8, 2.0),
        &[("gap_k8", g8), ("gap_k16", g16), ("ratio", g16 / g8)],
    ));

    let assembled = |k: usize| -> Result<f64> {
        let net = assemble_taylor_net(&sine, &AssemblyConfig::new(k, 2, 50))?;
        Ok(sup_error(1, 1.0, 2001, |x| net.eval(x), |x| sine.eval(x)))
    };
    let (e4, e8) = (assembled(4)?, assembled(8)?);
    out.push(verdict(
        SUITE_APPROX,
        "assembly_decay_sine",
        in_decay_window(e8 / e4, 2.0),
        &[("error_k4", e4), ("error_k8", e8), ("ratio", e8 / e4)],
    ));
    Ok(())
}

/// Small random network and data set; weights uniform on `[−scale, scale]`.
fn random_instance(rng: &mut ChaCha8Rng, scale: f64) -> Result<(WeightVector, Dataset)> {
    let d = rng.gen_range(1..=3);
    let t = Topology::new(d, rng.gen_range(1..=4), rng.gen_range(1..=3), rng.gen_range(1..=4))?;
    let values = (0..t.weight_count()).map(|_| rng.gen_range(-scale..=scale)).collect();
    let w = WeightVector::from_values(t, values)?;
    let n = rng.gen_range(2..=20);
    let xs = (0..n * d).map(|_| rng.gen_range(-1.0..=1.0)).collect();
    let ys = (0..n).map(|_| rng.gen_range(-1.0..=1.0)).collect();
    Ok((w, Dataset::new(d, xs, ys)?))
}

/// Relative gap with a floor so that vanishing partials compare absolutely.
pub(crate) fn relative_gap(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-4)
}

/// Probes the ball around `w0` until it covers every descent iterate, which
/// by the drift bound lie within `√(2t·F0/L)`.
fn descent_lipschitz(w0: &WeightVector, data: &Dataset, steps: usize, seed: u64) -> f64 {
    let f0 = empirical_risk(w0, data).max(1e-12);
    let mut radius = 1.0;
    let mut l = lipschitz_probe(w0, data, radius, 64, seed).risk_lipschitz;
    for _ in 0..6 {
        let needed = 2.0 * (2.0 * steps as f64 * f0 / l.max(1e-12)).sqrt();
        if needed <= radius {
            break;
        }
        radius = needed;
        l = l.max(lipschitz_probe(w0, data, radius, 64, seed).risk_lipschitz);
    }
    l.max(1e-12)
}

fn opt_suite(out: &mut Vec<Verdict>, opts: VerifyOptions) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let (w, data) = random_instance(&mut rng, 1.5)?;
        let mut g = gradient(&w, &data);
        if let Some(j) = opts.gradient_fault {
            let j = j % g.len();
            g[j] = -g[j];
        }
        let fd = finite_difference_gradient(&w, &data, 1e-5);
        for (a, b) in g.iter().zip(&fd) {
            worst = worst.max(relative_gap(*a, *b));
        }
    }
    out.push(verdict(SUITE_OPT, "gradient_finite_difference", worst <= 1e-5, &[("max_relative_error", worst)]));

    let steps = 60;
    let mut passed = true;
    let mut worst_increase: f64 = 0.0;
    let mut worst_drift_excess = f64::NEG_INFINITY;
    for i in 0..5 {
        let (w0, data) = random_instance(&mut rng, 1.0)?;
        let l = descent_lipschitz(&w0, &data, steps, opts.seed + i);
        let trace = run_gd(&w0, &data, &GdConfig::plain(1.0 / l, steps, 1.0))?;
        let f0 = trace.risks[0];
        for k in 1..=steps {
            worst_increase = worst_increase.max(trace.risks[k] - trace.risks[k - 1]);
            let bound = (2.0 * k as f64 * (f0 - trace.risks[k]).max(0.0) / l).sqrt() + 1e-9;
            worst_drift_excess = worst_drift_excess.max(trace.drifts[k] - bound);
        }
    }
    passed &= worst_increase <= 0.0 && worst_drift_excess <= 0.0;
    out.push(verdict(
        SUITE_OPT,
        "descent_monotone_and_drift",
        passed,
        &[("max_risk_increase", worst_increase), ("max_drift_excess", worst_drift_excess)],
    ));

    let mut all = true;
    let mut min_slack = f64::INFINITY;
    for i in 0..3 {
        let (w0, data) = random_instance(&mut rng, 0.3)?;
        let mut delta: f64 = 0.5;
        let seed = opts.seed + 100 + i;
        while lipschitz_probe(&w0, &data, delta, 32, seed).network_lipschitz * delta * delta > 1.0 {
            delta /= 2.0;
        }
        let g = gradient(&w0, &data);
        let gn = crate::network::norm(&g).max(1e-300);
        let star_vals: Vec<f64> = w0.values().iter().zip(&g).map(|(v, gi)| v - 0.5 * delta * gi / gn).collect();
        let w_star = project_ball(&WeightVector::from_values(*w0.topology(), star_vals)?, &w0, delta);
        let l = lipschitz_probe(&w0, &data, delta, 32, seed).risk_lipschitz.max(1e-12);
        let cfg = GdConfig {
            step_size: 1.0 / l,
            steps: 50,
            projection: Some(Projection {
                center: w0.clone(),
                radius: delta,
            }),
            truncation: 1.0,
            seed,
        };
        match verify_lemma1(&w0, &w_star, &data, &cfg, 32)? {
            crate::training::Lemma1Outcome::Checked(r) => {
                all &= r.holds;
                min_slack = min_slack.min(r.rhs - r.lhs);
            }
            _ => all = false,
        }
    }
    out.push(verdict(SUITE_OPT, "projected_descent_inequality", all, &[("min_slack", min_slack)]));
    Ok(())
}

fn derivbound_suite(out: &mut Vec<Verdict>, seed: u64) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xd1b5);
    let mut all = true;
    let mut worst_ratio: f64 = 0.0;
    for _ in 0..10 {
        let (w, _) = random_instance(&mut rng, 2.0)?;
        let grid = match w.topology().input_dim {
            1 => 201,
            2 => 31,
            _ => 11,
        };
        let v = verify_derivative_bound(&w, 1.0, grid);
        all &= v.holds && v.certified_bound <= v.closed_form_bound * (1.0 + 1e-12);
        if v.certified_bound > 0.0 {
            worst_ratio = worst_ratio.max(v.sample_max / v.certified_bound);
        }
    }
    out.push(verdict(
        SUITE_DERIV,
        "input_gradient_certified",
        all,
        &[("max_sample_over_certified", worst_ratio)],
    ));
    Ok(())
}
