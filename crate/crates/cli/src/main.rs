use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use sigmanet::construct::{assemble_taylor_net, default_block_neurons, embed_blueprints, AssemblyConfig};
use sigmanet::estimator::{fit, planted_cells_per_axis, FitMode, TheoremSchedule};
use sigmanet::experiments::{
    cell_seed, covering_bound, generate_data, mc_l2_error, rate_study, verify_suite, CoveringParams, ExperimentConfig,
    ModeSpec, Suite, VerifyOptions,
};
use sigmanet::network::Topology;

#[derive(Parser)]
#[command(name = "sigmanet", version, about = "Over-parametrized logistic network regression")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the estimator once on synthetic data and report risk and L2 error.
    Fit {
        #[arg(long)]
        config: PathBuf,
        /// Sample size; defaults to the first entry of the config's n grid.
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the convergence-rate study and write one CSV row per (n, rep).
    RateStudy {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// CSV destination; overrides the config. Without either, stdout.
        #[arg(long)]
        output: Option<PathBuf>,
        /// JSON summary destination. Defaults to stdout when the CSV goes to a file.
        #[arg(long)]
        summary: Option<PathBuf>,
    },
    /// Run verification suites; exits non-zero if any check fails.
    Verify {
        #[arg(long, value_enum, default_value = "all")]
        suite: SuiteArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Negate one analytic partial in the gradient check (fault injection).
        #[arg(long, hide = true)]
        inject_gradient_fault: Option<usize>,
    },
    /// Log of the covering-number bound for the derivative-bounded class.
    CoveringBound {
        #[arg(long)]
        alpha: f64,
        #[arg(long)]
        beta: f64,
        #[arg(long)]
        a: f64,
        #[arg(long)]
        b: f64,
        #[arg(long)]
        c: f64,
        #[arg(long)]
        depth: usize,
        #[arg(long)]
        d: usize,
        /// Derivative order; `inf` is accepted.
        #[arg(long)]
        k: f64,
        #[arg(long)]
        epsilon: f64,
        #[arg(long, default_value_t = 2.0)]
        p_norm: f64,
        #[arg(long, default_value_t = 1.0)]
        c81: f64,
        #[arg(long, default_value_t = 1.0)]
        c82: f64,
        #[arg(long, default_value_t = 1.0)]
        c83: f64,
    },
    /// Assemble the approximating network for the config's target.
    BuildApprox {
        #[arg(long)]
        config: PathBuf,
        /// Grid cells per axis.
        #[arg(long)]
        cells: usize,
        /// Defaults to the schedule's depth.
        #[arg(long)]
        depth: Option<usize>,
        /// Defaults to the schedule's width.
        #[arg(long)]
        width: Option<usize>,
        /// Neurons per identity/multiplication block.
        #[arg(long)]
        neurons: Option<usize>,
        /// Lattice points per axis for the sup-error measurement.
        #[arg(long, default_value_t = 201)]
        grid: usize,
        /// Where to write the assembled weight vector (JSON).
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SuiteArg {
    Approx,
    Opt,
    Derivbound,
    All,
}

impl From<SuiteArg> for Suite {
    fn from(s: SuiteArg) -> Self {
        match s {
            SuiteArg::Approx => Suite::Approx,
            SuiteArg::Opt => Suite::Opt,
            SuiteArg::Derivbound => Suite::Derivbound,
            SuiteArg::All => Suite::All,
        }
    }
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut cfg = ExperimentConfig::from_json(&text).with_context(|| format!("parsing {}", path.display()))?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn print_json(v: &serde_json::Value) -> Result<()> {
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, v)?;
    writeln!(out)?;
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Fit { config, n, seed } => {
            let cfg = load_config(&config, seed)?;
            let n = n.unwrap_or(cfg.n_grid[0]);
            let target = cfg.smooth_target()?;
            let schedule = cfg.schedule(n)?;
            let seed = cell_seed(cfg.seed, n, 0);
            let data = generate_data(&cfg, n, seed)?;
            let mode = match cfg.mode {
                ModeSpec::Random => FitMode::Random,
                ModeSpec::Planted => {
                    let cells = planted_cells_per_axis(n, cfg.p, schedule.d, cfg.planting.cell_constant);
                    let net = assemble_taylor_net(&target, &AssemblyConfig::new(cells, schedule.depth, schedule.width))?;
                    FitMode::Planted {
                        blueprints: net.blueprints,
                        epsilon: cfg.planting.epsilon,
                    }
                }
            };
            let report = fit(&data, &schedule, &mode, seed)?;
            let l2 = mc_l2_error(
                |x| report.predict(x),
                |x| target.eval(x),
                target.dim(),
                cfg.half_width,
                cfg.eval_points,
                seed ^ 1,
            );
            print_json(&json!({
                "n": n,
                "seed": seed,
                "schedule": report.schedule,
                "initial_risk": report.initial_risk(),
                "final_risk": report.final_risk(),
                "l2_error": l2.mean,
                "l2_stderr": l2.stderr,
            }))?;
            Ok(true)
        }
        Command::RateStudy {
            config,
            seed,
            output,
            summary,
        } => {
            let cfg = load_config(&config, seed)?;
            let report = rate_study(&cfg)?;
            let csv_path = output.or_else(|| cfg.output.clone());
            match &csv_path {
                Some(p) => {
                    let f = File::create(p).with_context(|| format!("creating {}", p.display()))?;
                    report.write_csv(BufWriter::new(f))?;
                }
                None => report.write_csv(io::stdout().lock())?,
            }
            let s = report.summary_json();
            match (&summary, &csv_path) {
                (Some(p), _) => fs::write(p, serde_json::to_string_pretty(&s)? + "\n")
                    .with_context(|| format!("writing {}", p.display()))?,
                (None, Some(_)) => print_json(&s)?,
                (None, None) => eprintln!("{}", serde_json::to_string(&s)?),
            }
            Ok(true)
        }
        Command::Verify {
            suite,
            seed,
            inject_gradient_fault,
        } => {
            let verdicts = verify_suite(
                suite.into(),
                VerifyOptions {
                    seed,
                    gradient_fault: inject_gradient_fault,
                },
            )?;
            let ok = verdicts.iter().all(|v| v.passed);
            print_json(&json!({ "passed": ok, "verdicts": verdicts }))?;
            Ok(ok)
        }
        Command::CoveringBound {
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
            c81,
            c82,
            c83,
        } => {
            let params = CoveringParams {
                c81,
                c82,
                c83,
                ..CoveringParams::new(alpha, beta, a, b, c, depth, d, k, epsilon, p_norm)
            };
            let log_bound = covering_bound(&params)?;
            print_json(&json!({ "log_bound": log_bound }))?;
            Ok(true)
        }
        Command::BuildApprox {
            config,
            cells,
            depth,
            width,
            neurons,
            grid,
            output,
        } => {
            if grid < 2 {
                bail!("grid needs at least two points per axis");
            }
            let cfg = load_config(&config, None)?;
            let target = cfg.smooth_target()?;
            let d = target.dim();
            let schedule = TheoremSchedule::from_theorem(cfg.p, cfg.c, d, 2, 1, cfg.constants)?;
            let depth = depth.unwrap_or(schedule.depth);
            let width = width.unwrap_or(schedule.width);
            let mut acfg = AssemblyConfig::new(cells, depth, width);
            acfg.neurons = neurons;
            let net = assemble_taylor_net(&target, &acfg)?;
            let a = cfg.half_width;
            let total = grid.pow(d as u32);
            let mut sup: f64 = 0.0;
            let mut x = vec![0.0; d];
            for mut flat in 0..total {
                for v in x.iter_mut() {
                    *v = -a + 2.0 * a * (flat % grid) as f64 / (grid - 1) as f64;
                    flat /= grid;
                }
                sup = sup.max((net.eval(&x) - target.eval(&x)).abs());
            }
            if let Some(p) = &output {
                let topo = Topology::new(d, net.blueprints.len().max(1), depth, width)?;
                let slots: Vec<usize> = (0..net.blueprints.len()).collect();
                let w = embed_blueprints(&net.blueprints, topo, &slots)?;
                fs::write(p, serde_json::to_string(&w)?).with_context(|| format!("writing {}", p.display()))?;
            }
            print_json(&json!({
                "cells": cells,
                "depth": depth,
                "width": width,
                "required_depth": net.required_depth,
                "required_width": net.required_width,
                "subnets": net.blueprints.len(),
                "summands": net.summands,
                "block_neurons": neurons.unwrap_or_else(|| default_block_neurons(cfg.p, d)),
                "circuit_neurons": net.neurons,
                "sup_error": sup,
            }))?;
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
