//! The experiments behind the `compare`, `m-sweep`, `noise-probe` and
//! `calibrate` subcommands.

use std::path::PathBuf;

use pspo_core::optimizers::{pspo_observed, spsa2_with_monitor};
use pspo_core::problems::{load_epidemic_csv, synthetic_outbreak};
use pspo_core::seed::{self, tag};
use pspo_core::{
    estimate_noise_variance, rounds_for_tolerance, EpidemicSeries, IterationRecord, NoisyQuadratic,
    Objective, OptimizerTrace, ParamVector, PspoConfig, SirCalibration, SirParams, ToleranceSpec,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::{ExperimentConfig, ProblemKind};
use crate::error::{CliError, CliResult};
use crate::output::{flag, num, opt_num, prepare_out_dir, quantile, write_csv};

/// A benchmark objective plus what is known about its solution.
pub enum Problem {
    Quadratic(NoisyQuadratic),
    Sir {
        objective: SirCalibration,
        truth: Option<SirParams>,
    },
}

impl Problem {
    pub fn build(cfg: &ExperimentConfig) -> CliResult<Self> {
        match cfg.problem {
            ProblemKind::Quadratic => Ok(Problem::Quadratic(NoisyQuadratic::new(
                cfg.quadratic.dim,
                cfg.quadratic.sigma,
            ))),
            ProblemKind::Sir => {
                let (data, truth) = sir_data(cfg)?;
                let objective = SirCalibration::new(data, cfg.sir.replicates)?;
                Ok(Problem::Sir { objective, truth })
            }
        }
    }

    pub fn objective(&self) -> &dyn Objective {
        match self {
            Problem::Quadratic(q) => q,
            Problem::Sir { objective, .. } => objective,
        }
    }

    pub fn dim(&self) -> usize {
        self.objective().dim()
    }

    /// Centre of the starting points.
    pub fn centre(&self, cfg: &ExperimentConfig) -> Vec<f64> {
        match self {
            Problem::Quadratic(q) => q.minimizer(),
            Problem::Sir { .. } => vec![cfg.sir.initial_beta.ln(), cfg.sir.initial_gamma.ln()],
        }
    }

    /// Starting point for one repeat; shared by every optimizer.
    pub fn start(&self, cfg: &ExperimentConfig, start_seed: u64) -> ParamVector {
        let spread = match self {
            Problem::Quadratic(_) => cfg.quadratic.init_spread,
            Problem::Sir { .. } => cfg.sir.init_log_spread,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(start_seed);
        let x = self
            .centre(cfg)
            .into_iter()
            .map(|c| {
                if spread > 0.0 {
                    c + rng.random_range(-spread..=spread)
                } else {
                    c
                }
            })
            .collect();
        ParamVector::new(x).expect("finite starting point")
    }

    /// Noiseless objective, when known.
    pub fn true_value(&self, theta: &[f64]) -> Option<f64> {
        match self {
            Problem::Quadratic(_) => Some(NoisyQuadratic::true_value(theta)),
            Problem::Sir { .. } => None,
        }
    }

    pub fn converged(&self, threshold: f64, record: &IterationRecord) -> bool {
        match self {
            Problem::Quadratic(_) => NoisyQuadratic::true_value(&record.theta) <= threshold,
            Problem::Sir { .. } => record.step_norm <= threshold,
        }
    }

    pub fn truth(&self) -> Option<SirParams> {
        match self {
            Problem::Quadratic(_) => None,
            Problem::Sir { truth, .. } => *truth,
        }
    }
}

/// Observed or synthetic SIR data; synthetic data also returns the
/// generating parameters.
pub fn sir_data(cfg: &ExperimentConfig) -> CliResult<(EpidemicSeries, Option<SirParams>)> {
    let s = &cfg.sir;
    match &s.data {
        Some(path) => {
            let data = load_epidemic_csv(path).map_err(|e| match e {
                pspo_core::Error::Io(msg) => CliError::io(path, std::io::Error::other(msg)),
                other => CliError::Config(format!("{}: {other}", path.display())),
            })?;
            Ok((data, None))
        }
        None => {
            let truth = SirParams::new(s.beta, s.gamma)?;
            let data = synthetic_outbreak(
                truth,
                s.population,
                s.initial_infected,
                s.horizon_days,
                s.min_attack,
                seed::derive(cfg.seed, tag::DATA, 0),
            )?;
            Ok((data, Some(truth)))
        }
    }
}

/// One optimizer run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub optimizer: &'static str,
    pub repeat: usize,
    pub theta0: Vec<f64>,
    pub theta: Vec<f64>,
    pub trace: OptimizerTrace,
    pub converged: bool,
    /// First iteration (1-based) meeting the convergence rule, or
    /// `max_iters` if none did.
    pub iterations: usize,
}

impl RunResult {
    pub fn total_evals(&self) -> u64 {
        self.trace.total_evals()
    }
}

fn run_seed(cfg: &ExperimentConfig, repeat: usize) -> u64 {
    seed::derive(cfg.seed, tag::REPEAT, repeat as u64)
}

/// Run `optimizer` once. `pspo` replaces the configured PSPO settings.
pub fn run_one(
    problem: &Problem,
    cfg: &ExperimentConfig,
    optimizer: &'static str,
    repeat: usize,
    pspo: Option<&PspoConfig>,
) -> CliResult<RunResult> {
    let rs = run_seed(cfg, repeat);
    let theta0 = problem.start(cfg, seed::derive(rs, tag::START, 0));
    let threshold = cfg.threshold;
    let mut monitor = |r: &IterationRecord| problem.converged(threshold, r);
    let outcome = match optimizer {
        "pspo" => {
            let mut c = pspo.unwrap_or(&cfg.pspo).clone();
            c.seed = seed::derive(rs, tag::OPTIMIZER, 0);
            pspo_observed(problem.objective(), &theta0, &c, Some(&mut monitor))
        }
        "spsa" => {
            let mut c = cfg.spsa.clone();
            c.seed = seed::derive(rs, tag::OPTIMIZER, 1);
            spsa2_with_monitor(problem.objective(), &theta0, &c, Some(&mut monitor))
        }
        other => return Err(CliError::Config(format!("unknown optimizer {other}"))),
    };
    let (theta, trace) = outcome.map_err(|a| {
        CliError::Run(format!(
            "{optimizer} repeat {repeat} aborted after {} iterations: {}",
            a.trace.len(),
            a.error
        ))
    })?;
    let hit = trace
        .iterations
        .iter()
        .position(|r| problem.converged(threshold, r));
    Ok(RunResult {
        optimizer,
        repeat,
        theta0: theta0.to_vec(),
        theta: theta.to_vec(),
        trace,
        converged: hit.is_some(),
        iterations: hit.map_or(cfg.max_iters, |k| k + 1),
    })
}

fn run_repeats(
    problem: &Problem,
    cfg: &ExperimentConfig,
    optimizer: &'static str,
    pspo: Option<&PspoConfig>,
) -> CliResult<Vec<RunResult>> {
    (0..cfg.repeats)
        .into_par_iter()
        .map(|r| run_one(problem, cfg, optimizer, r, pspo))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub optimizer: &'static str,
    pub repeats: usize,
    pub converged: usize,
    pub iters_mean: f64,
    pub iters_median: f64,
    pub iters_q1: f64,
    pub iters_q3: f64,
    pub evals_mean: f64,
    pub evals_median: f64,
}

impl Summary {
    pub fn nonconverged_rate(&self) -> f64 {
        (self.repeats - self.converged) as f64 / self.repeats as f64
    }

    pub fn of(optimizer: &'static str, runs: &[RunResult]) -> Self {
        let mut iters: Vec<f64> = runs.iter().map(|r| r.iterations as f64).collect();
        let mut evals: Vec<f64> = runs.iter().map(|r| r.total_evals() as f64).collect();
        iters.sort_by(f64::total_cmp);
        evals.sort_by(f64::total_cmp);
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        Self {
            optimizer,
            repeats: runs.len(),
            converged: runs.iter().filter(|r| r.converged).count(),
            iters_mean: mean(&iters),
            iters_median: quantile(&iters, 0.5),
            iters_q1: quantile(&iters, 0.25),
            iters_q3: quantile(&iters, 0.75),
            evals_mean: mean(&evals),
            evals_median: quantile(&evals, 0.5),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CompareOutcome {
    pub runs: Vec<RunResult>,
    pub summaries: Vec<Summary>,
    pub files: Vec<PathBuf>,
}

impl CompareOutcome {
    pub fn summary(&self, optimizer: &str) -> Option<&Summary> {
        self.summaries.iter().find(|s| s.optimizer == optimizer)
    }
}

/// Run every selected optimizer `repeats` times and write `runs.csv`,
/// `summary.csv` and `histogram.csv`.
pub fn run_compare(cfg: &ExperimentConfig) -> CliResult<CompareOutcome> {
    cfg.validate()?;
    prepare_out_dir(&cfg.out_dir)?;
    let problem = Problem::build(cfg)?;
    let mut runs = Vec::new();
    let mut summaries = Vec::new();
    for &name in cfg.optimizer.names() {
        let batch = run_repeats(&problem, cfg, name, None)?;
        summaries.push(Summary::of(name, &batch));
        runs.extend(batch);
    }
    let files = vec![
        write_csv(
            &cfg.out_dir,
            "runs.csv",
            &runs_header(problem.dim()),
            &runs_rows(&problem, &runs),
        )?,
        write_csv(
            &cfg.out_dir,
            "summary.csv",
            &summary_header(),
            &summary_rows(cfg, &summaries),
        )?,
        write_histogram(cfg, &runs)?,
    ];
    Ok(CompareOutcome {
        runs,
        summaries,
        files,
    })
}

pub fn runs_header(dim: usize) -> Vec<String> {
    let mut h: Vec<String> = [
        "optimizer",
        "repeat",
        "k",
        "true_objective",
        "objective_mean",
        "grad_norm",
        "rounds",
        "step_size",
        "beta",
        "step_norm",
        "cumulative_evals",
        "restart",
        "rounds_capped",
        "curvature_floored",
        "fallback",
        "step_capped",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    h.extend((0..dim).map(|i| format!("theta_{i}")));
    h
}

fn runs_rows(problem: &Problem, runs: &[RunResult]) -> Vec<Vec<String>> {
    let mut rows = Vec::new();
    for run in runs {
        for r in &run.trace.iterations {
            let mut row = vec![
                run.optimizer.to_string(),
                run.repeat.to_string(),
                r.k.to_string(),
                opt_num(problem.true_value(&r.theta)),
                opt_num(r.objective_mean),
                num(r.grad_norm),
                r.rounds.to_string(),
                num(r.step_size),
                opt_num(r.beta),
                num(r.step_norm),
                r.cumulative_evals.to_string(),
                flag(r.restart).into(),
                flag(r.rounds_capped).into(),
                flag(r.curvature_floored).into(),
                flag(r.fallback).into(),
                flag(r.step_capped).into(),
            ];
            row.extend(r.theta.iter().map(|&v| num(v)));
            rows.push(row);
        }
    }
    rows
}

pub fn summary_header() -> Vec<String> {
    [
        "optimizer",
        "repeats",
        "converged",
        "nonconverged_rate",
        "iters_mean",
        "iters_median",
        "iters_q1",
        "iters_q3",
        "evals_mean",
        "evals_median",
        "convergence_metric",
        "threshold",
        "max_iters",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

fn summary_rows(cfg: &ExperimentConfig, summaries: &[Summary]) -> Vec<Vec<String>> {
    summaries
        .iter()
        .map(|s| {
            vec![
                s.optimizer.to_string(),
                s.repeats.to_string(),
                s.converged.to_string(),
                num(s.nonconverged_rate()),
                num(s.iters_mean),
                num(s.iters_median),
                num(s.iters_q1),
                num(s.iters_q3),
                num(s.evals_mean),
                num(s.evals_median),
                cfg.convergence_metric().to_string(),
                num(cfg.threshold),
                cfg.max_iters.to_string(),
            ]
        })
        .collect()
}

/// Counts of iterations-to-converge in bins `1..=max_iters`, one column per
/// optimizer; non-converged runs land in the last bin.
fn write_histogram(cfg: &ExperimentConfig, runs: &[RunResult]) -> CliResult<PathBuf> {
    let names = cfg.optimizer.names();
    let mut header = vec!["iterations".to_string()];
    header.extend(names.iter().map(|s| s.to_string()));
    let rows: Vec<Vec<String>> = (1..=cfg.max_iters)
        .map(|bin| {
            let mut row = vec![bin.to_string()];
            for name in names {
                let n = runs
                    .iter()
                    .filter(|r| r.optimizer == *name && r.iterations == bin)
                    .count();
                row.push(n.to_string());
            }
            row
        })
        .collect();
    write_csv(&cfg.out_dir, "histogram.csv", &header, &rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub m: usize,
    pub repeat: usize,
    pub iterations: usize,
    pub converged: bool,
    pub total_evals: u64,
}

/// PSPO with the round count fixed at each of `cfg.m_values`; writes
/// `m_sweep.csv`.
pub fn run_m_sweep(cfg: &ExperimentConfig) -> CliResult<Vec<SweepRow>> {
    cfg.validate()?;
    prepare_out_dir(&cfg.out_dir)?;
    let problem = Problem::build(cfg)?;
    let mut rows = Vec::new();
    for &m in &cfg.m_values {
        let pspo = PspoConfig {
            fixed_rounds: Some(m),
            ..cfg.pspo.clone()
        };
        for run in run_repeats(&problem, cfg, "pspo", Some(&pspo))? {
            rows.push(SweepRow {
                m,
                repeat: run.repeat,
                iterations: run.iterations,
                converged: run.converged,
                total_evals: run.total_evals(),
            });
        }
    }
    let header: Vec<String> = ["m", "repeat", "iterations", "converged", "total_evals"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.m.to_string(),
                r.repeat.to_string(),
                r.iterations.to_string(),
                flag(r.converged).into(),
                r.total_evals.to_string(),
            ]
        })
        .collect();
    write_csv(&cfg.out_dir, "m_sweep.csv", &header, &body)?;
    Ok(rows)
}

/// Mean iterations-to-converge per `M`, in `m_values` order.
pub fn sweep_means(rows: &[SweepRow]) -> Vec<(usize, f64)> {
    let mut out: Vec<(usize, f64)> = Vec::new();
    for r in rows {
        if !out.iter().any(|(m, _)| *m == r.m) {
            let group: Vec<f64> = rows
                .iter()
                .filter(|x| x.m == r.m)
                .map(|x| x.iterations as f64)
                .collect();
            out.push((r.m, group.iter().sum::<f64>() / group.len() as f64));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseProbeRow {
    pub c: f64,
    pub epsilon: f64,
    pub sigma2: f64,
    pub rounds: usize,
    pub capped: bool,
}

/// Estimate the noise variance at the probe point and tabulate the round
/// counts it implies; writes `noise_probe.csv`.
pub fn run_noise_probe(cfg: &ExperimentConfig) -> CliResult<Vec<NoiseProbeRow>> {
    cfg.validate()?;
    prepare_out_dir(&cfg.out_dir)?;
    let problem = Problem::build(cfg)?;
    let np = &cfg.noise_probe;
    let point = np.point.clone().unwrap_or_else(|| match &problem {
        Problem::Quadratic(q) => vec![0.0; q.dim()],
        Problem::Sir { .. } => problem.centre(cfg),
    });
    if point.len() != problem.dim() {
        return Err(CliError::Config(format!(
            "noise probe point has {} entries, problem has {}",
            point.len(),
            problem.dim()
        )));
    }
    let point = ParamVector::new(point).map_err(|e| CliError::Config(e.to_string()))?;
    let sigma2 = estimate_noise_variance(
        problem.objective(),
        &point,
        np.replicates,
        seed::derive(cfg.seed, tag::NOISE_PROBE, 0),
    )?;
    let mut rows = Vec::new();
    for &c in &np.c_values {
        for &epsilon in &np.epsilon_values {
            let rc = rounds_for_tolerance(
                &ToleranceSpec {
                    epsilon,
                    sigma2,
                    c,
                    m_max: np.m_max,
                },
                problem.dim(),
            )
            .map_err(|e| CliError::Config(e.to_string()))?;
            rows.push(NoiseProbeRow {
                c,
                epsilon,
                sigma2,
                rounds: rc.rounds,
                capped: rc.capped,
            });
        }
    }
    let header: Vec<String> = ["c", "epsilon", "sigma2", "rounds", "capped"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                num(r.c),
                num(r.epsilon),
                num(r.sigma2),
                r.rounds.to_string(),
                flag(r.capped).into(),
            ]
        })
        .collect();
    write_csv(&cfg.out_dir, "noise_probe.csv", &header, &body)?;
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub run: RunResult,
    pub beta: f64,
    pub gamma: f64,
    pub truth: Option<SirParams>,
}

impl Calibration {
    /// Largest relative error of `(β, γ)` against the generating values.
    pub fn relative_error(&self) -> Option<f64> {
        self.truth.map(|t| {
            ((self.beta - t.beta) / t.beta)
                .abs()
                .max(((self.gamma - t.gamma) / t.gamma).abs())
        })
    }
}

/// Single SIR calibration per selected optimizer; writes
/// `calibrate_runs.csv` and `calibrate.csv`.
pub fn run_calibrate(cfg: &ExperimentConfig) -> CliResult<Vec<Calibration>> {
    if cfg.problem != ProblemKind::Sir {
        return Err(CliError::Config("calibrate needs the sir problem".into()));
    }
    cfg.validate()?;
    prepare_out_dir(&cfg.out_dir)?;
    let problem = Problem::build(cfg)?;
    let mut out = Vec::new();
    for &name in cfg.optimizer.names() {
        let run = run_one(&problem, cfg, name, 0, None)?;
        let p = SirParams::from_log(&run.theta);
        out.push(Calibration {
            beta: p.beta,
            gamma: p.gamma,
            truth: problem.truth(),
            run,
        });
    }
    let runs: Vec<RunResult> = out.iter().map(|c| c.run.clone()).collect();
    write_csv(
        &cfg.out_dir,
        "calibrate_runs.csv",
        &runs_header(2),
        &runs_rows(&problem, &runs),
    )?;
    let header: Vec<String> = [
        "optimizer",
        "beta",
        "gamma",
        "beta_true",
        "gamma_true",
        "iterations",
        "converged",
        "total_evals",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    let body: Vec<Vec<String>> = out
        .iter()
        .map(|c| {
            vec![
                c.run.optimizer.to_string(),
                num(c.beta),
                num(c.gamma),
                opt_num(c.truth.map(|t| t.beta)),
                opt_num(c.truth.map(|t| t.gamma)),
                c.run.iterations.to_string(),
                flag(c.run.converged).into(),
                c.run.total_evals().to_string(),
            ]
        })
        .collect();
    write_csv(&cfg.out_dir, "calibrate.csv", &header, &body)?;
    Ok(out)
}
