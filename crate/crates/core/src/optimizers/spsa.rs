//! Second-order SPSA (2SPSA).
//!
//! Per iteration: a one-sided simultaneous-perturbation gradient, a
//! per-iteration Hessian from gradient differences at `θ ± c̃Δ̃`, a running
//! average of those Hessians, and a Newton-like step through the average
//! projected onto the positive definite cone.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    project_pd, report_mean, Aborted, IterationRecord, Monitor, OptimizerTrace, Outcome,
    StopCriteria, StopReason,
};
use crate::error::{Error, Result};
use crate::eval::{Evaluator, Objective};
use crate::seed::{self, tag};
use crate::types::ParamVector;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpsaConfig {
    /// Gain `a_k = a / (A + k + 1)^alpha_exp`.
    pub a: f64,
    /// Stability constant `A`; `None` means 10% of `max_iters`.
    pub big_a: Option<f64>,
    pub alpha_exp: f64,
    /// Perturbation size `c_k = c0 / (k + 1)^gamma_exp`.
    pub c0: f64,
    pub gamma_exp: f64,
    /// `c̃_k = c_tilde_factor · c_k`.
    pub c_tilde_factor: f64,
    /// Eigenvalue floor of the projected Hessian average.
    pub pd_floor: f64,
    pub stop: StopCriteria,
    pub seed: u64,
    pub report_replicates: usize,
}

impl Default for SpsaConfig {
    fn default() -> Self {
        Self {
            a: 1.0,
            big_a: None,
            alpha_exp: 0.602,
            c0: 0.1,
            gamma_exp: 0.101,
            c_tilde_factor: 0.5,
            pd_floor: 1e-4,
            stop: StopCriteria::default(),
            seed: 0,
            report_replicates: 3,
        }
    }
}

impl SpsaConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidArgument(format!("SPSA config: {msg}")));
        if !(self.alpha_exp > 0.0 && self.alpha_exp <= 1.0) {
            return bad("alpha_exp must lie in (0, 1]");
        }
        if !(self.gamma_exp > 0.0) {
            return bad("gamma_exp must be positive");
        }
        if !(self.a > 0.0 && self.c0 > 0.0 && self.c_tilde_factor > 0.0 && self.pd_floor > 0.0) {
            return bad("a, c0, c_tilde_factor and pd_floor must be positive");
        }
        if matches!(self.big_a, Some(v) if !(v >= 0.0)) {
            return bad("A must be nonnegative");
        }
        Ok(())
    }

    fn stability(&self) -> f64 {
        self.big_a.unwrap_or(0.1 * self.stop.max_iters as f64)
    }

    pub fn gain(&self, k: usize) -> f64 {
        self.a / (self.stability() + k as f64 + 1.0).powf(self.alpha_exp)
    }

    pub fn perturbation(&self, k: usize) -> f64 {
        self.c0 / (k as f64 + 1.0).powf(self.gamma_exp)
    }
}

fn random_signs(p: usize, seed: u64) -> DVector<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DVector::from_iterator(
        p,
        (0..p).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }),
    )
}

/// `(y⁺ − y⁻)/(2c_k) · Δ_k⁻¹` with `y^± = f(θ ± c_kΔ_k)`; for ±1 entries the
/// elementwise inverse is `Δ_k` itself.
pub fn two_sided_gradient(
    evaluator: &Evaluator<'_>,
    theta: &ParamVector,
    c_k: f64,
    delta_k: &DVector<f64>,
    seed: u64,
) -> Result<ParamVector> {
    if !(c_k > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "perturbation size must be positive, got {c_k}"
        )));
    }
    if delta_k.len() != theta.dim() {
        return Err(Error::DimensionMismatch {
            expected: theta.dim(),
            got: delta_k.len(),
        });
    }
    if delta_k.iter().any(|&v| v != 1.0 && v != -1.0) {
        return Err(Error::InvalidArgument(
            "perturbation entries must be +1 or -1".into(),
        ));
    }
    let plus = ParamVector::from_dvector(theta.as_dvector() + delta_k * c_k)?;
    let minus = ParamVector::from_dvector(theta.as_dvector() - delta_k * c_k)?;
    let seeds = [
        seed::derive(seed, tag::EVAL, 0),
        seed::derive(seed, tag::EVAL, 1),
    ];
    let recs = evaluator.evaluate_batch(&[plus, minus], &seeds)?;
    if let Some((slot, r)) = recs.iter().enumerate().find(|(_, r)| r.failed) {
        return Err(Error::EvaluationFailed {
            slot,
            value: r.value,
        });
    }
    ParamVector::from_dvector(delta_k * ((recs[0].value - recs[1].value) / (2.0 * c_k)))
}

/// Per-iteration symmetric Hessian `½[(δG/2c̃) Δ̃⁻¹ᵀ + ((δG/2c̃) Δ̃⁻¹ᵀ)ᵀ]`.
pub fn spsa_hessian(
    delta_g: &DVector<f64>,
    c_tilde: f64,
    delta_tilde: &DVector<f64>,
) -> DMatrix<f64> {
    let inv = delta_tilde.map(|v| 1.0 / v);
    let x = (delta_g / (2.0 * c_tilde)) * inv.transpose();
    (&x + x.transpose()) * 0.5
}

pub fn spsa2_minimize(
    objective: &dyn Objective,
    theta0: &ParamVector,
    config: &SpsaConfig,
) -> Outcome {
    spsa2_with_monitor(objective, theta0, config, None)
}

/// 2SPSA with a per-iteration monitor that can declare convergence.
pub fn spsa2_with_monitor(
    objective: &dyn Objective,
    theta0: &ParamVector,
    config: &SpsaConfig,
    mut monitor: Option<Monitor<'_>>,
) -> Outcome {
    let abort = |error: Error, trace: OptimizerTrace| Aborted { error, trace };
    if let Err(e) = config.validate() {
        return Err(abort(e, OptimizerTrace::new(0)));
    }
    let p = theta0.dim();
    if objective.dim() != p {
        return Err(abort(
            Error::DimensionMismatch {
                expected: objective.dim(),
                got: p,
            },
            OptimizerTrace::new(0),
        ));
    }
    let evaluator = Evaluator::new(objective);
    let mut trace = OptimizerTrace::new(0);
    let mut theta = theta0.as_dvector().clone();
    let mut h_bar = DMatrix::<f64>::zeros(p, p);

    for k in 0..config.stop.max_iters {
        let step = match spsa_step(&evaluator, config, k, &theta, &h_bar) {
            Ok(s) => s,
            Err(e) => {
                trace.stop_reason = StopReason::EvaluationFailed;
                return Err(abort(e, trace));
            }
        };
        h_bar = step.h_bar;
        let grad_small = config
            .stop
            .grad_norm_tol
            .is_some_and(|tol| step.gradient.norm() <= tol);
        let next = if grad_small { theta.clone() } else { step.next };
        let step_norm = (&next - &theta).norm();

        let record = IterationRecord {
            k,
            theta: next.as_slice().to_vec(),
            objective_mean: report_mean(
                Some(objective),
                next.as_slice(),
                config.report_replicates,
                config.seed,
                k,
            ),
            gradient: step.gradient.as_slice().to_vec(),
            grad_norm: step.gradient.norm(),
            direction: step.direction.as_slice().to_vec(),
            rounds: 1,
            step_size: config.gain(k),
            beta: None,
            step_norm,
            cumulative_evals: evaluator.evaluations(),
            restart: false,
            rounds_capped: false,
            curvature_floored: step.projected,
            fallback: false,
            step_capped: false,
        };
        let stop_by_monitor = monitor.as_mut().is_some_and(|m| m(&record));
        trace.iterations.push(record);
        theta = next;

        if grad_small {
            trace.converged = true;
            trace.stop_reason = StopReason::GradientNorm;
            break;
        }
        if stop_by_monitor {
            trace.converged = true;
            trace.stop_reason = StopReason::Monitor;
            break;
        }
        if config.stop.step_tol.is_some_and(|tol| step_norm <= tol) {
            trace.converged = true;
            trace.stop_reason = StopReason::StepSize;
            break;
        }
    }
    Ok((
        ParamVector::from_dvector(theta).expect("iterates stay finite"),
        trace,
    ))
}

struct SpsaStep {
    gradient: DVector<f64>,
    direction: DVector<f64>,
    h_bar: DMatrix<f64>,
    next: DVector<f64>,
    projected: bool,
}

fn spsa_step(
    evaluator: &Evaluator<'_>,
    config: &SpsaConfig,
    k: usize,
    theta: &DVector<f64>,
    h_prev: &DMatrix<f64>,
) -> Result<SpsaStep> {
    let p = theta.len();
    let c_k = config.perturbation(k);
    let c_tilde = config.c_tilde_factor * c_k;
    let delta = random_signs(p, seed::derive(config.seed, tag::PERTURBATION, k as u64));
    let delta_tilde = random_signs(
        p,
        seed::derive(config.seed, tag::HESSIAN_PERTURBATION, k as u64),
    );

    // One batch: θ, θ + cΔ, and the same pair around θ ± c̃Δ̃.
    let centers = [
        theta.clone(),
        theta + &delta_tilde * c_tilde,
        theta - &delta_tilde * c_tilde,
    ];
    let mut points = Vec::with_capacity(6);
    for center in &centers {
        points.push(ParamVector::from_dvector(center.clone())?);
        points.push(ParamVector::from_dvector(center + &delta * c_k)?);
    }
    let iter_seed = seed::derive(config.seed, tag::ITERATION, k as u64);
    let seeds: Vec<u64> = (0..6)
        .map(|i| seed::derive(iter_seed, tag::EVAL, i))
        .collect();
    let recs = evaluator.evaluate_batch(&points, &seeds)?;
    if let Some((slot, r)) = recs.iter().enumerate().find(|(_, r)| r.failed) {
        return Err(Error::EvaluationFailed {
            slot,
            value: r.value,
        });
    }
    let one_sided = |base: usize| -> DVector<f64> {
        &delta * ((recs[base + 1].value - recs[base].value) / c_k)
    };
    let gradient = one_sided(0);
    let delta_g = one_sided(2) - one_sided(4);

    let h_k = spsa_hessian(&delta_g, c_tilde, &delta_tilde);
    let w = k as f64 / (k as f64 + 1.0);
    let h_bar = h_prev * w + h_k * (1.0 - w);
    let projection = project_pd(&h_bar, config.pd_floor)?;
    let projected = projection.matrix != h_bar;
    let chol = projection.matrix.cholesky().ok_or(Error::Singular)?;
    let newton = chol.solve(&gradient);
    let direction = -newton;
    let next = theta + &direction * config.gain(k);
    if next.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "SPSA iterate became non-finite at iteration {k}"
        )));
    }
    Ok(SpsaStep {
        gradient,
        direction,
        h_bar,
        next,
        projected,
    })
}
