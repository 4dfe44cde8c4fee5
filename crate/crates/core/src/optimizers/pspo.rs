//! PSPO: conjugate-gradient search on PSP gradients with a reduced-Hessian
//! step length.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::{
    conjugate_beta, newton_step_size, report_mean, Aborted, IterationRecord, Monitor,
    OptimizerTrace, Outcome, StopCriteria, StopReason,
};
use crate::error::{Error, Result};
use crate::eval::{Evaluator, Objective};
use crate::gradient::{
    rounds_for_tolerance, GradientEstimate, GradientSource, PspGradient, RoundCount, ToleranceSpec,
};
use crate::hessian::reduced_hessian;
use crate::seed::{self, tag};
use crate::types::ParamVector;

/// Directions shorter than this are treated as zero when probing curvature.
const ZERO_DIRECTION: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PspoConfig {
    /// Perturbation size of the PSP gradient.
    pub c: f64,
    /// Length of the curvature probe `d̃`; normally smaller than `c`.
    pub c_tilde: f64,
    /// Gradient tolerance schedule `ε_k = epsilon0 / (k+1)^gamma_eps`.
    pub epsilon0: f64,
    pub gamma_eps: f64,
    /// Bounds on the round count; `None` means `p` and `10p`.
    pub m_min: Option<usize>,
    pub m_max: Option<usize>,
    /// Use exactly this many rounds every iteration, ignoring the schedule.
    pub fixed_rounds: Option<usize>,
    /// Noise variance override. Otherwise the objective's hint is used, and
    /// failing that an estimate from `noise_replicates` samples at `θ₀`.
    pub sigma2: Option<f64>,
    pub noise_replicates: usize,
    /// Re-estimate the noise variance every this many iterations.
    pub noise_reestimate_every: Option<usize>,
    /// Lower bound on `dᵀĤd / ‖d‖²` in the step length.
    pub curvature_floor: f64,
    /// Step length along `−ĝ/‖ĝ‖` when the Newton step is not finite.
    pub fallback_step: f64,
    /// Upper bound on `‖θ_{k+1} − θ_k‖`; `None` leaves Newton steps uncapped.
    pub max_step: Option<f64>,
    pub stop: StopCriteria,
    pub seed: u64,
    /// Fresh samples averaged for the reported objective value.
    pub report_replicates: usize,
}

impl Default for PspoConfig {
    fn default() -> Self {
        Self {
            c: 0.1,
            c_tilde: 0.05,
            epsilon0: 1.0,
            gamma_eps: 0.5,
            m_min: None,
            m_max: None,
            fixed_rounds: None,
            sigma2: None,
            noise_replicates: 10,
            noise_reestimate_every: None,
            curvature_floor: 1e-6,
            fallback_step: 0.1,
            max_step: None,
            stop: StopCriteria::default(),
            seed: 0,
            report_replicates: 3,
        }
    }
}

impl PspoConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidArgument(format!("PSPO config: {msg}")));
        if !(self.c > 0.0) || !(self.c_tilde > 0.0) {
            return bad("c and c_tilde must be positive");
        }
        if !(self.epsilon0 > 0.0) || !(self.gamma_eps >= 0.0) {
            return bad("epsilon0 must be positive and gamma_eps nonnegative");
        }
        if !(self.curvature_floor > 0.0) || !(self.fallback_step > 0.0) {
            return bad("curvature_floor and fallback_step must be positive");
        }
        if let (Some(lo), Some(hi)) = (self.m_min, self.m_max) {
            if lo > hi {
                return bad("m_min exceeds m_max");
            }
        }
        if matches!(self.max_step, Some(s) if !(s > 0.0)) {
            return bad("max_step must be positive");
        }
        if self.m_min == Some(0) || self.m_max == Some(0) || self.fixed_rounds == Some(0) {
            return bad("round counts must be >= 1");
        }
        if matches!(self.sigma2, Some(s) if !(s >= 0.0)) {
            return bad("sigma2 must be nonnegative");
        }
        if self.noise_reestimate_every == Some(0) {
            return bad("noise_reestimate_every must be >= 1");
        }
        Ok(())
    }

    /// `ε_k`.
    pub fn tolerance_at(&self, k: usize) -> f64 {
        self.epsilon0 / ((k + 1) as f64).powf(self.gamma_eps)
    }

    /// Rounds for iteration `k` in dimension `p` under noise variance `sigma2`.
    pub fn rounds_at(&self, k: usize, p: usize, sigma2: f64) -> Result<RoundCount> {
        if let Some(m) = self.fixed_rounds {
            return Ok(RoundCount {
                rounds: m,
                capped: false,
            });
        }
        let m_min = self.m_min.unwrap_or(p);
        let m_max = self.m_max.unwrap_or(10 * p);
        let spec = ToleranceSpec {
            epsilon: self.tolerance_at(k),
            sigma2,
            c: self.c,
            m_max,
        };
        let r = rounds_for_tolerance(&spec, p)?;
        Ok(RoundCount {
            rounds: r.rounds.max(m_min),
            capped: r.capped,
        })
    }
}

/// Run PSPO on `objective` from `theta0`.
pub fn pspo_minimize(
    objective: &dyn Objective,
    theta0: &ParamVector,
    config: &PspoConfig,
) -> Outcome {
    pspo_observed(objective, theta0, config, None)
}

/// [`pspo_minimize`] with a per-iteration monitor that can declare convergence.
pub fn pspo_observed(
    objective: &dyn Objective,
    theta0: &ParamVector,
    config: &PspoConfig,
    monitor: Option<Monitor<'_>>,
) -> Outcome {
    let source = PspGradient::new(Evaluator::new(objective), config.c);
    pspo_with_source(&source, theta0, config, Some(objective), monitor)
}

struct Resolved {
    sigma2: f64,
    setup_evals: u64,
}

fn resolve_noise(
    source: &dyn GradientSource,
    theta0: &ParamVector,
    config: &PspoConfig,
) -> Result<Resolved> {
    if let Some(s) = config.sigma2 {
        return Ok(Resolved {
            sigma2: s,
            setup_evals: 0,
        });
    }
    if let Some(s) = source.noise_variance_hint() {
        return Ok(Resolved {
            sigma2: s,
            setup_evals: 0,
        });
    }
    let est = source.estimate_noise_variance(
        theta0,
        config.noise_replicates.max(2),
        seed::derive(config.seed, tag::NOISE_PROBE, 0),
    )?;
    Ok(match est {
        Some((s, n)) => Resolved {
            sigma2: s,
            setup_evals: n,
        },
        None => Resolved {
            sigma2: 0.0,
            setup_evals: 0,
        },
    })
}

/// PSPO against any gradient source. `report` supplies the objective for
/// the diagnostic objective means; `monitor` may stop the run.
///
/// Each iteration `k`:
/// 1. sizes `M_k` from the tolerance schedule and estimates `ĝ_k` at `θ_k`;
/// 2. sets `r = −ĝ_k`, `β` by Polak–Ribière against the previous estimate
///    and `d = r + β d_prev`, restarting with `d = r` when `rᵀd ≤ 0`, `β`
///    is undefined, or `p` directions have been used since the last restart;
/// 3. probes gradients at `θ_k ± d̃`, `d̃ = c̃ d/‖d‖`, to form the reduced
///    Hessian, and steps `θ_{k+1} = θ_k + α d` with
///    `α = −ĝ_kᵀd / max(dᵀĤd, floor‖d‖²)`.
///
/// The initial direction comes from a single-round estimate at `θ₀`.
pub fn pspo_with_source(
    source: &dyn GradientSource,
    theta0: &ParamVector,
    config: &PspoConfig,
    report: Option<&dyn Objective>,
    mut monitor: Option<Monitor<'_>>,
) -> Outcome {
    let abort = |error: Error, trace: OptimizerTrace| Aborted { error, trace };
    let p = theta0.dim();
    if let Err(e) = config.validate() {
        return Err(abort(e, OptimizerTrace::new(0)));
    }
    if source.dim() != p {
        return Err(abort(
            Error::DimensionMismatch {
                expected: source.dim(),
                got: p,
            },
            OptimizerTrace::new(0),
        ));
    }

    let Resolved {
        mut sigma2,
        setup_evals,
    } = match resolve_noise(source, theta0, config) {
        Ok(r) => r,
        Err(e) => return Err(abort(e, OptimizerTrace::new(0))),
    };
    let mut evals = setup_evals;
    let init = match source.gradient(theta0, 1, seed::derive(config.seed, tag::INIT, 0)) {
        Ok(g) => g,
        Err(e) => return Err(abort(e, OptimizerTrace::new(evals))),
    };
    evals += init.n_evals;
    let mut trace = OptimizerTrace::new(evals);

    let mut theta = theta0.as_dvector().clone();
    let mut g_prev = init.g_hat.as_dvector().clone();
    let mut d_prev = -&g_prev;
    let mut since_restart = 0usize;

    for k in 0..config.stop.max_iters {
        if let Some(every) = config.noise_reestimate_every {
            if k > 0 && k % every == 0 && config.sigma2.is_none() {
                let here = ParamVector::from_dvector(theta.clone()).expect("iterate is finite");
                match source.estimate_noise_variance(
                    &here,
                    config.noise_replicates.max(2),
                    seed::derive(config.seed, tag::NOISE_PROBE, k as u64),
                ) {
                    Ok(Some((s, n))) => {
                        sigma2 = s;
                        evals += n;
                    }
                    Ok(None) => {}
                    Err(e) => {
                        trace.stop_reason = StopReason::EvaluationFailed;
                        return Err(abort(e, trace));
                    }
                }
            }
        }

        let step = match iterate(
            source,
            config,
            k,
            p,
            sigma2,
            &theta,
            &g_prev,
            &d_prev,
            since_restart,
        ) {
            Ok(s) => s,
            Err(e) => {
                trace.stop_reason = StopReason::EvaluationFailed;
                return Err(abort(e, trace));
            }
        };
        evals += step.evals;

        let grad_small = config
            .stop
            .grad_norm_tol
            .is_some_and(|tol| step.gradient.norm() <= tol);
        let (next, alpha, step_norm, restart, direction, fallback, floored, capped) = if grad_small
        {
            (
                theta.clone(),
                0.0,
                0.0,
                step.restart,
                step.direction.clone(),
                false,
                false,
                false,
            )
        } else {
            (
                step.next,
                step.alpha,
                step.step_norm,
                step.restart,
                step.direction.clone(),
                step.fallback,
                step.floored,
                step.capped,
            )
        };

        let record = IterationRecord {
            k,
            theta: next.as_slice().to_vec(),
            objective_mean: report_mean(
                report,
                next.as_slice(),
                config.report_replicates,
                config.seed,
                k,
            ),
            gradient: step.gradient.as_slice().to_vec(),
            grad_norm: step.gradient.norm(),
            direction: direction.as_slice().to_vec(),
            rounds: step.rounds.rounds,
            step_size: alpha,
            beta: step.beta,
            step_norm,
            cumulative_evals: evals,
            restart,
            rounds_capped: step.rounds.capped,
            curvature_floored: floored,
            fallback,
            step_capped: capped,
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

        g_prev = step.gradient;
        d_prev = direction;
        since_restart = if step.restart || step.fallback {
            1
        } else {
            since_restart + 1
        };
    }

    let theta = ParamVector::from_dvector(theta).expect("iterates stay finite");
    Ok((theta, trace))
}

struct Step {
    gradient: DVector<f64>,
    direction: DVector<f64>,
    beta: Option<f64>,
    restart: bool,
    rounds: RoundCount,
    alpha: f64,
    next: DVector<f64>,
    step_norm: f64,
    evals: u64,
    floored: bool,
    fallback: bool,
    capped: bool,
}

#[allow(clippy::too_many_arguments)]
fn iterate(
    source: &dyn GradientSource,
    config: &PspoConfig,
    k: usize,
    p: usize,
    sigma2: f64,
    theta: &DVector<f64>,
    g_prev: &DVector<f64>,
    d_prev: &DVector<f64>,
    since_restart: usize,
) -> Result<Step> {
    let rounds = config.rounds_at(k, p, sigma2)?;
    let m = rounds.rounds;
    let here = ParamVector::from_dvector(theta.clone())?;
    let est = source.gradient(&here, m, seed::derive(config.seed, tag::GRADIENT, k as u64))?;
    let mut evals = est.n_evals;
    let g = est.g_hat.as_dvector().clone();
    let r = -&g;

    let beta = conjugate_beta(&g, g_prev);
    let mut direction = match beta {
        Some(b) => &r + d_prev * b,
        None => r.clone(),
    };
    let restart = beta.is_none() || since_restart >= p || r.dot(&direction) <= 0.0;
    if restart {
        direction = r.clone();
    }

    let norm = direction.norm();
    let probe = if norm < ZERO_DIRECTION {
        let mut e1 = DVector::zeros(p);
        e1[0] = config.c_tilde;
        e1
    } else {
        &direction * (config.c_tilde / norm)
    };
    let plus = ParamVector::from_dvector(theta + &probe)?;
    let minus = ParamVector::from_dvector(theta - &probe)?;
    // Both probes share one perturbation matrix so that the finite-difference
    // bias of the two estimates cancels in δG.
    let probe_delta = seed::derive(config.seed, tag::HESSIAN_PERTURBATION, k as u64);
    let (gp, gm) = rayon::join(
        || {
            source.gradient_with(
                &plus,
                m,
                probe_delta,
                seed::derive(config.seed, tag::PROBE_PLUS, k as u64),
            )
        },
        || {
            source.gradient_with(
                &minus,
                m,
                probe_delta,
                seed::derive(config.seed, tag::PROBE_MINUS, k as u64),
            )
        },
    );
    let (gp, gm): (GradientEstimate, GradientEstimate) = (gp?, gm?);
    evals += gp.n_evals + gm.n_evals;

    if norm < ZERO_DIRECTION {
        // Nothing to step along.
        return Ok(Step {
            gradient: g,
            direction,
            beta,
            restart,
            rounds,
            alpha: 0.0,
            next: theta.clone(),
            step_norm: 0.0,
            evals,
            floored: false,
            fallback: false,
            capped: false,
        });
    }

    let hessian = reduced_hessian(&gp.g_hat, &gm.g_hat, &ParamVector::from_dvector(probe)?)?;
    let newton = newton_step_size(&g, &direction, &hessian, config.curvature_floor)?;
    let mut alpha = newton.alpha;
    let capped = config
        .max_step
        .is_some_and(|cap| (alpha * norm).abs() > cap);
    if let (true, Some(cap)) = (capped, config.max_step) {
        alpha = cap / norm * alpha.signum();
    }
    let candidate = theta + &direction * alpha;
    if alpha.is_finite() && candidate.iter().all(|v| v.is_finite()) {
        return Ok(Step {
            gradient: g,
            direction,
            beta,
            restart,
            rounds,
            alpha,
            next: candidate,
            step_norm: (alpha * norm).abs(),
            evals,
            floored: newton.floored,
            fallback: false,
            capped,
        });
    }

    // Steepest descent with a fixed step.
    let rn = r.norm();
    let fallback_step = config
        .max_step
        .map_or(config.fallback_step, |cap| config.fallback_step.min(cap));
    let (next, step_norm) = if rn > 0.0 && rn.is_finite() {
        (theta + &r * (fallback_step / rn), fallback_step)
    } else {
        (theta.clone(), 0.0)
    };
    Ok(Step {
        gradient: g,
        direction: r,
        beta,
        restart: true,
        rounds,
        alpha: fallback_step / rn,
        next,
        step_norm,
        evals,
        floored: newton.floored,
        fallback: true,
        capped: fallback_step < config.fallback_step,
    })
}
