//! PSPO and the second-order SPSA baseline.
//!
//! Both optimizers emit an [`OptimizerTrace`] with the same record layout so
//! runs can be compared directly.

mod pspo;
mod spsa;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{Error as CoreError, Result};
use crate::eval::Objective;
use crate::hessian::ReducedHessian;
use crate::seed;
use crate::types::ParamVector;

pub use pspo::{pspo_minimize, pspo_observed, pspo_with_source, PspoConfig};
pub use spsa::{spsa2_minimize, spsa2_with_monitor, two_sided_gradient, SpsaConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StopCriteria {
    /// Stop when the estimated gradient norm falls to this value.
    pub grad_norm_tol: Option<f64>,
    /// Stop when the update norm falls to this value.
    pub step_tol: Option<f64>,
    pub max_iters: usize,
}

impl Default for StopCriteria {
    fn default() -> Self {
        Self {
            grad_norm_tol: None,
            step_tol: None,
            max_iters: 100,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    GradientNorm,
    StepSize,
    MaxIterations,
    /// The caller's monitor reported convergence.
    Monitor,
    EvaluationFailed,
}

impl StopReason {
    pub fn as_str(self) -> &'static str {
        match self {
            StopReason::GradientNorm => "gradient-norm",
            StopReason::StepSize => "step-size",
            StopReason::MaxIterations => "max-iterations",
            StopReason::Monitor => "monitor",
            StopReason::EvaluationFailed => "evaluation-failed",
        }
    }
}

/// State at the end of iteration `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub k: usize,
    /// Parameters after this iteration's update.
    pub theta: Vec<f64>,
    /// Mean of a few fresh objective samples at `theta`; diagnostics only.
    pub objective_mean: Option<f64>,
    /// Gradient estimate used this iteration (taken at the pre-update point).
    pub gradient: Vec<f64>,
    pub grad_norm: f64,
    /// Search direction used this iteration.
    pub direction: Vec<f64>,
    /// Perturbation rounds per gradient estimate.
    pub rounds: usize,
    /// Step length: α for PSPO, the gain `a_k` for SPSA.
    pub step_size: f64,
    /// Conjugacy coefficient (PSPO only).
    pub beta: Option<f64>,
    /// `‖θ_{k+1} − θ_k‖`.
    pub step_norm: f64,
    pub cumulative_evals: u64,
    /// The direction was reset to the negative gradient.
    pub restart: bool,
    /// The round count hit its cap.
    pub rounds_capped: bool,
    /// The curvature safeguard replaced the estimated curvature.
    pub curvature_floored: bool,
    /// A non-finite step forced a fixed steepest-descent fallback.
    pub fallback: bool,
    /// The step was shortened to the configured maximum length.
    pub step_capped: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerTrace {
    pub iterations: Vec<IterationRecord>,
    pub converged: bool,
    pub stop_reason: StopReason,
    /// Evaluations issued before the first iteration (initial gradient,
    /// noise estimation).
    pub setup_evals: u64,
}

impl OptimizerTrace {
    fn new(setup_evals: u64) -> Self {
        Self {
            iterations: Vec::new(),
            converged: false,
            stop_reason: StopReason::MaxIterations,
            setup_evals,
        }
    }

    pub fn total_evals(&self) -> u64 {
        self.iterations
            .last()
            .map_or(self.setup_evals, |r| r.cumulative_evals)
    }

    pub fn len(&self) -> usize {
        self.iterations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.iterations.is_empty()
    }
}

/// A run stopped by an error; carries everything recorded up to the failure.
#[derive(Debug, Clone, Error)]
#[error("optimization aborted after {} iterations: {error}", trace.iterations.len())]
pub struct Aborted {
    pub error: CoreError,
    pub trace: OptimizerTrace,
}

pub type Outcome = std::result::Result<(ParamVector, OptimizerTrace), Aborted>;

/// Per-iteration callback; returning `true` stops the run as converged.
pub type Monitor<'m> = &'m mut dyn FnMut(&IterationRecord) -> bool;

/// Polak–Ribière coefficient `g_newᵀ(g_new − g_old) / g_oldᵀg_old`.
///
/// `None` when `g_old = 0`; the caller restarts along the negative gradient.
pub fn conjugate_beta(g_new: &DVector<f64>, g_old: &DVector<f64>) -> Option<f64> {
    let denom = g_old.dot(g_old);
    if denom == 0.0 {
        return None;
    }
    Some(g_new.dot(&(g_new - g_old)) / denom)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonStep {
    pub alpha: f64,
    pub floored: bool,
}

/// `α = −gᵀd / max(dᵀH_d d, floor·‖d‖²)`.
pub fn newton_step_size(
    g: &DVector<f64>,
    d: &DVector<f64>,
    h: &ReducedHessian,
    floor: f64,
) -> Result<NewtonStep> {
    let dd = d.dot(d);
    if !(dd > 0.0) {
        return Err(CoreError::ZeroDirection);
    }
    if g.len() != d.len() || h.dim() != d.len() {
        return Err(CoreError::DimensionMismatch {
            expected: d.len(),
            got: g.len().min(h.dim()),
        });
    }
    let curvature = h.quadratic_form(d);
    let min_curvature = floor * dd;
    let floored = !(curvature >= min_curvature);
    let denom = if floored { min_curvature } else { curvature };
    Ok(NewtonStep {
        alpha: -g.dot(d) / denom,
        floored,
    })
}

/// Asymmetry (max `|H − Hᵀ|` entry) above which input is symmetrized and flagged.
pub const SYMMETRY_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub matrix: DMatrix<f64>,
    /// The input was not symmetric and was replaced by `(H + Hᵀ)/2` first.
    pub symmetrized: bool,
}

/// Project a symmetric matrix onto `{H : H ⪰ floor·I}` by clamping
/// eigenvalues. Returns the input unchanged if it already satisfies the floor.
pub fn project_pd(h: &DMatrix<f64>, floor: f64) -> Result<Projection> {
    if !h.is_square() || h.nrows() == 0 {
        return Err(CoreError::InvalidArgument(
            "projection needs a non-empty square matrix".into(),
        ));
    }
    if !(floor > 0.0) {
        return Err(CoreError::InvalidArgument(format!(
            "eigenvalue floor must be positive, got {floor}"
        )));
    }
    if h.iter().any(|v| !v.is_finite()) {
        return Err(CoreError::InvalidArgument(
            "matrix has non-finite entries".into(),
        ));
    }
    let asym = (h - h.transpose()).amax();
    let symmetrized = asym > SYMMETRY_TOL;
    let sym = if symmetrized {
        (h + h.transpose()) * 0.5
    } else {
        h.clone()
    };
    let eig = SymmetricEigen::new(sym.clone());
    if eig.eigenvalues.min() >= floor {
        return Ok(Projection {
            matrix: sym,
            symmetrized,
        });
    }
    let clamped = eig.eigenvalues.map(|l| l.max(floor));
    let q = &eig.eigenvectors;
    let mut out = q * DMatrix::from_diagonal(&clamped) * q.transpose();
    // Remove round-off asymmetry.
    out = (&out + out.transpose()) * 0.5;
    Ok(Projection {
        matrix: out,
        symmetrized,
    })
}

fn report_mean(
    objective: Option<&dyn Objective>,
    theta: &[f64],
    replicates: usize,
    run_seed: u64,
    k: usize,
) -> Option<f64> {
    let objective = objective?;
    if replicates == 0 {
        return None;
    }
    let base = seed::derive(run_seed, seed::tag::REPORT, k as u64);
    let sum: f64 = (0..replicates as u64)
        .map(|r| objective.eval(theta, seed::derive(base, 0, r)))
        .sum();
    Some(sum / replicates as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hessian::reduced_hessian;

    fn dv(v: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(v)
    }

    fn pv(v: &[f64]) -> ParamVector {
        ParamVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn beta_examples() {
        let g = dv(&[0.3, -1.2, 2.0]);
        assert_eq!(conjugate_beta(&g, &g), Some(0.0));
        assert_eq!(
            conjugate_beta(&dv(&[0.0, 1.0]), &dv(&[1.0, 0.0])),
            Some(1.0)
        );
        let b = conjugate_beta(&(&g * 2.0), &g).unwrap();
        assert!((b - 2.0).abs() < 1e-14);
        assert_eq!(conjugate_beta(&g, &dv(&[0.0, 0.0, 0.0])), None);
    }

    #[test]
    fn exact_newton_step_on_identity_quadratic() {
        let theta = dv(&[0.0, 2.0, -1.0, 0.5, 3.0]);
        let g = (&theta - DVector::from_element(5, 1.0)) * 2.0;
        let d = -&g;
        let probe = &d / d.norm() * 0.1;
        let gp = (&theta + &probe - DVector::from_element(5, 1.0)) * 2.0;
        let gm = (&theta - &probe - DVector::from_element(5, 1.0)) * 2.0;
        let h = reduced_hessian(
            &ParamVector::from_dvector(gp).unwrap(),
            &ParamVector::from_dvector(gm).unwrap(),
            &ParamVector::from_dvector(probe).unwrap(),
        )
        .unwrap();
        let step = newton_step_size(&g, &d, &h, 1e-6).unwrap();
        assert!((step.alpha - 0.5).abs() < 1e-12);
        assert!(!step.floored);
        let next = &theta + &d * step.alpha;
        assert!((next - DVector::from_element(5, 1.0)).amax() < 1e-12);
    }

    #[test]
    fn negative_curvature_is_floored() {
        let h = reduced_hessian(&pv(&[-1.0, 0.0]), &pv(&[1.0, 0.0]), &pv(&[0.1, 0.0])).unwrap();
        let g = dv(&[1.0, 0.0]);
        let d = dv(&[-1.0, 0.0]);
        let step = newton_step_size(&g, &d, &h, 1e-6).unwrap();
        assert!(step.floored);
        assert!(step.alpha.is_finite());
        assert!((step.alpha - 1.0 / 1e-6).abs() < 1e-3);
    }

    #[test]
    fn orthogonal_gradient_gives_zero_step() {
        let h = reduced_hessian(&pv(&[1.0, 0.0]), &pv(&[0.0, 0.0]), &pv(&[0.5, 0.0])).unwrap();
        let step = newton_step_size(&dv(&[0.0, 3.0]), &dv(&[1.0, 0.0]), &h, 1e-6).unwrap();
        assert_eq!(step.alpha, 0.0);
        assert!(newton_step_size(&dv(&[0.0, 3.0]), &dv(&[0.0, 0.0]), &h, 1e-6).is_err());
    }

    #[test]
    fn projection_examples() {
        let id = DMatrix::<f64>::identity(3, 3);
        assert_eq!(project_pd(&id, 1e-4).unwrap().matrix, id);
        let h = DMatrix::from_diagonal(&dv(&[2.0, -1.0]));
        let p = project_pd(&h, 1e-4).unwrap();
        assert!((p.matrix.clone() - DMatrix::from_diagonal(&dv(&[2.0, 1e-4]))).amax() < 1e-12);
        assert!(!p.symmetrized);
    }

    #[test]
    fn projection_symmetrizes_and_flags() {
        let h = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        let p = project_pd(&h, 1e-3).unwrap();
        assert!(p.symmetrized);
        assert!((p.matrix.clone() - p.matrix.transpose()).amax() == 0.0);
        assert!(project_pd(&h, 0.0).is_err());
    }
}
