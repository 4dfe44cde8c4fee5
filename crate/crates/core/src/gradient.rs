//! Parallel simultaneous perturbation (PSP) gradient estimation.
//!
//! With `M` perturbation columns `Δ = [Δ₁ … Δ_M]` and one-sided differences
//! `δfᵢ = f(θ + cΔᵢ) − f(θ)`, the gradient solves `Δᵀĝ ≈ δf / c`:
//!
//! * `M ≥ p`: least squares, `ĝ = (1/c)(ΔΔᵀ)⁻¹Δ δf`;
//! * `M < p`: minimum norm, `ĝ = (1/c)Δ(ΔᵀΔ)⁻¹ δf`.
//!
//! The base value `f(θ)` is evaluated once, so an estimate costs `M + 1`
//! evaluations, all issued as one concurrent batch.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::Evaluator;
use crate::perturbation::{build_perturbations, PerturbationMatrix};
use crate::seed;
use crate::types::ParamVector;

#[derive(Debug, Clone, PartialEq)]
pub struct GradientEstimate {
    pub g_hat: ParamVector,
    /// Perturbation rounds `M`.
    pub rounds: usize,
    pub c: f64,
    pub n_evals: u64,
    pub delta_seed: u64,
}

/// Inputs to the round-count bound `M ≥ max(p, σ²p / (c²ε²))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToleranceSpec {
    pub epsilon: f64,
    pub sigma2: f64,
    pub c: f64,
    pub m_max: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RoundCount {
    pub rounds: usize,
    /// The cap `m_max` was binding.
    pub capped: bool,
}

/// Number of parallel rounds needed for the gradient error tolerance
/// `spec.epsilon`, capped at `spec.m_max`.
pub fn rounds_for_tolerance(spec: &ToleranceSpec, p: usize) -> Result<RoundCount> {
    if p < 1 {
        return Err(Error::InvalidArgument("dimension must be >= 1".into()));
    }
    if !(spec.epsilon > 0.0 && spec.c > 0.0 && spec.sigma2 >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "tolerance needs epsilon > 0, c > 0, sigma2 >= 0 (got {spec:?})"
        )));
    }
    let noise_rounds = spec.sigma2 * p as f64 / (spec.c * spec.c * spec.epsilon * spec.epsilon);
    // Shave a few ulps so that exact integer ratios are not bumped up by
    // rounding in the division.
    let noise_rounds = (noise_rounds * (1.0 - 4.0 * f64::EPSILON)).ceil();
    let wanted = if noise_rounds.is_finite() && noise_rounds < usize::MAX as f64 {
        (noise_rounds as usize).max(p)
    } else {
        usize::MAX
    };
    let cap = spec.m_max.max(1);
    Ok(RoundCount {
        rounds: wanted.min(cap).max(1),
        capped: wanted > cap,
    })
}

/// `δfᵢ = f(θ + cΔᵢ) − f(θ)` for every column, from one batch of `M + 1`
/// evaluations. The base point uses a seed of its own; forward points use
/// one seed per column, all derived from `seed`.
pub fn function_differences(
    evaluator: &Evaluator<'_>,
    theta: &ParamVector,
    c: f64,
    delta: &PerturbationMatrix,
    seed: u64,
) -> Result<Vec<f64>> {
    if !(c > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "perturbation size must be positive, got {c}"
        )));
    }
    if delta.dim() != theta.dim() {
        return Err(Error::DimensionMismatch {
            expected: theta.dim(),
            got: delta.dim(),
        });
    }
    let m = delta.rounds();
    let mut points = Vec::with_capacity(m + 1);
    let mut seeds = Vec::with_capacity(m + 1);
    points.push(theta.clone());
    seeds.push(seed::derive(seed, seed::tag::BASE, 0));
    for i in 0..m {
        let x = theta.as_dvector() + delta.matrix().column(i) * c;
        points.push(ParamVector::from_dvector(x)?);
        seeds.push(seed::derive(seed, seed::tag::EVAL, i as u64));
    }
    let records = evaluator.evaluate_batch(&points, &seeds)?;
    if let Some((slot, rec)) = records.iter().enumerate().find(|(_, r)| r.failed) {
        return Err(Error::GradientEvaluation {
            column: slot.checked_sub(1),
            value: rec.value,
        });
    }
    let base = records[0].value;
    Ok(records[1..].iter().map(|r| r.value - base).collect())
}

fn check_lengths(delta: &PerturbationMatrix, deltaf: &[f64], c: f64) -> Result<()> {
    if deltaf.len() != delta.rounds() {
        return Err(Error::DimensionMismatch {
            expected: delta.rounds(),
            got: deltaf.len(),
        });
    }
    if !(c > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "perturbation size must be positive, got {c}"
        )));
    }
    Ok(())
}

/// Least-squares gradient `(1/c)(ΔΔᵀ)⁻¹Δ δf`. Requires `M ≥ p` and a
/// spanning `Δ`.
pub fn least_squares_gradient(
    delta: &PerturbationMatrix,
    deltaf: &[f64],
    c: f64,
) -> Result<ParamVector> {
    check_lengths(delta, deltaf, c)?;
    let (p, m) = (delta.dim(), delta.rounds());
    if m < p {
        return Err(Error::InvalidArgument(format!(
            "least squares needs M >= p (M={m}, p={p})"
        )));
    }
    let rank = delta.rank();
    if rank < p {
        return Err(Error::RankDeficient { rank, dim: p });
    }
    let d = delta.matrix();
    let rhs = d * DVector::from_column_slice(deltaf) / c;
    let chol = (d * d.transpose()).cholesky().ok_or(Error::Singular)?;
    ParamVector::from_dvector(chol.solve(&rhs))
}

/// Minimum-norm gradient `(1/c)Δ(ΔᵀΔ)⁻¹ δf`. Requires `M < p` and linearly
/// independent columns.
pub fn min_norm_gradient(
    delta: &PerturbationMatrix,
    deltaf: &[f64],
    c: f64,
) -> Result<ParamVector> {
    check_lengths(delta, deltaf, c)?;
    let (p, m) = (delta.dim(), delta.rounds());
    if m >= p {
        return Err(Error::InvalidArgument(format!(
            "minimum-norm solve is for M < p (M={m}, p={p})"
        )));
    }
    if delta.rank() < m {
        return Err(Error::Singular);
    }
    let d = delta.matrix();
    let gram: DMatrix<f64> = d.transpose() * d;
    let chol = gram.cholesky().ok_or(Error::Singular)?;
    let weights = chol.solve(&(DVector::from_column_slice(deltaf) / c));
    ParamVector::from_dvector(d * weights)
}

/// One PSP gradient estimate at `theta` with `rounds` perturbations.
///
/// The perturbation matrix and all evaluation seeds are derived from `seed`.
pub fn psp_gradient(
    evaluator: &Evaluator<'_>,
    theta: &ParamVector,
    c: f64,
    rounds: usize,
    seed: u64,
) -> Result<GradientEstimate> {
    let delta_seed = seed::derive(seed, seed::tag::PERTURBATION, 0);
    psp_gradient_seeded(evaluator, theta, c, rounds, delta_seed, seed)
}

/// [`psp_gradient`] with the perturbation-matrix seed given separately from
/// the evaluation seed, so several estimates can share one `Δ`.
pub fn psp_gradient_seeded(
    evaluator: &Evaluator<'_>,
    theta: &ParamVector,
    c: f64,
    rounds: usize,
    delta_seed: u64,
    seed: u64,
) -> Result<GradientEstimate> {
    if rounds < 1 {
        return Err(Error::InvalidArgument(
            "PSP needs at least one round".into(),
        ));
    }
    let p = theta.dim();
    if evaluator.dim() != p {
        return Err(Error::DimensionMismatch {
            expected: evaluator.dim(),
            got: p,
        });
    }
    let delta = build_perturbations(p, rounds, delta_seed)?;
    let deltaf = function_differences(evaluator, theta, c, &delta, seed)?;
    let g_hat = if rounds >= p {
        least_squares_gradient(&delta, &deltaf, c)?
    } else {
        min_norm_gradient(&delta, &deltaf, c)?
    };
    Ok(GradientEstimate {
        g_hat,
        rounds,
        c,
        n_evals: rounds as u64 + 1,
        delta_seed,
    })
}

/// Anything that can produce a gradient estimate with a requested number of
/// rounds. PSPO is written against this so exact gradients can be injected.
pub trait GradientSource: Sync {
    fn dim(&self) -> usize;

    /// Estimate with perturbation matrix seed `delta_seed` and evaluation
    /// seed `seed`.
    fn gradient_with(
        &self,
        theta: &ParamVector,
        rounds: usize,
        delta_seed: u64,
        seed: u64,
    ) -> Result<GradientEstimate>;

    fn gradient(&self, theta: &ParamVector, rounds: usize, seed: u64) -> Result<GradientEstimate> {
        self.gradient_with(
            theta,
            rounds,
            seed::derive(seed, seed::tag::PERTURBATION, 0),
            seed,
        )
    }

    /// Assumed noise variance of the underlying objective, if known.
    fn noise_variance_hint(&self) -> Option<f64> {
        None
    }

    /// Sample the noise variance at `theta`. Returns the estimate and the
    /// number of evaluations spent, or `None` if the source cannot sample.
    fn estimate_noise_variance(
        &self,
        _theta: &ParamVector,
        _replicates: usize,
        _seed: u64,
    ) -> Result<Option<(f64, u64)>> {
        Ok(None)
    }
}

/// PSP estimates against an objective, with perturbation size `c`.
pub struct PspGradient<'a> {
    evaluator: Evaluator<'a>,
    c: f64,
}

impl<'a> PspGradient<'a> {
    pub fn new(evaluator: Evaluator<'a>, c: f64) -> Self {
        Self { evaluator, c }
    }

    pub fn evaluator(&self) -> &Evaluator<'a> {
        &self.evaluator
    }

    pub fn c(&self) -> f64 {
        self.c
    }
}

impl GradientSource for PspGradient<'_> {
    fn dim(&self) -> usize {
        self.evaluator.dim()
    }

    fn gradient_with(
        &self,
        theta: &ParamVector,
        rounds: usize,
        delta_seed: u64,
        seed: u64,
    ) -> Result<GradientEstimate> {
        psp_gradient_seeded(&self.evaluator, theta, self.c, rounds, delta_seed, seed)
    }

    fn noise_variance_hint(&self) -> Option<f64> {
        self.evaluator.objective().noise_sigma_hint().map(|s| s * s)
    }

    fn estimate_noise_variance(
        &self,
        theta: &ParamVector,
        replicates: usize,
        seed: u64,
    ) -> Result<Option<(f64, u64)>> {
        let v = self
            .evaluator
            .estimate_noise_variance(theta, replicates, seed)?;
        Ok(Some((v, replicates as u64)))
    }
}
