//! Derivative-free stochastic optimization for noisy black-box objectives.
//!
//! The crate provides:
//!
//! * a parallel, order-preserving batch evaluator for replayable noisy
//!   objectives ([`eval`]),
//! * sign-flip perturbation matrices ([`perturbation`]),
//! * parallel simultaneous perturbation (PSP) gradient estimation with
//!   least-squares and minimum-norm solves, plus round-count sizing from a
//!   gradient error tolerance ([`gradient`]),
//! * reduced-Hessian curvature estimation ([`hessian`]),
//! * the PSPO conjugate-gradient optimizer and a second-order SPSA baseline
//!   ([`optimizers`]),
//! * benchmark problems: a noisy quadratic and a chain-binomial SIR
//!   calibration problem ([`problems`]).

// Negated comparisons reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod eval;
pub mod gradient;
pub mod hessian;
pub mod optimizers;
pub mod perturbation;
pub mod problems;
pub mod seed;
pub mod types;

pub use error::{Error, Result};
pub use eval::{
    estimate_noise_variance, evaluate_batch, EvalRecord, Evaluator, FnObjective, Objective,
};
pub use gradient::{
    psp_gradient, rounds_for_tolerance, GradientEstimate, RoundCount, ToleranceSpec,
};
pub use hessian::{curvature_along, full_hessian_estimate, reduced_hessian, ReducedHessian};
pub use optimizers::{
    pspo_minimize, spsa2_minimize, IterationRecord, OptimizerTrace, PspoConfig, SpsaConfig,
    StopCriteria, StopReason,
};
pub use perturbation::{build_perturbations, PerturbationMatrix};
pub use problems::{EpidemicSeries, NoisyQuadratic, SirCalibration, SirParams};
pub use types::ParamVector;
