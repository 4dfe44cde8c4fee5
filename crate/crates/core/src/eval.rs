//! The black-box objective contract and the parallel batch evaluator.

use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{Duration, Instant};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::seed;
use crate::types::ParamVector;

/// A noisy, replayable black-box objective.
///
/// `eval` must be a pure function of `(x, seed)`: the same pair always
/// returns the same value. Different seeds at the same point model
/// independent noisy observations. Implementations are called concurrently
/// from several workers.
pub trait Objective: Send + Sync {
    fn dim(&self) -> usize;

    fn eval(&self, x: &[f64], seed: u64) -> f64;

    /// Assumed noise standard deviation, when known.
    fn noise_sigma_hint(&self) -> Option<f64> {
        None
    }
}

impl<T: Objective + ?Sized> Objective for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn eval(&self, x: &[f64], seed: u64) -> f64 {
        (**self).eval(x, seed)
    }

    fn noise_sigma_hint(&self) -> Option<f64> {
        (**self).noise_sigma_hint()
    }
}

/// Adapts a closure `(x, seed) -> value` into an [`Objective`].
pub struct FnObjective<F> {
    dim: usize,
    f: F,
    sigma_hint: Option<f64>,
}

impl<F> FnObjective<F>
where
    F: Fn(&[f64], u64) -> f64 + Send + Sync,
{
    pub fn new(dim: usize, f: F) -> Self {
        Self {
            dim,
            f,
            sigma_hint: None,
        }
    }

    pub fn with_sigma_hint(mut self, sigma: f64) -> Self {
        self.sigma_hint = Some(sigma);
        self
    }
}

impl<F> Objective for FnObjective<F>
where
    F: Fn(&[f64], u64) -> f64 + Send + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, x: &[f64], seed: u64) -> f64 {
        (self.f)(x, seed)
    }

    fn noise_sigma_hint(&self) -> Option<f64> {
        self.sigma_hint
    }
}

#[derive(Debug, Clone)]
pub struct EvalRecord {
    pub point: ParamVector,
    pub seed: u64,
    pub value: f64,
    pub wall_time: Duration,
    /// Set when the objective returned NaN or an infinity.
    pub failed: bool,
}

impl EvalRecord {
    pub fn is_ok(&self) -> bool {
        !self.failed
    }
}

/// Evaluate `points[i]` with `seeds[i]` for every `i`, concurrently.
///
/// Output order matches input order. A non-finite value does not abort the
/// batch; the corresponding record is flagged instead.
pub fn evaluate_batch(
    objective: &dyn Objective,
    points: &[ParamVector],
    seeds: &[u64],
) -> Result<Vec<EvalRecord>> {
    run_batch(objective, points, seeds, true)
}

fn run_batch(
    objective: &dyn Objective,
    points: &[ParamVector],
    seeds: &[u64],
    parallel: bool,
) -> Result<Vec<EvalRecord>> {
    if points.is_empty() {
        return Err(Error::InvalidArgument(
            "batch must contain at least one point".into(),
        ));
    }
    if points.len() != seeds.len() {
        return Err(Error::InvalidArgument(format!(
            "{} points but {} seeds",
            points.len(),
            seeds.len()
        )));
    }
    let dim = objective.dim();
    if let Some(bad) = points.iter().find(|p| p.dim() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: bad.dim(),
        });
    }

    let one = |(point, &seed): (&ParamVector, &u64)| {
        let start = Instant::now();
        let value = objective.eval(point.as_slice(), seed);
        EvalRecord {
            point: point.clone(),
            seed,
            value,
            wall_time: start.elapsed(),
            failed: !value.is_finite(),
        }
    };
    let records = if parallel && points.len() > 1 {
        points.par_iter().zip(seeds.par_iter()).map(one).collect()
    } else {
        points.iter().zip(seeds.iter()).map(one).collect()
    };
    Ok(records)
}

/// How a batch is spread over workers. Results never depend on the choice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Workers {
    #[default]
    Parallel,
    Sequential,
}

/// Batch evaluator bound to one objective, with a running evaluation count.
pub struct Evaluator<'a> {
    objective: &'a dyn Objective,
    workers: Workers,
    evals: AtomicU64,
}

impl<'a> Evaluator<'a> {
    pub fn new(objective: &'a dyn Objective) -> Self {
        Self {
            objective,
            workers: Workers::Parallel,
            evals: AtomicU64::new(0),
        }
    }

    pub fn with_workers(mut self, workers: Workers) -> Self {
        self.workers = workers;
        self
    }

    pub fn objective(&self) -> &'a dyn Objective {
        self.objective
    }

    pub fn dim(&self) -> usize {
        self.objective.dim()
    }

    /// Total objective evaluations issued through this evaluator.
    pub fn evaluations(&self) -> u64 {
        self.evals.load(Ordering::Relaxed)
    }

    pub fn evaluate_batch(&self, points: &[ParamVector], seeds: &[u64]) -> Result<Vec<EvalRecord>> {
        let records = run_batch(
            self.objective,
            points,
            seeds,
            self.workers == Workers::Parallel,
        )?;
        self.evals
            .fetch_add(records.len() as u64, Ordering::Relaxed);
        Ok(records)
    }
}

/// Unbiased sample variance of `replicates` evaluations at `point`, each with
/// a distinct seed derived from `seed`.
pub fn estimate_noise_variance(
    objective: &dyn Objective,
    point: &ParamVector,
    replicates: usize,
    seed: u64,
) -> Result<f64> {
    Evaluator::new(objective).estimate_noise_variance(point, replicates, seed)
}

impl Evaluator<'_> {
    /// [`estimate_noise_variance`] through this evaluator, so the
    /// replicates count toward [`Evaluator::evaluations`].
    pub fn estimate_noise_variance(
        &self,
        point: &ParamVector,
        replicates: usize,
        seed: u64,
    ) -> Result<f64> {
        if replicates < 2 {
            return Err(Error::InvalidArgument(format!(
                "noise variance needs at least 2 replicates, got {replicates}"
            )));
        }
        let points = vec![point.clone(); replicates];
        let seeds: Vec<u64> = (0..replicates as u64)
            .map(|i| seed::derive(seed, seed::tag::NOISE_PROBE, i))
            .collect();
        let records = self.evaluate_batch(&points, &seeds)?;
        if let Some((slot, r)) = records.iter().enumerate().find(|(_, r)| r.failed) {
            return Err(Error::EvaluationFailed {
                slot,
                value: r.value,
            });
        }
        let n = replicates as f64;
        let mean = records.iter().map(|r| r.value).sum::<f64>() / n;
        let ss: f64 = records.iter().map(|r| (r.value - mean).powi(2)).sum();
        Ok(ss / (n - 1.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shifted_sq(x: &[f64], _seed: u64) -> f64 {
        x.iter().map(|v| (v - 1.0).powi(2)).sum()
    }

    #[test]
    fn minimizer_evaluates_to_zero() {
        let f = FnObjective::new(5, shifted_sq);
        let recs = evaluate_batch(&f, &[ParamVector::from_element(5, 1.0)], &[0]).unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].value, 0.0);
    }

    #[test]
    fn same_seed_replays() {
        let f = FnObjective::new(2, |x: &[f64], s: u64| x[0] + (s % 97) as f64 * 0.37);
        let p = ParamVector::new(vec![0.5, 0.1]).unwrap();
        let recs = evaluate_batch(&f, &[p.clone(), p], &[7, 7]).unwrap();
        assert_eq!(recs[0].value.to_bits(), recs[1].value.to_bits());
    }

    #[test]
    fn dimension_mismatch_rejected_before_evaluation() {
        use std::sync::atomic::AtomicUsize;
        let calls = AtomicUsize::new(0);
        let f = FnObjective::new(3, |_: &[f64], _| {
            calls.fetch_add(1, Ordering::SeqCst);
            0.0
        });
        let pts = vec![ParamVector::zeros(3), ParamVector::zeros(2)];
        let err = evaluate_batch(&f, &pts, &[1, 2]).unwrap_err();
        assert_eq!(
            err,
            Error::DimensionMismatch {
                expected: 3,
                got: 2
            }
        );
        assert_eq!(calls.load(Ordering::SeqCst), 0);
    }

    #[test]
    fn length_mismatch_and_empty_rejected() {
        let f = FnObjective::new(1, |_: &[f64], _| 0.0);
        assert!(evaluate_batch(&f, &[ParamVector::zeros(1)], &[1, 2]).is_err());
        assert!(evaluate_batch(&f, &[], &[]).is_err());
    }

    #[test]
    fn non_finite_values_are_flagged_not_dropped() {
        let f = FnObjective::new(1, |x: &[f64], _| if x[0] > 0.0 { f64::NAN } else { 1.0 });
        let pts = vec![
            ParamVector::new(vec![-1.0]).unwrap(),
            ParamVector::new(vec![1.0]).unwrap(),
            ParamVector::new(vec![-2.0]).unwrap(),
        ];
        let recs = evaluate_batch(&f, &pts, &[0, 1, 2]).unwrap();
        assert_eq!(recs.len(), 3);
        assert!(recs[0].is_ok() && recs[1].failed && recs[2].is_ok());
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let f = FnObjective::new(2, |x: &[f64], s: u64| {
            x[0] * 3.0 - x[1] + (seed::mix(s) >> 11) as f64 / (1u64 << 53) as f64
        });
        let pts: Vec<_> = (0..257)
            .map(|i| ParamVector::new(vec![i as f64 * 0.1, -(i as f64)]).unwrap())
            .collect();
        let seeds: Vec<u64> = (0..257).map(|i| seed::derive(9, 0, i)).collect();
        let par = Evaluator::new(&f);
        let seq = Evaluator::new(&f).with_workers(Workers::Sequential);
        let a = par.evaluate_batch(&pts, &seeds).unwrap();
        let b = seq.evaluate_batch(&pts, &seeds).unwrap();
        for (i, (x, y)) in a.iter().zip(&b).enumerate() {
            assert_eq!(x.value.to_bits(), y.value.to_bits());
            assert_eq!(x.point, pts[i]);
            assert_eq!(x.seed, seeds[i]);
        }
        assert_eq!(par.evaluations(), 257);
        par.evaluate_batch(&pts[..3], &seeds[..3]).unwrap();
        assert_eq!(par.evaluations(), 260);
    }

    #[test]
    fn noise_variance_of_deterministic_objective_is_zero() {
        let f = FnObjective::new(5, shifted_sq);
        let v = estimate_noise_variance(&f, &ParamVector::zeros(5), 10, 3).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn noise_variance_needs_two_replicates() {
        let f = FnObjective::new(5, shifted_sq);
        assert!(estimate_noise_variance(&f, &ParamVector::zeros(5), 1, 3).is_err());
    }
}
