//! Discrete-time chain-binomial SIR model and its pseudo-likelihood.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use super::epidemic::EpidemicSeries;
use crate::error::{Error, Result};
use crate::eval::Objective;
use crate::seed;

/// Transmission and recovery rates, per day.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SirParams {
    pub beta: f64,
    pub gamma: f64,
}

impl SirParams {
    pub fn new(beta: f64, gamma: f64) -> Result<Self> {
        if !(beta > 0.0 && gamma > 0.0 && beta.is_finite() && gamma.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "SIR rates must be positive and finite (beta={beta}, gamma={gamma})"
            )));
        }
        Ok(Self { beta, gamma })
    }

    /// From `(ln β, ln γ)`, the coordinates the optimizers work in.
    pub fn from_log(x: &[f64]) -> Self {
        Self {
            beta: x[0].exp(),
            gamma: x[1].exp(),
        }
    }

    pub fn to_log(self) -> [f64; 2] {
        [self.beta.ln(), self.gamma.ln()]
    }

    pub fn r0(self) -> f64 {
        self.beta / self.gamma
    }
}

fn binomial(n: u64, p: f64, rng: &mut ChaCha8Rng) -> u64 {
    if n == 0 || p <= 0.0 {
        return 0;
    }
    if p >= 1.0 {
        return n;
    }
    Binomial::new(n, p)
        .expect("valid binomial parameters")
        .sample(rng)
}

/// One chain-binomial step of length `dt` from `(s, i, r)`.
#[inline]
fn step(
    beta: f64,
    gamma: f64,
    n: f64,
    dt: f64,
    state: (u64, u64, u64),
    rng: &mut ChaCha8Rng,
) -> (u64, u64, u64) {
    let (s, i, r) = state;
    let p_inf = 1.0 - (-beta * i as f64 * dt / n).exp();
    let p_rec = 1.0 - (-gamma * dt).exp();
    let new_inf = binomial(s, p_inf, rng);
    let new_rec = binomial(i, p_rec, rng);
    (s - new_inf, i + new_inf - new_rec, r + new_rec)
}

/// Simulate the chain-binomial SIR model, recording every step.
///
/// Rates may be zero here (`β = 0` switches off transmission, `γ = 0`
/// recovery); the series starts at `t = 0` and has
/// `round(horizon / dt) + 1` rows.
pub fn simulate_sir(
    params: SirParams,
    init: (u64, u64, u64),
    horizon: f64,
    dt: f64,
    seed: u64,
) -> Result<EpidemicSeries> {
    let (s0, i0, r0) = init;
    if i0 < 1 {
        return Err(Error::InvalidArgument(
            "initial infected count must be >= 1".into(),
        ));
    }
    if !(dt > 0.0 && horizon >= 0.0 && horizon.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "invalid time grid (horizon={horizon}, dt={dt})"
        )));
    }
    if !(params.beta >= 0.0 && params.gamma >= 0.0) {
        return Err(Error::InvalidArgument(
            "SIR rates must be nonnegative".into(),
        ));
    }
    let n = (s0 + i0 + r0) as f64;
    let steps = (horizon / dt).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut times = Vec::with_capacity(steps + 1);
    let (mut ss, mut is, mut rs) = (
        Vec::with_capacity(steps + 1),
        Vec::with_capacity(steps + 1),
        Vec::with_capacity(steps + 1),
    );
    let mut state = init;
    for k in 0..=steps {
        if k > 0 {
            state = step(params.beta, params.gamma, n, dt, state, &mut rng);
        }
        times.push(k as f64 * dt);
        ss.push(state.0);
        is.push(state.1);
        rs.push(state.2);
    }
    EpidemicSeries::new(times, ss, is, rs)
}

/// Synthetic outbreak data: simulate with step `dt`, observe once per day,
/// and redraw (with derived seeds) until at least `min_attack` of the
/// population has been infected. Observation stops at extinction.
pub fn synthetic_outbreak(
    params: SirParams,
    population: u64,
    initial_infected: u64,
    horizon_days: usize,
    min_attack: f64,
    seed: u64,
) -> Result<EpidemicSeries> {
    if initial_infected < 1 || initial_infected > population {
        return Err(Error::InvalidArgument(
            "initial infected count out of range".into(),
        ));
    }
    const SUBSTEPS: usize = 10;
    let init = (population - initial_infected, initial_infected, 0);
    for attempt in 0..10_000u64 {
        let sim = simulate_sir(
            params,
            init,
            horizon_days as f64,
            1.0 / SUBSTEPS as f64,
            seed::derive(seed, seed::tag::DATA, attempt),
        )?;
        let daily = sim.thin(SUBSTEPS);
        // Re-stamp exact integer days; k·dt accumulates no error but thin keeps k·0.1.
        let days: Vec<f64> = (0..daily.len()).map(|d| d as f64).collect();
        let daily = EpidemicSeries::new(
            days,
            daily.susceptible().to_vec(),
            daily.infected().to_vec(),
            daily.recovered().to_vec(),
        )?;
        if daily.final_size() as f64 >= min_attack * population as f64 {
            return Ok(daily.until_extinction());
        }
    }
    Err(Error::InvalidArgument(
        "no major outbreak in 10000 attempts".into(),
    ))
}

const PROB_CLAMP: f64 = 1e-12;

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

fn ln_choose(n: u64, k: u64) -> f64 {
    let k = k.min(n - k);
    (1..=k).map(|j| ((n - k + j) as f64 / j as f64).ln()).sum()
}

fn binomial_log_pmf(k: u64, n: u64, p: f64) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let p = clamp_prob(p);
    ln_choose(n, k) + k as f64 * p.ln() + (n - k) as f64 * (1.0 - p).ln()
}

/// Simulated person-days of infection over one observation interval,
/// averaged over `replicates` chain-binomial paths from `start`.
fn smoothed_infectious_time(
    params: SirParams,
    population: f64,
    start: (u64, u64, u64),
    interval: f64,
    substeps: usize,
    replicates: usize,
    rng: &mut ChaCha8Rng,
) -> f64 {
    if start.1 == 0 {
        return 0.0;
    }
    let h = interval / substeps as f64;
    let mut total = 0.0;
    for _ in 0..replicates {
        let mut state = start;
        for _ in 0..substeps {
            let next = step(params.beta, params.gamma, population, h, state, rng);
            total += 0.5 * (state.1 + next.1) as f64 * h;
            state = next;
        }
    }
    total / replicates as f64
}

/// Sub-steps per observation interval for the smoothing simulations.
pub const SMOOTHING_SUBSTEPS: usize = 10;

/// Negative log pseudo-likelihood of observed S/I/R increments.
///
/// Between consecutive observations `j → j+1`, new infections
/// `S_j − S_{j+1}` are scored as `Binomial(S_j, 1 − exp(−β·Ī_j/N))` and
/// recoveries `R_{j+1} − R_j` as `Binomial(I_j + new infections,
/// 1 − exp(−γ·Ī_j/(I_j + new infections)))`, where `Ī_j` is the infectious
/// person-time over the interval averaged across `replicates` short
/// simulations started from the observed state. Those simulations are the
/// only source of randomness, so the value's noise shrinks as `replicates`
/// grows. Probabilities are clamped to `[1e-12, 1 − 1e-12]`.
pub fn sir_neg_log_pseudolikelihood(
    params: SirParams,
    data: &EpidemicSeries,
    replicates: usize,
    seed: u64,
) -> Result<f64> {
    if replicates < 1 {
        return Err(Error::InvalidArgument("replicates must be >= 1".into()));
    }
    for k in 1..data.len() {
        let (s0, _, r0) = data.state(k - 1);
        let (s1, _, r1) = data.state(k);
        if s1 > s0 || r1 < r0 {
            return Err(Error::Data(format!(
                "susceptible count rises or recovered count falls at t={}",
                data.times()[k]
            )));
        }
    }
    Ok(neg_log_pl(params, data, replicates, seed))
}

fn neg_log_pl(params: SirParams, data: &EpidemicSeries, replicates: usize, seed: u64) -> f64 {
    let n = data.population() as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut nll = 0.0;
    for k in 1..data.len() {
        let start = data.state(k - 1);
        let (s1, _, r1) = data.state(k);
        let interval = data.times()[k] - data.times()[k - 1];
        let infections = start.0 - s1;
        let recoveries = r1 - start.2;
        let person_time = smoothed_infectious_time(
            params,
            n,
            start,
            interval,
            SMOOTHING_SUBSTEPS,
            replicates,
            &mut rng,
        );
        let p_inf = 1.0 - (-params.beta * person_time / n).exp();
        nll -= binomial_log_pmf(infections, start.0, p_inf);
        let at_risk = start.1 + infections;
        if at_risk > 0 {
            let p_rec = 1.0 - (-params.gamma * person_time / at_risk as f64).exp();
            nll -= binomial_log_pmf(recoveries, at_risk, p_rec);
        }
    }
    nll
}

/// SIR calibration as a 2-dimensional black box over `(ln β, ln γ)`.
#[derive(Debug, Clone)]
pub struct SirCalibration {
    data: EpidemicSeries,
    replicates: usize,
}

impl SirCalibration {
    pub fn new(data: EpidemicSeries, replicates: usize) -> Result<Self> {
        // Validate monotonicity once, up front.
        sir_neg_log_pseudolikelihood(SirParams::new(1.0, 1.0)?, &data, replicates.max(1), 0)?;
        if replicates < 1 {
            return Err(Error::InvalidArgument("replicates must be >= 1".into()));
        }
        Ok(Self { data, replicates })
    }

    pub fn data(&self) -> &EpidemicSeries {
        &self.data
    }
}

impl Objective for SirCalibration {
    fn dim(&self) -> usize {
        2
    }

    fn eval(&self, x: &[f64], seed: u64) -> f64 {
        let params = SirParams::from_log(x);
        if !(params.beta.is_finite() && params.gamma.is_finite()) {
            return f64::NAN;
        }
        neg_log_pl(params, &self.data, self.replicates, seed)
    }
}
