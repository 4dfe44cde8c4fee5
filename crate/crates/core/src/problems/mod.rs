//! Benchmark objectives.

mod epidemic;
mod quadratic;
mod sir;

pub use epidemic::{load_epidemic_csv, parse_epidemic_csv, EpidemicSeries};
pub use quadratic::{noisy_quadratic_eval, NoisyQuadratic};
pub use sir::{
    simulate_sir, sir_neg_log_pseudolikelihood, synthetic_outbreak, SirCalibration, SirParams,
};
