//! Experiment configuration: TOML file with full defaulting, overridden by
//! command-line flags and `PSPO_*` environment variables.

use std::path::{Path, PathBuf};

use pspo_core::{PspoConfig, SpsaConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ProblemKind {
    Quadratic,
    Sir,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerChoice {
    Pspo,
    Spsa,
    Both,
}

impl OptimizerChoice {
    pub fn names(self) -> &'static [&'static str] {
        match self {
            OptimizerChoice::Pspo => &["pspo"],
            OptimizerChoice::Spsa => &["spsa"],
            OptimizerChoice::Both => &["pspo", "spsa"],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuadraticConfig {
    pub dim: usize,
    pub sigma: f64,
    /// Starting points are `1 + U(−init_spread, init_spread)` per coordinate.
    pub init_spread: f64,
}

impl Default for QuadraticConfig {
    fn default() -> Self {
        Self {
            dim: 5,
            sigma: 3.0,
            init_spread: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SirConfig {
    /// Observed series; when absent a synthetic outbreak is generated.
    pub data: Option<PathBuf>,
    /// Generating parameters of the synthetic outbreak.
    pub beta: f64,
    pub gamma: f64,
    pub population: u64,
    pub initial_infected: u64,
    pub horizon_days: usize,
    /// Synthetic outbreaks are redrawn until this fraction was infected.
    pub min_attack: f64,
    /// Smoothing simulations per pseudo-likelihood evaluation.
    pub replicates: usize,
    /// Centre of the starting points.
    pub initial_beta: f64,
    pub initial_gamma: f64,
    /// Starting points are drawn uniformly within this distance of the
    /// centre in log space.
    pub init_log_spread: f64,
}

impl Default for SirConfig {
    fn default() -> Self {
        Self {
            data: None,
            beta: 0.6,
            gamma: 0.2,
            population: 188,
            initial_infected: 1,
            horizon_days: 120,
            min_attack: 0.2,
            replicates: 10,
            initial_beta: 0.4,
            initial_gamma: 0.3,
            init_log_spread: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseProbeConfig {
    /// Evaluation point; defaults to the problem's starting centre.
    pub point: Option<Vec<f64>>,
    pub replicates: usize,
    pub c_values: Vec<f64>,
    pub epsilon_values: Vec<f64>,
    pub m_max: usize,
}

impl Default for NoiseProbeConfig {
    fn default() -> Self {
        Self {
            point: None,
            replicates: 1000,
            c_values: vec![0.1, 0.5, 1.0],
            epsilon_values: vec![0.5, 1.0, 2.0],
            m_max: 1_000_000,
        }
    }
}

/// Raw file contents. Optimizer tables are kept as TOML so that they can be
/// layered over the problem-specific defaults.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FileConfig {
    problem: Option<ProblemKind>,
    optimizer: Option<OptimizerChoice>,
    repeats: Option<usize>,
    max_iters: Option<usize>,
    threshold: Option<f64>,
    seed: Option<u64>,
    out_dir: Option<PathBuf>,
    m_values: Option<Vec<usize>>,
    quadratic: QuadraticConfig,
    sir: SirConfig,
    noise_probe: NoiseProbeConfig,
    pspo: Option<toml::Table>,
    spsa: Option<toml::Table>,
}

/// Values given on the command line or through the environment.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub problem: Option<ProblemKind>,
    pub optimizer: Option<OptimizerChoice>,
    pub repeats: Option<usize>,
    pub max_iters: Option<usize>,
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub m_values: Option<Vec<usize>>,
    pub replicates: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub problem: ProblemKind,
    pub optimizer: OptimizerChoice,
    pub repeats: usize,
    pub max_iters: usize,
    /// Convergence threshold: true objective for the quadratic, update norm
    /// for SIR.
    pub threshold: f64,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub m_values: Vec<usize>,
    pub quadratic: QuadraticConfig,
    pub sir: SirConfig,
    pub noise_probe: NoiseProbeConfig,
    pub pspo: PspoConfig,
    pub spsa: SpsaConfig,
}

impl ExperimentConfig {
    /// Defaults for `problem`.
    pub fn defaults(problem: ProblemKind) -> Self {
        let max_iters = match problem {
            ProblemKind::Quadratic => 100,
            ProblemKind::Sir => 30,
        };
        let mut cfg = Self {
            problem,
            optimizer: OptimizerChoice::Both,
            repeats: match problem {
                ProblemKind::Quadratic => 200,
                ProblemKind::Sir => 100,
            },
            max_iters,
            threshold: default_threshold(problem),
            seed: 1,
            out_dir: PathBuf::from("out"),
            m_values: vec![1, 2, 5, 10, 20],
            quadratic: QuadraticConfig::default(),
            sir: SirConfig::default(),
            noise_probe: NoiseProbeConfig::default(),
            pspo: default_pspo(problem),
            spsa: default_spsa(problem),
        };
        cfg.sync_max_iters();
        cfg
    }

    /// Parse TOML text and apply `overrides` on top.
    pub fn from_toml(text: &str, overrides: &Overrides) -> CliResult<Self> {
        let file: FileConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        let problem = overrides
            .problem
            .or(file.problem)
            .unwrap_or(ProblemKind::Quadratic);
        let mut cfg = Self::defaults(problem);
        cfg.optimizer = overrides
            .optimizer
            .or(file.optimizer)
            .unwrap_or(cfg.optimizer);
        cfg.repeats = overrides.repeats.or(file.repeats).unwrap_or(cfg.repeats);
        cfg.max_iters = overrides
            .max_iters
            .or(file.max_iters)
            .unwrap_or(cfg.max_iters);
        cfg.threshold = file.threshold.unwrap_or(cfg.threshold);
        cfg.seed = overrides.seed.or(file.seed).unwrap_or(cfg.seed);
        cfg.out_dir = overrides
            .out_dir
            .clone()
            .or(file.out_dir)
            .unwrap_or(cfg.out_dir);
        cfg.m_values = overrides
            .m_values
            .clone()
            .or(file.m_values)
            .unwrap_or(cfg.m_values);
        cfg.quadratic = file.quadratic;
        cfg.sir = file.sir;
        if let Some(d) = &overrides.data {
            cfg.sir.data = Some(d.clone());
        }
        cfg.noise_probe = file.noise_probe;
        if let Some(k) = overrides.replicates {
            cfg.noise_probe.replicates = k;
        }
        if let Some(t) = file.pspo {
            cfg.pspo = layer(&cfg.pspo, t, "pspo")?;
        }
        if let Some(t) = file.spsa {
            cfg.spsa = layer(&cfg.spsa, t, "spsa")?;
        }
        cfg.sync_max_iters();
        cfg.validate()?;
        Ok(cfg)
    }

    /// Read `path` (if any) and apply `overrides`.
    pub fn load(path: Option<&Path>, overrides: &Overrides) -> CliResult<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?,
            None => String::new(),
        };
        Self::from_toml(&text, overrides)
    }

    /// The top-level `max_iters` governs both optimizers.
    fn sync_max_iters(&mut self) {
        self.pspo.stop.max_iters = self.max_iters;
        self.spsa.stop.max_iters = self.max_iters;
    }

    pub fn validate(&self) -> CliResult<()> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.repeats < 1 {
            return bad("repeats must be >= 1".into());
        }
        if self.max_iters < 1 {
            return bad("max_iters must be >= 1".into());
        }
        if !(self.threshold > 0.0) {
            return bad(format!(
                "threshold must be positive, got {}",
                self.threshold
            ));
        }
        if self.m_values.is_empty() || self.m_values.contains(&0) {
            return bad(format!(
                "m_values must be non-empty and >= 1, got {:?}",
                self.m_values
            ));
        }
        if self.quadratic.dim < 1
            || !(self.quadratic.sigma >= 0.0)
            || !(self.quadratic.init_spread >= 0.0)
        {
            return bad("quadratic needs dim >= 1, sigma >= 0, init_spread >= 0".into());
        }
        let s = &self.sir;
        if !(s.beta > 0.0 && s.gamma > 0.0 && s.initial_beta > 0.0 && s.initial_gamma > 0.0) {
            return bad("SIR rates must be positive".into());
        }
        if s.replicates < 1
            || s.population < 1
            || s.initial_infected < 1
            || s.initial_infected > s.population
        {
            return bad("SIR needs replicates >= 1 and 1 <= initial_infected <= population".into());
        }
        if !(0.0..=1.0).contains(&s.min_attack) || !(s.init_log_spread >= 0.0) {
            return bad("SIR min_attack must lie in [0, 1] and init_log_spread >= 0".into());
        }
        if self.noise_probe.replicates < 2 {
            return bad(format!(
                "noise probe needs at least 2 replicates, got {}",
                self.noise_probe.replicates
            ));
        }
        self.pspo
            .validate()
            .map_err(|e| CliError::Config(format!("pspo: {e}")))?;
        self.spsa
            .validate()
            .map_err(|e| CliError::Config(format!("spsa: {e}")))?;
        Ok(())
    }

    /// Human-readable convergence rule, written into summaries.
    pub fn convergence_metric(&self) -> &'static str {
        match self.problem {
            ProblemKind::Quadratic => "true_objective",
            ProblemKind::Sir => "update_norm",
        }
    }
}

pub fn default_threshold(problem: ProblemKind) -> f64 {
    match problem {
        ProblemKind::Quadratic => 0.5,
        ProblemKind::Sir => 0.01,
    }
}

/// PSPO settings tuned for each benchmark.
pub fn default_pspo(problem: ProblemKind) -> PspoConfig {
    match problem {
        ProblemKind::Quadratic => PspoConfig {
            c: 1.0,
            c_tilde: 0.5,
            ..PspoConfig::default()
        },
        ProblemKind::Sir => PspoConfig {
            c: 0.1,
            c_tilde: 0.05,
            curvature_floor: 10.0,
            max_step: Some(0.5),
            ..PspoConfig::default()
        },
    }
}

/// 2SPSA settings tuned for each benchmark.
pub fn default_spsa(problem: ProblemKind) -> SpsaConfig {
    match problem {
        ProblemKind::Quadratic => SpsaConfig {
            a: 1.0,
            c0: 1.5,
            pd_floor: 5.0,
            ..SpsaConfig::default()
        },
        ProblemKind::Sir => SpsaConfig {
            a: 1.0,
            c0: 0.1,
            pd_floor: 100.0,
            ..SpsaConfig::default()
        },
    }
}

fn layer<T>(base: &T, overlay: toml::Table, name: &str) -> CliResult<T>
where
    T: Serialize + for<'de> Deserialize<'de>,
{
    let mut table =
        toml::Table::try_from(base).map_err(|e| CliError::Config(format!("{name}: {e}")))?;
    merge(&mut table, overlay);
    toml::Value::Table(table)
        .try_into()
        .map_err(|e| CliError::Config(format!("{name}: {e}")))
}

fn merge(base: &mut toml::Table, overlay: toml::Table) {
    for (k, v) in overlay {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::defaults(ProblemKind::Quadratic)
    }
}
