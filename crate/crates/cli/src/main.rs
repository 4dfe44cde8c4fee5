use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pspo_cli::{
    run_calibrate, run_compare, run_m_sweep, run_noise_probe, sweep_means, CliError, CliResult,
    ExperimentConfig, OptimizerChoice, Overrides, ProblemKind,
};

/// PSPO / 2SPSA experiment runner. Every flag can also be set through the
/// matching `PSPO_*` environment variable; flags win over the environment,
/// which wins over the config file.
#[derive(Parser, Debug)]
#[command(name = "pspo", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Compare optimizers over repeated runs (runs.csv, summary.csv, histogram.csv).
    Compare(Common),
    /// PSPO iterations-to-converge for fixed round counts (m_sweep.csv).
    MSweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated round counts.
        #[arg(long, env = "PSPO_M_VALUES", value_delimiter = ',')]
        m_values: Option<Vec<usize>>,
    },
    /// Estimate the noise variance and tabulate recommended round counts (noise_probe.csv).
    NoiseProbe {
        #[command(flatten)]
        common: Common,
        /// Number of evaluations K used for the variance estimate.
        #[arg(long, env = "PSPO_REPLICATES")]
        replicates: Option<usize>,
    },
    /// Single SIR calibration run (calibrate.csv, calibrate_runs.csv).
    Calibrate(Common),
}

#[derive(Args, Debug)]
struct Common {
    #[arg(long, env = "PSPO_CONFIG")]
    config: Option<PathBuf>,
    #[arg(long, env = "PSPO_SEED")]
    seed: Option<u64>,
    #[arg(long, env = "PSPO_OUT")]
    out: Option<PathBuf>,
    #[arg(long, env = "PSPO_REPEATS")]
    repeats: Option<usize>,
    #[arg(long, env = "PSPO_MAX_ITERS")]
    max_iters: Option<usize>,
    #[arg(long, env = "PSPO_OPTIMIZER", value_enum)]
    optimizer: Option<OptimizerChoice>,
    #[arg(long, env = "PSPO_PROBLEM", value_enum)]
    problem: Option<ProblemKind>,
    /// Epidemic CSV (`t,S,I,R`) for the SIR problem.
    #[arg(long, env = "PSPO_DATA")]
    data: Option<PathBuf>,
}

impl Common {
    fn load(&self, mut extra: Overrides) -> CliResult<ExperimentConfig> {
        extra.problem = self.problem.or(extra.problem);
        extra.optimizer = self.optimizer;
        extra.repeats = self.repeats;
        extra.max_iters = self.max_iters;
        extra.seed = self.seed;
        extra.out_dir = self.out.clone();
        extra.data = self.data.clone();
        ExperimentConfig::load(self.config.as_deref(), &extra)
    }
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Compare(common) => {
            let cfg = common.load(Overrides::default())?;
            let out = run_compare(&cfg)?;
            println!("optimizer,repeats,converged,iters_median,iters_mean,evals_mean");
            for s in &out.summaries {
                println!(
                    "{},{},{},{},{},{}",
                    s.optimizer, s.repeats, s.converged, s.iters_median, s.iters_mean, s.evals_mean
                );
            }
            report_files(&out.files);
        }
        Command::MSweep { common, m_values } => {
            let cfg = common.load(Overrides {
                m_values,
                ..Overrides::default()
            })?;
            let rows = run_m_sweep(&cfg)?;
            println!("m,iters_mean");
            for (m, mean) in sweep_means(&rows) {
                println!("{m},{mean}");
            }
            report_files(&[cfg.out_dir.join("m_sweep.csv")]);
        }
        Command::NoiseProbe { common, replicates } => {
            let cfg = common.load(Overrides {
                replicates,
                ..Overrides::default()
            })?;
            let rows = run_noise_probe(&cfg)?;
            if let Some(first) = rows.first() {
                println!("sigma2 = {}", first.sigma2);
            }
            println!("c,epsilon,rounds,capped");
            for r in &rows {
                println!("{},{},{},{}", r.c, r.epsilon, r.rounds, r.capped);
            }
            report_files(&[cfg.out_dir.join("noise_probe.csv")]);
        }
        Command::Calibrate(common) => {
            // Calibration is SIR-only; an explicit --problem is still checked.
            let cfg = common.load(Overrides {
                problem: Some(ProblemKind::Sir),
                ..Overrides::default()
            })?;
            let fits = run_calibrate(&cfg)?;
            println!("optimizer,beta,gamma,iterations,converged");
            for f in &fits {
                println!(
                    "{},{},{},{},{}",
                    f.run.optimizer, f.beta, f.gamma, f.run.iterations, f.run.converged
                );
            }
            report_files(&[
                cfg.out_dir.join("calibrate.csv"),
                cfg.out_dir.join("calibrate_runs.csv"),
            ]);
        }
    }
    Ok(())
}

fn report_files(files: &[PathBuf]) {
    for f in files {
        eprintln!("wrote {}", f.display());
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_byte(&e))
        }
    }
}

fn exit_byte(e: &CliError) -> u8 {
    e.exit_code() as u8
}
