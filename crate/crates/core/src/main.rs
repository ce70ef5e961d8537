use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mmae_attitude::estimator::EstimatorMode;
use mmae_attitude::harness::{
    emit_artifacts, noise_table, plot_mu_comparison, run_monte_carlo, strategy_table, summary_text,
    Campaign, SimConfig,
};
use mmae_attitude::mekf::ErrorDynamics;
use mmae_attitude::mmae::StrategyKind;
use mmae_attitude::sensors::NoiseKind;
use mmae_attitude::Error;

const EXIT_CONFIG: u8 = 2;
const EXIT_DIVERGED: u8 = 3;

#[derive(Parser)]
#[command(
    version,
    about = "Monte Carlo attitude and star-tracker misalignment estimation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one campaign and write CSV logs, a summary and plots.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        strategy: Option<StrategyKind>,
        #[arg(long, value_enum)]
        noise: Option<NoiseKind>,
        #[arg(long, value_enum)]
        mode: Option<EstimatorMode>,
        #[arg(long, value_enum)]
        dynamics: Option<ErrorDynamics>,
    },
    /// Run the three refinement strategies on shared seeds.
    CompareStrategies {
        #[command(flatten)]
        common: Common,
    },
    /// Run the stand-alone MEKF maneuver scenario with additive and multiplicative noise.
    CompareNoise {
        #[command(flatten)]
        common: Common,
    },
    /// Print the default configuration as TOML.
    DefaultConfig,
}

#[derive(Args)]
struct Common {
    /// TOML configuration; missing keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    /// 5 runs, 3x3x3 lattice, 1000 s.
    #[arg(long)]
    fast: bool,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

impl Common {
    fn config(&self, fallback: fn() -> SimConfig) -> Result<SimConfig, Error> {
        let mut cfg = match &self.config {
            // an unreadable config file is a configuration problem, not an output failure
            Some(p) => SimConfig::load(p).map_err(|e| match e {
                Error::Io { .. } => Error::Config(e.to_string()),
                e => e,
            })?,
            None => fallback(),
        };
        if self.fast {
            cfg.apply_fast();
        }
        if let Some(n) = self.runs {
            cfg.n_runs = n;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn create_dir(dir: &Path) -> Result<(), Error> {
    fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })
}

fn write_text(path: &Path, text: &str) -> Result<(), Error> {
    fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn run_and_emit(cfg: &SimConfig, out: &Path, threads: Option<usize>) -> Result<Campaign, Error> {
    let campaign = run_monte_carlo(cfg, threads)?;
    create_dir(out)?;
    write_text(&out.join("config.toml"), &cfg.to_toml())?;
    emit_artifacts(&campaign, out)?;
    Ok(campaign)
}

fn run(cli: Cli) -> Result<bool, Error> {
    match cli.command {
        Command::Simulate {
            common,
            strategy,
            noise,
            mode,
            dynamics,
        } => {
            let mut cfg = common.config(SimConfig::default)?;
            if let Some(s) = strategy {
                cfg.strategy.kind = s;
            }
            if let Some(n) = noise {
                cfg.sensors.noise.kind = n;
            }
            if let Some(m) = mode {
                cfg.filter.mode = m;
            }
            if let Some(d) = dynamics {
                cfg.filter.dynamics = d;
            }
            let c = run_and_emit(&cfg, &common.out, common.threads)?;
            print!("{}", summary_text(&c));
            Ok(c.failures() == 0)
        }
        Command::CompareStrategies { common } => {
            let base = common.config(SimConfig::default)?;
            let mut campaigns = Vec::new();
            for kind in StrategyKind::ALL {
                let mut cfg = base.clone();
                cfg.strategy.kind = kind;
                campaigns.push((
                    kind,
                    run_and_emit(&cfg, &common.out.join(kind.slug()), common.threads)?,
                ));
            }
            let rows: Vec<(StrategyKind, &Campaign)> =
                campaigns.iter().map(|(k, c)| (*k, c)).collect();
            let table = strategy_table(&rows);
            write_text(&common.out.join("strategies.txt"), &table)?;
            let curves: Vec<(&str, &_)> = campaigns
                .iter()
                .map(|(k, c)| (k.label(), &c.rmse))
                .collect();
            plot_mu_comparison(&curves, &common.out.join("mu_rmse_comparison.svg"))?;
            print!("{table}");
            Ok(campaigns.iter().all(|(_, c)| c.failures() == 0))
        }
        Command::CompareNoise { common } => {
            let base = common.config(SimConfig::maneuver_scenario)?;
            let mut campaigns = Vec::new();
            for kind in [NoiseKind::Additive, NoiseKind::Multiplicative] {
                let mut cfg = base.clone();
                cfg.sensors.noise.kind = kind;
                let dir = common.out.join(format!("{kind:?}").to_lowercase());
                campaigns.push((kind, run_and_emit(&cfg, &dir, common.threads)?));
            }
            let rows: Vec<(NoiseKind, &Campaign)> =
                campaigns.iter().map(|(k, c)| (*k, c)).collect();
            let table = noise_table(&rows);
            write_text(&common.out.join("noise.txt"), &table)?;
            print!("{table}");
            Ok(campaigns.iter().all(|(_, c)| c.failures() == 0))
        }
        Command::DefaultConfig => {
            print!("{}", SimConfig::default().to_toml());
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("error: at least one trial diverged; see summary.txt");
            ExitCode::from(EXIT_DIVERGED)
        }
        Err(e @ Error::Config(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
