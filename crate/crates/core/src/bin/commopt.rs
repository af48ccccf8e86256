use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commopt::compressors::{estimate_params, CompressorKind, CompressorSpec};
use commopt::harness::{self, ExperimentConfig, Family, ParamGrid};
use commopt::{rng, Error, Result};

#[derive(Parser)]
#[command(name = "commopt", version, about = "Communication-efficient optimization simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's output directory.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// EF-BV, EF21 or DIANA.
    RunEfbv(RunArgs),
    /// Scafflix, i-Scaffnew or FLIX-GD.
    RunScafflix(RunArgs),
    /// SPPM-AS and its baselines.
    RunSppm(RunArgs),
    /// Run a config over a parameter grid and print the summary table.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// `name=a..b` or `name=v1,v2,...`
        #[arg(long)]
        param: String,
        /// Also write the table as CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the (eta, omega) certificate and audit it by Monte Carlo.
    CertifyCompressor {
        /// e.g. `rand_k:k=2`, `top_k:k=1`, `mix:k=1,kp=2`, `comp:k=1,kp=5`
        #[arg(long)]
        kind: String,
        #[arg(long)]
        dim: usize,
        #[arg(long, default_value_t = 10_000)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print mu_AS and sigma^2_AS for the config's sampling scheme.
    Stats {
        #[arg(long)]
        config: PathBuf,
    },
}

fn load(path: &PathBuf, output: Option<PathBuf>) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(o) = output {
        cfg.output = o;
    }
    Ok(cfg)
}

fn run(args: RunArgs, family: Family) -> Result<()> {
    let cfg = load(&args.config, args.output)?;
    if cfg.algorithm.family() != family {
        return Err(Error::Config {
            field: "algorithm".into(),
            message: format!("`{}` is not handled by this subcommand", cfg.algorithm),
        });
    }
    for path in harness::run_experiment(&cfg)? {
        println!("{}", path.display());
    }
    Ok(())
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::RunEfbv(a) => run(a, Family::Efbv),
        Command::RunScafflix(a) => run(a, Family::Scafflix),
        Command::RunSppm(a) => run(a, Family::Sppm),
        Command::Sweep { config, param, out } => {
            let cfg = load(&config, None)?;
            cfg.validate()?;
            let grid: ParamGrid = param.parse()?;
            let table = harness::sweep(&cfg, &grid)?;
            let csv = table.to_csv();
            print!("{csv}");
            if let Some(best) = table.best_by_cost() {
                eprintln!("cheapest {}={} (mean cost {})", table.param, best.value, best.total_cost.mean);
            }
            if let Some(path) = out {
                std::fs::write(path, csv)?;
            }
            Ok(())
        }
        Command::CertifyCompressor {
            kind,
            dim,
            trials,
            seed,
        } => {
            let kind: CompressorKind = kind.parse()?;
            let spec = CompressorSpec::new(kind, dim)?;
            let est = estimate_params(&spec, trials, &mut rng::server_stream(seed, 0))?;
            println!("kind {}", spec.kind);
            println!("eta {}", spec.eta());
            println!("omega {}", spec.omega());
            println!("eta_hat {}", est.eta_hat);
            println!("omega_hat {}", est.omega_hat);
            println!("violations {}", est.violations.len());
            if est.violations.is_empty() {
                Ok(())
            } else {
                Err(Error::invalid(format!(
                    "{} inputs exceed the certificate beyond slack {}",
                    est.violations.len(),
                    est.slack
                )))
            }
        }
        Command::Stats { config } => {
            let cfg = load(&config, None)?;
            let (scheme, stats) = harness::sampling_stats(&cfg)?;
            println!("scheme {}", scheme.label());
            println!("method {:?}", stats.method);
            println!("mu_as {}", stats.mu_as);
            println!("sigma_star_as_sq {}", stats.sigma_star_as_sq);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Diverged { .. } => 3,
                ref e if e.is_validation() => 2,
                _ => 1,
            })
        }
    }
}
