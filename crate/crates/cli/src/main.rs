use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use funmix_cli::commands::{cmd_fit, cmd_select_k, cmd_simulate, cmd_summarize, cmd_validate, parse_k_list};
use funmix_cli::config::RunConfig;
use funmix_cli::Result;
use funmix_core::validation::default_marginal;

#[derive(Parser)]
#[command(name = "funmix", version, about = "Multilevel functional mixed-membership models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override the random seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a synthetic dataset and its ground truth.
    Simulate(Common),
    /// Fit the model and write the draws.
    Fit {
        #[command(flatten)]
        common: Common,
        /// Number of independent chains.
        #[arg(long)]
        chains: Option<usize>,
    },
    /// Write posterior summary tables for a previous fit.
    Summarize(Common),
    /// Fit several K and compare them.
    SelectK {
        #[command(flatten)]
        common: Common,
        /// Comma-separated candidate K values.
        #[arg(long)]
        k: Option<String>,
    },
    /// Run the likelihood and sampler self-checks.
    Validate(Common),
    /// Print the default configuration.
    PrintConfig,
}

fn load(common: &Common) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.sampler.seed = seed;
        cfg.simulate.seed = seed;
        cfg.validate.seed = seed;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Simulate(common) => {
            let (data, truth) = cmd_simulate(&load(&common)?)?;
            println!("wrote {} and {}", data.display(), truth.display());
        }
        Command::Fit { common, chains } => {
            let mut cfg = load(&common)?;
            if let Some(c) = chains {
                cfg.fit.chains = c;
            }
            let out = cmd_fit(&cfg)?;
            println!("wrote {}", out.display());
        }
        Command::Summarize(common) => {
            for p in cmd_summarize(&load(&common)?)? {
                println!("wrote {}", p.display());
            }
        }
        Command::SelectK { common, k } => {
            let cfg = load(&common)?;
            let k_list = match k {
                Some(s) => parse_k_list(&s)?,
                None => cfg.select.k_list.clone(),
            };
            let sel = cmd_select_k(&cfg, &k_list)?;
            println!("{:>3} {:>16} {:>8} {:>16} {:>16} {:>16}", "K", "loglik", "params", "AIC", "BIC", "mean deviance");
            for r in &sel.table.rows {
                println!(
                    "{:>3} {:>16.3} {:>8} {:>16.3} {:>16.3} {:>16.3}",
                    r.k, r.loglik, r.n_params, r.aic, r.bic, r.mean_deviance
                );
            }
            println!("wrote {}", sel.table_path.display());
            match sel.elbow {
                Ok(k) => println!("elbow choice: K = {k}"),
                Err(e) => {
                    eprintln!("error: elbow selection failed: {e}");
                    return Ok(ExitCode::FAILURE);
                }
            }
        }
        Command::Validate(common) => {
            let report = cmd_validate(&load(&common)?, default_marginal)?;
            print!("{}", report.text);
            if !report.passed {
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::PrintConfig => print!("{}", RunConfig::default_toml()),
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
