use std::path::PathBuf;
use std::process::ExitCode;

use ccfm::experiment::{run_experiment, ExitStatus, Overrides};
use ccfm::verify::suite;
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "ccfm", version, about = "Chance-constrained flow matching experiments")]
struct Cli {
    /// Worker threads for batch sampling (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment config and write its CSV, timings and figures.
    Run {
        config: PathBuf,
        /// Run a single seed instead of the configured list.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (overrides `output.dir`).
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Run the acceptance criteria and print one line per criterion.
    Verify {
        #[arg(long, default_value = "configs")]
        configs: PathBuf,
    },
}

fn main() -> ExitCode {
    let env = env_logger::Env::new().filter_or("CCFM_LOG", std::env::var("RUST_LOG").unwrap_or_else(|_| "warn".into()));
    env_logger::Builder::from_env(env).init();
    let cli = Cli::parse();

    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::error!("thread pool: {e}");
            return ExitCode::from(ExitStatus::ConfigError.code() as u8);
        }
    }

    match cli.command {
        Command::Run { config, seed, out_dir } => {
            let status = run_experiment(&config, &Overrides { seed, out_dir });
            ExitCode::from(status.code() as u8)
        }
        Command::Verify { configs } => {
            let reports = suite::run_all(&configs, |r| println!("{r}"));
            let failed = reports.iter().filter(|r| !r.passed).count();
            println!("{} of {} criteria passed", reports.len() - failed, reports.len());
            if failed == 0 {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
