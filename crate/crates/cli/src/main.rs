use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use spde_core::verify::{run_suite, Level};
use spde_lab::{render_catalog, run_experiment, RunOptions};

#[derive(Parser)]
#[command(name = "spde-lab", version, about = "Run SPDE semigroup and gradient experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Worker threads for Monte Carlo sampling.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Master seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML config.
    Run { config: PathBuf },
    /// List the bundled example configs.
    Examples,
    /// Run the acceptance suite.
    Verify {
        #[arg(long, default_value = "smoke")]
        level: Level,
        /// Comma-separated criterion ids; all by default.
        #[arg(long, value_delimiter = ',')]
        only: Vec<u8>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config } => {
            let opts = RunOptions { out: cli.out, seed: cli.seed, workers: cli.workers };
            match run_experiment(&config, &opts) {
                Ok(m) => {
                    let summary = m.output_dir.join(&m.summary);
                    if let Ok(text) = std::fs::read_to_string(&summary) {
                        print!("{text}");
                    }
                    println!("manifest: {}", m.output_dir.join(spde_lab::run::MANIFEST_FILE).display());
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(2)
                }
            }
        }
        Command::Examples => {
            print!("{}", render_catalog());
            ExitCode::SUCCESS
        }
        Command::Verify { level, only } => {
            let ids: Vec<u8> = if only.is_empty() { (1..=10).collect() } else { only };
            if let Some(bad) = ids.iter().find(|id| !(1..=10).contains(*id)) {
                eprintln!("error: unknown criterion {bad}; criteria are numbered 1 to 10");
                return ExitCode::from(2);
            }
            let workers = cli.workers.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
            let report = run_suite(level, workers, &ids);
            print!("{report}");
            if report.all_passed() {
                ExitCode::SUCCESS
            } else {
                eprintln!("failed criteria: {:?}", report.failed());
                ExitCode::FAILURE
            }
        }
    }
}
