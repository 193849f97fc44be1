use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use rwre::cli::{load_config, output_dir, run, CliError};

#[derive(Parser)]
#[command(name = "rwre", version, about = "Random walks with jumps -1, +1, +2 in random environments")]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a config file.
    Run {
        config: PathBuf,
        #[arg(long)]
        output_dir: Option<PathBuf>,
        /// Worker threads (0 = all cores); does not affect outputs.
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Print the resolved config without running it.
    Resolve { config: PathBuf },
}

fn fail(e: CliError) -> ExitCode {
    eprintln!("{}", e.record());
    ExitCode::FAILURE
}

fn main() -> ExitCode {
    match Args::parse().command {
        Command::Resolve { config } => match load_config(&config) {
            Ok(cfg) => {
                print!("{}", cfg.to_toml());
                ExitCode::SUCCESS
            }
            Err(e) => fail(e),
        },
        Command::Run {
            config,
            output_dir: over,
            threads,
        } => {
            let mut cfg = match load_config(&config) {
                Ok(c) => c,
                Err(e) => return fail(e),
            };
            if threads.is_some() {
                cfg.threads = threads;
            }
            let dir = output_dir(&cfg, over.as_deref());
            match run(&cfg, &dir) {
                Ok(_) => {
                    println!("{}", dir.display());
                    ExitCode::SUCCESS
                }
                Err(e) => fail(e),
            }
        }
    }
}
