//! Batch command-line front end for the leafscan pipeline.

mod commands;
mod config;
mod error;

use std::process::ExitCode;

use anyhow::Context;
use clap::{CommandFactory, FromArgMatches, Parser};

use commands::Command;
use error::{exit_code, EXIT_CONFIG};

#[derive(Parser, Debug)]
#[command(
    name = "leafscan",
    version,
    about = "Leaf tracing, vein segmentation, traits and GWAS"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

fn run() -> anyhow::Result<()> {
    let args = config::expand_args(std::env::args_os().collect())?;
    let root = Cli::command().subcommands_override_self();
    let matches = root.clone().try_get_matches_from(args)?;
    let cli = Cli::from_arg_matches(&matches)?;
    let (name, sub) = matches.subcommand().expect("subcommand is required");
    let out = &cli.command.common().out;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    std::fs::write(out.join("manifest.txt"), config::manifest(&root, name, sub))
        .with_context(|| format!("writing manifest in {}", out.display()))?;
    cli.command.run()
}

trait OverrideSelf {
    fn subcommands_override_self(self) -> Self;
}

impl OverrideSelf for clap::Command {
    /// Later occurrences of a flag replace earlier ones, which is how
    /// command-line flags beat config-file values.
    fn subcommands_override_self(self) -> Self {
        self.mut_subcommands(|s| s.args_override_self(true))
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            if let Some(e) = err.downcast_ref::<clap::Error>() {
                if !e.use_stderr() {
                    let _ = e.print();
                    return ExitCode::SUCCESS;
                }
                let _ = e.print();
                return ExitCode::from(EXIT_CONFIG as u8);
            }
            log::error!("{err:#}");
            ExitCode::from(exit_code(&err) as u8)
        }
    }
}
