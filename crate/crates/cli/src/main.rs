//! `nnst`: stylize images, train toy decoders and inspect weight archives.

mod failure;
mod inspect;
mod run;
mod train;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use failure::Failure;

#[derive(Parser, Debug)]
#[command(name = "nnst", version, about = "Neural neighbor style transfer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Stylize a content image with a style image.
    Run(Box<run::RunArgs>),
    /// Train per-scale decoders from a TOML config.
    Train {
        config: PathBuf,
    },
    /// List the tensors of a weight archive.
    Inspect {
        weights: PathBuf,
    },
    /// Write randomly initialized extractor weights under the canonical names.
    RandomWeights {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn dispatch(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Run(args) => run::run(&args),
        Command::Train { config } => train::train(&config),
        Command::Inspect { weights } => inspect::inspect(&weights),
        Command::RandomWeights { out, seed } => {
            let archive = nnst::extractor::ExtractorWeights::random_vgg16(seed).to_archive()?;
            archive.save(&out)?;
            println!("wrote {} tensors to {}", archive.len(), out.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(failure::EXIT_FLAGS)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code())
        }
    }
}
