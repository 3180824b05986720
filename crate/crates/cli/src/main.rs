mod commands;
mod config;
mod data;
mod report;

use clap::{Parser, Subcommand};
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "pfeddl",
    version,
    about = "Personalized federated dictionary learning experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic federation: per-site X/Y files plus ground truth.
    Synth(config::CommonArgs),
    /// Run the cross-validated experiment and write the report bundle.
    Train(config::CommonArgs),
    /// Pretrain per site and inspect the cross-site atom alignment.
    Align(AlignArgs),
    /// Train across a list of dictionary sizes and emit a CSV.
    Sweep(config::CommonArgs),
}

#[derive(clap::Args)]
struct AlignArgs {
    #[command(flatten)]
    common: config::CommonArgs,

    /// Demonstrate recovery of planted signed permutations instead of
    /// aligning real data.
    #[arg(long)]
    planted_demo: bool,
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter("PFEDDL_LOG")).init();
    let cli = Cli::parse();

    let result = match cli.command {
        Command::Synth(args) => config::resolve(&args).and_then(|c| commands::cmd_synth(&c)),
        Command::Train(args) => config::resolve(&args).and_then(|c| commands::cmd_train(&c)),
        Command::Align(args) => {
            if args.planted_demo {
                let seed = args.common.seed.unwrap_or(0);
                let out = args
                    .common
                    .out
                    .clone()
                    .unwrap_or_else(|| PathBuf::from("pfeddl-out"));
                commands::cmd_align_planted_demo(seed, &out)
            } else {
                config::resolve(&args.common).and_then(|c| commands::cmd_align(&c))
            }
        }
        Command::Sweep(args) => config::resolve(&args).and_then(|c| commands::cmd_sweep(&c)),
    };

    if let Err(err) = result {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}
