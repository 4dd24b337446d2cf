//! `nocturne` — operator CLI for the low-light enhancement toolkit.

mod commands;
mod manifest;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "nocturne",
    version,
    about = "Zero-reference low-light image enhancement toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Stage 1: learn the positive/negative image-prior prompt pair.
    TrainPrompts(commands::train_prompts::Args),
    /// Stage 2: train the curve-estimation network.
    Train(commands::train::Args),
    /// Enhance images with a trained model.
    Enhance(commands::enhance::Args),
    /// Dataset statistics: proportions and brightness histograms.
    Stats(commands::stats::Args),
    /// Histogram-equalization baseline (no model).
    Histeq(commands::histeq::Args),
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::TrainPrompts(args) => commands::train_prompts::run(args),
        Command::Train(args) => commands::train::run(args),
        Command::Enhance(args) => commands::enhance::run(args),
        Command::Stats(args) => commands::stats::run(args),
        Command::Histeq(args) => commands::histeq::run(args),
    };
    if let Err(err) = result {
        eprintln!("error: {err}");
        let code = err
            .downcast_ref::<nocturne_core::Error>()
            .map(|e| e.exit_code())
            .unwrap_or(1);
        std::process::exit(code);
    }
}
