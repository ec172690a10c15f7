use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod analysis;
mod io;
mod ops;

#[derive(Parser)]
#[command(name = "trustgate", version, about = "Reliability tooling for classifier outputs")]
struct Cli {
    /// Repeat for more log output on stderr.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Split conformal prediction sets.
    #[command(subcommand)]
    Conformal(analysis::ConformalCmd),
    /// Energy-based out-of-distribution detection.
    #[command(subcommand)]
    Ood(analysis::OodCmd),
    /// Long-tail diagnosis and head recomposition.
    #[command(subcommand)]
    Longtail(analysis::LongtailCmd),
    /// Top-1/top-5, mean-per-class accuracy and the per-class histogram.
    Eval(analysis::EvalArgs),
    /// Generate a seeded synthetic feature table and matching head.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out_features: PathBuf,
        #[arg(long)]
        out_head: PathBuf,
        #[arg(long, value_enum, default_value = "csv")]
        format: io::Format,
    },
    /// Plan, download and verify an image dataset.
    #[command(subcommand)]
    Ingest(ops::IngestCmd),
    /// Run the prediction workflow on one row against a bundle.
    Predict(ops::PredictArgs),
    /// Serve a bundle over HTTP.
    Serve(ops::ServeArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => tracing::Level::WARN,
        1 => tracing::Level::INFO,
        _ => tracing::Level::DEBUG,
    };
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_max_level(level)
        .init();

    let result = match cli.command {
        Command::Conformal(c) => analysis::conformal(c),
        Command::Ood(c) => analysis::ood(c),
        Command::Longtail(c) => analysis::longtail(c),
        Command::Eval(a) => analysis::eval(a),
        Command::Synth {
            spec,
            out_features,
            out_head,
            format,
        } => analysis::synth(&spec, &out_features, &out_head, format),
        Command::Ingest(c) => ops::ingest(c),
        Command::Predict(a) => ops::predict(a),
        Command::Serve(a) => ops::serve(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if is_broken_pipe(&e) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn is_broken_pipe(e: &anyhow::Error) -> bool {
    e.chain()
        .filter_map(|c| c.downcast_ref::<std::io::Error>())
        .any(|io| io.kind() == std::io::ErrorKind::BrokenPipe)
}
