use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use tracing_subscriber::EnvFilter;
use vidbridge::eval::preference::{aggregate_preferences, read_votes, render_preferences};
use vidbridge::eval::{ReportFile, ReportFormat};
use vidbridge::model::ImageBuffer;
use vidbridge::pipeline::{Pipeline, PipelineConfig};

#[derive(Parser)]
#[command(name = "vidbridge", version, about = "Image+text to video with generated end keyframes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate one video and print the artifact directory.
    Run {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        text: String,
        #[arg(long)]
        frames: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run every dataset entry and write report.json and report.csv.
    Eval {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print a previously written report.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_enum, default_value = "json")]
        format: Format,
    },
    /// Tally a CSV of preference votes.
    Votes {
        #[arg(long = "in")]
        input: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

fn load_config(path: Option<&Path>) -> Result<PipelineConfig> {
    match path {
        Some(p) => PipelineConfig::load(p).with_context(|| format!("loading config {}", p.display())),
        None => Ok(PipelineConfig::default()),
    }
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run {
            image,
            text,
            frames,
            seed,
            config,
        } => {
            let pipeline = Pipeline::new(load_config(config.as_deref())?)?;
            pipeline.preflight()?;
            let img = ImageBuffer::load(&image).with_context(|| format!("reading {}", image.display()))?;
            let request = pipeline.request(&img, &text, frames, seed)?;
            let outcome = pipeline.run(&request)?;
            tracing::info!(
                cache_hit = outcome.cache_hit,
                total_ms = outcome.telemetry.total_ms,
                "run finished"
            );
            println!("{}", outcome.dir.display());
        }
        Command::Eval { manifest, config, out } => {
            let pipeline = Pipeline::new(load_config(config.as_deref())?)?;
            pipeline.preflight()?;
            let report = pipeline.evaluate(&manifest, &out)?;
            print!("{}", report.render(ReportFormat::Json));
        }
        Command::Report { input, format } => {
            let report = ReportFile::load(&input)?;
            let text = match format {
                Format::Json => report.render(ReportFormat::Json),
                Format::Csv => report.render(ReportFormat::Csv),
            };
            print!("{text}");
        }
        Command::Votes { input } => {
            let file = fs::File::open(&input).with_context(|| format!("opening {}", input.display()))?;
            let votes = read_votes(file)?;
            print!("{}", render_preferences(&aggregate_preferences(&votes)));
        }
    }
    Ok(())
}

/// Joins the error chain, skipping causes the library already folded into
/// the message above them.
fn describe(e: &anyhow::Error) -> String {
    let mut text = String::new();
    for cause in e.chain() {
        let part = cause.to_string();
        if !text.contains(&part) {
            if !text.is_empty() {
                text.push_str(": ");
            }
            text.push_str(&part);
        }
    }
    text
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(std::io::stderr)
        .init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::FAILURE
        }
    }
}
