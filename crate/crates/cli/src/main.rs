//! `panosynth`: caption ingestion, panorama generation, discretization,
//! trajectory augmentation, statistics and previews.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

mod commands;
mod config;

use config::{BackendKind, PipelineConfig, CONFIG_ENV};

/// Bad flags or configuration; exits with status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Parser, Debug)]
#[command(name = "panosynth", version, about = "Panorama synthesis and trajectory augmentation")]
struct Cli {
    /// TOML pipeline configuration.
    #[arg(long, global = true, env = CONFIG_ENV)]
    config: Option<PathBuf>,
    /// Print the summary as JSON on stdout.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Merge caption files into a store, or caption view images through a backend.
    IngestCaptions(IngestArgs),
    /// Generate one panorama environment per viewpoint.
    Generate(GenerateArgs),
    /// Re-cut the 36 views of finished environments from their panoramas.
    Discretize(DiscretizeArgs),
    /// Write a replacement manifest for a trajectory file.
    Augment(AugmentArgs),
    /// Summarize caption stores, registries and manifests.
    Stats(StatsArgs),
    /// Write a panorama image and a zero-elevation strip for one environment.
    Preview(PreviewArgs),
}

#[derive(Args, Debug)]
pub struct BackendArgs {
    #[arg(long, value_enum)]
    backend: Option<BackendKind>,
    /// Service base URL; falls back to the config, then PANOSYNTH_BACKEND_URL.
    #[arg(long)]
    backend_url: Option<String>,
}

#[derive(Args, Debug)]
pub struct IngestArgs {
    /// Line-delimited caption records to merge.
    #[arg(long)]
    input: Vec<PathBuf>,
    /// Store to create or update.
    #[arg(long)]
    store: Option<PathBuf>,
    /// Directory of view_<h>_<e>.png images to caption.
    #[arg(long, requires_all = ["scan", "viewpoint"])]
    images: Option<PathBuf>,
    #[arg(long)]
    scan: Option<String>,
    #[arg(long)]
    viewpoint: Option<String>,
    #[command(flatten)]
    backend: BackendArgs,
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    #[arg(long)]
    captions: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    backend: BackendArgs,
    #[arg(long)]
    seed: Option<u64>,
    /// Only these scans (repeatable).
    #[arg(long)]
    scan: Vec<String>,
    /// Only these viewpoints (repeatable).
    #[arg(long)]
    viewpoint: Vec<String>,
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args, Debug)]
pub struct DiscretizeArgs {
    /// Environment directories.
    #[arg(long)]
    env: Vec<PathBuf>,
    /// Every environment listed in this registry.
    #[arg(long)]
    registry: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct AugmentArgs {
    #[arg(long)]
    trajectories: Option<PathBuf>,
    #[arg(long)]
    registry: Option<PathBuf>,
    #[arg(long)]
    ratio: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Replace only inside a random subset of this many scans.
    #[arg(long)]
    scans: Option<usize>,
    #[arg(long, value_enum)]
    mode: Option<commands::ModeArg>,
    #[arg(long, value_enum)]
    variant_choice: Option<commands::VariantArg>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    stats: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args, Debug)]
pub struct StatsArgs {
    #[arg(long)]
    captions: Option<PathBuf>,
    #[arg(long)]
    registry: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct PreviewArgs {
    #[arg(long)]
    env: PathBuf,
    /// Output directory for preview_panorama.png and preview_strip.png.
    #[arg(long)]
    out: PathBuf,
}

/// Prints a summary: JSON on stdout with `--json`, otherwise one line of
/// `key: value` pairs with nested objects flattened to dotted keys.
pub fn emit<T: Serialize>(json: bool, summary: &T) {
    let value = serde_json::to_value(summary).expect("summaries serialize");
    if json {
        println!("{value}");
        return;
    }
    fn flatten(prefix: &str, v: &serde_json::Value, out: &mut Vec<String>) {
        match v {
            serde_json::Value::Object(map) => {
                for (k, v) in map {
                    let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                    flatten(&key, v, out);
                }
            }
            serde_json::Value::Array(_) => {}
            serde_json::Value::String(s) => out.push(format!("{prefix}: {s}")),
            other => out.push(format!("{prefix}: {other}")),
        }
    }
    let mut parts = Vec::new();
    flatten("", &value, &mut parts);
    println!("{}", parts.join(", "));
}

/// Outcome of a command: `Ok(false)` means it ran but some items failed.
type Outcome = anyhow::Result<bool>;

fn run(cli: Cli) -> Outcome {
    let config = PipelineConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::IngestCaptions(a) => commands::ingest(&config, a, cli.json),
        Command::Generate(a) => commands::generate(&config, a, cli.json),
        Command::Discretize(a) => commands::discretize(&config, a, cli.json),
        Command::Augment(a) => commands::augment(&config, a, cli.json),
        Command::Stats(a) => commands::stats(&config, a, cli.json),
        Command::Preview(a) => commands::preview(a, cli.json),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            // library errors already embed their sources in the message
            let mut msg = e.to_string();
            for cause in e.chain().skip(1).map(|c| c.to_string()) {
                if !msg.contains(&cause) {
                    msg = format!("{msg}: {cause}");
                }
            }
            eprintln!("error: {msg}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
