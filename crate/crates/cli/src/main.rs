//! `diffgan`: train, sample, evaluate, benchmark, render and serve layout
//! models. Paths are relative to the working directory; `-` means stdin or
//! stdout where a corpus or report is read or written.

mod commands;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{CommandFactory, Parser, Subcommand, ValueEnum};
use diffgan_core::mask::Task;
use diffgan_core::synth::Profile;

#[derive(Debug, Parser)]
#[command(name = "diffgan", version, about = "Diffusion-GAN layout generation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum TaskArg {
    Uncond,
    CToSp,
    CsToP,
    Completion,
}

impl From<TaskArg> for Task {
    fn from(t: TaskArg) -> Self {
        match t {
            TaskArg::Uncond => Task::Uncond,
            TaskArg::CToSp => Task::CToSp,
            TaskArg::CsToP => Task::CsToP,
            TaskArg::Completion => Task::Completion,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ProfileArg {
    Columns,
    Grid,
    BannerMix,
}

impl From<ProfileArg> for Profile {
    fn from(p: ProfileArg) -> Self {
        match p {
            ProfileArg::Columns => Profile::Columns,
            ProfileArg::Grid => Profile::Grid,
            ProfileArg::BannerMix => Profile::BannerMix,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MetricArg {
    Overlap,
    Alignment,
    Maxiou,
    Fid,
}

fn positive(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(0) => Err("must be at least 1".into()),
        Ok(n) => Ok(n),
        Err(e) => Err(e.to_string()),
    }
}

fn steps(s: &str) -> Result<usize, String> {
    let n = positive(s)?;
    if n > diffgan_core::diffusion::MAX_STEPS {
        return Err(format!("at most {} steps", diffgan_core::diffusion::MAX_STEPS));
    }
    Ok(n)
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a model from a TOML run configuration.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Draw layouts from a checkpoint, locally or through a running server.
    Sample {
        #[arg(long, required_unless_present = "server")]
        ckpt: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "uncond")]
        task: TaskArg,
        /// Condition corpus; condition `i` is used for sample `i mod len`.
        /// For completion every element of the condition is kept.
        #[arg(long)]
        cond: Option<PathBuf>,
        #[arg(long, default_value = "16", value_parser = positive)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "-")]
        out: PathBuf,
        /// Base URL of a running `serve` instance.
        #[arg(long)]
        server: Option<String>,
        /// Step to the posterior mean instead of drawing from it.
        #[arg(long, conflicts_with = "server")]
        deterministic: bool,
    },
    /// Compute layout metrics and write a report.
    Eval {
        /// Print only these metrics.
        #[arg(value_enum)]
        metrics: Vec<MetricArg>,
        #[arg(long, default_value = "-")]
        gen: PathBuf,
        #[arg(long = "ref")]
        reference: Option<PathBuf>,
        /// Feature extractor checkpoint for FID.
        #[arg(long)]
        fe: Option<PathBuf>,
        /// Label vocabulary for corpora without a labels.json sidecar.
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Time sampling for several chain lengths and write a CSV table.
    Bench {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long = "t", value_delimiter = ',', default_value = "4,8,12", value_parser = steps)]
        t_list: Vec<usize>,
        #[arg(long, default_value = "64", value_parser = positive)]
        batch: usize,
        #[arg(long, default_value = "50", value_parser = positive)]
        reps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "-")]
        out: PathBuf,
    },
    /// Render each layout of a corpus as an SVG file.
    Render {
        #[arg(long, default_value = "-")]
        corpus: PathBuf,
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Generate a synthetic corpus.
    Synth {
        #[arg(long, value_enum)]
        profile: ProfileArg,
        #[arg(long, value_parser = positive)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "-")]
        out: PathBuf,
    },
    /// Train the feature extractor used for FID.
    TrainFe {
        #[arg(long)]
        corpus: PathBuf,
        /// Defaults to a file in `DOGLAYOUT_CACHE` keyed by the corpus digest.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value = "16", value_parser = positive)]
        rows: usize,
        #[arg(long, default_value = "300", value_parser = positive)]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Serve completion and generation over HTTP.
    Serve {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, default_value = "8080")]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Only allow this CORS origin; any origin when unset.
        #[arg(long)]
        cors_origin: Option<String>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if e.use_stderr() => {
            let _ = e.print();
            if !e.render().to_string().contains("Usage:") {
                eprintln!("\n{}", Cli::command().render_usage());
            }
            return ExitCode::from(2);
        }
        Err(e) => e.exit(),
    };
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| "warn,diffgan=info,diffgan_core=info,diffgan_service=info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
