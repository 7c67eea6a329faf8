use std::path::{Path, PathBuf};
use std::process::ExitCode;

use atco_react::pipeline::{self, PipelineConfig, PipelineError};
use atco_react::reactmodel::ModelKind;
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "atco-react", version, about = "Controller reaction pipeline")]
struct Cli {
    /// TOML configuration; missing keys take defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory of the stage.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Seed applied to the generator, the model and the fold split.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Vae,
    Encoder,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic scenario.
    Synth,
    /// Resample surveillance and associate controller events.
    Ingest {
        #[arg(long)]
        surveillance: Option<PathBuf>,
        #[arg(long)]
        events: Option<PathBuf>,
    },
    /// Detect conflicts and build features.
    Enrich {
        #[arg(long)]
        tracks: PathBuf,
        #[arg(long)]
        airports: Option<PathBuf>,
    },
    /// Assign modes and actions.
    Label {
        #[arg(long)]
        enriched: PathBuf,
        #[arg(long)]
        actions: PathBuf,
    },
    /// Train a model.
    Train {
        #[arg(long)]
        labeled: PathBuf,
        #[arg(long, value_enum, default_value = "vae")]
        model: Kind,
    },
    /// Predict modes and actions with a trained model.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
    },
    /// Score predictions against truth.
    Evaluate {
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        pred: PathBuf,
    },
    /// Cross-validate both models and write report tables.
    Report {
        #[arg(long)]
        labeled: PathBuf,
        #[arg(long)]
        priors: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg = cfg.with_seed(s);
    }
    let out = cli.out.as_path();
    let or = |p: Option<PathBuf>, d: &Path| p.unwrap_or_else(|| d.to_path_buf());
    match cli.cmd {
        Cmd::Synth => pipeline::run_synth(&cfg, out),
        Cmd::Ingest { surveillance, events } => {
            let s = or(surveillance, &cfg.paths.surveillance);
            let e = or(events, &cfg.paths.events);
            pipeline::run_ingest(&cfg, &s, &e, out)
        }
        Cmd::Enrich { tracks, airports } => {
            let a = or(airports, &cfg.paths.airports);
            pipeline::run_enrich(&cfg, &tracks, Some(&a), out)
        }
        Cmd::Label { enriched, actions } => pipeline::run_label(&cfg, &enriched, &actions, out),
        Cmd::Train { labeled, model } => {
            let kind = match model {
                Kind::Vae => ModelKind::Vae,
                Kind::Encoder => ModelKind::Encoder,
            };
            pipeline::run_train(&cfg, &labeled, kind, out)
        }
        Cmd::Predict { model, input } => pipeline::run_predict(&cfg, &model, &input, out),
        Cmd::Evaluate { truth, pred } => pipeline::run_evaluate(&cfg, &truth, &pred, out),
        Cmd::Report { labeled, priors } => pipeline::run_report(&cfg, &labeled, priors.as_deref(), out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
