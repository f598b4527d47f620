use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use skytrack_cli::{run_all, run_stage, Overrides, PipelineConfig, PipelineError, Preset, Stage, StageSummary};

/// Geo-referenced trajectory extraction from aerial video artifacts.
#[derive(Parser)]
#[command(name = "skytrack", version)]
struct Cli {
    /// TOML pipeline configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every randomized step; overrides the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides the configuration.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Geo-registered bundle adjustment of the mapping problem.
    Ba,
    /// Per-frame camera localization against the scene.
    Calibrate,
    /// Road surface extraction and B-spline fit from the scene mesh.
    Ground,
    /// Ground-consistent refinement of 3D detections.
    Refine,
    /// Multi-object tracking and smoothing.
    Track,
    /// Per-class trajectory statistics.
    Stats,
    /// TTC, PET and parking scenario mining.
    Mine,
    /// Write a synthetic scene with ground truth.
    Synth {
        #[arg(long, value_enum)]
        preset: Option<PresetArg>,
        /// Scenario TOML file; takes precedence over the preset.
        #[arg(long)]
        scenario: Option<PathBuf>,
    },
    /// Check a directory of trajectory files.
    Validate {
        /// Dataset directory; overrides the configuration.
        dataset: Option<PathBuf>,
    },
    /// Score trajectories against synthetic truth.
    Evaluate,
    /// ba, calibrate, ground, refine, track, stats and mine in order.
    RunAll,
}

#[derive(Clone, Copy, ValueEnum)]
enum PresetArg {
    Exact,
    Benchmark,
    Accuracy,
}

impl From<PresetArg> for Preset {
    fn from(p: PresetArg) -> Self {
        match p {
            PresetArg::Exact => Preset::Exact,
            PresetArg::Benchmark => Preset::Benchmark,
            PresetArg::Accuracy => Preset::Accuracy,
        }
    }
}

fn report(summary: &StageSummary) {
    let mut outputs: Vec<String> = summary.outputs.iter().map(|o| o.path.clone()).collect();
    if outputs.is_empty() {
        outputs.push(format!("{}_summary.toml", summary.stage));
    }
    println!("{}: ok ({})", summary.stage, outputs.join(", "));
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    let mut overrides = Overrides {
        seed: cli.seed,
        out: cli.out,
        ..Default::default()
    };
    let stage = match cli.command {
        Command::Ba => Stage::Ba,
        Command::Calibrate => Stage::Calibrate,
        Command::Ground => Stage::Ground,
        Command::Refine => Stage::Refine,
        Command::Track => Stage::Track,
        Command::Stats => Stage::Stats,
        Command::Mine => Stage::Mine,
        Command::Evaluate => Stage::Evaluate,
        Command::Synth { preset, scenario } => {
            overrides.preset = preset.map(Into::into);
            overrides.scenario = scenario;
            Stage::Synth
        }
        Command::Validate { dataset } => {
            overrides.dataset = dataset;
            Stage::Validate
        }
        Command::RunAll => {
            let cfg = PipelineConfig::load(cli.config.as_deref(), &overrides)?;
            for s in run_all(&cfg)? {
                report(&s);
            }
            return Ok(());
        }
    };
    let cfg = PipelineConfig::load(cli.config.as_deref(), &overrides)?;
    let summary = run_stage(stage, &cfg)?;
    if stage == Stage::Validate {
        if let Some(files) = summary.results.get("file").and_then(|f| f.as_array()) {
            for f in files {
                let path = f.get("path").and_then(|p| p.as_str()).unwrap_or("?");
                for finding in f.get("findings").and_then(|x| x.as_array()).into_iter().flatten() {
                    println!("{path}: {}", finding.as_str().unwrap_or_default());
                }
            }
        }
    }
    report(&summary);
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            match &e {
                PipelineError::Config(_) => eprintln!("config error: {e}"),
                _ => eprintln!("error: {e}"),
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
